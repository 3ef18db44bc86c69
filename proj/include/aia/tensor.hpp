#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace aia {

// 64-byte aligned allocator. Every tensor buffer starts on the same alignment
// boundary so vectorized kernels take identical code paths (and therefore
// produce identical bits) no matter where a buffer happens to live.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;
using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until the first gradient contribution
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor of doubles with an optional gradient buffer.
// Copies of a Tensor share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor from(Shape shape, std::span<const double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  // Number of rows when viewed as a matrix [numel / last_dim x last_dim].
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zeroed gradient buffer on first use.
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  // Deep copy of the values; the copy has no gradient and no tape history.
  Tensor clone(bool requires_grad = false) const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  bool bitwise_equal(const Tensor& other) const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable operations. A tape belongs to one thread;
// ops record into whichever tape is active on the calling thread (see
// TapeScope). Nodes are replayed in reverse by backward(), then cleared.
class Tape {
 public:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> fn);
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  void clear() noexcept { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every node once in reverse order.
  void backward(const Tensor& loss);
  // Seeds the gradient of `output` with `seed` (added into a zeroed buffer)
  // and replays. Used by pipeline stages that receive activation gradients.
  void backward_from(Tensor output, std::span<const double> seed);

 private:
  void replay();
  std::vector<Node> nodes_;
};

Tape* active_tape() noexcept;

class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope() noexcept;
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

void backward(const Tensor& loss, Tape& tape);

// 64-bit FNV-1a over the raw bytes of the values, in order.
std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t seed = 14695981039346656037ULL);
std::string hex64(std::uint64_t value);

}  // namespace aia
