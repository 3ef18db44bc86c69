#include "aia/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "aia/error.hpp"

namespace aia {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return from(std::move(shape), std::span<const double>(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::span<const double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(values.begin(), values.end());
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

std::size_t Tensor::rows() const { return numel() / cols(); }
std::size_t Tensor::cols() const { return impl_->shape.back(); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape() != other.shape()) return false;
  return std::memcmp(impl_->data.data(), other.impl_->data.data(), numel() * sizeof(double)) == 0;
}

void Tape::record(const char* op, std::function<void()> fn) { nodes_.push_back({op, std::move(fn)}); }

void Tape::replay() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  nodes_.clear();
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined tensor")));
  }
  if (!loss.requires_grad()) throw ContractError("backward(): loss was not produced through the tape");
  Tensor l = loss;
  l.mutable_grad()[0] += 1.0;
  replay();
}

void Tape::backward_from(Tensor output, std::span<const double> seed) {
  if (seed.size() != output.numel()) {
    throw ShapeError("backward seed of " + std::to_string(seed.size()) + " values for tensor " +
                     shape_to_string(output.shape()));
  }
  auto g = output.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  replay();
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

Tape* active_tape() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) noexcept : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() noexcept : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed) {
  return hash_bytes(std::string_view(reinterpret_cast<const char*>(values.data()), values.size_bytes()), seed);
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace aia
