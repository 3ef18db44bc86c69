#include "aia/pii.hpp"

#include <random>
#include <set>

#include "aia/error.hpp"

namespace aia {

namespace {

constexpr std::array<std::string_view, 40> kFirstNames = {
    "James",  "Mary",    "Robert", "Patricia", "John",   "Jennifer", "Michael", "Linda",  "David",  "Elizabeth",
    "Thomas", "Susan",   "Daniel", "Jessica",  "Mark",   "Sarah",    "Paul",    "Karen",  "Steven", "Nancy",
    "Andrew", "Lisa",    "Joshua", "Betty",    "Kevin",  "Sandra",   "Brian",   "Ashley", "George", "Emily",
    "Edward", "Donna",   "Ronald", "Michelle", "Jason",  "Carol",    "Ryan",    "Amanda", "Jacob",  "Melissa"};

constexpr std::array<std::string_view, 40> kLastNames = {
    "Smith",   "Johnson", "Williams", "Brown",  "Jones",   "Garcia",   "Miller",  "Davis",  "Rodriguez", "Martinez",
    "Wilson",  "Anderson", "Taylor",  "Thomas", "Moore",   "Jackson",  "Martin",  "Lee",    "Thompson",  "White",
    "Harris",  "Clark",   "Lewis",    "Walker", "Hall",    "Allen",    "Young",   "King",   "Wright",    "Scott",
    "Green",   "Baker",   "Adams",    "Nelson", "Hill",    "Campbell", "Mitchell", "Carter", "Roberts",  "Turner"};

constexpr std::array<std::string_view, 8> kDomains = {"gmail.com",   "yahoo.com",  "outlook.com", "hotmail.com",
                                                     "example.org", "mail.net",   "inbox.com",   "proton.me"};

constexpr std::array<std::string_view, 20> kStreets = {
    "Oak",    "Maple",  "Cedar",   "Pine",    "Elm",     "Washington", "Lake",   "Hill",    "Park",  "Main",
    "Church", "Spring", "Highland", "Sunset", "Forest",  "River",      "Meadow", "Lincoln", "Mill",  "Willow"};

constexpr std::array<std::string_view, 8> kSuffixes = {"Street", "Avenue", "Road", "Lane",
                                                       "Drive",  "Court",  "Way",  "Boulevard"};

constexpr std::array<std::string_view, 50> kJobs = {
    "teacher",           "nurse",                   "accountant",        "engineer",
    "lawyer",            "pharmacist",              "electrician",       "plumber",
    "architect",         "dentist",                 "chef",              "librarian",
    "pilot",             "journalist",              "photographer",      "carpenter",
    "mechanic",          "veterinarian",            "economist",         "translator",
    "software developer", "data analyst",           "graphic designer",  "civil engineer",
    "sales manager",     "project manager",         "web designer",      "real estate agent",
    "bank teller",       "truck driver",            "police officer",    "social worker",
    "financial advisor", "marketing director",      "research scientist", "office clerk",
    "dental hygienist",  "physical therapist",      "flight attendant",  "insurance agent",
    "hotel manager",     "school principal",        "retail cashier",    "security guard",
    "human resources manager", "chief executive officer", "medical lab technician", "network administrator",
    "construction worker", "registered nurse"};

constexpr std::string_view kBase58 = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
constexpr std::string_view kHex = "0123456789abcdef";

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  std::size_t uniform(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  template <class Array>
  std::string_view pick(const Array& a) {
    return a[uniform(0, a.size() - 1)];
  }
  std::string digits(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + uniform(0, 9)));
    return s;
  }
  std::string chars(std::string_view alphabet, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[uniform(0, alphabet.size() - 1)]);
    return s;
  }

 private:
  std::mt19937_64 rng_;
};

int days_in_month(int year, int month) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
  return month == 2 && leap ? 29 : kDays[month - 1];
}

std::string two(int v) { return (v < 10 ? "0" : "") + std::to_string(v); }

std::string lowercase_compact(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string render(const PiiRecord& r, int template_id) {
  switch (template_id) {
    case 0:
      return r.name + " can be reached at " + r.phone + " or by email at " + r.email + ", fax " + r.fax +
             ". Born on " + r.birthday + ", with social security number " + r.ssn + ", " + r.name +
             " lives at " + r.address + " and works as a " + r.job + ". Bitcoin wallet " + r.bitcoin +
             ", customer id " + r.uuid + ".";
    case 1:
      return "Contact record: " + r.name + ", phone " + r.phone + ", email " + r.email + ", fax " + r.fax +
             ", birthday " + r.birthday + ", SSN " + r.ssn + ", address " + r.address + ", job " + r.job +
             ", bitcoin " + r.bitcoin + ", uuid " + r.uuid + ".";
    default:
      return "The phone of " + r.name + " is " + r.phone + " and the email of " + r.name + " is " + r.email +
             ". The fax is " + r.fax + ", the birthday is " + r.birthday + " and the ssn is " + r.ssn + ". " +
             r.name + " is a " + r.job + " living at " + r.address + ", paid in bitcoin to " + r.bitcoin +
             " under account " + r.uuid + ".";
  }
}

}  // namespace

const char* to_string(PiiType type) {
  switch (type) {
    case PiiType::Name: return "name";
    case PiiType::Phone: return "phone";
    case PiiType::Email: return "email";
    case PiiType::Fax: return "fax";
    case PiiType::Birthday: return "birthday";
    case PiiType::Ssn: return "ssn";
    case PiiType::Address: return "address";
    case PiiType::Job: return "job";
    case PiiType::Bitcoin: return "bitcoin";
    case PiiType::Uuid: return "uuid";
  }
  return "?";
}

PiiType pii_type_from_string(std::string_view name) {
  for (auto t : kAllPiiTypes) {
    if (name == to_string(t)) return t;
  }
  throw ContractError("unknown PII type '" + std::string(name) + "'");
}

const std::string& PiiRecord::value(PiiType type) const {
  switch (type) {
    case PiiType::Name: return name;
    case PiiType::Phone: return phone;
    case PiiType::Email: return email;
    case PiiType::Fax: return fax;
    case PiiType::Birthday: return birthday;
    case PiiType::Ssn: return ssn;
    case PiiType::Address: return address;
    case PiiType::Job: return job;
    case PiiType::Bitcoin: return bitcoin;
    case PiiType::Uuid: return uuid;
  }
  throw ContractError("unknown PII type");
}

std::vector<PiiRecord> generate_pii_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ContractError("generate_pii_dataset: n must be at least 1");
  Draw draw(seed);
  std::vector<PiiRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PiiRecord r;
    r.name = std::string(draw.pick(kFirstNames)) + " " + std::string(draw.pick(kLastNames));
    r.phone = draw.digits(3) + "-" + draw.digits(3) + "-" + draw.digits(4);
    r.email = lowercase_compact(r.name) + draw.digits(draw.uniform(2, 4)) + "@" + std::string(draw.pick(kDomains));
    r.fax = draw.digits(3) + "-" + draw.digits(3) + "-" + draw.digits(4);
    const int year = static_cast<int>(draw.uniform(1940, 2005));
    const int month = static_cast<int>(draw.uniform(1, 12));
    const int day = static_cast<int>(draw.uniform(1, static_cast<std::size_t>(days_in_month(year, month))));
    r.birthday = std::to_string(year) + "-" + two(month) + "-" + two(day);
    r.ssn = draw.digits(3) + "-" + draw.digits(2) + "-" + draw.digits(4);
    r.address = std::to_string(draw.uniform(1, 9999)) + " " + std::string(draw.pick(kStreets)) + " " +
                std::string(draw.pick(kSuffixes));
    r.job = std::string(draw.pick(kJobs));
    r.bitcoin = std::string(draw.uniform(0, 1) ? "3" : "1") + draw.chars(kBase58, draw.uniform(25, 33));
    r.uuid = draw.chars(kHex, 8) + "-" + draw.chars(kHex, 4) + "-" + draw.chars(kHex, 4) + "-" +
             draw.chars(kHex, 4) + "-" + draw.chars(kHex, 12);
    r.template_id = static_cast<int>(draw.uniform(0, 2));
    r.rendered = render(r, r.template_id);
    out.push_back(std::move(r));
  }
  return out;
}

std::string pii_charset() {
  std::set<char> cs;
  auto add = [&](std::string_view s) { cs.insert(s.begin(), s.end()); };
  for (auto s : kFirstNames) add(s);
  for (auto s : kLastNames) add(s);
  for (auto s : kDomains) add(s);
  for (auto s : kStreets) add(s);
  for (auto s : kSuffixes) add(s);
  for (auto s : kJobs) add(s);
  add(kBase58);
  add(kHex);
  add("0123456789-@.,: ");
  PiiRecord probe{"N", "p", "e", "f", "b", "s", "a", "j", "c", "u", "", 0};
  for (int t = 0; t < 3; ++t) add(render(probe, t));
  for (char c : std::string(cs.begin(), cs.end())) {
    if (std::isalpha(static_cast<unsigned char>(c))) cs.insert(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return std::string(cs.begin(), cs.end());
}

nlohmann::json to_json(const PiiRecord& r) {
  return {{"name", r.name},       {"phone", r.phone},     {"email", r.email}, {"fax", r.fax},
          {"birthday", r.birthday}, {"ssn", r.ssn},       {"address", r.address}, {"job", r.job},
          {"bitcoin", r.bitcoin}, {"uuid", r.uuid},       {"rendered", r.rendered}};
}

PiiRecord pii_record_from_json(const nlohmann::json& j) {
  PiiRecord r;
  r.name = j.at("name").get<std::string>();
  r.phone = j.at("phone").get<std::string>();
  r.email = j.at("email").get<std::string>();
  r.fax = j.at("fax").get<std::string>();
  r.birthday = j.at("birthday").get<std::string>();
  r.ssn = j.at("ssn").get<std::string>();
  r.address = j.at("address").get<std::string>();
  r.job = j.at("job").get<std::string>();
  r.bitcoin = j.at("bitcoin").get<std::string>();
  r.uuid = j.at("uuid").get<std::string>();
  r.rendered = j.at("rendered").get<std::string>();
  return r;
}

}  // namespace aia
