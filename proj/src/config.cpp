#include "kflow/config.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

namespace kflow {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string spot(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

}  // namespace

Config Config::parse(std::istream& is) {
  Config c;
  std::string line, section;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    std::string body = trim(line);
    if (body.empty()) continue;
    if (body.front() == '[') {
      require(body.back() == ']' && body.size() >= 3,
              "config line " + std::to_string(lineno) + ": malformed section header '" + body +
                  "'");
      section = trim(body.substr(1, body.size() - 2));
      require(!section.empty(), "config line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    auto eq = body.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(lineno) + ": expected key = value, got '" + body +
                "'");
    std::string key = trim(body.substr(0, eq));
    require(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
    c.set(section, key, trim(body.substr(eq + 1)));
  }
  return c;
}

Config Config::parse_string(const std::string& text) {
  std::istringstream is(text);
  return parse(is);
}

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "cannot open config file " + path);
  return parse(is);
}

bool Config::has(const std::string& section, const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.section == section && e.key == key) return true;
  }
  return false;
}

const std::string& Config::get(const std::string& section, const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.section == section && e.key == key) return e.value;
  }
  fail("config is missing " + spot(section, key));
}

std::string Config::get_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

long Config::get_long(const std::string& section, const std::string& key) const {
  const std::string& v = get(section, key);
  long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(),
          "config " + spot(section, key) + ": '" + v + "' is not an integer");
  return out;
}

long Config::get_long_or(const std::string& section, const std::string& key,
                         long fallback) const {
  return has(section, key) ? get_long(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key) const {
  const std::string& v = get(section, key);
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    require(used == v.size(), "trailing characters");
    return out;
  } catch (const std::exception&) {
    fail("config " + spot(section, key) + ": '" + v + "' is not a number");
  }
}

double Config::get_double_or(const std::string& section, const std::string& key,
                             double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

bool Config::get_bool_or(const std::string& section, const std::string& key,
                         bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& v = get(section, key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config " + spot(section, key) + ": '" + v + "' is not a boolean");
}

std::vector<std::string> Config::get_list(const std::string& section,
                                          const std::string& key) const {
  const std::string& v = get(section, key);
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= v.size()) {
    size_t comma = v.find(',', start);
    if (comma == std::string::npos) comma = v.size();
    std::string item = trim(v.substr(start, comma - start));
    if (!item.empty()) out.push_back(item);
    start = comma + 1;
  }
  return out;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  for (auto& e : entries_) {
    if (e.section == section && e.key == key) {
      e.value = value;
      return;
    }
  }
  entries_.push_back({section, key, value});
}

void Config::write(std::ostream& os) const {
  std::vector<std::string> order;
  for (const auto& e : entries_) {
    bool seen = false;
    for (const auto& s : order) seen = seen || s == e.section;
    if (!seen) order.push_back(e.section);
  }
  bool first = true;
  for (const auto& s : order) {
    if (!s.empty()) {
      if (!first) os << "\n";
      os << "[" << s << "]\n";
    }
    first = false;
    for (const auto& e : entries_) {
      if (e.section == s) os << e.key << " = " << e.value << "\n";
    }
  }
}

std::string Config::to_string() const {
  std::ostringstream os;
  write(os);
  return os.str();
}

std::uint64_t Config::hash() const { return fnv1a(to_string()); }

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex_u64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace kflow
