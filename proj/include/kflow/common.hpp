#pragma once
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace kflow {

class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// softplus and its inverse, used for positivity reparameterizations everywhere
inline double softplus_d(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double inv_softplus_d(double y) {
  // y = ln(1+e^x)  =>  x = ln(e^y - 1)
  if (y > 30.0) return y;
  return y + std::log1p(-std::exp(-y));
}

// shortest round-trip decimal form, used by every text writer
std::string format_double(double v);

}  // namespace kflow
