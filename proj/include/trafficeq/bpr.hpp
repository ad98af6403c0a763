#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace trafficeq {

// BPR volume-delay law: tau(f) = free_time * (1 + gamma * (f / capacity)^power).
struct BprLaw {
  double free_time = 0.0;
  double capacity = 1.0;
  double gamma = 0.0;
  double power = 1.0;
};

class CostError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

inline void require_nonnegative_flow(double f, const char* what) {
  if (!(f >= 0.0)) {
    throw CostError(std::string(what) + ": negative or NaN flow " + std::to_string(f));
  }
}

}  // namespace detail

// Throws CostError when the law cannot be used by the solvers: negative
// free time or gamma, non-positive capacity, or power below one.
inline void validate_law(const BprLaw& law) {
  if (!(law.free_time >= 0.0) || !std::isfinite(law.free_time)) {
    throw CostError("free time must be finite and nonnegative");
  }
  if (!(law.capacity > 0.0) || !std::isfinite(law.capacity)) {
    throw CostError("capacity must be finite and positive");
  }
  if (!(law.gamma >= 0.0) || !std::isfinite(law.gamma)) {
    throw CostError("bpr gamma must be finite and nonnegative");
  }
  if (!(law.power >= 1.0) || !std::isfinite(law.power)) {
    throw CostError("bpr power must be finite and >= 1");
  }
}

/// Travel time on an edge carrying flow f.
inline double tau(const BprLaw& law, double f) {
  detail::require_nonnegative_flow(f, "tau");
  if (law.gamma == 0.0) return law.free_time;
  return law.free_time * (1.0 + law.gamma * std::pow(f / law.capacity, law.power));
}

/// Antiderivative of tau with sigma(0) = 0.
inline double sigma(const BprLaw& law, double f) {
  detail::require_nonnegative_flow(f, "sigma");
  if (law.gamma == 0.0) return law.free_time * f;
  return law.free_time * f *
         (1.0 + law.gamma / (law.power + 1.0) * std::pow(f / law.capacity, law.power));
}

/// Derivative of tau. Powers below one would blow up at zero flow and are
/// rejected rather than returning +inf.
inline double tau_prime(const BprLaw& law, double f) {
  detail::require_nonnegative_flow(f, "tau_prime");
  if (law.gamma == 0.0 || law.free_time == 0.0) return 0.0;
  if (law.power < 1.0 && f == 0.0) {
    throw CostError("tau_prime: infinite slope at zero flow for power < 1");
  }
  if (law.power == 1.0) return law.free_time * law.gamma / law.capacity;
  return law.free_time * law.gamma * law.power * std::pow(f, law.power - 1.0) /
         std::pow(law.capacity, law.power);
}

}  // namespace trafficeq
