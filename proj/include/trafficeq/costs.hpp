#pragma once

#include <span>
#include <stdexcept>
#include <string>

#include "bpr.hpp"
#include "network.hpp"
#include "spath.hpp"

namespace trafficeq {

namespace detail {

inline void check_flows(const Network& net, std::span<const double> f) {
  if (f.size() != net.edge_count()) {
    throw std::invalid_argument("flow vector length does not match edge count");
  }
}

}  // namespace detail

/// Beckmann potential: sum over edges of the integral of the travel time.
inline double beckmann_potential(const Network& net, std::span<const double> f) {
  detail::check_flows(net, f);
  double total = 0.0;
  for (std::size_t e = 0; e < f.size(); ++e) total += sigma(net.edge(e).law, f[e]);
  return total;
}

/// Componentwise tau, i.e. the gradient of the Beckmann potential.
inline EdgeVector edge_times(const Network& net, std::span<const double> f) {
  detail::check_flows(net, f);
  EdgeVector t(f.size());
  for (std::size_t e = 0; e < f.size(); ++e) t[e] = tau(net.edge(e).law, f[e]);
  return t;
}

inline EdgeVector edge_time_slopes(const Network& net, std::span<const double> f) {
  detail::check_flows(net, f);
  EdgeVector s(f.size());
  for (std::size_t e = 0; e < f.size(); ++e) s[e] = tau_prime(net.edge(e).law, f[e]);
  return s;
}

}  // namespace trafficeq
