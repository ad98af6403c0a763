#pragma once

// Brute-force ground truth for tiny instances. Everything here works on
// explicitly enumerated simple paths and is guarded against blow-up.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "costs.hpp"
#include "network.hpp"
#include "spath.hpp"

namespace trafficeq::oracle {

class GuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Path = std::vector<EdgeIndex>;

// paths[i] holds the simple paths of demand entry i.
struct PathSet {
  std::vector<std::vector<Path>> paths;

  std::size_t path_count() const {
    std::size_t n = 0;
    for (const auto& p : paths) n += p.size();
    return n;
  }
};

inline constexpr std::size_t kDefaultMaxNodes = 16;
inline constexpr std::size_t kPartialLimit = 100000;

/// All simple paths origin -> destination by depth-first search over
/// out-edges in increasing index, which yields lexicographic edge order.
inline std::vector<Path> enumerate_paths(const Network& net, NodeId origin, NodeId destination,
                                         std::size_t max_nodes = kDefaultMaxNodes) {
  if (net.node_count() > max_nodes) {
    throw GuardError("path enumeration refused: " + std::to_string(net.node_count()) +
                     " nodes exceeds the limit of " + std::to_string(max_nodes));
  }
  std::vector<Path> out;
  std::vector<char> on_path(net.node_count(), 0);
  Path current;
  std::size_t partial = 0;

  auto dfs = [&](auto&& self, NodeId v) -> void {
    if (++partial > kPartialLimit) {
      throw GuardError("path enumeration refused: more than " + std::to_string(kPartialLimit) +
                       " partial paths");
    }
    if (v == destination) {
      out.push_back(current);
      return;
    }
    on_path[v] = 1;
    for (EdgeIndex e : net.out_edges(v)) {
      const NodeId h = net.edge(e).head;
      if (on_path[h]) continue;
      current.push_back(e);
      self(self, h);
      current.pop_back();
    }
    on_path[v] = 0;
  };
  dfs(dfs, origin);
  return out;
}

inline PathSet enumerate_path_set(const Network& net, const DemandTable& dem,
                                  std::size_t max_nodes = kDefaultMaxNodes) {
  PathSet set;
  for (const auto& d : dem.entries()) {
    set.paths.push_back(enumerate_paths(net, d.origin, d.destination, max_nodes));
    if (set.paths.back().empty()) throw UnreachableError(d.origin, d.destination);
  }
  return set;
}

/// Edge flows Theta * x for path flows laid out in PathSet order.
inline EdgeVector edge_flows(const Network& net, const PathSet& set,
                             const std::vector<std::vector<double>>& x) {
  EdgeVector f(net.edge_count(), 0.0);
  for (std::size_t w = 0; w < set.paths.size(); ++w) {
    for (std::size_t p = 0; p < set.paths[w].size(); ++p) {
      for (EdgeIndex e : set.paths[w][p]) f[e] += x[w][p];
    }
  }
  return f;
}

/// Euclidean projection onto {x >= 0, sum x = total} (sort-based).
inline std::vector<double> project_scaled_simplex(std::vector<double> v, double total) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double threshold = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumulative += sorted[i];
    const double candidate = (cumulative - total) / static_cast<double>(i + 1);
    if (sorted[i] - candidate > 0.0) threshold = candidate;
  }
  for (double& x : v) x = std::max(0.0, x - threshold);
  return v;
}

struct BeckmannOracleResult {
  EdgeVector flows;
  double psi = 0.0;
  double gap = 0.0;  // Frank-Wolfe gap over the enumerated paths at exit
  std::vector<std::vector<double>> path_flows;
  std::size_t iterations = 0;
};

// Projected gradient over path flows with the constant step 1/L, where L
// bounds the path-space Hessian Theta^T diag(tau') Theta on the feasible set.
// Stops once the path-level Frank-Wolfe gap is at most tol.
inline BeckmannOracleResult beckmann_oracle(const Network& net, const DemandTable& dem, double tol,
                                            std::size_t max_iter = 2000000,
                                            std::size_t max_nodes = kDefaultMaxNodes) {
  if (!(tol > 0.0)) throw std::invalid_argument("beckmann_oracle: tol must be positive");
  const PathSet set = enumerate_path_set(net, dem, max_nodes);
  const auto& entries = dem.entries();

  std::size_t longest = 1;
  std::vector<std::size_t> sharing(net.edge_count(), 0);
  for (const auto& ps : set.paths) {
    for (const auto& p : ps) {
      longest = std::max(longest, p.size());
      for (EdgeIndex e : p) ++sharing[e];
    }
  }
  double slope = 0.0;
  for (std::size_t e = 0; e < net.edge_count(); ++e) {
    slope = std::max(slope, tau_prime(net.edge(e).law, dem.total()));
  }
  const std::size_t widest = *std::max_element(sharing.begin(), sharing.end());
  const double lip = std::max(slope * static_cast<double>(longest * std::max<std::size_t>(1, widest)),
                              1e-12);
  const double step = 1.0 / lip;

  BeckmannOracleResult out;
  out.path_flows.resize(set.paths.size());
  for (std::size_t w = 0; w < set.paths.size(); ++w) {
    out.path_flows[w].assign(set.paths[w].size(),
                             entries[w].rate / static_cast<double>(set.paths[w].size()));
  }

  for (std::size_t it = 0;; ++it) {
    const EdgeVector f = edge_flows(net, set, out.path_flows);
    const EdgeVector t = edge_times(net, f);
    double gap = 0.0;
    std::vector<std::vector<double>> cost(set.paths.size());
    for (std::size_t w = 0; w < set.paths.size(); ++w) {
      double cheapest = std::numeric_limits<double>::infinity();
      double weighted = 0.0;
      for (std::size_t p = 0; p < set.paths[w].size(); ++p) {
        double c = 0.0;
        for (EdgeIndex e : set.paths[w][p]) c += t[e];
        cost[w].push_back(c);
        cheapest = std::min(cheapest, c);
        weighted += out.path_flows[w][p] * c;
      }
      gap += weighted - entries[w].rate * cheapest;
    }
    if (gap <= tol) {
      out.flows = f;
      out.psi = beckmann_potential(net, f);
      out.gap = gap;
      out.iterations = it;
      return out;
    }
    if (it == max_iter) {
      throw ConvergenceError("beckmann_oracle: gap " + std::to_string(gap) + " after " +
                             std::to_string(max_iter) + " iterations");
    }
    for (std::size_t w = 0; w < set.paths.size(); ++w) {
      std::vector<double> shifted = out.path_flows[w];
      for (std::size_t p = 0; p < shifted.size(); ++p) shifted[p] -= step * cost[w][p];
      out.path_flows[w] = project_scaled_simplex(std::move(shifted), entries[w].rate);
    }
  }
}

struct SdOracleResult {
  bool feasible = false;
  EdgeVector flows;
  double value = 0.0;  // min sum_e free_time_e f_e
  std::vector<std::vector<double>> path_flows;
  std::size_t bases_tried = 0;
};

inline constexpr std::size_t kMaxOraclePaths = 20;
inline constexpr std::size_t kMaxBases = 5000000;

namespace detail {

// Solves a * x = b in place by Gaussian elimination with partial pivoting.
// Returns false for (numerically) singular systems.
inline bool solve_dense(std::vector<double> a, std::vector<double> b, std::size_t m,
                        std::vector<double>& x) {
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r * m + col]) > std::abs(a[pivot * m + col])) pivot = r;
    }
    if (std::abs(a[pivot * m + col]) < 1e-12) return false;
    if (pivot != col) {
      for (std::size_t c = 0; c < m; ++c) std::swap(a[col * m + c], a[pivot * m + c]);
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      const double factor = a[r * m + col] / a[col * m + col];
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < m; ++c) a[r * m + c] -= factor * a[col * m + c];
      b[r] -= factor * b[col];
    }
  }
  x.assign(m, 0.0);
  for (std::size_t r = m; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < m; ++c) s -= a[r * m + c] * x[c];
    x[r] = s / a[r * m + r];
  }
  return true;
}

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace detail

// Exhaustive basis enumeration of
//   min sum_e free_time_e (Theta x)_e  s.t.  sum_{p in P_w} x_p = d_w,
//   Theta x + slack = capacity,  x, slack >= 0.
inline SdOracleResult sd_oracle(const Network& net, const DemandTable& dem, const PathSet& set) {
  const std::size_t paths = set.path_count();
  if (paths > kMaxOraclePaths) {
    throw GuardError("sd_oracle refused: " + std::to_string(paths) + " paths exceeds " +
                     std::to_string(kMaxOraclePaths));
  }
  const std::size_t rows = set.paths.size() + net.edge_count();
  const std::size_t cols = paths + net.edge_count();
  if (detail::binomial(cols, rows) > static_cast<double>(kMaxBases)) {
    throw GuardError("sd_oracle refused: too many candidate bases");
  }

  // Column-major constraint matrix and per-column cost.
  std::vector<std::vector<double>> column(cols, std::vector<double>(rows, 0.0));
  std::vector<double> cost(cols, 0.0);
  std::vector<std::pair<std::size_t, std::size_t>> owner;  // column -> (od, path)
  std::size_t c = 0;
  for (std::size_t w = 0; w < set.paths.size(); ++w) {
    for (std::size_t p = 0; p < set.paths[w].size(); ++p, ++c) {
      column[c][w] = 1.0;
      for (EdgeIndex e : set.paths[w][p]) {
        column[c][set.paths.size() + e] += 1.0;
        cost[c] += net.edge(e).law.free_time;
      }
      owner.emplace_back(w, p);
    }
  }
  for (std::size_t e = 0; e < net.edge_count(); ++e, ++c) column[c][set.paths.size() + e] = 1.0;
  std::vector<double> rhs(rows);
  for (std::size_t w = 0; w < set.paths.size(); ++w) rhs[w] = dem.entries()[w].rate;
  for (std::size_t e = 0; e < net.edge_count(); ++e) rhs[set.paths.size() + e] = net.edge(e).law.capacity;

  SdOracleResult out;
  out.value = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> basis(rows);
  std::iota(basis.begin(), basis.end(), std::size_t{0});
  std::vector<double> a(rows * rows), x;
  const double scale = std::max(1.0, *std::max_element(rhs.begin(), rhs.end()));
  for (;;) {
    ++out.bases_tried;
    for (std::size_t j = 0; j < rows; ++j) {
      for (std::size_t r = 0; r < rows; ++r) a[r * rows + j] = column[basis[j]][r];
    }
    if (detail::solve_dense(a, rhs, rows, x) &&
        std::all_of(x.begin(), x.end(), [&](double v) { return v >= -1e-9 * scale; })) {
      double value = 0.0;
      for (std::size_t j = 0; j < rows; ++j) value += cost[basis[j]] * x[j];
      if (value < out.value) {
        out.feasible = true;
        out.value = value;
        out.path_flows.assign(set.paths.size(), {});
        for (std::size_t w = 0; w < set.paths.size(); ++w) out.path_flows[w].assign(set.paths[w].size(), 0.0);
        for (std::size_t j = 0; j < rows; ++j) {
          if (basis[j] < paths) {
            auto [w, p] = owner[basis[j]];
            out.path_flows[w][p] = std::max(0.0, x[j]);
          }
        }
      }
    }
    // Next combination in lexicographic order.
    std::size_t i = rows;
    while (i > 0 && basis[i - 1] == cols - rows + i - 1) --i;
    if (i == 0) break;
    ++basis[i - 1];
    for (std::size_t j = i; j < rows; ++j) basis[j] = basis[j - 1] + 1;
  }
  if (out.feasible) {
    out.flows = edge_flows(net, set, out.path_flows);
    out.value = 0.0;
    for (std::size_t e = 0; e < out.flows.size(); ++e) out.value += net.edge(e).law.free_time * out.flows[e];
  } else {
    out.value = 0.0;
  }
  return out;
}

inline SdOracleResult sd_oracle(const Network& net, const DemandTable& dem,
                                std::size_t max_nodes = kDefaultMaxNodes) {
  return sd_oracle(net, dem, enumerate_path_set(net, dem, max_nodes));
}

}  // namespace trafficeq::oracle
