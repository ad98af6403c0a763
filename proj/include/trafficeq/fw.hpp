#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "costs.hpp"
#include "format.hpp"
#include "network.hpp"
#include "spath.hpp"

namespace trafficeq {

enum class StepRule {
  classic,  // gamma_k = min(1, 2/(k+1))
  shifted,  // gamma_k = 2/(k+2)
};

enum class StopRule {
  gap_lower_bound,  // psi(f^k) - lower_k <= eps
  grip,             // min_k <grad psi(f^k), f^k - y^k> <= eps
  budget,           // k >= N(L2) from the adaptive iteration budget
};

struct FwConfig {
  double rel_tol = 0.01;  // eps = rel_tol * psi(f^0)
  std::size_t max_iter = 100000;
  StepRule step_rule = StepRule::classic;
  StopRule stop_rule = StopRule::gap_lower_bound;
  std::size_t check_period = 0;  // 0 selects round(alpha / rel_tol)
  double alpha = 1.0;
  std::optional<double> r2_squared;  // default |E| * (total demand)^2
  bool keep_paths = false;
  unsigned threads = 1;
  bool timing = true;
};

struct FwRecord {
  std::size_t k = 0;
  double psi = 0.0;
  double lower = 0.0;
  double gap = 0.0;  // <tau(f^k), f^k - y^k>
  double l2 = 0.0;
  double r2 = 0.0;   // max over l <= k of ||y^l - f^l||_2^2
  double seconds = 0.0;
};

using FwTrace = std::vector<FwRecord>;

struct FwResult {
  EdgeVector flows;
  FwTrace trace;
  // used_paths[i] lists the distinct tree paths od entry i was routed on.
  std::vector<std::vector<std::vector<EdgeIndex>>> used_paths;
  bool converged = false;
  std::size_t iterations = 0;  // index N of the last iterate examined
  double psi0 = 0.0;
  double epsilon = 0.0;
  double psi = 0.0;    // psi of the returned flows
  double lower = 0.0;  // best lower bound on psi_*
  double certified_gap = 0.0;
  double l2 = 0.0;
  double r2_measured = 0.0;
  double r2_bound = 0.0;
  std::size_t budget = 0;  // N(L2) at exit
};

inline double step_size(StepRule rule, std::size_t k) {
  const double kd = static_cast<double>(k);
  if (rule == StepRule::classic) return std::min(1.0, 2.0 / (kd + 1.0));
  return 2.0 / (kd + 2.0);
}

// Running L2 = max_e tau'_e(fhat_e) and the iteration count
// N(L2) = ceil(2 * L2 * R2^2 / eps) it implies. N never decreases.
class IterationBudget {
 public:
  IterationBudget(double r2_squared, double epsilon, double initial_l2 = 0.0)
      : r2_squared_(r2_squared), epsilon_(epsilon), l2_(initial_l2) {
    recompute();
  }

  std::size_t update(const Network& net, std::span<const double> fhat) {
    double estimate = 0.0;
    for (std::size_t e = 0; e < fhat.size(); ++e) {
      estimate = std::max(estimate, tau_prime(net.edge(e).law, fhat[e]));
    }
    if (estimate > l2_) {
      l2_ = estimate;
      recompute();
    }
    return n_;
  }

  double l2() const noexcept { return l2_; }
  std::size_t iterations() const noexcept { return n_; }

 private:
  void recompute() {
    if (l2_ == 0.0) return;
    const double raw = std::ceil(2.0 * l2_ * r2_squared_ / epsilon_);
    const std::size_t n = raw >= static_cast<double>(std::numeric_limits<std::size_t>::max())
                              ? std::numeric_limits<std::size_t>::max()
                              : static_cast<std::size_t>(raw);
    n_ = std::max(n_, n);
  }

  double r2_squared_;
  double epsilon_;
  double l2_;
  std::size_t n_ = 0;
};

inline std::size_t adaptive_iteration_budget(IterationBudget& state, const Network& net,
                                             std::span<const double> fhat) {
  return state.update(net, fhat);
}

/// Frank-Wolfe gap <t, f - y>; nonnegative when y is the all-or-nothing
/// vertex at times t.
inline double fw_gap(std::span<const double> t, std::span<const double> f,
                     std::span<const double> y) {
  double g = 0.0;
  for (std::size_t e = 0; e < t.size(); ++e) g += t[e] * (f[e] - y[e]);
  return g;
}

inline double default_r2_squared(const Network& net, const DemandTable& dem) {
  return static_cast<double>(net.edge_count()) * dem.total() * dem.total();
}

inline void validate(const FwConfig& cfg) {
  if (!(cfg.rel_tol > 0.0 && cfg.rel_tol < 1.0)) {
    throw std::invalid_argument("fw: relative tolerance must lie in (0, 1)");
  }
  if (cfg.max_iter == 0) throw std::invalid_argument("fw: max_iter must be positive");
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("fw: alpha must be positive");
}

inline FwResult solve_beckmann(const Network& net, const DemandTable& dem, const FwConfig& cfg) {
  validate(cfg);
  for (const auto& e : net.edges()) validate_law(e.law);
  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!cfg.timing) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };
  const std::size_t period =
      cfg.check_period > 0
          ? cfg.check_period
          : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.alpha / cfg.rel_tol)));

  FwResult out;
  std::vector<std::set<std::vector<EdgeIndex>>> paths(cfg.keep_paths ? dem.size() : 0);
  auto record_paths = [&](const AonResult& aon) {
    if (!cfg.keep_paths) return;
    const auto& groups = dem.origin_groups();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t i : groups[g].entries) {
        paths[i].insert(tree_path(net, aon.trees[g], dem.entries()[i].destination));
      }
    }
  };

  const EdgeVector zero(net.edge_count(), 0.0);
  AonResult aon = all_or_nothing(net, edge_times(net, zero), dem, cfg.threads);
  record_paths(aon);
  EdgeVector f = std::move(aon.flows);
  EdgeVector fhat = f;
  out.psi0 = beckmann_potential(net, f);
  out.epsilon = cfg.rel_tol * out.psi0;
  out.r2_bound = cfg.r2_squared.value_or(default_r2_squared(net, dem));
  IterationBudget budget(out.r2_bound, out.epsilon);

  double lower = -std::numeric_limits<double>::infinity();
  double best_grip = std::numeric_limits<double>::infinity();
  EdgeVector best_f;
  double best_psi = 0.0;
  double r2 = 0.0;

  for (std::size_t k = 0;; ++k) {
    const EdgeVector t = edge_times(net, f);
    const double psi = beckmann_potential(net, f);
    aon = all_or_nothing(net, t, dem, cfg.threads);
    record_paths(aon);
    const EdgeVector& y = aon.flows;
    const double grip = fw_gap(t, f, y);
    lower = std::max(lower, psi - grip);
    budget.update(net, fhat);
    double dist2 = 0.0;
    for (std::size_t e = 0; e < f.size(); ++e) dist2 += (y[e] - f[e]) * (y[e] - f[e]);
    r2 = std::max(r2, dist2);
    if (grip < best_grip) {
      best_grip = grip;
      best_f = f;
      best_psi = psi;
    }
    out.trace.push_back({k, psi, lower, grip, budget.l2(), r2, elapsed()});

    bool stop = false;
    switch (cfg.stop_rule) {
      case StopRule::gap_lower_bound:
        stop = k % period == 0 && psi - lower <= out.epsilon;
        break;
      case StopRule::grip:
        stop = k % period == 0 && best_grip <= out.epsilon;
        break;
      case StopRule::budget:
        stop = k >= budget.iterations();
        break;
    }
    if (stop || k == cfg.max_iter) {
      out.converged = stop;
      out.iterations = k;
      out.lower = lower;
      if (cfg.stop_rule == StopRule::grip) {
        out.flows = std::move(best_f);
        out.psi = best_psi;
        out.certified_gap = best_grip;
      } else {
        out.flows = f;
        out.psi = psi;
        out.certified_gap = psi - lower;
      }
      break;
    }

    const double gamma = step_size(cfg.step_rule, k);
    for (std::size_t e = 0; e < f.size(); ++e) {
      f[e] = (1.0 - gamma) * f[e] + gamma * y[e];
      fhat[e] = std::max(fhat[e], f[e]);
    }
  }

  out.l2 = budget.l2();
  out.budget = budget.iterations();
  out.r2_measured = r2;
  if (cfg.keep_paths) {
    out.used_paths.resize(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) {
      out.used_paths[i].assign(paths[i].begin(), paths[i].end());
    }
  }
  return out;
}

inline void write_fw_trace_csv(std::ostream& os, const FwTrace& trace) {
  os << "k,psi,lower,gap,l2,seconds\n";
  for (const auto& r : trace) {
    os << r.k << ',' << format_real(r.psi) << ',' << format_real(r.lower) << ','
       << format_real(r.gap) << ',' << format_real(r.l2) << ',' << format_real(r.seconds) << '\n';
  }
}

}  // namespace trafficeq
