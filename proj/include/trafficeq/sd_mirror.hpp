#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "format.hpp"
#include "network.hpp"
#include "spath.hpp"

namespace trafficeq {

// Edge times for the stable-dynamics dual; feasible when t >= free times.
using DualTimes = EdgeVector;

enum class MdVariant { deterministic, sample_od, sample_origin };
enum class Recovery { multiplier, flow_average };

struct MdConfig {
  // N for the first run; 0 derives N = ceil(2 M^2 R^2 / tol^2) from the
  // current R and M on every run, which pins the step at tol / M^2.
  std::size_t iterations = 0;
  std::size_t max_iterations = 100000000;  // runs longer than this are not attempted
  double r_bar = 0.0;             // 0 selects ||t^0||_2 (or 1 when that is zero)
  double m = 1.0;
  double tol = 1e-2;              // absolute, on gap, violation and conservation residual
  MdVariant variant = MdVariant::deterministic;
  Recovery recovery = Recovery::multiplier;
  std::uint64_t seed = 1;
  std::size_t max_restarts = 64;
  double confidence = 0.05;       // sigma; reported only
  std::size_t trace_every = 0;   // 0 keeps about 1000 records per run
  unsigned threads = 1;
};

struct MdRecord {
  std::size_t k = 0;
  double upsilon_sample = 0.0;
  double step = 0.0;
  double grad_norm = 0.0;
};

struct MdResult {
  DualTimes t_avg;
  EdgeVector f_rec;
  double upsilon = 0.0;
  double primal = 0.0;     // <free times, f_rec>
  double gap = 0.0;
  double violation = 0.0;  // ||(f_rec - capacity)_+||_2
  double residual = 0.0;   // flow conservation mismatch of f_rec, max norm
  std::size_t restarts = 0;
  std::size_t iterations = 0;  // N of the final run
  std::size_t total_steps = 0;
  double r_bar = 0.0;
  double m = 0.0;
  double step_sum = 0.0;  // S_N
  bool converged = false;
  std::uint64_t seed = 0;
  double confidence = 0.0;
  double theory_bound = 0.0;  // 16 sqrt(2) M R / sqrt(N) ln(4N / sigma), not asserted
  std::vector<MdRecord> trace;
};

namespace detail {

inline void check_dual_feasible(const Network& net, std::span<const double> t) {
  if (t.size() != net.edge_count()) throw std::invalid_argument("dual times: wrong length");
  for (std::size_t e = 0; e < t.size(); ++e) {
    if (!(t[e] >= net.edge(e).law.free_time)) {
      throw std::invalid_argument("dual times: t below free time on edge " + std::to_string(e));
    }
  }
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double capacity_term(const Network& net, std::span<const double> t) {
  double s = 0.0;
  for (std::size_t e = 0; e < t.size(); ++e) {
    s += net.edge(e).law.capacity * (t[e] - net.edge(e).law.free_time);
  }
  return s;
}

// Uniform draw in [0, 1) from the top 53 bits, so sequences depend only on
// the engine, which the standard pins down exactly.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t draw_index(std::span<const double> probabilities, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    acc += probabilities[i];
    if (u < acc) return i;
  }
  return probabilities.size() - 1;
}

}  // namespace detail

/// Dual objective: -sum_w d_w T_w(t) + <capacity, t - free time>.
inline double upsilon(const Network& net, const DemandTable& dem, std::span<const double> t,
                      unsigned threads = 1) {
  detail::check_dual_feasible(net, t);
  return -potential_sum(net, t, dem, threads) + detail::capacity_term(net, t);
}

struct FullSubgradient {
  EdgeVector g;        // capacity - aon flows
  EdgeVector flows;    // aon flows at t
  double upsilon = 0.0;
};

inline FullSubgradient subgrad_full(const Network& net, const DemandTable& dem,
                                    std::span<const double> t, unsigned threads = 1) {
  detail::check_dual_feasible(net, t);
  AonResult aon = all_or_nothing(net, t, dem, threads);
  FullSubgradient out;
  out.g = net.capacities();
  for (std::size_t e = 0; e < out.g.size(); ++e) out.g[e] -= aon.flows[e];
  out.flows = std::move(aon.flows);
  out.upsilon = -aon.value + detail::capacity_term(net, t);
  return out;
}

// A single outcome of a stochastic subgradient, together with the matching
// unbiased estimate of upsilon(t).
struct SampledSubgradient {
  EdgeVector g;
  double upsilon_estimate = 0.0;
};

inline std::vector<double> od_probabilities(const DemandTable& dem) {
  std::vector<double> p;
  for (const auto& d : dem.entries()) p.push_back(d.rate / dem.total());
  return p;
}

inline std::vector<double> origin_probabilities(const DemandTable& dem) {
  std::vector<double> p;
  for (const auto& g : dem.origin_groups()) p.push_back(g.total / dem.total());
  return p;
}

/// Outcome xi = w: g = -d * (indicator of the tree path of w) + capacity.
inline SampledSubgradient subgrad_for_od(const Network& net, const DemandTable& dem,
                                         std::span<const double> t, std::size_t od) {
  const Demand& w = dem.entries().at(od);
  const ShortestPathTree tree = dijkstra(net, t, w.origin);
  const double d = dem.total();
  SampledSubgradient out;
  out.g = net.capacities();
  for (EdgeIndex e : tree_path(net, tree, w.destination)) out.g[e] -= d;
  out.upsilon_estimate = -d * tree.dist[w.destination] + detail::capacity_term(net, t);
  return out;
}

/// Outcome xi = origin group i: one tree, loaded with the group's demands
/// and scaled by d / d_i.
inline SampledSubgradient subgrad_for_origin(const Network& net, const DemandTable& dem,
                                             std::span<const double> t, std::size_t group) {
  const auto& g = dem.origin_groups().at(group);
  const ShortestPathTree tree = dijkstra(net, t, g.origin);
  const double scale = dem.total() / g.total;
  std::vector<DestinationRate> demands;
  double weighted = 0.0;
  for (std::size_t i : g.entries) {
    const Demand& w = dem.entries()[i];
    demands.push_back({w.destination, w.rate});
  }
  EdgeVector load(net.edge_count(), 0.0);
  add_tree_flows(net, tree, demands, 1.0, load);
  for (const auto& dr : demands) weighted += dr.rate * tree.dist[dr.destination];
  SampledSubgradient out;
  out.g = net.capacities();
  for (std::size_t e = 0; e < load.size(); ++e) out.g[e] -= scale * load[e];
  out.upsilon_estimate = -scale * weighted + detail::capacity_term(net, t);
  return out;
}

inline SampledSubgradient subgrad_sample_od(const Network& net, const DemandTable& dem,
                                            std::span<const double> t, std::mt19937_64& rng) {
  detail::check_dual_feasible(net, t);
  if (dem.empty()) return {net.capacities(), detail::capacity_term(net, t)};
  const auto p = od_probabilities(dem);
  return subgrad_for_od(net, dem, t, detail::draw_index(p, rng));
}

inline SampledSubgradient subgrad_sample_origin(const Network& net, const DemandTable& dem,
                                                std::span<const double> t,
                                                std::mt19937_64& rng) {
  detail::check_dual_feasible(net, t);
  if (dem.empty()) return {net.capacities(), detail::capacity_term(net, t)};
  const auto p = origin_probabilities(dem);
  return subgrad_for_origin(net, dem, t, detail::draw_index(p, rng));
}

/// Euclidean prox step on {t >= free times}: a parabola on a half-line per
/// edge, minimized at max(free time, t - step * g).
inline DualTimes md_step(const Network& net, std::span<const double> t, std::span<const double> g,
                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("md_step: step must be positive");
  DualTimes next(t.size());
  for (std::size_t e = 0; e < t.size(); ++e) {
    next[e] = std::max(net.edge(e).law.free_time, t[e] - step * g[e]);
  }
  return next;
}

struct GapReport {
  double gap = 0.0;
  double violation = 0.0;
};

/// gap = upsilon(t) + <free times, f>; violation = ||(f - capacity)_+||_2.
inline GapReport duality_gap(const Network& net, const DemandTable& dem, std::span<const double> t,
                             std::span<const double> f, unsigned threads = 1) {
  GapReport out;
  out.gap = upsilon(net, dem, t, threads);
  double excess = 0.0;
  for (std::size_t e = 0; e < f.size(); ++e) {
    out.gap += net.edge(e).law.free_time * f[e];
    const double over = std::max(0.0, f[e] - net.edge(e).law.capacity);
    excess += over * over;
  }
  out.violation = std::sqrt(excess);
  return out;
}

struct MdRun {
  bool m_exceeded = false;
  double observed_m = 0.0;
  DualTimes t_avg;
  EdgeVector f_rec;
  double step_sum = 0.0;
  std::size_t steps = 0;
  std::vector<MdRecord> trace;
};

// One run of N + 1 mirror-descent steps from t^0 = free times with the
// constant step (r_bar / m) sqrt(2 / (N + 1)). Stops early, flagged, as soon
// as a subgradient norm exceeds m.
inline MdRun run_md(const Network& net, const DemandTable& dem, std::size_t n, double r_bar,
                    double m, MdVariant variant, Recovery recovery, std::mt19937_64& rng,
                    std::size_t trace_every = 0, unsigned threads = 1) {
  if (recovery == Recovery::flow_average && variant != MdVariant::deterministic) {
    throw std::invalid_argument("flow_average recovery needs the deterministic variant");
  }
  const std::size_t edges = net.edge_count();
  const DualTimes t0 = net.free_times();
  const double step = r_bar / m * std::sqrt(2.0 / (static_cast<double>(n) + 1.0));
  if (trace_every == 0) trace_every = std::max<std::size_t>(1, (n + 1) / 1000);
  DualTimes t = t0;
  EdgeVector t_sum(edges, 0.0), g_sum(edges, 0.0), f_sum(edges, 0.0);
  MdRun run;
  for (std::size_t k = 0; k <= n; ++k) {
    EdgeVector g;
    double ups = 0.0;
    if (variant == MdVariant::deterministic) {
      FullSubgradient full = subgrad_full(net, dem, t, threads);
      g = std::move(full.g);
      ups = full.upsilon;
      if (recovery == Recovery::flow_average) {
        for (std::size_t e = 0; e < edges; ++e) f_sum[e] += step * full.flows[e];
      }
    } else {
      SampledSubgradient s = variant == MdVariant::sample_od ? subgrad_sample_od(net, dem, t, rng)
                                                             : subgrad_sample_origin(net, dem, t, rng);
      g = std::move(s.g);
      ups = s.upsilon_estimate;
    }
    const double gnorm = detail::norm2(g);
    run.observed_m = std::max(run.observed_m, gnorm);
    if (gnorm > m) {
      run.m_exceeded = true;
      run.steps = k;
      return run;
    }
    if (trace_every > 0 && k % trace_every == 0) run.trace.push_back({k, ups, step, gnorm});
    run.step_sum += step;
    for (std::size_t e = 0; e < edges; ++e) {
      t_sum[e] += step * t[e];
      g_sum[e] += step * g[e];
    }
    t = md_step(net, t, g, step);
  }
  run.steps = n + 1;
  run.t_avg.resize(edges);
  run.f_rec.resize(edges);
  for (std::size_t e = 0; e < edges; ++e) {
    const double free_time = net.edge(e).law.free_time;
    // Averages of feasible points stay feasible; guard the last ulp.
    run.t_avg[e] = std::max(free_time, t_sum[e] / run.step_sum);
    if (recovery == Recovery::flow_average) {
      run.f_rec[e] = f_sum[e] / run.step_sum;
    } else {
      // Multiplier of t >= free time in the averaged model problem, whose
      // unconstrained minimizer is u = t^0 - sum_k step_k g_k.
      const double u = t0[e] - g_sum[e];
      const double s = std::max(0.0, free_time - u) / run.step_sum;
      run.f_rec[e] = net.edge(e).law.capacity - s;
    }
  }
  return run;
}

inline void validate(const MdConfig& cfg) {
  if (!(cfg.m > 0.0)) throw std::invalid_argument("md: M must be positive");
  if (!(cfg.r_bar >= 0.0)) throw std::invalid_argument("md: R must be nonnegative");
  if (!(cfg.tol > 0.0)) throw std::invalid_argument("md: tolerance must be positive");
  if (!(cfg.confidence > 0.0 && cfg.confidence < 1.0)) {
    throw std::invalid_argument("md: confidence must lie in (0, 1)");
  }
  if (cfg.recovery == Recovery::flow_average && cfg.variant != MdVariant::deterministic) {
    throw std::invalid_argument("flow_average recovery needs the deterministic variant");
  }
}

/// Iteration count at which the deterministic bound sqrt(2) M R / sqrt(N)
/// reaches tol.
inline std::size_t md_iterations_for(double m, double r_bar, double tol) {
  const double n = std::ceil(2.0 * m * m * r_bar * r_bar / (tol * tol));
  return n >= 1e18 ? static_cast<std::size_t>(1e18) : std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

// Adaptive restarts: M grows by sqrt(2) whenever a subgradient exceeds it;
// R grows by sqrt(2) whenever a completed run misses the tolerance. N follows
// from (M, R, tol), or doubles per R restart when fixed by the config. Both
// kinds of restart share max_restarts; the random stream carries on across
// restarts.
inline MdResult solve_stable_dynamics_md(const Network& net, const DemandTable& dem,
                                         const MdConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  double r_bar = cfg.r_bar;
  if (r_bar == 0.0) r_bar = detail::norm2(net.free_times());
  if (r_bar == 0.0) r_bar = 1.0;
  double m = cfg.m;
  const bool auto_n = cfg.iterations == 0;
  std::size_t n = auto_n ? md_iterations_for(m, r_bar, cfg.tol) : cfg.iterations;

  MdResult out;
  out.seed = cfg.seed;
  out.confidence = cfg.confidence;
  auto give_up = [&] {
    out.converged = false;
    out.r_bar = r_bar;
    out.m = m;
    out.iterations = n;
    return out;
  };
  for (;;) {
    if (n > cfg.max_iterations) return give_up();
    MdRun run = run_md(net, dem, n, r_bar, m, cfg.variant, cfg.recovery, rng, cfg.trace_every,
                       cfg.threads);
    out.total_steps += run.steps;
    if (run.m_exceeded) {
      if (out.restarts == cfg.max_restarts) return give_up();
      ++out.restarts;
      m *= std::numbers::sqrt2;
      if (auto_n) n = md_iterations_for(m, r_bar, cfg.tol);
      continue;
    }
    out.t_avg = std::move(run.t_avg);
    out.f_rec = std::move(run.f_rec);
    out.trace = std::move(run.trace);
    out.step_sum = run.step_sum;
    out.upsilon = upsilon(net, dem, out.t_avg, cfg.threads);
    out.primal = 0.0;
    for (std::size_t e = 0; e < out.f_rec.size(); ++e) {
      out.primal += net.edge(e).law.free_time * out.f_rec[e];
    }
    GapReport report = duality_gap(net, dem, out.t_avg, out.f_rec, cfg.threads);
    out.gap = report.gap;
    out.violation = report.violation;
    out.residual = conservation_residual(net, dem, out.f_rec);
    out.r_bar = r_bar;
    out.m = m;
    out.iterations = n;
    const double nd = static_cast<double>(n);
    out.theory_bound = 16.0 * std::numbers::sqrt2 * m * r_bar / std::sqrt(nd) *
                       std::log(4.0 * nd / cfg.confidence);
    out.converged =
        out.gap <= cfg.tol && out.violation <= cfg.tol && out.residual <= cfg.tol;
    if (out.converged || out.restarts == cfg.max_restarts) return out;
    ++out.restarts;
    r_bar *= std::numbers::sqrt2;
    n = auto_n ? md_iterations_for(m, r_bar, cfg.tol) : 2 * n;
  }
}

inline void write_md_trace_csv(std::ostream& os, const std::vector<MdRecord>& trace) {
  os << "k,upsilon_sample,step,grad_norm\n";
  for (const auto& r : trace) {
    os << r.k << ',' << format_real(r.upsilon_sample) << ',' << format_real(r.step) << ','
       << format_real(r.grad_norm) << '\n';
  }
}

}  // namespace trafficeq
