#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "format.hpp"
#include "network.hpp"
#include "sd_mirror.hpp"
#include "spath.hpp"

namespace trafficeq {

// Source-indexed node potentials T(s, k): row s belongs to sources()[s].
// Anchoring fixes T(s, sources()[s]) = 0.
class PotentialMatrix {
 public:
  PotentialMatrix() = default;
  PotentialMatrix(std::vector<NodeId> sources, std::size_t node_count)
      : sources_(std::move(sources)), n_(node_count), values_(sources_.size() * n_, 0.0) {
    for (NodeId s : sources_) {
      if (s >= n_) throw std::out_of_range("potential matrix: source out of range");
    }
  }

  std::size_t source_count() const noexcept { return sources_.size(); }
  std::size_t node_count() const noexcept { return n_; }
  const std::vector<NodeId>& sources() const noexcept { return sources_; }

  double operator()(std::size_t s, NodeId k) const { return values_[s * n_ + k]; }
  double& operator()(std::size_t s, NodeId k) { return values_[s * n_ + k]; }

  void anchor() {
    for (std::size_t s = 0; s < sources_.size(); ++s) (*this)(s, sources_[s]) = 0.0;
  }

  bool anchored() const {
    for (std::size_t s = 0; s < sources_.size(); ++s) {
      if ((*this)(s, sources_[s]) != 0.0) return false;
    }
    return true;
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::vector<NodeId> sources_;
  std::size_t n_ = 0;
  std::vector<double> values_;
};

// Dense demand rates d(s, k) aligned with a potential matrix's rows.
class SourceDemands {
 public:
  SourceDemands(const DemandTable& dem, const std::vector<NodeId>& sources, std::size_t node_count)
      : n_(node_count), rates_(sources.size() * node_count, 0.0) {
    for (const auto& d : dem.entries()) {
      auto it = std::lower_bound(sources.begin(), sources.end(), d.origin);
      if (it == sources.end() || *it != d.origin) {
        throw std::invalid_argument("demand origin " + std::to_string(d.origin) +
                                    " is not a source of the potential matrix");
      }
      rates_[static_cast<std::size_t>(it - sources.begin()) * n_ + d.destination] += d.rate;
    }
  }
  double operator()(std::size_t s, NodeId k) const { return rates_[s * n_ + k]; }

 private:
  std::size_t n_;
  std::vector<double> rates_;
};

inline std::vector<NodeId> potential_sources(const Network& net, const DemandTable& dem) {
  return net.origins().empty() ? dem.origins() : net.origins();
}

/// Per-edge smoothing temperature eta_e = eps / (4 n capacity_e ln(S + 1)).
inline std::vector<double> smoothing_eta(const Network& net, std::size_t source_count,
                                         double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("smoothing_eta: epsilon must be positive");
  if (source_count == 0) throw std::invalid_argument("smoothing_eta: no sources");
  const double denom = 4.0 * static_cast<double>(net.node_count()) *
                       std::log(static_cast<double>(source_count) + 1.0);
  std::vector<double> eta(net.edge_count());
  for (std::size_t e = 0; e < eta.size(); ++e) {
    eta[e] = epsilon / (denom * net.edge(e).law.capacity);
  }
  return eta;
}

namespace detail {

// Shifted softmax over the S edge arguments plus the constant slot exp(0).
// weights[s] = exp(x_s / eta - shift), rest = exp(-shift).
struct EdgeSoftmax {
  std::vector<double> weights;
  double rest = 1.0;
  double shift = 0.0;
  double sum = 0.0;  // sum of weights, without rest
};

template <class Get>
EdgeSoftmax edge_softmax(const Network& net, std::size_t sources, EdgeIndex e, double eta,
                         Get&& get) {
  const Edge& edge = net.edge(e);
  EdgeSoftmax sm;
  sm.weights.resize(sources);
  double shift = 0.0;
  for (std::size_t s = 0; s < sources; ++s) {
    const double z = (get(s, edge.head) - get(s, edge.tail) - edge.law.free_time) / eta;
    sm.weights[s] = z;
    shift = std::max(shift, z);
  }
  sm.shift = shift;
  for (auto& w : sm.weights) {
    w = std::exp(w - shift);
    sm.sum += w;
  }
  sm.rest = std::exp(-shift);
  return sm;
}

// capacity * eta * ln((sum_s exp(x_s / eta) + 1) / (S + 1))
template <class Get>
double edge_smoothed_term(const Network& net, std::size_t sources, EdgeIndex e, double eta,
                          Get&& get) {
  const EdgeSoftmax sm = edge_softmax(net, sources, e, eta, get);
  return net.edge(e).law.capacity * eta *
         (sm.shift + std::log(sm.sum + sm.rest) - std::log(static_cast<double>(sources) + 1.0));
}

template <class Get>
void block_gradient(const Network& net, const SourceDemands& demand,
                    const std::vector<NodeId>& sources, std::span<const double> eta, NodeId k,
                    Get&& get, std::span<double> grad) {
  const std::size_t count = sources.size();
  for (std::size_t s = 0; s < count; ++s) grad[s] = -demand(s, k);
  for (EdgeIndex e : net.in_edges(k)) {
    const EdgeSoftmax sm = edge_softmax(net, count, e, eta[e], get);
    const double denom = sm.sum + sm.rest;
    for (std::size_t s = 0; s < count; ++s) {
      grad[s] += net.edge(e).law.capacity * sm.weights[s] / denom;
    }
  }
  for (EdgeIndex e : net.out_edges(k)) {
    const EdgeSoftmax sm = edge_softmax(net, count, e, eta[e], get);
    const double denom = sm.sum + sm.rest;
    for (std::size_t s = 0; s < count; ++s) {
      grad[s] -= net.edge(e).law.capacity * sm.weights[s] / denom;
    }
  }
  for (std::size_t s = 0; s < count; ++s) {
    if (sources[s] == k) grad[s] = 0.0;
  }
}

inline double demand_term(const SourceDemands& demand, const PotentialMatrix& T) {
  double total = 0.0;
  for (std::size_t s = 0; s < T.source_count(); ++s) {
    const NodeId src = T.sources()[s];
    for (NodeId k = 0; k < T.node_count(); ++k) {
      const double d = demand(s, k);
      if (d != 0.0) total -= d * (T(s, k) - T(s, src));
    }
  }
  return total;
}

// Terms of the smoothed objective that involve block k.
inline double local_smoothed(const Network& net, const SourceDemands& demand,
                             const PotentialMatrix& T, std::span<const double> eta, NodeId k) {
  auto get = [&](std::size_t s, NodeId v) { return T(s, v); };
  double total = 0.0;
  for (std::size_t s = 0; s < T.source_count(); ++s) total -= demand(s, k) * T(s, k);
  for (EdgeIndex e : net.in_edges(k)) total += edge_smoothed_term(net, T.source_count(), e, eta[e], get);
  for (EdgeIndex e : net.out_edges(k)) total += edge_smoothed_term(net, T.source_count(), e, eta[e], get);
  return total;
}

}  // namespace detail

/// Nonsmooth potential-form objective:
/// -sum d_sk (T_sk - T_ss) + sum_e capacity_e max(max_s(T_sj - T_si - t_e), 0).
inline double dn_objective(const Network& net, const DemandTable& dem, const PotentialMatrix& T) {
  const SourceDemands demand(dem, T.sources(), net.node_count());
  double total = detail::demand_term(demand, T);
  for (std::size_t e = 0; e < net.edge_count(); ++e) {
    const Edge& edge = net.edge(e);
    double worst = 0.0;
    for (std::size_t s = 0; s < T.source_count(); ++s) {
      worst = std::max(worst, T(s, edge.head) - T(s, edge.tail) - edge.law.free_time);
    }
    total += edge.law.capacity * worst;
  }
  return total;
}

inline double smoothed_objective(const Network& net, const DemandTable& dem,
                                 const PotentialMatrix& T, std::span<const double> eta) {
  const SourceDemands demand(dem, T.sources(), net.node_count());
  auto get = [&](std::size_t s, NodeId v) { return T(s, v); };
  double total = detail::demand_term(demand, T);
  for (std::size_t e = 0; e < net.edge_count(); ++e) {
    total += detail::edge_smoothed_term(net, T.source_count(), e, eta[e], get);
  }
  return total;
}

/// Uniform gap between the smoothed and nonsmooth objectives:
/// sum_e capacity_e * eta_e * ln(S + 1).
inline double smoothing_bound(const Network& net, std::size_t source_count,
                              std::span<const double> eta) {
  double total = 0.0;
  for (std::size_t e = 0; e < net.edge_count(); ++e) total += net.edge(e).law.capacity * eta[e];
  return total * std::log(static_cast<double>(source_count) + 1.0);
}

inline std::vector<double> smoothed_gradient_block(const Network& net, const DemandTable& dem,
                                                   const PotentialMatrix& T,
                                                   std::span<const double> eta, NodeId k) {
  const SourceDemands demand(dem, T.sources(), net.node_count());
  std::vector<double> grad(T.source_count());
  detail::block_gradient(net, demand, T.sources(), eta, k,
                         [&](std::size_t s, NodeId v) { return T(s, v); }, grad);
  return grad;
}

/// Sum over edges incident to k of capacity / eta.
inline double block_lipschitz(const Network& net, std::span<const double> eta, NodeId k) {
  double total = 0.0;
  for (EdgeIndex e : net.in_edges(k)) total += net.edge(e).law.capacity / eta[e];
  for (EdgeIndex e : net.out_edges(k)) total += net.edge(e).law.capacity / eta[e];
  return total;
}

/// t_ij = max(max_s (T_sj - T_si), free time).
inline DualTimes recover_times(const Network& net, const PotentialMatrix& T) {
  DualTimes t(net.edge_count());
  for (std::size_t e = 0; e < t.size(); ++e) {
    const Edge& edge = net.edge(e);
    double best = edge.law.free_time;
    for (std::size_t s = 0; s < T.source_count(); ++s) {
      best = std::max(best, T(s, edge.head) - T(s, edge.tail));
    }
    t[e] = best;
  }
  return t;
}

/// f_ij = capacity * sum_s exp(x_s / eta) / (sum_s exp(x_s / eta) + 1).
inline EdgeVector recover_flows(const Network& net, const PotentialMatrix& T,
                                std::span<const double> eta) {
  auto get = [&](std::size_t s, NodeId v) { return T(s, v); };
  EdgeVector f(net.edge_count());
  for (std::size_t e = 0; e < f.size(); ++e) {
    const auto sm = detail::edge_softmax(net, T.source_count(), e, eta[e], get);
    f[e] = net.edge(e).law.capacity * sm.sum / (sm.sum + sm.rest);
  }
  return f;
}

/// One plain block step T_(k) -= grad_k / L_k. Returns the change in the
/// smoothed objective.
inline double bcd_block_step(const Network& net, const DemandTable& dem, PotentialMatrix& T,
                             std::span<const double> eta, NodeId k) {
  const SourceDemands demand(dem, T.sources(), net.node_count());
  const double lip = block_lipschitz(net, eta, k);
  if (lip == 0.0) return 0.0;
  std::vector<double> grad(T.source_count());
  detail::block_gradient(net, demand, T.sources(), eta, k,
                         [&](std::size_t s, NodeId v) { return T(s, v); }, grad);
  const double before = detail::local_smoothed(net, demand, T, eta, k);
  for (std::size_t s = 0; s < grad.size(); ++s) T(s, k) -= grad[s] / lip;
  return detail::local_smoothed(net, demand, T, eta, k) - before;
}

struct SmoothConfig {
  double epsilon = 1e-2;
  std::size_t max_epochs = 1000000;
  bool accelerated = false;
  std::uint64_t seed = 1;
  double residual_tol = 0.0;  // 0 selects epsilon / 10
  std::size_t trace_every = 1000;  // 0 disables the trace
  unsigned threads = 1;
};

struct SmoothRecord {
  std::size_t epoch = 0;
  double smoothed = 0.0;
  double nonsmooth = 0.0;
  double gap = 0.0;
};

struct SmoothResult {
  PotentialMatrix T;
  DualTimes t;
  EdgeVector f;
  std::vector<double> eta;
  double smoothed = 0.0;
  double nonsmooth = 0.0;
  double primal = 0.0;
  double gap = 0.0;
  double violation = 0.0;
  double residual = 0.0;       // largest block gradient entry, i.e. per-source imbalance
  std::size_t epochs = 0;
  bool converged = false;
  std::vector<SmoothRecord> trace;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Randomized block-coordinate descent on the smoothed potential objective.
// Blocks are nodes, drawn uniformly; an epoch is n draws. Stops when the
// objective moves by at most eps / 8 over an epoch and the largest block
// gradient entry is within residual_tol.
inline SmoothResult solve_sd_bcd(const Network& net, const DemandTable& dem,
                                 const SmoothConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("bcd: epsilon must be positive");
  if (cfg.max_epochs == 0) throw std::invalid_argument("bcd: max_epochs must be positive");
  const std::vector<NodeId> sources = potential_sources(net, dem);
  const std::size_t n = net.node_count();
  const std::size_t count = sources.size();
  const SourceDemands demand(dem, sources, n);
  const double residual_tol = cfg.residual_tol > 0.0 ? cfg.residual_tol : cfg.epsilon / 10.0;

  SmoothResult out;
  if (count == 0) {
    // Nothing to route: free times and zero flow are optimal.
    out.T = PotentialMatrix(sources, n);
    out.t = net.free_times();
    out.f.assign(net.edge_count(), 0.0);
    out.converged = true;
    return out;
  }
  out.eta = smoothing_eta(net, count, cfg.epsilon);
  const std::span<const double> eta = out.eta;
  std::vector<double> lip(n);
  for (NodeId k = 0; k < n; ++k) lip[k] = block_lipschitz(net, eta, k);

  std::mt19937_64 rng(cfg.seed);
  auto draw_node = [&] {
    return std::min<NodeId>(n - 1, static_cast<NodeId>(detail::uniform01(rng) * static_cast<double>(n)));
  };

  PotentialMatrix T(sources, n);
  // Accelerated state: y = theta^2 u + z, iterate x = theta_prev^2 u + z.
  PotentialMatrix u(sources, n), z(sources, n);
  double theta = 1.0 / static_cast<double>(n);
  double theta_prev = theta;
  auto sync_x = [&] {
    if (!cfg.accelerated) return;
    for (std::size_t s = 0; s < count; ++s) {
      for (NodeId k = 0; k < n; ++k) T(s, k) = theta_prev * theta_prev * u(s, k) + z(s, k);
    }
  };

  auto max_block_gradient = [&] {
    double worst = 0.0;
    std::vector<double> grad(count);
    for (NodeId k = 0; k < n; ++k) {
      detail::block_gradient(net, demand, sources, eta, k,
                             [&](std::size_t s, NodeId v) { return T(s, v); }, grad);
      for (double g : grad) worst = std::max(worst, std::abs(g));
    }
    return worst;
  };

  auto record = [&](std::size_t epoch, double smoothed) {
    SmoothRecord r;
    r.epoch = epoch;
    r.smoothed = smoothed;
    r.nonsmooth = dn_objective(net, dem, T);
    const DualTimes t = recover_times(net, T);
    const EdgeVector f = recover_flows(net, T, eta);
    r.gap = duality_gap(net, dem, t, f, cfg.threads).gap;
    out.trace.push_back(r);
  };

  double objective = smoothed_objective(net, dem, T, eta);
  if (cfg.trace_every > 0) record(0, objective);
  std::vector<double> grad(count);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double epoch_start = objective;
    for (std::size_t step = 0; step < n; ++step) {
      const NodeId k = draw_node();
      if (lip[k] == 0.0) continue;
      if (!cfg.accelerated) {
        detail::block_gradient(net, demand, sources, eta, k,
                               [&](std::size_t s, NodeId v) { return T(s, v); }, grad);
        const double before = detail::local_smoothed(net, demand, T, eta, k);
        for (std::size_t s = 0; s < count; ++s) T(s, k) -= grad[s] / lip[k];
        objective += detail::local_smoothed(net, demand, T, eta, k) - before;
      } else {
        const double th2 = theta * theta;
        detail::block_gradient(net, demand, sources, eta, k,
                               [&](std::size_t s, NodeId v) { return th2 * u(s, v) + z(s, v); },
                               grad);
        const double nth = static_cast<double>(n) * theta;
        for (std::size_t s = 0; s < count; ++s) {
          const double delta = -grad[s] / (nth * lip[k]);
          z(s, k) += delta;
          u(s, k) -= (1.0 - nth) / th2 * delta;
        }
        theta_prev = theta;
        theta = 0.5 * (std::sqrt(th2 * th2 + 4.0 * th2) - th2);
      }
    }
    if (cfg.accelerated) {
      sync_x();
      objective = smoothed_objective(net, dem, T, eta);
    }
    if (!std::isfinite(objective)) {
      throw DivergenceError("bcd: objective became non-finite at epoch " + std::to_string(epoch));
    }
    out.epochs = epoch;
    const bool stalled = std::abs(objective - epoch_start) <= cfg.epsilon / 8.0;
    const bool last = epoch == cfg.max_epochs;
    bool done = false;
    if (stalled) {
      // Re-anchor the incremental value before trusting it.
      objective = smoothed_objective(net, dem, T, eta);
      done = max_block_gradient() <= residual_tol;
    }
    if (cfg.trace_every > 0 && (epoch % cfg.trace_every == 0 || done || last)) {
      record(epoch, objective);
    }
    if (done) {
      out.converged = true;
      break;
    }
  }

  out.smoothed = smoothed_objective(net, dem, T, eta);
  out.nonsmooth = dn_objective(net, dem, T);
  out.t = recover_times(net, T);
  out.f = recover_flows(net, T, eta);
  out.residual = max_block_gradient();
  const GapReport report = duality_gap(net, dem, out.t, out.f, cfg.threads);
  out.gap = report.gap;
  out.violation = report.violation;
  for (std::size_t e = 0; e < out.f.size(); ++e) out.primal += net.edge(e).law.free_time * out.f[e];
  out.T = std::move(T);
  return out;
}

inline void write_smooth_trace_csv(std::ostream& os, const std::vector<SmoothRecord>& trace) {
  os << "epoch,smoothed_obj,nonsmooth_obj,gap\n";
  for (const auto& r : trace) {
    os << r.epoch << ',' << format_real(r.smoothed) << ',' << format_real(r.nonsmooth) << ','
       << format_real(r.gap) << '\n';
  }
}

}  // namespace trafficeq
