// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <iostream>

#include "support/instances.hpp"

namespace fs = std::filesystem;
using namespace trafficeq;

namespace {

struct Verdict {
  bool ok = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;
  std::function<Verdict()> body;
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Verdict fw_correctness() {
  const auto inst = support::load("two_route_asym");
  const double psi_star = oracle::beckmann_oracle(inst.net, inst.dem, 1e-10).psi;
  FwConfig cfg;
  cfg.rel_tol = 0.01;
  cfg.timing = false;
  const auto r = solve_beckmann(inst.net, inst.dem, cfg);
  const double rel = std::abs(r.psi - psi_star) / psi_star;
  const double certified = r.psi - r.lower;
  return {r.converged && rel <= 1e-4 && certified <= 0.01 * r.psi0,
          "rel err " + fmt(rel) + ", certified gap " + fmt(certified) + " vs " + fmt(0.01 * r.psi0)};
}

Verdict fw_rate_bound() {
  const auto inst = support::load("braess");
  Verdict v;
  for (std::size_t n : {50u, 200u, 800u}) {
    FwConfig cfg;
    cfg.rel_tol = 1e-12;
    cfg.check_period = 1;
    cfg.max_iter = n;
    cfg.timing = false;
    const auto r = solve_beckmann(inst.net, inst.dem, cfg);
    const double lhs = (r.psi - r.lower) * static_cast<double>(n + 1);
    const double rhs = 2.0 * r.l2 * r.r2_measured + 1e-6;
    v.ok = v.ok && r.iterations == n && lhs <= rhs;
    v.detail += "N=" + std::to_string(n) + ": " + fmt(lhs) + " <= " + fmt(rhs) + "; ";
  }
  return v;
}

Verdict fw_lower_bound() {
  std::mt19937_64 rng(101);
  std::size_t records = 0, violations = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = support::random_instance(rng, 8, 8, 5);
    FwConfig cfg;
    cfg.rel_tol = 1e-6;
    cfg.check_period = 1;
    cfg.max_iter = 500;
    cfg.timing = false;
    const auto r = solve_beckmann(inst.net, inst.dem, cfg);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& rec : r.trace) {
      best = std::min(best, rec.psi);
      ++records;
      if (rec.lower > best) ++violations;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations in " + std::to_string(records) + " records"};
}

Verdict md_lp_agreement() {
  const auto inst = support::load("two_route_lp");
  const double lp = oracle::sd_oracle(inst.net, inst.dem).value;
  Verdict v{lp == 8.0, "oracle " + fmt(lp) + "; "};
  for (Recovery rec : {Recovery::multiplier, Recovery::flow_average}) {
    MdConfig cfg;
    cfg.tol = 1e-2;
    cfg.recovery = rec;
    const auto r = solve_stable_dynamics_md(inst.net, inst.dem, cfg);
    v.ok = v.ok && r.converged && std::abs(r.gap) <= 1e-2 && std::abs(r.primal - lp) <= 1e-2;
    v.detail += std::string(rec == Recovery::multiplier ? "multiplier" : "flow_average") +
                ": gap " + fmt(r.gap) + ", primal " + fmt(r.primal) + ", restarts " +
                std::to_string(r.restarts) + "; ";
  }
  return v;
}

Verdict unbiasedness() {
  std::mt19937_64 rng(105);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = support::random_instance(rng, 8, 8, 7);
    auto t = inst.net.free_times();
    for (auto& x : t) x += support::uniform(rng, 0.0, 3.0);
    const auto full = subgrad_full(inst.net, inst.dem, t);
    EdgeVector by_od(t.size(), 0.0), by_origin(t.size(), 0.0);
    const auto p_od = od_probabilities(inst.dem);
    for (std::size_t w = 0; w < p_od.size(); ++w) {
      const auto s = subgrad_for_od(inst.net, inst.dem, t, w);
      for (std::size_t e = 0; e < t.size(); ++e) by_od[e] += p_od[w] * s.g[e];
    }
    const auto p_or = origin_probabilities(inst.dem);
    for (std::size_t i = 0; i < p_or.size(); ++i) {
      const auto s = subgrad_for_origin(inst.net, inst.dem, t, i);
      for (std::size_t e = 0; e < t.size(); ++e) by_origin[e] += p_or[i] * s.g[e];
    }
    worst = std::max({worst, support::max_abs_diff(by_od, full.g), support::max_abs_diff(by_origin, full.g)});
  }
  return {worst <= 1e-12, "max deviation " + fmt(worst)};
}

Verdict prox_closed_form() {
  std::mt19937_64 rng(106);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double tbar = support::uniform(rng, 0.0, 5.0);
    const double tk = tbar + support::uniform(rng, 0.0, 4.0);
    const double g = support::uniform(rng, -10.0, 10.0);
    const double step = support::uniform(rng, 0.01, 0.5);
    const Network net(2, {{0, 1, {tbar, 1.0, 0.0, 1.0}}});
    const double closed = md_step(net, EdgeVector{tk}, EdgeVector{g}, step)[0];
    double best = tbar, best_val = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= 1000000; ++j) {
      const double x = tbar + 1e-5 * j;
      const double v = g * x + (x - tk) * (x - tk) / (2.0 * step);
      if (v < best_val) {
        best_val = v;
        best = x;
      }
    }
    worst = std::max(worst, std::abs(closed - best));
  }
  return {worst <= 1e-4, "max deviation " + fmt(worst)};
}

Verdict tree_aggregation() {
  std::mt19937_64 rng(107);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + support::pick(rng, 11);
    const Network net = support::random_network(rng, n, support::pick(rng, 2 * n));
    std::vector<double> t(net.edge_count());
    for (auto& x : t) x = static_cast<double>(support::pick(rng, 4));
    const NodeId s = support::pick(rng, n);
    const auto tree = dijkstra(net, t, s);
    std::vector<DestinationRate> dem;
    for (NodeId v = 0; v < n; ++v) {
      if (v != s && support::pick(rng, 3) != 0) {
        dem.push_back({v, static_cast<double>(1 + support::pick(rng, 1 << 20))});
      }
    }
    if (aggregate_tree_flows(net, tree, dem) != support::naive_tree_flows(net, tree, dem)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 100 trees"};
}

PotentialMatrix jittered_labels(std::mt19937_64& rng, const Network& net,
                                const std::vector<NodeId>& sources, double jitter) {
  PotentialMatrix T(sources, net.node_count());
  const auto t = net.free_times();
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto tree = dijkstra(net, t, sources[s]);
    for (NodeId k = 0; k < net.node_count(); ++k) {
      T(s, k) = (tree.reached(k) ? tree.dist[k] : 0.0) + support::uniform(rng, -jitter, jitter);
    }
  }
  T.anchor();
  return T;
}

Verdict smoothing_sandwich() {
  const auto inst = support::load("braess");
  const auto eta = smoothing_eta(inst.net, 1, 0.5);
  const double bound = smoothing_bound(inst.net, 1, eta);
  std::mt19937_64 rng(108);
  int failures = 0;
  for (int i = 0; i < 200; ++i) {
    PotentialMatrix T = jittered_labels(rng, inst.net, {0}, i % 2 ? 5.0 : 0.05);
    const double smooth = smoothed_objective(inst.net, inst.dem, T, eta);
    const double exact = dn_objective(inst.net, inst.dem, T);
    if (smooth > exact + 1e-9 || exact > smooth + bound + 1e-9) ++failures;
  }
  return {failures == 0, std::to_string(failures) + " of 200 outside, width " + fmt(bound)};
}

Verdict gradient_fd() {
  std::mt19937_64 rng(109);
  double worst = 0.0;
  for (int pair = 0; pair < 50; ++pair) {
    const auto inst = support::random_instance(rng, 8, 8, 6);
    const auto sources = potential_sources(inst.net, inst.dem);
    const auto eta = smoothing_eta(inst.net, sources.size(), 1.0);
    auto T = jittered_labels(rng, inst.net, sources, 0.02);
    const NodeId k = support::pick(rng, inst.net.node_count());
    const auto grad = smoothed_gradient_block(inst.net, inst.dem, T, eta, k);
    for (std::size_t s = 0; s < sources.size(); ++s) {
      if (sources[s] == k) continue;
      const double base = T(s, k);
      const double h = 1e-6 * std::max(1.0, std::abs(base));
      auto at = [&](double offset) {
        T(s, k) = base + offset;
        const double v = smoothed_objective(inst.net, inst.dem, T, eta);
        T(s, k) = base;
        return v;
      };
      // Five-point stencil: the softmax curvature scales like 1 / eta^2.
      const double fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      worst = std::max(worst, std::abs(fd - grad[s]) / std::max(1.0, std::abs(grad[s])));
    }
  }
  return {worst <= 1e-5, "max relative deviation " + fmt(worst)};
}

Verdict cross_solver() {
  const auto inst = support::load("two_route_lp");
  const double lp = oracle::sd_oracle(inst.net, inst.dem).value;
  const auto bcd = solve_sd_bcd(inst.net, inst.dem, SmoothConfig{});
  const auto md = solve_stable_dynamics_md(inst.net, inst.dem, MdConfig{});
  const auto t = recover_times(inst.net, bcd.T);
  bool above = true;
  for (std::size_t e = 0; e < t.size(); ++e) above = above && t[e] >= inst.net.edge(e).law.free_time;
  const bool ok = std::abs(bcd.primal - md.primal) <= 2e-2 && std::abs(bcd.primal - lp) <= 2e-2 &&
                  std::abs(md.primal - lp) <= 2e-2 && above;
  return {ok, "bcd " + fmt(bcd.primal) + ", md " + fmt(md.primal) + ", oracle " + fmt(lp) +
                  (above ? ", t >= free times" : ", t below free times")};
}

Verdict md_rate_trend() {
  const auto inst = support::load("two_route_lp");
  const double r_bar = norm2(inst.net.free_times());
  const double m = norm2(inst.net.capacities()) +
                   inst.dem.total() * std::sqrt(static_cast<double>(inst.net.edge_count()));
  std::map<std::size_t, double> gap;
  for (std::size_t n : {400u, 6400u}) {
    std::mt19937_64 rng(1);
    const auto run = run_md(inst.net, inst.dem, n, r_bar, m, MdVariant::deterministic,
                            Recovery::multiplier, rng);
    gap[n] = std::abs(duality_gap(inst.net, inst.dem, run.t_avg, run.f_rec).gap);
  }
  return {gap[6400] <= gap[400] / 2.0,
          "|gap| N=400 " + fmt(gap[400]) + ", N=6400 " + fmt(gap[6400])};
}

Verdict cli_reproducible() {
  const fs::path root = fs::temp_directory_path() / "trafficeq_acceptance";
  fs::remove_all(root);
  const std::string inputs = " -n " + support::data_path("two_route_lp.net") + " -d " +
                             support::data_path("two_route_lp.od");
  Verdict v;
  for (const char* method : {"bcd", "md"}) {
    for (const char* run : {"a", "b"}) {
      const std::string cmd = std::string(TRAFFICEQ_CLI) + " solve" + inputs +
                              " --model stable_dynamics --method " + method +
                              " --variant sample_od --tol 0.05 --seed 17 --no-timing -o " +
                              (root / method / run).string() + " > /dev/null";
      const int status = std::system(cmd.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        v.ok = false;
        v.detail += std::string(method) + " run failed; ";
      }
    }
    for (const char* file : {"trace.csv", "flows.tsv", "summary.txt"}) {
      const auto a = root / method / "a" / file;
      const auto b = root / method / "b" / file;
      if (!fs::exists(a) || support::read_file(a.string()) != support::read_file(b.string())) {
        v.ok = false;
        v.detail += std::string(method) + "/" + file + " differs; ";
      }
    }
  }
  fs::remove_all(root);
  if (v.ok) v.detail = "bcd and md outputs identical";
  return v;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "frank-wolfe matches beckmann oracle", 5.0, fw_correctness},
      {2, "frank-wolfe measured rate bound on braess", 5.0, fw_rate_bound},
      {3, "lower bound never exceeds best potential", 30.0, fw_lower_bound},
      {4, "mirror descent matches lp oracle", 30.0, md_lp_agreement},
      {5, "sampled subgradients are unbiased", 10.0, unbiasedness},
      {6, "prox step matches grid search", 5.0, prox_closed_form},
      {7, "tree aggregation matches naive replay", 5.0, tree_aggregation},
      {8, "smoothing sandwich on braess", 5.0, smoothing_sandwich},
      {9, "smoothed gradient finite differences", 5.0, gradient_fd},
      {10, "bcd, mirror descent and oracle agree", 60.0, cross_solver},
      {11, "mirror descent gap trend", 60.0, md_rate_trend},
      {12, "cli runs are byte-identical", 10.0, cli_reproducible},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = v.ok && in_time;
    if (!pass) ++failed;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << v.detail
              << " (" << fmt(secs) << " s, limit " << fmt(c.limit_seconds) << " s"
              << (in_time ? "" : ", too slow") << ")" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
