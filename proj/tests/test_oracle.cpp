#include <gtest/gtest.h>

#include "support/instances.hpp"

using namespace trafficeq;
using namespace trafficeq::oracle;

TEST(EnumeratePaths, Examples) {
  const Network single(2, {{0, 1, {1.0, 10.0, 0.15, 4.0}}});
  EXPECT_EQ(enumerate_paths(single, 0, 1), (std::vector<Path>{{0}}));
  EXPECT_TRUE(enumerate_paths(single, 1, 0).empty());

  const auto inst = support::load("braess");
  const auto paths = enumerate_paths(inst.net, 0, 3);
  // Lexicographic by edge index: zig-zag {0,2,4}, upper {0,3}, lower {1,4}.
  EXPECT_EQ(paths, (std::vector<Path>{{0, 2, 4}, {0, 3}, {1, 4}}));
}

TEST(EnumeratePaths, Guards) {
  std::mt19937_64 rng(61);
  const Network big = support::random_network(rng, 50, 60);
  EXPECT_THROW(enumerate_paths(big, 0, 1), GuardError);
  // Complete digraph on 14 nodes: far more than 1e5 partial paths.
  std::vector<Edge> edges;
  for (NodeId a = 0; a < 14; ++a) {
    for (NodeId b = 0; b < 14; ++b) {
      if (a != b) edges.push_back({a, b, {1.0, 1.0, 0.0, 1.0}});
    }
  }
  EXPECT_THROW(enumerate_paths(Network(14, edges), 0, 13), GuardError);
}

TEST(EnumeratePaths, PathsAreSimpleAndComplete) {
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = support::random_network(rng, 7, 8);
    const auto paths = enumerate_paths(net, 0, 6);
    std::set<Path> unique(paths.begin(), paths.end());
    EXPECT_EQ(unique.size(), paths.size());
    EXPECT_TRUE(std::is_sorted(paths.begin(), paths.end()));
    for (const auto& p : paths) {
      ASSERT_FALSE(p.empty());
      EXPECT_EQ(net.edge(p.front()).tail, 0u);
      EXPECT_EQ(net.edge(p.back()).head, 6u);
      std::set<NodeId> seen{0};
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i > 0) {
          EXPECT_EQ(net.edge(p[i]).tail, net.edge(p[i - 1]).head);
        }
        EXPECT_TRUE(seen.insert(net.edge(p[i]).head).second);
      }
    }
    // The shortest path is among them.
    const auto t = net.free_times();
    const auto tree = dijkstra(net, t, 0);
    EXPECT_TRUE(unique.count(tree_path(net, tree, 6)));
  }
}

TEST(ProjectSimplex, Basics) {
  const auto p = project_scaled_simplex({0.5, 0.5}, 1.0);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  const auto q = project_scaled_simplex({3.0, -1.0, 0.0}, 2.0);
  EXPECT_DOUBLE_EQ(q[0], 2.0);
  EXPECT_EQ(q[1], 0.0);
  std::mt19937_64 rng(63);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(5);
    for (auto& x : v) x = support::uniform(rng, -3.0, 3.0);
    const double total = support::uniform(rng, 0.1, 5.0);
    const auto w = project_scaled_simplex(v, total);
    double sum = 0.0;
    for (double x : w) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, total, 1e-12);
    // Optimality: <v - w, u - w> <= 0 for simplex vertices u.
    for (std::size_t j = 0; j < 5; ++j) {
      double inner = 0.0;
      for (std::size_t i2 = 0; i2 < 5; ++i2) inner += (v[i2] - w[i2]) * ((i2 == j ? total : 0.0) - w[i2]);
      EXPECT_LE(inner, 1e-9);
    }
  }
}

TEST(BeckmannOracle, SingleEdge) {
  const Network net(2, {{0, 1, {1.0, 10.0, 0.15, 4.0}}});
  const DemandTable dem(2, {{0, 1, 6.0}});
  const auto r = beckmann_oracle(net, dem, 1e-10);
  EXPECT_EQ(r.flows, EdgeVector{6.0});
  EXPECT_DOUBLE_EQ(r.psi, sigma(net.edge(0).law, 6.0));
}

TEST(BeckmannOracle, SymmetricSplit) {
  const Network net(4, {{0, 1, {1.0, 10.0, 0.15, 4.0}},
                        {0, 2, {1.0, 10.0, 0.15, 4.0}},
                        {1, 3, {1.0, 10.0, 0.15, 4.0}},
                        {2, 3, {1.0, 10.0, 0.15, 4.0}}});
  const auto r = beckmann_oracle(net, DemandTable(4, {{0, 3, 12.0}}), 1e-10);
  EXPECT_NEAR(r.flows[0], 6.0, 1e-6);
  EXPECT_NEAR(r.flows[1], 6.0, 1e-6);
}

TEST(BeckmannOracle, AsymmetricMatchesBisection) {
  const auto inst = support::load("two_route_asym");
  const auto& r1 = inst.net.edge(0).law;
  const auto& r2 = inst.net.edge(1).law;
  for (double d : {10.0, 20.0, 35.0}) {
    const auto r = beckmann_oracle(inst.net, DemandTable(3, {{0, 1, d}}), 1e-10);
    const double x = support::bisect_two_route(r1, r2, d);
    EXPECT_NEAR(r.flows[0], x, 1e-4) << d;
    EXPECT_NEAR(r.psi, sigma(r1, x) + sigma(r2, d - x), 1e-8 * r.psi) << d;
    EXPECT_LE(r.gap, 1e-10);
  }
}

TEST(BeckmannOracle, LowerBoundsRandomFeasibleFlows) {
  const auto inst = support::load("braess");
  const double tol = 1e-9;
  const auto r = beckmann_oracle(inst.net, inst.dem, tol);
  std::mt19937_64 rng(64);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> w(3);
    for (auto& x : w) x = support::uniform(rng, 0.0, 1.0);
    const double s = w[0] + w[1] + w[2];
    const auto set = enumerate_path_set(inst.net, inst.dem);
    const auto f = edge_flows(inst.net, set, {{6.0 * w[0] / s, 6.0 * w[1] / s, 6.0 * w[2] / s}});
    EXPECT_GE(beckmann_potential(inst.net, f), r.psi - tol);
  }
}

TEST(BeckmannOracle, GuardsAndErrors) {
  std::mt19937_64 rng(65);
  const Network big = support::random_network(rng, 50, 60);
  EXPECT_THROW(beckmann_oracle(big, DemandTable(50, {{0, 1, 1.0}}), 1e-6), GuardError);
  const Network net(2, {{0, 1, {1.0, 10.0, 0.15, 4.0}}});
  EXPECT_THROW(beckmann_oracle(net, DemandTable(2, {{1, 0, 1.0}}), 1e-6), UnreachableError);
  EXPECT_THROW(beckmann_oracle(net, DemandTable(2, {{0, 1, 1.0}}), 0.0), std::invalid_argument);
}

TEST(BeckmannOracle, ConvergenceErrorOnTinyBudget) {
  const auto inst = support::load("braess");
  EXPECT_THROW(beckmann_oracle(inst.net, inst.dem, 1e-12, 3), ConvergenceError);
}

TEST(SdOracle, SingleEdge) {
  const Network net(2, {{0, 1, {1.5, 10.0, 0.15, 4.0}}});
  const auto r = sd_oracle(net, DemandTable(2, {{0, 1, 4.0}}));
  EXPECT_TRUE(r.feasible);
  EXPECT_DOUBLE_EQ(r.value, 6.0);
}

TEST(SdOracle, TwoRouteLp) {
  // The feasible set is the segment x_fast in [0, 2] with x_slow = 5 - x_fast;
  // the cost 1 x + 2 (5 - x) is least at the endpoint x = 2.
  double by_segment = std::numeric_limits<double>::infinity();
  for (double x : {0.0, 2.0}) by_segment = std::min(by_segment, 1.0 * x + 2.0 * (5.0 - x));
  const auto inst = support::load("two_route_lp");
  const auto r = sd_oracle(inst.net, inst.dem);
  ASSERT_TRUE(r.feasible);
  EXPECT_DOUBLE_EQ(r.value, by_segment);
  EXPECT_DOUBLE_EQ(r.value, 8.0);
  EXPECT_NEAR(r.flows[0], 2.0, 1e-12);
  EXPECT_NEAR(r.flows[1], 3.0, 1e-12);
}

TEST(SdOracle, InfeasibleWhenCapacityTooSmall) {
  const Network net(3, {{0, 1, {1.0, 2.0, 0.15, 4.0}},
                        {0, 2, {1.0, 2.0, 0.15, 4.0}},
                        {2, 1, {1.0, 10.0, 0.15, 4.0}}});
  const auto r = sd_oracle(net, DemandTable(3, {{0, 1, 5.0}}));
  EXPECT_FALSE(r.feasible);
}

TEST(SdOracle, OrderInvariance) {
  const auto inst = support::load("braess");
  auto set = enumerate_path_set(inst.net, inst.dem);
  const double a = sd_oracle(inst.net, inst.dem, set).value;
  std::reverse(set.paths[0].begin(), set.paths[0].end());
  const double b = sd_oracle(inst.net, inst.dem, set).value;
  std::swap(set.paths[0][0], set.paths[0][1]);
  const double c = sd_oracle(inst.net, inst.dem, set).value;
  EXPECT_DOUBLE_EQ(a, b);
  EXPECT_DOUBLE_EQ(a, c);
}

TEST(SdOracle, Guard) {
  std::vector<Edge> edges;
  for (NodeId a = 0; a < 6; ++a) {
    for (NodeId b = 0; b < 6; ++b) {
      if (a != b) edges.push_back({a, b, {1.0, 1.0, 0.0, 1.0}});
    }
  }
  EXPECT_THROW(sd_oracle(Network(6, edges), DemandTable(6, {{0, 5, 1.0}})), GuardError);
}

TEST(Theta, AonPathFlowsMatchTreeAggregation) {
  std::mt19937_64 rng(66);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = support::random_instance(rng, 7, 6, 4);
    const auto t = inst.net.free_times();
    const auto aon = all_or_nothing(inst.net, t, inst.dem);
    const auto set = enumerate_path_set(inst.net, inst.dem);
    std::vector<std::vector<double>> x(set.paths.size());
    const auto& groups = inst.dem.origin_groups();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t i : groups[g].entries) {
        const auto path = tree_path(inst.net, aon.trees[g], inst.dem.entries()[i].destination);
        x[i].assign(set.paths[i].size(), 0.0);
        const auto it = std::find(set.paths[i].begin(), set.paths[i].end(), path);
        ASSERT_NE(it, set.paths[i].end());
        x[i][static_cast<std::size_t>(it - set.paths[i].begin())] = inst.dem.entries()[i].rate;
      }
    }
    EXPECT_LE(support::max_abs_diff(edge_flows(inst.net, set, x), aon.flows), 1e-12);
  }
}
