#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "network.hpp"

namespace trafficeq {

// Dense per-edge vector (flows, times, subgradients).
using EdgeVector = std::vector<double>;

inline constexpr EdgeIndex kNoEdge = std::numeric_limits<EdgeIndex>::max();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

class UnreachableError : public std::runtime_error {
 public:
  UnreachableError(NodeId origin, NodeId destination)
      : std::runtime_error("od pair " + std::to_string(origin) + "->" +
                           std::to_string(destination) + " has no path"),
        origin_(origin),
        destination_(destination) {}
  NodeId origin() const noexcept { return origin_; }
  NodeId destination() const noexcept { return destination_; }

 private:
  NodeId origin_, destination_;
};

struct ShortestPathTree {
  NodeId source = 0;
  std::vector<double> dist;          // kInf when unreachable
  std::vector<EdgeIndex> parent;     // kNoEdge for the source and unreached nodes
  std::vector<NodeId> order;         // reached nodes in settle order, source first

  bool reached(NodeId v) const { return dist[v] != kInf; }
};

inline void check_weights(const Network& net, std::span<const double> t) {
  if (t.size() != net.edge_count()) {
    throw std::invalid_argument("edge vector length " + std::to_string(t.size()) +
                                " != edge count " + std::to_string(net.edge_count()));
  }
  for (std::size_t e = 0; e < t.size(); ++e) {
    if (!(t[e] >= 0.0) || !std::isfinite(t[e])) {
      throw std::invalid_argument("edge " + std::to_string(e) + " has negative or non-finite weight");
    }
  }
}

// Binary heap with lazy deletion. Ties between equal labels go to the
// smaller edge index, among edges relaxed before the head is settled; the
// heap pops equal distances by node id.
inline ShortestPathTree dijkstra(const Network& net, std::span<const double> t, NodeId source) {
  check_weights(net, t);
  if (source >= net.node_count()) throw std::out_of_range("dijkstra: source out of range");
  const std::size_t n = net.node_count();
  ShortestPathTree tree;
  tree.source = source;
  tree.dist.assign(n, kInf);
  tree.parent.assign(n, kNoEdge);
  tree.order.reserve(n);
  std::vector<char> settled(n, 0);

  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  tree.dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (settled[u] || d > tree.dist[u]) continue;
    settled[u] = 1;
    tree.order.push_back(u);
    for (EdgeIndex e : net.out_edges(u)) {
      const NodeId v = net.edge(e).head;
      if (settled[v]) continue;
      const double nd = d + t[e];
      if (nd < tree.dist[v]) {
        tree.dist[v] = nd;
        tree.parent[v] = e;
        heap.emplace(nd, v);
      } else if (nd == tree.dist[v] && e < tree.parent[v]) {
        tree.parent[v] = e;
      }
    }
  }
  return tree;
}

/// Edge indices of the tree path from the source to `target`, source side first.
inline std::vector<EdgeIndex> tree_path(const Network& net, const ShortestPathTree& tree,
                                        NodeId target) {
  if (!tree.reached(target)) throw UnreachableError(tree.source, target);
  std::vector<EdgeIndex> path;
  for (NodeId v = target; v != tree.source;) {
    const EdgeIndex e = tree.parent[v];
    path.push_back(e);
    v = net.edge(e).tail;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

struct DestinationRate {
  NodeId destination = 0;
  double rate = 0.0;
};

// One backward pass over the settle order: the edge entering v carries the
// demand into v plus everything carried by the edges leaving v in the tree.
// Adds scale * (contribution) into `flows`.
inline void add_tree_flows(const Network& net, const ShortestPathTree& tree,
                           std::span<const DestinationRate> demands, double scale,
                           std::span<double> flows) {
  std::vector<double> carried(net.node_count(), 0.0);
  for (const auto& dr : demands) {
    if (!tree.reached(dr.destination)) throw UnreachableError(tree.source, dr.destination);
    carried[dr.destination] += dr.rate;
  }
  for (auto it = tree.order.rbegin(); it != tree.order.rend(); ++it) {
    const NodeId v = *it;
    if (v == tree.source) continue;
    const EdgeIndex e = tree.parent[v];
    if (carried[v] == 0.0) continue;
    flows[e] += scale * carried[v];
    carried[net.edge(e).tail] += carried[v];
  }
}

inline std::vector<DestinationRate> origin_demands(const DemandTable& dem, NodeId origin) {
  std::vector<DestinationRate> out;
  for (const auto& d : dem.entries()) {
    if (d.origin == origin) out.push_back({d.destination, d.rate});
  }
  return out;
}

inline EdgeVector aggregate_tree_flows(const Network& net, const ShortestPathTree& tree,
                                       std::span<const DestinationRate> demands) {
  EdgeVector flows(net.edge_count(), 0.0);
  add_tree_flows(net, tree, demands, 1.0, flows);
  return flows;
}

inline EdgeVector aggregate_tree_flows(const Network& net, const ShortestPathTree& tree,
                                       const DemandTable& dem) {
  auto demands = origin_demands(dem, tree.source);
  return aggregate_tree_flows(net, tree, demands);
}

struct AonResult {
  EdgeVector flows;
  double value = 0.0;  // sum over od pairs of rate * shortest distance
  std::vector<ShortestPathTree> trees;  // one per origin group, increasing origin id
};

// All-or-nothing loading. Per-origin trees may be built on up to `threads`
// workers; contributions are always summed in increasing origin id.
inline AonResult all_or_nothing(const Network& net, std::span<const double> t,
                                const DemandTable& dem, unsigned threads = 1) {
  check_weights(net, t);
  const auto& groups = dem.origin_groups();
  AonResult out;
  out.trees.resize(groups.size());
  std::vector<std::vector<DestinationRate>> demands(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i : groups[g].entries) {
      demands[g].push_back({dem.entries()[i].destination, dem.entries()[i].rate});
    }
  }
  std::vector<EdgeVector> partial(groups.size());
  std::vector<double> values(groups.size(), 0.0);
  auto work = [&](std::size_t g) {
    out.trees[g] = dijkstra(net, t, groups[g].origin);
    for (const auto& dr : demands[g]) {
      if (!out.trees[g].reached(dr.destination)) throw UnreachableError(groups[g].origin, dr.destination);
      values[g] += dr.rate * out.trees[g].dist[dr.destination];
    }
    partial[g] = aggregate_tree_flows(net, out.trees[g], demands[g]);
  };

  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), groups.size());
  if (workers <= 1) {
    for (std::size_t g = 0; g < groups.size(); ++g) work(g);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t g = w; g < groups.size(); g += workers) work(g);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  out.flows.assign(net.edge_count(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t e = 0; e < out.flows.size(); ++e) out.flows[e] += partial[g][e];
    out.value += values[g];
  }
  return out;
}

inline double potential_sum(const Network& net, std::span<const double> t, const DemandTable& dem,
                            unsigned threads = 1) {
  return all_or_nothing(net, t, dem, threads).value;
}

// Outflow minus inflow at every node.
inline std::vector<double> node_divergence(const Network& net, std::span<const double> f) {
  std::vector<double> div(net.node_count(), 0.0);
  for (std::size_t e = 0; e < net.edge_count(); ++e) {
    div[net.edge(e).tail] += f[e];
    div[net.edge(e).head] -= f[e];
  }
  return div;
}

// Largest absolute mismatch between the divergence of f and the divergence
// the demands require (supply at origins, sink at destinations).
inline double conservation_residual(const Network& net, const DemandTable& dem,
                                    std::span<const double> f) {
  auto div = node_divergence(net, f);
  for (const auto& d : dem.entries()) {
    div[d.origin] -= d.rate;
    div[d.destination] += d.rate;
  }
  double worst = 0.0;
  for (double r : div) worst = std::max(worst, std::abs(r));
  return worst;
}

}  // namespace trafficeq
