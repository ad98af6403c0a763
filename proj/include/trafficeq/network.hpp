#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bpr.hpp"
#include "format.hpp"

namespace trafficeq {

using NodeId = std::size_t;
using EdgeIndex = std::size_t;

struct Edge {
  NodeId tail = 0;
  NodeId head = 0;
  BprLaw law;
};

class NetworkError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Directed road network. Immutable once built; the adjacency index lists
// edges in increasing edge index.
class Network {
 public:
  Network() = default;

  Network(std::size_t node_count, std::vector<Edge> edges, std::vector<NodeId> origins = {},
          std::vector<NodeId> destinations = {})
      : node_count_(node_count),
        edges_(std::move(edges)),
        origins_(std::move(origins)),
        destinations_(std::move(destinations)) {
    if (node_count_ == 0) throw NetworkError("network needs at least one node");
    std::set<std::pair<NodeId, NodeId>> seen;
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const Edge& edge = edges_[e];
      const std::string where = "edge " + std::to_string(e) + ": ";
      if (edge.tail >= node_count_ || edge.head >= node_count_) {
        throw NetworkError(where + "unknown node id");
      }
      if (edge.tail == edge.head) throw NetworkError(where + "self loop");
      if (!seen.emplace(edge.tail, edge.head).second) {
        throw NetworkError(where + "duplicate edge " + std::to_string(edge.tail) + "->" +
                           std::to_string(edge.head));
      }
      try {
        validate_law(edge.law);
      } catch (const CostError& err) {
        throw NetworkError(where + err.what());
      }
    }
    normalize_terminals(origins_, "origin");
    normalize_terminals(destinations_, "destination");
    out_.assign(node_count_, {});
    in_.assign(node_count_, {});
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      out_[edges_[e].tail].push_back(e);
      in_[edges_[e].head].push_back(e);
    }
  }

  std::size_t node_count() const noexcept { return node_count_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Edge& edge(EdgeIndex e) const { return edges_.at(e); }
  const std::vector<EdgeIndex>& out_edges(NodeId v) const { return out_.at(v); }
  const std::vector<EdgeIndex>& in_edges(NodeId v) const { return in_.at(v); }

  // Sorted, possibly empty when the file left them to be inferred.
  const std::vector<NodeId>& origins() const noexcept { return origins_; }
  const std::vector<NodeId>& destinations() const noexcept { return destinations_; }

  std::vector<double> free_times() const {
    std::vector<double> t(edges_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) t[e] = edges_[e].law.free_time;
    return t;
  }

  std::vector<double> capacities() const {
    std::vector<double> c(edges_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) c[e] = edges_[e].law.capacity;
    return c;
  }

 private:
  void normalize_terminals(std::vector<NodeId>& ids, const char* what) const {
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw NetworkError(std::string("duplicate ") + what + " id");
    }
    if (!ids.empty() && ids.back() >= node_count_) {
      throw NetworkError(std::string(what) + " id out of range");
    }
  }

  std::size_t node_count_ = 0;
  std::vector<Edge> edges_;
  std::vector<NodeId> origins_;
  std::vector<NodeId> destinations_;
  std::vector<std::vector<EdgeIndex>> out_;
  std::vector<std::vector<EdgeIndex>> in_;
};

struct Demand {
  NodeId origin = 0;
  NodeId destination = 0;
  double rate = 0.0;
};

// Origin-destination demand rates. Entries keep file order; origins are
// listed by increasing id, and each origin's total is summed in file order.
class DemandTable {
 public:
  struct OriginGroup {
    NodeId origin = 0;
    double total = 0.0;
    std::vector<std::size_t> entries;  // indices into entries(), file order
  };

  DemandTable() = default;

  DemandTable(std::size_t node_count, std::vector<Demand> entries) : entries_(std::move(entries)) {
    std::set<std::pair<NodeId, NodeId>> seen;
    std::map<NodeId, std::size_t> group_of;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const Demand& d = entries_[i];
      const std::string where = "demand " + std::to_string(i) + ": ";
      if (d.origin >= node_count || d.destination >= node_count) {
        throw NetworkError(where + "node id out of range");
      }
      if (d.origin == d.destination) throw NetworkError(where + "origin equals destination");
      if (!(d.rate > 0.0) || !std::isfinite(d.rate)) {
        throw NetworkError(where + "nonpositive rate");
      }
      if (!seen.emplace(d.origin, d.destination).second) {
        throw NetworkError(where + "duplicate od pair " + std::to_string(d.origin) + "->" +
                           std::to_string(d.destination));
      }
      group_of.emplace(d.origin, 0);
    }
    for (auto& [origin, slot] : group_of) {
      slot = groups_.size();
      groups_.push_back(OriginGroup{origin, 0.0, {}});
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      OriginGroup& g = groups_[group_of[entries_[i].origin]];
      g.entries.push_back(i);
      g.total += entries_[i].rate;
    }
    for (const auto& g : groups_) total_ += g.total;
  }

  const std::vector<Demand>& entries() const noexcept { return entries_; }
  const std::vector<OriginGroup>& origin_groups() const noexcept { return groups_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  double total() const noexcept { return total_; }

  // Per-origin total d_i, zero for nodes that originate nothing.
  double origin_total(NodeId origin) const {
    for (const auto& g : groups_) {
      if (g.origin == origin) return g.total;
    }
    return 0.0;
  }

  std::vector<NodeId> origins() const {
    std::vector<NodeId> ids;
    for (const auto& g : groups_) ids.push_back(g.origin);
    return ids;
  }

  std::vector<NodeId> destinations() const {
    std::set<NodeId> ids;
    for (const auto& d : entries_) ids.insert(d.destination);
    return {ids.begin(), ids.end()};
  }

  // Rates indexed [origin][destination] as a sparse map, used by oracles
  // and block-coordinate code.
  double rate(NodeId origin, NodeId destination) const {
    for (const auto& d : entries_) {
      if (d.origin == origin && d.destination == destination) return d.rate;
    }
    return 0.0;
  }

 private:
  std::vector<Demand> entries_;
  std::vector<OriginGroup> groups_;
  double total_ = 0.0;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view strip_comment(std::string_view line) {
  auto hash = line.find('#');
  return hash == std::string_view::npos ? line : line.substr(0, hash);
}

inline double field_real(std::string_view s, std::size_t line) {
  auto v = parse_real(s);
  if (!v || !std::isfinite(*v)) throw ParseError(line, "bad number '" + std::string(s) + "'");
  return *v;
}

inline NodeId field_node(std::string_view s, std::size_t line, std::size_t node_count) {
  auto v = parse_index(s);
  if (!v) throw ParseError(line, "bad node id '" + std::string(s) + "'");
  if (*v >= node_count) throw ParseError(line, "unknown node id " + std::string(s));
  return *v;
}

}  // namespace detail

inline Network parse_network(std::istream& in) {
  std::size_t node_count = 0;
  std::vector<Edge> edges;
  std::vector<std::size_t> edge_lines;
  std::vector<NodeId> origins, destinations;
  std::set<std::pair<NodeId, NodeId>> seen;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto fields = detail::split_fields(detail::strip_comment(raw));
    if (fields.empty()) continue;
    const std::string_view key = fields[0];
    if (key == "nodes") {
      if (node_count != 0) throw ParseError(line, "repeated nodes header");
      if (fields.size() != 2) throw ParseError(line, "expected 'nodes <n>'");
      auto n = parse_index(fields[1]);
      if (!n || *n == 0) throw ParseError(line, "node count must be a positive integer");
      node_count = *n;
      continue;
    }
    if (node_count == 0) throw ParseError(line, "'nodes <n>' header must come first");
    if (key == "origins" || key == "destinations") {
      auto& ids = key == "origins" ? origins : destinations;
      for (std::size_t i = 1; i < fields.size(); ++i) {
        ids.push_back(detail::field_node(fields[i], line, node_count));
      }
    } else if (key == "edge") {
      if (fields.size() != 7) {
        throw ParseError(line, "expected 'edge <tail> <head> <t_bar> <f_cap> <bpr_gamma> <bpr_power>'");
      }
      Edge e;
      e.tail = detail::field_node(fields[1], line, node_count);
      e.head = detail::field_node(fields[2], line, node_count);
      e.law.free_time = detail::field_real(fields[3], line);
      e.law.capacity = detail::field_real(fields[4], line);
      e.law.gamma = detail::field_real(fields[5], line);
      e.law.power = detail::field_real(fields[6], line);
      if (e.tail == e.head) throw ParseError(line, "self loop");
      if (!(e.law.capacity > 0.0)) throw ParseError(line, "nonpositive capacity");
      try {
        validate_law(e.law);
      } catch (const CostError& err) {
        throw ParseError(line, err.what());
      }
      if (!seen.emplace(e.tail, e.head).second) {
        throw ParseError(line, "duplicate edge " + std::to_string(e.tail) + "->" +
                                   std::to_string(e.head) +
                                   " (split parallel arcs through a midpoint node)");
      }
      edges.push_back(e);
    } else {
      throw ParseError(line, "unknown record '" + std::string(key) + "'");
    }
  }
  if (node_count == 0) throw ParseError(line, "missing 'nodes <n>' header");
  try {
    return Network(node_count, std::move(edges), std::move(origins), std::move(destinations));
  } catch (const NetworkError& err) {
    throw ParseError(line, err.what());
  }
}

inline Network parse_network(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_network(in);
}

inline DemandTable parse_demands(std::istream& in, std::size_t node_count) {
  std::vector<Demand> entries;
  std::set<std::pair<NodeId, NodeId>> seen;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto fields = detail::split_fields(detail::strip_comment(raw));
    if (fields.empty()) continue;
    if (fields[0] != "od" || fields.size() != 4) {
      throw ParseError(line, "expected 'od <origin> <dest> <rate>'");
    }
    Demand d;
    d.origin = detail::field_node(fields[1], line, node_count);
    d.destination = detail::field_node(fields[2], line, node_count);
    d.rate = detail::field_real(fields[3], line);
    if (!(d.rate > 0.0)) throw ParseError(line, "nonpositive rate");
    if (d.origin == d.destination) throw ParseError(line, "origin equals destination");
    if (!seen.emplace(d.origin, d.destination).second) {
      throw ParseError(line, "duplicate od pair");
    }
    entries.push_back(d);
  }
  return DemandTable(node_count, std::move(entries));
}

inline DemandTable parse_demands(std::string_view text, std::size_t node_count) {
  std::istringstream in{std::string(text)};
  return parse_demands(in, node_count);
}

// Fills origins/destinations from the demand table when the network file
// left them out; otherwise checks that every demand uses declared terminals.
inline Network resolve_terminals(const Network& net, const DemandTable& dem) {
  auto origins = net.origins();
  auto destinations = net.destinations();
  if (origins.empty()) {
    origins = dem.origins();
  } else {
    for (const auto& d : dem.entries()) {
      if (!std::binary_search(origins.begin(), origins.end(), d.origin)) {
        throw NetworkError("demand origin " + std::to_string(d.origin) + " not a declared origin");
      }
    }
  }
  if (destinations.empty()) {
    destinations = dem.destinations();
  } else {
    for (const auto& d : dem.entries()) {
      if (!std::binary_search(destinations.begin(), destinations.end(), d.destination)) {
        throw NetworkError("demand destination " + std::to_string(d.destination) +
                           " not a declared destination");
      }
    }
  }
  return Network(net.node_count(), net.edges(), std::move(origins), std::move(destinations));
}

inline std::string serialize_network(const Network& net) {
  std::ostringstream out;
  out << "nodes " << net.node_count() << '\n';
  if (!net.origins().empty()) {
    out << "origins";
    for (auto v : net.origins()) out << ' ' << v;
    out << '\n';
  }
  if (!net.destinations().empty()) {
    out << "destinations";
    for (auto v : net.destinations()) out << ' ' << v;
    out << '\n';
  }
  for (const auto& e : net.edges()) {
    out << "edge " << e.tail << ' ' << e.head << ' ' << format_real(e.law.free_time) << ' '
        << format_real(e.law.capacity) << ' ' << format_real(e.law.gamma) << ' '
        << format_real(e.law.power) << '\n';
  }
  return out.str();
}

inline std::string serialize_demands(const DemandTable& dem) {
  std::ostringstream out;
  for (const auto& d : dem.entries()) {
    out << "od " << d.origin << ' ' << d.destination << ' ' << format_real(d.rate) << '\n';
  }
  return out.str();
}

enum class Severity { warning, fatal };

struct Diagnostic {
  Severity severity = Severity::warning;
  std::string message;
};

struct Diagnostics {
  bool ok = true;
  std::vector<Diagnostic> messages;
};

// Reachability is checked on the edge graph; free times are nonnegative, so
// every path has finite length and reachability is all that matters.
inline Diagnostics validate(const Network& net, const DemandTable& dem) {
  Diagnostics out;
  for (NodeId v = 0; v < net.node_count(); ++v) {
    if (net.out_edges(v).empty() && net.in_edges(v).empty()) {
      out.messages.push_back({Severity::warning, "node " + std::to_string(v) + " is isolated"});
    }
  }
  for (const auto& g : dem.origin_groups()) {
    std::vector<char> seen(net.node_count(), 0);
    std::vector<NodeId> stack{g.origin};
    seen[g.origin] = 1;
    while (!stack.empty()) {
      NodeId v = stack.back();
      stack.pop_back();
      for (EdgeIndex e : net.out_edges(v)) {
        NodeId h = net.edge(e).head;
        if (!seen[h]) {
          seen[h] = 1;
          stack.push_back(h);
        }
      }
    }
    for (std::size_t i : g.entries) {
      const Demand& d = dem.entries()[i];
      if (!seen[d.destination]) {
        out.ok = false;
        out.messages.push_back({Severity::fatal, "destination " + std::to_string(d.destination) +
                                                     " unreachable from origin " +
                                                     std::to_string(d.origin)});
      }
    }
  }
  return out;
}

}  // namespace trafficeq
