#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "srgi/corpus.hpp"

namespace srgi::graphs {

using corpus::ItemId;

// Directed transition graph of one prefix. Neighbor sets hold node positions
// (indices into `nodes`) and are sorted ascending.
struct SessionGraph {
    std::vector<ItemId> nodes;         // distinct items, first-occurrence order
    std::vector<std::size_t> alias;    // prefix position -> node position
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // u -> w, first-occurrence order
    std::vector<std::vector<std::size_t>> in;
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::vector<std::size_t>> inout;

    std::size_t num_nodes() const { return nodes.size(); }
};

// A neighbor is "in-out" when transitions exist in both directions, otherwise
// "in" (w -> u) or "out" (u -> w). Self transitions are dropped.
SessionGraph build_session_graph(std::span<const ItemId> prefix);

struct Neighbor {
    ItemId item = 0;
    std::uint32_t weight = 0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Undirected co-occurrence graph over the whole vocabulary. Each adjacency
// list is kept sorted by weight descending, then item ascending.
class GlobalGraph {
public:
    GlobalGraph() = default;
    explicit GlobalGraph(std::size_t num_items) : adj_(num_items) {}

    std::size_t num_items() const { return adj_.size(); }
    std::size_t num_edges() const;
    std::uint64_t total_weight() const;
    std::span<const Neighbor> neighbors(ItemId v) const { return adj_[v]; }
    std::size_t degree(ItemId v) const { return adj_[v].size(); }
    std::uint32_t weight(ItemId u, ItemId v) const;

    // Replaces the adjacency of every node; sorts lists into canonical order.
    void set_adjacency(std::vector<std::vector<Neighbor>> adj);
    const std::vector<std::vector<Neighbor>>& adjacency() const { return adj_; }

    friend bool operator==(const GlobalGraph&, const GlobalGraph&) = default;

private:
    std::vector<std::vector<Neighbor>> adj_;
};

// Every pair of distinct items at distance 1..epsilon inside a training
// session adds 1 to the weight of their undirected edge.
GlobalGraph build_global_graph(const std::vector<std::vector<ItemId>>& sessions, std::size_t num_items,
                               std::size_t epsilon);

// Each node ranks its edges by (weight desc, neighbor asc) and retains the
// first `max_neighbors`; an edge survives when both endpoints retain it.
GlobalGraph prune_global_graph(const GlobalGraph& g, std::size_t max_neighbors);

// Canonical order: weight descending, then index ascending. Throws
// std::out_of_range for v >= num_items.
std::vector<Neighbor> neighbors_of(const GlobalGraph& g, ItemId v);

// "SRGG" | u16 version | u32 |V| | per node: u16 degree, (u32 neighbor, u32 weight)*.
void write_global_graph(std::ostream& out, const GlobalGraph& g);
GlobalGraph read_global_graph(std::istream& in);
void save_global_graph(const std::string& path, const GlobalGraph& g);
GlobalGraph load_global_graph(const std::string& path);

}  // namespace srgi::graphs
