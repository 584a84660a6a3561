#include "srgi/graphs.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "srgi/binio.hpp"
#include "srgi/error.hpp"

namespace srgi::graphs {

namespace {

constexpr std::uint16_t kGraphVersion = 1;

bool canonical_less(const Neighbor& a, const Neighbor& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.item < b.item;
}

}  // namespace

SessionGraph build_session_graph(std::span<const ItemId> prefix) {
    SessionGraph g;
    std::unordered_map<ItemId, std::size_t> pos;
    g.alias.reserve(prefix.size());
    for (ItemId it : prefix) {
        auto [p, fresh] = pos.try_emplace(it, g.nodes.size());
        if (fresh) g.nodes.push_back(it);
        g.alias.push_back(p->second);
    }
    const std::size_t n = g.nodes.size();
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t i = 0; i + 1 < g.alias.size(); ++i) {
        const std::size_t u = g.alias[i], w = g.alias[i + 1];
        if (u == w) continue;
        if (seen.emplace(u, w).second) g.edges.emplace_back(u, w);
    }
    g.in.resize(n);
    g.out.resize(n);
    g.inout.resize(n);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t w = 0; w < n; ++w) {
            if (u == w) continue;
            const bool fwd = seen.contains({u, w});
            const bool bwd = seen.contains({w, u});
            if (fwd && bwd) g.inout[u].push_back(w);
            else if (bwd) g.in[u].push_back(w);
            else if (fwd) g.out[u].push_back(w);
        }
    }
    return g;
}

std::size_t GlobalGraph::num_edges() const {
    std::size_t deg = 0;
    for (const auto& a : adj_) deg += a.size();
    return deg / 2;
}

std::uint64_t GlobalGraph::total_weight() const {
    std::uint64_t w = 0;
    for (const auto& a : adj_)
        for (const auto& nb : a) w += nb.weight;
    return w / 2;
}

std::uint32_t GlobalGraph::weight(ItemId u, ItemId v) const {
    for (const auto& nb : adj_.at(u))
        if (nb.item == v) return nb.weight;
    return 0;
}

void GlobalGraph::set_adjacency(std::vector<std::vector<Neighbor>> adj) {
    for (auto& a : adj) std::sort(a.begin(), a.end(), canonical_less);
    adj_ = std::move(adj);
}

GlobalGraph build_global_graph(const std::vector<std::vector<ItemId>>& sessions, std::size_t num_items,
                               std::size_t epsilon) {
    if (epsilon < 1) throw DataError("epsilon must be >= 1");
    std::unordered_map<std::uint64_t, std::uint32_t> counts;
    for (const auto& s : sessions) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= num_items) throw DataError("session item index out of vocabulary range");
            for (std::size_t j = i + 1; j < s.size() && j <= i + epsilon; ++j) {
                if (s[i] == s[j]) continue;
                const std::uint64_t a = std::min(s[i], s[j]), b = std::max(s[i], s[j]);
                ++counts[(a << 32) | b];
            }
        }
    }
    std::vector<std::vector<Neighbor>> adj(num_items);
    for (const auto& [key, w] : counts) {
        const ItemId a = key >> 32, b = key & 0xffffffffULL;
        adj[a].push_back({b, w});
        adj[b].push_back({a, w});
    }
    GlobalGraph g(num_items);
    g.set_adjacency(std::move(adj));
    return g;
}

GlobalGraph prune_global_graph(const GlobalGraph& g, std::size_t max_neighbors) {
    if (max_neighbors < 1) throw DataError("max_neighbors must be >= 1");
    const std::size_t n = g.num_items();
    // Adjacency lists are already in ranking order; keep[v] is the retained prefix.
    auto retained = [&](ItemId v, ItemId u) {
        const auto nb = g.neighbors(v);
        const std::size_t k = std::min(max_neighbors, nb.size());
        for (std::size_t i = 0; i < k; ++i)
            if (nb[i].item == u) return true;
        return false;
    };
    std::vector<std::vector<Neighbor>> adj(n);
    for (ItemId v = 0; v < n; ++v) {
        const auto nb = g.neighbors(v);
        const std::size_t k = std::min(max_neighbors, nb.size());
        for (std::size_t i = 0; i < k; ++i)
            if (retained(nb[i].item, v)) adj[v].push_back(nb[i]);
    }
    GlobalGraph out(n);
    out.set_adjacency(std::move(adj));
    return out;
}

std::vector<Neighbor> neighbors_of(const GlobalGraph& g, ItemId v) {
    if (v >= g.num_items())
        throw std::out_of_range("item index " + std::to_string(v) + " out of range (|V|=" + std::to_string(g.num_items()) + ")");
    const auto nb = g.neighbors(v);
    return {nb.begin(), nb.end()};
}

void write_global_graph(std::ostream& out, const GlobalGraph& g) {
    binio::put_magic(out, "SRGG");
    binio::put<std::uint16_t>(out, kGraphVersion);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.num_items()));
    for (ItemId v = 0; v < g.num_items(); ++v) {
        const auto nb = g.neighbors(v);
        if (nb.size() > std::numeric_limits<std::uint16_t>::max())
            throw DataError("node degree exceeds the u16 limit of the graph format; prune first");
        binio::put<std::uint16_t>(out, static_cast<std::uint16_t>(nb.size()));
        for (const auto& e : nb) {
            binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.item));
            binio::put<std::uint32_t>(out, e.weight);
        }
    }
}

GlobalGraph read_global_graph(std::istream& in) {
    binio::expect_magic(in, "SRGG");
    const auto version = binio::get<std::uint16_t>(in, "version");
    if (version != kGraphVersion) throw DataError("unsupported graph format version " + std::to_string(version));
    const auto n = binio::get<std::uint32_t>(in, "node count");
    std::vector<std::vector<Neighbor>> adj(n);
    for (std::uint32_t v = 0; v < n; ++v) {
        const auto deg = binio::get<std::uint16_t>(in, "degree");
        adj[v].reserve(deg);
        for (std::uint16_t k = 0; k < deg; ++k) {
            const auto u = binio::get<std::uint32_t>(in, "neighbor");
            const auto w = binio::get<std::uint32_t>(in, "weight");
            if (u >= n) throw DataError("neighbor index out of range in graph file");
            if (u == v || w == 0) throw DataError("graph file has a self-loop or a zero weight at node " + std::to_string(v));
            adj[v].push_back({u, w});
        }
    }
    GlobalGraph g(n);
    g.set_adjacency(std::move(adj));
    return g;
}

void save_global_graph(const std::string& path, const GlobalGraph& g) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write graph file '" + path + "'");
    write_global_graph(out, g);
}

GlobalGraph load_global_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open graph file '" + path + "'");
    return read_global_graph(in);
}

}  // namespace srgi::graphs
