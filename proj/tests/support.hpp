#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "srgi/corpus.hpp"
#include "srgi/graphs.hpp"
#include "srgi/ndiff.hpp"

namespace srgi::testing {

using corpus::ItemId;

inline nd::Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    nd::Matrix m(r, c);
    for (double& x : m.data) x = u(rng);
    return m;
}

inline double max_abs_diff(const nd::Matrix& a, const nd::Matrix& b) {
    if (!a.same_shape(b)) return INFINITY;
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
    return d;
}

inline std::vector<std::vector<ItemId>> random_sessions(std::mt19937_64& rng, std::size_t max_sessions,
                                                        std::size_t num_items, std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> ns(1, max_sessions), len(1, max_len), item(0, num_items - 1);
    std::vector<std::vector<ItemId>> out(ns(rng));
    for (auto& s : out) {
        s.resize(len(rng));
        for (auto& v : s) v = item(rng);
    }
    return out;
}

// Brute-force window-pair enumeration: every ordered position pair (i, j) with
// 0 < j - i <= eps and distinct items adds one to the undirected pair.
inline std::map<std::pair<ItemId, ItemId>, std::uint32_t> window_pairs(const std::vector<std::vector<ItemId>>& sessions,
                                                                       std::size_t eps) {
    std::map<std::pair<ItemId, ItemId>, std::uint32_t> w;
    for (const auto& s : sessions)
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = i + 1; j < s.size(); ++j)
                if (j - i <= eps && s[i] != s[j]) ++w[std::minmax(s[i], s[j])];
    return w;
}

// Direct adjacency classification of a prefix's distinct items.
struct NeighborSets {
    std::vector<ItemId> nodes;
    std::vector<std::set<ItemId>> in, out, inout;
};

inline NeighborSets classify_neighbors(const std::vector<ItemId>& prefix) {
    NeighborSets ns;
    for (ItemId v : prefix)
        if (std::find(ns.nodes.begin(), ns.nodes.end(), v) == ns.nodes.end()) ns.nodes.push_back(v);
    std::set<std::pair<ItemId, ItemId>> trans;
    for (std::size_t i = 0; i + 1 < prefix.size(); ++i)
        if (prefix[i] != prefix[i + 1]) trans.insert({prefix[i], prefix[i + 1]});
    ns.in.resize(ns.nodes.size());
    ns.out.resize(ns.nodes.size());
    ns.inout.resize(ns.nodes.size());
    for (std::size_t a = 0; a < ns.nodes.size(); ++a) {
        for (ItemId w : ns.nodes) {
            const ItemId u = ns.nodes[a];
            const bool to = trans.contains({u, w}), from = trans.contains({w, u});
            if (to && from) ns.inout[a].insert(w);
            else if (to) ns.out[a].insert(w);
            else if (from) ns.in[a].insert(w);
        }
    }
    return ns;
}

// Rank by explicit sort of (score desc, index asc).
inline std::size_t sorted_rank(const std::vector<double>& scores, ItemId target) {
    std::vector<ItemId> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b) { return scores[a] > scores[b]; });
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

// Toy corpus in which the next item is (current + 1) mod m.
inline std::vector<corpus::LabeledInstance> cycle_instances(std::size_t m, std::size_t sessions, std::size_t len,
                                                            std::mt19937_64& rng, corpus::Split split) {
    std::uniform_int_distribution<std::size_t> start(0, m - 1);
    std::vector<corpus::LabeledInstance> out;
    for (std::size_t s = 0; s < sessions; ++s) {
        const std::size_t a = start(rng);
        std::vector<ItemId> seq;
        for (std::size_t i = 0; i < len; ++i) seq.push_back((a + i) % m);
        for (std::size_t i = 1; i < len; ++i)
            out.push_back({{seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(i)}, seq[i], split});
    }
    return out;
}

}  // namespace srgi::testing
