#include "srgi/contrast.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "srgi/bgnn.hpp"
#include "srgi/error.hpp"

namespace srgi::contrast {

namespace {

// k distinct indices from [0, n), uniformly, via a partial Fisher-Yates shuffle.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::size_t fraction(double ratio, std::size_t n) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
}

}  // namespace

AugmentSpec parse_augment(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw DataError("augmentation must look like mode:ratio, got '" + std::string(text) + "'");
    const auto mode = text.substr(0, colon);
    AugmentSpec spec;
    if (mode == "node_drop") spec.mode = AugmentMode::node_drop;
    else if (mode == "edge_drop") spec.mode = AugmentMode::edge_drop;
    else if (mode == "attr_mask") spec.mode = AugmentMode::attr_mask;
    else throw DataError("unknown augmentation mode '" + std::string(mode) + "'");
    const std::string num(text.substr(colon + 1));
    std::size_t used = 0;
    try {
        spec.ratio = std::stod(num, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != num.size() || num.empty()) throw DataError("bad augmentation ratio '" + num + "'");
    if (!(spec.ratio >= 0.0 && spec.ratio < 1.0)) throw DataError("augmentation ratio must lie in [0,1)");
    return spec;
}

std::string format_augment(const AugmentSpec& spec) {
    std::ostringstream os;
    switch (spec.mode) {
        case AugmentMode::node_drop: os << "node_drop"; break;
        case AugmentMode::edge_drop: os << "edge_drop"; break;
        case AugmentMode::attr_mask: os << "attr_mask"; break;
    }
    os << ':' << spec.ratio;
    return os.str();
}

std::size_t GraphView::num_alive() const { return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), true)); }

std::vector<double> GraphView::feature_mask(ItemId v) const {
    std::vector<double> m(dim, 1.0);
    for (std::size_t c : masked_dims[v]) m[c] = 0.0;
    return m;
}

GraphView augment_graph(const graphs::GlobalGraph& g, const AugmentSpec& spec, std::size_t dim, std::uint64_t seed) {
    if (!(spec.ratio >= 0.0 && spec.ratio < 1.0)) throw DataError("augmentation ratio must lie in [0,1)");
    const std::size_t n = g.num_items();
    GraphView view;
    view.alive.assign(n, true);
    view.dim = dim;
    view.masked_dims.assign(n, {});
    std::mt19937_64 rng(seed);

    std::vector<std::vector<graphs::Neighbor>> adj = g.adjacency();
    switch (spec.mode) {
        case AugmentMode::node_drop: {
            for (std::size_t v : sample_without_replacement(n, fraction(spec.ratio, n), rng)) view.alive[v] = false;
            for (ItemId v = 0; v < n; ++v) {
                if (!view.alive[v]) adj[v].clear();
                else std::erase_if(adj[v], [&](const graphs::Neighbor& nb) { return !view.alive[nb.item]; });
            }
            break;
        }
        case AugmentMode::edge_drop: {
            std::vector<std::pair<ItemId, ItemId>> edges;
            for (ItemId u = 0; u < n; ++u)
                for (const auto& nb : g.neighbors(u))
                    if (u < nb.item) edges.emplace_back(u, nb.item);
            std::sort(edges.begin(), edges.end());
            std::vector<bool> drop(edges.size(), false);
            for (std::size_t e : sample_without_replacement(edges.size(), fraction(spec.ratio, edges.size()), rng))
                drop[e] = true;
            for (auto& a : adj) a.clear();
            for (ItemId u = 0; u < n; ++u) {
                for (const auto& nb : g.neighbors(u)) {
                    const auto key = std::minmax(u, nb.item);
                    const auto it = std::lower_bound(edges.begin(), edges.end(), std::pair<ItemId, ItemId>(key.first, key.second));
                    if (!drop[static_cast<std::size_t>(it - edges.begin())]) adj[u].push_back(nb);
                }
            }
            break;
        }
        case AugmentMode::attr_mask: {
            const std::size_t k = fraction(spec.ratio, dim);
            for (std::size_t v : sample_without_replacement(n, fraction(spec.ratio, n), rng))
                view.masked_dims[v] = sample_without_replacement(dim, k, rng);
            break;
        }
    }
    view.graph = graphs::GlobalGraph(n);
    view.graph.set_adjacency(std::move(adj));
    return view;
}

ContrastParams init_contrast_params(std::mt19937_64& rng, std::size_t dim) {
    ContrastParams p{{"gcn1", nd::Matrix(dim, dim)},
                     {"gcn2", nd::Matrix(dim, dim)},
                     {"w8", nd::Matrix(dim, dim)},
                     {"b4", nd::Matrix(1, dim)}};
    const auto all = p.all();
    bgnn::gaussian_fill(all, rng);
    return p;
}

Propagation normalized_adjacency(const GraphView& view, std::span<const ItemId> nodes) {
    std::unordered_map<ItemId, std::size_t> local;
    for (std::size_t i = 0; i < nodes.size(); ++i) local.emplace(nodes[i], i);
    std::vector<double> degree(nodes.size(), 1.0);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (const auto& nb : view.graph.neighbors(nodes[i]))
            if (local.contains(nb.item)) degree[i] += nb.weight;
    Propagation prop;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        prop.seg.add(i);
        prop.weight.push_back(1.0 / degree[i]);
        for (const auto& nb : view.graph.neighbors(nodes[i])) {
            const auto it = local.find(nb.item);
            if (it == local.end()) continue;
            prop.seg.add(it->second);
            prop.weight.push_back(nb.weight / std::sqrt(degree[i] * degree[it->second]));
        }
        prop.seg.end_row();
    }
    return prop;
}

Var gcn_encode(const GraphView& view, std::span<const ItemId> nodes, Var embeddings, ContrastParams& p,
               nd::Tape& tape) {
    const std::size_t d = embeddings.cols();
    nd::Matrix mask(nodes.size(), d);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto m = view.feature_mask(nodes[i]);
        std::copy(m.begin(), m.end(), mask.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    const Propagation prop = normalized_adjacency(view, nodes);
    Var x = nd::mul(nd::gather_rows(embeddings, nodes), tape.constant(std::move(mask)));
    Var h1 = nd::relu(nd::matmul(nd::segment_sum(x, prop.seg, prop.weight), tape.param(p.gcn1)));
    return nd::matmul(nd::segment_sum(h1, prop.seg, prop.weight), tape.param(p.gcn2));
}

Var project(Var encoded, ContrastParams& p, nd::Tape& tape) {
    return nd::relu(nd::add(nd::matmul(encoded, tape.param(p.w8), false, true), tape.param(p.b4)));
}

Var contrastive_loss(Var z1, Var z2, double temperature) {
    const std::size_t n = z1.rows();
    if (n < 2) throw DataError("contrastive loss needs at least two nodes");
    if (z2.rows() != n || z2.cols() != z1.cols()) throw ShapeError("contrastive_loss: views must have matching shapes");
    if (!(temperature > 0)) throw DataError("temperature must be positive");
    nd::Tape& tape = z1.tape();
    // Self-similarities within view 1 are excluded by a large negative offset.
    nd::Matrix self_mask(n, n);
    for (std::size_t i = 0; i < n; ++i) self_mask(i, i) = -1e30;
    Var cross = nd::scale(nd::cosine_similarity(z1, z2), 1.0 / temperature);
    Var within = nd::add(nd::scale(nd::cosine_similarity(z1, z1), 1.0 / temperature), tape.constant(std::move(self_mask)));
    std::vector<std::size_t> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = i;
    Var logp = nd::pick(nd::log_softmax_rows(nd::concat_cols(cross, within)), diag);
    return nd::scale(nd::sum_all(logp), -1.0 / static_cast<double>(n));
}

Var combined_loss(Var prediction, Var contrastive, double lambda) {
    if (lambda < 0) throw DataError("lambda_c must be >= 0");
    return nd::add(prediction, nd::scale(contrastive, lambda));
}

std::vector<ItemId> contrast_nodes(std::span<const ItemId> batch_items, const graphs::GlobalGraph& g,
                                   const GraphView& v1, const GraphView& v2, std::size_t cap) {
    std::vector<ItemId> core(batch_items.begin(), batch_items.end());
    std::sort(core.begin(), core.end());
    core.erase(std::unique(core.begin(), core.end()), core.end());
    std::unordered_set<ItemId> in_core(core.begin(), core.end());
    std::vector<ItemId> frontier;
    for (ItemId v : core)
        for (const auto& nb : g.neighbors(v))
            if (!in_core.contains(nb.item)) frontier.push_back(nb.item);
    std::sort(frontier.begin(), frontier.end());
    frontier.erase(std::unique(frontier.begin(), frontier.end()), frontier.end());
    core.insert(core.end(), frontier.begin(), frontier.end());
    if (core.size() > cap) core.resize(cap);
    std::erase_if(core, [&](ItemId v) { return !v1.alive[v] || !v2.alive[v]; });
    return core;
}

}  // namespace srgi::contrast
