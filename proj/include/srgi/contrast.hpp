#pragma once

// Contrastive global-proximity constraint: two stochastic views of the global
// graph are encoded by a 2-layer GCN over the item embeddings, projected, and
// tied together node-by-node with an InfoNCE-style loss.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srgi/graphs.hpp"
#include "srgi/ndiff.hpp"

namespace srgi::contrast {

using corpus::ItemId;
using nd::Var;

enum class AugmentMode { node_drop, edge_drop, attr_mask };

struct AugmentSpec {
    AugmentMode mode = AugmentMode::edge_drop;
    double ratio = 0.2;
};

// "edge_drop:0.2" style.
AugmentSpec parse_augment(std::string_view text);
std::string format_augment(const AugmentSpec& spec);

struct GraphView {
    std::vector<bool> alive;  // per node
    graphs::GlobalGraph graph;  // surviving symmetric edges
    std::size_t dim = 0;
    std::vector<std::vector<std::size_t>> masked_dims;  // per node, zeroed feature dimensions

    std::size_t num_alive() const;
    // 0/1 feature mask of length `dim`.
    std::vector<double> feature_mask(ItemId v) const;
};

// Counts removed: floor(ratio*|V|) nodes, floor(ratio*|E|) edges, or
// floor(ratio*d) dimensions on floor(ratio*|V|) nodes, chosen uniformly.
GraphView augment_graph(const graphs::GlobalGraph& g, const AugmentSpec& spec, std::size_t dim, std::uint64_t seed);

struct ContrastParams {
    nd::Parameter gcn1;  // d x d
    nd::Parameter gcn2;  // d x d
    nd::Parameter w8;    // d x d
    nd::Parameter b4;    // 1 x d

    std::vector<nd::Parameter*> all() { return {&gcn1, &gcn2, &w8, &b4}; }
};

ContrastParams init_contrast_params(std::mt19937_64& rng, std::size_t dim);

// Symmetric-normalised propagation D^-1/2 (A + I) D^-1/2 restricted to `nodes`
// (edges to nodes outside the set are ignored).
struct Propagation {
    nd::Segments seg;
    std::vector<double> weight;
};
Propagation normalized_adjacency(const GraphView& view, std::span<const ItemId> nodes);

// Two-layer GCN: Relu(A X W1) then linear A X W2, X = masked embeddings of `nodes`.
Var gcn_encode(const GraphView& view, std::span<const ItemId> nodes, Var embeddings, ContrastParams& p,
               nd::Tape& tape);

// Relu(W8 o + b4)
Var project(Var encoded, ContrastParams& p, nd::Tape& tape);

// Mean over nodes of
//   -log( e^{c(z1_i,z2_i)} / (sum_k e^{c(z1_i,z2_k)} + sum_{k!=i} e^{c(z1_i,z1_k)}) ),
// c = cosine / temperature. Requires at least two nodes.
Var contrastive_loss(Var z1, Var z2, double temperature = 1.0);

// L_S + lambda * L_C
Var combined_loss(Var prediction, Var contrastive, double lambda);

// Batch nodes followed by their 1-hop frontier (both sorted), truncated to
// `cap`, then filtered to nodes alive in both views.
std::vector<ItemId> contrast_nodes(std::span<const ItemId> batch_items, const graphs::GlobalGraph& g,
                                   const GraphView& v1, const GraphView& v2, std::size_t cap);

}  // namespace srgi::contrast
