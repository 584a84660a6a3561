#pragma once

// Global feature encoder: session-aware attention over global-graph
// neighbors, stacked k times, summed into the session-level item vectors.

#include <random>
#include <span>
#include <vector>

#include "srgi/bgnn.hpp"
#include "srgi/graphs.hpp"
#include "srgi/ndiff.hpp"

namespace srgi::fusion {

using corpus::ItemId;
using nd::Var;

struct FusionLayer {
    nd::Parameter w6;  // (d+1) x (d+1)
    nd::Parameter q1;  // 1 x (d+1)
    nd::Parameter w7;  // d x 2d
};

struct FusionParams {
    std::vector<FusionLayer> layers;  // one per propagation step
    double dropout = 0.5;

    std::size_t depth() const { return layers.size(); }
    std::vector<nd::Parameter*> all();
};

FusionParams init_fusion_params(std::mt19937_64& rng, std::size_t dim, std::size_t depth, double dropout);

// Attention of each target over its neighbors:
//   softmax_j( q1 . LeakyRelu(W6 [affinity_j || w_j]) )
// `affinity` holds s' (.) h_j for every source row referenced by `seg`;
// `edge_weight` has one raw co-occurrence count per entry of `seg`.
Var global_attention_weights(Var affinity, std::span<const double> edge_weight, const nd::Segments& seg,
                             FusionLayer& layer, nd::Tape& tape);

// sum_j pi_j h_j per target; targets without neighbors get zeros.
Var global_propagate(Var h, Var pi, const nd::Segments& seg);

// Relu(W7 [h_v || h_N]).
Var global_aggregate(Var self_h, Var neighbor_h, FusionLayer& layer, nd::Tape& tape);

// h' = h^g + h^s
Var fuse_representations(Var global_h, Var session_h);

// Row layout of the k-hop neighborhoods gathered for one batch. Level r holds,
// per session, the session-graph nodes followed by every item within r hops
// (breadth-first, canonical neighbor order). Layer t maps level k-t+1 to k-t.
struct GlobalPlan {
    struct Layer {
        nd::Segments seg;                 // output row -> input rows of its neighbors
        std::vector<double> weight;       // raw edge weight per entry
        std::vector<std::size_t> self;    // output row -> its own input row
        std::vector<std::size_t> in_session;  // input row -> session
    };
    std::vector<ItemId> input_items;  // level-k rows
    std::vector<Layer> layers;
};

GlobalPlan plan_global(const bgnn::SessionBatch& batch, const graphs::GlobalGraph& graph, std::size_t depth);

// Session-aware s' from the initial embeddings, B x d.
Var initial_session_pool(Var embeddings, const bgnn::SessionBatch& batch);

// h^{g,(k)} for every session-graph node of the batch, rows aligned with
// batch.node_items.
Var global_item_vectors(Var embeddings, const bgnn::SessionBatch& batch, const GlobalPlan& plan, FusionParams& params,
                        bool training, std::mt19937_64& rng, nd::Tape& tape);

}  // namespace srgi::fusion
