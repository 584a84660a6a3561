#pragma once

// Base session-graph model: mean-pooled typed neighbor propagation, a tanh
// aggregation layer, a reversed-position soft-attention session encoder and
// scaled-cosine scoring against the initial item embeddings.
//
// Weight matrices follow the (out x in) convention, so a layer is x * W^T.

#include <cstdint>
#include <span>
#include <vector>

#include "srgi/corpus.hpp"
#include "srgi/graphs.hpp"
#include "srgi/ndiff.hpp"

namespace srgi::bgnn {

using corpus::ItemId;
using nd::Var;

inline constexpr double kInitStd = 0.1;
inline constexpr double kDefaultAlpha = 12.0;
inline constexpr std::size_t kDefaultMaxLen = 50;
inline constexpr double kProbFloor = 1e-10;

struct ModelParams {
    nd::Parameter embeddings;  // |V| x d
    nd::Parameter positions;   // L_max x d, row r encodes reversed position r+1
    nd::Parameter w1, w2, b1;  // d x d, d x 3d, 1 x d
    nd::Parameter w3, b2;      // d x 2d, 1 x d
    nd::Parameter w4, w5;      // d x d
    nd::Parameter q2, b3;      // 1 x d
    double alpha = kDefaultAlpha;

    std::size_t dim() const { return embeddings.value.cols; }
    std::size_t num_items() const { return embeddings.value.rows; }
    std::size_t max_len() const { return positions.value.rows; }
    std::vector<nd::Parameter*> all();
};

// Draws every trainable entry from N(0, 0.1^2) in declaration order.
ModelParams init_params(std::uint64_t seed, std::size_t num_items, std::size_t dim,
                        std::size_t max_len = kDefaultMaxLen);

// Fills each parameter in `params` with N(0, std^2) draws from `rng`, in order.
void gaussian_fill(std::span<nd::Parameter* const> params, std::mt19937_64& rng, double std = kInitStd);

inline constexpr std::size_t kPad = static_cast<std::size_t>(-1);

// A mini-batch of prefixes. `padded` is (size x width) with kPad beyond each
// length; everything the model reads is derived from the first `lengths[b]`
// cells of each row.
struct SessionBatch {
    std::size_t width = 0;
    std::vector<ItemId> padded;
    std::vector<std::size_t> lengths;
    std::vector<ItemId> labels;
    std::vector<graphs::SessionGraph> graphs;

    // Flattened session-graph nodes over the batch.
    std::vector<ItemId> node_items;
    std::vector<std::size_t> node_offset;  // per session, first node row
    nd::Segments nb_in, nb_out, nb_inout;  // node row -> neighbor node rows
    std::vector<double> w_in, w_out, w_inout;  // 1/|N| per entry

    // Flattened prefix positions over the batch.
    std::vector<ItemId> position_items;
    std::vector<std::size_t> position_node;     // -> node row
    std::vector<std::size_t> position_reverse;  // l - i (0-based row of the position table)
    std::vector<std::size_t> position_session;
    nd::Segments session_positions;  // session -> its position rows

    std::size_t size() const { return lengths.size(); }
    ItemId item_at(std::size_t b, std::size_t i) const { return padded[b * width + i]; }
};

// `pad_to` widens the padded matrix beyond the longest prefix.
SessionBatch make_batch(std::span<const std::vector<ItemId>> prefixes, std::span<const ItemId> labels,
                        std::size_t pad_to = 0);
SessionBatch make_batch(std::span<const corpus::LabeledInstance> instances, std::span<const std::size_t> rows);

// Typed mean pooling per node: [in || out || in-out], each d wide; empty sets give zeros.
Var session_propagate(Var node_h, const SessionBatch& batch);

// tanh(W1 h + W2 h_N + b1)
Var session_aggregate(Var node_h, Var neighbor_h, ModelParams& p, nd::Tape& tape);

struct SessionEncoding {
    Var session;  // S, B x d
    Var pooled;   // s', B x d
    Var beta;     // raw attention scores per position, P x 1
};

// Position rows of `position_h` follow batch.position_* ordering.
SessionEncoding encode_session(Var position_h, const SessionBatch& batch, ModelParams& p, nd::Tape& tape);

// alpha * cos(S, h_v) for every item: B x |V|.
Var score_logits(Var session, Var embeddings, double alpha);
// softmax of score_logits.
Var score_items(Var session, Var embeddings, double alpha);

enum class LossKind { bce, nll };

LossKind parse_loss_kind(std::string_view name);

// Batch mean of -sum_i y_i log p_i + (1-y_i) log(1-p_i) with probabilities
// clamped at 1e-10 (bce), or of -log p_label (nll).
Var prediction_loss(Var logits, std::span<const ItemId> labels, LossKind kind = LossKind::bce);

// Per-node session-level vectors h^s for the batch (propagate + aggregate).
Var session_item_vectors(Var embeddings, const SessionBatch& batch, ModelParams& p, nd::Tape& tape);

}  // namespace srgi::bgnn
