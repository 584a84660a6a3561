#include "srgi/fusion.hpp"

#include <unordered_map>

#include "srgi/error.hpp"

namespace srgi::fusion {

std::vector<nd::Parameter*> FusionParams::all() {
    std::vector<nd::Parameter*> out;
    for (auto& l : layers) {
        out.push_back(&l.w6);
        out.push_back(&l.q1);
        out.push_back(&l.w7);
    }
    return out;
}

FusionParams init_fusion_params(std::mt19937_64& rng, std::size_t dim, std::size_t depth, double dropout) {
    if (depth < 1) throw DataError("global depth must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("dropout must lie in [0,1)");
    FusionParams p;
    p.dropout = dropout;
    for (std::size_t t = 0; t < depth; ++t) {
        const std::string sfx = "_" + std::to_string(t + 1);
        p.layers.push_back({{"w6" + sfx, nd::Matrix(dim + 1, dim + 1)},
                            {"q1" + sfx, nd::Matrix(1, dim + 1)},
                            {"w7" + sfx, nd::Matrix(dim, 2 * dim)}});
    }
    const auto all = p.all();
    bgnn::gaussian_fill(all, rng);
    return p;
}

Var global_attention_weights(Var affinity, std::span<const double> edge_weight, const nd::Segments& seg,
                             FusionLayer& layer, nd::Tape& tape) {
    const std::size_t d = affinity.cols();
    if (edge_weight.size() != seg.num_entries()) throw ShapeError("global_attention_weights: one weight per edge required");
    Var w6 = tape.param(layer.w6);
    if (layer.w6.value.rows != d + 1) throw ShapeError("global_attention_weights: W6 must be (d+1)x(d+1)");
    // W6 [a || w] = W6 [a || 0] + w * W6[:, d]
    Var padded = nd::concat_cols(affinity, tape.constant(nd::Matrix(affinity.rows(), 1)));
    Var node_part = nd::matmul(padded, w6, false, true);
    nd::Matrix unit(1, d + 1);
    unit(0, d) = 1.0;
    Var weight_dir = nd::matmul(tape.constant(std::move(unit)), w6, false, true);
    Var weights = tape.constant(nd::Matrix::column({edge_weight.begin(), edge_weight.end()}));
    Var pre = nd::add(nd::gather_rows(node_part, seg.source), nd::matmul(weights, weight_dir));
    Var logits = nd::matmul(nd::leaky_relu(pre), tape.param(layer.q1), false, true);
    return nd::segment_softmax(logits, seg);
}

Var global_propagate(Var h, Var pi, const nd::Segments& seg) { return nd::segment_sum(h, seg, pi); }

Var global_aggregate(Var self_h, Var neighbor_h, FusionLayer& layer, nd::Tape& tape) {
    return nd::relu(nd::matmul(nd::concat_cols(self_h, neighbor_h), tape.param(layer.w7), false, true));
}

Var fuse_representations(Var global_h, Var session_h) { return nd::add(global_h, session_h); }

GlobalPlan plan_global(const bgnn::SessionBatch& batch, const graphs::GlobalGraph& graph, std::size_t depth) {
    if (depth < 1) throw DataError("global depth must be >= 1");
    const std::size_t nb = batch.size();
    std::vector<std::vector<ItemId>> lists(nb);
    std::vector<std::unordered_map<ItemId, std::size_t>> local(nb);
    std::vector<std::vector<std::size_t>> hop_end(nb);

    for (std::size_t b = 0; b < nb; ++b) {
        auto& list = lists[b];
        auto& idx = local[b];
        for (ItemId v : batch.graphs[b].nodes) {
            if (v >= graph.num_items()) throw DataError("item index outside the global graph");
            idx.emplace(v, list.size());
            list.push_back(v);
        }
        hop_end[b].push_back(list.size());
        std::size_t begin = 0;
        for (std::size_t h = 1; h <= depth; ++h) {
            const std::size_t end = list.size();
            for (std::size_t j = begin; j < end; ++j) {
                for (const auto& n : graph.neighbors(list[j])) {
                    if (idx.emplace(n.item, list.size()).second) list.push_back(n.item);
                }
            }
            begin = end;
            hop_end[b].push_back(list.size());
        }
    }

    // offset[r][b]: first row of session b at radius r.
    std::vector<std::vector<std::size_t>> offset(depth + 1, std::vector<std::size_t>(nb));
    for (std::size_t r = 0; r <= depth; ++r) {
        std::size_t row = 0;
        for (std::size_t b = 0; b < nb; ++b) {
            offset[r][b] = row;
            row += hop_end[b][r];
        }
    }

    GlobalPlan plan;
    for (std::size_t b = 0; b < nb; ++b)
        plan.input_items.insert(plan.input_items.end(), lists[b].begin(), lists[b].begin() + hop_end[b][depth]);

    for (std::size_t t = 1; t <= depth; ++t) {
        const std::size_t r_out = depth - t, r_in = r_out + 1;
        GlobalPlan::Layer layer;
        for (std::size_t b = 0; b < nb; ++b)
            layer.in_session.insert(layer.in_session.end(), hop_end[b][r_in], b);
        for (std::size_t b = 0; b < nb; ++b) {
            for (std::size_t j = 0; j < hop_end[b][r_out]; ++j) {
                layer.self.push_back(offset[r_in][b] + j);
                for (const auto& n : graph.neighbors(lists[b][j])) {
                    layer.seg.add(offset[r_in][b] + local[b].at(n.item));
                    layer.weight.push_back(static_cast<double>(n.weight));
                }
                layer.seg.end_row();
            }
        }
        plan.layers.push_back(std::move(layer));
    }
    return plan;
}

Var initial_session_pool(Var embeddings, const bgnn::SessionBatch& batch) {
    return nd::segment_sum(nd::gather_rows(embeddings, batch.position_items), batch.session_positions);
}

Var global_item_vectors(Var embeddings, const bgnn::SessionBatch& batch, const GlobalPlan& plan, FusionParams& params,
                        bool training, std::mt19937_64& rng, nd::Tape& tape) {
    if (plan.layers.size() != params.depth()) throw DataError("global plan depth does not match fusion parameters");
    Var pooled = initial_session_pool(embeddings, batch);
    Var h = nd::gather_rows(embeddings, plan.input_items);
    for (std::size_t t = 0; t < plan.layers.size(); ++t) {
        const auto& L = plan.layers[t];
        FusionLayer& layer = params.layers[t];
        Var affinity = nd::mul(nd::gather_rows(pooled, L.in_session), h);
        Var pi = global_attention_weights(affinity, L.weight, L.seg, layer, tape);
        Var neighbor = global_propagate(h, pi, L.seg);
        Var self = nd::gather_rows(h, L.self);
        h = nd::dropout(global_aggregate(self, neighbor, layer, tape), params.dropout, training, rng);
    }
    return h;
}

}  // namespace srgi::fusion
