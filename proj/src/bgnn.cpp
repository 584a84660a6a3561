#include "srgi/bgnn.hpp"

#include <algorithm>

#include "srgi/error.hpp"

namespace srgi::bgnn {

std::vector<nd::Parameter*> ModelParams::all() {
    return {&embeddings, &positions, &w1, &w2, &b1, &w3, &b2, &w4, &w5, &q2, &b3};
}

void gaussian_fill(std::span<nd::Parameter* const> params, std::mt19937_64& rng, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (nd::Parameter* p : params) {
        for (double& v : p->value.data) v = dist(rng);
        p->grad = nd::Matrix(p->value.rows, p->value.cols);
    }
}

ModelParams init_params(std::uint64_t seed, std::size_t num_items, std::size_t dim, std::size_t max_len) {
    if (dim < 1) throw DataError("latent dimension must be >= 1");
    if (num_items < 1) throw DataError("vocabulary must not be empty");
    if (max_len < 1) throw DataError("position table length must be >= 1");
    ModelParams p;
    const std::size_t d = dim;
    p.embeddings = {"embeddings", nd::Matrix(num_items, d)};
    p.positions = {"positions", nd::Matrix(max_len, d)};
    p.w1 = {"w1", nd::Matrix(d, d)};
    p.w2 = {"w2", nd::Matrix(d, 3 * d)};
    p.b1 = {"b1", nd::Matrix(1, d)};
    p.w3 = {"w3", nd::Matrix(d, 2 * d)};
    p.b2 = {"b2", nd::Matrix(1, d)};
    p.w4 = {"w4", nd::Matrix(d, d)};
    p.w5 = {"w5", nd::Matrix(d, d)};
    p.q2 = {"q2", nd::Matrix(1, d)};
    p.b3 = {"b3", nd::Matrix(1, d)};
    std::mt19937_64 rng(seed);
    const auto all = p.all();
    gaussian_fill(all, rng);
    return p;
}

SessionBatch make_batch(std::span<const std::vector<ItemId>> prefixes, std::span<const ItemId> labels,
                        std::size_t pad_to) {
    if (prefixes.size() != labels.size()) throw std::invalid_argument("make_batch: one label per prefix required");
    SessionBatch b;
    b.width = pad_to;
    for (const auto& p : prefixes) {
        if (p.empty()) throw DataError("make_batch: empty prefix");
        b.width = std::max(b.width, p.size());
    }
    b.padded.assign(prefixes.size() * b.width, kPad);
    for (std::size_t s = 0; s < prefixes.size(); ++s) {
        std::copy(prefixes[s].begin(), prefixes[s].end(), b.padded.begin() + static_cast<std::ptrdiff_t>(s * b.width));
        b.lengths.push_back(prefixes[s].size());
    }
    b.labels.assign(labels.begin(), labels.end());

    std::size_t pos_row = 0;
    for (std::size_t s = 0; s < b.size(); ++s) {
        const std::size_t len = b.lengths[s];
        std::span<const ItemId> prefix(b.padded.data() + s * b.width, len);
        auto g = graphs::build_session_graph(prefix);
        const std::size_t off = b.node_items.size();
        b.node_offset.push_back(off);
        b.node_items.insert(b.node_items.end(), g.nodes.begin(), g.nodes.end());
        auto fill = [off](nd::Segments& seg, std::vector<double>& w, const std::vector<std::size_t>& nbrs) {
            for (std::size_t n : nbrs) {
                seg.add(off + n);
                w.push_back(1.0 / static_cast<double>(nbrs.size()));
            }
            seg.end_row();
        };
        for (std::size_t u = 0; u < g.num_nodes(); ++u) {
            fill(b.nb_in, b.w_in, g.in[u]);
            fill(b.nb_out, b.w_out, g.out[u]);
            fill(b.nb_inout, b.w_inout, g.inout[u]);
        }
        for (std::size_t i = 0; i < len; ++i) {
            b.position_items.push_back(prefix[i]);
            b.position_node.push_back(off + g.alias[i]);
            b.position_reverse.push_back(len - 1 - i);
            b.position_session.push_back(s);
            b.session_positions.add(pos_row++);
        }
        b.session_positions.end_row();
        b.graphs.push_back(std::move(g));
    }
    return b;
}

SessionBatch make_batch(std::span<const corpus::LabeledInstance> instances, std::span<const std::size_t> rows) {
    std::vector<std::vector<ItemId>> prefixes;
    std::vector<ItemId> labels;
    prefixes.reserve(rows.size());
    for (std::size_t r : rows) {
        prefixes.push_back(instances[r].prefix);
        labels.push_back(instances[r].label);
    }
    return make_batch(prefixes, labels);
}

Var session_propagate(Var node_h, const SessionBatch& batch) {
    const Var parts[] = {nd::segment_sum(node_h, batch.nb_in, batch.w_in),
                         nd::segment_sum(node_h, batch.nb_out, batch.w_out),
                         nd::segment_sum(node_h, batch.nb_inout, batch.w_inout)};
    return nd::concat_cols(parts);
}

Var session_aggregate(Var node_h, Var neighbor_h, ModelParams& p, nd::Tape& tape) {
    Var self = nd::matmul(node_h, tape.param(p.w1), false, true);
    Var nbr = nd::matmul(neighbor_h, tape.param(p.w2), false, true);
    return nd::tanh(nd::add(nd::add(self, nbr), tape.param(p.b1)));
}

SessionEncoding encode_session(Var position_h, const SessionBatch& batch, ModelParams& p, nd::Tape& tape) {
    for (std::size_t len : batch.lengths)
        if (len > p.max_len()) throw DataError("position table exhausted: prefix of length " + std::to_string(len) +
                                               " exceeds L_max=" + std::to_string(p.max_len()));
    Var pos = nd::gather_rows(tape.param(p.positions), batch.position_reverse);
    Var z = nd::tanh(nd::add(nd::matmul(nd::concat_cols(position_h, pos), tape.param(p.w3), false, true),
                             tape.param(p.b2)));
    Var pooled = nd::segment_sum(position_h, batch.session_positions);
    Var pooled_at = nd::gather_rows(pooled, batch.position_session);
    Var gate = nd::sigmoid(nd::add(nd::add(nd::matmul(z, tape.param(p.w4), false, true),
                                           nd::matmul(pooled_at, tape.param(p.w5), false, true)),
                                   tape.param(p.b3)));
    Var beta = nd::matmul(gate, tape.param(p.q2), false, true);
    Var session = nd::segment_sum(position_h, batch.session_positions, beta);
    return {session, pooled, beta};
}

Var score_logits(Var session, Var embeddings, double alpha) {
    return nd::scale(nd::matmul(nd::l2_normalize_rows(session), nd::l2_normalize_rows(embeddings), false, true), alpha);
}

Var score_items(Var session, Var embeddings, double alpha) {
    return nd::softmax_rows(score_logits(session, embeddings, alpha));
}

LossKind parse_loss_kind(std::string_view name) {
    if (name == "bce") return LossKind::bce;
    if (name == "nll") return LossKind::nll;
    throw DataError("unknown loss '" + std::string(name) + "' (expected bce or nll)");
}

Var prediction_loss(Var logits, std::span<const ItemId> labels, LossKind kind) {
    if (labels.size() != logits.rows()) throw ShapeError("prediction_loss: one label per row required");
    const double inv_b = 1.0 / static_cast<double>(labels.size());
    if (kind == LossKind::nll) {
        return nd::scale(nd::sum_all(nd::pick(nd::log_softmax_rows(logits), labels)), -inv_b);
    }
    Var prob = nd::softmax_rows(logits);
    Var log_p = nd::log(prob, kProbFloor);
    Var log_q = nd::log(nd::add_scalar(nd::scale(prob, -1.0), 1.0), kProbFloor);
    // sum_i [y log p + (1-y) log(1-p)] = log p_y + sum_i log(1-p_i) - log(1-p_y)
    Var hit = nd::sum_all(nd::pick(log_p, labels));
    Var rest = nd::sub(nd::sum_all(log_q), nd::sum_all(nd::pick(log_q, labels)));
    return nd::scale(nd::add(hit, rest), -inv_b);
}

Var session_item_vectors(Var embeddings, const SessionBatch& batch, ModelParams& p, nd::Tape& tape) {
    Var h = nd::gather_rows(embeddings, batch.node_items);
    return session_aggregate(h, session_propagate(h, batch), p, tape);
}

}  // namespace srgi::bgnn
