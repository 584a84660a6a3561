#include "srgi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "srgi/error.hpp"
#include "srgi/log.hpp"

namespace srgi::trainer {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    std::uint64_t out[1];
    seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
    return out[0];
}

constexpr std::uint64_t kShuffleSalt = 1;
constexpr std::uint64_t kDropoutSalt = 2;
constexpr std::uint64_t kViewSalt = 3;
constexpr std::uint64_t kValidationSalt = 4;

}  // namespace

AdamState make_adam(std::span<nd::Parameter* const> params) {
    AdamState s;
    for (const auto* p : params) {
        s.m.emplace_back(p->value.rows, p->value.cols);
        s.v.emplace_back(p->value.rows, p->value.cols);
    }
    return s;
}

void adam_step(std::span<nd::Parameter* const> params, AdamState& state, double lr, double weight_decay) {
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state tracks a different parameter list");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        nd::Parameter& p = *params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (!p.grad.same_shape(p.value) || !m.same_shape(p.value))
            throw ShapeError("adam_step: shape mismatch for " + p.name + " " + p.value.shape_str());
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad.data[i] + weight_decay * p.value.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g * g;
            p.value.data[i] -= lr * (m.data[i] / c1) / (std::sqrt(v.data[i] / c2) + state.eps);
        }
    }
}

double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
    const std::size_t every = std::max<std::size_t>(cfg.decay_every, 1);
    return cfg.lr * std::pow(cfg.decay, static_cast<double>(epoch / every));
}

std::size_t target_rank(std::span<const double> scores, ItemId target) {
    if (target >= scores.size()) throw DataError("target outside the score vector");
    const double t = scores[target];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > t || (j < target && scores[j] == t)) ++rank;
    return rank;
}

bool precision_at_n(std::size_t rank, std::size_t n) { return rank >= 1 && rank <= n; }

double mrr_at_n(std::size_t rank, std::size_t n) { return precision_at_n(rank, n) ? 1.0 / static_cast<double>(rank) : 0.0; }

double RankingResult::precision_at(std::size_t n) const {
    for (std::size_t i = 0; i < cutoffs.size(); ++i)
        if (cutoffs[i] == n) return precision[i];
    throw DataError("no precision recorded at " + std::to_string(n));
}

double RankingResult::mrr_at(std::size_t n) const {
    for (std::size_t i = 0; i < cutoffs.size(); ++i)
        if (cutoffs[i] == n) return mrr[i];
    throw DataError("no MRR recorded at " + std::to_string(n));
}

RankingResult aggregate_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> cutoffs) {
    RankingResult r;
    r.cutoffs.assign(cutoffs.begin(), cutoffs.end());
    r.count = ranks.size();
    for (std::size_t n : cutoffs) {
        std::size_t hits = 0;
        double rr = 0.0;
        for (std::size_t rank : ranks) {
            hits += precision_at_n(rank, n) ? 1 : 0;
            rr += mrr_at_n(rank, n);
        }
        const double denom = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
        r.precision.push_back(100.0 * static_cast<double>(hits) / denom);
        r.mrr.push_back(100.0 * rr / denom);
    }
    return r;
}

EpochReport train_epoch(model::Model& m, std::span<const LabeledInstance> train, const TrainConfig& cfg,
                        std::size_t epoch, AdamState& adam) {
    if (cfg.batch_size == 0) throw DataError("batch size must be >= 1");
    const auto start = std::chrono::steady_clock::now();
    EpochReport rep;
    rep.epoch = epoch;
    rep.lr = lr_schedule(cfg, epoch);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix(cfg.seed + epoch, kShuffleSalt));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng(mix(cfg.seed + epoch, kDropoutSalt));
    if (m.config().variant == model::Variant::srgi_cm) m.draw_views(mix(cfg.seed + epoch, kViewSalt));

    const auto params = m.parameters();
    double ls_sum = 0, lc_sum = 0;
    std::size_t lc_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        const std::span<const std::size_t> rows(order.data() + begin, end - begin);
        const auto batch = bgnn::make_batch(train, rows);

        auto diagnose = [&](const std::string& what) {
            std::ostringstream os;
            os << what << " at epoch " << epoch << ", batch " << rep.batches << " (instances";
            for (std::size_t i = 0; i < std::min<std::size_t>(rows.size(), 5); ++i)
                os << ' ' << rows[i] << ":len" << train[rows[i]].prefix.size();
            os << (rows.size() > 5 ? " ...)" : ")");
            return NumericError(os.str());
        };

        for (auto* p : params) p->zero_grad();
        nd::Tape tape;
        std::optional<model::Model::Output> fwd;
        try {
            fwd = m.forward(tape, batch, true, dropout_rng);
        } catch (const NumericError& e) {
            throw diagnose(e.what());
        }
        const auto& out = *fwd;
        const double total = out.total.value().data[0];
        const double ls = out.prediction_loss.value().data[0];
        if (!std::isfinite(total)) throw diagnose("non-finite loss " + std::to_string(total));
        tape.backward(out.total);
        adam_step(params, adam, rep.lr, cfg.weight_decay);

        ls_sum += ls;
        if (out.contrastive_loss.valid()) {
            lc_sum += out.contrastive_loss.value().data[0];
            ++lc_batches;
        }
        rep.batch_losses.push_back(total);
        ++rep.batches;
        log::debug("epoch ", epoch, " batch ", rep.batches, " loss ", total);
    }
    rep.prediction_loss = rep.batches ? ls_sum / static_cast<double>(rep.batches) : 0.0;
    rep.has_contrastive = lc_batches > 0;
    rep.contrastive_loss = lc_batches ? lc_sum / static_cast<double>(lc_batches) : 0.0;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

std::vector<std::size_t> rank_instances(model::Model& m, std::span<const LabeledInstance> instances,
                                        std::size_t batch_size, std::size_t threads) {
    if (batch_size == 0) throw DataError("batch size must be >= 1");
    std::vector<std::size_t> ranks(instances.size());
    const std::size_t num_batches = (instances.size() + batch_size - 1) / batch_size;

    // Each worker owns a strided set of batches and writes only its own slots.
    auto work = [&](std::size_t worker, std::size_t stride) {
        std::vector<std::size_t> rows;
        for (std::size_t b = worker; b < num_batches; b += stride) {
            rows.clear();
            for (std::size_t i = b * batch_size; i < std::min(instances.size(), (b + 1) * batch_size); ++i)
                rows.push_back(i);
            const auto batch = bgnn::make_batch(instances, rows);
            const nd::Matrix logits = m.score(batch);
            for (std::size_t k = 0; k < rows.size(); ++k)
                ranks[rows[k]] = target_rank(logits.row_span(k), instances[rows[k]].label);
        }
    };

    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(num_batches, 1));
    if (threads == 1) {
        work(0, 1);
        return ranks;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                work(t, threads);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return ranks;
}

RankingResult evaluate(model::Model& m, std::span<const LabeledInstance> instances,
                       std::span<const std::size_t> cutoffs, std::size_t batch_size, std::size_t threads) {
    const auto ranks = rank_instances(m, instances, batch_size, threads);
    return aggregate_ranks(ranks, cutoffs);
}

ValidationSplit split_validation(std::span<const LabeledInstance> train, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw DataError("validation fraction must lie in [0,1)");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(seed, kValidationSalt));
    std::shuffle(order.begin(), order.end(), rng);
    const auto held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size())));
    std::vector<bool> is_val(train.size(), false);
    for (std::size_t i = 0; i < held; ++i) is_val[order[i]] = true;
    ValidationSplit out;
    for (std::size_t i = 0; i < train.size(); ++i) (is_val[i] ? out.validation : out.train).push_back(train[i]);
    return out;
}

FitResult fit(model::Model& m, std::span<const LabeledInstance> train, std::span<const LabeledInstance> validation,
              const TrainConfig& cfg, const EpochCallback& on_epoch) {
    const auto params = m.parameters();
    AdamState adam = make_adam(params);
    FitResult res;
    std::vector<nd::Matrix> best;
    double best_mrr = -1.0;
    const std::size_t cut[] = {20};
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        res.epochs.push_back(train_epoch(m, train, cfg, e, adam));
        const auto& rep = res.epochs.back();
        if (!validation.empty()) {
            const double mrr = evaluate(m, validation, cut, cfg.batch_size).mrr[0];
            res.validation_mrr.push_back(mrr);
            if (mrr > best_mrr) {
                best_mrr = mrr;
                res.best_epoch = e;
                best.clear();
                for (const auto* p : params) best.push_back(p->value);
            }
            log::info("epoch ", e + 1, ": lr ", rep.lr, ", L_S ", rep.prediction_loss,
                      rep.has_contrastive ? ", L_C " + std::to_string(rep.contrastive_loss) : std::string(),
                      ", validation MRR@20 ", mrr, " (", rep.seconds, " s)");
        } else {
            res.best_epoch = e;
            log::info("epoch ", e + 1, ": lr ", rep.lr, ", L_S ", rep.prediction_loss,
                      rep.has_contrastive ? ", L_C " + std::to_string(rep.contrastive_loss) : std::string(), " (",
                      rep.seconds, " s)");
        }
        if (on_epoch) on_epoch(rep, m);
    }
    if (!best.empty())
        for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
    return res;
}

void write_metrics_lines(std::ostream& out, const RankingResult& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    for (std::size_t i = 0; i < r.cutoffs.size(); ++i) {
        os << "P\t" << r.cutoffs[i] << '\t' << r.precision[i] << '\n';
        os << "MRR\t" << r.cutoffs[i] << '\t' << r.mrr[i] << '\n';
    }
    os << "count\t0\t" << r.count << '\n';
    out << os.str();
}

void write_metrics_table(std::ostream& out, const RankingResult& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << std::left << std::setw(8) << "N" << std::right << std::setw(10) << "P@N" << std::setw(10) << "MRR@N" << '\n';
    for (std::size_t i = 0; i < r.cutoffs.size(); ++i)
        os << std::left << std::setw(8) << r.cutoffs[i] << std::right << std::setw(10) << r.precision[i]
           << std::setw(10) << r.mrr[i] << '\n';
    os << r.count << " test instances\n";
    out << os.str();
}

}  // namespace srgi::trainer
