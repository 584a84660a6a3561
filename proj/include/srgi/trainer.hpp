#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "srgi/corpus.hpp"
#include "srgi/model.hpp"

namespace srgi::trainer {

using corpus::ItemId;
using corpus::LabeledInstance;

struct TrainConfig {
    double lr = 0.001;
    double decay = 0.1;
    std::size_t decay_every = 3;
    double weight_decay = 1e-5;
    std::size_t batch_size = 100;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    double validation = 0.1;
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<nd::Matrix> m;
    std::vector<nd::Matrix> v;
};

AdamState make_adam(std::span<nd::Parameter* const> params);

// grad += wd * theta, then one bias-corrected Adam update. Gradients are left
// untouched apart from the weight-decay term.
void adam_step(std::span<nd::Parameter* const> params, AdamState& state, double lr, double weight_decay = 0.0);

// lr0 * decay^floor(epoch / decay_every)
double lr_schedule(const TrainConfig& cfg, std::size_t epoch);

// 1-based rank of `target`; ties go to the lower item index.
std::size_t target_rank(std::span<const double> scores, ItemId target);
bool precision_at_n(std::size_t rank, std::size_t n);
double mrr_at_n(std::size_t rank, std::size_t n);

struct RankingResult {
    std::vector<std::size_t> cutoffs;
    std::vector<double> precision;  // percent
    std::vector<double> mrr;        // percent
    std::size_t count = 0;

    double precision_at(std::size_t n) const;
    double mrr_at(std::size_t n) const;
    friend bool operator==(const RankingResult&, const RankingResult&) = default;
};

RankingResult aggregate_ranks(std::span<const std::size_t> ranks, std::span<const std::size_t> cutoffs);

struct EpochReport {
    std::size_t epoch = 0;
    double lr = 0;
    double prediction_loss = 0;   // mean over batches
    double contrastive_loss = 0;  // mean over batches where the branch ran
    bool has_contrastive = false;
    std::size_t batches = 0;
    double seconds = 0;
    std::vector<double> batch_losses;  // total loss per batch, in visiting order
};

// One pass over `train` in a shuffled order derived from (seed, epoch).
EpochReport train_epoch(model::Model& m, std::span<const LabeledInstance> train, const TrainConfig& cfg,
                        std::size_t epoch, AdamState& adam);

// Full-vocabulary ranks of every instance's label, in input order.
std::vector<std::size_t> rank_instances(model::Model& m, std::span<const LabeledInstance> instances,
                                        std::size_t batch_size = 100, std::size_t threads = 1);

RankingResult evaluate(model::Model& m, std::span<const LabeledInstance> instances,
                       std::span<const std::size_t> cutoffs, std::size_t batch_size = 100, std::size_t threads = 1);

struct ValidationSplit {
    std::vector<LabeledInstance> train;
    std::vector<LabeledInstance> validation;
};

// Seeded random holdout of floor(fraction * n) training instances.
ValidationSplit split_validation(std::span<const LabeledInstance> train, double fraction, std::uint64_t seed);

struct FitResult {
    std::vector<EpochReport> epochs;
    std::vector<double> validation_mrr;  // MRR@20 per epoch, empty without validation data
    std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochReport&, model::Model&)>;

// Runs cfg.epochs epochs; with validation data the parameters of the epoch with
// the best validation MRR@20 are restored at the end.
FitResult fit(model::Model& m, std::span<const LabeledInstance> train, std::span<const LabeledInstance> validation,
              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void write_metrics_lines(std::ostream& out, const RankingResult& r);
void write_metrics_table(std::ostream& out, const RankingResult& r);

}  // namespace srgi::trainer
