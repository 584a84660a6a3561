#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "srgi/bgnn.hpp"
#include "srgi/contrast.hpp"
#include "srgi/fusion.hpp"
#include "srgi/graphs.hpp"

namespace srgi::model {

enum class Variant { bgnn, srgi_fm, srgi_cm };

Variant parse_variant(std::string_view name);
std::string variant_name(Variant v);

struct ModelConfig {
    Variant variant = Variant::bgnn;
    std::size_t dim = 100;
    std::size_t max_len = bgnn::kDefaultMaxLen;
    double alpha = bgnn::kDefaultAlpha;
    bgnn::LossKind loss = bgnn::LossKind::bce;
    // srgi-fm
    std::size_t depth = 1;
    double dropout = 0.5;
    // srgi-cm
    double lambda_c = 100.0;
    contrast::AugmentSpec aug1{contrast::AugmentMode::edge_drop, 0.2};
    contrast::AugmentSpec aug2{contrast::AugmentMode::attr_mask, 0.2};
    std::size_t contrast_cap = 4096;
    double temperature = 1.0;

    // key=value lines; used inside checkpoints.
    std::string to_text() const;
    static ModelConfig from_text(std::string_view text);
};

class Model {
public:
    Model(const ModelConfig& cfg, std::size_t num_items, std::uint64_t seed,
          std::shared_ptr<const graphs::GlobalGraph> graph = nullptr);

    const ModelConfig& config() const { return cfg_; }
    std::size_t num_items() const { return base_.num_items(); }

    bgnn::ModelParams& base() { return base_; }
    fusion::FusionParams& fusion() { return fusion_; }
    contrast::ContrastParams& contrast() { return contrast_; }
    std::vector<nd::Parameter*> parameters();
    nd::Parameter* find_parameter(std::string_view name);

    const graphs::GlobalGraph* graph() const { return graph_.get(); }
    void set_graph(std::shared_ptr<const graphs::GlobalGraph> graph);

    // Fresh augmented views for the contrastive branch (srgi-cm only).
    void draw_views(std::uint64_t seed);
    bool has_views() const { return views_.has_value(); }

    struct Output {
        nd::Var logits;
        nd::Var prediction_loss;
        nd::Var contrastive_loss;  // invalid unless the contrastive branch ran
        nd::Var total;
    };

    // Training forward pass. Dropout and the contrastive branch only run when
    // `training` is set.
    Output forward(nd::Tape& tape, const bgnn::SessionBatch& batch, bool training, std::mt19937_64& rng);

    // Session representation S (eval mode), B x d.
    nd::Var session_representation(nd::Tape& tape, const bgnn::SessionBatch& batch, bool training,
                                   std::mt19937_64& rng);

    // Eval-mode logits, B x |V|.
    nd::Matrix score(const bgnn::SessionBatch& batch);

private:
    struct Views {
        contrast::GraphView first;
        contrast::GraphView second;
    };

    ModelConfig cfg_;
    bgnn::ModelParams base_;
    fusion::FusionParams fusion_;
    contrast::ContrastParams contrast_;
    std::shared_ptr<const graphs::GlobalGraph> graph_;
    std::optional<Views> views_;
};

// "SRGP" | u16 version | u32 d | u32 |V| | u32 L_max | u32 len + model config text
// | u32 block count | blocks: u32 name len, name, u32 rows, u32 cols, f64 values.
void write_checkpoint(std::ostream& out, Model& model);
// The caller supplies the global graph when the variant needs one.
Model read_checkpoint(std::istream& in, std::shared_ptr<const graphs::GlobalGraph> graph = nullptr);
void save_checkpoint(const std::string& path, Model& model);
Model load_checkpoint(const std::string& path, std::shared_ptr<const graphs::GlobalGraph> graph = nullptr);
// Reads only the model configuration from a checkpoint file.
ModelConfig peek_checkpoint_config(const std::string& path);

}  // namespace srgi::model
