#include "srgi/model.hpp"

#include <fstream>
#include <sstream>

#include "srgi/binio.hpp"
#include "srgi/error.hpp"

namespace srgi::model {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

// Independent streams so that adding a branch never perturbs the base draws.
constexpr std::uint64_t kFusionStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kContrastStream = 0xbf58476d1ce4e5b9ULL;

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T out{};
    if (!(is >> out) || !is.eof()) throw DataError("bad value '" + value + "' for model key '" + key + "'");
    return out;
}

}  // namespace

Variant parse_variant(std::string_view name) {
    if (name == "bgnn") return Variant::bgnn;
    if (name == "srgi-fm") return Variant::srgi_fm;
    if (name == "srgi-cm") return Variant::srgi_cm;
    throw DataError("unknown model '" + std::string(name) + "' (expected bgnn, srgi-fm or srgi-cm)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::bgnn: return "bgnn";
        case Variant::srgi_fm: return "srgi-fm";
        case Variant::srgi_cm: return "srgi-cm";
    }
    return "?";
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "model=" << variant_name(variant) << '\n'
       << "dim=" << dim << '\n'
       << "max-len=" << max_len << '\n'
       << "alpha=" << alpha << '\n'
       << "loss=" << (loss == bgnn::LossKind::bce ? "bce" : "nll") << '\n'
       << "depth=" << depth << '\n'
       << "dropout=" << dropout << '\n'
       << "lambda-c=" << lambda_c << '\n'
       << "aug1=" << contrast::format_augment(aug1) << '\n'
       << "aug2=" << contrast::format_augment(aug2) << '\n'
       << "contrast-cap=" << contrast_cap << '\n'
       << "temperature=" << temperature << '\n';
    return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
    ModelConfig c;
    std::istringstream is{std::string(text)};
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("bad model config line '" + line + "'");
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "model") c.variant = parse_variant(v);
        else if (k == "dim") c.dim = parse_number<std::size_t>(k, v);
        else if (k == "max-len") c.max_len = parse_number<std::size_t>(k, v);
        else if (k == "alpha") c.alpha = parse_number<double>(k, v);
        else if (k == "loss") c.loss = bgnn::parse_loss_kind(v);
        else if (k == "depth") c.depth = parse_number<std::size_t>(k, v);
        else if (k == "dropout") c.dropout = parse_number<double>(k, v);
        else if (k == "lambda-c") c.lambda_c = parse_number<double>(k, v);
        else if (k == "aug1") c.aug1 = contrast::parse_augment(v);
        else if (k == "aug2") c.aug2 = contrast::parse_augment(v);
        else if (k == "contrast-cap") c.contrast_cap = parse_number<std::size_t>(k, v);
        else if (k == "temperature") c.temperature = parse_number<double>(k, v);
        else throw DataError("unknown model config key '" + k + "'");
    }
    return c;
}

Model::Model(const ModelConfig& cfg, std::size_t num_items, std::uint64_t seed,
             std::shared_ptr<const graphs::GlobalGraph> graph)
    : cfg_(cfg), base_(bgnn::init_params(seed, num_items, cfg.dim, cfg.max_len)), graph_(std::move(graph)) {
    base_.alpha = cfg.alpha;
    if (cfg.variant == Variant::srgi_fm) {
        std::mt19937_64 rng(seed ^ kFusionStream);
        fusion_ = fusion::init_fusion_params(rng, cfg.dim, cfg.depth, cfg.dropout);
    }
    if (cfg.variant == Variant::srgi_cm) {
        if (cfg.lambda_c < 0) throw DataError("lambda-c must be >= 0");
        std::mt19937_64 rng(seed ^ kContrastStream);
        contrast_ = contrast::init_contrast_params(rng, cfg.dim);
    }
    if (graph_ && graph_->num_items() != num_items)
        throw DataError("global graph covers " + std::to_string(graph_->num_items()) + " items, model has " +
                        std::to_string(num_items));
}

std::vector<nd::Parameter*> Model::parameters() {
    auto out = base_.all();
    if (cfg_.variant == Variant::srgi_fm)
        for (auto* p : fusion_.all()) out.push_back(p);
    if (cfg_.variant == Variant::srgi_cm)
        for (auto* p : contrast_.all()) out.push_back(p);
    return out;
}

nd::Parameter* Model::find_parameter(std::string_view name) {
    for (auto* p : parameters())
        if (p->name == name) return p;
    return nullptr;
}

void Model::set_graph(std::shared_ptr<const graphs::GlobalGraph> graph) {
    if (graph && graph->num_items() != num_items()) throw DataError("global graph does not match the model vocabulary");
    graph_ = std::move(graph);
    views_.reset();
}

void Model::draw_views(std::uint64_t seed) {
    if (cfg_.variant != Variant::srgi_cm) return;
    if (!graph_) throw DataError("srgi-cm training needs a global graph");
    views_ = Views{contrast::augment_graph(*graph_, cfg_.aug1, cfg_.dim, seed),
                   contrast::augment_graph(*graph_, cfg_.aug2, cfg_.dim, seed + 1)};
}

nd::Var Model::session_representation(nd::Tape& tape, const bgnn::SessionBatch& batch, bool training,
                                      std::mt19937_64& rng) {
    nd::Var emb = tape.param(base_.embeddings);
    nd::Var h = bgnn::session_item_vectors(emb, batch, base_, tape);
    if (cfg_.variant == Variant::srgi_fm) {
        if (!graph_) throw DataError("srgi-fm needs a global graph");
        const auto plan = fusion::plan_global(batch, *graph_, fusion_.depth());
        h = fusion::fuse_representations(fusion::global_item_vectors(emb, batch, plan, fusion_, training, rng, tape), h);
    }
    return bgnn::encode_session(nd::gather_rows(h, batch.position_node), batch, base_, tape).session;
}

Model::Output Model::forward(nd::Tape& tape, const bgnn::SessionBatch& batch, bool training, std::mt19937_64& rng) {
    Output out;
    nd::Var emb = tape.param(base_.embeddings);
    nd::Var session = session_representation(tape, batch, training, rng);
    out.logits = bgnn::score_logits(session, emb, base_.alpha);
    out.prediction_loss = bgnn::prediction_loss(out.logits, batch.labels, cfg_.loss);
    out.total = out.prediction_loss;
    if (cfg_.variant == Variant::srgi_cm && training) {
        if (!graph_) throw DataError("srgi-cm training needs a global graph");
        if (!views_) throw DataError("srgi-cm training needs augmented views; call draw_views first");
        const auto nodes = contrast::contrast_nodes(batch.node_items, *graph_, views_->first, views_->second,
                                                    cfg_.contrast_cap);
        if (nodes.size() >= 2) {
            nd::Var z1 = contrast::project(contrast::gcn_encode(views_->first, nodes, emb, contrast_, tape), contrast_, tape);
            nd::Var z2 = contrast::project(contrast::gcn_encode(views_->second, nodes, emb, contrast_, tape), contrast_, tape);
            out.contrastive_loss = contrast::contrastive_loss(z1, z2, cfg_.temperature);
            out.total = contrast::combined_loss(out.prediction_loss, out.contrastive_loss, cfg_.lambda_c);
        }
    }
    return out;
}

nd::Matrix Model::score(const bgnn::SessionBatch& batch) {
    nd::Tape tape;
    tape.set_grad_enabled(false);
    std::mt19937_64 unused(0);
    nd::Var emb = tape.param(base_.embeddings);
    nd::Var session = session_representation(tape, batch, false, unused);
    return bgnn::score_logits(session, emb, base_.alpha).value();
}

// ---- checkpoints ------------------------------------------------------------

void write_checkpoint(std::ostream& out, Model& model) {
    const auto& cfg = model.config();
    binio::put_magic(out, "SRGP");
    binio::put<std::uint16_t>(out, kCheckpointVersion);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.dim));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.num_items()));
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.max_len));
    const std::string text = cfg.to_text();
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto params = model.parameters();
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rows));
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.cols));
        for (double v : p->value.data) binio::put<double>(out, v);
    }
}

namespace {

struct Header {
    ModelConfig cfg;
    std::size_t num_items = 0;
};

Header read_header(std::istream& in) {
    binio::expect_magic(in, "SRGP");
    const auto version = binio::get<std::uint16_t>(in, "version");
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    Header h;
    const auto dim = binio::get<std::uint32_t>(in, "dimension");
    h.num_items = binio::get<std::uint32_t>(in, "vocabulary size");
    const auto max_len = binio::get<std::uint32_t>(in, "position table length");
    const auto len = binio::get<std::uint32_t>(in, "config length");
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw DataError("truncated checkpoint config");
    h.cfg = ModelConfig::from_text(text);
    if (h.cfg.dim != dim || h.cfg.max_len != max_len) throw DataError("checkpoint header disagrees with its config");
    return h;
}

}  // namespace

Model read_checkpoint(std::istream& in, std::shared_ptr<const graphs::GlobalGraph> graph) {
    const Header h = read_header(in);
    Model model(h.cfg, h.num_items, 0, std::move(graph));
    const auto blocks = binio::get<std::uint32_t>(in, "block count");
    std::size_t loaded = 0;
    for (std::uint32_t b = 0; b < blocks; ++b) {
        const auto nlen = binio::get<std::uint32_t>(in, "name length");
        std::string name(nlen, '\0');
        if (!in.read(name.data(), nlen)) throw DataError("truncated parameter name");
        const auto rows = binio::get<std::uint32_t>(in, "rows");
        const auto cols = binio::get<std::uint32_t>(in, "cols");
        nd::Parameter* p = model.find_parameter(name);
        if (!p) throw DataError("checkpoint has unknown parameter '" + name + "'");
        if (p->value.rows != rows || p->value.cols != cols) throw DataError("shape mismatch for parameter '" + name + "'");
        for (double& v : p->value.data) v = binio::get<double>(in, "parameter values");
        ++loaded;
    }
    if (loaded != model.parameters().size()) throw DataError("checkpoint is missing parameters");
    return model;
}

void save_checkpoint(const std::string& path, Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, model);
}

Model load_checkpoint(const std::string& path, std::shared_ptr<const graphs::GlobalGraph> graph) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in, std::move(graph));
}

ModelConfig peek_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    return read_header(in).cfg;
}

}  // namespace srgi::model
