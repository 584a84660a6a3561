#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "srgi/error.hpp"
#include "srgi/graphs.hpp"
#include "srgi/log.hpp"
#include "srgi/trainer.hpp"

namespace srgi::cli {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Key {
    std::string name;
    std::string value;  // default
    std::string help;
};

const std::vector<Key> kCommon = {
    {"seed", "0", "seed for every random choice"},
    {"threads", "1", "worker threads for evaluation"},
};

const std::vector<Key> kModelKeys = {
    {"model", "bgnn", "bgnn, srgi-fm or srgi-cm"},
    {"dim", "100", "embedding dimension"},
    {"max-len", "50", "position table length"},
    {"alpha", "12", "cosine scale"},
    {"loss", "bce", "bce or nll"},
    {"depth", "1", "global layers (srgi-fm)"},
    {"dropout", "0.5", "global layer dropout (srgi-fm)"},
    {"lambda-c", "100", "contrastive weight (srgi-cm)"},
    {"aug1", "edge_drop:0.2", "first view augmentation (srgi-cm)"},
    {"aug2", "attr_mask:0.2", "second view augmentation (srgi-cm)"},
    {"contrast-cap", "4096", "max nodes per contrastive batch (srgi-cm)"},
    {"temperature", "1", "contrastive temperature (srgi-cm)"},
};

const std::vector<Key> kTrainKeys = {
    {"lr", "0.001", "initial learning rate"},
    {"lr-decay", "0.1", "learning-rate decay factor"},
    {"decay-every", "3", "epochs between decays"},
    {"weight-decay", "1e-05", "L2 coefficient"},
    {"batch-size", "100", "mini-batch size"},
    {"epochs", "10", "training epochs"},
    {"validation", "0.1", "held-out fraction of training instances"},
};

struct Command {
    std::string name;
    std::string help;
    std::vector<Key> keys;
};

std::vector<Key> join(std::initializer_list<std::vector<Key>> parts) {
    std::vector<Key> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

const std::vector<Command>& commands() {
    static const std::vector<Command> cmds = {
        {"preprocess", "raw click log -> preprocessed corpus",
         join({{{"in", "", "raw log"},
                 {"out", "corpus.pre", "preprocessed corpus"},
                 {"format", "event_tsv", "event_tsv or session_lines"},
                 {"min-item-count", "5", "drop items seen fewer times"},
                 {"min-session-len", "2", "drop shorter sessions"},
                 {"max-session-len", "0", "drop longer sessions (0: no limit)"},
                 {"boundary", "", "split time; empty: latest end time minus test-window"},
                 {"test-window", "604800", "test span in seconds (session ordinals for session_lines)"}},
               kCommon})},
        {"build-graph", "preprocessed corpus -> global graph",
         join({{{"in", "corpus.pre", "preprocessed corpus"},
                 {"out", "global.srgg", "global graph"},
                 {"epsilon", "3", "co-occurrence window"},
                 {"max-neighbors", "12", "neighbors kept per item"}},
               kCommon})},
        {"train", "train a model and report test metrics",
         join({{{"corpus", "corpus.pre", "preprocessed corpus"},
                 {"graph", "", "global graph (srgi-fm, srgi-cm)"},
                 {"checkpoint", "model.srgp", "best checkpoint"},
                 {"save-every-epoch", "false", "also write <checkpoint>.epochN"},
                 {"metrics", "", "metrics file"},
                 {"cutoffs", "10,20", "ranking cutoffs"}},
               kModelKeys, kTrainKeys, kCommon})},
        {"evaluate", "rank the test split with a checkpoint",
         join({{{"checkpoint", "model.srgp", "checkpoint"},
                 {"corpus", "corpus.pre", "preprocessed corpus"},
                 {"graph", "", "global graph (srgi-fm, srgi-cm)"},
                 {"metrics", "", "metrics file"},
                 {"cutoffs", "10,20", "ranking cutoffs"},
                 {"batch-size", "100", "scoring batch size"}},
               kCommon})},
        {"recommend", "top-N items for prefixes read from standard input",
         join({{{"checkpoint", "model.srgp", "checkpoint"},
                 {"corpus", "corpus.pre", "preprocessed corpus (vocabulary)"},
                 {"graph", "", "global graph (srgi-fm, srgi-cm)"},
                 {"top-n", "20", "items per prefix"}},
               kCommon})},
    };
    return cmds;
}

std::string usage() {
    std::ostringstream os;
    os << "usage: srgi <command> [--config FILE] [--key value ...]\n\ncommands:\n";
    for (const auto& c : commands()) os << "  " << std::left << std::setw(12) << c.name << c.help << '\n';
    os << "\nRun 'srgi <command> --help' for its keys. Values come from built-in defaults,\n"
          "then the config file, then the command line.\n";
    return os.str();
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

class Config {
public:
    explicit Config(const Command& cmd) : cmd_(cmd) {
        for (const auto& k : cmd.keys) values_[k.name] = k.value;
    }

    bool known(const std::string& key) const { return values_.contains(key); }

    void set(const std::string& key, const std::string& value, const std::string& origin) {
        if (!known(key)) throw UsageError("unknown key '" + key + "' for " + cmd_.name + " (" + origin + ")");
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open config file '" + path + "'");
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key = value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), path + ":" + std::to_string(n));
        }
    }

    const std::string& str(const std::string& key) const { return values_.at(key); }

    std::string required(const std::string& key) const {
        const auto& v = str(key);
        if (v.empty()) throw UsageError("missing value for '" + key + "'");
        return v;
    }

    template <class T>
    T number(const std::string& key) const {
        const auto& v = str(key);
        T out{};
        const auto* end = v.data() + v.size();
        const auto res = std::from_chars(v.data(), end, out);
        if (v.empty() || res.ec != std::errc() || res.ptr != end)
            throw DataError("invalid value '" + v + "' for '" + key + "'");
        return out;
    }

    std::size_t count(const std::string& key, std::size_t min = 0) const {
        const auto& v = str(key);
        if (!v.empty() && v[0] == '-') throw DataError("'" + key + "' must be non-negative");
        const auto n = number<std::size_t>(key);
        if (n < min) throw DataError("'" + key + "' must be >= " + std::to_string(min));
        return n;
    }

    double real(const std::string& key) const {
        const double x = number<double>(key);
        if (!std::isfinite(x)) throw DataError("'" + key + "' must be finite");
        return x;
    }

    bool flag(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw DataError("invalid boolean '" + v + "' for '" + key + "'");
    }

    std::vector<std::size_t> cutoffs(const std::string& key) const {
        std::vector<std::size_t> out;
        std::stringstream ss(str(key));
        std::string part;
        while (std::getline(ss, part, ',')) {
            part = trim(part);
            std::size_t n = 0;
            const auto res = std::from_chars(part.data(), part.data() + part.size(), n);
            if (part.empty() || res.ec != std::errc() || res.ptr != part.data() + part.size() || n == 0)
                throw DataError("invalid cutoff '" + part + "' in '" + key + "'");
            out.push_back(n);
        }
        if (out.empty()) throw DataError("'" + key + "' needs at least one cutoff");
        return out;
    }

    void print(std::ostream& err) const {
        std::ostringstream os;
        os << "# srgi " << cmd_.name << " resolved configuration\n";
        for (const auto& k : cmd_.keys) os << k.name << " = " << values_.at(k.name) << '\n';
        err << os.str() << std::flush;
    }

private:
    const Command& cmd_;
    std::map<std::string, std::string> values_;
};

// ---- typed views, built before any work starts -------------------------------

model::ModelConfig model_config(const Config& c) {
    model::ModelConfig m;
    m.variant = model::parse_variant(c.str("model"));
    m.dim = c.count("dim", 1);
    m.max_len = c.count("max-len", 1);
    m.alpha = c.real("alpha");
    if (!(m.alpha > 0)) throw DataError("'alpha' must be positive");
    m.loss = bgnn::parse_loss_kind(c.str("loss"));
    m.depth = c.count("depth", 1);
    m.dropout = c.real("dropout");
    if (!(m.dropout >= 0 && m.dropout < 1)) throw DataError("'dropout' must lie in [0,1)");
    m.lambda_c = c.real("lambda-c");
    if (m.lambda_c < 0) throw DataError("'lambda-c' must be >= 0");
    m.aug1 = contrast::parse_augment(c.str("aug1"));
    m.aug2 = contrast::parse_augment(c.str("aug2"));
    m.contrast_cap = c.count("contrast-cap", 2);
    m.temperature = c.real("temperature");
    if (!(m.temperature > 0)) throw DataError("'temperature' must be positive");
    return m;
}

trainer::TrainConfig train_config(const Config& c) {
    trainer::TrainConfig t;
    t.lr = c.real("lr");
    if (!(t.lr > 0)) throw DataError("'lr' must be positive");
    t.decay = c.real("lr-decay");
    if (!(t.decay > 0 && t.decay <= 1)) throw DataError("'lr-decay' must lie in (0,1]");
    t.decay_every = c.count("decay-every", 1);
    t.weight_decay = c.real("weight-decay");
    if (t.weight_decay < 0) throw DataError("'weight-decay' must be >= 0");
    t.batch_size = c.count("batch-size", 1);
    t.epochs = c.count("epochs", 1);
    t.validation = c.real("validation");
    if (!(t.validation >= 0 && t.validation < 1)) throw DataError("'validation' must lie in [0,1)");
    t.seed = c.number<std::uint64_t>("seed");
    return t;
}

bool needs_graph(model::Variant v) { return v != model::Variant::bgnn; }

std::shared_ptr<const graphs::GlobalGraph> graph_for(model::Variant v, const std::string& path) {
    if (!needs_graph(v)) return nullptr;
    if (path.empty()) throw UsageError(model::variant_name(v) + " needs --graph");
    return std::make_shared<const graphs::GlobalGraph>(graphs::load_global_graph(path));
}

void check_lengths(const std::vector<corpus::LabeledInstance>& instances, std::size_t max_len) {
    std::size_t longest = 0;
    for (const auto& x : instances) longest = std::max(longest, x.prefix.size());
    if (longest > max_len)
        throw DataError("longest prefix has " + std::to_string(longest) + " items but max-len is " +
                        std::to_string(max_len) + "; raise max-len or filter with max-session-len");
}

void report(const trainer::RankingResult& r, const std::string& metrics_path, std::ostream& out) {
    trainer::write_metrics_table(out, r);
    trainer::write_metrics_lines(out, r);
    if (!metrics_path.empty()) {
        std::ofstream f(metrics_path, std::ios::binary);
        if (!f) throw DataError("cannot write metrics file '" + metrics_path + "'");
        trainer::write_metrics_lines(f, r);
    }
}

// ---- subcommands ---------------------------------------------------------------

int cmd_preprocess(const Config& c, std::ostream& out) {
    PreprocessOptions o;
    const std::string in_path = c.required("in"), out_path = c.required("out");
    o.format = corpus::parse_format(c.str("format"));
    o.filter.min_item_count = c.count("min-item-count", 1);
    o.filter.min_session_len = c.count("min-session-len", 2);
    if (const auto m = c.count("max-session-len"); m > 0) o.filter.max_session_len = m;
    if (!c.str("boundary").empty()) o.boundary = c.number<std::int64_t>("boundary");
    o.test_window = c.number<std::int64_t>("test-window");
    if (o.test_window < 0) throw DataError("'test-window' must be >= 0");

    std::ifstream in(in_path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + in_path + "'");
    const auto pre = preprocess(in, o);
    corpus::save_corpus(out_path, pre);
    const auto st = corpus::corpus_stats(pre);
    out << "train instances\t" << st.num_train << "\ntest instances\t" << st.num_test << "\nitems\t"
        << st.num_items << "\naverage length\t" << std::fixed << std::setprecision(2) << st.avg_len << '\n';
    return kExitOk;
}

int cmd_build_graph(const Config& c, std::ostream& out) {
    const std::string in_path = c.required("in"), out_path = c.required("out");
    const std::size_t eps = c.count("epsilon", 1);
    const std::size_t keep = c.count("max-neighbors", 1);
    const auto pre = corpus::load_corpus(in_path);
    const auto sessions = corpus::recover_sessions(pre.train);
    const auto full = graphs::build_global_graph(sessions, pre.vocab.size(), eps);
    const auto g = graphs::prune_global_graph(full, keep);
    graphs::save_global_graph(out_path, g);
    out << "items\t" << g.num_items() << "\nedges\t" << g.num_edges() << "\nedges before pruning\t"
        << full.num_edges() << '\n';
    return kExitOk;
}

int cmd_train(const Config& c, std::ostream& out) {
    const auto mcfg = model_config(c);
    const auto tcfg = train_config(c);
    const auto cut = c.cutoffs("cutoffs");
    const std::string checkpoint = c.required("checkpoint");
    const bool every_epoch = c.flag("save-every-epoch");
    const std::string metrics = c.str("metrics");
    const std::size_t threads = c.count("threads", 1);
    const std::string corpus_path = c.required("corpus");

    const auto pre = corpus::load_corpus(corpus_path);
    if (pre.train.empty()) throw DataError("corpus has no training instances");
    check_lengths(pre.train, mcfg.max_len);
    check_lengths(pre.test, mcfg.max_len);
    auto graph = graph_for(mcfg.variant, c.str("graph"));

    model::Model m(mcfg, pre.vocab.size(), tcfg.seed, graph);
    const auto split = trainer::split_validation(pre.train, tcfg.validation, tcfg.seed);
    log::info("training ", model::variant_name(mcfg.variant), " on ", split.train.size(), " instances (",
              split.validation.size(), " held out)");
    trainer::EpochCallback cb;
    if (every_epoch)
        cb = [&](const trainer::EpochReport& rep, model::Model& mm) {
            model::save_checkpoint(checkpoint + ".epoch" + std::to_string(rep.epoch + 1), mm);
        };
    const auto fitted = trainer::fit(m, split.train, split.validation, tcfg, cb);
    model::save_checkpoint(checkpoint, m);
    log::info("kept epoch ", fitted.best_epoch + 1, "; checkpoint written to ", checkpoint);

    if (pre.test.empty()) {
        log::error("corpus has no test instances; skipping evaluation");
        return kExitOk;
    }
    report(trainer::evaluate(m, pre.test, cut, tcfg.batch_size, threads), metrics, out);
    return kExitOk;
}

model::Model load_model(const Config& c) {
    const std::string path = c.required("checkpoint");
    const auto cfg = model::peek_checkpoint_config(path);
    return model::load_checkpoint(path, graph_for(cfg.variant, c.str("graph")));
}

int cmd_evaluate(const Config& c, std::ostream& out) {
    const auto cut = c.cutoffs("cutoffs");
    const std::size_t batch = c.count("batch-size", 1);
    const std::size_t threads = c.count("threads", 1);
    const std::string metrics = c.str("metrics");
    const std::string corpus_path = c.required("corpus");

    auto m = load_model(c);
    const auto pre = corpus::load_corpus(corpus_path);
    if (pre.vocab.size() != m.num_items())
        throw DataError("checkpoint has " + std::to_string(m.num_items()) + " items, corpus has " +
                        std::to_string(pre.vocab.size()));
    check_lengths(pre.test, m.config().max_len);
    report(trainer::evaluate(m, pre.test, cut, batch, threads), metrics, out);
    return kExitOk;
}

int cmd_recommend(const Config& c, std::istream& in, std::ostream& out) {
    const std::size_t n = c.count("top-n", 1);
    const std::string corpus_path = c.required("corpus");
    auto m = load_model(c);
    const auto pre = corpus::load_corpus(corpus_path);
    if (pre.vocab.size() != m.num_items()) throw DataError("checkpoint and corpus vocabularies differ in size");

    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::vector<std::string> tokens;
        for (std::string t; ss >> t;) tokens.push_back(t);
        if (tokens.empty()) continue;
        const auto recs = recommend(m, pre.vocab, tokens, n);
        std::ostringstream os;
        os << std::setprecision(6) << std::fixed;
        if (!first) os << '\n';
        for (std::size_t r = 0; r < recs.size(); ++r) os << r + 1 << '\t' << recs[r].token << '\t' << recs[r].score << '\n';
        out << os.str() << std::flush;
        first = false;
    }
    return kExitOk;
}

}  // namespace

corpus::PreprocessedCorpus preprocess(std::istream& raw, const PreprocessOptions& opts) {
    const auto sessions = corpus::parse_sessions(raw, opts.format);
    auto filtered = corpus::filter_corpus(sessions, opts.filter);
    std::int64_t boundary = 0;
    if (opts.boundary) {
        boundary = *opts.boundary;
    } else {
        std::int64_t latest = 0;
        for (const auto& s : filtered.sessions) latest = std::max(latest, s.end_time);
        boundary = latest - opts.test_window;
    }
    log::info("split boundary ", boundary);
    const auto split = corpus::temporal_split(std::move(filtered.sessions), boundary);
    std::size_t dropped = 0;
    return corpus::build_instances(split, filtered.vocab, &dropped);
}

std::vector<Recommendation> recommend(model::Model& m, const corpus::Vocabulary& vocab,
                                      const std::vector<std::string>& tokens, std::size_t n) {
    std::vector<corpus::ItemId> prefix;
    for (const auto& t : tokens) {
        const auto id = vocab.find(t);
        if (!id) throw DataError("unknown item token '" + t + "'");
        prefix.push_back(*id);
    }
    if (prefix.empty()) throw DataError("empty prefix");
    const std::size_t max_len = m.config().max_len;
    if (prefix.size() > max_len) {
        log::debug("prefix of ", prefix.size(), " items truncated to the last ", max_len);
        prefix.erase(prefix.begin(), prefix.end() - static_cast<std::ptrdiff_t>(max_len));
    }
    const std::vector<std::vector<corpus::ItemId>> prefixes{prefix};
    const std::vector<corpus::ItemId> labels{0};
    const auto logits = m.score(bgnn::make_batch(prefixes, labels));

    const auto row = logits.row_span(0);
    const double top = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (double x : row) z += std::exp(x - top);
    std::vector<corpus::ItemId> order(row.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    n = std::min(n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](corpus::ItemId a, corpus::ItemId b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    std::vector<Recommendation> out;
    for (std::size_t r = 0; r < n; ++r)
        out.push_back({vocab.token(order[r]), order[r], std::exp(row[order[r]] - top) / z});
    return out;
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    if (args.empty()) {
        err << usage();
        return kExitUsage;
    }
    if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
        out << usage();
        return kExitOk;
    }
    const auto& cmds = commands();
    const auto it = std::find_if(cmds.begin(), cmds.end(), [&](const Command& c) { return c.name == args[0]; });
    if (it == cmds.end()) {
        err << "srgi: unknown command '" << args[0] << "'\n\n" << usage();
        return kExitUsage;
    }
    const Command& cmd = *it;

    Config cfg(cmd);
    try {
        CLI::App app(cmd.help, "srgi " + cmd.name);
        std::string config_path;
        app.add_option("--config", config_path, "key = value file; command-line keys win");
        std::map<std::string, std::string> given;
        for (const auto& k : cmd.keys) {
            app.add_option("--" + k.name, given[k.name], k.help)->default_str(k.value);
        }
        std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
        try {
            app.parse(rest);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            err << "srgi " << cmd.name << ": " << e.what() << "\n\n" << app.help();
            return kExitUsage;
        }
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& k : cmd.keys)
            if (app.get_option("--" + k.name)->count() > 0) cfg.set(k.name, given[k.name], "command line");
    } catch (const UsageError& e) {
        err << "srgi " << cmd.name << ": " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        err << "srgi " << cmd.name << ": " << e.what() << '\n';
        return kExitData;
    }

    cfg.print(err);
    try {
        if (cmd.name == "preprocess") return cmd_preprocess(cfg, out);
        if (cmd.name == "build-graph") return cmd_build_graph(cfg, out);
        if (cmd.name == "train") return cmd_train(cfg, out);
        if (cmd.name == "evaluate") return cmd_evaluate(cfg, out);
        return cmd_recommend(cfg, in, out);
    } catch (const UsageError& e) {
        err << "srgi " << cmd.name << ": " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "srgi " << cmd.name << ": numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "srgi " << cmd.name << ": " << e.what() << '\n';
        return kExitData;
    }
}

}  // namespace srgi::cli
