#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "cli.hpp"
#include "srgi/contrast.hpp"
#include "srgi/corpus.hpp"
#include "srgi/error.hpp"
#include "srgi/graphs.hpp"
#include "srgi/model.hpp"
#include "srgi/trainer.hpp"

namespace py = pybind11;
using namespace srgi;

namespace {

py::tuple run_cli(const std::vector<std::string>& args, const std::string& stdin_text) {
    std::istringstream in(stdin_text);
    std::ostringstream out, err;
    int code = 0;
    {
        py::gil_scoped_release release;
        code = cli::run(args, in, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

py::dict corpus_stats(const std::string& path) {
    const auto st = corpus::corpus_stats(corpus::load_corpus(path));
    py::dict d;
    d["num_train"] = st.num_train;
    d["num_test"] = st.num_test;
    d["num_items"] = st.num_items;
    d["avg_len"] = st.avg_len;
    d["avg_session_len"] = st.avg_session_len;
    return d;
}

std::vector<std::vector<std::pair<corpus::ItemId, std::uint32_t>>> global_graph(
    const std::vector<std::vector<corpus::ItemId>>& sessions, std::size_t num_items, std::size_t epsilon,
    std::size_t max_neighbors) {
    auto g = graphs::build_global_graph(sessions, num_items, epsilon);
    if (max_neighbors > 0) g = graphs::prune_global_graph(g, max_neighbors);
    std::vector<std::vector<std::pair<corpus::ItemId, std::uint32_t>>> out(num_items);
    for (corpus::ItemId v = 0; v < num_items; ++v)
        for (const auto& nb : graphs::neighbors_of(g, v)) out[v].emplace_back(nb.item, nb.weight);
    return out;
}

double contrastive_loss(const std::vector<std::vector<double>>& z1, const std::vector<std::vector<double>>& z2,
                        double temperature) {
    auto to_matrix = [](const std::vector<std::vector<double>>& rows) {
        const std::size_t c = rows.empty() ? 0 : rows[0].size();
        nd::Matrix m(rows.size(), c);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != c) throw ShapeError("ragged rows");
            for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j];
        }
        return m;
    };
    nd::Tape t;
    return contrast::contrastive_loss(t.constant(to_matrix(z1)), t.constant(to_matrix(z2)), temperature).value()(0, 0);
}

class Recommender {
public:
    Recommender(const std::string& checkpoint, const std::string& corpus_path, const std::string& graph_path)
        : pre_(corpus::load_corpus(corpus_path)),
          model_(model::load_checkpoint(checkpoint, graph_path.empty() ? nullptr
                                                                      : std::make_shared<const graphs::GlobalGraph>(
                                                                            graphs::load_global_graph(graph_path)))) {
        if (pre_.vocab.size() != model_.num_items()) throw DataError("checkpoint and corpus vocabularies differ in size");
    }

    std::vector<std::pair<std::string, double>> recommend(const std::vector<std::string>& tokens, std::size_t n) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& r : cli::recommend(model_, pre_.vocab, tokens, n)) out.emplace_back(r.token, r.score);
        return out;
    }

    py::dict evaluate(const std::vector<std::size_t>& cutoffs, std::size_t batch_size, std::size_t threads) {
        trainer::RankingResult r;
        {
            py::gil_scoped_release release;
            r = trainer::evaluate(model_, pre_.test, cutoffs, batch_size, threads);
        }
        py::dict d;
        for (std::size_t i = 0; i < r.cutoffs.size(); ++i) {
            d[py::str("P@" + std::to_string(r.cutoffs[i]))] = r.precision[i];
            d[py::str("MRR@" + std::to_string(r.cutoffs[i]))] = r.mrr[i];
        }
        d["count"] = r.count;
        return d;
    }

    std::string variant() const { return model::variant_name(model_.config().variant); }
    std::size_t dim() const { return model_.config().dim; }
    std::size_t num_items() const { return model_.num_items(); }
    std::vector<std::string> vocabulary() const { return pre_.vocab.tokens(); }

private:
    corpus::PreprocessedCorpus pre_;
    model::Model model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Session-based recommendation with global item graphs";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("run_cli", &run_cli, py::arg("args"), py::arg("stdin") = "",
          "Run the command-line tool in-process; returns (exit_code, stdout, stderr).");
    m.def("corpus_stats", &corpus_stats, py::arg("path"));
    m.def("global_graph", &global_graph, py::arg("sessions"), py::arg("num_items"), py::arg("epsilon") = 3,
          py::arg("max_neighbors") = 12,
          "Neighbor lists [(item, weight), ...] per item, heaviest first; max_neighbors=0 skips pruning.");
    m.def("contrastive_loss", &contrastive_loss, py::arg("z1"), py::arg("z2"), py::arg("temperature") = 1.0);
    m.def("target_rank",
          [](const std::vector<double>& scores, corpus::ItemId target) { return trainer::target_rank(scores, target); },
          py::arg("scores"), py::arg("target"));

    py::class_<Recommender>(m, "Recommender")
        .def(py::init<const std::string&, const std::string&, const std::string&>(), py::arg("checkpoint"),
             py::arg("corpus"), py::arg("graph") = "")
        .def("recommend", &Recommender::recommend, py::arg("tokens"), py::arg("n") = 20)
        .def("evaluate", &Recommender::evaluate, py::arg("cutoffs") = std::vector<std::size_t>{10, 20},
             py::arg("batch_size") = 100, py::arg("threads") = 1)
        .def_property_readonly("variant", &Recommender::variant)
        .def_property_readonly("dim", &Recommender::dim)
        .def_property_readonly("num_items", &Recommender::num_items)
        .def_property_readonly("vocabulary", &Recommender::vocabulary);
}
