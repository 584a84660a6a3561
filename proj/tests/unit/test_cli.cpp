#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli_fixture.hpp"
#include "srgi/corpus.hpp"
#include "srgi/model.hpp"

using namespace srgi;
using testing::run_cli;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Preprocessed corpus and graph in `dir`.
void prepare(const testing::TempDir& dir) {
    testing::ClickLog log;
    log.write(dir.file("clicks.tsv"));
    const auto b = std::to_string(log.boundary());
    REQUIRE(run_cli({"preprocess", "--in", dir.file("clicks.tsv"), "--out", dir.file("c.pre"), "--min-item-count", "2",
                     "--boundary", b})
                .code == 0);
    REQUIRE(run_cli({"build-graph", "--in", dir.file("c.pre"), "--out", dir.file("g.srgg")}).code == 0);
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run_cli({}).code == cli::kExitUsage);
    const auto unknown = run_cli({"frobnicate"});
    CHECK(unknown.code == cli::kExitUsage);
    CHECK(unknown.err.find("unknown command 'frobnicate'") != std::string::npos);
    CHECK(run_cli({"train", "--colour", "red"}).code == cli::kExitUsage);
    CHECK(run_cli({"preprocess", "--in"}).code == cli::kExitUsage);
    const auto help = run_cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("build-graph") != std::string::npos);
    const auto sub = run_cli({"train", "--help"});
    CHECK(sub.code == 0);
    CHECK(sub.out.find("--lambda-c") != std::string::npos);
}

TEST_CASE("config files") {
    testing::TempDir dir("cfg");
    testing::ClickLog().write(dir.file("clicks.tsv"));
    SUBCASE("unknown key exits with 1") {
        std::ofstream(dir.file("bad.cfg")) << "in = x\nflavour = mint\n";
        const auto r = run_cli({"preprocess", "--config", dir.file("bad.cfg")});
        CHECK(r.code == cli::kExitUsage);
        CHECK(r.err.find("flavour") != std::string::npos);
    }
    SUBCASE("malformed line exits with 1") {
        std::ofstream(dir.file("bad.cfg")) << "just words\n";
        CHECK(run_cli({"preprocess", "--config", dir.file("bad.cfg")}).code == cli::kExitUsage);
    }
    SUBCASE("command line beats the file, which beats the defaults") {
        std::ofstream(dir.file("p.cfg")) << "# comment\nin = " << dir.file("clicks.tsv") << "\nout = "
                                         << dir.file("a.pre") << "\nmin-item-count = 3\nmin-session-len = 3\n";
        const auto r = run_cli({"preprocess", "--config", dir.file("p.cfg"), "--min-item-count", "4"});
        CHECK(r.code == 0);
        CHECK(r.err.find("# srgi preprocess resolved configuration") != std::string::npos);
        CHECK(r.err.find("min-item-count = 4\n") != std::string::npos);
        CHECK(r.err.find("min-session-len = 3\n") != std::string::npos);
        CHECK(r.err.find("epsilon") == std::string::npos);
        CHECK(r.err.find("format = event_tsv\n") != std::string::npos);
        CHECK(std::filesystem::exists(dir.file("a.pre")));
    }
    SUBCASE("missing config file is a data error") {
        CHECK(run_cli({"preprocess", "--config", dir.file("nope.cfg")}).code == cli::kExitData);
    }
}

TEST_CASE("data errors exit with 2") {
    testing::TempDir dir("data");
    std::ofstream(dir.file("broken.tsv")) << "s1\tnot-a-time\ta\n";
    const auto r = run_cli({"preprocess", "--in", dir.file("broken.tsv"), "--out", dir.file("x.pre")});
    CHECK(r.code == cli::kExitData);
    CHECK(r.err.find("line 1") != std::string::npos);
    CHECK(run_cli({"preprocess", "--in", dir.file("missing.tsv"), "--out", dir.file("x.pre")}).code == cli::kExitData);
    CHECK(run_cli({"train", "--corpus", dir.file("missing.pre"), "--dim", "-3"}).code == cli::kExitData);
    CHECK(run_cli({"train", "--corpus", dir.file("missing.pre"), "--model", "gru4rec"}).code == cli::kExitData);
}

TEST_CASE("train, evaluate and recommend from the command line") {
    testing::TempDir dir("pipe");
    prepare(dir);
    const std::vector<std::string> common = {"--corpus", dir.file("c.pre"), "--dim", "8", "--batch-size", "50"};
    auto with = [&](std::vector<std::string> args) {
        args.insert(args.end(), common.begin(), common.end());
        return run_cli(args);
    };

    const auto t = with({"train", "--epochs", "1", "--checkpoint", dir.file("m.srgp"), "--metrics", dir.file("m.txt")});
    REQUIRE(t.code == 0);
    CHECK(std::filesystem::exists(dir.file("m.srgp")));
    CHECK_FALSE(std::filesystem::exists(dir.file("m.srgp.epoch1")));
    CHECK(t.out.find("MRR\t20\t") != std::string::npos);
    CHECK(slurp(dir.file("m.txt")).rfind("P\t10\t", 0) == 0);
    CHECK(model::peek_checkpoint_config(dir.file("m.srgp")).dim == 8);

    const auto e = run_cli({"evaluate", "--checkpoint", dir.file("m.srgp"), "--corpus", dir.file("c.pre"), "--metrics",
                            dir.file("e.txt")});
    REQUIRE(e.code == 0);
    CHECK(slurp(dir.file("e.txt")) == slurp(dir.file("m.txt")));
    const auto threaded = run_cli({"evaluate", "--checkpoint", dir.file("m.srgp"), "--corpus", dir.file("c.pre"),
                                   "--threads", "3", "--batch-size", "7"});
    CHECK(threaded.out == e.out);

    const auto r = run_cli({"recommend", "--checkpoint", dir.file("m.srgp"), "--corpus", dir.file("c.pre"), "--top-n", "5"},
                           "i1 i2\n\ni3\n");
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::size_t rows = 0, blanks = 0;
    while (std::getline(lines, line)) (line.empty() ? blanks : rows)++;
    CHECK(rows == 10);
    CHECK(blanks == 1);
    CHECK(r.out.rfind("1\ti", 0) == 0);

    const auto oov = run_cli({"recommend", "--checkpoint", dir.file("m.srgp"), "--corpus", dir.file("c.pre")}, "i1 zz\n");
    CHECK(oov.code == cli::kExitData);
    CHECK(oov.err.find("unknown item token 'zz'") != std::string::npos);

    SUBCASE("global-graph variants need a graph") {
        CHECK(with({"train", "--model", "srgi-fm", "--epochs", "1"}).code == cli::kExitUsage);
        const auto fm = with({"train", "--model", "srgi-fm", "--epochs", "1", "--graph", dir.file("g.srgg"), "--checkpoint",
                              dir.file("fm.srgp"), "--save-every-epoch", "true"});
        CHECK(fm.code == 0);
        CHECK(std::filesystem::exists(dir.file("fm.srgp.epoch1")));
        CHECK(run_cli({"evaluate", "--checkpoint", dir.file("fm.srgp"), "--corpus", dir.file("c.pre")}).code ==
              cli::kExitUsage);
        const auto cm = with({"train", "--model", "srgi-cm", "--epochs", "1", "--graph", dir.file("g.srgg"), "--checkpoint",
                              dir.file("cm.srgp"), "--lambda-c", "10"});
        CHECK(cm.code == 0);
    }
    SUBCASE("prefixes longer than max-len are rejected for training") {
        CHECK(with({"train", "--epochs", "1", "--max-len", "2"}).code == cli::kExitData);
    }
}

TEST_CASE("preprocess boundary defaults to the last week") {
    std::ostringstream raw;
    raw << "a\t0\tx\na\t1\ty\nb\t1000000\tx\nb\t1000001\ty\nc\t1000002\tx\nc\t1000003\ty\n";
    std::istringstream in(raw.str());
    cli::PreprocessOptions o;
    o.filter = {1, 2, std::nullopt};
    const auto pre = cli::preprocess(in, o);
    CHECK(pre.train.size() == 1);
    CHECK(pre.test.size() == 2);
}

TEST_CASE("recommendations are sorted probabilities") {
    corpus::Vocabulary v;
    for (auto t : {"a", "b", "c", "d"}) v.add(t);
    auto cfg = model::ModelConfig{};
    cfg.dim = 4;
    cfg.max_len = 2;
    model::Model m(cfg, 4, 1);
    const auto recs = cli::recommend(m, v, {"a", "b", "c"}, 10);
    REQUIRE(recs.size() == 4);
    double total = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        total += recs[i].score;
        CHECK(v.token(recs[i].item) == recs[i].token);
        if (i) CHECK(recs[i - 1].score >= recs[i].score);
    }
    CHECK(total == doctest::Approx(1.0));
    // Truncation keeps the most recent items.
    const auto tail = cli::recommend(m, v, {"b", "c"}, 10);
    for (std::size_t i = 0; i < recs.size(); ++i) CHECK(tail[i].score == recs[i].score);
    CHECK_THROWS_AS(cli::recommend(m, v, {"q"}, 3), DataError);
}
