#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "srgi/corpus.hpp"
#include "srgi/model.hpp"

namespace srgi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

struct PreprocessOptions {
    corpus::InputFormat format = corpus::InputFormat::event_tsv;
    corpus::FilterOptions filter;
    // Sessions ending after `boundary` form the test split. Without one, the
    // boundary is the latest end time minus `test_window`.
    std::optional<std::int64_t> boundary;
    std::int64_t test_window = 7 * 24 * 3600;
};

corpus::PreprocessedCorpus preprocess(std::istream& raw, const PreprocessOptions& opts);

struct Recommendation {
    std::string token;
    corpus::ItemId item = 0;
    double score = 0;  // softmax probability
};

// Top `n` items for a prefix of vocabulary tokens. Prefixes longer than the
// position table keep their most recent items.
std::vector<Recommendation> recommend(model::Model& m, const corpus::Vocabulary& vocab,
                                      const std::vector<std::string>& tokens, std::size_t n);

}  // namespace srgi::cli
