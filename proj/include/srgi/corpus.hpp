#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace srgi::corpus {

using ItemId = std::size_t;

struct RawEvent {
    std::string session_id;
    std::int64_t timestamp = 0;
    std::string item_token;
};

// A session as read from disk: tokens in chronological order, not yet indexed.
struct RawSession {
    std::string id;
    std::vector<std::string> tokens;
    std::int64_t end_time = 0;
};

enum class Split { train, test };

struct Session {
    std::size_t id = 0;
    std::vector<ItemId> items;
    Split split = Split::train;
    std::int64_t end_time = 0;
};

class Vocabulary {
public:
    // Returns the existing index when the token is already present.
    ItemId add(std::string_view token);
    std::optional<ItemId> find(std::string_view token) const;
    const std::string& token(ItemId i) const { return tokens_.at(i); }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::unordered_map<std::string, ItemId> index_;
    std::vector<std::string> tokens_;
};

struct LabeledInstance {
    std::vector<ItemId> prefix;
    ItemId label = 0;
    Split split = Split::train;

    friend bool operator==(const LabeledInstance&, const LabeledInstance&) = default;
};

enum class InputFormat { event_tsv, session_lines };

InputFormat parse_format(std::string_view name);

// Groups events by session id (sessions in order of first appearance), sorting
// each session's events by timestamp with file order breaking ties. For
// session_lines the line ordinal is used as pseudo-time. Throws ParseError.
std::vector<RawSession> parse_sessions(std::istream& in, InputFormat format);

struct FilterOptions {
    std::size_t min_item_count = 5;
    std::size_t min_session_len = 2;
    std::optional<std::size_t> max_session_len;
};

struct FilteredCorpus {
    std::vector<Session> sessions;
    Vocabulary vocab;
};

// Repeats item-frequency and session-length filtering until nothing changes,
// then indexes the surviving tokens in order of first appearance. Throws
// DataError("empty after filtering") when no session survives.
FilteredCorpus filter_corpus(const std::vector<RawSession>& sessions, const FilterOptions& opts);

struct SplitSessions {
    std::vector<Session> train;
    std::vector<Session> test;
};

// end_time > boundary goes to test; relative order is kept within each side.
SplitSessions temporal_split(std::vector<Session> sessions, std::int64_t boundary);

// ([s1],s2), ([s1,s2],s3), ... ; empty for sessions shorter than 2.
std::vector<LabeledInstance> split_sequences(const Session& session);

struct PreprocessedCorpus {
    Vocabulary vocab;
    std::vector<LabeledInstance> train;
    std::vector<LabeledInstance> test;
};

// Splits every session into instances; test instances whose label never
// occurs in a training session are dropped and counted in `dropped_test`.
PreprocessedCorpus build_instances(const SplitSessions& split, const Vocabulary& vocab,
                                   std::size_t* dropped_test = nullptr);

// Recovers the original sessions from consecutive instances: an instance
// continues the previous one when its prefix equals the previous prefix plus
// label.
std::vector<std::vector<ItemId>> recover_sessions(const std::vector<LabeledInstance>& instances);

struct CorpusStats {
    std::size_t num_train = 0;
    std::size_t num_test = 0;
    std::size_t num_items = 0;
    // Mean of (prefix length + 1) over all labeled instances.
    double avg_len = 0.0;
    // Mean length over the recovered sessions of both splits.
    double avg_session_len = 0.0;
};

CorpusStats corpus_stats(const PreprocessedCorpus& corpus);

// "#vocab m", m token lines, then "train|test<TAB>prefix<TAB>label" lines.
void write_corpus(std::ostream& out, const PreprocessedCorpus& corpus);
PreprocessedCorpus read_corpus(std::istream& in);

PreprocessedCorpus load_corpus(const std::string& path);
void save_corpus(const std::string& path, const PreprocessedCorpus& corpus);

}  // namespace srgi::corpus
