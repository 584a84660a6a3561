#include "srgi/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "srgi/error.hpp"
#include "srgi/log.hpp"

namespace srgi::corpus {

namespace {

bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t n = 0;
        if (c < 0x80) n = 0;
        else if ((c >> 5) == 0x6) n = 1;
        else if ((c >> 4) == 0xE) n = 2;
        else if ((c >> 3) == 0x1E) n = 3;
        else return false;
        for (std::size_t k = 1; k <= n; ++k) {
            if (i + k >= s.size() || (static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
        }
        i += n + 1;
    }
    return true;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
    Int v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

std::string_view chomp(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

}  // namespace

ItemId Vocabulary::add(std::string_view token) {
    auto it = index_.find(std::string(token));
    if (it != index_.end()) return it->second;
    const ItemId id = tokens_.size();
    tokens_.emplace_back(token);
    index_.emplace(tokens_.back(), id);
    return id;
}

std::optional<ItemId> Vocabulary::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

InputFormat parse_format(std::string_view name) {
    if (name == "event_tsv") return InputFormat::event_tsv;
    if (name == "session_lines") return InputFormat::session_lines;
    throw DataError("unknown input format '" + std::string(name) + "' (expected event_tsv or session_lines)");
}

std::vector<RawSession> parse_sessions(std::istream& in, InputFormat format) {
    std::vector<RawSession> sessions;
    std::string line;
    std::size_t lineno = 0;

    if (format == InputFormat::session_lines) {
        while (std::getline(in, line)) {
            ++lineno;
            const std::string_view l = chomp(line);
            if (!valid_utf8(l)) throw ParseError(lineno, "invalid UTF-8");
            auto toks = split_ws(l);
            if (toks.empty()) continue;
            RawSession s;
            s.id = std::to_string(sessions.size());
            s.end_time = static_cast<std::int64_t>(sessions.size());
            for (auto t : toks) s.tokens.emplace_back(t);
            sessions.push_back(std::move(s));
        }
        return sessions;
    }

    struct Pending {
        std::vector<std::pair<std::int64_t, std::string>> events;
    };
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<std::string> ids;
    std::vector<Pending> pending;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view l = chomp(line);
        if (l.empty()) continue;
        if (!valid_utf8(l)) throw ParseError(lineno, "invalid UTF-8");
        const auto cols = split(l, '\t');
        if (cols.size() != 3)
            throw ParseError(lineno, "expected 3 tab-separated columns, found " + std::to_string(cols.size()));
        const auto ts = parse_int<std::int64_t>(cols[1]);
        if (!ts) throw ParseError(lineno, "timestamp is not an integer");
        if (*ts < 0) throw ParseError(lineno, "negative timestamp");
        if (cols[0].empty() || cols[2].empty()) throw ParseError(lineno, "empty session id or item token");
        auto [it, fresh] = slot.try_emplace(std::string(cols[0]), pending.size());
        if (fresh) {
            ids.emplace_back(cols[0]);
            pending.emplace_back();
        }
        pending[it->second].events.emplace_back(*ts, std::string(cols[2]));
    }
    sessions.reserve(pending.size());
    for (std::size_t i = 0; i < pending.size(); ++i) {
        auto& ev = pending[i].events;
        std::stable_sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        RawSession s;
        s.id = ids[i];
        s.end_time = ev.back().first;
        for (auto& e : ev) s.tokens.push_back(std::move(e.second));
        sessions.push_back(std::move(s));
    }
    return sessions;
}

FilteredCorpus filter_corpus(const std::vector<RawSession>& raw, const FilterOptions& opts) {
    if (opts.min_item_count < 1) throw DataError("min_item_count must be >= 1");
    if (opts.min_session_len < 2) throw DataError("min_session_len must be >= 2");
    if (opts.max_session_len && *opts.max_session_len < opts.min_session_len)
        throw DataError("max_session_len must be >= min_session_len");

    // Work on a provisional indexing so each pass is integer-only.
    Vocabulary provisional;
    struct Work {
        std::size_t origin;
        std::vector<ItemId> items;
    };
    std::vector<Work> work;
    work.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        Work w{i, {}};
        for (const auto& t : raw[i].tokens) w.items.push_back(provisional.add(t));
        work.push_back(std::move(w));
    }

    std::vector<std::size_t> count(provisional.size());
    bool changed = true;
    while (changed) {
        changed = false;
        const std::size_t before = work.size();
        if (opts.max_session_len) {
            std::erase_if(work, [&](const Work& w) { return w.items.size() > *opts.max_session_len; });
        }
        std::fill(count.begin(), count.end(), 0);
        for (const auto& w : work)
            for (ItemId it : w.items) ++count[it];
        for (auto& w : work) {
            const std::size_t n = w.items.size();
            std::erase_if(w.items, [&](ItemId it) { return count[it] < opts.min_item_count; });
            if (w.items.size() != n) changed = true;
        }
        std::erase_if(work, [&](const Work& w) { return w.items.size() < opts.min_session_len; });
        if (work.size() != before) changed = true;
    }
    if (work.empty()) throw DataError("empty after filtering");

    FilteredCorpus out;
    out.sessions.reserve(work.size());
    for (const auto& w : work) {
        Session s;
        s.id = w.origin;
        s.end_time = raw[w.origin].end_time;
        for (ItemId it : w.items) s.items.push_back(out.vocab.add(provisional.token(it)));
        out.sessions.push_back(std::move(s));
    }
    return out;
}

SplitSessions temporal_split(std::vector<Session> sessions, std::int64_t boundary) {
    SplitSessions out;
    for (auto& s : sessions) {
        if (s.end_time > boundary) {
            s.split = Split::test;
            out.test.push_back(std::move(s));
        } else {
            s.split = Split::train;
            out.train.push_back(std::move(s));
        }
    }
    if (out.train.empty() || out.test.empty())
        log::info("temporal split put every session on one side (train=", out.train.size(), ", test=", out.test.size(),
                  ")");
    return out;
}

std::vector<LabeledInstance> split_sequences(const Session& session) {
    std::vector<LabeledInstance> out;
    const auto& s = session.items;
    if (s.size() < 2) return out;
    out.reserve(s.size() - 1);
    for (std::size_t i = 1; i < s.size(); ++i) {
        LabeledInstance inst;
        inst.prefix.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(i));
        inst.label = s[i];
        inst.split = session.split;
        out.push_back(std::move(inst));
    }
    return out;
}

PreprocessedCorpus build_instances(const SplitSessions& split, const Vocabulary& vocab, std::size_t* dropped_test) {
    PreprocessedCorpus out;
    out.vocab = vocab;
    std::vector<bool> seen(vocab.size(), false);
    for (const auto& s : split.train) {
        for (ItemId it : s.items) seen[it] = true;
        auto inst = split_sequences(s);
        std::move(inst.begin(), inst.end(), std::back_inserter(out.train));
    }
    std::size_t dropped = 0;
    for (const auto& s : split.test) {
        for (auto& inst : split_sequences(s)) {
            if (!seen[inst.label]) {
                ++dropped;
                continue;
            }
            out.test.push_back(std::move(inst));
        }
    }
    if (dropped > 0) log::info("dropped ", dropped, " test instances whose label never occurs in training");
    if (dropped_test) *dropped_test = dropped;
    return out;
}

std::vector<std::vector<ItemId>> recover_sessions(const std::vector<LabeledInstance>& instances) {
    std::vector<std::vector<ItemId>> out;
    for (const auto& inst : instances) {
        if (!out.empty()) {
            auto& cur = out.back();
            if (inst.prefix.size() == cur.size() && std::equal(inst.prefix.begin(), inst.prefix.end(), cur.begin())) {
                cur.push_back(inst.label);
                continue;
            }
        }
        std::vector<ItemId> s = inst.prefix;
        s.push_back(inst.label);
        out.push_back(std::move(s));
    }
    return out;
}

CorpusStats corpus_stats(const PreprocessedCorpus& corpus) {
    CorpusStats st;
    st.num_train = corpus.train.size();
    st.num_test = corpus.test.size();
    st.num_items = corpus.vocab.size();
    std::size_t total = 0;
    for (const auto* part : {&corpus.train, &corpus.test})
        for (const auto& inst : *part) total += inst.prefix.size() + 1;
    const std::size_t n = st.num_train + st.num_test;
    st.avg_len = n ? static_cast<double>(total) / static_cast<double>(n) : 0.0;

    std::size_t slen = 0, scount = 0;
    for (const auto* part : {&corpus.train, &corpus.test}) {
        for (const auto& s : recover_sessions(*part)) {
            slen += s.size();
            ++scount;
        }
    }
    st.avg_session_len = scount ? static_cast<double>(slen) / static_cast<double>(scount) : 0.0;
    return st;
}

void write_corpus(std::ostream& out, const PreprocessedCorpus& corpus) {
    out << "#vocab " << corpus.vocab.size() << '\n';
    for (const auto& t : corpus.vocab.tokens()) out << t << '\n';
    auto emit = [&](const LabeledInstance& inst) {
        out << (inst.split == Split::train ? "train" : "test") << '\t';
        for (std::size_t i = 0; i < inst.prefix.size(); ++i) out << (i ? " " : "") << inst.prefix[i];
        out << '\t' << inst.label << '\n';
    };
    for (const auto& inst : corpus.train) emit(inst);
    for (const auto& inst : corpus.test) emit(inst);
}

PreprocessedCorpus read_corpus(std::istream& in) {
    PreprocessedCorpus c;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(1, "missing '#vocab m' header");
    ++lineno;
    std::string_view head = chomp(line);
    if (head.substr(0, 7) != "#vocab ") throw ParseError(lineno, "missing '#vocab m' header");
    const auto m = parse_int<std::size_t>(head.substr(7));
    if (!m) throw ParseError(lineno, "vocabulary size is not an integer");
    for (std::size_t i = 0; i < *m; ++i) {
        if (!std::getline(in, line)) throw ParseError(lineno + 1, "vocabulary truncated");
        ++lineno;
        const std::string tok(chomp(line));
        if (tok.empty()) throw ParseError(lineno, "empty vocabulary token");
        if (c.vocab.add(tok) != i) throw ParseError(lineno, "duplicate vocabulary token '" + tok + "'");
    }
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view l = chomp(line);
        if (l.empty()) continue;
        const auto cols = split(l, '\t');
        if (cols.size() != 3) throw ParseError(lineno, "expected split<TAB>prefix<TAB>label");
        LabeledInstance inst;
        if (cols[0] == "train") inst.split = Split::train;
        else if (cols[0] == "test") inst.split = Split::test;
        else throw ParseError(lineno, "split must be 'train' or 'test'");
        for (auto t : split_ws(cols[1])) {
            const auto v = parse_int<std::size_t>(t);
            if (!v || *v >= *m) throw ParseError(lineno, "bad prefix index '" + std::string(t) + "'");
            inst.prefix.push_back(*v);
        }
        if (inst.prefix.empty()) throw ParseError(lineno, "empty prefix");
        const auto lab = parse_int<std::size_t>(cols[2]);
        if (!lab || *lab >= *m) throw ParseError(lineno, "bad label index");
        inst.label = *lab;
        (inst.split == Split::train ? c.train : c.test).push_back(std::move(inst));
    }
    return c;
}

PreprocessedCorpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file '" + path + "'");
    return read_corpus(in);
}

void save_corpus(const std::string& path, const PreprocessedCorpus& corpus) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file '" + path + "'");
    write_corpus(out, corpus);
}

}  // namespace srgi::corpus
