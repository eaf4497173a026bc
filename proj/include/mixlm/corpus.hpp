#pragma once

// Text ingestion: vocabulary construction, sentence encoding, dataset splits.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <unordered_map>

#include "mixlm/common.hpp"

namespace mixlm {

inline constexpr const char* kUnkWord = "<unk>";
inline constexpr const char* kBosWord = "<s>";
inline constexpr const char* kEosWord = "</s>";

class Vocabulary {
public:
    static constexpr WordId kUnk = 0;
    static constexpr WordId kBos = 1;
    static constexpr WordId kEos = 2;

    Vocabulary() {
        add_entry(kUnkWord, 0);
        add_entry(kBosWord, 0);
        add_entry(kEosWord, 0);
    }

    WordId id(std::string_view word) const {
        auto it = word_to_id_.find(std::string(word));
        return it == word_to_id_.end() ? kUnk : it->second;
    }
    bool contains(std::string_view word) const {
        return word_to_id_.count(std::string(word)) != 0;
    }
    const std::string& word(WordId id) const { return id_to_word_.at(id); }
    std::int64_t count(WordId id) const { return counts_.at(id); }
    WordId size() const { return static_cast<WordId>(id_to_word_.size()); }

    void add_entry(std::string word, std::int64_t count) {
        WordId id = size();
        word_to_id_.emplace(word, id);
        id_to_word_.push_back(std::move(word));
        counts_.push_back(count);
    }
    void set_count(WordId id, std::int64_t c) { counts_.at(id) = c; }

    // one "word<TAB>count" line per id
    void save(const std::string& path) const {
        std::string body;
        for (WordId i = 0; i < size(); ++i) {
            body += id_to_word_[i];
            body += '\t';
            body += std::to_string(counts_[i]);
            body += '\n';
        }
        write_text_file(path, body);
    }

    static Vocabulary load(const std::string& path) {
        Vocabulary v;
        v.word_to_id_.clear();
        v.id_to_word_.clear();
        v.counts_.clear();
        auto lines = read_lines(path);
        for (const auto& line : lines) {
            if (line.empty()) continue;
            auto fields = split_on(line, '\t');
            if (fields.size() != 2)
                throw RuntimeError("malformed vocabulary line: " + line);
            v.add_entry(std::string(fields[0]),
                        parse_long(fields[1], "vocab count"));
        }
        if (v.size() < 3 || v.id_to_word_[kUnk] != kUnkWord ||
            v.id_to_word_[kBos] != kBosWord || v.id_to_word_[kEos] != kEosWord)
            throw RuntimeError("vocabulary file lacks the special tokens: " +
                               path);
        return v;
    }

private:
    std::unordered_map<std::string, WordId> word_to_id_;
    std::vector<std::string> id_to_word_;
    std::vector<std::int64_t> counts_;
};

// ids begin with <s> and end with </s>; targets are positions 1..size-1,
// with position index t = 1 for the first word after <s>.
struct EncodedSentence {
    std::vector<WordId> ids;

    int num_targets() const { return static_cast<int>(ids.size()) - 1; }
    WordId target(int t) const { return ids.at(static_cast<std::size_t>(t)); }
};

inline Vocabulary build_vocab(const std::vector<std::string>& lines,
                              int min_count, std::optional<int> max_size) {
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    if (max_size && *max_size < 3)
        throw ConfigError("max_size must be at least 3 to hold the specials");

    std::unordered_map<std::string, std::int64_t> raw;
    std::int64_t total_tokens = 0;
    std::int64_t n_sentences = 0;
    for (const auto& line : lines) {
        for (auto tok : split_ws(line)) {
            ++raw[std::string(tok)];
            ++total_tokens;
        }
        ++n_sentences;
    }
    if (total_tokens == 0) throw ConfigError("empty corpus");

    std::vector<std::pair<std::string, std::int64_t>> kept;
    kept.reserve(raw.size());
    for (auto& [w, c] : raw)
        if (c >= min_count) kept.emplace_back(w, c);
    // descending count, ties broken lexicographically
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (max_size && kept.size() > static_cast<std::size_t>(*max_size - 3))
        kept.resize(static_cast<std::size_t>(*max_size - 3));

    Vocabulary vocab;
    std::int64_t kept_tokens = 0;
    for (auto& [w, c] : kept) {
        vocab.add_entry(w, c);
        kept_tokens += c;
    }
    vocab.set_count(Vocabulary::kUnk, total_tokens - kept_tokens);
    vocab.set_count(Vocabulary::kBos, n_sentences);
    vocab.set_count(Vocabulary::kEos, n_sentences);
    return vocab;
}

inline EncodedSentence encode(std::string_view line, const Vocabulary& vocab) {
    EncodedSentence s;
    auto toks = split_ws(line);
    s.ids.reserve(toks.size() + 2);
    s.ids.push_back(Vocabulary::kBos);
    for (auto tok : toks) s.ids.push_back(vocab.id(tok));
    s.ids.push_back(Vocabulary::kEos);
    return s;
}

inline std::string decode(const EncodedSentence& s, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 1; i + 1 < s.ids.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += vocab.word(s.ids[i]);
    }
    return out;
}

// Either all ratios (normalized, largest-remainder rounding) or all absolute
// counts; in count mode one trailing partition may be "rest".
struct SplitSpec {
    struct Part {
        std::string name;
        double ratio = -1.0;    // set in ratio mode
        std::int64_t count = -1;  // set in count mode; -1 with rest=true
        bool rest = false;
    };
    std::vector<Part> parts;
    std::uint64_t seed = 0;
};

struct CorpusSplit {
    std::vector<std::string> names;
    std::vector<std::vector<std::int64_t>> line_indices;  // sorted per part

    const std::vector<std::int64_t>& part(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return line_indices[i];
        throw RuntimeError("no such split partition: " + std::string(name));
    }
};

inline CorpusSplit split_corpus(std::int64_t n_sentences,
                                const SplitSpec& spec) {
    if (spec.parts.empty()) throw ConfigError("split spec has no partitions");
    std::vector<std::int64_t> sizes(spec.parts.size(), 0);

    bool ratio_mode = spec.parts.front().ratio >= 0.0;
    if (ratio_mode) {
        double sum = 0;
        for (const auto& p : spec.parts) {
            if (p.ratio < 0) throw ConfigError("mixed ratio/count split spec");
            sum += p.ratio;
        }
        if (sum <= 0) throw ConfigError("split ratios sum to zero");
        // largest remainder keeps the partition sizes covering the corpus
        std::vector<double> frac(spec.parts.size());
        std::int64_t assigned = 0;
        for (std::size_t i = 0; i < spec.parts.size(); ++i) {
            double exact = n_sentences * spec.parts[i].ratio / sum;
            sizes[i] = static_cast<std::int64_t>(exact);
            frac[i] = exact - static_cast<double>(sizes[i]);
            assigned += sizes[i];
        }
        std::vector<std::size_t> order(spec.parts.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) {
                             return frac[a] > frac[b];
                         });
        for (std::size_t k = 0; assigned < n_sentences; ++k, ++assigned)
            ++sizes[order[k % order.size()]];
    } else {
        std::int64_t total = 0;
        int rest_at = -1;
        for (std::size_t i = 0; i < spec.parts.size(); ++i) {
            const auto& p = spec.parts[i];
            if (p.rest) {
                if (rest_at >= 0)
                    throw ConfigError("split spec has two rest partitions");
                rest_at = static_cast<int>(i);
            } else {
                if (p.count < 0)
                    throw ConfigError("mixed ratio/count split spec");
                sizes[i] = p.count;
                total += p.count;
            }
        }
        if (total > n_sentences)
            throw ConfigError("split counts (" + std::to_string(total) +
                              ") exceed corpus size (" +
                              std::to_string(n_sentences) + ")");
        if (rest_at >= 0)
            sizes[static_cast<std::size_t>(rest_at)] = n_sentences - total;
        else if (total != n_sentences)
            throw ConfigError(
                "split counts must cover the corpus exactly "
                "(or declare one partition as 'rest'); got " +
                std::to_string(total) + " of " + std::to_string(n_sentences));
    }

    std::vector<std::int64_t> idx(static_cast<std::size_t>(n_sentences));
    for (std::int64_t i = 0; i < n_sentences; ++i)
        idx[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(spec.seed);
    deterministic_shuffle(idx, rng);

    CorpusSplit out;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < spec.parts.size(); ++i) {
        out.names.push_back(spec.parts[i].name);
        std::vector<std::int64_t> part(
            idx.begin() + static_cast<std::ptrdiff_t>(pos),
            idx.begin() + static_cast<std::ptrdiff_t>(pos + sizes[i]));
        std::sort(part.begin(), part.end());
        out.line_indices.push_back(std::move(part));
        pos += static_cast<std::size_t>(sizes[i]);
    }
    return out;
}

// split manifests: one line index per line, one file per partition
inline void save_split_part(const std::string& path,
                            const std::vector<std::int64_t>& indices) {
    std::string body;
    for (auto i : indices) {
        body += std::to_string(i);
        body += '\n';
    }
    write_text_file(path, body);
}

inline std::vector<std::int64_t> load_split_part(const std::string& path) {
    std::vector<std::int64_t> out;
    for (const auto& line : read_lines(path))
        if (!line.empty()) out.push_back(parse_long(line, "split index"));
    return out;
}

}  // namespace mixlm
