#pragma once

// Back-off n-gram model: window counting, scored queries with traces, and
// full next-word distributions.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>

#include "mixlm/common.hpp"
#include "mixlm/corpus.hpp"

namespace mixlm {

inline constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

inline bool absent(double v) { return std::isnan(v); }

// grams are keyed by their ids packed 3 bytes each, little-endian
inline void append_packed(std::string& key, WordId id) {
    key.push_back(static_cast<char>(id & 0xff));
    key.push_back(static_cast<char>((id >> 8) & 0xff));
    key.push_back(static_cast<char>((id >> 16) & 0xff));
}

inline std::string pack_gram(std::span<const WordId> ids) {
    std::string key;
    key.reserve(ids.size() * 3);
    for (WordId id : ids) {
        if (id < 0 || id >= (1 << 24))
            throw RuntimeError("word id out of packable range");
        append_packed(key, id);
    }
    return key;
}

inline std::vector<WordId> unpack_gram(std::string_view key) {
    std::vector<WordId> ids(key.size() / 3);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(key.data()) + 3 * i;
        ids[i] = static_cast<WordId>(p[0]) | (static_cast<WordId>(p[1]) << 8) |
                 (static_cast<WordId>(p[2]) << 16);
    }
    return ids;
}

struct NGramCounts {
    int order = 0;
    WordId vocab_size = 0;
    // tables[n-1]: packed n-gram -> occurrence count
    std::vector<std::unordered_map<std::string, std::int64_t>> tables;

    std::int64_t count(std::span<const WordId> gram) const {
        const auto& t = tables.at(gram.size() - 1);
        auto it = t.find(pack_gram(gram));
        return it == t.end() ? 0 : it->second;
    }
};

// Every prediction position contributes one window per order; windows whose
// context would reach past the sentence start are padded with <s>.
template <typename SentenceRange>
NGramCounts count_ngrams(const SentenceRange& sentences, int order,
                         WordId vocab_size) {
    if (order < 1) throw ConfigError("n-gram order must be >= 1");
    NGramCounts counts;
    counts.order = order;
    counts.vocab_size = vocab_size;
    counts.tables.resize(static_cast<std::size_t>(order));

    std::string key;
    for (const EncodedSentence& s : sentences) {
        const auto& ids = s.ids;
        for (std::size_t j = 1; j < ids.size(); ++j) {
            for (int n = 1; n <= order; ++n) {
                key.clear();
                int pad = n - 1 - static_cast<int>(j);
                for (int k = 0; k < pad; ++k)
                    append_packed(key, Vocabulary::kBos);
                std::size_t lo = pad > 0 ? 0 : j - static_cast<std::size_t>(n) + 1;
                for (std::size_t k = lo; k <= j; ++k)
                    append_packed(key, ids[k]);
                ++counts.tables[static_cast<std::size_t>(n - 1)][key];
            }
        }
    }
    return counts;
}

// matched_order plus three fixed-size arrays, indexed by order (slot n-1);
// NaN marks an absent value.
//   word_p10[n-1]      stored discounted log10 p of (context suffix + word)
//   word_alpha10[n-1]  back-off weight attached to that same gram, i.e. the
//                      weight of the next step's context suffix of length n
//   applied_alpha10[k-1]  back-off weight of the query context's length-k
//                      suffix, present exactly where the recursion applied it
struct QueryTrace {
    int matched_order = 0;
    std::vector<double> word_p10;
    std::vector<double> word_alpha10;
    std::vector<double> applied_alpha10;
};

class KNModel {
public:
    struct Entry {
        double p10 = kAbsent;
        double alpha10 = kAbsent;
    };
    struct Continuation {
        WordId word;
        double p10;
    };

    KNModel() = default;
    KNModel(int order, WordId vocab_size)
        : order_(order),
          vocab_size_(vocab_size),
          tables_(static_cast<std::size_t>(order)),
          ctx_index_(static_cast<std::size_t>(order)),
          uni_p10_(static_cast<std::size_t>(vocab_size), kAbsent),
          uni_alpha10_(static_cast<std::size_t>(vocab_size), kAbsent) {}

    int order() const { return order_; }
    WordId vocab_size() const { return vocab_size_; }

    void set_unigram(WordId w, double p10) {
        uni_p10_.at(static_cast<std::size_t>(w)) = p10;
    }
    // merges: absent fields leave existing values in place
    void set_entry(std::span<const WordId> gram, double p10, double alpha10) {
        if (gram.size() == 1) {
            auto w = static_cast<std::size_t>(gram[0]);
            if (!absent(p10)) uni_p10_.at(w) = p10;
            if (!absent(alpha10)) uni_alpha10_.at(w) = alpha10;
            return;
        }
        auto& e = tables_[gram.size() - 1][pack_gram(gram)];
        if (!absent(p10)) e.p10 = p10;
        if (!absent(alpha10)) e.alpha10 = alpha10;
    }

    // context index and the dense unigram base drive full_distribution;
    // call once after filling the tables
    void finalize() {
        for (std::size_t n = 1; n < tables_.size(); ++n) {
            auto& index = ctx_index_[n];
            index.clear();
            for (const auto& [key, e] : tables_[n]) {
                if (absent(e.p10)) continue;
                auto ids = unpack_gram(key);
                std::string ctx(key.data(), key.size() - 3);
                index[ctx].push_back({ids.back(), e.p10});
            }
        }
        uni_linear_.assign(static_cast<std::size_t>(vocab_size_), 0.0);
        for (WordId w = 0; w < vocab_size_; ++w) {
            double p = uni_p10_[static_cast<std::size_t>(w)];
            if (!absent(p))
                uni_linear_[static_cast<std::size_t>(w)] = std::pow(10.0, p);
        }
    }

    double p10(std::span<const WordId> gram) const {
        if (gram.size() == 1)
            return uni_p10_[static_cast<std::size_t>(gram[0])];
        const auto& t = tables_[gram.size() - 1];
        auto it = t.find(pack_gram(gram));
        return it == t.end() ? kAbsent : it->second.p10;
    }

    double alpha10(std::span<const WordId> gram) const {
        if (gram.size() == 1)
            return uni_alpha10_[static_cast<std::size_t>(gram[0])];
        if (gram.size() >= static_cast<std::size_t>(order_)) return kAbsent;
        const auto& t = tables_[gram.size() - 1];
        auto it = t.find(pack_gram(gram));
        return it == t.end() ? kAbsent : it->second.alpha10;
    }

    // Back-off recursion over the stored tables. The context is truncated to
    // the last order-1 ids; an empty context scores the unigram directly.
    std::pair<double, QueryTrace> score_word(std::span<const WordId> context,
                                             WordId word) const {
        if (word < 0 || word >= vocab_size_)
            throw RuntimeError("score_word: word id outside vocabulary");
        if (absent(uni_p10_[static_cast<std::size_t>(word)]))
            throw RuntimeError(
                "score_word: token has no probability (map out-of-vocabulary "
                "words to <unk> first): id " + std::to_string(word));

        std::size_t clen = std::min(context.size(),
                                    static_cast<std::size_t>(order_ - 1));
        std::span<const WordId> ctx = context.subspan(context.size() - clen);

        QueryTrace trace;
        trace.word_p10.assign(static_cast<std::size_t>(order_), kAbsent);
        trace.word_alpha10.assign(static_cast<std::size_t>(order_), kAbsent);
        trace.applied_alpha10.assign(static_cast<std::size_t>(order_), kAbsent);

        std::vector<WordId> gram(clen + 1);
        for (std::size_t i = 0; i < clen; ++i) gram[i] = ctx[i];
        gram[clen] = word;

        int matched = 0;
        for (int n = 1; n <= static_cast<int>(clen) + 1; ++n) {
            std::span<const WordId> g(gram.data() + clen + 1 - n,
                                      static_cast<std::size_t>(n));
            double p = p10(g);
            trace.word_p10[static_cast<std::size_t>(n - 1)] = p;
            trace.word_alpha10[static_cast<std::size_t>(n - 1)] = alpha10(g);
            if (!absent(p)) matched = n;
        }
        trace.matched_order = matched;

        double total = trace.word_p10[static_cast<std::size_t>(matched - 1)];
        for (int k = matched; k <= static_cast<int>(clen); ++k) {
            std::span<const WordId> suffix(ctx.data() + clen - k,
                                           static_cast<std::size_t>(k));
            double a = alpha10(suffix);
            if (!absent(a)) {
                trace.applied_alpha10[static_cast<std::size_t>(k - 1)] = a;
                total += a;
            }
        }
        return {total, trace};
    }

    // Probability vector over the vocabulary. The <s> slot stays at zero.
    // Built by walking the back-off chain up from the unigram base: scale
    // everything by the suffix context's back-off weight, then overwrite the
    // explicitly stored continuations. The per-level scale is deferred into
    // one final multiply, so each call is O(V + stored continuations).
    std::vector<double> full_distribution(
        std::span<const WordId> context) const {
        std::vector<double> dist = uni_linear_;
        std::size_t clen = std::min(context.size(),
                                    static_cast<std::size_t>(order_ - 1));
        std::span<const WordId> ctx = context.subspan(context.size() - clen);
        double chain = 1.0;  // product of scales applied so far
        for (std::size_t len = 1; len <= clen; ++len) {
            std::span<const WordId> suffix(ctx.data() + clen - len, len);
            double a = alpha10(suffix);
            if (!absent(a)) chain *= std::pow(10.0, a);
            const auto& index = ctx_index_[len];
            auto it = index.find(pack_gram(suffix));
            if (it != index.end())
                for (const auto& c : it->second)
                    dist[static_cast<std::size_t>(c.word)] =
                        std::pow(10.0, c.p10) / chain;
        }
        if (chain != 1.0)
            for (auto& v : dist) v *= chain;
        return dist;
    }

    const std::unordered_map<std::string, Entry>& table(int n) const {
        return tables_.at(static_cast<std::size_t>(n - 1));
    }
    const std::unordered_map<std::string, std::vector<Continuation>>&
    context_index(int context_len) const {
        return ctx_index_.at(static_cast<std::size_t>(context_len));
    }
    const std::vector<double>& unigram_p10() const { return uni_p10_; }
    const std::vector<double>& unigram_alpha10() const { return uni_alpha10_; }

    std::size_t entry_count(int n) const {
        if (n == 1) {
            std::size_t c = 0;
            for (std::size_t w = 0; w < uni_p10_.size(); ++w)
                if (!absent(uni_p10_[w]) || !absent(uni_alpha10_[w])) ++c;
            return c;
        }
        return tables_.at(static_cast<std::size_t>(n - 1)).size();
    }

private:
    int order_ = 0;
    WordId vocab_size_ = 0;
    // tables_[n-1]: packed n-gram -> entry (unigrams live in dense arrays)
    std::vector<std::unordered_map<std::string, Entry>> tables_;
    std::vector<std::unordered_map<std::string, std::vector<Continuation>>>
        ctx_index_;
    std::vector<double> uni_p10_;
    std::vector<double> uni_alpha10_;
    std::vector<double> uni_linear_;
};

struct DistStats {
    double max = 0.0;
    double entropy = 0.0;  // nats
};

inline DistStats distribution_stats(std::span<const double> dist) {
    Eigen::Map<const Eigen::ArrayXd> p(dist.data(),
                                       static_cast<Eigen::Index>(dist.size()));
    if ((p < 0.0).any())
        throw RuntimeError("distribution_stats: negative probability");
    DistStats s;
    s.max = p.maxCoeff();
    // 0 log 0 = 0; the select discards the NaN branch values
    s.entropy = -(p > 0.0).select(p * p.log(), 0.0).sum();
    return s;
}

}  // namespace mixlm
