#pragma once

// Modified Kneser-Ney estimation over window counts, emitted in back-off
// form: stored probabilities are the interpolated values, back-off weights
// are the left-over interpolation mass per context.

#include <array>
#include <cmath>

#include "mixlm/ngram.hpp"

namespace mixlm {

struct KnOptions {
    // drop grams of order >= 2 whose raw count falls below this (0/1 = keep all)
    std::int64_t prune_min_count = 0;
};

struct KnResult {
    KNModel model;
    std::vector<std::string> warnings;
};

namespace detail {

struct Discounts {
    std::array<double, 3> d{};  // for adjusted counts 1, 2, >=3
    double of(std::int64_t count) const {
        return d[static_cast<std::size_t>(std::min<std::int64_t>(count, 3) - 1)];
    }
};

inline Discounts compute_discounts(
    const std::unordered_map<std::string, std::int64_t>& adjusted, int order_n,
    std::vector<std::string>& warnings) {
    std::int64_t n1 = 0, n2 = 0, n3 = 0, n4 = 0;
    for (const auto& [key, c] : adjusted) {
        if (c == 1) ++n1;
        else if (c == 2) ++n2;
        else if (c == 3) ++n3;
        else if (c == 4) ++n4;
    }
    Discounts out;
    out.d = {0.75, 0.75, 0.75};
    bool degenerate = false;
    if (n1 > 0 && n2 > 0) {
        double y = static_cast<double>(n1) / (n1 + 2.0 * n2);
        out.d[0] = 1.0 - 2.0 * y * n2 / n1;
        if (n3 > 0) {
            out.d[1] = 2.0 - 3.0 * y * n3 / n2;
            if (n4 > 0)
                out.d[2] = 3.0 - 4.0 * y * n4 / n3;
            else
                degenerate = true;
        } else {
            degenerate = true;
        }
    } else {
        degenerate = true;
    }
    if (degenerate)
        warnings.push_back("order " + std::to_string(order_n) +
                           ": degenerate count-of-counts (n1=" +
                           std::to_string(n1) + " n2=" + std::to_string(n2) +
                           " n3=" + std::to_string(n3) + " n4=" +
                           std::to_string(n4) +
                           "); affected discounts fixed at 0.75");
    for (std::size_t k = 0; k < 3; ++k) {
        if (!(out.d[k] >= 0.0 &&
              out.d[k] <= static_cast<double>(k + 1))) {
            warnings.push_back("order " + std::to_string(order_n) +
                               ": discount D" + std::to_string(k + 1) +
                               " out of range (" + format_double(out.d[k]) +
                               "); fixed at 0.75");
            out.d[k] = 0.75;
        }
    }
    return out;
}

struct ContextAgg {
    std::int64_t total = 0;
    std::int64_t n1 = 0, n2 = 0, n3p = 0;

    double gamma(const Discounts& d) const {
        return (d.d[0] * n1 + d.d[1] * n2 + d.d[2] * n3p) /
               static_cast<double>(total);
    }
};

}  // namespace detail

inline KnResult estimate_kn(const NGramCounts& counts,
                            const KnOptions& opts = {}) {
    const int order = counts.order;
    const WordId vocab = counts.vocab_size;
    if (order < 1 || counts.tables.empty() || counts.tables[0].empty())
        throw ConfigError("estimate_kn: empty counts");

    KnResult result;
    result.model = KNModel(order, vocab);
    auto& model = result.model;
    auto& warnings = result.warnings;

    // adjusted counts: raw at the top order, continuation counts below,
    // except grams starting with <s>, which keep raw counts (nothing can
    // extend them to the left)
    std::vector<std::unordered_map<std::string, std::int64_t>> adj(
        static_cast<std::size_t>(order));
    adj[static_cast<std::size_t>(order - 1)] =
        counts.tables[static_cast<std::size_t>(order - 1)];
    if (opts.prune_min_count > 1 && order >= 2) {
        auto& t = adj[static_cast<std::size_t>(order - 1)];
        for (auto it = t.begin(); it != t.end();)
            it = it->second < opts.prune_min_count ? t.erase(it) : ++it;
    }
    std::string bos_key;
    append_packed(bos_key, Vocabulary::kBos);

    for (int n = order - 1; n >= 1; --n) {
        std::unordered_map<std::string, std::int64_t> cont;
        cont.reserve(adj[static_cast<std::size_t>(n)].size());
        for (const auto& [key, c] : adj[static_cast<std::size_t>(n)])
            ++cont[std::string(key.substr(3))];
        auto& out = adj[static_cast<std::size_t>(n - 1)];
        for (const auto& [key, raw] :
             counts.tables[static_cast<std::size_t>(n - 1)]) {
            if (n >= 2 && opts.prune_min_count > 1 &&
                raw < opts.prune_min_count)
                continue;
            std::int64_t a;
            if (key.compare(0, 3, bos_key) == 0) {
                a = raw;
            } else {
                auto it = cont.find(key);
                a = it == cont.end() ? 0 : it->second;
            }
            if (a > 0) out.emplace(key, a);
        }
    }

    std::vector<detail::Discounts> disc(static_cast<std::size_t>(order));
    for (int n = 1; n <= order; ++n)
        disc[static_cast<std::size_t>(n - 1)] = detail::compute_discounts(
            adj[static_cast<std::size_t>(n - 1)], n, warnings);

    // unigrams, interpolated with the uniform distribution over the
    // vocabulary minus <s>
    const auto& d1 = disc[0];
    std::int64_t total1 = 0;
    detail::ContextAgg agg1;
    for (const auto& [key, a] : adj[0]) {
        total1 += a;
        agg1.total += a;
        if (a == 1) ++agg1.n1;
        else if (a == 2) ++agg1.n2;
        else ++agg1.n3p;
    }
    double gamma1 = agg1.gamma(d1);
    double uniform = 1.0 / static_cast<double>(vocab - 1);
    std::vector<double> prob_prev(static_cast<std::size_t>(vocab), 0.0);
    for (WordId w = 0; w < vocab; ++w) {
        if (w == Vocabulary::kBos) continue;
        std::string key;
        append_packed(key, w);
        auto it = adj[0].find(key);
        std::int64_t a = it == adj[0].end() ? 0 : it->second;
        double discounted = a == 0 ? 0.0 : (a - d1.of(a));
        double p = discounted / static_cast<double>(total1) + gamma1 * uniform;
        prob_prev[static_cast<std::size_t>(w)] = p;
        model.set_unigram(w, std::log10(p));
    }

    std::unordered_map<std::string, double> interp_prev;  // unused at n=2
    for (int n = 2; n <= order; ++n) {
        const auto& a_n = adj[static_cast<std::size_t>(n - 1)];
        const auto& d = disc[static_cast<std::size_t>(n - 1)];

        std::unordered_map<std::string, detail::ContextAgg> ctx;
        ctx.reserve(a_n.size() / 2 + 1);
        for (const auto& [key, a] : a_n) {
            auto& agg = ctx[std::string(key.substr(0, key.size() - 3))];
            agg.total += a;
            if (a == 1) ++agg.n1;
            else if (a == 2) ++agg.n2;
            else ++agg.n3p;
        }

        std::unordered_map<std::string, double> interp_cur;
        interp_cur.reserve(a_n.size());
        for (const auto& [key, a] : a_n) {
            std::string ctx_key(key.substr(0, key.size() - 3));
            const auto& agg = ctx.at(ctx_key);
            double gamma = agg.gamma(d);
            std::string suffix_key(key.substr(3));
            double lower;
            if (n == 2) {
                auto ids = unpack_gram(suffix_key);
                lower = prob_prev[static_cast<std::size_t>(ids[0])];
            } else {
                lower = interp_prev.at(suffix_key);
            }
            double p = (a - d.of(a)) / static_cast<double>(agg.total) +
                       gamma * lower;
            interp_cur.emplace(key, p);
            auto ids = unpack_gram(key);
            model.set_entry(ids, std::log10(p), kAbsent);
        }
        for (const auto& [ctx_key, agg] : ctx) {
            auto ids = unpack_gram(ctx_key);
            model.set_entry(ids, kAbsent, std::log10(agg.gamma(d)));
        }
        interp_prev = std::move(interp_cur);
    }

    model.finalize();
    return result;
}

}  // namespace mixlm
