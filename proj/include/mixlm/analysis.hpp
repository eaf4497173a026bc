#pragma once

// Diagnostics over completed scoring runs: frequency-binned per-model
// perplexities, capitalization statistics on steps where the n-gram expert
// beats the neural one, and Welch's t-test over per-run perplexities.

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <span>

#include "mixlm/common.hpp"
#include "mixlm/ensemble.hpp"
#include "json.hpp"

namespace mixlm {

struct FrequencyBinning {
    int k = 0;
    std::vector<int> bin_of;          // per word id
    std::vector<std::int64_t> bin_mass;  // training-count mass per bin
    std::vector<int> bin_types;
    std::int64_t total_mass = 0;
};

// Greedy sweep in descending frequency; a bin closes once the cumulative
// mass reaches its share boundary (exact integer arithmetic). Trailing bins
// are guaranteed at least one type each.
inline FrequencyBinning frequency_bins(std::span<const std::int64_t> counts,
                                       int k) {
    const int types = static_cast<int>(counts.size());
    if (k < 1) throw ConfigError("frequency_bins: need at least one bin");
    if (k > types)
        throw ConfigError("frequency_bins: more bins than word types");

    std::vector<int> order(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (counts[static_cast<std::size_t>(a)] !=
            counts[static_cast<std::size_t>(b)])
            return counts[static_cast<std::size_t>(a)] >
                   counts[static_cast<std::size_t>(b)];
        return a < b;
    });

    FrequencyBinning out;
    out.k = k;
    out.bin_of.assign(counts.size(), 0);
    out.bin_mass.assign(static_cast<std::size_t>(k), 0);
    out.bin_types.assign(static_cast<std::size_t>(k), 0);
    for (auto c : counts) out.total_mass += c;

    int bin = 0;
    std::int64_t cum = 0;
    for (int idx = 0; idx < types; ++idx) {
        int w = order[static_cast<std::size_t>(idx)];
        out.bin_of[static_cast<std::size_t>(w)] = bin;
        out.bin_mass[static_cast<std::size_t>(bin)] +=
            counts[static_cast<std::size_t>(w)];
        out.bin_types[static_cast<std::size_t>(bin)] += 1;
        cum += counts[static_cast<std::size_t>(w)];
        if (bin < k - 1) {
            bool share_reached =
                cum * k >= static_cast<std::int64_t>(bin + 1) * out.total_mass;
            bool must_close = types - idx - 1 == k - bin - 1;
            if (share_reached || must_close) ++bin;
        }
    }
    return out;
}

// One scored test position with its realized target.
struct TargetScore {
    WordId target;
    double p_ng;
    double p_nn;
    double p_ens;  // static ensemble
};

struct BinRow {
    std::int64_t n_targets = 0;
    double ppl_ng = std::numeric_limits<double>::quiet_NaN();
    double ppl_nn = std::numeric_limits<double>::quiet_NaN();
    double ppl_ens = std::numeric_limits<double>::quiet_NaN();
    double ratio_ng_nn = std::numeric_limits<double>::quiet_NaN();
    double ratio_ens_nn = std::numeric_limits<double>::quiet_NaN();
};

struct BinReport {
    std::vector<BinRow> rows;
};

inline BinReport per_bin_report(std::span<const TargetScore> steps,
                                const FrequencyBinning& bins) {
    std::vector<double> ce_ng(static_cast<std::size_t>(bins.k), 0.0);
    std::vector<double> ce_nn = ce_ng, ce_ens = ce_ng;
    std::vector<std::int64_t> n(static_cast<std::size_t>(bins.k), 0);
    for (const auto& s : steps) {
        if (s.target < 0 ||
            static_cast<std::size_t>(s.target) >= bins.bin_of.size())
            throw RuntimeError("per_bin_report: target id has no bin");
        auto b = static_cast<std::size_t>(
            bins.bin_of[static_cast<std::size_t>(s.target)]);
        if (!(s.p_ng > 0.0 && s.p_nn > 0.0 && s.p_ens > 0.0))
            throw RuntimeError("per_bin_report: nonpositive probability");
        ce_ng[b] -= std::log(s.p_ng);
        ce_nn[b] -= std::log(s.p_nn);
        ce_ens[b] -= std::log(s.p_ens);
        ++n[b];
    }
    BinReport report;
    for (int b = 0; b < bins.k; ++b) {
        auto i = static_cast<std::size_t>(b);
        BinRow row;
        row.n_targets = n[i];
        if (n[i] > 0) {
            double m = static_cast<double>(n[i]);
            row.ppl_ng = std::exp(ce_ng[i] / m);
            row.ppl_nn = std::exp(ce_nn[i] / m);
            row.ppl_ens = std::exp(ce_ens[i] / m);
            row.ratio_ng_nn = row.ppl_ng / row.ppl_nn;
            row.ratio_ens_nn = row.ppl_ens / row.ppl_nn;
        }
        report.rows.push_back(row);
    }
    return report;
}

struct CapitalizationStats {
    double frac_selected = std::numeric_limits<double>::quiet_NaN();
    double frac_overall = std::numeric_limits<double>::quiet_NaN();
    std::int64_t n_selected = 0;   // alphabetic-initial tokens in selection
    std::int64_t n_overall = 0;    // alphabetic-initial tokens overall
};

// "Capitalized" means the first character is an ASCII uppercase letter;
// tokens whose first character is not a letter are ignored entirely.
inline CapitalizationStats capitalization_stats(
    std::span<const std::string> surfaces, std::span<const StepProbs> steps,
    double threshold = 0.5) {
    if (surfaces.size() != steps.size())
        throw RuntimeError("capitalization_stats: size mismatch");
    std::int64_t cap_sel = 0, cap_all = 0;
    CapitalizationStats out;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        if (surfaces[i].empty()) continue;
        char c = surfaces[i][0];
        bool upper = c >= 'A' && c <= 'Z';
        bool lower = c >= 'a' && c <= 'z';
        if (!upper && !lower) continue;
        ++out.n_overall;
        cap_all += upper ? 1 : 0;
        if (steps[i].p_ng - steps[i].p_nn > threshold) {
            ++out.n_selected;
            cap_sel += upper ? 1 : 0;
        }
    }
    if (out.n_overall > 0)
        out.frac_overall =
            static_cast<double>(cap_all) / static_cast<double>(out.n_overall);
    if (out.n_selected > 0)
        out.frac_selected = static_cast<double>(cap_sel) /
                            static_cast<double>(out.n_selected);
    return out;
}

// Welch's two-sample two-tailed t-test.
inline double significance_test(std::span<const double> a,
                                std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        throw RuntimeError("significance_test: need at least 2 runs per side");
    auto stats = [](std::span<const double> x) {
        double mean = 0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(x.size());
        double var = 0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(x.size() - 1);
        return std::pair<double, double>(mean, var);
    };
    auto [ma, va] = stats(a);
    auto [mb, vb] = stats(b);
    double na = static_cast<double>(a.size());
    double nb = static_cast<double>(b.size());
    double se2 = va / na + vb / nb;
    if (se2 <= 0.0) return ma == mb ? 1.0 : 0.0;
    double t = (ma - mb) / std::sqrt(se2);
    double df = se2 * se2 /
                (va * va / (na * na * (na - 1)) + vb * vb / (nb * nb * (nb - 1)));
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

inline std::string bins_csv(const FrequencyBinning& bins,
                            const BinReport& report) {
    std::string out =
        "# bin,types,mass,targets,ppl_ngram,ppl_neural,ppl_ensemble,"
        "ratio_ngram_neural,ratio_ensemble_neural\n";
    auto cell = [](double v) {
        return std::isnan(v) ? std::string("NA") : format_double(v);
    };
    for (int b = 0; b < bins.k; ++b) {
        auto i = static_cast<std::size_t>(b);
        const auto& row = report.rows[i];
        out += std::to_string(b) + "," + std::to_string(bins.bin_types[i]) +
               "," + std::to_string(bins.bin_mass[i]) + "," +
               std::to_string(row.n_targets) + "," + cell(row.ppl_ng) + "," +
               cell(row.ppl_nn) + "," + cell(row.ppl_ens) + "," +
               cell(row.ratio_ng_nn) + "," + cell(row.ratio_ens_nn) + "\n";
    }
    return out;
}

inline nlohmann::json bins_json(const FrequencyBinning& bins,
                                const BinReport& report) {
    auto num = [](double v) {
        return std::isnan(v) ? nlohmann::json() : nlohmann::json(v);
    };
    nlohmann::json rows = nlohmann::json::array();
    for (int b = 0; b < bins.k; ++b) {
        auto i = static_cast<std::size_t>(b);
        const auto& row = report.rows[i];
        rows.push_back({{"bin", b},
                        {"types", bins.bin_types[i]},
                        {"mass", bins.bin_mass[i]},
                        {"targets", row.n_targets},
                        {"ppl_ngram", num(row.ppl_ng)},
                        {"ppl_neural", num(row.ppl_nn)},
                        {"ppl_ensemble", num(row.ppl_ens)},
                        {"ratio_ngram_neural", num(row.ratio_ng_nn)},
                        {"ratio_ensemble_neural", num(row.ratio_ens_nn)}});
    }
    return rows;
}

}  // namespace mixlm
