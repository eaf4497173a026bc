#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "mixlm/analysis.hpp"

using namespace mixlm;

namespace {

// independent greedy partitioner used as the binning oracle
std::vector<int> oracle_bins(const std::vector<std::int64_t>& counts, int k) {
    std::vector<int> order(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        auto ca = counts[static_cast<std::size_t>(a)];
        auto cb = counts[static_cast<std::size_t>(b)];
        return ca != cb ? ca > cb : a < b;
    });
    std::int64_t total = 0;
    for (auto c : counts) total += c;
    std::vector<int> bin_of(counts.size());
    int bin = 0;
    std::int64_t cum = 0;
    for (std::size_t idx = 0; idx < order.size(); ++idx) {
        int w = order[idx];
        bin_of[static_cast<std::size_t>(w)] = bin;
        cum += counts[static_cast<std::size_t>(w)];
        bool reached = bin < k - 1 &&
                       cum * k >= static_cast<std::int64_t>(bin + 1) * total;
        bool forced = bin < k - 1 &&
                      static_cast<int>(order.size() - idx - 1) == k - bin - 1;
        if (reached || forced) ++bin;
    }
    return bin_of;
}

}  // namespace

TEST_CASE("equal-count words split symmetrically") {
    std::vector<std::int64_t> counts{5, 5, 5, 5};
    auto bins = frequency_bins(counts, 2);
    REQUIRE(bins.bin_of == std::vector<int>{0, 0, 1, 1});
    REQUIRE(bins.bin_mass == std::vector<std::int64_t>{10, 10});
}

TEST_CASE("one bin holds everything") {
    std::vector<std::int64_t> counts{9, 3, 1};
    auto bins = frequency_bins(counts, 1);
    REQUIRE(bins.bin_of == std::vector<int>{0, 0, 0});
    REQUIRE(bins.bin_mass == std::vector<std::int64_t>{13});
}

TEST_CASE("zipf-like counts match the brute-force partition") {
    std::vector<std::int64_t> counts{100, 50, 25, 12, 6, 3, 2, 1, 1, 1};
    auto bins = frequency_bins(counts, 3);
    REQUIRE(bins.bin_of[0] == 0);
    REQUIRE(bins.bin_of[1] == 1);
    for (std::size_t i = 2; i < counts.size(); ++i)
        REQUIRE(bins.bin_of[i] == 2);
    REQUIRE(bins.bin_of == oracle_bins(counts, 3));

    std::mt19937_64 rng(17);
    for (int it = 0; it < 40; ++it) {
        std::vector<std::int64_t> c(5 + rng() % 40);
        for (auto& v : c) v = static_cast<std::int64_t>(rng() % 500);
        int k = 1 + static_cast<int>(rng() % c.size());
        auto got = frequency_bins(c, k);
        REQUIRE(got.bin_of == oracle_bins(c, k));
        // conservation, exact
        std::int64_t total = 0, mass = 0;
        for (auto v : c) total += v;
        for (auto m : got.bin_mass) mass += m;
        REQUIRE(mass == total);
        for (int b = 0; b < k; ++b)
            REQUIRE(got.bin_types[static_cast<std::size_t>(b)] >= 1);
    }
}

TEST_CASE("binning rejects more bins than types") {
    std::vector<std::int64_t> counts{1, 2};
    REQUIRE_THROWS_AS(frequency_bins(counts, 3), ConfigError);
    REQUIRE_THROWS_AS(frequency_bins(counts, 0), ConfigError);
}

TEST_CASE("identical models yield unit ratios; single bin equals global") {
    std::vector<std::int64_t> counts{10, 5, 3, 1};
    auto one = frequency_bins(counts, 1);
    std::vector<TargetScore> steps;
    std::mt19937_64 rng(23);
    std::vector<double> probs;
    for (int i = 0; i < 200; ++i) {
        double p = 0.05 + (rng() % 1000) / 1200.0;
        auto w = static_cast<WordId>(rng() % 4);
        steps.push_back({w, p, p, p});
        probs.push_back(p);
    }
    auto report = per_bin_report(steps, one);
    REQUIRE(report.rows.size() == 1);
    REQUIRE_THAT(report.rows[0].ratio_ng_nn,
                 Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(report.rows[0].ratio_ens_nn,
                 Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(report.rows[0].ppl_nn,
                 Catch::Matchers::WithinRel(perplexity(probs), 1e-12));
}

TEST_CASE("per-bin cross-entropies recombine to the global value") {
    std::vector<std::int64_t> counts{40, 20, 9, 7, 3, 2, 1, 1};
    auto bins = frequency_bins(counts, 3);
    std::mt19937_64 rng(29);
    std::vector<TargetScore> steps;
    for (int i = 0; i < 500; ++i) {
        auto w = static_cast<WordId>(rng() % counts.size());
        auto u = [&]() { return 0.02 + (rng() % 1000) / 1100.0; };
        steps.push_back({w, u(), u(), u()});
    }
    auto report = per_bin_report(steps, bins);

    std::int64_t n = 0;
    double recombined = 0, global = 0;
    for (const auto& row : report.rows) {
        if (row.n_targets == 0) continue;
        recombined += std::log(row.ppl_nn) * static_cast<double>(row.n_targets);
        n += row.n_targets;
    }
    for (const auto& s : steps) global -= std::log(s.p_nn);
    REQUIRE(n == static_cast<std::int64_t>(steps.size()));
    REQUIRE_THAT(recombined, Catch::Matchers::WithinAbs(global, 1e-9));
}

TEST_CASE("empty bins are marked absent, not zero") {
    std::vector<std::int64_t> counts{10, 5, 1};
    auto bins = frequency_bins(counts, 3);
    std::vector<TargetScore> steps{{0, 0.5, 0.5, 0.5}};
    auto report = per_bin_report(steps, bins);
    REQUIRE(report.rows[0].n_targets == 1);
    REQUIRE(report.rows[1].n_targets == 0);
    REQUIRE(std::isnan(report.rows[1].ppl_ng));
    REQUIRE(std::isnan(report.rows[2].ppl_ens));
    auto csv = bins_csv(bins, report);
    REQUIRE(csv.find("NA") != std::string::npos);
    REQUIRE(csv.front() == '#');
}

TEST_CASE("capitalization fractions and the selection rule") {
    std::vector<std::string> surfaces{"The", "cat", "Sat",  "123", "-",
                                      "Dog", "ran", "Away", "now", "Then"};
    // p_ng - p_nn > 0.5 at indices 0, 2, 6
    std::vector<StepProbs> steps(10, StepProbs{0.3, 0.2});
    steps[0] = {0.05, 0.9};   // gap 0.85, capitalized
    steps[2] = {0.1, 0.95};   // gap 0.85, capitalized
    steps[6] = {0.2, 0.8};    // gap 0.6, lowercase
    auto stats = capitalization_stats(surfaces, steps, 0.5);
    // alphabetic-initial: 8 of 10; capitalized overall: The Sat Dog Away Then
    REQUIRE(stats.n_overall == 8);
    REQUIRE_THAT(stats.frac_overall,
                 Catch::Matchers::WithinAbs(5.0 / 8.0, 1e-15));
    REQUIRE(stats.n_selected == 3);
    REQUIRE_THAT(stats.frac_selected,
                 Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));

    // all-lowercase corpus: zero capitalized, empty selection is NaN
    std::vector<std::string> lower{"a", "b"};
    std::vector<StepProbs> even(2, StepProbs{0.4, 0.4});
    auto ls = capitalization_stats(lower, even, 0.5);
    REQUIRE(ls.frac_overall == 0.0);
    REQUIRE(ls.n_selected == 0);
    REQUIRE(std::isnan(ls.frac_selected));

    // order invariance
    std::vector<std::string> rev(surfaces.rbegin(), surfaces.rend());
    std::vector<StepProbs> rsteps(steps.rbegin(), steps.rend());
    auto rstats = capitalization_stats(rev, rsteps, 0.5);
    REQUIRE(rstats.frac_overall == stats.frac_overall);
    REQUIRE(rstats.frac_selected == stats.frac_selected);
}

TEST_CASE("t-test degenerate cases") {
    std::vector<double> a{10.0, 10.1, 9.9};
    REQUIRE_THAT(significance_test(a, a),
                 Catch::Matchers::WithinAbs(1.0, 1e-12));

    std::vector<double> big;
    std::vector<double> small;
    for (int i = 0; i < 5; ++i) {
        small.insert(small.end(), {10.0, 10.1, 9.9});
        big.insert(big.end(), {20.0, 20.1, 19.9});
    }
    REQUIRE(significance_test(small, big) < 0.001);

    std::vector<double> short_run{1.0};
    REQUIRE_THROWS_AS(significance_test(short_run, a), RuntimeError);
}

TEST_CASE("t-test matches the reference implementation") {
    auto lines = read_lines(std::string(MIXLM_FIXTURE_DIR) +
                            "/ttest_cases.tsv");
    int cases = 0;
    for (const auto& line : lines) {
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_ws(line);
        std::size_t pos = 0;
        long na = parse_long(fields[pos++], "na");
        std::vector<double> a, b;
        for (long i = 0; i < na; ++i)
            a.push_back(parse_double(fields[pos++], "a"));
        long nb = parse_long(fields[pos++], "nb");
        for (long i = 0; i < nb; ++i)
            b.push_back(parse_double(fields[pos++], "b"));
        double want = parse_double(fields[pos++], "pvalue");
        REQUIRE(pos == fields.size());
        double got = significance_test(a, b);
        REQUIRE_THAT(got, Catch::Matchers::WithinAbs(want, 1e-6));
        ++cases;
    }
    REQUIRE(cases == 20);
}
