// Acceptance suite: every criterion prints one PASS/FAIL line. The long
// directional experiment lives in its own binary (acceptance_directional).

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <iostream>
#include <map>
#include <sstream>

#include "mixlm/analysis.hpp"
#include "mixlm/arpa.hpp"
#include "mixlm/ensemble.hpp"
#include "mixlm/gating.hpp"
#include "mixlm/kn.hpp"
#include "mixlm/neural.hpp"
#include "mixlm/synth.hpp"

using namespace mixlm;

namespace {

void verdict(int criterion, bool pass, const std::string& what) {
    std::cout << "[ACCEPT] criterion " << criterion << ": "
              << (pass ? "PASS" : "FAIL") << " - " << what << std::endl;
    REQUIRE(pass);
}

std::vector<std::string> synth_lines(int sentences, std::uint64_t seed) {
    std::stringstream buf;
    SynthConfig cfg;
    cfg.sentences = sentences;
    cfg.seed = seed;
    generate_corpus(buf, cfg);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(buf, line)) lines.push_back(line);
    return lines;
}

// ---------------------------------------------------------------------
// Independent smoothing oracle: interpolated form computed directly from
// count maps by recursion, with no back-off tables at all. Plain maps and
// vectors on purpose; shares nothing with the library implementation.
struct SmoothingOracle {
    int order;
    WordId vocab;
    // per order: gram -> raw window count
    std::vector<std::map<std::vector<WordId>, std::int64_t>> raw;
    std::vector<std::map<std::vector<WordId>, std::int64_t>> adjusted;
    std::vector<std::array<double, 3>> discount;
    struct Ctx {
        std::int64_t total = 0;
        std::int64_t n1 = 0, n2 = 0, n3p = 0;
    };
    std::vector<std::map<std::vector<WordId>, Ctx>> ctx;

    SmoothingOracle(const std::vector<EncodedSentence>& sentences, int n,
                    WordId v)
        : order(n), vocab(v), raw(static_cast<std::size_t>(n + 1)),
          adjusted(static_cast<std::size_t>(n + 1)),
          discount(static_cast<std::size_t>(n + 1)),
          ctx(static_cast<std::size_t>(n + 1)) {
        for (const auto& s : sentences)
            for (std::size_t j = 1; j < s.ids.size(); ++j)
                for (int k = 1; k <= n; ++k) {
                    std::vector<WordId> g;
                    for (int q = k - 1; q >= 0; --q) {
                        int idx = static_cast<int>(j) - q;
                        g.push_back(idx < 0 ? Vocabulary::kBos
                                            : s.ids[static_cast<std::size_t>(idx)]);
                    }
                    ++raw[static_cast<std::size_t>(k)][g];
                }
        adjusted[static_cast<std::size_t>(n)] = raw[static_cast<std::size_t>(n)];
        for (int k = n - 1; k >= 1; --k) {
            std::map<std::vector<WordId>, std::int64_t> cont;
            for (const auto& [g, c] : adjusted[static_cast<std::size_t>(k + 1)])
                ++cont[std::vector<WordId>(g.begin() + 1, g.end())];
            for (const auto& [g, c] : raw[static_cast<std::size_t>(k)])
                adjusted[static_cast<std::size_t>(k)][g] =
                    g.front() == Vocabulary::kBos ? c : cont.at(g);
        }
        for (int k = 1; k <= n; ++k) {
            std::int64_t n1 = 0, n2 = 0, n3 = 0, n4 = 0;
            for (const auto& [g, c] : adjusted[static_cast<std::size_t>(k)]) {
                n1 += c == 1;
                n2 += c == 2;
                n3 += c == 3;
                n4 += c == 4;
            }
            std::array<double, 3> d{0.75, 0.75, 0.75};
            if (n1 > 0 && n2 > 0) {
                double y = static_cast<double>(n1) / (n1 + 2.0 * n2);
                d[0] = 1.0 - 2.0 * y * n2 / n1;
                if (n3 > 0) {
                    d[1] = 2.0 - 3.0 * y * n3 / n2;
                    if (n4 > 0) d[2] = 3.0 - 4.0 * y * n4 / n3;
                }
            }
            for (std::size_t q = 0; q < 3; ++q)
                if (!(d[q] >= 0.0 && d[q] <= static_cast<double>(q + 1)))
                    d[q] = 0.75;
            discount[static_cast<std::size_t>(k)] = d;
            for (const auto& [g, c] : adjusted[static_cast<std::size_t>(k)]) {
                std::vector<WordId> context(g.begin(), g.end() - 1);
                auto& agg = ctx[static_cast<std::size_t>(k)][context];
                agg.total += c;
                agg.n1 += c == 1;
                agg.n2 += c == 2;
                agg.n3p += c >= 3;
            }
        }
    }

    double disc_of(int k, std::int64_t c) const {
        return discount[static_cast<std::size_t>(k)]
                       [static_cast<std::size_t>(std::min<std::int64_t>(c, 3) -
                                                 1)];
    }

    double gamma(int k, const Ctx& agg) const {
        const auto& d = discount[static_cast<std::size_t>(k)];
        return (d[0] * agg.n1 + d[1] * agg.n2 + d[2] * agg.n3p) /
               static_cast<double>(agg.total);
    }

    // interpolated probability, straight recursion
    double prob(std::vector<WordId> context, WordId w) const {
        int len = std::min<int>(static_cast<int>(context.size()), order - 1);
        context.erase(context.begin(),
                      context.end() - static_cast<std::ptrdiff_t>(len));
        return prob_at(len + 1, context, w);
    }

    double prob_at(int k, const std::vector<WordId>& context, WordId w) const {
        if (k == 1) {
            const auto& agg = ctx[1].at({});
            auto it = adjusted[1].find({w});
            std::int64_t a = it == adjusted[1].end() ? 0 : it->second;
            double discounted = a == 0 ? 0.0 : a - disc_of(1, a);
            return discounted / static_cast<double>(agg.total) +
                   gamma(1, agg) / static_cast<double>(vocab - 1);
        }
        std::vector<WordId> lower(context.begin() + 1, context.end());
        auto cit = ctx[static_cast<std::size_t>(k)].find(context);
        if (cit == ctx[static_cast<std::size_t>(k)].end())
            return prob_at(k - 1, lower, w);  // absent back-off weight = 1
        std::vector<WordId> g = context;
        g.push_back(w);
        auto it = adjusted[static_cast<std::size_t>(k)].find(g);
        std::int64_t a =
            it == adjusted[static_cast<std::size_t>(k)].end() ? 0 : it->second;
        double discounted = a == 0 ? 0.0 : a - disc_of(k, a);
        return discounted / static_cast<double>(cit->second.total) +
               gamma(k, cit->second) * prob_at(k - 1, lower, w);
    }
};

std::vector<GateSentence> accept_gate_data(int n_sentences, int dim,
                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto u = [&]() { return (rng() % 100000) / 100000.0; };
    std::vector<GateSentence> out;
    for (int s = 0; s < n_sentences; ++s) {
        GateSentence sent;
        int len = 4 + static_cast<int>(rng() % 8);
        for (int t = 0; t < len; ++t) {
            GateStep step;
            step.features = Eigen::VectorXd::Zero(dim);
            for (int k = 0; k < dim; ++k) step.features[k] = 2.0 * u() - 1.0;
            bool nn_better = step.features[0] > 0.0;
            if (u() > 0.85) nn_better = !nn_better;
            double hi = 0.35 + 0.4 * u(), lo = 0.02 + 0.1 * u();
            step.p_nn = nn_better ? hi : lo;
            step.p_ng = nn_better ? lo : hi;
            sent.push_back(std::move(step));
        }
        out.push_back(std::move(sent));
    }
    return out;
}

}  // namespace

TEST_CASE("criterion 1: smoothing matches the brute-force recursion") {
    auto t0 = std::chrono::steady_clock::now();
    auto lines = synth_lines(400, 2024);
    auto vocab = build_vocab(lines, 1, std::nullopt);
    std::vector<EncodedSentence> sentences;
    std::int64_t tokens = 0;
    for (const auto& l : lines) {
        sentences.push_back(encode(l, vocab));
        tokens += sentences.back().num_targets();
    }
    REQUIRE(tokens <= 10000);

    const int order = 5;
    auto counts = count_ngrams(sentences, order, vocab.size());
    auto kn = estimate_kn(counts);
    const auto& model = kn.model;
    SmoothingOracle oracle(sentences, order, vocab.size());

    // every stored context of every order, plus the empty context
    std::vector<std::vector<WordId>> contexts{{}};
    for (int n = 1; n < order; ++n)
        for (const auto& [key, aggs] : oracle.ctx[static_cast<std::size_t>(n + 1)])
            contexts.push_back(key);

    double worst = 0;
    double worst_sum = 0;
    std::int64_t pairs = 0;
    for (const auto& c : contexts) {
        auto dist = model.full_distribution(c);
        double sum = 0;
        for (WordId w = 0; w < vocab.size(); ++w) {
            if (w == Vocabulary::kBos) continue;
            auto [lp, trace] = model.score_word(c, w);
            double want = oracle.prob(c, w);
            worst = std::max(worst, std::abs(lp - std::log10(want)));
            worst = std::max(
                worst, std::abs(std::log10(dist[static_cast<std::size_t>(w)]) -
                                std::log10(want)));
            sum += dist[static_cast<std::size_t>(w)];
            ++pairs;
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0).count();
    std::ostringstream msg;
    msg << "score_word vs oracle over " << contexts.size() << " contexts x "
        << vocab.size() - 1 << " words (" << pairs
        << " pairs): max log10 divergence " << worst
        << " (<= 1e-9), max |sum-1| " << worst_sum << " (<= 1e-6), "
        << secs << " s (< 60)";
    verdict(1, worst <= 1e-9 && worst_sum <= 1e-6 && secs < 60.0, msg.str());
}

TEST_CASE("criterion 2: fixture ARPA reproduces the reference tool scores") {
    auto fixture = read_arpa_file(std::string(MIXLM_FIXTURE_DIR) + "/ref.arpa");
    auto held = read_lines(std::string(MIXLM_FIXTURE_DIR) + "/ref_held.txt");
    auto expected =
        read_lines(std::string(MIXLM_FIXTURE_DIR) + "/ref_scores.tsv");
    double worst = 0;
    bool orders_match = true;
    std::size_t row = 1;
    for (const auto& line : held) {
        auto s = encode(line, fixture.vocab);
        for (int t = 1; t < static_cast<int>(s.ids.size()); ++t, ++row) {
            auto fields = split_on(expected.at(row), '\t');
            std::span<const WordId> ctx(s.ids.data(),
                                        static_cast<std::size_t>(t));
            auto [lp, trace] =
                fixture.model.score_word(ctx, s.ids[static_cast<std::size_t>(t)]);
            worst = std::max(worst,
                             std::abs(lp - parse_double(fields[3], "lp")));
            orders_match = orders_match &&
                           trace.matched_order ==
                               parse_long(fields[4], "order");
        }
    }
    std::ostringstream msg;
    msg << "cross-tool fixture: " << row - 1
        << " scored tokens, max log10 divergence " << worst
        << " (<= 1e-4), matched orders "
        << (orders_match ? "identical" : "DIFFER");
    verdict(2, worst <= 1e-4 && orders_match, msg.str());
}

TEST_CASE("criterion 3: finite-difference gradient checks") {
    auto t0 = std::chrono::steady_clock::now();
    auto vocab = build_vocab({"a b c d e f g h i j k l"}, 1, std::nullopt);
    NNConfig nc;
    nc.layers = 2;
    nc.d_hid = 8;
    nc.d_emb = 6;
    nc.dropout = 0.0;
    nc.seed = 5;
    auto nn = init_params<double>(nc, vocab.size());
    nn.for_each_tensor([](const std::string&, auto& m) { m *= 12.0; });
    std::vector<EncodedSentence> sents{encode("a b c d e f", vocab),
                                       encode("g h i j", vocab),
                                       encode("k l a c e", vocab)};
    std::vector<const EncodedSentence*> sp;
    for (const auto& s : sents) sp.push_back(&s);
    double nn_err = nn_gradient_check(nn, sp, 1e-5, 300);

    auto data = accept_gate_data(12, 15, 77);
    std::map<std::string, double> gate_errs;
    for (auto arch : {GateArch::kLin, GateArch::kMlp, GateArch::kLstm}) {
        auto p = init_gate(arch, FeatureMode::kFull, 15, 5);
        gate_errs[to_string(arch)] = gate_gradient_check(p, data, 1e-5);
    }
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0).count();
    bool pass = nn_err < 1e-4 && secs < 300.0;
    std::ostringstream msg;
    msg << "max relative errors: neural " << nn_err;
    for (auto& [name, err] : gate_errs) {
        msg << ", " << name << " " << err;
        pass = pass && err < 1e-4;
    }
    msg << " (all < 1e-4), " << secs << " s (< 300)";
    verdict(3, pass, msg.str());
}

TEST_CASE("criterion 4: closed-form mixture gradient") {
    auto p = init_gate(GateArch::kLin, FeatureMode::kFull, 2, 1);
    p.lin_w.setZero();
    p.lin_b.setZero();
    GateStep step;
    step.features = Eigen::VectorXd::Zero(2);
    step.p_nn = 0.2;
    step.p_ng = 0.4;
    const GateStep* steps[] = {&step};
    const Eigen::VectorXd* feats[] = {&step.features};
    auto grads = detail::zero_like(p);
    detail::gate_backward_seq(p, steps, feats, 1.0, grads);
    // dL/dlambda = -(0.2-0.4)/0.3 = +2/3, times sigmoid'(0) = 1/4
    double dlambda = grads.lin_b[0] / 0.25;
    std::ostringstream msg;
    msg << "dL/dlambda at (lambda 0.5, p_nn 0.2, p_ng 0.4) = " << dlambda
        << " (expected +2/3)";
    verdict(4, std::abs(dlambda - 2.0 / 3.0) < 1e-12, msg.str());
}

TEST_CASE("criterion 5: trained gates dominate the tuned static weight") {
    auto train = accept_gate_data(150, 15, 88);
    auto stop = accept_gate_data(30, 15, 89);
    std::vector<StepProbs> flat;
    for (const auto& s : train)
        for (const auto& st : s) flat.push_back({st.p_nn, st.p_ng});
    auto stat = tune_static_lambda(flat);

    bool pass = true;
    double worst_margin = -1e9;
    for (auto arch : {GateArch::kLin, GateArch::kMlp, GateArch::kLstm}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            auto p = init_gate(arch, FeatureMode::kFull, 15, seed);
            GateTrainConfig cfg;
            cfg.seed = seed;
            cfg.max_steps = 4000;
            cfg.batch = 128;
            auto result = train_gate(p, train, stop, cfg);
            double margin = result.final_train_loss - stat.loss;
            worst_margin = std::max(worst_margin, margin);
            pass = pass && margin <= 1e-3;
        }
    }
    std::ostringstream msg;
    msg << "3 architectures x 5 seeds: worst (gate - static) margin "
        << worst_margin << " nats (<= 1e-3); static lambda* = " << stat.lambda;
    verdict(5, pass, msg.str());
}

TEST_CASE("criterion 7: feature cardinalities and the parameter budget") {
    bool pass = feature_dim(FeatureMode::kFull) == 15 &&
                feature_dim(FeatureMode::kSimple) == 11;
    std::ostringstream msg;
    msg << "FULL = " << feature_dim(FeatureMode::kFull)
        << ", SIMPLE = " << feature_dim(FeatureMode::kSimple) << "; params:";
    for (auto arch : {GateArch::kLin, GateArch::kMlp, GateArch::kLstm}) {
        for (auto mode : {FeatureMode::kFull, FeatureMode::kSimple}) {
            auto n = init_gate(arch, mode, feature_dim(mode), 1).count_params();
            msg << " " << to_string(arch) << "/" << to_string(mode) << "="
                << n;
            pass = pass && n < 5000;
        }
    }
    msg << " (all < 5000)";
    verdict(7, pass, msg.str());
}

TEST_CASE("criterion 8: perplexity sanity") {
    // uniform model over V: perplexity exactly V
    auto vocab = build_vocab({"a b c d e f g"}, 1, std::nullopt);
    NNConfig nc;
    nc.d_hid = 4;
    nc.d_emb = 4;
    nc.dropout = 0.0;
    auto uniform = init_params<double>(nc, vocab.size());
    uniform.for_each_tensor([](const std::string&, auto& m) { m.setZero(); });
    std::vector<EncodedSentence> sents{encode("a b c", vocab),
                                       encode("d e f g", vocab)};
    std::vector<const EncodedSentence*> sp;
    for (const auto& s : sents) sp.push_back(&s);
    double uppl = nn_perplexity(uniform, sp);
    bool uniform_ok =
        std::abs(uppl - static_cast<double>(vocab.size())) < 1e-9 * vocab.size();

    // memorization: repeated sentence drives perplexity under 1.2
    auto mv = build_vocab({"the quick brown fox jumps over the lazy dog"}, 1,
                          std::nullopt);
    auto sentence = encode("the quick brown fox jumps over the lazy dog", mv);
    std::vector<EncodedSentence> train(200, sentence);
    std::vector<const EncodedSentence*> tp;
    for (const auto& s : train) tp.push_back(&s);
    std::vector<const EncodedSentence*> vp{&sentence};
    NNConfig mc;
    mc.d_hid = 24;
    mc.d_emb = 24;
    mc.dropout = 0.0;
    mc.lr = 1.0;
    mc.batch_size = 16;
    mc.bptt = 16;
    mc.max_epochs = 30;
    mc.patience = 30;
    mc.seed = 42;
    auto params = init_params<double>(mc, mv.size());
    train_nn<double>(params, tp, vp);
    double mppl = nn_perplexity<double>(params, vp);

    std::ostringstream msg;
    msg << "uniform model perplexity " << uppl << " (V = " << vocab.size()
        << "), memorization perplexity " << mppl << " (< 1.2)";
    verdict(8, uniform_ok && mppl < 1.2, msg.str());
}

TEST_CASE("criterion 9: analysis pipeline") {
    // exact mass conservation over random count vectors
    std::mt19937_64 rng(2025);
    bool mass_ok = true;
    for (int it = 0; it < 30; ++it) {
        std::vector<std::int64_t> counts(10 + rng() % 60);
        for (auto& c : counts) c = static_cast<std::int64_t>(rng() % 1000);
        int k = 1 + static_cast<int>(rng() % counts.size());
        auto bins = frequency_bins(counts, k);
        std::int64_t total = 0, mass = 0;
        for (auto c : counts) total += c;
        for (auto m : bins.bin_mass) mass += m;
        mass_ok = mass_ok && mass == total;
    }

    // per-bin cross-entropy recombines to the global value
    std::vector<std::int64_t> counts{50, 25, 10, 8, 4, 2, 1};
    auto bins = frequency_bins(counts, 3);
    std::vector<TargetScore> steps;
    double global_ce = 0;
    for (int i = 0; i < 400; ++i) {
        auto w = static_cast<WordId>(rng() % counts.size());
        auto u = [&]() { return 0.02 + (rng() % 1000) / 1100.0; };
        TargetScore s{w, u(), u(), u()};
        global_ce -= std::log(s.p_nn);
        steps.push_back(s);
    }
    auto report = per_bin_report(steps, bins);
    double recombined = 0;
    for (const auto& row : report.rows)
        if (row.n_targets > 0)
            recombined += std::log(row.ppl_nn) *
                          static_cast<double>(row.n_targets);
    bool recombine_ok = std::abs(recombined - global_ce) < 1e-9;

    // t-test against the frozen reference on 20 random cases
    double worst_p = 0;
    int cases = 0;
    for (const auto& line :
         read_lines(std::string(MIXLM_FIXTURE_DIR) + "/ttest_cases.tsv")) {
        if (line.empty() || line[0] == '#') continue;
        auto f = split_ws(line);
        std::size_t pos = 0;
        long na = parse_long(f[pos++], "na");
        std::vector<double> a, b;
        for (long i = 0; i < na; ++i)
            a.push_back(parse_double(f[pos++], "a"));
        long nb = parse_long(f[pos++], "nb");
        for (long i = 0; i < nb; ++i)
            b.push_back(parse_double(f[pos++], "b"));
        double want = parse_double(f[pos++], "p");
        worst_p = std::max(worst_p, std::abs(significance_test(a, b) - want));
        ++cases;
    }
    std::ostringstream msg;
    msg << "bin mass conserved exactly over 30 random cases: "
        << (mass_ok ? "yes" : "NO") << "; per-bin CE recombination error "
        << std::abs(recombined - global_ce) << " (< 1e-9); t-test vs "
        << cases << " reference cases, worst |dp| " << worst_p << " (< 1e-6)";
    verdict(9, mass_ok && recombine_ok && worst_p < 1e-6 && cases == 20,
            msg.str());
}

TEST_CASE("criterion 10: learning-rate schedule") {
    auto data = accept_gate_data(6, 3, 99);
    auto p = init_gate(GateArch::kLin, FeatureMode::kSimple, 3, 2);
    GateTrainConfig cfg;
    cfg.lr = 6e-3;
    cfg.halve_every = 5000;
    cfg.batch = 8;
    cfg.max_steps = 12000;
    cfg.eval_every = 1 << 30;
    auto result = train_gate(p, data, data, cfg);
    bool pass = result.lr_trace.size() == 12000;
    for (std::size_t k = 0; pass && k < result.lr_trace.size(); ++k)
        pass = result.lr_trace[k] ==
               6e-3 * std::pow(2.0, -static_cast<double>(k / 5000));
    std::ostringstream msg;
    msg << "recorded lr trace over " << result.lr_trace.size()
        << " steps equals 6e-3 * 2^(-floor(step/5000)); lr[0] "
        << result.lr_trace[0] << ", lr[5000] " << result.lr_trace[5000]
        << ", lr[10000] " << result.lr_trace[10000];
    verdict(10, pass, msg.str());
}
