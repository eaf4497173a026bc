#pragma once

// Stage orchestration from raw text to evaluation artifacts. Every stage
// reads its inputs from the output directory and fails with a pointer to
// the stage that must run first. Reruns with an unchanged config and seed
// reproduce byte-identical artifacts.

#include <filesystem>
#include <iostream>

#include "mixlm/analysis.hpp"
#include "mixlm/arpa.hpp"
#include "mixlm/config.hpp"
#include "mixlm/ensemble.hpp"
#include "mixlm/gating.hpp"
#include "mixlm/kn.hpp"
#include "mixlm/neural.hpp"

namespace mixlm {

enum class Stage {
    kVocab,
    kTrainNgram,
    kTrainNN,
    kDumpFeatures,
    kTrainGate,
    kTuneStatic,
    kEvaluate,
    kAnalyze,
    kAll
};

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::kVocab: return "vocab";
        case Stage::kTrainNgram: return "train-ngram";
        case Stage::kTrainNN: return "train-nn";
        case Stage::kDumpFeatures: return "dump-features";
        case Stage::kTrainGate: return "train-gate";
        case Stage::kTuneStatic: return "tune-static";
        case Stage::kEvaluate: return "evaluate";
        case Stage::kAnalyze: return "analyze";
        case Stage::kAll: return "all";
    }
    return "?";
}

inline Stage parse_stage(std::string_view s) {
    for (Stage st : {Stage::kVocab, Stage::kTrainNgram, Stage::kTrainNN,
                     Stage::kDumpFeatures, Stage::kTrainGate,
                     Stage::kTuneStatic, Stage::kEvaluate, Stage::kAnalyze,
                     Stage::kAll})
        if (s == to_string(st)) return st;
    throw ConfigError(
        "unknown stage '" + std::string(s) +
        "' (expected vocab, train-ngram, train-nn, dump-features, "
        "train-gate, tune-static, evaluate, analyze or all)");
}

// artifact paths under the output directory
struct Artifacts {
    std::filesystem::path out;

    explicit Artifacts(const PipelineConfig& cfg) : out(cfg.out) {}

    std::string vocab() const { return (out / "vocab.tsv").string(); }
    std::string split(const std::string& part) const {
        return (out / "splits" / (part + ".idx")).string();
    }
    std::string arpa() const { return (out / "ngram.arpa").string(); }
    std::string nn_bin() const { return (out / "nn.bin").string(); }
    std::string nn_manifest() const { return (out / "nn.manifest").string(); }
    std::string nn_log() const { return (out / "nn_train_log.tsv").string(); }
    std::string features(const std::string& part, FeatureMode mode) const {
        std::string m = to_string(mode);
        for (auto& c : m) c = static_cast<char>(std::tolower(c));
        return (out / "features" / (part + "." + m + ".tsv")).string();
    }
    std::string gate_bin(FeatureMode mode, GateArch arch, int run) const {
        return (out / "gates" /
                ("gate_" + std::string(to_string(mode)) + "_" +
                 to_string(arch) + "_s" + std::to_string(run) + ".bin"))
            .string();
    }
    std::string gate_manifest(FeatureMode mode, GateArch arch,
                              int run) const {
        auto p = gate_bin(mode, arch, run);
        return p.substr(0, p.size() - 4) + ".manifest";
    }
    std::string gate_log(FeatureMode mode, GateArch arch, int run) const {
        return (out / "gates" /
                ("train_log_" + std::string(to_string(mode)) + "_" +
                 to_string(arch) + "_s" + std::to_string(run) + ".tsv"))
            .string();
    }
    std::string static_lambda() const {
        return (out / "static_lambda.json").string();
    }
    std::string report_json() const { return (out / "report.json").string(); }
    std::string report_text() const { return (out / "report.txt").string(); }
    std::string test_scores() const {
        return (out / "test_scores.tsv").string();
    }
    std::string analysis_dir() const { return (out / "analysis").string(); }
};

namespace detail {

inline void require_artifact(const std::string& path, const char* stage) {
    if (!std::filesystem::exists(path))
        throw ConfigError("missing artifact " + path + "; run stage '" +
                          std::string(stage) + "' first");
}

inline std::vector<std::string> part_lines(
    const std::vector<std::string>& corpus,
    const std::vector<std::int64_t>& indices) {
    std::vector<std::string> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(corpus.at(static_cast<std::size_t>(i)));
    return out;
}

inline std::vector<EncodedSentence> encode_lines(
    const std::vector<std::string>& lines, const Vocabulary& vocab) {
    std::vector<EncodedSentence> out;
    out.reserve(lines.size());
    for (const auto& l : lines) out.push_back(encode(l, vocab));
    return out;
}

// Per-step expert outputs for one sentence: everything the gate features,
// the mixture and the diagnostics need.
struct ScoredStep {
    Eigen::VectorXd full_features;    // 15
    Eigen::VectorXd hidden_features;  // d_hid
    double p_nn = 0;
    double p_ng = 0;
    WordId target = 0;
};

// Scores a span of sentences against both experts, invoking sink(sentence
// index within the span, per-step vector) in order. Chunked to bound memory.
template <typename S, typename Sink>
void score_part(const KNModel& ng, const NeuralLMParams<S>& nn,
                std::span<const EncodedSentence* const> sentences,
                Sink&& sink, int chunk_size = 256) {
    const int H = nn.config.d_hid;
    for (std::size_t base = 0; base < sentences.size();
         base += static_cast<std::size_t>(chunk_size)) {
        std::size_t n = std::min<std::size_t>(
            static_cast<std::size_t>(chunk_size), sentences.size() - base);
        auto chunk = sentences.subspan(base, n);

        std::vector<std::vector<ScoredStep>> scored(n);
        for (std::size_t i = 0; i < n; ++i)
            scored[i].resize(static_cast<std::size_t>(chunk[i]->num_targets()));

        // neural pass, batched
        score_sentences<S>(
            nn, chunk, chunk_size, [&](std::size_t si, const StepView<S>& v) {
                auto& step = scored[si][static_cast<std::size_t>(v.t - 1)];
                step.target = v.target;
                step.p_nn = static_cast<double>(v.dist[v.target]);
                Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> dist(
                    v.dist, nn.vocab);
                double max = static_cast<double>(dist.maxCoeff());
                double ent =
                    -static_cast<double>((dist * dist.log()).sum());
                step.hidden_features =
                    Eigen::Map<const Vec<S>>(v.hidden, H).template cast<double>();
                // stash the neural stats; the n-gram pass fills the rest
                step.full_features.resize(2);
                step.full_features << max, ent;
            });

        // n-gram pass and feature assembly, per sentence
        for (std::size_t i = 0; i < n; ++i) {
            const auto& ids = chunk[i]->ids;
            const QueryTrace* prev = nullptr;
            QueryTrace trace;
            for (std::size_t t = 1; t < ids.size(); ++t) {
                auto& step = scored[i][t - 1];
                std::span<const WordId> ctx(ids.data(), t);
                auto dist = ng.full_distribution(ctx);
                auto ng_stats = distribution_stats(dist);
                DistStats nn_stats{step.full_features[0],
                                   step.full_features[1]};
                step.full_features = extract_features(
                    prev, ng_stats, nn_stats, static_cast<int>(t),
                    FeatureMode::kFull);
                auto [lp, tr] = ng.score_word(ctx, ids[t]);
                step.p_ng = std::pow(10.0, lp);
                trace = std::move(tr);
                prev = &trace;
            }
            sink(base + i, std::move(scored[i]));
        }
    }
}

inline Eigen::VectorXd project_features(const Eigen::VectorXd& full,
                                        FeatureMode mode) {
    if (mode == FeatureMode::kFull) return full;
    if (mode == FeatureMode::kSimple) return full.head(kSimpleDim);
    throw RuntimeError("project_features: HIDDEN has its own dump");
}

inline std::vector<GateSentence> load_gate_data(const Artifacts& art,
                                                const std::string& part,
                                                FeatureMode mode) {
    // SIMPLE is the leading slice of the FULL dump
    FeatureMode file_mode =
        mode == FeatureMode::kHidden ? FeatureMode::kHidden : FeatureMode::kFull;
    auto path = art.features(part, file_mode);
    require_artifact(path, "dump-features");
    auto data = read_feature_file(path);
    if (mode == FeatureMode::kSimple)
        for (auto& sent : data)
            for (auto& step : sent)
                step.features = step.features.head(kSimpleDim).eval();
    return data;
}

inline std::uint64_t gate_seed(const PipelineConfig& cfg, FeatureMode mode,
                               int run) {
    return derive_seed(cfg.seed, std::string("gate-") + to_string(mode) +
                                     "-run" + std::to_string(run));
}

}  // namespace detail

inline void run_stage(const PipelineConfig& cfg, Stage stage);

inline void stage_vocab(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    std::filesystem::create_directories(art.out / "splits");
    auto lines = read_lines(cfg.corpus);
    auto vocab = build_vocab(
        lines, cfg.vocab_min_count,
        cfg.vocab_max_size > 0 ? std::optional<int>(cfg.vocab_max_size)
                               : std::nullopt);
    vocab.save(art.vocab());

    SplitSpec spec = cfg.split;
    spec.seed = derive_seed(cfg.seed, "split");
    auto split = split_corpus(static_cast<std::int64_t>(lines.size()), spec);
    for (std::size_t i = 0; i < split.names.size(); ++i)
        save_split_part(art.split(split.names[i]), split.line_indices[i]);
    std::cerr << "[vocab] " << vocab.size() << " types over " << lines.size()
              << " sentences\n";
}

inline void stage_train_ngram(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    detail::require_artifact(art.vocab(), "vocab");
    detail::require_artifact(art.split("train"), "vocab");
    auto vocab = Vocabulary::load(art.vocab());
    auto lines = read_lines(cfg.corpus);
    auto train = detail::part_lines(lines, load_split_part(art.split("train")));
    auto sentences = detail::encode_lines(train, vocab);

    auto counts = count_ngrams(sentences, cfg.ngram_order, vocab.size());
    KnOptions opts;
    opts.prune_min_count = cfg.ngram_prune_min_count;
    auto kn = estimate_kn(counts, opts);
    for (const auto& w : kn.warnings) std::cerr << "[train-ngram] " << w << "\n";
    write_arpa_file(kn.model, vocab, art.arpa());
    std::cerr << "[train-ngram] wrote " << art.arpa() << "\n";
}

inline void stage_train_nn(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    detail::require_artifact(art.vocab(), "vocab");
    detail::require_artifact(art.split("train"), "vocab");
    detail::require_artifact(art.split("gate_stop"), "vocab");
    auto vocab = Vocabulary::load(art.vocab());
    auto lines = read_lines(cfg.corpus);
    auto train = detail::encode_lines(
        detail::part_lines(lines, load_split_part(art.split("train"))), vocab);
    auto valid = detail::encode_lines(
        detail::part_lines(lines, load_split_part(art.split("gate_stop"))),
        vocab);

    NNConfig nn_cfg = cfg.nn;
    nn_cfg.seed = derive_seed(cfg.seed, "nn");
    auto params = init_params<float>(nn_cfg, vocab.size());
    std::vector<const EncodedSentence*> tp, vp;
    for (const auto& s : train) tp.push_back(&s);
    for (const auto& s : valid) vp.push_back(&s);
    auto log = train_nn<float>(params, tp, vp);

    save_nn(params, art.nn_bin(), art.nn_manifest());
    std::string body = "# epoch\tlr\ttrain_loss\tvalid_ppl\n";
    for (const auto& row : log) {
        body += std::to_string(row.epoch) + "\t" + format_double(row.lr) +
                "\t" + format_double(row.train_loss) + "\t" +
                format_double(row.valid_ppl) + "\n";
        std::cerr << "[train-nn] epoch " << row.epoch << " lr " << row.lr
                  << " train " << row.train_loss << " valid ppl "
                  << row.valid_ppl << "\n";
    }
    write_text_file(art.nn_log(), body);
}

inline void stage_dump_features(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    detail::require_artifact(art.vocab(), "vocab");
    detail::require_artifact(art.arpa(), "train-ngram");
    detail::require_artifact(art.nn_bin(), "train-nn");
    auto vocab = Vocabulary::load(art.vocab());
    auto ngram = read_arpa_file(art.arpa());
    auto nn = load_nn<float>(art.nn_bin());
    auto lines = read_lines(cfg.corpus);
    std::filesystem::create_directories(art.out / "features");

    for (const std::string part : {"gate_train", "gate_stop"}) {
        auto sentences = detail::encode_lines(
            detail::part_lines(lines, load_split_part(art.split(part))),
            vocab);
        std::vector<const EncodedSentence*> sp;
        for (const auto& s : sentences) sp.push_back(&s);

        std::vector<GateSentence> full, hidden;
        detail::score_part<float>(
            ngram.model, nn, sp,
            [&](std::size_t, std::vector<detail::ScoredStep> steps) {
                GateSentence f, h;
                for (auto& s : steps) {
                    f.push_back({std::move(s.full_features), s.p_nn, s.p_ng});
                    h.push_back(
                        {std::move(s.hidden_features), s.p_nn, s.p_ng});
                }
                full.push_back(std::move(f));
                hidden.push_back(std::move(h));
            });
        write_feature_file(art.features(part, FeatureMode::kFull), full,
                           FeatureMode::kFull);
        write_feature_file(art.features(part, FeatureMode::kHidden), hidden,
                           FeatureMode::kHidden);
        std::int64_t steps = 0;
        for (const auto& s : full) steps += static_cast<std::int64_t>(s.size());
        std::cerr << "[dump-features] " << part << ": " << full.size()
                  << " sentences, " << steps << " steps\n";
    }
}

inline void stage_train_gate(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    std::filesystem::create_directories(art.out / "gates");
    for (auto mode : {FeatureMode::kSimple, FeatureMode::kFull,
                      FeatureMode::kHidden}) {
        auto raw_train = detail::load_gate_data(art, "gate_train", mode);
        auto raw_stop = detail::load_gate_data(art, "gate_stop", mode);
        std::vector<Eigen::VectorXd> rows;
        for (const auto& sent : raw_train)
            for (const auto& s : sent) rows.push_back(s.features);
        auto norm = FeatureNormalizer::fit(rows);
        auto train = normalize_sentences(norm, raw_train);
        auto stop = normalize_sentences(norm, raw_stop);
        int dim = static_cast<int>(rows.front().size());

        for (int run = 0; run < cfg.runs; ++run) {
            auto seed = detail::gate_seed(cfg, mode, run);
            auto params = init_gate(cfg.gate_arch, mode, dim, seed);
            params.normalizer = norm;
            GateTrainConfig gc = cfg.gate;
            gc.seed = seed;
            auto result = train_gate(params, train, stop, gc);
            save_gate(params, art.gate_bin(mode, cfg.gate_arch, run),
                      art.gate_manifest(mode, cfg.gate_arch, run));

            std::string body =
                "# lr trace (step lr at changes), evals (step stop_loss), "
                "final train loss\n";
            double last_lr = -1;
            for (std::size_t k = 0; k < result.lr_trace.size(); ++k)
                if (result.lr_trace[k] != last_lr) {
                    last_lr = result.lr_trace[k];
                    body += "lr\t" + std::to_string(k) + "\t" +
                            format_double(last_lr) + "\n";
                }
            for (auto [step, loss] : result.evals)
                body += "eval\t" + std::to_string(step) + "\t" +
                        format_double(loss) + "\n";
            body += "final_train_loss\t" +
                    format_double(result.final_train_loss) + "\n";
            body += "best_stop_loss\t" + format_double(result.best_stop_loss) +
                    "\n";
            write_text_file(art.gate_log(mode, cfg.gate_arch, run), body);
            std::cerr << "[train-gate] " << to_string(mode) << " run " << run
                      << ": " << result.steps_run << " steps, stop loss "
                      << result.best_stop_loss << ", train loss "
                      << result.final_train_loss << "\n";
        }
    }
}

inline void stage_tune_static(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    auto data = detail::load_gate_data(art, "gate_train", FeatureMode::kFull);
    std::vector<StepProbs> steps;
    for (const auto& sent : data)
        for (const auto& s : sent) steps.push_back({s.p_nn, s.p_ng});
    auto result = tune_static_lambda(steps);
    nlohmann::json j = {{"lambda", result.lambda},
                        {"loss", result.loss},
                        {"steps", steps.size()}};
    write_text_file(art.static_lambda(), j.dump(2) + "\n");
    std::cerr << "[tune-static] lambda " << result.lambda << " loss "
              << result.loss << "\n";
}

inline EvalReport stage_evaluate(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    detail::require_artifact(art.arpa(), "train-ngram");
    detail::require_artifact(art.nn_bin(), "train-nn");
    detail::require_artifact(art.static_lambda(), "tune-static");
    for (auto mode : {FeatureMode::kSimple, FeatureMode::kFull,
                      FeatureMode::kHidden})
        for (int run = 0; run < cfg.runs; ++run)
            detail::require_artifact(art.gate_bin(mode, cfg.gate_arch, run),
                                     "train-gate");

    auto vocab = Vocabulary::load(art.vocab());
    auto ngram = read_arpa_file(art.arpa());
    auto nn = load_nn<float>(art.nn_bin());
    auto lines = read_lines(cfg.corpus);
    auto test_lines =
        detail::part_lines(lines, load_split_part(art.split("test")));
    if (test_lines.empty()) throw ConfigError("test partition is empty");
    auto sentences = detail::encode_lines(test_lines, vocab);
    std::vector<const EncodedSentence*> sp;
    for (const auto& s : sentences) sp.push_back(&s);

    double static_lambda = 0;
    {
        std::ifstream in(art.static_lambda());
        auto j = nlohmann::json::parse(in);
        static_lambda = j.at("lambda").get<double>();
    }

    struct GateSlot {
        FeatureMode mode;
        int run;
        GatingParams params;
        double ce = 0;
    };
    std::vector<GateSlot> gates;
    for (auto mode : {FeatureMode::kSimple, FeatureMode::kFull,
                      FeatureMode::kHidden})
        for (int run = 0; run < cfg.runs; ++run)
            gates.push_back({mode, run,
                             load_gate(art.gate_bin(mode, cfg.gate_arch, run)),
                             0.0});

    double ce_nn = 0, ce_ng = 0, ce_static = 0;
    std::int64_t n_targets = 0;
    std::ofstream scores(art.test_scores(), std::ios::binary);
    if (!scores)
        throw RuntimeError("cannot write " + art.test_scores());
    scores << "# sentence\tt\ttarget_id\tsurface\tp_nn\tp_ng\n";
    char buf[64];

    detail::score_part<float>(
        ngram.model, nn, sp,
        [&](std::size_t si, std::vector<detail::ScoredStep> steps) {
            std::vector<Eigen::VectorXd> full, simple, hidden;
            for (std::size_t t = 0; t < steps.size(); ++t) {
                const auto& s = steps[t];
                ce_nn -= std::log(s.p_nn);
                ce_ng -= std::log(s.p_ng);
                ce_static -=
                    std::log(mixture_prob(s.p_nn, s.p_ng, static_lambda));
                ++n_targets;
                scores << si << '\t' << (t + 1) << '\t' << s.target << '\t'
                       << vocab.word(s.target) << '\t';
                std::snprintf(buf, sizeof buf, "%.12g\t%.12g\n", s.p_nn,
                              s.p_ng);
                scores << buf;
                full.push_back(s.full_features);
                simple.push_back(s.full_features.head(kSimpleDim).eval());
                hidden.push_back(s.hidden_features);
            }
            for (auto& g : gates) {
                const auto& feats = g.mode == FeatureMode::kFull ? full
                                    : g.mode == FeatureMode::kSimple
                                        ? simple
                                        : hidden;
                std::vector<Eigen::VectorXd> normed;
                normed.reserve(feats.size());
                for (const auto& f : feats)
                    normed.push_back(g.params.normalizer.apply(f));
                auto lambdas = gate_forward(g.params, normed);
                for (std::size_t t = 0; t < steps.size(); ++t)
                    g.ce -= std::log(mixture_prob(steps[t].p_nn,
                                                  steps[t].p_ng, lambdas[t]));
            }
        });
    if (!scores) throw RuntimeError("failed writing " + art.test_scores());
    scores.close();

    auto ppl = [&](double ce) {
        return std::exp(ce / static_cast<double>(n_targets));
    };
    EvalReport report;
    report.n_targets = n_targets;
    report.rows.push_back(make_row("ngram", {ppl(ce_ng)}));
    report.rows.push_back(make_row("neural", {ppl(ce_nn)}));
    report.rows.push_back(make_row("static_ensemble", {ppl(ce_static)}));
    for (auto mode : {FeatureMode::kSimple, FeatureMode::kFull,
                      FeatureMode::kHidden}) {
        std::vector<double> runs;
        for (const auto& g : gates)
            if (g.mode == mode) runs.push_back(ppl(g.ce));
        std::string name = std::string("moe_") + to_string(mode);
        for (auto& c : name) c = static_cast<char>(std::tolower(c));
        report.rows.push_back(make_row(name, std::move(runs)));
    }
    write_text_file(art.report_json(), report.json().dump(2) + "\n");
    write_text_file(art.report_text(), report.text());
    std::cerr << report.text();
    return report;
}

inline void stage_analyze(const PipelineConfig& cfg) {
    Artifacts art(cfg);
    detail::require_artifact(art.test_scores(), "evaluate");
    detail::require_artifact(art.report_json(), "evaluate");
    detail::require_artifact(art.static_lambda(), "tune-static");
    auto vocab = Vocabulary::load(art.vocab());
    std::filesystem::create_directories(art.analysis_dir());

    double static_lambda = 0;
    {
        std::ifstream in(art.static_lambda());
        static_lambda = nlohmann::json::parse(in).at("lambda").get<double>();
    }

    std::vector<TargetScore> targets;
    std::vector<StepProbs> probs;
    std::vector<std::string> surfaces;
    for (const auto& line : read_lines(art.test_scores())) {
        if (line.empty() || line[0] == '#') continue;
        auto f = split_on(line, '\t');
        if (f.size() != 6)
            throw RuntimeError("malformed test_scores row: " + line);
        double p_nn = parse_double(f[4], "p_nn");
        double p_ng = parse_double(f[5], "p_ng");
        targets.push_back({static_cast<WordId>(parse_long(f[2], "target")),
                           p_ng, p_nn,
                           mixture_prob(p_nn, p_ng, static_lambda)});
        probs.push_back({p_nn, p_ng});
        surfaces.emplace_back(f[3]);
    }

    std::vector<std::int64_t> counts(static_cast<std::size_t>(vocab.size()));
    for (WordId w = 0; w < vocab.size(); ++w)
        counts[static_cast<std::size_t>(w)] = vocab.count(w);
    auto bins = frequency_bins(counts, cfg.bins);
    auto bin_report = per_bin_report(targets, bins);
    write_text_file(art.analysis_dir() + "/bins.csv",
                    bins_csv(bins, bin_report));

    auto cap = capitalization_stats(surfaces, probs, cfg.cap_threshold);
    std::string cap_csv =
        "# threshold,frac_capitalized_selected,frac_capitalized_overall,"
        "n_selected,n_overall\n" +
        format_double(cfg.cap_threshold) + "," +
        (std::isnan(cap.frac_selected) ? "NA"
                                       : format_double(cap.frac_selected)) +
        "," + format_double(cap.frac_overall) + "," +
        std::to_string(cap.n_selected) + "," + std::to_string(cap.n_overall) +
        "\n";
    write_text_file(art.analysis_dir() + "/capitalization.csv", cap_csv);

    nlohmann::json report_j;
    {
        std::ifstream in(art.report_json());
        report_j = nlohmann::json::parse(in);
    }
    std::string sig_csv = "# model_a,model_b,p_value\n";
    nlohmann::json sig_j = nlohmann::json::array();
    std::vector<std::string> multi;
    for (auto& [name, row] : report_j.at("models").items())
        if (row.at("runs").get<int>() >= 2) multi.push_back(name);
    std::sort(multi.begin(), multi.end());
    for (std::size_t i = 0; i < multi.size(); ++i) {
        for (std::size_t j = i + 1; j < multi.size(); ++j) {
            auto a = report_j["models"][multi[i]]["per_run"]
                         .get<std::vector<double>>();
            auto b = report_j["models"][multi[j]]["per_run"]
                         .get<std::vector<double>>();
            double p = significance_test(a, b);
            sig_csv += multi[i] + "," + multi[j] + "," + format_double(p) +
                       "\n";
            sig_j.push_back({{"model_a", multi[i]},
                             {"model_b", multi[j]},
                             {"p_value", p}});
        }
    }
    write_text_file(art.analysis_dir() + "/significance.csv", sig_csv);

    nlohmann::json all = {
        {"bins", bins_json(bins, bin_report)},
        {"capitalization",
         {{"threshold", cfg.cap_threshold},
          {"frac_selected", std::isnan(cap.frac_selected)
                                ? nlohmann::json()
                                : nlohmann::json(cap.frac_selected)},
          {"frac_overall", cap.frac_overall},
          {"n_selected", cap.n_selected},
          {"n_overall", cap.n_overall}}},
        {"significance", sig_j}};
    write_text_file(art.analysis_dir() + "/analysis.json", all.dump(2) + "\n");
    std::cerr << "[analyze] wrote " << art.analysis_dir() << "\n";
}

inline void run_stage(const PipelineConfig& cfg, Stage stage) {
    switch (stage) {
        case Stage::kVocab: stage_vocab(cfg); return;
        case Stage::kTrainNgram: stage_train_ngram(cfg); return;
        case Stage::kTrainNN: stage_train_nn(cfg); return;
        case Stage::kDumpFeatures: stage_dump_features(cfg); return;
        case Stage::kTrainGate: stage_train_gate(cfg); return;
        case Stage::kTuneStatic: stage_tune_static(cfg); return;
        case Stage::kEvaluate: stage_evaluate(cfg); return;
        case Stage::kAnalyze: stage_analyze(cfg); return;
        case Stage::kAll:
            for (Stage s : {Stage::kVocab, Stage::kTrainNgram, Stage::kTrainNN,
                            Stage::kDumpFeatures, Stage::kTrainGate,
                            Stage::kTuneStatic, Stage::kEvaluate,
                            Stage::kAnalyze})
                run_stage(cfg, s);
            return;
    }
}

}  // namespace mixlm
