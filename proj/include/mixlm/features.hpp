#pragma once

// Gate inputs: fixed-layout feature vectors extracted from the expert
// outputs, per-dimension standardization, and the TSV dump format that lets
// gate training run without the experts loaded.

#include <Eigen/Core>
#include <optional>

#include "mixlm/common.hpp"
#include "mixlm/ngram.hpp"

namespace mixlm {

enum class FeatureMode { kFull, kSimple, kHidden };

inline const char* to_string(FeatureMode m) {
    switch (m) {
        case FeatureMode::kFull: return "FULL";
        case FeatureMode::kSimple: return "SIMPLE";
        case FeatureMode::kHidden: return "HIDDEN";
    }
    return "?";
}

inline FeatureMode parse_feature_mode(std::string_view s) {
    if (s == "FULL") return FeatureMode::kFull;
    if (s == "SIMPLE") return FeatureMode::kSimple;
    if (s == "HIDDEN") return FeatureMode::kHidden;
    throw ConfigError("unknown feature mode '" + std::string(s) +
                      "' (expected FULL, SIMPLE or HIDDEN)");
}

// five slots each for the back-off weights and discounted probabilities,
// regardless of the expert's actual order
inline constexpr int kFeatureSlots = 5;
inline constexpr int kFullDim = 15;
inline constexpr int kSimpleDim = 11;
inline constexpr double kPadAlpha10 = 0.0;   // absent weight, i.e. alpha = 1
inline constexpr double kPadLogProb10 = -7.0;  // below any observed value

inline int feature_dim(FeatureMode mode, int d_hid = 0) {
    switch (mode) {
        case FeatureMode::kFull: return kFullDim;
        case FeatureMode::kSimple: return kSimpleDim;
        case FeatureMode::kHidden:
            if (d_hid <= 0)
                throw ConfigError("HIDDEN feature mode needs the hidden size");
            return d_hid;
    }
    return 0;
}

// Features for predicting position t. Everything here is a function of the
// context only: the trace comes from scoring the previous observed word, so
// its per-order grams are exactly the current context's suffixes.
//   FULL   [alpha_1..alpha_5, p_1..p_5, log t, max_ng, ent_ng, max_nn, ent_nn]
//   SIMPLE first 11 of FULL
//   HIDDEN the neural model's top hidden state
inline Eigen::VectorXd extract_features(const QueryTrace* prev_trace,
                                        const DistStats& ng_stats,
                                        const DistStats& nn_stats, int t,
                                        FeatureMode mode,
                                        const Eigen::VectorXd* h_t = nullptr) {
    if (t < 1) throw RuntimeError("extract_features: position must be >= 1");
    if (mode == FeatureMode::kHidden) {
        if (!h_t)
            throw RuntimeError(
                "extract_features: HIDDEN mode needs the hidden state");
        return *h_t;
    }
    Eigen::VectorXd f(mode == FeatureMode::kFull ? kFullDim : kSimpleDim);
    for (int slot = 0; slot < kFeatureSlots; ++slot) {
        double a = kPadAlpha10, p = kPadLogProb10;
        if (prev_trace &&
            slot < static_cast<int>(prev_trace->word_alpha10.size())) {
            if (!absent(prev_trace->word_alpha10[static_cast<std::size_t>(slot)]))
                a = prev_trace->word_alpha10[static_cast<std::size_t>(slot)];
            if (!absent(prev_trace->word_p10[static_cast<std::size_t>(slot)]))
                p = prev_trace->word_p10[static_cast<std::size_t>(slot)];
        }
        f[slot] = a;
        f[kFeatureSlots + slot] = p;
    }
    f[10] = std::log(static_cast<double>(t));
    if (mode == FeatureMode::kFull) {
        f[11] = ng_stats.max;
        f[12] = ng_stats.entropy;
        f[13] = nn_stats.max;
        f[14] = nn_stats.entropy;
    }
    return f;
}

class FeatureNormalizer {
public:
    FeatureNormalizer() = default;
    FeatureNormalizer(Eigen::VectorXd mean, Eigen::VectorXd std)
        : mean_(std::move(mean)), std_(std::move(std)) {}

    static FeatureNormalizer fit(const std::vector<Eigen::VectorXd>& rows) {
        if (rows.empty())
            throw RuntimeError("FeatureNormalizer: empty fit set");
        Eigen::Index d = rows.front().size();
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (const auto& r : rows) mean += r;
        mean /= static_cast<double>(rows.size());
        Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
        for (const auto& r : rows)
            var += (r - mean).cwiseProduct(r - mean);
        var /= static_cast<double>(rows.size());
        Eigen::VectorXd std = var.cwiseSqrt();
        for (Eigen::Index i = 0; i < d; ++i)
            if (std[i] < 1e-8) std[i] = 1.0;  // constant dimensions map to 0
        return FeatureNormalizer(std::move(mean), std::move(std));
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        if (v.size() != mean_.size())
            throw RuntimeError("FeatureNormalizer: dimension mismatch");
        return (v - mean_).cwiseQuotient(std_);
    }

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::VectorXd& stddev() const { return std_; }

private:
    Eigen::VectorXd mean_;
    Eigen::VectorXd std_;
};

// One prediction position in a feature dump: raw features plus the frozen
// expert probabilities of the realized target.
struct GateStep {
    Eigen::VectorXd features;
    double p_nn;
    double p_ng;
};

using GateSentence = std::vector<GateStep>;

inline void write_feature_file(const std::string& path,
                               const std::vector<GateSentence>& sentences,
                               FeatureMode mode) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write feature file: " + path);
    out << "# mode=" << to_string(mode)
        << " columns=features... p_nn p_ng; sentences separated by blank "
           "lines\n";
    char buf[32];
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (i) out << "\n";
        for (const auto& step : sentences[i]) {
            for (Eigen::Index k = 0; k < step.features.size(); ++k) {
                std::snprintf(buf, sizeof buf, "%.9g", step.features[k]);
                out << buf << '\t';
            }
            std::snprintf(buf, sizeof buf, "%.12g", step.p_nn);
            out << buf << '\t';
            std::snprintf(buf, sizeof buf, "%.12g", step.p_ng);
            out << buf << '\n';
        }
    }
    if (!out) throw RuntimeError("feature file write failed: " + path);
}

inline std::vector<GateSentence> read_feature_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeError("cannot open feature file: " + path);
    std::vector<GateSentence> out;
    GateSentence cur;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
            continue;
        }
        if (line.front() == '#') continue;
        auto fields = split_on(line, '\t');
        if (fields.size() < 3)
            throw RuntimeError("feature file row too short: " + path);
        GateStep step;
        step.features.resize(static_cast<Eigen::Index>(fields.size() - 2));
        for (std::size_t k = 0; k + 2 < fields.size(); ++k)
            step.features[static_cast<Eigen::Index>(k)] =
                parse_double(fields[k], "feature");
        step.p_nn = parse_double(fields[fields.size() - 2], "p_nn");
        step.p_ng = parse_double(fields[fields.size() - 1], "p_ng");
        cur.push_back(std::move(step));
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace mixlm
