#pragma once

// Expert combination: per-step convex mixture, held-out tuning of the static
// interpolation weight, perplexity, and the evaluation report.

#include <cmath>
#include <span>

#include "mixlm/common.hpp"
#include "json.hpp"

namespace mixlm {

struct StepProbs {
    double p_nn;
    double p_ng;
};

inline double mixture_prob(double p_nn, double p_ng, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw RuntimeError("mixture weight outside [0,1]: " +
                           format_double(lambda));
    return lambda * p_nn + (1.0 - lambda) * p_ng;
}

inline double mean_mixture_ce(std::span<const StepProbs> steps,
                              double lambda) {
    double loss = 0;
    for (const auto& s : steps) {
        double p = mixture_prob(s.p_nn, s.p_ng, lambda);
        if (!(p > 0.0))
            throw RuntimeError("mixture probability is not positive");
        loss -= std::log(p);
    }
    return loss / static_cast<double>(steps.size());
}

struct StaticLambda {
    double lambda;
    double loss;  // mean nats on the tuning steps
};

// Grid search over {0.00, 0.01, ..., 1.00}; ties resolved toward 0.5.
inline StaticLambda tune_static_lambda(std::span<const StepProbs> steps) {
    if (steps.empty()) throw RuntimeError("tune_static_lambda: no steps");
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> losses(101);
    for (int i = 0; i <= 100; ++i) {
        losses[static_cast<std::size_t>(i)] =
            mean_mixture_ce(steps, i / 100.0);
        best_loss = std::min(best_loss, losses[static_cast<std::size_t>(i)]);
    }
    double best = 2.0;
    for (int i = 0; i <= 100; ++i) {
        if (losses[static_cast<std::size_t>(i)] > best_loss + 1e-12) continue;
        double lam = i / 100.0;
        if (std::abs(lam - 0.5) < std::abs(best - 0.5) - 1e-15 ||
            (std::abs(std::abs(lam - 0.5) - std::abs(best - 0.5)) <= 1e-15 &&
             lam < best))
            best = lam;
    }
    return {best, best_loss};
}

inline double perplexity(std::span<const double> target_probs) {
    if (target_probs.empty()) throw RuntimeError("perplexity: no targets");
    double loss = 0;
    for (double p : target_probs) {
        if (!(p > 0.0) || p > 1.0)
            throw RuntimeError("perplexity: probability outside (0,1]: " +
                               format_double(p));
        loss -= std::log(p);
    }
    return std::exp(loss / static_cast<double>(target_probs.size()));
}

struct ModelRow {
    std::string name;
    std::vector<double> per_run;
    double mean = 0;
    double stderr_ = 0;  // sample std over runs / sqrt(runs); 0 for one run
};

inline ModelRow make_row(std::string name, std::vector<double> per_run) {
    ModelRow row;
    row.name = std::move(name);
    row.per_run = std::move(per_run);
    if (row.per_run.empty()) throw RuntimeError("report row without runs");
    double sum = 0;
    for (double v : row.per_run) sum += v;
    row.mean = sum / static_cast<double>(row.per_run.size());
    if (row.per_run.size() > 1) {
        double ss = 0;
        for (double v : row.per_run) ss += (v - row.mean) * (v - row.mean);
        double sd = std::sqrt(ss / static_cast<double>(row.per_run.size() - 1));
        row.stderr_ = sd / std::sqrt(static_cast<double>(row.per_run.size()));
    }
    return row;
}

struct EvalReport {
    std::vector<ModelRow> rows;
    std::int64_t n_targets = 0;

    const ModelRow& row(std::string_view name) const {
        for (const auto& r : rows)
            if (r.name == name) return r;
        throw RuntimeError("report has no row named " + std::string(name));
    }

    std::string text() const {
        std::string out = "model                 perplexity     stderr  runs\n";
        char buf[128];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%-20s %10.4f %10.4f %5zu\n",
                          r.name.c_str(), r.mean, r.stderr_, r.per_run.size());
            out += buf;
        }
        return out;
    }

    nlohmann::json json() const {
        nlohmann::json models = nlohmann::json::object();
        for (const auto& r : rows)
            models[r.name] = {{"mean", r.mean},
                              {"stderr", r.stderr_},
                              {"runs", r.per_run.size()},
                              {"per_run", r.per_run}};
        return {{"models", models}, {"n_targets", n_targets}};
    }
};

}  // namespace mixlm
