#pragma once

// Gating networks over handcrafted features: a linear model, a two-layer
// rectifier MLP, and the same trunk feeding a small LSTM. All emit a scalar
// weight in (0,1) per step through a final sigmoid. Training minimizes the
// mixture cross-entropy with the experts frozen, using Adam with a halving
// learning-rate schedule and early stopping on a held-out set.

#include <Eigen/Core>
#include <random>

#include "mixlm/common.hpp"
#include "mixlm/container.hpp"
#include "mixlm/features.hpp"

namespace mixlm {

enum class GateArch { kLin, kMlp, kLstm };

inline const char* to_string(GateArch a) {
    switch (a) {
        case GateArch::kLin: return "LIN";
        case GateArch::kMlp: return "MLP";
        case GateArch::kLstm: return "LSTM";
    }
    return "?";
}

inline GateArch parse_gate_arch(std::string_view s) {
    if (s == "LIN") return GateArch::kLin;
    if (s == "MLP") return GateArch::kMlp;
    if (s == "LSTM") return GateArch::kLstm;
    throw ConfigError("unknown gate architecture '" + std::string(s) +
                      "' (expected LIN, MLP or LSTM)");
}

inline constexpr int kGateHidden = 32;
inline constexpr int kGateLstmUnits = 8;
// keeps the sigmoid output strictly inside (0,1) even when saturated
inline constexpr double kLambdaMargin = 1e-12;

struct GateTrainConfig {
    double lr = 6e-3;
    int halve_every = 5000;
    int batch = 256;     // steps per optimizer update
    int max_steps = 20000;
    int eval_every = 250;
    int patience = 10;   // evaluations without improvement
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (lr <= 0) throw ConfigError("gate.lr must be positive");
        if (halve_every < 1) throw ConfigError("gate.halve_every must be >= 1");
        if (batch < 1 || max_steps < 1 || eval_every < 1 || patience < 1)
            throw ConfigError("gate training sizes must be >= 1");
    }
};

struct GatingParams {
    GateArch arch = GateArch::kLin;
    FeatureMode mode = FeatureMode::kFull;
    int input_dim = 0;

    Eigen::VectorXd lin_w, lin_b;              // LIN
    Eigen::MatrixXd w1, w2;                    // trunk (MLP, LSTM)
    Eigen::VectorXd b1, b2;
    Eigen::MatrixXd lwx, lwh;                  // LSTM cell, gate rows [i f g o]
    Eigen::VectorXd lb;
    Eigen::VectorXd head_w, head_b;            // scalar output

    FeatureNormalizer normalizer;

    template <typename F>
    void for_each_tensor(F&& f) {
        if (arch == GateArch::kLin) {
            f("lin.w", lin_w);
            f("lin.b", lin_b);
            return;
        }
        f("w1", w1);
        f("b1", b1);
        f("w2", w2);
        f("b2", b2);
        if (arch == GateArch::kLstm) {
            f("lstm.wx", lwx);
            f("lstm.wh", lwh);
            f("lstm.b", lb);
        }
        f("head.w", head_w);
        f("head.b", head_b);
    }

    std::int64_t count_params() const {
        std::int64_t n = 0;
        const_cast<GatingParams*>(this)->for_each_tensor(
            [&](const std::string&, const auto& m) { n += m.size(); });
        return n;
    }
};

namespace detail {

template <typename Rng>
void gate_fill(Eigen::Ref<Eigen::MatrixXd> m, double scale, Rng& rng) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = (unit_draw(rng) * 2.0 - 1.0) * scale;
}

inline double gate_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double clamp_lambda(double s) {
    return std::min(1.0 - kLambdaMargin, std::max(kLambdaMargin, s));
}

}  // namespace detail

inline GatingParams init_gate(GateArch arch, FeatureMode mode, int input_dim,
                              std::uint64_t seed) {
    if (input_dim < 1) throw ConfigError("gate input dimension must be >= 1");
    GatingParams p;
    p.arch = arch;
    p.mode = mode;
    p.input_dim = input_dim;
    std::mt19937_64 rng(seed);
    auto scale = [](int fan_in) { return 1.0 / std::sqrt(fan_in); };
    if (arch == GateArch::kLin) {
        p.lin_w.resize(input_dim);
        detail::gate_fill(p.lin_w, scale(input_dim), rng);
        p.lin_b = Eigen::VectorXd::Zero(1);
        return p;
    }
    p.w1.resize(kGateHidden, input_dim);
    detail::gate_fill(p.w1, scale(input_dim), rng);
    p.b1 = Eigen::VectorXd::Zero(kGateHidden);
    p.w2.resize(kGateHidden, kGateHidden);
    detail::gate_fill(p.w2, scale(kGateHidden), rng);
    p.b2 = Eigen::VectorXd::Zero(kGateHidden);
    if (arch == GateArch::kMlp) {
        p.head_w.resize(kGateHidden);
        detail::gate_fill(p.head_w, scale(kGateHidden), rng);
        p.head_b = Eigen::VectorXd::Zero(1);
        return p;
    }
    p.lwx.resize(4 * kGateLstmUnits, kGateHidden);
    detail::gate_fill(p.lwx, scale(kGateHidden), rng);
    p.lwh.resize(4 * kGateLstmUnits, kGateLstmUnits);
    detail::gate_fill(p.lwh, scale(kGateLstmUnits), rng);
    p.lb = Eigen::VectorXd::Zero(4 * kGateLstmUnits);
    p.lb.segment(kGateLstmUnits, kGateLstmUnits).setOnes();
    p.head_w.resize(kGateLstmUnits);
    detail::gate_fill(p.head_w, scale(kGateLstmUnits), rng);
    p.head_b = Eigen::VectorXd::Zero(1);
    return p;
}

namespace detail {

struct GateStepCache {
    Eigen::VectorXd x;
    Eigen::VectorXd z1, a1, z2, a2;  // trunk
    Eigen::VectorXd gates, c, tanh_c, h, h_prev, c_prev;  // lstm
    double z = 0;
    double sig = 0;
    double lambda = 0;
};

inline Eigen::VectorXd relu(const Eigen::VectorXd& v) {
    return v.cwiseMax(0.0);
}

// forward for one sentence-sequence; caches are optional (training only)
inline void gate_forward_seq(const GatingParams& p,
                             std::span<const Eigen::VectorXd* const> feats,
                             std::vector<double>& lambdas,
                             std::vector<GateStepCache>* caches) {
    const int U = kGateLstmUnits;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(U);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(U);
    for (const auto* xp : feats) {
        const Eigen::VectorXd& x = *xp;
        if (x.size() != p.input_dim)
            throw RuntimeError("gate_forward: feature dimension " +
                               std::to_string(x.size()) + " != expected " +
                               std::to_string(p.input_dim));
        GateStepCache cache;
        double z;
        if (p.arch == GateArch::kLin) {
            z = p.lin_w.dot(x) + p.lin_b[0];
        } else {
            cache.z1 = p.w1 * x + p.b1;
            cache.a1 = relu(cache.z1);
            cache.z2 = p.w2 * cache.a1 + p.b2;
            cache.a2 = relu(cache.z2);
            if (p.arch == GateArch::kMlp) {
                z = p.head_w.dot(cache.a2) + p.head_b[0];
            } else {
                Eigen::VectorXd g = p.lwx * cache.a2 + p.lwh * h + p.lb;
                for (int k = 0; k < 2 * U; ++k)
                    g[k] = gate_sigmoid(g[k]);  // input, forget
                for (int k = 2 * U; k < 3 * U; ++k) g[k] = std::tanh(g[k]);
                for (int k = 3 * U; k < 4 * U; ++k) g[k] = gate_sigmoid(g[k]);
                cache.h_prev = h;
                cache.c_prev = c;
                c = g.segment(U, U).cwiseProduct(c) +
                    g.segment(0, U).cwiseProduct(g.segment(2 * U, U));
                cache.tanh_c = c.array().tanh().matrix();
                h = g.segment(3 * U, U).cwiseProduct(cache.tanh_c);
                cache.gates = g;
                cache.c = c;
                cache.h = h;
                z = p.head_w.dot(h) + p.head_b[0];
            }
        }
        double sig = gate_sigmoid(z);
        double lambda = clamp_lambda(sig);
        lambdas.push_back(lambda);
        if (caches) {
            cache.x = x;
            cache.z = z;
            cache.sig = sig;
            cache.lambda = lambda;
            caches->push_back(std::move(cache));
        }
    }
}

}  // namespace detail

// Per-step mixture weights for one sentence; the LSTM variant's state starts
// fresh at the sequence head.
inline std::vector<double> gate_forward(
    const GatingParams& p, std::span<const Eigen::VectorXd* const> features) {
    std::vector<double> lambdas;
    lambdas.reserve(features.size());
    detail::gate_forward_seq(p, features, lambdas, nullptr);
    return lambdas;
}

inline std::vector<double> gate_forward(
    const GatingParams& p, const std::vector<Eigen::VectorXd>& features) {
    std::vector<const Eigen::VectorXd*> ptrs;
    ptrs.reserve(features.size());
    for (const auto& f : features) ptrs.push_back(&f);
    return gate_forward(p, ptrs);
}

namespace detail {

// Gradient of the mean mixture cross-entropy over one sentence-sequence,
// accumulated into `grads` (same shapes as params). Returns the summed loss.
inline double gate_backward_seq(const GatingParams& p,
                                std::span<const GateStep* const> steps,
                                std::span<const Eigen::VectorXd* const> feats,
                                double inv_scale, GatingParams& grads) {
    std::vector<double> lambdas;
    std::vector<GateStepCache> caches;
    lambdas.reserve(feats.size());
    caches.reserve(feats.size());
    gate_forward_seq(p, feats, lambdas, &caches);

    const int U = kGateLstmUnits;
    double loss = 0;
    std::vector<double> dz(feats.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const auto& s = *steps[i];
        if (!(s.p_nn > 0.0) || !(s.p_ng > 0.0))
            throw RuntimeError(
                "train_gate: expert probabilities must be positive");
        double lambda = lambdas[i];
        double p_ens = lambda * s.p_nn + (1.0 - lambda) * s.p_ng;
        loss -= std::log(p_ens);
        double dlambda = -(s.p_nn - s.p_ng) / p_ens;
        double sig = caches[i].sig;
        dz[i] = dlambda * sig * (1.0 - sig) * inv_scale;
    }

    if (p.arch == GateArch::kLin) {
        for (std::size_t i = 0; i < feats.size(); ++i) {
            grads.lin_w.noalias() += dz[i] * caches[i].x;
            grads.lin_b[0] += dz[i];
        }
        return loss;
    }

    std::vector<Eigen::VectorXd> da2(feats.size());
    if (p.arch == GateArch::kMlp) {
        for (std::size_t i = 0; i < feats.size(); ++i) {
            grads.head_w.noalias() += dz[i] * caches[i].a2;
            grads.head_b[0] += dz[i];
            da2[i] = dz[i] * p.head_w;
        }
    } else {
        Eigen::VectorXd dh = Eigen::VectorXd::Zero(U);
        Eigen::VectorXd dc = Eigen::VectorXd::Zero(U);
        for (std::size_t i = feats.size(); i-- > 0;) {
            const auto& cache = caches[i];
            grads.head_w.noalias() += dz[i] * cache.h;
            grads.head_b[0] += dz[i];
            dh.noalias() += dz[i] * p.head_w;

            auto i_g = cache.gates.segment(0, U);
            auto f_g = cache.gates.segment(U, U);
            auto g_g = cache.gates.segment(2 * U, U);
            auto o_g = cache.gates.segment(3 * U, U);
            dc += dh.cwiseProduct(o_g).cwiseProduct(
                (1.0 - cache.tanh_c.array().square()).matrix());
            Eigen::VectorXd dgates(4 * U);
            dgates.segment(0, U) =
                dc.cwiseProduct(g_g).cwiseProduct(
                    i_g.cwiseProduct((1.0 - i_g.array()).matrix()));
            dgates.segment(U, U) =
                dc.cwiseProduct(cache.c_prev)
                    .cwiseProduct(f_g.cwiseProduct(
                        (1.0 - f_g.array()).matrix()));
            dgates.segment(2 * U, U) = dc.cwiseProduct(i_g).cwiseProduct(
                (1.0 - g_g.array().square()).matrix());
            dgates.segment(3 * U, U) =
                dh.cwiseProduct(cache.tanh_c)
                    .cwiseProduct(o_g.cwiseProduct(
                        (1.0 - o_g.array()).matrix()));

            grads.lwx.noalias() += dgates * cache.a2.transpose();
            grads.lwh.noalias() += dgates * cache.h_prev.transpose();
            grads.lb.noalias() += dgates;
            da2[i] = p.lwx.transpose() * dgates;
            dc = dc.cwiseProduct(f_g);
            dh.noalias() = p.lwh.transpose() * dgates;
        }
    }

    for (std::size_t i = 0; i < feats.size(); ++i) {
        const auto& cache = caches[i];
        Eigen::VectorXd d2 = da2[i];
        for (int k = 0; k < kGateHidden; ++k)
            if (cache.z2[k] <= 0.0) d2[k] = 0.0;
        grads.w2.noalias() += d2 * cache.a1.transpose();
        grads.b2.noalias() += d2;
        Eigen::VectorXd d1 = p.w2.transpose() * d2;
        for (int k = 0; k < kGateHidden; ++k)
            if (cache.z1[k] <= 0.0) d1[k] = 0.0;
        grads.w1.noalias() += d1 * cache.x.transpose();
        grads.b1.noalias() += d1;
    }
    return loss;
}

inline GatingParams zero_like(const GatingParams& p) {
    GatingParams g = p;
    g.for_each_tensor([](const std::string&, auto& m) { m.setZero(); });
    return g;
}

}  // namespace detail

// Mean mixture cross-entropy of the gate over a dataset (nats per step).
inline double gate_dataset_loss(const GatingParams& p,
                                const std::vector<GateSentence>& data) {
    double loss = 0;
    std::int64_t n = 0;
    for (const auto& sent : data) {
        std::vector<const Eigen::VectorXd*> feats;
        feats.reserve(sent.size());
        for (const auto& s : sent) feats.push_back(&s.features);
        auto lambdas = gate_forward(p, feats);
        for (std::size_t i = 0; i < sent.size(); ++i) {
            double pe = lambdas[i] * sent[i].p_nn +
                        (1.0 - lambdas[i]) * sent[i].p_ng;
            if (!(pe > 0.0))
                throw RuntimeError("gate loss: nonpositive mixture");
            loss -= std::log(pe);
            ++n;
        }
    }
    if (n == 0) throw RuntimeError("gate loss: empty dataset");
    return loss / static_cast<double>(n);
}

struct GateTrainResult {
    std::vector<double> lr_trace;               // per optimizer step
    std::vector<std::pair<int, double>> evals;  // (step, stop loss)
    double best_stop_loss = 0;
    double final_train_loss = 0;  // mean loss over gate_train at the end
    int steps_run = 0;
};

// Minimizes the ensemble cross-entropy over gate_train with Adam; the expert
// probabilities are inputs and never change. Leaves the parameters of the
// best gate_stop evaluation in place.
inline GateTrainResult train_gate(GatingParams& params,
                                  const std::vector<GateSentence>& gate_train,
                                  const std::vector<GateSentence>& gate_stop,
                                  const GateTrainConfig& cfg) {
    cfg.validate();
    if (gate_train.empty() || gate_stop.empty())
        throw ConfigError("train_gate: empty dataset");

    GateTrainResult result;
    GatingParams grads = detail::zero_like(params);
    GatingParams m = detail::zero_like(params);
    GatingParams v = detail::zero_like(params);
    GatingParams best = params;
    double best_loss = gate_dataset_loss(params, gate_stop);
    int bad_evals = 0;

    // flat step view for the stateless architectures, sentence view otherwise
    const bool by_sentence = params.arch == GateArch::kLstm;
    std::vector<std::pair<std::size_t, std::size_t>> flat;  // (sentence, step)
    for (std::size_t si = 0; si < gate_train.size(); ++si)
        for (std::size_t k = 0; k < gate_train[si].size(); ++k)
            flat.emplace_back(si, k);
    std::vector<std::size_t> sent_order(gate_train.size());
    for (std::size_t i = 0; i < sent_order.size(); ++i) sent_order[i] = i;

    std::mt19937_64 rng(derive_seed(cfg.seed, "gate-order"));
    std::size_t cursor = 0;
    std::size_t epoch_size = by_sentence ? sent_order.size() : flat.size();
    auto reshuffle = [&]() {
        if (by_sentence)
            deterministic_shuffle(sent_order, rng);
        else
            deterministic_shuffle(flat, rng);
        cursor = 0;
    };
    reshuffle();

    // flat views over the tensors; storage never moves during training
    std::vector<double*> pp, gp, mp, vp;
    std::vector<Eigen::Index> sizes;
    params.for_each_tensor([&](const std::string&, auto& t) {
        pp.push_back(t.data());
        sizes.push_back(t.size());
    });
    grads.for_each_tensor(
        [&](const std::string&, auto& t) { gp.push_back(t.data()); });
    m.for_each_tensor(
        [&](const std::string&, auto& t) { mp.push_back(t.data()); });
    v.for_each_tensor(
        [&](const std::string&, auto& t) { vp.push_back(t.data()); });

    for (int step = 0; step < cfg.max_steps; ++step) {
        double lr = cfg.lr * std::pow(2.0, -(step / cfg.halve_every));
        result.lr_trace.push_back(lr);

        grads.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
        // assemble a batch of roughly cfg.batch steps
        std::vector<const GateStep*> steps;
        std::vector<const Eigen::VectorXd*> feats;
        std::vector<std::pair<std::size_t, std::size_t>> spans;  // sentences
        int want = cfg.batch;
        if (by_sentence) {
            int got = 0;
            while (got < want) {
                if (cursor >= epoch_size) reshuffle();
                const auto& sent = gate_train[sent_order[cursor++]];
                spans.emplace_back(steps.size(), sent.size());
                for (const auto& s : sent) {
                    steps.push_back(&s);
                    feats.push_back(&s.features);
                }
                got += static_cast<int>(sent.size());
            }
        } else {
            for (int k = 0; k < want; ++k) {
                if (cursor >= epoch_size) reshuffle();
                auto [si, sk] = flat[cursor++];
                steps.push_back(&gate_train[si][sk]);
                feats.push_back(&gate_train[si][sk].features);
            }
            spans.emplace_back(0, steps.size());
        }

        double inv = 1.0 / static_cast<double>(steps.size());
        for (auto [begin, count] : spans) {
            std::span<const GateStep* const> s(steps.data() + begin, count);
            std::span<const Eigen::VectorXd* const> f(feats.data() + begin,
                                                      count);
            detail::gate_backward_seq(params, s, f, inv, grads);
        }

        // Adam with bias correction
        double t = step + 1;
        double corr1 = 1.0 - std::pow(cfg.beta1, t);
        double corr2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t idx = 0; idx < pp.size(); ++idx) {
            for (Eigen::Index i = 0; i < sizes[idx]; ++i) {
                double g = gp[idx][i];
                mp[idx][i] = cfg.beta1 * mp[idx][i] + (1 - cfg.beta1) * g;
                vp[idx][i] = cfg.beta2 * vp[idx][i] + (1 - cfg.beta2) * g * g;
                double mhat = mp[idx][i] / corr1;
                double vhat = vp[idx][i] / corr2;
                pp[idx][i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            }
        }
        result.steps_run = step + 1;

        if ((step + 1) % cfg.eval_every == 0) {
            double stop_loss = gate_dataset_loss(params, gate_stop);
            result.evals.emplace_back(step + 1, stop_loss);
            if (stop_loss < best_loss - 1e-12) {
                best_loss = stop_loss;
                best = params;
                bad_evals = 0;
            } else if (++bad_evals >= cfg.patience) {
                break;
            }
        }
    }
    params = best;
    result.best_stop_loss = best_loss;
    result.final_train_loss = gate_dataset_loss(params, gate_train);
    return result;
}

// Central finite differences over every gate parameter.
inline double gate_gradient_check(GatingParams& params,
                                  const std::vector<GateSentence>& data,
                                  double epsilon) {
    std::int64_t n = 0;
    for (const auto& s : data) n += static_cast<std::int64_t>(s.size());
    auto loss_fn = [&]() { return gate_dataset_loss(params, data); };

    GatingParams grads = detail::zero_like(params);
    for (const auto& sent : data) {
        std::vector<const GateStep*> steps;
        std::vector<const Eigen::VectorXd*> feats;
        for (const auto& s : sent) {
            steps.push_back(&s);
            feats.push_back(&s.features);
        }
        detail::gate_backward_seq(params, steps, feats,
                                  1.0 / static_cast<double>(n), grads);
    }

    double worst = 0;
    std::vector<double*> pp, gp;
    std::vector<Eigen::Index> sizes;
    params.for_each_tensor([&](const std::string&, auto& t) {
        pp.push_back(t.data());
        sizes.push_back(t.size());
    });
    grads.for_each_tensor(
        [&](const std::string&, auto& t) { gp.push_back(t.data()); });
    for (std::size_t k = 0; k < pp.size(); ++k) {
        for (Eigen::Index i = 0; i < sizes[k]; ++i) {
            double saved = pp[k][i];
            pp[k][i] = saved + epsilon;
            double lp = loss_fn();
            pp[k][i] = saved - epsilon;
            double lm = loss_fn();
            pp[k][i] = saved;
            double numeric = (lp - lm) / (2 * epsilon);
            double analytic = gp[k][i];
            double denom = std::max(std::abs(numeric) + std::abs(analytic),
                                    1e-6);
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

inline void save_gate(const GatingParams& p, const std::string& bin_path,
                      const std::string& manifest_path) {
    Container c;
    c.header = {{"kind", "gate"},
                {"arch", to_string(p.arch)},
                {"mode", to_string(p.mode)},
                {"input_dim", p.input_dim}};
    const_cast<GatingParams&>(p).for_each_tensor(
        [&](const std::string& name, const auto& m) {
            c.add_double(name, m);
        });
    c.add_double("norm.mean", p.normalizer.mean());
    c.add_double("norm.std", p.normalizer.stddev());
    save_container(c, bin_path, manifest_path);
}

inline GatingParams load_gate(const std::string& bin_path) {
    Container c = load_container(bin_path);
    if (c.header.value("kind", "") != "gate")
        throw RuntimeError("container is not a gate model: " + bin_path);
    GatingParams p;
    p.arch = parse_gate_arch(c.header.at("arch").get<std::string>());
    p.mode = parse_feature_mode(c.header.at("mode").get<std::string>());
    p.input_dim = c.header.at("input_dim").get<int>();
    GatingParams shaped = init_gate(p.arch, p.mode, p.input_dim, 0);
    shaped.for_each_tensor([&](const std::string& name, auto& m) {
        m = c.tensor(name).cast<double>();
    });
    shaped.arch = p.arch;
    shaped.mode = p.mode;
    shaped.input_dim = p.input_dim;
    shaped.normalizer = FeatureNormalizer(
        c.tensor("norm.mean").cast<double>(),
        c.tensor("norm.std").cast<double>());
    return shaped;
}

// convenience: raw dump -> normalized copy
inline std::vector<GateSentence> normalize_sentences(
    const FeatureNormalizer& norm, const std::vector<GateSentence>& raw) {
    std::vector<GateSentence> out = raw;
    for (auto& sent : out)
        for (auto& step : sent) step.features = norm.apply(step.features);
    return out;
}

}  // namespace mixlm
