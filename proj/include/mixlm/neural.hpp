#pragma once

// Word-level LSTM language model with full softmax: batched forward pass,
// exact backpropagation through time with truncation, SGD training with
// global-norm clipping, and serialization into the tensor container.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <random>
#include <span>

#include "mixlm/common.hpp"
#include "mixlm/container.hpp"
#include "mixlm/corpus.hpp"

namespace mixlm {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct NNConfig {
    int layers = 1;
    int d_emb = 0;  // 0 means "same as d_hid"
    int d_hid = 128;
    double dropout = 0.5;
    double lr = 1.0;
    double lr_decay = 0.5;
    int batch_size = 64;
    int bptt = 32;  // gradient truncation length inside a sentence
    int max_epochs = 10;
    int patience = 3;
    std::uint64_t seed = 1;

    int emb_dim() const { return d_emb > 0 ? d_emb : d_hid; }

    void validate() const {
        if (layers < 1) throw ConfigError("nn.layers must be >= 1");
        if (d_hid < 1) throw ConfigError("nn.d_hid must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw ConfigError("nn.dropout must lie in [0,1)");
        if (bptt < 1) throw ConfigError("nn.bptt must be >= 1");
        if (batch_size < 1) throw ConfigError("nn.batch must be >= 1");
        if (lr <= 0) throw ConfigError("nn.lr must be positive");
    }
};

template <typename S>
struct LstmLayer {
    // gate rows stacked [input; forget; candidate; output], each d_hid high
    Mat<S> wx;  // 4H x input-dim
    Mat<S> wh;  // 4H x H
    Vec<S> b;   // 4H
};

template <typename S>
struct NeuralLMParams {
    NNConfig config;
    WordId vocab = 0;
    Mat<S> embedding;  // E x V, one column per word
    std::vector<LstmLayer<S>> layers;
    Mat<S> out_w;  // V x H
    Vec<S> out_b;  // V

    std::int64_t parameter_count() const {
        std::int64_t n = embedding.size() + out_w.size() + out_b.size();
        for (const auto& l : layers) n += l.wx.size() + l.wh.size() + l.b.size();
        return n;
    }

    template <typename F>
    void for_each_tensor(F&& f) {
        f("embedding", embedding);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto tag = "lstm" + std::to_string(i);
            f(tag + ".wx", layers[i].wx);
            f(tag + ".wh", layers[i].wh);
            f(tag + ".b", layers[i].b);
        }
        f("out.w", out_w);
        f("out.b", out_b);
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        const_cast<NeuralLMParams*>(this)->for_each_tensor(
            [&](const std::string& name, auto& m) {
                f(name, static_cast<const std::remove_reference_t<decltype(m)>&>(m));
            });
    }
};

namespace detail {

template <typename S, typename Rng>
void fill_uniform(Eigen::Ref<Mat<S>> m, double half_range, Rng& rng) {
    S* p = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i)
        p[i] = static_cast<S>((unit_draw(rng) * 2.0 - 1.0) * half_range);
}

}  // namespace detail

template <typename S>
NeuralLMParams<S> init_params(const NNConfig& config, WordId vocab) {
    config.validate();
    if (vocab < 1) throw ConfigError("init_params: empty vocabulary");
    NeuralLMParams<S> p;
    p.config = config;
    p.vocab = vocab;
    const int E = config.emb_dim();
    const int H = config.d_hid;

    std::mt19937_64 rng(config.seed);
    p.embedding.resize(E, vocab);
    detail::fill_uniform<S>(p.embedding, 0.05, rng);
    p.layers.resize(static_cast<std::size_t>(config.layers));
    for (int l = 0; l < config.layers; ++l) {
        auto& layer = p.layers[static_cast<std::size_t>(l)];
        int din = l == 0 ? E : H;
        layer.wx.resize(4 * H, din);
        layer.wh.resize(4 * H, H);
        detail::fill_uniform<S>(layer.wx, 0.05, rng);
        detail::fill_uniform<S>(layer.wh, 0.05, rng);
        layer.b = Vec<S>::Zero(4 * H);
        layer.b.segment(H, H).setOnes();  // forget-gate bias
    }
    p.out_w.resize(vocab, H);
    detail::fill_uniform<S>(p.out_w, 0.05, rng);
    p.out_b = Vec<S>::Zero(vocab);
    return p;
}

// One scored prediction position. dist/hidden views are only valid inside
// the callback.
template <typename S>
struct StepView {
    int sentence;   // index within the batch span
    int t;          // 1-based position of the predicted token
    WordId target;
    const S* dist;    // V entries
    const S* hidden;  // H entries, top layer
};

namespace detail {

template <typename S>
struct LayerCache {
    Mat<S> input;      // din x B (after dropout)
    Mat<S> gates;      // 4H x B, post-activation
    Mat<S> c;          // H x B
    Mat<S> c_prev;     // H x B
    Mat<S> h_prev;     // H x B
    Mat<S> tanh_c;     // H x B
    Mat<S> drop_mask;  // H x B (output dropout), empty when off
};

template <typename S>
struct StepCache {
    std::vector<LayerCache<S>> layers;
    Mat<S> x_mask;  // E x B embedding-output dropout mask, empty when off
    Mat<S> probs;   // V x B
};

template <typename S>
struct Gradients {
    NeuralLMParams<S> g;           // same shapes, gradient values
    std::vector<WordId> touched;   // embedding columns with nonzero grad
    std::vector<char> touched_at;  // per-column flag

    explicit Gradients(const NeuralLMParams<S>& p) {
        g.config = p.config;
        g.vocab = p.vocab;
        g.embedding = Mat<S>::Zero(p.embedding.rows(), p.embedding.cols());
        g.layers.resize(p.layers.size());
        for (std::size_t i = 0; i < p.layers.size(); ++i) {
            g.layers[i].wx = Mat<S>::Zero(p.layers[i].wx.rows(),
                                          p.layers[i].wx.cols());
            g.layers[i].wh = Mat<S>::Zero(p.layers[i].wh.rows(),
                                          p.layers[i].wh.cols());
            g.layers[i].b = Vec<S>::Zero(p.layers[i].b.size());
        }
        g.out_w = Mat<S>::Zero(p.out_w.rows(), p.out_w.cols());
        g.out_b = Vec<S>::Zero(p.out_b.size());
        touched_at.assign(static_cast<std::size_t>(p.vocab), 0);
    }

    void touch(WordId w) {
        if (!touched_at[static_cast<std::size_t>(w)]) {
            touched_at[static_cast<std::size_t>(w)] = 1;
            touched.push_back(w);
        }
    }

    void clear() {
        for (WordId w : touched) {
            g.embedding.col(w).setZero();
            touched_at[static_cast<std::size_t>(w)] = 0;
        }
        touched.clear();
        for (auto& l : g.layers) {
            l.wx.setZero();
            l.wh.setZero();
            l.b.setZero();
        }
        g.out_w.setZero();
        g.out_b.setZero();
    }

    double squared_norm() const {
        double n = 0;
        for (WordId w : touched)
            n += static_cast<double>(g.embedding.col(w).squaredNorm());
        for (const auto& l : g.layers)
            n += static_cast<double>(l.wx.squaredNorm()) +
                 static_cast<double>(l.wh.squaredNorm()) +
                 static_cast<double>(l.b.squaredNorm());
        n += static_cast<double>(g.out_w.squaredNorm()) +
             static_cast<double>(g.out_b.squaredNorm());
        return n;
    }

    void scale(S f) {
        for (WordId w : touched) g.embedding.col(w) *= f;
        for (auto& l : g.layers) {
            l.wx *= f;
            l.wh *= f;
            l.b *= f;
        }
        g.out_w *= f;
        g.out_b *= f;
    }
};

template <typename S>
void apply_sgd(NeuralLMParams<S>& p, Gradients<S>& grads, S lr) {
    for (WordId w : grads.touched)
        p.embedding.col(w) -= lr * grads.g.embedding.col(w);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        p.layers[i].wx -= lr * grads.g.layers[i].wx;
        p.layers[i].wh -= lr * grads.g.layers[i].wh;
        p.layers[i].b -= lr * grads.g.layers[i].b;
    }
    p.out_w -= lr * grads.g.out_w;
    p.out_b -= lr * grads.g.out_b;
}

template <typename S>
inline void sigmoid_inplace(Eigen::Ref<Mat<S>> m) {
    m = ((-m.array()).exp() + S(1)).inverse().matrix();
}

// Forward over one batch of sentences, all starting at h = c = 0. Invokes
// step_cb for every prediction position; fills caches when training.
// Returns the summed negative natural-log likelihood over targets.
template <typename S, typename StepCb>
double forward_batch(const NeuralLMParams<S>& p,
                     std::span<const EncodedSentence* const> batch,
                     int t_begin, int t_end,  // target positions [begin,end)
                     std::vector<Mat<S>>* h_state,  // per layer, H x B
                     std::vector<Mat<S>>* c_state,
                     bool dropout_on, std::mt19937_64* rng,
                     std::vector<StepCache<S>>* caches, StepCb&& step_cb) {
    const int B = static_cast<int>(batch.size());
    const int E = p.config.emb_dim();
    const int H = p.config.d_hid;
    const int L = p.config.layers;
    const WordId V = p.vocab;
    const double keep = 1.0 - p.config.dropout;
    const bool dropping = dropout_on && p.config.dropout > 0.0;

    Mat<S> x(E, B), logits(V, B);
    double loss = 0.0;

    for (int t = t_begin; t < t_end; ++t) {
        // inputs are ids[t-1]; targets ids[t]; column b inactive when done
        for (int b = 0; b < B; ++b) {
            const auto& ids = batch[static_cast<std::size_t>(b)]->ids;
            WordId in = Vocabulary::kUnk;
            if (static_cast<std::size_t>(t) < ids.size()) {
                in = ids[static_cast<std::size_t>(t - 1)];
                if (in < 0 || in >= V)
                    throw RuntimeError("nn_forward: word id " +
                                       std::to_string(in) +
                                       " outside vocabulary of size " +
                                       std::to_string(V));
            }
            x.col(b) = p.embedding.col(in);
        }
        StepCache<S>* cache = nullptr;
        if (caches) {
            caches->emplace_back();
            cache = &caches->back();
            cache->layers.resize(static_cast<std::size_t>(L));
        }
        if (dropping) {
            Mat<S> mask(E, B);
            for (int b = 0; b < B; ++b)
                for (int e = 0; e < E; ++e)
                    mask(e, b) = unit_draw(*rng) < keep
                                     ? static_cast<S>(1.0 / keep)
                                     : S(0);
            x = x.cwiseProduct(mask);
            if (cache) cache->x_mask = std::move(mask);
        }
        Mat<S>* layer_in = &x;
        Mat<S> dropped;
        for (int l = 0; l < L; ++l) {
            auto& lay = p.layers[static_cast<std::size_t>(l)];
            auto& h = (*h_state)[static_cast<std::size_t>(l)];
            auto& c = (*c_state)[static_cast<std::size_t>(l)];
            Mat<S> gates(4 * H, B);
            gates.noalias() = lay.wx * (*layer_in);
            gates.noalias() += lay.wh * h;
            gates.colwise() += lay.b;
            sigmoid_inplace<S>(gates.topRows(H));
            sigmoid_inplace<S>(gates.middleRows(H, H));
            gates.middleRows(2 * H, H) =
                gates.middleRows(2 * H, H).array().tanh().matrix();
            sigmoid_inplace<S>(gates.middleRows(3 * H, H));

            Mat<S> c_new = gates.middleRows(H, H).cwiseProduct(c) +
                           gates.topRows(H).cwiseProduct(
                               gates.middleRows(2 * H, H));
            Mat<S> tanh_c = c_new.array().tanh().matrix();
            Mat<S> h_new = gates.middleRows(3 * H, H).cwiseProduct(tanh_c);

            if (cache) {
                auto& lc = cache->layers[static_cast<std::size_t>(l)];
                lc.input = *layer_in;
                lc.gates = gates;
                lc.c = c_new;
                lc.c_prev = c;
                lc.h_prev = h;
                lc.tanh_c = tanh_c;
            }
            h = h_new;
            c = c_new;

            if (dropping) {
                Mat<S> mask(H, B);
                for (int b = 0; b < B; ++b)
                    for (int j = 0; j < H; ++j)
                        mask(j, b) = unit_draw(*rng) < keep
                                         ? static_cast<S>(1.0 / keep)
                                         : S(0);
                dropped = h.cwiseProduct(mask);
                if (cache)
                    cache->layers[static_cast<std::size_t>(l)].drop_mask =
                        mask;
                layer_in = &dropped;
            } else {
                layer_in = &h;
            }
        }

        logits.noalias() = p.out_w * (*layer_in);
        logits.colwise() += p.out_b;
        // column-wise softmax
        for (int b = 0; b < B; ++b) {
            auto col = logits.col(b).array();
            S m = col.maxCoeff();
            col = (col - m).exp();
            S sum = col.sum();
            col /= sum;
        }
        if (cache) cache->probs = logits;

        for (int b = 0; b < B; ++b) {
            const auto& ids = batch[static_cast<std::size_t>(b)]->ids;
            if (static_cast<std::size_t>(t) >= ids.size()) continue;
            WordId target = ids[static_cast<std::size_t>(t)];
            if (target < 0 || target >= V)
                throw RuntimeError("nn_forward: target id outside vocabulary");
            loss -= std::log(static_cast<double>(logits(target, b)));
            StepView<S> view{b, t, target, logits.col(b).data(),
                             (*h_state)[static_cast<std::size_t>(L - 1)]
                                 .col(b)
                                 .data()};
            step_cb(view);
        }
    }
    return loss;
}

struct NullStep {
    template <typename V>
    void operator()(const V&) const {}
};

// Backpropagation over cached steps [t_begin, t_end); gradients of the mean
// loss require the caller to pass inv_scale = 1/n_targets.
template <typename S>
void backward_batch(const NeuralLMParams<S>& p,
                    std::span<const EncodedSentence* const> batch, int t_begin,
                    int t_end, const std::vector<StepCache<S>>& caches,
                    double inv_scale, Gradients<S>& grads) {
    const int B = static_cast<int>(batch.size());
    const int H = p.config.d_hid;
    const int L = p.config.layers;
    const WordId V = p.vocab;

    std::vector<Mat<S>> dh(static_cast<std::size_t>(L)),
        dc(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        dh[static_cast<std::size_t>(l)] = Mat<S>::Zero(H, B);
        dc[static_cast<std::size_t>(l)] = Mat<S>::Zero(H, B);
    }

    Mat<S> dlogits(V, B);
    for (int t = t_end - 1; t >= t_begin; --t) {
        const auto& cache = caches[static_cast<std::size_t>(t - t_begin)];
        dlogits = cache.probs;
        for (int b = 0; b < B; ++b) {
            const auto& ids = batch[static_cast<std::size_t>(b)]->ids;
            if (static_cast<std::size_t>(t) >= ids.size()) {
                dlogits.col(b).setZero();
                continue;
            }
            dlogits(ids[static_cast<std::size_t>(t)], b) -= S(1);
        }
        dlogits *= static_cast<S>(inv_scale);

        // output layer; its input was the (possibly dropped) top hidden state
        const auto& top = cache.layers[static_cast<std::size_t>(L - 1)];
        Mat<S> top_out = top.gates.middleRows(3 * H, H).cwiseProduct(top.tanh_c);
        if (top.drop_mask.size()) top_out = top_out.cwiseProduct(top.drop_mask);
        grads.g.out_w.noalias() += dlogits * top_out.transpose();
        grads.g.out_b.noalias() += dlogits.rowwise().sum();
        Mat<S> dtop = p.out_w.transpose() * dlogits;
        if (top.drop_mask.size()) dtop = dtop.cwiseProduct(top.drop_mask);
        dh[static_cast<std::size_t>(L - 1)] += dtop;

        for (int l = L - 1; l >= 0; --l) {
            const auto& lc = cache.layers[static_cast<std::size_t>(l)];
            auto& lay = p.layers[static_cast<std::size_t>(l)];
            auto& lgrad = grads.g.layers[static_cast<std::size_t>(l)];
            auto i_gate = lc.gates.topRows(H);
            auto f_gate = lc.gates.middleRows(H, H);
            auto g_gate = lc.gates.middleRows(2 * H, H);
            auto o_gate = lc.gates.middleRows(3 * H, H);

            Mat<S>& dh_l = dh[static_cast<std::size_t>(l)];
            Mat<S>& dc_l = dc[static_cast<std::size_t>(l)];
            dc_l += dh_l.cwiseProduct(o_gate)
                        .cwiseProduct((S(1) - lc.tanh_c.array().square())
                                          .matrix());
            Mat<S> dgates(4 * H, B);
            dgates.topRows(H) =
                dc_l.cwiseProduct(g_gate)
                    .cwiseProduct(i_gate.cwiseProduct(
                        (S(1) - i_gate.array()).matrix()));
            dgates.middleRows(H, H) =
                dc_l.cwiseProduct(lc.c_prev)
                    .cwiseProduct(f_gate.cwiseProduct(
                        (S(1) - f_gate.array()).matrix()));
            dgates.middleRows(2 * H, H) =
                dc_l.cwiseProduct(i_gate)
                    .cwiseProduct((S(1) - g_gate.array().square()).matrix());
            dgates.middleRows(3 * H, H) =
                dh_l.cwiseProduct(lc.tanh_c)
                    .cwiseProduct(o_gate.cwiseProduct(
                        (S(1) - o_gate.array()).matrix()));

            lgrad.wx.noalias() += dgates * lc.input.transpose();
            lgrad.wh.noalias() += dgates * lc.h_prev.transpose();
            lgrad.b.noalias() += dgates.rowwise().sum();

            Mat<S> dinput = lay.wx.transpose() * dgates;
            dc_l = dc_l.cwiseProduct(f_gate);
            dh_l.noalias() = lay.wh.transpose() * dgates;

            if (l > 0) {
                // dinput flows into the layer below through its dropout mask
                const auto& below = cache.layers[static_cast<std::size_t>(l - 1)];
                if (below.drop_mask.size())
                    dinput = dinput.cwiseProduct(below.drop_mask);
                dh[static_cast<std::size_t>(l - 1)] += dinput;
            } else {
                if (cache.x_mask.size())
                    dinput = dinput.cwiseProduct(cache.x_mask);
                for (int b = 0; b < B; ++b) {
                    const auto& ids = batch[static_cast<std::size_t>(b)]->ids;
                    if (static_cast<std::size_t>(t) >= ids.size()) continue;
                    WordId in = ids[static_cast<std::size_t>(t - 1)];
                    grads.touch(in);
                    grads.g.embedding.col(in) += dinput.col(b);
                }
            }
        }
    }
}

}  // namespace detail

// Exact per-sentence forward pass; one output per prediction position.
struct StepOutput {
    Eigen::VectorXd hidden;
    Eigen::VectorXd dist;
};

template <typename S>
std::vector<StepOutput> nn_forward(const NeuralLMParams<S>& p,
                                   const EncodedSentence& sentence,
                                   bool dropout_on = false,
                                   std::uint64_t seed = 0) {
    const EncodedSentence* one[] = {&sentence};
    std::vector<Mat<S>> h(static_cast<std::size_t>(p.config.layers),
                          Mat<S>::Zero(p.config.d_hid, 1));
    std::vector<Mat<S>> c = h;
    std::mt19937_64 rng(seed);
    std::vector<StepOutput> out;
    out.reserve(sentence.ids.size());
    detail::forward_batch<S>(
        p, one, 1, static_cast<int>(sentence.ids.size()), &h, &c, dropout_on,
        &rng, nullptr, [&](const StepView<S>& v) {
            StepOutput so;
            so.dist = Eigen::Map<const Vec<S>>(v.dist, p.vocab)
                          .template cast<double>();
            so.hidden = Eigen::Map<const Vec<S>>(v.hidden, p.config.d_hid)
                            .template cast<double>();
            out.push_back(std::move(so));
        });
    return out;
}

// Batched scoring pass (dropout off): step_cb sees every prediction position
// of every sentence, grouped by batch and ordered by time step inside it.
template <typename S, typename F>
double score_sentences(const NeuralLMParams<S>& p,
                       std::span<const EncodedSentence* const> sentences,
                       int batch_size, F&& step_cb) {
    double total_loss = 0;
    std::size_t pos = 0;
    while (pos < sentences.size()) {
        std::size_t n = std::min<std::size_t>(
            static_cast<std::size_t>(batch_size), sentences.size() - pos);
        auto batch = sentences.subspan(pos, n);
        int max_len = 0;
        for (const auto* s : batch)
            max_len = std::max(max_len, static_cast<int>(s->ids.size()));
        std::vector<Mat<S>> h(static_cast<std::size_t>(p.config.layers),
                              Mat<S>::Zero(p.config.d_hid,
                                           static_cast<Eigen::Index>(n)));
        std::vector<Mat<S>> c = h;
        total_loss += detail::forward_batch<S>(
            p, batch, 1, max_len, &h, &c, false, nullptr, nullptr,
            [&](const StepView<S>& v) {
                step_cb(static_cast<std::size_t>(v.sentence) + pos, v);
            });
        pos += n;
    }
    return total_loss;
}

template <typename S>
double nn_perplexity(const NeuralLMParams<S>& p,
                     std::span<const EncodedSentence* const> sentences,
                     int batch_size = 64) {
    std::int64_t targets = 0;
    for (const auto* s : sentences) targets += s->num_targets();
    if (targets == 0) throw RuntimeError("nn_perplexity: no targets");
    double loss = score_sentences(p, sentences, batch_size,
                                  [](std::size_t, const auto&) {});
    return std::exp(loss / static_cast<double>(targets));
}

struct NNEpochLog {
    int epoch;
    double lr;
    double train_loss;  // mean nats per target; NaN for the pre-train row
    double valid_ppl;
};

// Trains in place and leaves the parameters of the best validation epoch.
template <typename S>
std::vector<NNEpochLog> train_nn(
    NeuralLMParams<S>& params,
    std::span<const EncodedSentence* const> train,
    std::span<const EncodedSentence* const> valid) {
    const NNConfig cfg = params.config;
    cfg.validate();
    if (train.empty() || valid.empty())
        throw ConfigError("train_nn: empty train or validation set");

    std::vector<NNEpochLog> log;
    double lr = cfg.lr;
    double best_ppl = nn_perplexity(params, valid, cfg.batch_size);
    log.push_back({0, lr, std::numeric_limits<double>::quiet_NaN(), best_ppl});

    NeuralLMParams<S> best = params;
    detail::Gradients<S> grads(params);
    std::vector<const EncodedSentence*> order(train.begin(), train.end());
    int bad_epochs = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(
            derive_seed(cfg.seed, "nn-shuffle-" + std::to_string(epoch)));
        deterministic_shuffle(order, shuffle_rng);
        std::mt19937_64 drop_rng(
            derive_seed(cfg.seed, "nn-dropout-" + std::to_string(epoch)));

        double epoch_loss = 0;
        std::int64_t epoch_targets = 0;
        for (std::size_t pos = 0; pos < order.size();
             pos += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t n = std::min<std::size_t>(
                static_cast<std::size_t>(cfg.batch_size), order.size() - pos);
            std::span<const EncodedSentence* const> batch(order.data() + pos,
                                                          n);
            int max_len = 0;
            std::int64_t n_targets = 0;
            for (const auto* s : batch) {
                max_len = std::max(max_len, static_cast<int>(s->ids.size()));
                n_targets += s->num_targets();
            }
            std::vector<Mat<S>> h(static_cast<std::size_t>(cfg.layers),
                                  Mat<S>::Zero(cfg.d_hid,
                                               static_cast<Eigen::Index>(n)));
            std::vector<Mat<S>> c = h;

            grads.clear();
            double batch_loss = 0;
            for (int t0 = 1; t0 < max_len; t0 += cfg.bptt) {
                int t1 = std::min(max_len, t0 + cfg.bptt);
                std::vector<detail::StepCache<S>> caches;
                caches.reserve(static_cast<std::size_t>(t1 - t0));
                batch_loss += detail::forward_batch<S>(
                    params, batch, t0, t1, &h, &c, true, &drop_rng, &caches,
                    detail::NullStep{});
                detail::backward_batch<S>(params, batch, t0, t1, caches,
                                          1.0 / static_cast<double>(n_targets),
                                          grads);
            }
            if (!std::isfinite(batch_loss))
                throw RuntimeError(
                    "train_nn: loss diverged (not finite) at epoch " +
                    std::to_string(epoch) + ", batch at sentence " +
                    std::to_string(pos));
            epoch_loss += batch_loss;
            epoch_targets += n_targets;

            double norm = std::sqrt(grads.squared_norm());
            if (norm > 5.0) grads.scale(static_cast<S>(5.0 / norm));
            detail::apply_sgd(params, grads, static_cast<S>(lr));
        }

        double valid_ppl = nn_perplexity(params, valid, cfg.batch_size);
        log.push_back({epoch, lr,
                       epoch_loss / static_cast<double>(epoch_targets),
                       valid_ppl});
        if (valid_ppl < best_ppl) {
            best_ppl = valid_ppl;
            best = params;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            lr *= cfg.lr_decay;
            if (bad_epochs >= cfg.patience) break;
        }
    }
    params = best;
    return log;
}

// Central finite differences on a random subsample of coordinates. With
// dropout_on the masks are regenerated from mask_seed for every evaluation,
// so the perturbed losses see the same masks as the analytic pass.
template <typename S>
double nn_gradient_check(NeuralLMParams<S>& params,
                         std::span<const EncodedSentence* const> batch,
                         double epsilon, int n_coords = 220,
                         std::uint64_t seed = 12345, bool dropout_on = false,
                         std::uint64_t mask_seed = 7777) {
    static_assert(std::is_same_v<S, double>,
                  "gradient checks require double precision");
    std::int64_t n_targets = 0;
    int max_len = 0;
    for (const auto* s : batch) {
        n_targets += s->num_targets();
        max_len = std::max(max_len, static_cast<int>(s->ids.size()));
    }
    auto loss_fn = [&]() {
        std::vector<Mat<S>> h(static_cast<std::size_t>(params.config.layers),
                              Mat<S>::Zero(params.config.d_hid,
                                           static_cast<Eigen::Index>(
                                               batch.size())));
        std::vector<Mat<S>> c = h;
        std::mt19937_64 rng(mask_seed);
        return detail::forward_batch<S>(params, batch, 1, max_len, &h, &c,
                                        dropout_on, &rng, nullptr,
                                        detail::NullStep{}) /
               static_cast<double>(n_targets);
    };

    detail::Gradients<S> grads(params);
    {
        std::vector<Mat<S>> h(static_cast<std::size_t>(params.config.layers),
                              Mat<S>::Zero(params.config.d_hid,
                                           static_cast<Eigen::Index>(
                                               batch.size())));
        std::vector<Mat<S>> c = h;
        std::vector<detail::StepCache<S>> caches;
        std::mt19937_64 rng(mask_seed);
        detail::forward_batch<S>(params, batch, 1, max_len, &h, &c,
                                 dropout_on, &rng, &caches,
                                 detail::NullStep{});
        detail::backward_batch<S>(params, batch, 1, max_len, caches,
                                  1.0 / static_cast<double>(n_targets), grads);
    }

    struct Slot {
        S* param;
        const S* grad;
        Eigen::Index size;
    };
    std::vector<Slot> slots;
    params.for_each_tensor([&](const std::string&, auto& m) {
        slots.push_back({m.data(), nullptr, m.size()});
    });
    std::size_t k = 0;
    grads.g.for_each_tensor([&](const std::string&, auto& m) {
        slots[k++].grad = m.data();
    });

    Eigen::Index total = 0;
    for (const auto& s : slots) total += s.size;
    std::mt19937_64 rng(seed);
    double worst = 0;
    for (int it = 0; it < n_coords; ++it) {
        auto flat = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(total));
        for (const auto& s : slots) {
            if (flat >= s.size) {
                flat -= s.size;
                continue;
            }
            S saved = s.param[flat];
            s.param[flat] = saved + static_cast<S>(epsilon);
            double lp = loss_fn();
            s.param[flat] = saved - static_cast<S>(epsilon);
            double lm = loss_fn();
            s.param[flat] = saved;
            double numeric = (lp - lm) / (2 * epsilon);
            double analytic = s.grad[flat];
            // the denominator floor matches the central-difference noise
            // level (ulp(loss)/2eps); below it the quotient is meaningless
            double denom = std::max(std::abs(numeric) + std::abs(analytic),
                                    1e-6);
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
            break;
        }
    }
    return worst;
}

template <typename S>
void save_nn(const NeuralLMParams<S>& p, const std::string& bin_path,
             const std::string& manifest_path) {
    Container c;
    c.header = {{"kind", "lstm_lm"},
                {"layers", p.config.layers},
                {"d_emb", p.config.emb_dim()},
                {"d_hid", p.config.d_hid},
                {"vocab", p.vocab}};
    p.for_each_tensor([&](const std::string& name, const auto& m) {
        c.add(name, m.template cast<float>());
    });
    save_container(c, bin_path, manifest_path);
}

template <typename S>
NeuralLMParams<S> load_nn(const std::string& bin_path) {
    Container c = load_container(bin_path);
    if (c.header.value("kind", "") != "lstm_lm")
        throw RuntimeError("container is not an lstm_lm model: " + bin_path);
    NeuralLMParams<S> p;
    p.config.layers = c.header.at("layers").get<int>();
    p.config.d_emb = c.header.at("d_emb").get<int>();
    p.config.d_hid = c.header.at("d_hid").get<int>();
    p.vocab = c.header.at("vocab").get<WordId>();
    p.embedding = c.tensor("embedding").cast<S>();
    p.layers.resize(static_cast<std::size_t>(p.config.layers));
    for (int l = 0; l < p.config.layers; ++l) {
        auto tag = "lstm" + std::to_string(l);
        p.layers[static_cast<std::size_t>(l)].wx =
            c.tensor(tag + ".wx").cast<S>();
        p.layers[static_cast<std::size_t>(l)].wh =
            c.tensor(tag + ".wh").cast<S>();
        p.layers[static_cast<std::size_t>(l)].b =
            c.tensor(tag + ".b").cast<S>();
    }
    p.out_w = c.tensor("out.w").cast<S>();
    p.out_b = c.tensor("out.b").cast<S>();
    return p;
}

}  // namespace mixlm
