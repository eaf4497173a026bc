#pragma once

// Flat key-value pipeline configuration with strict parsing: unknown keys
// are errors, every value is range-checked, relative paths resolve against
// the config file's directory.

#include <filesystem>
#include <map>

#include "mixlm/corpus.hpp"
#include "mixlm/features.hpp"
#include "mixlm/gating.hpp"
#include "mixlm/neural.hpp"

namespace mixlm {

struct PipelineConfig {
    std::string corpus;       // resolved path
    std::string out = "out";  // output directory
    std::uint64_t seed = 1;

    int vocab_min_count = 1;
    int vocab_max_size = 0;  // 0 = unlimited

    int ngram_order = 5;
    std::int64_t ngram_prune_min_count = 0;

    NNConfig nn;  // seed filled per stage

    FeatureMode gate_mode = FeatureMode::kFull;
    GateArch gate_arch = GateArch::kLstm;
    GateTrainConfig gate;

    SplitSpec split;  // seed filled per stage
    int runs = 10;
    int bins = 10;
    double cap_threshold = 0.5;
};

namespace detail {

inline SplitSpec parse_split_spec(std::string_view text) {
    SplitSpec spec;
    bool any_ratio = false, any_count = false;
    for (auto part : split_on(text, ',')) {
        part = trim(part);
        if (part.empty()) continue;
        auto colon = part.find(':');
        if (colon == std::string_view::npos)
            throw ConfigError("split entry needs name:value, got '" +
                              std::string(part) + "'");
        SplitSpec::Part p;
        p.name = std::string(trim(part.substr(0, colon)));
        auto value = trim(part.substr(colon + 1));
        if (value == "rest") {
            p.rest = true;
            any_count = true;
        } else if (value.find('.') != std::string_view::npos) {
            p.ratio = parse_double(value, "split ratio");
            if (p.ratio < 0) throw ConfigError("split ratio must be >= 0");
            any_ratio = true;
        } else {
            p.count = parse_long(value, "split count");
            if (p.count < 0) throw ConfigError("split count must be >= 0");
            any_count = true;
        }
        spec.parts.push_back(std::move(p));
    }
    if (spec.parts.empty()) throw ConfigError("split spec is empty");
    if (any_ratio && any_count)
        throw ConfigError("split spec mixes ratios and counts");
    return spec;
}

}  // namespace detail

// The pipeline's four fixed partitions.
inline constexpr const char* kSplitParts[] = {"train", "gate_train",
                                              "gate_stop", "test"};

inline PipelineConfig validate_config(const std::string& text,
                                      const std::string& base_dir) {
    std::map<std::string, std::string> kv;
    std::size_t line_no = 0;
    for (auto raw : split_on(text, '\n')) {
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not 'key = value': '" + std::string(line) +
                              "'");
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) throw ConfigError("empty config key");
        if (!kv.emplace(key, value).second)
            throw ConfigError("duplicate config key '" + key + "'");
    }

    PipelineConfig cfg;
    cfg.split = detail::parse_split_spec(
        "train:0.85,gate_train:0.08,gate_stop:0.02,test:0.05");

    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        auto v = it->second;
        kv.erase(it);
        return v;
    };
    auto take_long = [&](const char* key, long lo, long hi,
                         long def) -> long {
        auto v = take(key);
        if (!v) return def;
        long x = parse_long(*v, key);
        if (x < lo || x > hi)
            throw ConfigError(std::string("config key '") + key +
                              "' out of range [" + std::to_string(lo) + "," +
                              std::to_string(hi) + "]: " + *v);
        return x;
    };
    auto take_double = [&](const char* key, double lo, double hi,
                           double def) -> double {
        auto v = take(key);
        if (!v) return def;
        double x = parse_double(*v, key);
        if (!(x >= lo && x <= hi))
            throw ConfigError(std::string("config key '") + key +
                              "' out of range: " + *v);
        return x;
    };

    auto corpus = take("corpus");
    if (!corpus) throw ConfigError("config is missing required key 'corpus'");
    std::filesystem::path cp(*corpus);
    if (cp.is_relative()) cp = std::filesystem::path(base_dir) / cp;
    cfg.corpus = cp.lexically_normal().string();
    if (!std::filesystem::exists(cfg.corpus))
        throw ConfigError("config key 'corpus': no such file: " + cfg.corpus);

    if (auto v = take("out")) {
        std::filesystem::path op(*v);
        if (op.is_relative()) op = std::filesystem::path(base_dir) / op;
        cfg.out = op.lexically_normal().string();
    }
    cfg.seed = static_cast<std::uint64_t>(
        take_long("seed", 0, std::numeric_limits<long>::max(), 1));

    cfg.vocab_min_count = static_cast<int>(take_long("vocab.min_count", 1,
                                                     1 << 30, 1));
    cfg.vocab_max_size = static_cast<int>(take_long("vocab.max_size", 0,
                                                    1 << 24, 0));
    if (cfg.vocab_max_size != 0 && cfg.vocab_max_size < 3)
        throw ConfigError("config key 'vocab.max_size' must be 0 or >= 3");

    cfg.ngram_order = static_cast<int>(take_long("ngram.order", 1, 8, 5));
    cfg.ngram_prune_min_count =
        take_long("ngram.prune_min_count", 0, 1 << 30, 0);

    cfg.nn.layers = static_cast<int>(take_long("nn.layers", 1, 8, 1));
    cfg.nn.d_emb = static_cast<int>(take_long("nn.d_emb", 0, 1 << 16, 0));
    cfg.nn.d_hid = static_cast<int>(take_long("nn.d_hid", 1, 1 << 16, 128));
    cfg.nn.dropout = take_double("nn.dropout", 0.0, 0.999, 0.5);
    cfg.nn.lr = take_double("nn.lr", 1e-9, 1e6, 1.0);
    cfg.nn.lr_decay = take_double("nn.lr_decay", 0.01, 1.0, 0.5);
    cfg.nn.batch_size = static_cast<int>(take_long("nn.batch", 1, 1 << 20, 64));
    cfg.nn.bptt = static_cast<int>(take_long("nn.bptt", 1, 1 << 20, 32));
    cfg.nn.max_epochs = static_cast<int>(take_long("nn.max_epochs", 1, 10000,
                                                   10));
    cfg.nn.patience = static_cast<int>(take_long("nn.patience", 1, 10000, 3));

    if (auto v = take("gate.mode")) cfg.gate_mode = parse_feature_mode(*v);
    if (auto v = take("gate.arch")) cfg.gate_arch = parse_gate_arch(*v);
    cfg.gate.lr = take_double("gate.lr", 1e-9, 1e3, 6e-3);
    cfg.gate.halve_every = static_cast<int>(take_long("gate.halve_every", 1,
                                                      1 << 30, 5000));
    cfg.gate.batch = static_cast<int>(take_long("gate.batch", 1, 1 << 20,
                                                256));
    cfg.gate.max_steps = static_cast<int>(take_long("gate.max_steps", 1,
                                                    1 << 30, 20000));
    cfg.gate.eval_every = static_cast<int>(take_long("gate.eval_every", 1,
                                                     1 << 30, 250));
    cfg.gate.patience = static_cast<int>(take_long("gate.patience", 1,
                                                   1 << 30, 10));

    if (auto v = take("split")) cfg.split = detail::parse_split_spec(*v);
    for (const char* name : kSplitParts) {
        bool found = false;
        for (const auto& p : cfg.split.parts) found = found || p.name == name;
        if (!found)
            throw ConfigError(std::string("split spec must name partition '") +
                              name + "'");
    }

    cfg.runs = static_cast<int>(take_long("runs", 1, 10000, 10));
    cfg.bins = static_cast<int>(take_long("bins", 1, 1 << 20, 10));
    cfg.cap_threshold = take_double("cap.threshold", 0.0, 1.0, 0.5);

    // the gate parameter budget applies to the handcrafted feature sets
    for (auto mode : {FeatureMode::kFull, FeatureMode::kSimple}) {
        auto probe =
            init_gate(cfg.gate_arch, mode, feature_dim(mode), cfg.seed);
        if (probe.count_params() >= 5000)
            throw ConfigError("gate network for " +
                              std::string(to_string(mode)) +
                              " exceeds the 5000-parameter budget");
    }

    if (!kv.empty())
        throw ConfigError("unknown config key '" + kv.begin()->first + "'");
    return cfg;
}

inline PipelineConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return validate_config(
        buf.str(), std::filesystem::path(path).parent_path().string());
}

}  // namespace mixlm
