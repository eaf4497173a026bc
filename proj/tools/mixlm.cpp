// Pipeline driver: one stage (or the whole chain) per invocation, driven by
// a flat key-value config file. Logs go to stderr, artifacts to the output
// directory. Exit codes: 0 success, 1 usage or config error, 2 runtime
// failure.

#include <iostream>

#include "CLI11.hpp"
#include "mixlm/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"adaptive mixture of n-gram and neural language models"};
    std::string config_path;
    std::string stage_name;
    std::string stage_positional;
    std::string out_override;
    std::int64_t seed_override = -1;

    app.add_option("--config", config_path, "pipeline config file")
        ->required();
    app.add_option("--stage", stage_name,
                   "stage to run: vocab, train-ngram, train-nn, "
                   "dump-features, train-gate, tune-static, evaluate, "
                   "analyze, all");
    app.add_option("STAGE", stage_positional, "stage to run (positional)");
    app.add_option("--seed", seed_override, "override the config seed");
    app.add_option("--out", out_override, "override the output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (stage_name.empty() && stage_positional.empty())
            throw mixlm::ConfigError("no stage given (use --stage or a "
                                     "positional stage name)");
        if (!stage_name.empty() && !stage_positional.empty() &&
            stage_name != stage_positional)
            throw mixlm::ConfigError("--stage and the positional stage "
                                     "disagree");
        auto stage = mixlm::parse_stage(
            stage_name.empty() ? stage_positional : stage_name);
        auto cfg = mixlm::load_config_file(config_path);
        if (seed_override >= 0)
            cfg.seed = static_cast<std::uint64_t>(seed_override);
        if (!out_override.empty()) cfg.out = out_override;
        std::filesystem::create_directories(cfg.out);
        mixlm::run_stage(cfg, stage);
        return 0;
    } catch (const mixlm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
