// Deterministic synthetic corpus generator for experiments and demos.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mixlm/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"generate a deterministic synthetic corpus"};
    std::string out_path;
    mixlm::SynthConfig cfg;
    app.add_option("--out", out_path, "output file (default stdout)");
    app.add_option("--sentences", cfg.sentences, "number of sentences")
        ->check(CLI::PositiveNumber);
    app.add_option("--seed", cfg.seed, "generator seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (out_path.empty()) {
            mixlm::generate_corpus(std::cout, cfg);
        } else {
            std::ofstream out(out_path, std::ios::binary);
            if (!out) {
                std::cerr << "config error: cannot write " << out_path << "\n";
                return 1;
            }
            mixlm::generate_corpus(out, cfg);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
