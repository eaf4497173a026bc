// ARPA query tool: reads tokenized lines (stdin or --input) and emits one
// TSV row per token: token, log10 probability, matched order. Sentences are
// separated by blank lines in the output.

#include <iostream>

#include "CLI11.hpp"
#include "mixlm/arpa.hpp"

int main(int argc, char** argv) {
    CLI::App app{"score tokenized text against an ARPA back-off model"};
    std::string arpa_path;
    std::string input_path;
    app.add_option("--arpa", arpa_path, "ARPA model file")->required();
    app.add_option("--input", input_path,
                   "tokenized text, one sentence per line (default stdin)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        auto arpa = mixlm::read_arpa_file(arpa_path);
        const auto& model = arpa.model;
        const auto& vocab = arpa.vocab;

        std::ifstream file;
        if (!input_path.empty()) {
            file.open(input_path);
            if (!file) throw mixlm::ConfigError("cannot open " + input_path);
        }
        std::istream& in = input_path.empty() ? std::cin : file;

        std::string line;
        bool first = true;
        char buf[64];
        while (std::getline(in, line)) {
            if (!first) std::cout << "\n";
            first = false;
            auto s = mixlm::encode(line, vocab);
            double total = 0;
            for (std::size_t t = 1; t < s.ids.size(); ++t) {
                std::span<const mixlm::WordId> ctx(s.ids.data(), t);
                auto [lp, trace] = model.score_word(ctx, s.ids[t]);
                total += lp;
                std::snprintf(buf, sizeof buf, "%.6f", lp);
                std::cout << vocab.word(s.ids[t]) << '\t' << buf << '\t'
                          << trace.matched_order << "\n";
            }
            std::snprintf(buf, sizeof buf, "%.6f", total);
            std::cout << "# total\t" << buf << "\n";
        }
        return 0;
    } catch (const mixlm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
