// Neural model scoring tool: reads tokenized lines and emits one TSV row per
// token with its log10 probability under the trained model.

#include <iostream>

#include "CLI11.hpp"
#include "mixlm/neural.hpp"

int main(int argc, char** argv) {
    CLI::App app{"score tokenized text against a trained neural model"};
    std::string model_path, vocab_path, input_path;
    app.add_option("--model", model_path, "model container")->required();
    app.add_option("--vocab", vocab_path, "vocabulary file")->required();
    app.add_option("--input", input_path,
                   "tokenized text, one sentence per line (default stdin)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        auto vocab = mixlm::Vocabulary::load(vocab_path);
        auto params = mixlm::load_nn<float>(model_path);
        if (params.vocab != vocab.size())
            throw mixlm::ConfigError(
                "vocabulary size does not match the model");

        std::ifstream file;
        if (!input_path.empty()) {
            file.open(input_path);
            if (!file) throw mixlm::ConfigError("cannot open " + input_path);
        }
        std::istream& in = input_path.empty() ? std::cin : file;

        const double ln10 = std::log(10.0);
        std::string line;
        bool first = true;
        char buf[64];
        while (std::getline(in, line)) {
            if (!first) std::cout << "\n";
            first = false;
            auto s = mixlm::encode(line, vocab);
            auto steps = mixlm::nn_forward(params, s);
            double total = 0;
            for (std::size_t t = 0; t < steps.size(); ++t) {
                auto target = s.ids[t + 1];
                double lp = std::log(steps[t].dist[target]) / ln10;
                total += lp;
                std::snprintf(buf, sizeof buf, "%.6f", lp);
                std::cout << vocab.word(target) << '\t' << buf << "\n";
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
