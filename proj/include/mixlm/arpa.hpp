#pragma once

// ARPA text serialization: \data\ header with per-order entry counts, one
// section per order with log10 probabilities and optional trailing back-off
// weights, \end\ terminator. Grams with no probability of their own (<s>
// rows) carry the conventional -99 marker.

#include <algorithm>
#include <cstdio>

#include "mixlm/ngram.hpp"

namespace mixlm {

struct ArpaModel {
    KNModel model;
    Vocabulary vocab;
};

namespace detail {

inline std::string format_log10(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.7f", v);
    return buf;
}

inline bool is_no_prob_marker(double p) { return p <= -98.9999; }

}  // namespace detail

inline void write_arpa(const KNModel& model, const Vocabulary& vocab,
                       std::ostream& out) {
    const int order = model.order();
    out << "\\data\\\n";
    for (int n = 1; n <= order; ++n)
        out << "ngram " << n << "=" << model.entry_count(n) << "\n";

    for (int n = 1; n <= order; ++n) {
        out << "\n\\" << n << "-grams:\n";
        std::vector<std::vector<WordId>> grams;
        if (n == 1) {
            for (WordId w = 0; w < model.vocab_size(); ++w) {
                std::vector<WordId> g{w};
                if (!absent(model.p10(g)) || !absent(model.alpha10(g)))
                    grams.push_back(std::move(g));
            }
        } else {
            grams.reserve(model.table(n).size());
            for (const auto& [key, e] : model.table(n))
                grams.push_back(unpack_gram(key));
            std::sort(grams.begin(), grams.end());
        }
        for (const auto& g : grams) {
            double p = model.p10(g);
            double a = model.alpha10(g);
            out << (absent(p) ? std::string("-99") : detail::format_log10(p));
            out << '\t';
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (i) out << ' ';
                out << vocab.word(g[i]);
            }
            if (!absent(a)) out << '\t' << detail::format_log10(a);
            out << '\n';
        }
    }
    out << "\n\\end\\\n";
}

inline void write_arpa_file(const KNModel& model, const Vocabulary& vocab,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write ARPA file: " + path);
    write_arpa(model, vocab, out);
    if (!out) throw RuntimeError("ARPA write failed: " + path);
}

namespace detail {

[[noreturn]] inline void parse_fail(std::size_t line_no, const std::string& msg) {
    throw RuntimeError("ARPA parse error at line " + std::to_string(line_no) +
                       ": " + msg);
}

}  // namespace detail

inline ArpaModel read_arpa(std::istream& in) {
    std::vector<std::string> lines;
    {
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(line);
        }
    }
    std::size_t i = 0;
    auto next_nonblank = [&]() -> std::string_view {
        while (i < lines.size() && trim(lines[i]).empty()) ++i;
        if (i >= lines.size()) detail::parse_fail(lines.size(), "unexpected end of file");
        return trim(lines[i]);
    };

    if (next_nonblank() != "\\data\\")
        detail::parse_fail(i + 1, "expected \\data\\ header");
    ++i;

    std::vector<std::int64_t> declared;  // per order
    while (i < lines.size()) {
        auto line = trim(lines[i]);
        if (line.empty()) break;
        if (line.substr(0, 6) != "ngram ")
            detail::parse_fail(i + 1, "expected 'ngram n=count' line");
        auto rest = line.substr(6);
        auto eq = rest.find('=');
        if (eq == std::string_view::npos)
            detail::parse_fail(i + 1, "missing '=' in ngram count line");
        long n = parse_long(trim(rest.substr(0, eq)), "ngram order");
        long c = parse_long(trim(rest.substr(eq + 1)), "ngram count");
        if (n != static_cast<long>(declared.size() + 1))
            detail::parse_fail(i + 1, "ngram orders must be consecutive from 1");
        declared.push_back(c);
        ++i;
    }
    if (declared.empty()) detail::parse_fail(i + 1, "no ngram counts declared");
    const int order = static_cast<int>(declared.size());

    // first pass over the unigram section builds the vocabulary so higher
    // sections can be resolved to ids
    ArpaModel result;
    auto& vocab = result.vocab;

    struct RawEntry {
        double p;
        std::vector<WordId> ids;
        double alpha;
    };
    std::vector<std::vector<RawEntry>> sections(
        static_cast<std::size_t>(order));

    for (int n = 1; n <= order; ++n) {
        std::string expect = "\\" + std::to_string(n) + "-grams:";
        if (next_nonblank() != expect)
            detail::parse_fail(i + 1, "expected section header " + expect);
        ++i;
        auto& sec = sections[static_cast<std::size_t>(n - 1)];
        while (i < lines.size()) {
            auto line = trim(lines[i]);
            if (line.empty()) break;
            if (line.front() == '\\') break;
            auto fields = split_ws(line);
            std::size_t nf = fields.size();
            bool has_alpha;
            if (nf == static_cast<std::size_t>(n) + 1)
                has_alpha = false;
            else if (nf == static_cast<std::size_t>(n) + 2)
                has_alpha = true;
            else
                detail::parse_fail(i + 1, "expected " + std::to_string(n + 1) +
                                              " or " + std::to_string(n + 2) +
                                              " fields, got " +
                                              std::to_string(nf));
            if (n == order && has_alpha)
                detail::parse_fail(i + 1,
                                   "top-order entries cannot carry back-off");
            RawEntry e;
            try {
                e.p = parse_double(fields[0], "log10 probability");
                e.alpha = has_alpha ? parse_double(fields[nf - 1], "back-off")
                                    : kAbsent;
            } catch (const RuntimeError& err) {
                detail::parse_fail(i + 1, err.what());
            }
            e.ids.reserve(static_cast<std::size_t>(n));
            for (int k = 0; k < n; ++k) {
                auto word = fields[static_cast<std::size_t>(k) + 1];
                if (n == 1) {
                    if (!vocab.contains(word))
                        vocab.add_entry(std::string(word), 0);
                    e.ids.push_back(vocab.id(word));
                } else {
                    if (!vocab.contains(word) ||
                        (vocab.id(word) == Vocabulary::kUnk &&
                         word != kUnkWord))
                        detail::parse_fail(
                            i + 1, "word not in unigram section: '" +
                                       std::string(word) + "'");
                    e.ids.push_back(vocab.id(word));
                }
            }
            sec.push_back(std::move(e));
            ++i;
        }
        if (sec.size() != static_cast<std::size_t>(declared[
                static_cast<std::size_t>(n - 1)]))
            detail::parse_fail(
                i + 1, "section " + std::to_string(n) + " has " +
                           std::to_string(sec.size()) + " entries, header declared " +
                           std::to_string(declared[static_cast<std::size_t>(n - 1)]));
    }
    if (next_nonblank() != "\\end\\")
        detail::parse_fail(i + 1, "expected \\end\\");

    result.model = KNModel(order, vocab.size());
    for (int n = 1; n <= order; ++n) {
        for (const auto& e : sections[static_cast<std::size_t>(n - 1)]) {
            double p = detail::is_no_prob_marker(e.p) ? kAbsent : e.p;
            result.model.set_entry(e.ids, p, e.alpha);
        }
    }
    result.model.finalize();
    return result;
}

inline ArpaModel read_arpa_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeError("cannot open ARPA file: " + path);
    return read_arpa(in);
}

}  // namespace mixlm
