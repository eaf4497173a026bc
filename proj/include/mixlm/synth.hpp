#pragma once

// Deterministic synthetic English-like corpus. Sentences mix exactly
// repeating named-entity and idiom spans (table-lookup friendly) with
// topic-conditioned compositional clauses and an agreement dependency that
// spans more than an n-gram window. Entity capitalization feeds the
// capitalization diagnostics.

#include <ostream>
#include <random>

#include "mixlm/common.hpp"

namespace mixlm {

struct SynthConfig {
    std::int64_t sentences = 10000;
    std::uint64_t seed = 7;
};

namespace detail {

class WordBank {
public:
    WordBank() {
        const std::vector<std::string> onsets{
            "b",  "c",  "d",  "f",  "g",  "h",  "j",  "k",  "l",
            "m",  "n",  "p",  "r",  "s",  "t",  "v",  "w",  "z",
            "br", "cr", "dr", "fr", "gr", "pl", "pr", "st", "tr", "sl"};
        const std::vector<std::string> nuclei{"a",  "e",  "i",  "o",  "u",
                                              "ai", "ea", "ou", "or", "an",
                                              "en", "on", "ar", "el"};
        auto word_at = [&](std::size_t i, const char* tail) {
            std::string w = onsets[i % onsets.size()];
            i /= onsets.size();
            w += nuclei[i % nuclei.size()];
            i /= nuclei.size();
            w += onsets[i % onsets.size()];
            i /= onsets.size();
            w += nuclei[i % nuclei.size()];
            i /= nuclei.size();
            if (i) w += onsets[i % onsets.size()];
            return w + tail;
        };
        for (std::size_t i = 0; i < 6000; ++i)
            nouns.push_back(word_at(3 * i + 1, ""));
        for (std::size_t i = 0; i < 1500; ++i)
            verbs.push_back(word_at(5 * i + 2, "s"));
        for (std::size_t i = 0; i < 1200; ++i)
            adjs.push_back(word_at(7 * i + 3, "ic"));
        for (std::size_t i = 0; i < 3000; ++i) {
            auto w = word_at(11 * i + 4, "");
            w[0] = static_cast<char>(std::toupper(w[0]));
            names.push_back(w);
        }
        for (std::size_t i = 0; i < 800; ++i) {
            auto w = word_at(13 * i + 5, "ton");
            w[0] = static_cast<char>(std::toupper(w[0]));
            places.push_back(w);
        }
        for (int i = 2; i < 300; ++i) numbers.push_back(std::to_string(i));
    }

    std::vector<std::string> nouns, verbs, adjs, names, places, numbers;
};

// zipf-distributed index into [0, n) via a precomputed cdf
class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double alpha) : cdf_(n) {
        double sum = 0;
        for (std::size_t r = 0; r < n; ++r) {
            sum += 1.0 / std::pow(static_cast<double>(r) + 2.0, alpha);
            cdf_[r] = sum;
        }
        for (auto& v : cdf_) v /= sum;
    }
    template <typename Rng>
    std::size_t operator()(Rng& rng) const {
        double u = unit_draw(rng);
        auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        return static_cast<std::size_t>(it - cdf_.begin());
    }

private:
    std::vector<double> cdf_;
};

}  // namespace detail

inline void generate_corpus(std::ostream& out, const SynthConfig& cfg) {
    static const detail::WordBank bank;
    std::mt19937_64 rng(cfg.seed);
    auto u = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

    detail::ZipfSampler z_noun(bank.nouns.size(), 1.05);
    detail::ZipfSampler z_verb(bank.verbs.size(), 1.05);
    detail::ZipfSampler z_adj(bank.adjs.size(), 1.05);
    detail::ZipfSampler z_name(bank.names.size(), 1.08);
    detail::ZipfSampler z_place(bank.places.size(), 1.05);
    detail::ZipfSampler z_num(bank.numbers.size(), 0.8);
    detail::ZipfSampler z_entity(2500, 1.0);
    detail::ZipfSampler z_idiom(800, 0.9);
    detail::ZipfSampler z_topic(24, 0.5);

    const std::vector<std::string> titles{"Senator",  "Governor", "Doctor",
                                          "Professor", "Director", "Minister",
                                          "Captain",  "Judge"};
    const std::vector<std::string> org_types{
        "Office", "Institute", "Administration", "Commission",
        "Council", "Bureau",   "Authority"};
    const std::vector<std::string> weekdays{
        "monday", "tuesday", "wednesday", "thursday", "friday"};

    // fixed entity table: (title, first, last, place, org type)
    struct Entity {
        std::size_t title, first, last, place, org;
    };
    std::vector<Entity> entities;
    {
        std::mt19937_64 erng(derive_seed(cfg.seed, "entities"));
        for (int i = 0; i < 2500; ++i)
            entities.push_back({static_cast<std::size_t>(erng() % titles.size()),
                                static_cast<std::size_t>(erng() % bank.names.size()),
                                static_cast<std::size_t>(erng() % bank.names.size()),
                                static_cast<std::size_t>(erng() % bank.places.size()),
                                static_cast<std::size_t>(erng() % org_types.size())});
    }
    // fixed idiom clauses, 6-11 tokens each, repeated verbatim
    std::vector<std::vector<std::string>> idioms;
    {
        std::mt19937_64 irng(derive_seed(cfg.seed, "idioms"));
        detail::ZipfSampler zn(bank.nouns.size(), 1.05);
        detail::ZipfSampler zv(bank.verbs.size(), 1.05);
        for (int i = 0; i < 800; ++i) {
            std::vector<std::string> s{"it", "is", "said", "that", "the"};
            s.push_back(bank.nouns[zn(irng)]);
            s.push_back(bank.verbs[zv(irng)]);
            s.push_back(irng() % 2 ? "beyond" : "within");
            s.push_back("the");
            s.push_back(bank.nouns[zn(irng)]);
            idioms.push_back(std::move(s));
        }
    }
    // topic word windows: overlapping slices of the global pools
    struct Topic {
        std::size_t noun_off, verb_off, adj_off;
    };
    std::vector<Topic> topics;
    for (std::size_t k = 0; k < 24; ++k)
        topics.push_back({k * 230, k * 55, k * 45});
    const std::size_t topic_nouns = 700, topic_verbs = 220, topic_adjs = 160;

    std::vector<std::string> s;
    for (std::int64_t line = 0; line < cfg.sentences; ++line) {
        s.clear();
        const auto& topic = topics[z_topic(rng)];
        auto t_noun = [&]() {
            return bank.nouns[(topic.noun_off + z_noun(rng) % topic_nouns) %
                              bank.nouns.size()];
        };
        auto t_verb = [&]() {
            return bank.verbs[(topic.verb_off + z_verb(rng) % topic_verbs) %
                              bank.verbs.size()];
        };
        auto t_adj = [&]() {
            return bank.adjs[(topic.adj_off + z_adj(rng) % topic_adjs) %
                             bank.adjs.size()];
        };

        double kind = detail::unit_draw(rng);
        if (kind < 0.30) {
            // topic declarative
            s = {"the"};
            if (u(2)) s.push_back(t_adj());
            s.push_back(t_noun());
            s.push_back("of");
            s.push_back("the");
            s.push_back(t_noun());
            s.push_back(t_verb());
            s.push_back("the");
            s.push_back(t_noun());
            if (u(2)) {
                s.push_back(u(2) ? "with" : "under");
                s.push_back("the");
                if (u(2)) s.push_back(t_adj());
                s.push_back(t_noun());
            }
            if (u(3) == 0) {
                s.push_back("and");
                s.push_back(t_verb());
                s.push_back("the");
                s.push_back(t_noun());
            }
        } else if (kind < 0.55) {
            // entity news with a long exact span
            const auto& e = entities[z_entity(rng)];
            s = {titles[e.title], bank.names[e.first], bank.names[e.last],
                 "of", "the", bank.places[e.place], org_types[e.org]};
            s.push_back(u(2) ? "said" : "noted");
            s.push_back("on");
            s.push_back(weekdays[u(weekdays.size())]);
            s.push_back("that");
            s.push_back("the");
            s.push_back(t_noun());
            s.push_back(t_verb());
            if (u(2)) {
                s.push_back("the");
                s.push_back(t_noun());
            }
        } else if (kind < 0.70) {
            // agreement across a relative clause: the closing verb repeats
            // the opening one beyond any 5-gram window
            auto v = t_verb();
            s = {"the", t_noun(), "that", "the"};
            if (u(2)) s.push_back(t_adj());
            s.push_back(t_noun());
            s.push_back(t_verb());
            s.push_back(u(2) ? "rarely" : "often");
            s.push_back("also");
            s.push_back(v);
            s.push_back("the");
            s.push_back(t_noun());
            s.push_back("and");
            s.push_back(v);
            s.push_back("the");
            s.push_back(t_noun());
        } else if (kind < 0.85) {
            // fixed idiom clause, sometimes with a topical tail
            s = idioms[z_idiom(rng)];
            if (u(2)) {
                s.push_back("near");
                s.push_back("the");
                s.push_back(t_noun());
            }
        } else {
            // numeric report
            s = {"the", t_noun()};
            s.push_back(u(2) ? "rises" : "falls");
            s.push_back("by");
            s.push_back(bank.numbers[z_num(rng)]);
            s.push_back("points");
            s.push_back("to");
            s.push_back(bank.numbers[z_num(rng)]);
            s.push_back("on");
            s.push_back(weekdays[u(weekdays.size())]);
        }
        if (u(6) == 0) {
            s.push_back(",");
            s.push_back(u(2) ? "analysts" : "officials");
            s.push_back(u(2) ? "reported" : "added");
        }
        s.push_back(".");

        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out << ' ';
            out << s[i];
        }
        out << '\n';
    }
}

}  // namespace mixlm
