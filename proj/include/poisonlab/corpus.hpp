#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/common.hpp"
#include "poisonlab/io.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

struct Passage {
    std::string id;
    std::string text;
    bool adversarial = false;
    std::optional<std::string> concept_tag;
};

struct QueryRecord {
    std::string id;
    std::string text;
    std::optional<std::string> concept_tag;
    std::vector<std::string> gold_ids;
};

struct WorkloadSplit {
    std::vector<QueryRecord> attack_queries;
    std::vector<QueryRecord> heldout_queries;
};

struct SyntheticWorkload {
    std::vector<Passage> corpus;
    std::vector<QueryRecord> queries;
    // Per-concept theme lexicons, exposed so tests and reports can check
    // query/passage overlap directly.
    std::vector<std::string> concept_names;
    std::vector<std::vector<std::string>> theme_words;
    std::vector<std::string> filler_words;
};

namespace detail {

// Pronounceable pseudo-words from consonant-vowel syllables; never repeats.
class WordFactory {
public:
    explicit WordFactory(Rng& rng) : rng_(rng) {}

    std::string fresh() {
        static const std::string consonants = "bcdfghjklmnprstvwz";
        static const std::string vowels = "aeiou";
        for (int attempt = 0; attempt < 4096; ++attempt) {
            const std::size_t syllables = 2 + rng_.uniform_index(2);
            std::string w;
            for (std::size_t s = 0; s < syllables; ++s) {
                w += consonants[rng_.uniform_index(consonants.size())];
                w += vowels[rng_.uniform_index(vowels.size())];
            }
            if (used_.insert(w).second) return w;
        }
        throw InternalError("word factory exhausted");
    }

private:
    Rng& rng_;
    std::set<std::string> used_;
};

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace detail

// Deterministic concept-tagged workload. Each concept owns a disjoint theme
// lexicon; passages mix theme words with a shared filler pool; queries are
// short and carry at least two tokens of their gold passage's theme words,
// giving retrieval training a learnable signal.
inline SyntheticWorkload generate_synthetic_corpus(std::size_t n_concepts,
                                                   std::size_t passages_per_concept,
                                                   std::size_t queries_per_concept,
                                                   std::size_t vocab_theme_size,
                                                   std::uint64_t seed) {
    if (n_concepts == 0 || passages_per_concept == 0 || queries_per_concept == 0 ||
        vocab_theme_size == 0) {
        throw std::invalid_argument("generate_synthetic_corpus: all counts must be >= 1");
    }

    Rng rng(seed);
    detail::WordFactory words(rng);

    SyntheticWorkload wl;
    constexpr std::size_t kFillerCount = 64;
    for (std::size_t i = 0; i < kFillerCount; ++i) wl.filler_words.push_back(words.fresh());

    // Passages draw fillers from a Zipf-like distribution, giving the corpus
    // the frequency skew real text has: a few very common function words and
    // a long rare tail. Queries keep drawing fillers uniformly.
    std::vector<double> filler_cdf(kFillerCount);
    {
        double acc = 0.0;
        for (std::size_t i = 0; i < kFillerCount; ++i) {
            acc += 1.0 / static_cast<double>(i + 1);
            filler_cdf[i] = acc;
        }
        for (auto& v : filler_cdf) v /= acc;
    }
    auto draw_zipf_filler = [&]() {
        const double u = rng.uniform_real();
        const auto it = std::lower_bound(filler_cdf.begin(), filler_cdf.end(), u);
        return wl.filler_words[static_cast<std::size_t>(it - filler_cdf.begin())];
    };

    for (std::size_t c = 0; c < n_concepts; ++c) {
        wl.concept_names.push_back("concept-" + std::to_string(c));
        std::vector<std::string> theme;
        for (std::size_t i = 0; i < vocab_theme_size; ++i) theme.push_back(words.fresh());
        wl.theme_words.push_back(std::move(theme));
    }

    std::size_t passage_counter = 0;
    std::vector<std::vector<std::size_t>> passages_of_concept(n_concepts);
    for (std::size_t c = 0; c < n_concepts; ++c) {
        const auto& theme = wl.theme_words[c];
        for (std::size_t p = 0; p < passages_per_concept; ++p) {
            // Each passage focuses on a small slice of its concept's theme
            // lexicon; queries built from that slice then separate the gold
            // passage from same-concept neighbours, not just cross-concept.
            const std::size_t subset_size = std::min<std::size_t>(theme.size(), 3 + rng.uniform_index(3));
            const auto subset_picks = rng.sample_indices(theme.size(), subset_size);
            std::vector<std::string> subset;
            for (auto i : subset_picks) subset.push_back(theme[i]);

            const std::size_t len = 20 + rng.uniform_index(41);  // 20..60 tokens
            std::vector<std::string> toks;
            toks.reserve(len);
            for (std::size_t t = 0; t < len; ++t) {
                if (rng.bernoulli(0.6)) {
                    toks.push_back(subset[rng.uniform_index(subset.size())]);
                } else {
                    toks.push_back(draw_zipf_filler());
                }
            }
            // Ensure at least two theme tokens so every query can overlap.
            toks[0] = subset[0];
            toks[1] = subset.size() > 1 ? subset[1] : subset[0];

            Passage pas;
            pas.id = "p-" + std::to_string(passage_counter);
            pas.text = detail::join_words(toks);
            pas.concept_tag = wl.concept_names[c];
            passages_of_concept[c].push_back(passage_counter);
            ++passage_counter;
            wl.corpus.push_back(std::move(pas));
        }
    }

    std::size_t query_counter = 0;
    for (std::size_t c = 0; c < n_concepts; ++c) {
        for (std::size_t q = 0; q < queries_per_concept; ++q) {
            const std::size_t gold_idx =
                passages_of_concept[c][rng.uniform_index(passages_of_concept[c].size())];
            const Passage& gold = wl.corpus[gold_idx];

            // Theme words present in the gold passage, in first-occurrence order.
            std::vector<std::string> gold_theme;
            {
                std::set<std::string> theme_set(wl.theme_words[c].begin(), wl.theme_words[c].end());
                std::set<std::string> seen;
                std::istringstream ss(gold.text);
                std::string w;
                while (ss >> w) {
                    if (theme_set.count(w) && seen.insert(w).second) gold_theme.push_back(w);
                }
            }

            const std::size_t len = 3 + rng.uniform_index(6);  // 3..8 tokens
            std::size_t n_theme = 2 + rng.uniform_index(3);    // 2..4
            n_theme = std::min(n_theme, len - 1);
            std::vector<std::string> toks;
            if (gold_theme.size() >= 2) {
                auto picks = rng.sample_indices(gold_theme.size(), std::min(n_theme, gold_theme.size()));
                for (auto i : picks) toks.push_back(gold_theme[i]);
                while (toks.size() < n_theme) toks.push_back(gold_theme[rng.uniform_index(gold_theme.size())]);
            } else {
                // Single-word theme lexicon: repeat the word to keep overlap >= 2.
                toks.push_back(gold_theme.at(0));
                toks.push_back(gold_theme.at(0));
            }
            while (toks.size() < len) {
                toks.push_back(wl.filler_words[rng.uniform_index(wl.filler_words.size())]);
            }
            rng.shuffle(toks);

            QueryRecord rec;
            rec.id = "q-" + std::to_string(query_counter++);
            rec.text = detail::join_words(toks);
            rec.concept_tag = wl.concept_names[c];
            rec.gold_ids = {gold.id};
            wl.queries.push_back(std::move(rec));
        }
    }

    return wl;
}

// Attacker-chosen info text for a concept, synthesized with the same word
// statistics as benign passages (theme slice + Zipf fillers) so fluency
// defenses see it as ordinary text. Deterministic in (workload, concept,
// n_words, seed); not part of the corpus.
inline std::string synthesize_info_text(const SyntheticWorkload& wl, std::size_t concept_index,
                                        std::size_t n_words, std::uint64_t seed) {
    if (concept_index >= wl.theme_words.size()) {
        throw std::invalid_argument("synthesize_info_text: concept index out of range");
    }
    if (n_words == 0) throw std::invalid_argument("synthesize_info_text: n_words must be >= 1");
    Rng rng(derive_seed(seed, 0x1f0 + concept_index));
    const auto& theme = wl.theme_words[concept_index];

    std::vector<double> filler_cdf(wl.filler_words.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < filler_cdf.size(); ++i) {
        acc += 1.0 / static_cast<double>(i + 1);
        filler_cdf[i] = acc;
    }
    for (auto& v : filler_cdf) v /= acc;

    const std::size_t slice = std::min<std::size_t>(theme.size(), 3 + rng.uniform_index(3));
    const auto picks = rng.sample_indices(theme.size(), slice);
    std::vector<std::string> toks;
    for (std::size_t t = 0; t < n_words; ++t) {
        if (rng.bernoulli(0.6)) {
            toks.push_back(theme[picks[rng.uniform_index(picks.size())]]);
        } else {
            const double u = rng.uniform_real();
            const auto it = std::lower_bound(filler_cdf.begin(), filler_cdf.end(), u);
            toks.push_back(wl.filler_words[static_cast<std::size_t>(it - filler_cdf.begin())]);
        }
    }
    return detail::join_words(toks);
}

// Seeded split of one concept's queries into attack and held-out sets.
inline WorkloadSplit split_concept_workload(const std::vector<QueryRecord>& queries,
                                            const std::string& concept_tag, double ratio,
                                            std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("split_concept_workload: ratio must be in (0, 1)");
    }
    std::vector<QueryRecord> matching;
    for (const auto& q : queries) {
        if (q.concept_tag && *q.concept_tag == concept_tag) matching.push_back(q);
    }
    if (matching.size() < 2) {
        throw InsufficientDataError("split_concept_workload: need at least 2 queries tagged '" +
                                    concept_tag + "', have " + std::to_string(matching.size()));
    }

    const auto n = matching.size();
    auto n_attack = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
    n_attack = std::clamp<std::size_t>(n_attack, 1, n - 1);

    Rng rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);

    WorkloadSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        (i < n_attack ? split.attack_queries : split.heldout_queries).push_back(matching[order[i]]);
    }
    return split;
}

// Appends adversarial passages (anything exposing an `text` member) with
// fresh "adv-N" ids. Existing records are copied untouched.
template <typename AdvRange>
std::vector<Passage> inject_poison(const std::vector<Passage>& corpus, const AdvRange& adv) {
    std::set<std::string> ids;
    std::size_t adv_count = 0;
    for (const auto& p : corpus) {
        ids.insert(p.id);
        if (p.adversarial) ++adv_count;
    }
    std::vector<Passage> out = corpus;
    for (const auto& a : adv) {
        Passage p;
        p.id = "adv-" + std::to_string(adv_count++);
        if (!ids.insert(p.id).second) {
            throw InternalError("inject_poison: generated id collides: " + p.id);
        }
        p.text = a.text;
        p.adversarial = true;
        out.push_back(std::move(p));
    }
    return out;
}

// --- line-delimited JSON serialization -----------------------------------

inline nlohmann::json passage_to_json(const Passage& p) {
    nlohmann::json j;
    j["id"] = p.id;
    j["text"] = p.text;
    j["adversarial"] = p.adversarial;
    if (p.concept_tag) j["concept"] = *p.concept_tag;
    return j;
}

inline Passage passage_from_json(const nlohmann::json& j) {
    Passage p;
    p.id = j.at("id").get<std::string>();
    p.text = j.at("text").get<std::string>();
    p.adversarial = j.value("adversarial", false);
    if (j.contains("concept")) p.concept_tag = j["concept"].get<std::string>();
    return p;
}

inline nlohmann::json query_to_json(const QueryRecord& q) {
    nlohmann::json j;
    j["id"] = q.id;
    j["text"] = q.text;
    if (q.concept_tag) j["concept"] = *q.concept_tag;
    j["gold_ids"] = q.gold_ids;
    return j;
}

inline QueryRecord query_from_json(const nlohmann::json& j) {
    QueryRecord q;
    q.id = j.at("id").get<std::string>();
    q.text = j.at("text").get<std::string>();
    if (j.contains("concept")) q.concept_tag = j["concept"].get<std::string>();
    if (j.contains("gold_ids")) q.gold_ids = j["gold_ids"].get<std::vector<std::string>>();
    return q;
}

inline std::string corpus_to_jsonl(const std::vector<Passage>& corpus) {
    std::string out;
    for (const auto& p : corpus) out += passage_to_json(p).dump() + "\n";
    return out;
}

inline std::string queries_to_jsonl(const std::vector<QueryRecord>& queries) {
    std::string out;
    for (const auto& q : queries) out += query_to_json(q).dump() + "\n";
    return out;
}

inline std::vector<Passage> corpus_from_jsonl(const std::string& text) {
    std::vector<Passage> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        out.push_back(passage_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

inline std::vector<QueryRecord> queries_from_jsonl(const std::string& text) {
    std::vector<QueryRecord> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        out.push_back(query_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

inline void save_corpus(const std::vector<Passage>& corpus, const std::filesystem::path& path) {
    write_text_file(path, corpus_to_jsonl(corpus));
}
inline std::vector<Passage> load_corpus(const std::filesystem::path& path) {
    return corpus_from_jsonl(read_text_file(path));
}
inline void save_queries(const std::vector<QueryRecord>& queries, const std::filesystem::path& path) {
    write_text_file(path, queries_to_jsonl(queries));
}
inline std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
    return queries_from_jsonl(read_text_file(path));
}

}  // namespace poisonlab
