#pragma once

// Standing fixture shared by the attack/defense/analysis suites and the
// acceptance runner: one synthetic workload, a subword vocabulary, trained
// cosine and dot encoders (plus an independently seeded cosine encoder for
// transfer runs), per-concept 50/50 splits, and a benign trigram model.

#include <map>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/encoder.hpp"
#include "poisonlab/index.hpp"
#include "poisonlab/ngram_lm.hpp"
#include "poisonlab/tokenizer.hpp"

namespace poisonlab::testfixture {

struct Standard {
    SyntheticWorkload wl;
    Vocabulary vocab;
    EncoderParams cosine;
    EncoderParams dot;
    EncoderParams cosine_alt;  // independently trained, for transfer runs
    RetrievalIndex cosine_index;
    RetrievalIndex dot_index;
    NGramLM lm;
    std::vector<QueryRecord> attack_queries;   // pooled 50% per concept
    std::vector<QueryRecord> heldout_queries;  // the other 50%

    Standard() : wl(generate_synthetic_corpus(4, 50, 20, 16, 1)) {
        std::vector<std::string> texts;
        for (const auto& p : wl.corpus) texts.push_back(p.text);
        vocab = build_vocab(texts, 600);

        for (const auto& name : wl.concept_names) {
            const auto split = split_concept_workload(wl.queries, name, 0.5, 77);
            attack_queries.insert(attack_queries.end(), split.attack_queries.begin(),
                                  split.attack_queries.end());
            heldout_queries.insert(heldout_queries.end(), split.heldout_queries.begin(),
                                   split.heldout_queries.end());
        }

        TrainConfig cfg;
        cfg.dim = 32;
        cfg.epochs = 30;
        cfg.batch = 16;
        cfg.lr = 0.5;

        cfg.mode = SimilarityMode::kCosine;
        cfg.temperature = 0.1;
        cfg.seed = 13;
        cosine = train_encoder(vocab, wl.corpus, attack_queries, cfg).params;

        cfg.seed = 15;
        cosine_alt = train_encoder(vocab, wl.corpus, attack_queries, cfg).params;

        cfg.mode = SimilarityMode::kDot;
        cfg.temperature = 1.0;
        cfg.seed = 14;
        dot = train_encoder(vocab, wl.corpus, attack_queries, cfg).params;

        cosine_index = build_index(cosine, vocab, wl.corpus);
        dot_index = build_index(dot, vocab, wl.corpus);
        lm = train_lm(vocab, texts, 3, 0.1);
    }

    const EncoderParams& encoder(SimilarityMode mode) const {
        return mode == SimilarityMode::kCosine ? cosine : dot;
    }
    const RetrievalIndex& index(SimilarityMode mode) const {
        return mode == SimilarityMode::kCosine ? cosine_index : dot_index;
    }

    std::vector<QueryRecord> concept_attack_queries(const std::string& name) const {
        std::vector<QueryRecord> out;
        for (const auto& q : attack_queries) {
            if (q.concept_tag && *q.concept_tag == name) out.push_back(q);
        }
        return out;
    }
    std::vector<QueryRecord> concept_heldout_queries(const std::string& name) const {
        std::vector<QueryRecord> out;
        for (const auto& q : heldout_queries) {
            if (q.concept_tag && *q.concept_tag == name) out.push_back(q);
        }
        return out;
    }

    // Info prefix built from a concept's theme words plus fillers; word
    // choices are fixed so every suite sees the same text.
    std::string info_text_for(const std::string& concept_name, std::size_t n_words = 12) const {
        std::size_t c = 0;
        for (; c < wl.concept_names.size(); ++c) {
            if (wl.concept_names[c] == concept_name) break;
        }
        if (c == wl.concept_names.size()) throw std::invalid_argument("unknown concept: " + concept_name);
        std::vector<std::string> words;
        for (std::size_t i = 0; i < n_words; ++i) {
            if (i % 3 == 2) {
                words.push_back(wl.filler_words[i % wl.filler_words.size()]);
            } else {
                words.push_back(wl.theme_words[c][i % wl.theme_words[c].size()]);
            }
        }
        std::string out;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) out += ' ';
            out += words[i];
        }
        return out;
    }
};

inline const Standard& standard() {
    static const Standard fx;
    return fx;
}

}  // namespace poisonlab::testfixture
