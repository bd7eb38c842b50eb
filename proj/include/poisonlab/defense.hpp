#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/attack.hpp"
#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/encoder.hpp"
#include "poisonlab/index.hpp"
#include "poisonlab/io.hpp"
#include "poisonlab/ngram_lm.hpp"
#include "poisonlab/stats.hpp"

namespace poisonlab {

enum class DefenseKind { kL2Norm, kPerplexity };

inline std::string to_string(DefenseKind k) {
    return k == DefenseKind::kL2Norm ? "l2" : "perplexity";
}

struct DefenseReport {
    std::string kind;
    double threshold = 0.0;
    std::vector<std::string> filtered_ids;
    std::vector<std::string> survivor_ids;
    std::size_t benign_false_positives = 0;
    double appeared_before = 0.0;
    double appeared_after = 0.0;

    // Raw scores kept for the histogram emitters.
    std::vector<double> benign_scores;
    std::vector<std::pair<std::string, double>> candidate_scores;
};

// Detection cutoff at the maximum benign score; only strictly greater
// scores get flagged, so benign false positives are zero by construction.
inline double zero_fp_threshold(const std::vector<double>& benign_scores) {
    if (benign_scores.empty()) throw std::invalid_argument("zero_fp_threshold: no benign scores");
    return *std::max_element(benign_scores.begin(), benign_scores.end());
}

struct FilterOutcome {
    std::vector<std::string> filtered_ids;
    std::vector<std::string> survivor_ids;
};

inline FilterOutcome apply_filter(const std::vector<std::pair<std::string, double>>& candidates,
                                  double threshold) {
    FilterOutcome out;
    for (const auto& [id, score] : candidates) {
        (score > threshold ? out.filtered_ids : out.survivor_ids).push_back(id);
    }
    return out;
}

// Scores the full passage the way a defender would see it: embedding norm
// for the L2 filter, smoothed perplexity for the fluency filter.
inline double defense_score(DefenseKind kind, const EncoderParams& encoder, const Vocabulary& vocab,
                            const NGramLM* lm, const std::string& text) {
    const TokenSequence tokens = encode(vocab, text);
    if (kind == DefenseKind::kL2Norm) return embed(encoder, tokens).norm();
    return perplexity(*lm, tokens);
}

// Threshold from the benign corpus, filter the adversarial candidates, and
// re-measure visibility with only the survivors injected.
inline DefenseReport evaluate_defense(const RetrievalIndex& benign_index,
                                      const std::vector<Passage>& benign_corpus,
                                      const EncoderParams& encoder, const Vocabulary& vocab,
                                      const std::vector<QueryRecord>& queries,
                                      const std::vector<AdversarialPassage>& adv_passages,
                                      DefenseKind kind, const NGramLM* lm = nullptr,
                                      std::size_t k = 10) {
    if (kind == DefenseKind::kPerplexity && lm == nullptr) {
        throw std::invalid_argument("evaluate_defense: perplexity filtering requires a language model");
    }

    DefenseReport report;
    report.kind = to_string(kind);

    for (const auto& p : benign_corpus) {
        report.benign_scores.push_back(defense_score(kind, encoder, vocab, lm, p.text));
    }
    report.threshold = zero_fp_threshold(report.benign_scores);
    for (double s : report.benign_scores) {
        if (s > report.threshold) ++report.benign_false_positives;
    }

    std::vector<Passage> injected = inject_poison(benign_corpus, adv_passages);
    std::vector<Passage> adv_only(injected.end() - static_cast<long>(adv_passages.size()),
                                  injected.end());
    for (const auto& p : adv_only) {
        report.candidate_scores.emplace_back(p.id, defense_score(kind, encoder, vocab, lm, p.text));
    }

    const FilterOutcome outcome = apply_filter(report.candidate_scores, report.threshold);
    report.filtered_ids = outcome.filtered_ids;
    report.survivor_ids = outcome.survivor_ids;

    {
        RetrievalIndex poisoned = benign_index;
        append_passages(poisoned, encoder, vocab, adv_only);
        std::set<std::string> ids;
        for (const auto& p : adv_only) ids.insert(p.id);
        report.appeared_before = appeared_at_k(poisoned, encoder, vocab, queries, ids, k);
    }
    {
        RetrievalIndex poisoned = benign_index;
        std::set<std::string> survivors(report.survivor_ids.begin(), report.survivor_ids.end());
        std::vector<Passage> surviving;
        for (const auto& p : adv_only) {
            if (survivors.count(p.id)) surviving.push_back(p);
        }
        append_passages(poisoned, encoder, vocab, surviving);
        report.appeared_after =
            surviving.empty() ? 0.0 : appeared_at_k(poisoned, encoder, vocab, queries, survivors, k);
    }
    return report;
}

inline nlohmann::json defense_report_to_json(const DefenseReport& r) {
    nlohmann::json j;
    j["kind"] = r.kind;
    j["threshold"] = r.threshold;
    j["filtered_ids"] = r.filtered_ids;
    j["survivor_ids"] = r.survivor_ids;
    j["benign_false_positives"] = r.benign_false_positives;
    j["appeared_before"] = r.appeared_before;
    j["appeared_after"] = r.appeared_after;
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& [id, score] : r.candidate_scores) {
        cands.push_back({{"id", id}, {"score", score}});
    }
    j["candidate_scores"] = cands;
    j["benign_scores"] = r.benign_scores;
    return j;
}

// Population histograms (benign vs adversarial scores) in tidy CSV form.
inline std::string defense_histogram_csv(const DefenseReport& r, std::size_t n_bins = 20) {
    CsvWriter csv({"population", "bin_lo", "bin_hi", "count"});
    auto emit = [&](const std::string& population, const std::vector<double>& values) {
        if (values.empty()) return;
        const Histogram h = make_histogram(values, n_bins);
        for (std::size_t i = 0; i < h.counts.size(); ++i) {
            csv.append_row({population, format_double(h.bin_lo(i)), format_double(h.bin_hi(i)),
                            std::to_string(h.counts[i])});
        }
    };
    emit("benign", r.benign_scores);
    std::vector<double> adv;
    for (const auto& [id, score] : r.candidate_scores) adv.push_back(score);
    emit("adversarial", adv);
    return csv.str();
}

}  // namespace poisonlab
