#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poisonlab/attack.hpp"
#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/encoder.hpp"
#include "poisonlab/index.hpp"
#include "poisonlab/io.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/stats.hpp"

namespace poisonlab {

struct AnisotropyResult {
    double mean = 0.0;
    double stddev = 0.0;
    Histogram histogram;
};

// Cosine similarity over random distinct text pairs. Directions are
// compared regardless of the encoder's similarity mode, so embeddings are
// normalized here even for dot-mode encoders.
inline AnisotropyResult anisotropy_diagnostic(const EncoderParams& encoder, const Vocabulary& vocab,
                                              const std::vector<std::string>& texts,
                                              std::size_t n_pairs, std::uint64_t seed) {
    if (texts.size() < 2) throw std::invalid_argument("anisotropy_diagnostic: need at least 2 texts");
    std::vector<Eigen::VectorXd> units;
    units.reserve(texts.size());
    for (const auto& t : texts) {
        Eigen::VectorXd e = embed_text(encoder, vocab, t);
        const double n = e.norm();
        if (n > 0.0) e /= n;
        units.push_back(std::move(e));
    }

    Rng rng(seed);
    std::vector<double> sims;
    sims.reserve(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const std::size_t a = rng.uniform_index(units.size());
        std::size_t b = rng.uniform_index(units.size() - 1);
        if (b >= a) ++b;
        sims.push_back(units[a].dot(units[b]));
    }

    AnisotropyResult out;
    out.mean = mean_of(sims);
    out.stddev = stddev_of(sims);
    out.histogram = make_histogram(sims, 20);
    return out;
}

struct NormDistribution {
    std::vector<std::pair<std::string, double>> per_id;
    double p1 = 0.0;
    double p50 = 0.0;
    double p99 = 0.0;
    double p100 = 0.0;
};

inline NormDistribution norm_distribution(const EncoderParams& encoder, const Vocabulary& vocab,
                                          const std::vector<Passage>& passages) {
    if (passages.empty()) throw std::invalid_argument("norm_distribution: no passages");
    NormDistribution out;
    std::vector<double> norms;
    for (const auto& p : passages) {
        const double n = embed_text(encoder, vocab, p.text).norm();
        out.per_id.emplace_back(p.id, n);
        norms.push_back(n);
    }
    out.p1 = percentile_nearest_rank(norms, 1.0);
    out.p50 = percentile_nearest_rank(norms, 50.0);
    out.p99 = percentile_nearest_rank(norms, 99.0);
    out.p100 = percentile_nearest_rank(norms, 100.0);
    return out;
}

// Visibility curve of the idealized vector-level attack across budgets:
// partition the attack queries, inject the optimal per-cluster vectors, and
// measure on the held-out set. No text optimization runs.
inline std::vector<std::pair<std::size_t, double>> extrapolate_with_perfect(
    const EncoderParams& encoder, const Vocabulary& vocab,
    const std::vector<QueryRecord>& attack_queries, const std::vector<QueryRecord>& eval_queries,
    const std::vector<Passage>& corpus, const std::vector<std::size_t>& budgets, std::size_t k,
    std::uint64_t seed) {
    if (budgets.empty()) throw std::invalid_argument("extrapolate_with_perfect: no budgets");
    for (std::size_t i = 1; i < budgets.size(); ++i) {
        if (budgets[i] < budgets[i - 1]) {
            throw std::invalid_argument("extrapolate_with_perfect: budgets must be ascending");
        }
    }

    const RetrievalIndex benign_index = build_index(encoder, vocab, corpus);
    std::vector<double> benign_norms;
    for (Eigen::Index i = 0; i < benign_index.size(); ++i) {
        benign_norms.push_back(benign_index.matrix.row(i).norm());
    }
    std::map<std::string, Eigen::VectorXd> query_embeddings;
    for (const auto& q : attack_queries) {
        query_embeddings[q.id] = embed_text(encoder, vocab, q.text);
    }

    std::vector<std::pair<std::size_t, double>> curve;
    for (const std::size_t budget : budgets) {
        const PartitionResult partition = partition_queries(
            encoder, vocab, attack_queries, budget, PartitionMethod::kKMeans, derive_seed(seed, budget));
        const auto vectors = perfect_attack_oracle(encoder, partition, query_embeddings, benign_norms);

        RetrievalIndex poisoned = benign_index;
        std::vector<std::string> ids;
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(vectors.size()), encoder.dim());
        for (std::size_t i = 0; i < vectors.size(); ++i) {
            ids.push_back("oracle-" + std::to_string(i));
            rows.row(static_cast<Eigen::Index>(i)) = vectors[i];
        }
        append_vectors(poisoned, ids, rows);
        const std::set<std::string> id_set(ids.begin(), ids.end());
        curve.emplace_back(budget, appeared_at_k(poisoned, encoder, vocab, eval_queries, id_set, k));
    }
    return curve;
}

// Re-encodes the adversarial texts under a target encoder (transfer happens
// through text, never through token ids) and measures visibility there.
inline double transfer_evaluation(const std::vector<AdversarialPassage>& adv_passages,
                                  const std::string& source_tag,
                                  const EncoderParams& target_encoder, const Vocabulary& target_vocab,
                                  const RetrievalIndex& target_benign_index,
                                  const std::vector<QueryRecord>& queries, std::size_t k) {
    (void)source_tag;  // recorded by callers in their reports
    RetrievalIndex poisoned = target_benign_index;
    std::vector<Passage> injected;
    std::size_t counter = 0;
    for (const auto& adv : adv_passages) {
        Passage p;
        p.id = "transfer-" + std::to_string(counter++);
        p.text = adv.text;
        p.adversarial = true;
        injected.push_back(std::move(p));
    }
    append_passages(poisoned, target_encoder, target_vocab, injected);
    std::set<std::string> ids;
    for (const auto& p : injected) ids.insert(p.id);
    return appeared_at_k(poisoned, target_encoder, target_vocab, queries, ids, k);
}

struct AlphaSweepRow {
    double alpha = 0.0;
    double objective = 0.0;            // similarity to target
    double defense_score = 0.0;        // embedding norm or perplexity
    double penalized_quantity = 0.0;   // norm or log-perplexity (what alpha pushes down)
    double appeared_before = 0.0;      // unfiltered held-out visibility
    double appeared_after = 0.0;       // visibility after zero-FP filtering
};

struct AlphaSweepFixture {
    std::vector<QueryRecord> attack_queries;
    std::vector<QueryRecord> heldout_queries;
    std::vector<Passage> corpus;
    std::string info_text;
    std::size_t k = 10;
};

// One optimization run per penalty weight; emits the trade-off table used to
// pick the default weight for each adaptive variant.
inline std::vector<AlphaSweepRow> alpha_sweep(const EncoderParams& encoder, const Vocabulary& vocab,
                                              const AttackConfig& base_config, DefenseKind kind,
                                              const std::vector<double>& grid,
                                              const AlphaSweepFixture& fixture,
                                              const NGramLM& lm) {
    if (grid.empty()) throw std::invalid_argument("alpha_sweep: empty grid");

    const RetrievalIndex benign_index = build_index(encoder, vocab, fixture.corpus);
    const TargetVector target = compute_target_vector(encoder, vocab, fixture.attack_queries);
    const TokenSequence info = encode(vocab, fixture.info_text);

    std::vector<double> benign_scores;
    for (const auto& p : fixture.corpus) {
        benign_scores.push_back(defense_score(kind, encoder, vocab, &lm, p.text));
    }
    const double threshold = zero_fp_threshold(benign_scores);

    std::vector<AlphaSweepRow> rows;
    for (const double alpha : grid) {
        AttackConfig cfg = base_config;
        if (kind == DefenseKind::kL2Norm) {
            cfg.alpha_l2 = alpha;
        } else {
            cfg.alpha_flu = alpha;
        }
        const AdversarialPassage passage =
            optimize_trigger(encoder, vocab, target, info, cfg, &lm);

        AlphaSweepRow row;
        row.alpha = alpha;
        row.objective = passage.objective;
        row.defense_score = defense_score(kind, encoder, vocab, &lm, passage.text);
        row.penalized_quantity = kind == DefenseKind::kL2Norm
                                     ? embed_text(encoder, vocab, passage.text).norm()
                                     : log_perplexity(lm, encode(vocab, passage.text));

        RetrievalIndex poisoned = benign_index;
        std::vector<Passage> injected = inject_poison({}, std::vector<AdversarialPassage>{passage});
        append_passages(poisoned, encoder, vocab, injected);
        const std::set<std::string> ids = {injected.front().id};
        row.appeared_before =
            appeared_at_k(poisoned, encoder, vocab, fixture.heldout_queries, ids, fixture.k);
        row.appeared_after = row.defense_score > threshold ? 0.0 : row.appeared_before;
        rows.push_back(row);
    }
    return rows;
}

// Default-weight selection: the largest alpha whose filtered visibility
// stays within half the unpenalized run's unfiltered visibility.
inline double choose_default_alpha(const std::vector<AlphaSweepRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("choose_default_alpha: no rows");
    double vanilla_before = 0.0;
    for (const auto& r : rows) {
        if (r.alpha == 0.0) vanilla_before = r.appeared_before;
    }
    double best = 0.0;
    for (const auto& r : rows) {
        if (r.appeared_after >= 0.5 * vanilla_before && r.alpha > best) best = r.alpha;
    }
    return best;
}

inline std::string alpha_sweep_csv(const std::vector<AlphaSweepRow>& rows) {
    CsvWriter csv({"alpha", "objective", "defense_score", "penalized_quantity", "appeared_before",
                   "appeared_after"});
    for (const auto& r : rows) {
        csv.append_row({format_double(r.alpha), format_double(r.objective),
                        format_double(r.defense_score), format_double(r.penalized_quantity),
                        format_double(r.appeared_before), format_double(r.appeared_after)});
    }
    return csv.str();
}

inline std::string anisotropy_csv(const AnisotropyResult& r) {
    CsvWriter csv({"population", "bin_lo", "bin_hi", "count"});
    for (std::size_t i = 0; i < r.histogram.counts.size(); ++i) {
        csv.append_row({"pair_cosine", format_double(r.histogram.bin_lo(i)),
                        format_double(r.histogram.bin_hi(i)), std::to_string(r.histogram.counts[i])});
    }
    return csv.str();
}

inline std::string norm_distribution_csv(const NormDistribution& d) {
    CsvWriter csv({"id", "norm"});
    for (const auto& [id, n] : d.per_id) csv.append_row({id, format_double(n)});
    return csv.str();
}

}  // namespace poisonlab
