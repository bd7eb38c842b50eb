#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/encoder.hpp"
#include "poisonlab/index.hpp"
#include "poisonlab/ngram_lm.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/stats.hpp"
#include "poisonlab/tokenizer.hpp"

namespace poisonlab {

// Ablation switches for the trigger optimizer. Disabling multi_coordinate
// flips one position per iteration; disabling gradient_averaging uses the
// plain single-point gradient; disabling retokenize_filter keeps candidates
// whose decode/encode round trip alters the tokens; disabling
// compact_objective scores candidates by summing per-query similarities
// instead of similarity to the query centroid.
struct AttackFlags {
    bool multi_coordinate = true;
    bool retokenize_filter = true;
    bool gradient_averaging = true;
    bool compact_objective = true;
};

struct AttackConfig {
    std::size_t trigger_len = 16;
    std::size_t n_iter = 50;
    std::size_t n_grad = 16;
    std::size_t n_cand = 64;
    std::size_t n_flip = 8;
    std::size_t budget = 1;
    AttackFlags flags;
    double alpha_flu = 0.0;
    double alpha_l2 = 0.0;
    std::optional<double> logit_restrict_top_p;
    std::uint64_t seed = 0;

    void validate() const {
        if (trigger_len < 1) throw std::invalid_argument("attack config: trigger_len must be >= 1");
        if (n_iter < 1) throw std::invalid_argument("attack config: n_iter must be >= 1");
        if (n_grad < 1) throw std::invalid_argument("attack config: n_grad must be >= 1");
        if (n_cand < 1) throw std::invalid_argument("attack config: n_cand must be >= 1");
        if (n_flip < 1 || n_flip > trigger_len) {
            throw std::invalid_argument("attack config: need 1 <= n_flip <= trigger_len");
        }
        if (budget < 1) throw std::invalid_argument("attack config: budget must be >= 1");
        if (!(alpha_flu >= 0.0) || !std::isfinite(alpha_flu) || !(alpha_l2 >= 0.0) ||
            !std::isfinite(alpha_l2)) {
            throw std::invalid_argument("attack config: penalty weights must be finite and >= 0");
        }
        if (logit_restrict_top_p && !(*logit_restrict_top_p > 0.0 && *logit_restrict_top_p <= 1.0)) {
            throw std::invalid_argument("attack config: logit_restrict_top_p must be in (0, 1]");
        }
    }
};

// Minutes-on-CPU defaults used throughout the test fixtures.
inline AttackConfig desk_attack_config() { return AttackConfig{}; }

// Full-scale settings kept as a named preset.
inline AttackConfig paper_attack_config() {
    AttackConfig cfg;
    cfg.trigger_len = 100;
    cfg.n_iter = 100;
    cfg.n_grad = 50;
    cfg.n_cand = 128;
    cfg.n_flip = 20;
    return cfg;
}

struct TargetVector {
    Eigen::VectorXd values;
    int cluster_id = 0;
    // Embeddings of the member queries (one row each); kept so the
    // sum-of-similarities scoring route can be evaluated.
    Eigen::MatrixXd member_embeddings;
};

struct AdversarialPassage {
    TokenSequence info_tokens;
    TokenSequence trigger_tokens;
    std::string text;
    double objective = 0.0;  // final similarity to the target vector
    int cluster_id = 0;
    AttackConfig config;

    // Provenance of the run.
    std::string method = "optimized";
    std::vector<double> objective_trace;           // scored objective per iteration
    std::vector<double> accepted_flip_objectives;  // scored objective after each accepted flip
    std::int64_t irreversible_candidates = 0;      // candidates whose round trip broke

    TokenSequence full_tokens() const {
        TokenSequence t = info_tokens;
        t.insert(t.end(), trigger_tokens.begin(), trigger_tokens.end());
        return t;
    }
};

struct PartitionResult {
    std::vector<std::vector<std::string>> clusters;  // query ids per cluster
    std::string method;
    std::vector<double> objective_trace;
    std::vector<std::string> warnings;
};

enum class PartitionMethod { kKMeans, kGscKth };

inline std::string to_string(PartitionMethod m) {
    return m == PartitionMethod::kKMeans ? "kmeans" : "gsc_kth";
}

// Mean of the query embeddings. Cosine-mode embeddings come out unit-norm,
// so this is the centroid of directions there; dot mode averages raw
// vectors.
inline TargetVector compute_target_vector(const EncoderParams& encoder, const Vocabulary& vocab,
                                          const std::vector<QueryRecord>& queries) {
    if (queries.empty()) throw std::invalid_argument("compute_target_vector: no queries");
    TargetVector target;
    target.member_embeddings.resize(static_cast<Eigen::Index>(queries.size()), encoder.dim());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        target.member_embeddings.row(static_cast<Eigen::Index>(i)) =
            embed_text(encoder, vocab, queries[i].text);
    }
    target.values = target.member_embeddings.colwise().mean();
    return target;
}

namespace detail {

inline std::vector<TokenId> banned_token_ids(const Vocabulary& vocab) {
    return {vocab.unk_id(), vocab.pad_id()};
}

inline bool is_banned(const Vocabulary& vocab, TokenId id) { return vocab.is_special(id); }

// Word-start, non-special tokens. Initializing the trigger from this pool
// keeps the initial token list reversible: each whitespace-separated word
// equals one vocabulary entry, so greedy encoding reproduces it.
inline std::vector<TokenId> word_start_pool(const Vocabulary& vocab) {
    std::vector<TokenId> pool;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        const auto id = static_cast<TokenId>(i);
        if (vocab.is_word_start(id)) pool.push_back(id);
    }
    if (pool.empty()) throw InternalError("vocabulary has no word-start tokens");
    return pool;
}

}  // namespace detail

// Linear approximation of the objective around the current trigger,
// averaged over random single-token flips. The undisturbed trigger is
// always the first sample, so n_grad = 1 degenerates to the plain gradient.
// Returned rows cover trigger positions only.
inline Eigen::MatrixXd averaged_gradient(const EncoderParams& encoder, const Vocabulary& vocab,
                                         const TargetVector& target, const TokenSequence& trigger,
                                         const TokenSequence& info, std::size_t n_grad, Rng& rng) {
    if (n_grad < 1) throw std::invalid_argument("averaged_gradient: n_grad must be >= 1");
    if (trigger.empty()) throw std::invalid_argument("averaged_gradient: empty trigger");

    std::vector<TokenId> flippable;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        const auto id = static_cast<TokenId>(i);
        if (!detail::is_banned(vocab, id)) flippable.push_back(id);
    }

    const std::size_t info_len = info.size();
    Eigen::MatrixXd acc =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(trigger.size()), encoder.dim());
    TokenSequence full = info;
    full.insert(full.end(), trigger.begin(), trigger.end());

    for (std::size_t s = 0; s < n_grad; ++s) {
        TokenSequence sample = full;
        if (s > 0) {
            const std::size_t pos = rng.uniform_index(trigger.size());
            sample[info_len + pos] = flippable[rng.uniform_index(flippable.size())];
        }
        const Eigen::MatrixXd grad = grad_similarity(encoder, target.values, sample);
        acc += grad.middleRows(static_cast<Eigen::Index>(info_len),
                               static_cast<Eigen::Index>(trigger.size()));
    }
    return acc / static_cast<double>(n_grad);
}

struct LmCandidateFilter {
    const NGramLM* lm = nullptr;
    double top_p = 0.01;
    std::vector<TokenId> context;  // tokens left of the position being flipped
};

// Rank the vocabulary by the first-order score (gradient row dotted with
// each embedding row) and keep the n_cand most promising tokens. Banned ids
// are excluded, the incumbent token is always kept, and an optional LM
// filter first intersects the pool with the model's top-p next-token set.
inline std::vector<TokenId> select_candidates(const EncoderParams& encoder, const Vocabulary& vocab,
                                              const Eigen::VectorXd& gradient_row,
                                              std::size_t n_cand, TokenId current_token,
                                              const std::optional<LmCandidateFilter>& lm_filter) {
    std::vector<TokenId> pool;
    if (lm_filter) {
        pool = lm_filter->lm->top_fraction(lm_filter->lm->context_at(lm_filter->context,
                                                                     lm_filter->context.size()),
                                           lm_filter->top_p);
        std::erase_if(pool, [&](TokenId id) { return detail::is_banned(vocab, id); });
    } else {
        for (std::size_t i = 0; i < vocab.size(); ++i) {
            const auto id = static_cast<TokenId>(i);
            if (!detail::is_banned(vocab, id)) pool.push_back(id);
        }
    }

    std::vector<std::pair<double, TokenId>> scored;
    scored.reserve(pool.size());
    for (TokenId id : pool) {
        scored.emplace_back(gradient_row.dot(encoder.embedding_table.row(id)), id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    std::vector<TokenId> out;
    out.reserve(std::min(n_cand, scored.size()) + 1);
    for (const auto& [score, id] : scored) {
        if (out.size() >= n_cand) break;
        out.push_back(id);
    }
    if (std::find(out.begin(), out.end(), current_token) == out.end()) out.push_back(current_token);
    return out;
}

namespace detail {

// Exact scored objective for a candidate passage. With compact scoring this
// is similarity to the centroid; the ablated route sums per-query
// similarities (identical argmax up to the member count factor). Penalty
// terms subtract weighted log-perplexity and embedding norm.
inline double scored_objective(const EncoderParams& encoder, const TargetVector& target,
                               const AttackConfig& cfg, const NGramLM* lm,
                               const TokenSequence& full_tokens) {
    const Eigen::VectorXd e = embed(encoder, full_tokens);
    double score;
    if (cfg.flags.compact_objective) {
        score = target.values.dot(e);
    } else {
        score = (target.member_embeddings * e).sum();
    }
    if (cfg.alpha_flu > 0.0) score -= cfg.alpha_flu * log_perplexity(*lm, full_tokens);
    if (cfg.alpha_l2 > 0.0) score -= cfg.alpha_l2 * e.norm();
    return score;
}

}  // namespace detail

// Gradient-guided greedy trigger search. Per iteration: average the
// linearized objective over random single-flip neighbours, sample flip
// positions without replacement, and for each position (ascending) evaluate
// the exact scored objective over the top candidates, keeping the argmax.
// Candidates whose token list does not survive a decode/encode round trip
// are discarded while the retokenize filter is on, and the best reversible
// state seen is what gets returned.
inline AdversarialPassage optimize_trigger(const EncoderParams& encoder, const Vocabulary& vocab,
                                           const TargetVector& target, const TokenSequence& info,
                                           const AttackConfig& config, const NGramLM* lm = nullptr) {
    config.validate();
    if ((config.alpha_flu > 0.0 || config.logit_restrict_top_p) && lm == nullptr) {
        throw std::invalid_argument(
            "optimize_trigger: fluency weight or logit restriction requires a language model");
    }

    Rng rng(config.seed);
    const auto pool = detail::word_start_pool(vocab);

    TokenSequence trigger(config.trigger_len);
    for (auto& t : trigger) t = pool[rng.uniform_index(pool.size())];

    const std::size_t info_len = info.size();
    auto full_of = [&](const TokenSequence& trig) {
        TokenSequence full = info;
        full.insert(full.end(), trig.begin(), trig.end());
        return full;
    };

    AdversarialPassage result;
    result.info_tokens = info;
    result.config = config;
    result.cluster_id = target.cluster_id;

    double current_score =
        detail::scored_objective(encoder, target, config, lm, full_of(trigger));
    TokenSequence best_trigger = trigger;
    double best_score = current_score;
    bool have_best = !config.flags.retokenize_filter || is_reversible(vocab, full_of(trigger));

    const std::size_t n_grad = config.flags.gradient_averaging ? config.n_grad : 1;
    const std::size_t n_flip =
        config.flags.multi_coordinate ? std::min(config.n_flip, config.trigger_len) : 1;

    for (std::size_t iter = 0; iter < config.n_iter; ++iter) {
        const Eigen::MatrixXd grad =
            averaged_gradient(encoder, vocab, target, trigger, info, n_grad, rng);

        auto positions = rng.sample_indices(config.trigger_len, n_flip);
        std::sort(positions.begin(), positions.end());

        for (const std::size_t pos : positions) {
            std::optional<LmCandidateFilter> lm_filter;
            if (config.logit_restrict_top_p) {
                LmCandidateFilter f;
                f.lm = lm;
                f.top_p = *config.logit_restrict_top_p;
                TokenSequence left = info;
                left.insert(left.end(), trigger.begin(),
                            trigger.begin() + static_cast<long>(pos));
                f.context = std::move(left);
                lm_filter = std::move(f);
            }
            const auto candidates = select_candidates(
                encoder, vocab, grad.row(static_cast<Eigen::Index>(pos)).transpose(),
                config.n_cand, trigger[pos], lm_filter);

            TokenId best_cand = -1;
            double best_cand_score = -std::numeric_limits<double>::infinity();
            for (TokenId cand : candidates) {
                TokenSequence trial = trigger;
                trial[pos] = cand;
                const TokenSequence full = full_of(trial);
                const bool reversible = is_reversible(vocab, full);
                if (!reversible) {
                    ++result.irreversible_candidates;
                    if (config.flags.retokenize_filter) continue;
                }
                const double s = detail::scored_objective(encoder, target, config, lm, full);
                if (s > best_cand_score || (s == best_cand_score && cand < best_cand)) {
                    best_cand = cand;
                    best_cand_score = s;
                }
            }
            if (best_cand < 0) continue;  // every candidate was filtered out

            if (best_cand != trigger[pos]) {
                trigger[pos] = best_cand;
                current_score = best_cand_score;
                result.accepted_flip_objectives.push_back(current_score);
            } else {
                current_score = best_cand_score;
            }
            if (current_score > best_score || !have_best) {
                const bool ok = !config.flags.retokenize_filter ||
                                is_reversible(vocab, full_of(trigger));
                if (ok) {
                    best_score = current_score;
                    best_trigger = trigger;
                    have_best = true;
                }
            }
        }
        result.objective_trace.push_back(current_score);
    }

    result.trigger_tokens = have_best ? best_trigger : trigger;
    const TokenSequence full = full_of(result.trigger_tokens);
    result.text = decode(vocab, full);
    result.objective = target.values.dot(embed(encoder, full));
    return result;
}

// Passage consisting of the info prefix alone.
inline AdversarialPassage info_only_baseline(const EncoderParams& encoder, const Vocabulary& vocab,
                                             const TargetVector& target,
                                             const std::string& info_text) {
    AdversarialPassage p;
    p.method = "info_only";
    p.info_tokens = encode(vocab, info_text);
    p.cluster_id = target.cluster_id;
    if (p.info_tokens.empty()) throw std::invalid_argument("info_only_baseline: empty info text");
    p.text = decode(vocab, p.info_tokens);
    p.objective = target.values.dot(embed(encoder, p.info_tokens));
    return p;
}

// Trigger formed by concatenating the sample queries in the given order,
// trimmed to the trigger length. Shorter concatenations are kept as-is
// rather than duplicated.
inline AdversarialPassage stuffing_baseline(const EncoderParams& encoder, const Vocabulary& vocab,
                                            const TargetVector& target, const std::string& info_text,
                                            const std::vector<QueryRecord>& queries,
                                            std::size_t trigger_len) {
    if (queries.empty()) throw std::invalid_argument("stuffing_baseline: no queries");
    AdversarialPassage p;
    p.method = "stuffing";
    p.info_tokens = encode(vocab, info_text);
    p.cluster_id = target.cluster_id;
    for (const auto& q : queries) {
        const TokenSequence qt = encode(vocab, q.text);
        for (TokenId id : qt) {
            if (p.trigger_tokens.size() >= trigger_len) break;
            p.trigger_tokens.push_back(id);
        }
        if (p.trigger_tokens.size() >= trigger_len) break;
    }
    const TokenSequence full = p.full_tokens();
    if (full.empty()) throw std::invalid_argument("stuffing_baseline: empty passage");
    p.text = decode(vocab, full);
    p.objective = target.values.dot(embed(encoder, full));
    return p;
}

// --- query partitioning ----------------------------------------------------

namespace detail {

inline double within_cluster_sse(const Eigen::MatrixXd& points,
                                 const std::vector<std::size_t>& assignment,
                                 const Eigen::MatrixXd& centers) {
    double sse = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        sse += (points.row(i) - centers.row(static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)])))
                   .squaredNorm();
    }
    return sse;
}

}  // namespace detail

// Partition queries into at most B clusters for the multi-passage budget.
// kmeans runs Lloyd iterations on normalized embeddings with seeded init;
// gsc_kth greedily picks the query covering the most uncovered per-query
// kth-score thresholds, then sends leftovers to the nearest chosen center.
inline PartitionResult partition_queries(const EncoderParams& encoder, const Vocabulary& vocab,
                                         const std::vector<QueryRecord>& queries, std::size_t budget,
                                         PartitionMethod method, std::uint64_t seed,
                                         const RetrievalIndex* benign_index = nullptr,
                                         std::size_t k = 10) {
    if (budget < 1) throw std::invalid_argument("partition_queries: budget must be >= 1");
    if (queries.empty()) throw std::invalid_argument("partition_queries: no queries");

    PartitionResult result;
    result.method = to_string(method);

    if (budget > queries.size()) {
        result.warnings.push_back("budget " + std::to_string(budget) + " exceeds query count " +
                                  std::to_string(queries.size()) + "; using singleton clusters");
        for (const auto& q : queries) result.clusters.push_back({q.id});
        return result;
    }

    const auto n = static_cast<Eigen::Index>(queries.size());
    Eigen::MatrixXd raw(n, encoder.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        raw.row(i) = embed_text(encoder, vocab, queries[static_cast<std::size_t>(i)].text);
    }
    Eigen::MatrixXd unit = raw;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double nrm = unit.row(i).norm();
        if (nrm > 0.0) unit.row(i) /= nrm;
    }

    std::vector<std::size_t> assignment(static_cast<std::size_t>(n), 0);

    if (method == PartitionMethod::kKMeans) {
        Rng rng(seed);
        const auto init = rng.sample_indices(static_cast<std::size_t>(n), budget);
        Eigen::MatrixXd centers(static_cast<Eigen::Index>(budget), encoder.dim());
        for (std::size_t c = 0; c < budget; ++c) {
            centers.row(static_cast<Eigen::Index>(c)) = unit.row(static_cast<Eigen::Index>(init[c]));
        }

        constexpr std::size_t kMaxIterations = 60;
        for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
            bool changed = false;
            for (Eigen::Index i = 0; i < n; ++i) {
                std::size_t best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < budget; ++c) {
                    const double d =
                        (unit.row(i) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                if (assignment[static_cast<std::size_t>(i)] != best) {
                    assignment[static_cast<std::size_t>(i)] = best;
                    changed = true;
                }
            }

            // Reseed empty clusters from the farthest point of a cluster
            // that can spare one (>= 2 members).
            std::vector<std::int64_t> sizes(budget, 0);
            for (auto a : assignment) ++sizes[a];
            for (std::size_t c = 0; c < budget; ++c) {
                if (sizes[c] != 0) continue;
                Eigen::Index farthest = -1;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const auto owner = assignment[static_cast<std::size_t>(i)];
                    if (sizes[owner] < 2) continue;
                    const double d =
                        (unit.row(i) - centers.row(static_cast<Eigen::Index>(owner))).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        farthest = i;
                    }
                }
                if (farthest < 0) throw InternalError("kmeans: cannot reseed empty cluster");
                --sizes[assignment[static_cast<std::size_t>(farthest)]];
                assignment[static_cast<std::size_t>(farthest)] = c;
                sizes[c] = 1;
                changed = true;
            }

            centers.setZero();
            std::vector<double> counts(budget, 0.0);
            for (Eigen::Index i = 0; i < n; ++i) {
                centers.row(static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)])) +=
                    unit.row(i);
                counts[assignment[static_cast<std::size_t>(i)]] += 1.0;
            }
            for (std::size_t c = 0; c < budget; ++c) {
                centers.row(static_cast<Eigen::Index>(c)) /= counts[c];
            }

            result.objective_trace.push_back(detail::within_cluster_sse(unit, assignment, centers));
            if (!changed) break;
        }
    } else {
        if (benign_index == nullptr) {
            throw std::invalid_argument("partition_queries: gsc_kth requires the benign index");
        }
        std::vector<double> thresholds(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            thresholds[static_cast<std::size_t>(i)] =
                top_k(*benign_index, encoder, vocab, queries[static_cast<std::size_t>(i)].text, k)
                    .kth_score;
        }
        // Coverage test uses the native-similarity embeddings: the cluster's
        // passage will sit near the chosen center.
        const Eigen::MatrixXd sims = raw * raw.transpose();

        std::vector<bool> covered(static_cast<std::size_t>(n), false);
        std::vector<Eigen::Index> centers_idx;
        std::vector<long> cluster_of(static_cast<std::size_t>(n), -1);
        std::size_t covered_count = 0;

        for (std::size_t round = 0; round < budget && covered_count < static_cast<std::size_t>(n);
             ++round) {
            Eigen::Index best_center = -1;
            std::int64_t best_cover = -1;
            for (Eigen::Index c = 0; c < n; ++c) {
                if (covered[static_cast<std::size_t>(c)]) continue;
                std::int64_t cover = 0;
                for (Eigen::Index q = 0; q < n; ++q) {
                    if (!covered[static_cast<std::size_t>(q)] &&
                        sims(c, q) > thresholds[static_cast<std::size_t>(q)]) {
                        ++cover;
                    }
                }
                if (cover > best_cover) {
                    best_cover = cover;
                    best_center = c;
                }
            }
            if (best_center < 0) break;
            const auto cluster_index = static_cast<long>(centers_idx.size());
            centers_idx.push_back(best_center);
            for (Eigen::Index q = 0; q < n; ++q) {
                if (!covered[static_cast<std::size_t>(q)] &&
                    (q == best_center ||
                     sims(best_center, q) > thresholds[static_cast<std::size_t>(q)])) {
                    covered[static_cast<std::size_t>(q)] = true;
                    cluster_of[static_cast<std::size_t>(q)] = cluster_index;
                    ++covered_count;
                }
            }
            result.objective_trace.push_back(static_cast<double>(covered_count) /
                                             static_cast<double>(n));
        }
        // Leftovers join the nearest chosen center.
        for (Eigen::Index q = 0; q < n; ++q) {
            if (cluster_of[static_cast<std::size_t>(q)] >= 0) continue;
            long best_cluster = 0;
            double best_sim = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < centers_idx.size(); ++c) {
                const double s = sims(centers_idx[c], q);
                if (s > best_sim) {
                    best_sim = s;
                    best_cluster = static_cast<long>(c);
                }
            }
            cluster_of[static_cast<std::size_t>(q)] = best_cluster;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            assignment[static_cast<std::size_t>(i)] =
                static_cast<std::size_t>(cluster_of[static_cast<std::size_t>(i)]);
        }
        result.clusters.resize(centers_idx.size());
        for (Eigen::Index i = 0; i < n; ++i) {
            result.clusters[assignment[static_cast<std::size_t>(i)]].push_back(
                queries[static_cast<std::size_t>(i)].id);
        }
        return result;
    }

    result.clusters.resize(budget);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        result.clusters[assignment[i]].push_back(queries[i].id);
    }
    return result;
}

// Partition, then run one trigger optimization per cluster against that
// cluster's centroid. Per-cluster seeds derive from the config seed.
inline std::vector<AdversarialPassage> multi_budget_attack(
    const EncoderParams& encoder, const Vocabulary& vocab, const std::vector<QueryRecord>& queries,
    const std::string& info_text, const AttackConfig& config, const NGramLM* lm = nullptr,
    PartitionMethod method = PartitionMethod::kKMeans, const RetrievalIndex* benign_index = nullptr,
    std::size_t k = 10, PartitionResult* partition_out = nullptr) {
    config.validate();
    const PartitionResult partition = partition_queries(encoder, vocab, queries, config.budget,
                                                        method, config.seed, benign_index, k);
    if (partition_out != nullptr) *partition_out = partition;

    std::map<std::string, const QueryRecord*> by_id;
    for (const auto& q : queries) by_id[q.id] = &q;
    const TokenSequence info = encode(vocab, info_text);

    std::vector<AdversarialPassage> passages;
    passages.reserve(partition.clusters.size());
    for (std::size_t c = 0; c < partition.clusters.size(); ++c) {
        std::vector<QueryRecord> members;
        for (const auto& id : partition.clusters[c]) members.push_back(*by_id.at(id));
        TargetVector target = compute_target_vector(encoder, vocab, members);
        target.cluster_id = static_cast<int>(c);
        AttackConfig cluster_cfg = config;
        cluster_cfg.seed = derive_seed(config.seed, c);
        passages.push_back(optimize_trigger(encoder, vocab, target, info, cluster_cfg, lm));
    }
    return passages;
}

// Optimal objective vectors, one per cluster: the member centroid,
// normalized on the sphere in cosine mode, or rescaled to the 99th
// percentile benign passage norm in dot mode. Evaluation injects these
// vectors directly; no text is realized.
inline std::vector<Eigen::VectorXd> perfect_attack_oracle(
    const EncoderParams& encoder, const PartitionResult& partition,
    const std::map<std::string, Eigen::VectorXd>& query_embeddings,
    const std::vector<double>& benign_norms) {
    double scale = 1.0;
    if (encoder.mode == SimilarityMode::kDot) {
        if (benign_norms.empty()) {
            throw std::invalid_argument("perfect_attack_oracle: dot mode requires benign norms");
        }
        scale = percentile_nearest_rank(benign_norms, 99.0);
    }

    std::vector<Eigen::VectorXd> out;
    out.reserve(partition.clusters.size());
    for (const auto& cluster : partition.clusters) {
        if (cluster.empty()) throw std::invalid_argument("perfect_attack_oracle: empty cluster");
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(encoder.dim());
        for (const auto& id : cluster) centroid += query_embeddings.at(id);
        centroid /= static_cast<double>(cluster.size());
        const double nrm = centroid.norm();
        if (nrm == 0.0) throw std::invalid_argument("perfect_attack_oracle: degenerate centroid");
        out.push_back(centroid / nrm * scale);
    }
    return out;
}

// --- manifest serialization -------------------------------------------------

inline nlohmann::json attack_config_to_json(const AttackConfig& cfg) {
    nlohmann::json j;
    j["trigger_len"] = cfg.trigger_len;
    j["n_iter"] = cfg.n_iter;
    j["n_grad"] = cfg.n_grad;
    j["n_cand"] = cfg.n_cand;
    j["n_flip"] = cfg.n_flip;
    j["budget"] = cfg.budget;
    j["flags"] = {{"multi_coordinate", cfg.flags.multi_coordinate},
                  {"retokenize_filter", cfg.flags.retokenize_filter},
                  {"gradient_averaging", cfg.flags.gradient_averaging},
                  {"compact_objective", cfg.flags.compact_objective}};
    j["alpha_flu"] = cfg.alpha_flu;
    j["alpha_l2"] = cfg.alpha_l2;
    if (cfg.logit_restrict_top_p) j["logit_restrict_top_p"] = *cfg.logit_restrict_top_p;
    j["seed"] = cfg.seed;
    return j;
}

inline AttackConfig attack_config_from_json(const nlohmann::json& j) {
    AttackConfig cfg;
    cfg.trigger_len = j.value("trigger_len", cfg.trigger_len);
    cfg.n_iter = j.value("n_iter", cfg.n_iter);
    cfg.n_grad = j.value("n_grad", cfg.n_grad);
    cfg.n_cand = j.value("n_cand", cfg.n_cand);
    cfg.n_flip = j.value("n_flip", cfg.n_flip);
    cfg.budget = j.value("budget", cfg.budget);
    if (j.contains("flags")) {
        const auto& f = j["flags"];
        cfg.flags.multi_coordinate = f.value("multi_coordinate", true);
        cfg.flags.retokenize_filter = f.value("retokenize_filter", true);
        cfg.flags.gradient_averaging = f.value("gradient_averaging", true);
        cfg.flags.compact_objective = f.value("compact_objective", true);
    }
    cfg.alpha_flu = j.value("alpha_flu", 0.0);
    cfg.alpha_l2 = j.value("alpha_l2", 0.0);
    if (j.contains("logit_restrict_top_p")) {
        cfg.logit_restrict_top_p = j["logit_restrict_top_p"].get<double>();
    }
    cfg.seed = j.value("seed", std::uint64_t{0});
    return cfg;
}

inline nlohmann::json adversarial_passage_to_json(const AdversarialPassage& p) {
    nlohmann::json j;
    j["method"] = p.method;
    j["info_tokens"] = p.info_tokens;
    j["trigger_tokens"] = p.trigger_tokens;
    j["text"] = p.text;
    j["objective"] = p.objective;
    j["cluster_id"] = p.cluster_id;
    j["config"] = attack_config_to_json(p.config);
    j["objective_trace"] = p.objective_trace;
    j["accepted_flip_objectives"] = p.accepted_flip_objectives;
    j["irreversible_candidates"] = p.irreversible_candidates;
    return j;
}

}  // namespace poisonlab
