#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/encoder.hpp"
#include "poisonlab/io.hpp"
#include "poisonlab/tokenizer.hpp"

namespace poisonlab {

// Exact brute-force vector index. Scoring is a full matrix-vector product
// and ranking is a strict argsort; no approximate path exists on purpose.
struct RetrievalIndex {
    std::vector<std::string> passage_ids;
    Eigen::MatrixXd matrix;  // n x d, row i = embedding of passage_ids[i]
    SimilarityMode mode = SimilarityMode::kCosine;

    Eigen::Index size() const { return matrix.rows(); }
};

struct ScoredPassage {
    std::string id;
    double score = 0.0;
};

struct RetrievalResult {
    std::vector<ScoredPassage> ranked;  // scores non-increasing, ties by id
    double kth_score = 0.0;
};

inline RetrievalIndex build_index(const EncoderParams& encoder, const Vocabulary& vocab,
                                  const std::vector<Passage>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("build_index: empty corpus");
    RetrievalIndex index;
    index.mode = encoder.mode;
    index.passage_ids.reserve(corpus.size());
    index.matrix.resize(static_cast<Eigen::Index>(corpus.size()), encoder.dim());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        index.passage_ids.push_back(corpus[i].id);
        index.matrix.row(static_cast<Eigen::Index>(i)) = embed_text(encoder, vocab, corpus[i].text);
    }
    return index;
}

// Poison-injection path: appends precomputed vectors (each id must be new).
inline void append_vectors(RetrievalIndex& index, const std::vector<std::string>& ids,
                           const Eigen::MatrixXd& vectors) {
    if (static_cast<Eigen::Index>(ids.size()) != vectors.rows()) {
        throw std::invalid_argument("append_vectors: id/vector count mismatch");
    }
    if (vectors.cols() != index.matrix.cols()) {
        throw std::invalid_argument("append_vectors: dimension mismatch");
    }
    std::set<std::string> existing(index.passage_ids.begin(), index.passage_ids.end());
    for (const auto& id : ids) {
        if (!existing.insert(id).second) throw std::invalid_argument("append_vectors: duplicate id " + id);
    }
    const Eigen::Index old_n = index.matrix.rows();
    index.matrix.conservativeResize(old_n + vectors.rows(), Eigen::NoChange);
    index.matrix.bottomRows(vectors.rows()) = vectors;
    index.passage_ids.insert(index.passage_ids.end(), ids.begin(), ids.end());
}

inline void append_passages(RetrievalIndex& index, const EncoderParams& encoder,
                            const Vocabulary& vocab, const std::vector<Passage>& passages) {
    if (passages.empty()) return;
    std::vector<std::string> ids;
    Eigen::MatrixXd vectors(static_cast<Eigen::Index>(passages.size()), index.matrix.cols());
    for (std::size_t i = 0; i < passages.size(); ++i) {
        ids.push_back(passages[i].id);
        vectors.row(static_cast<Eigen::Index>(i)) = embed_text(encoder, vocab, passages[i].text);
    }
    append_vectors(index, ids, vectors);
}

namespace detail {

// Argsort by (score desc, id asc); the id tiebreak pins down a total order.
inline std::vector<Eigen::Index> ranked_order(const RetrievalIndex& index,
                                              const Eigen::VectorXd& scores) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(index.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.passage_ids[static_cast<std::size_t>(a)] <
               index.passage_ids[static_cast<std::size_t>(b)];
    });
    return order;
}

}  // namespace detail

inline RetrievalResult top_k(const RetrievalIndex& index, const EncoderParams& encoder,
                             const Vocabulary& vocab, const std::string& query_text, std::size_t k) {
    if (k < 1 || static_cast<Eigen::Index>(k) > index.size()) {
        throw std::invalid_argument("top_k: k out of range");
    }
    const Eigen::VectorXd q = embed_text(encoder, vocab, query_text);
    const Eigen::VectorXd scores = index.matrix * q;
    const auto order = detail::ranked_order(index, scores);

    RetrievalResult result;
    result.ranked.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
        const auto i = order[r];
        result.ranked.push_back({index.passage_ids[static_cast<std::size_t>(i)], scores[i]});
    }
    result.kth_score = result.ranked.back().score;
    return result;
}

// Fraction of queries whose top-k intersects adv_ids.
inline double appeared_at_k(const RetrievalIndex& index, const EncoderParams& encoder,
                            const Vocabulary& vocab, const std::vector<QueryRecord>& queries,
                            const std::set<std::string>& adv_ids, std::size_t k) {
    const std::set<std::string> known(index.passage_ids.begin(), index.passage_ids.end());
    for (const auto& id : adv_ids) {
        if (!known.count(id)) throw std::invalid_argument("appeared_at_k: unknown adversarial id " + id);
    }
    if (queries.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& q : queries) {
        const auto result = top_k(index, encoder, vocab, q.text, k);
        for (const auto& sp : result.ranked) {
            if (adv_ids.count(sp.id)) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

// 1-based rank under the same total order as top_k, computed directly.
inline std::size_t rank_of(const RetrievalIndex& index, const EncoderParams& encoder,
                           const Vocabulary& vocab, const std::string& query_text,
                           const std::string& passage_id) {
    auto it = std::find(index.passage_ids.begin(), index.passage_ids.end(), passage_id);
    if (it == index.passage_ids.end()) throw NotFoundError("rank_of: unknown passage id " + passage_id);
    const auto target = static_cast<Eigen::Index>(it - index.passage_ids.begin());

    const Eigen::VectorXd q = embed_text(encoder, vocab, query_text);
    const Eigen::VectorXd scores = index.matrix * q;
    std::size_t rank = 1;
    for (Eigen::Index i = 0; i < index.size(); ++i) {
        if (i == target) continue;
        if (scores[i] > scores[target] ||
            (scores[i] == scores[target] &&
             index.passage_ids[static_cast<std::size_t>(i)] <
                 index.passage_ids[static_cast<std::size_t>(target)])) {
            ++rank;
        }
    }
    return rank;
}

// Fraction of queries with at least one gold passage in the top-k. Queries
// with no resolvable gold count as misses.
inline double gold_recall_at_k(const RetrievalIndex& index, const EncoderParams& encoder,
                               const Vocabulary& vocab, const std::vector<QueryRecord>& queries,
                               std::size_t k) {
    if (queries.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& q : queries) {
        const auto result = top_k(index, encoder, vocab, q.text, k);
        const std::set<std::string> gold(q.gold_ids.begin(), q.gold_ids.end());
        for (const auto& sp : result.ranked) {
            if (gold.count(sp.id)) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

// One JSONL record per query: adversarial ranks and the k-th benign score.
inline std::string evaluation_report_jsonl(const RetrievalIndex& index, const EncoderParams& encoder,
                                           const Vocabulary& vocab,
                                           const std::vector<QueryRecord>& queries,
                                           const std::set<std::string>& adv_ids, std::size_t k) {
    std::string out;
    for (const auto& q : queries) {
        nlohmann::json j;
        j["id"] = q.id;
        std::vector<std::size_t> ranks;
        for (const auto& id : adv_ids) ranks.push_back(rank_of(index, encoder, vocab, q.text, id));
        std::sort(ranks.begin(), ranks.end());
        j["adv_ranks"] = ranks;
        j["kth_score"] = top_k(index, encoder, vocab, q.text, k).kth_score;
        out += j.dump() + "\n";
    }
    return out;
}

// --- index cache (same binary conventions as the encoder checkpoint) ------

inline void save_index(const RetrievalIndex& index, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot open for writing: " + path.string());
    const char magic[8] = {'P', 'L', 'I', 'D', 'X', '0', '0', '1'};
    detail::write_bytes(out, magic, 8);
    detail::write_u64(out, index.mode == SimilarityMode::kCosine ? 0 : 1);
    detail::write_u64(out, index.passage_ids.size());
    for (const auto& id : index.passage_ids) {
        detail::write_u64(out, id.size());
        detail::write_bytes(out, id.data(), id.size());
    }
    detail::write_matrix(out, index.matrix);
    if (!out) throw InternalError("index write failed: " + path.string());
}

inline RetrievalIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open for reading: " + path.string());
    char magic[8];
    detail::read_bytes(in, magic, 8);
    if (std::memcmp(magic, "PLIDX001", 8) != 0) throw InternalError("index cache: bad magic");
    RetrievalIndex index;
    index.mode = detail::read_u64(in) == 0 ? SimilarityMode::kCosine : SimilarityMode::kDot;
    const auto n = detail::read_u64(in);
    index.passage_ids.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string id(detail::read_u64(in), '\0');
        detail::read_bytes(in, id.data(), id.size());
        index.passage_ids.push_back(std::move(id));
    }
    index.matrix = detail::read_matrix(in);
    return index;
}

}  // namespace poisonlab
