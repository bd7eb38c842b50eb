#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/tokenizer.hpp"

namespace poisonlab {

enum class SimilarityMode { kCosine, kDot };

inline std::string to_string(SimilarityMode m) {
    return m == SimilarityMode::kCosine ? "cosine" : "dot";
}
inline SimilarityMode similarity_mode_from_string(const std::string& s) {
    if (s == "cosine") return SimilarityMode::kCosine;
    if (s == "dot") return SimilarityMode::kDot;
    throw std::invalid_argument("unknown similarity mode: " + s);
}

struct Projection {
    Eigen::MatrixXd weight;  // d x d
    Eigen::VectorXd bias;    // d
};

// Reference retriever: token embedding lookup -> mean pooling -> optional
// linear projection -> L2 normalization in cosine mode. Small enough to
// differentiate by hand, rich enough to expose both similarity regimes.
struct EncoderParams {
    SimilarityMode mode = SimilarityMode::kCosine;
    Eigen::MatrixXd embedding_table;  // vocab_size x dim
    std::optional<Projection> projection;

    Eigen::Index dim() const { return embedding_table.cols(); }
    Eigen::Index vocab_size() const { return embedding_table.rows(); }
};

inline EncoderParams init_encoder(std::size_t vocab_size, Eigen::Index dim, SimilarityMode mode,
                                  std::uint64_t seed, bool with_projection = false) {
    if (vocab_size == 0 || dim <= 0) throw std::invalid_argument("init_encoder: empty shape");
    Rng rng(seed);
    EncoderParams params;
    params.mode = mode;
    params.embedding_table.resize(static_cast<Eigen::Index>(vocab_size), dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (Eigen::Index i = 0; i < params.embedding_table.rows(); ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) {
            params.embedding_table(i, j) = rng.normal() * scale;
        }
    }
    if (with_projection) {
        Projection proj;
        proj.weight.resize(dim, dim);
        for (Eigen::Index i = 0; i < dim; ++i) {
            for (Eigen::Index j = 0; j < dim; ++j) proj.weight(i, j) = rng.normal() * scale;
        }
        proj.bias = Eigen::VectorXd::Zero(dim);
        params.projection = std::move(proj);
    }
    return params;
}

// Embedding of an explicit ell x d row matrix (one row per token position).
// Split out from embed() so finite-difference checks can perturb a single
// position independently of token identity.
inline Eigen::VectorXd embed_rows(const EncoderParams& params, const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) throw std::invalid_argument("embed_rows: empty input");
    if (rows.cols() != params.dim()) throw std::invalid_argument("embed_rows: dimension mismatch");
    Eigen::VectorXd pooled = rows.colwise().mean();
    Eigen::VectorXd z = params.projection
                            ? Eigen::VectorXd(params.projection->weight * pooled + params.projection->bias)
                            : pooled;
    if (params.mode == SimilarityMode::kCosine) {
        const double n = z.norm();
        if (n == 0.0) throw std::invalid_argument("embed_rows: zero vector cannot be normalized");
        z /= n;
    }
    return z;
}

inline Eigen::MatrixXd gather_rows(const EncoderParams& params, const TokenSequence& tokens) {
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(tokens.size()), params.dim());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= params.vocab_size()) {
            throw std::invalid_argument("embed: token id out of range: " + std::to_string(tokens[i]));
        }
        rows.row(static_cast<Eigen::Index>(i)) = params.embedding_table.row(tokens[i]);
    }
    return rows;
}

inline Eigen::VectorXd embed(const EncoderParams& params, const TokenSequence& tokens) {
    if (tokens.empty()) throw std::invalid_argument("embed: empty token sequence");
    return embed_rows(params, gather_rows(params, tokens));
}

inline Eigen::VectorXd embed_text(const EncoderParams& params, const Vocabulary& vocab,
                                  const std::string& text) {
    return embed(params, encode(vocab, text));
}

// Plain dot product; cosine-mode embeddings are already unit-norm so this
// doubles as cosine similarity there.
inline double similarity(const EncoderParams& params, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b) {
    (void)params;
    if (a.size() != b.size()) throw std::invalid_argument("similarity: dimension mismatch");
    return a.dot(b);
}

// d similarity(target, embed(tokens)) / d (input row i), computed through
// pooling, projection and the normalization Jacobian. Mean pooling makes all
// rows identical; the full matrix is still returned to keep the per-position
// contract explicit.
inline Eigen::MatrixXd grad_similarity(const EncoderParams& params, const Eigen::VectorXd& target,
                                       const TokenSequence& tokens) {
    if (tokens.empty()) throw std::invalid_argument("grad_similarity: empty token sequence");
    if (target.size() != params.dim()) throw std::invalid_argument("grad_similarity: dimension mismatch");

    const Eigen::MatrixXd rows = gather_rows(params, tokens);
    const Eigen::VectorXd pooled = rows.colwise().mean();
    Eigen::VectorXd z = params.projection
                            ? Eigen::VectorXd(params.projection->weight * pooled + params.projection->bias)
                            : pooled;

    Eigen::VectorXd g_z;
    if (params.mode == SimilarityMode::kCosine) {
        const double n = z.norm();
        if (n == 0.0) throw std::invalid_argument("grad_similarity: zero vector cannot be normalized");
        const Eigen::VectorXd u = z / n;
        g_z = (target - u * u.dot(target)) / n;
    } else {
        g_z = target;
    }
    const Eigen::VectorXd g_pooled = params.projection
                                         ? Eigen::VectorXd(params.projection->weight.transpose() * g_z)
                                         : g_z;
    const Eigen::VectorXd g_row = g_pooled / static_cast<double>(tokens.size());

    Eigen::MatrixXd grad(static_cast<Eigen::Index>(tokens.size()), params.dim());
    for (Eigen::Index i = 0; i < grad.rows(); ++i) grad.row(i) = g_row.transpose();
    return grad;
}

// --- contrastive training -------------------------------------------------

struct TrainConfig {
    Eigen::Index dim = 48;
    SimilarityMode mode = SimilarityMode::kCosine;
    bool with_projection = false;
    std::size_t epochs = 30;
    std::size_t batch = 16;
    double lr = 0.5;
    double temperature = 0.1;
    std::uint64_t seed = 0;
};

struct TrainResult {
    EncoderParams params;
    std::vector<double> epoch_loss;
};

namespace detail {

struct ForwardCache {
    const TokenSequence* tokens = nullptr;
    Eigen::VectorXd pooled;
    Eigen::VectorXd z;
    Eigen::VectorXd out;
    double znorm = 0.0;
};

inline ForwardCache forward(const EncoderParams& params, const TokenSequence& tokens) {
    ForwardCache c;
    c.tokens = &tokens;
    const Eigen::MatrixXd rows = gather_rows(params, tokens);
    c.pooled = rows.colwise().mean();
    c.z = params.projection
              ? Eigen::VectorXd(params.projection->weight * c.pooled + params.projection->bias)
              : c.pooled;
    if (params.mode == SimilarityMode::kCosine) {
        c.znorm = c.z.norm();
        if (c.znorm == 0.0) throw std::invalid_argument("train: zero vector cannot be normalized");
        c.out = c.z / c.znorm;
    } else {
        c.out = c.z;
    }
    return c;
}

// Accumulates d loss / d params for one text given d loss / d output.
inline void backward(const EncoderParams& params, const ForwardCache& cache,
                     const Eigen::VectorXd& g_out, Eigen::MatrixXd& g_table,
                     Eigen::MatrixXd* g_weight, Eigen::VectorXd* g_bias) {
    Eigen::VectorXd g_z;
    if (params.mode == SimilarityMode::kCosine) {
        const Eigen::VectorXd u = cache.out;
        g_z = (g_out - u * u.dot(g_out)) / cache.znorm;
    } else {
        g_z = g_out;
    }
    Eigen::VectorXd g_pooled;
    if (params.projection) {
        *g_weight += g_z * cache.pooled.transpose();
        *g_bias += g_z;
        g_pooled = params.projection->weight.transpose() * g_z;
    } else {
        g_pooled = g_z;
    }
    const Eigen::VectorXd g_row = g_pooled / static_cast<double>(cache.tokens->size());
    for (TokenId id : *cache.tokens) g_table.row(id) += g_row.transpose();
}

}  // namespace detail

// In-batch-negative softmax contrastive training on (query, gold passage)
// pairs. Single-threaded SGD over a seeded shuffle of the query stream; the
// returned loss curve is the per-epoch mean.
inline TrainResult train_encoder(const Vocabulary& vocab, const std::vector<Passage>& corpus,
                                 const std::vector<QueryRecord>& queries, const TrainConfig& cfg) {
    std::unordered_map<std::string, std::size_t> passage_index;
    for (std::size_t i = 0; i < corpus.size(); ++i) passage_index[corpus[i].id] = i;

    std::vector<TokenSequence> query_tokens(queries.size());
    std::vector<std::size_t> gold_of(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (queries[i].gold_ids.empty()) {
            throw std::invalid_argument("train_encoder: query without gold passage: " + queries[i].id);
        }
        auto it = passage_index.find(queries[i].gold_ids.front());
        if (it == passage_index.end()) {
            throw std::invalid_argument("train_encoder: gold id not in corpus: " +
                                        queries[i].gold_ids.front());
        }
        gold_of[i] = it->second;
        query_tokens[i] = encode(vocab, queries[i].text);
        if (query_tokens[i].empty()) {
            throw std::invalid_argument("train_encoder: query encodes to nothing: " + queries[i].id);
        }
    }
    std::vector<TokenSequence> passage_tokens(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) passage_tokens[i] = encode(vocab, corpus[i].text);

    TrainResult result;
    result.params = init_encoder(vocab.size(), cfg.dim, cfg.mode, cfg.seed, cfg.with_projection);
    if (cfg.epochs == 0) return result;
    if (cfg.batch == 0) throw std::invalid_argument("train_encoder: batch must be >= 1");

    EncoderParams& params = result.params;
    Rng rng(derive_seed(cfg.seed, 1));
    std::vector<std::size_t> order(queries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss_sum = 0.0;
        std::size_t batches = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(start + cfg.batch, order.size());
            const auto b = static_cast<Eigen::Index>(stop - start);

            std::vector<detail::ForwardCache> qc(b), pc(b);
            for (Eigen::Index j = 0; j < b; ++j) {
                const std::size_t qi = order[start + j];
                qc[j] = detail::forward(params, query_tokens[qi]);
                pc[j] = detail::forward(params, passage_tokens[gold_of[qi]]);
            }

            Eigen::MatrixXd scores(b, b);
            for (Eigen::Index j = 0; j < b; ++j) {
                for (Eigen::Index k = 0; k < b; ++k) {
                    scores(j, k) = qc[j].out.dot(pc[k].out) / cfg.temperature;
                }
            }
            Eigen::MatrixXd probs(b, b);
            double batch_loss = 0.0;
            for (Eigen::Index j = 0; j < b; ++j) {
                const double m = scores.row(j).maxCoeff();
                Eigen::RowVectorXd e = (scores.row(j).array() - m).exp();
                probs.row(j) = e / e.sum();
                batch_loss += -std::log(std::max(probs(j, j), 1e-300));
            }
            batch_loss /= static_cast<double>(b);
            epoch_loss_sum += batch_loss;
            ++batches;

            Eigen::MatrixXd g_table = Eigen::MatrixXd::Zero(params.vocab_size(), params.dim());
            Eigen::MatrixXd g_weight;
            Eigen::VectorXd g_bias;
            if (params.projection) {
                g_weight = Eigen::MatrixXd::Zero(params.dim(), params.dim());
                g_bias = Eigen::VectorXd::Zero(params.dim());
            }
            const double inv = 1.0 / (static_cast<double>(b) * cfg.temperature);
            for (Eigen::Index j = 0; j < b; ++j) {
                Eigen::VectorXd g_q = Eigen::VectorXd::Zero(params.dim());
                for (Eigen::Index k = 0; k < b; ++k) {
                    const double c = (probs(j, k) - (j == k ? 1.0 : 0.0)) * inv;
                    g_q += c * pc[k].out;
                }
                detail::backward(params, qc[j], g_q, g_table,
                                 params.projection ? &g_weight : nullptr,
                                 params.projection ? &g_bias : nullptr);
            }
            for (Eigen::Index k = 0; k < b; ++k) {
                Eigen::VectorXd g_p = Eigen::VectorXd::Zero(params.dim());
                for (Eigen::Index j = 0; j < b; ++j) {
                    const double c = (probs(j, k) - (j == k ? 1.0 : 0.0)) * inv;
                    g_p += c * qc[j].out;
                }
                detail::backward(params, pc[k], g_p, g_table,
                                 params.projection ? &g_weight : nullptr,
                                 params.projection ? &g_bias : nullptr);
            }

            params.embedding_table -= cfg.lr * g_table;
            if (params.projection) {
                params.projection->weight -= cfg.lr * g_weight;
                params.projection->bias -= cfg.lr * g_bias;
            }
        }
        result.epoch_loss.push_back(epoch_loss_sum / static_cast<double>(batches));
    }
    return result;
}

// --- checkpoint file (little-endian, bit-exact round trip) ----------------

namespace detail {

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void read_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw InternalError("checkpoint: truncated file");
}
inline void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, 8); }
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    read_bytes(in, &v, 8);
    return v;
}
inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            write_bytes(out, &v, 8);
        }
    }
}
inline Eigen::MatrixXd read_matrix(std::istream& in) {
    const auto rows = static_cast<Eigen::Index>(read_u64(in));
    const auto cols = static_cast<Eigen::Index>(read_u64(in));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            double v;
            read_bytes(in, &v, 8);
            m(i, j) = v;
        }
    }
    return m;
}

}  // namespace detail

inline void save_encoder(const EncoderParams& params, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot open for writing: " + path.string());
    const char magic[8] = {'P', 'L', 'E', 'N', 'C', 'K', '0', '1'};
    detail::write_bytes(out, magic, 8);
    detail::write_u64(out, params.mode == SimilarityMode::kCosine ? 0 : 1);
    detail::write_u64(out, params.projection ? 1 : 0);
    detail::write_matrix(out, params.embedding_table);
    if (params.projection) {
        detail::write_matrix(out, params.projection->weight);
        detail::write_matrix(out, params.projection->bias);
    }
    if (!out) throw InternalError("checkpoint write failed: " + path.string());
}

inline EncoderParams load_encoder(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open for reading: " + path.string());
    char magic[8];
    detail::read_bytes(in, magic, 8);
    if (std::memcmp(magic, "PLENCK01", 8) != 0) throw InternalError("checkpoint: bad magic");
    EncoderParams params;
    params.mode = detail::read_u64(in) == 0 ? SimilarityMode::kCosine : SimilarityMode::kDot;
    const bool has_proj = detail::read_u64(in) != 0;
    params.embedding_table = detail::read_matrix(in);
    if (has_proj) {
        Projection proj;
        proj.weight = detail::read_matrix(in);
        proj.bias = detail::read_matrix(in);
        params.projection = std::move(proj);
    }
    return params;
}

}  // namespace poisonlab
