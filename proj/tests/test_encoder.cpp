#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "poisonlab/corpus.hpp"
#include "poisonlab/encoder.hpp"
#include "poisonlab/index.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/tokenizer.hpp"

using namespace poisonlab;

namespace {

struct Fixture {
    SyntheticWorkload wl;
    Vocabulary vocab;

    Fixture() : wl(generate_synthetic_corpus(3, 12, 8, 10, 21)) {
        std::vector<std::string> texts;
        for (const auto& p : wl.corpus) texts.push_back(p.text);
        vocab = build_vocab(texts, 260);
    }
};

// Central finite differences through the row-matrix formulation, so a single
// position can be perturbed even when token ids repeat.
Eigen::MatrixXd fd_gradient(const EncoderParams& params, const Eigen::VectorXd& target,
                            const TokenSequence& tokens, double step) {
    Eigen::MatrixXd rows = gather_rows(params, tokens);
    Eigen::MatrixXd grad(rows.rows(), rows.cols());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < rows.cols(); ++j) {
            const double saved = rows(i, j);
            rows(i, j) = saved + step;
            const double hi = target.dot(embed_rows(params, rows));
            rows(i, j) = saved - step;
            const double lo = target.dot(embed_rows(params, rows));
            rows(i, j) = saved;
            grad(i, j) = (hi - lo) / (2.0 * step);
        }
    }
    return grad;
}

}  // namespace

TEST_CASE("embed basics") {
    SECTION("single token in dot mode returns the embedding row") {
        auto params = init_encoder(6, 4, SimilarityMode::kDot, 1);
        const Eigen::VectorXd e = embed(params, {3});
        REQUIRE((e - params.embedding_table.row(3).transpose()).norm() == 0.0);
    }
    SECTION("mean pooling of two rows") {
        auto params = init_encoder(4, 2, SimilarityMode::kDot, 1);
        params.embedding_table.row(0) << 2.0, 0.0;
        params.embedding_table.row(1) << 0.0, 2.0;
        const Eigen::VectorXd e = embed(params, {0, 1});
        REQUIRE(e(0) == Catch::Approx(1.0));
        REQUIRE(e(1) == Catch::Approx(1.0));
    }
    SECTION("cosine mode output is unit norm") {
        auto params = init_encoder(30, 16, SimilarityMode::kCosine, 5);
        Rng rng(2);
        for (int trial = 0; trial < 20; ++trial) {
            TokenSequence tokens;
            const std::size_t len = 1 + rng.uniform_index(12);
            for (std::size_t i = 0; i < len; ++i) {
                tokens.push_back(static_cast<TokenId>(rng.uniform_index(30)));
            }
            REQUIRE(std::abs(embed(params, tokens).norm() - 1.0) < 1e-9);
        }
    }
    SECTION("empty input is rejected") {
        auto params = init_encoder(4, 2, SimilarityMode::kDot, 1);
        REQUIRE_THROWS_AS(embed(params, {}), std::invalid_argument);
    }
    SECTION("repeated calls are byte-identical") {
        auto params = init_encoder(20, 8, SimilarityMode::kCosine, 3, true);
        const Eigen::VectorXd a = embed(params, {1, 2, 3});
        const Eigen::VectorXd b = embed(params, {1, 2, 3});
        REQUIRE(a == b);
    }
}

TEST_CASE("similarity") {
    auto params = init_encoder(4, 2, SimilarityMode::kCosine, 1);
    Eigen::VectorXd a(2), b(2);

    a << 1.0, 0.0;
    REQUIRE(similarity(params, a, a) == 1.0);

    b << 0.0, 1.0;
    REQUIRE(similarity(params, a, b) == 0.0);

    auto dot_params = init_encoder(4, 2, SimilarityMode::kDot, 1);
    a << 3.0, 0.0;
    b << 2.0, 0.0;
    REQUIRE(similarity(dot_params, a, b) == 6.0);

    Eigen::VectorXd c(3);
    REQUIRE_THROWS_AS(similarity(params, a, c), std::invalid_argument);
}

TEST_CASE("grad_similarity closed forms") {
    SECTION("dot mode without projection: every row is target / len") {
        auto params = init_encoder(8, 3, SimilarityMode::kDot, 2);
        Eigen::VectorXd target(3);
        target << 0.5, -1.0, 2.0;
        const TokenSequence tokens = {1, 4, 4, 7};
        const Eigen::MatrixXd grad = grad_similarity(params, target, tokens);
        REQUIRE(grad.rows() == 4);
        for (Eigen::Index i = 0; i < grad.rows(); ++i) {
            REQUIRE((grad.row(i).transpose() - target / 4.0).norm() < 1e-15);
        }
    }
    SECTION("zero target in dot mode gives the zero matrix") {
        auto params = init_encoder(8, 3, SimilarityMode::kDot, 2);
        const Eigen::MatrixXd grad =
            grad_similarity(params, Eigen::VectorXd::Zero(3), {0, 1, 2});
        REQUIRE(grad.norm() == 0.0);
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    // 20 random cases per mode, projection exercised on odd trials.
    for (const auto mode : {SimilarityMode::kCosine, SimilarityMode::kDot}) {
        Rng rng(mode == SimilarityMode::kCosine ? 11 : 12);
        for (int trial = 0; trial < 20; ++trial) {
            auto params = init_encoder(24, 6, mode, 100 + static_cast<std::uint64_t>(trial),
                                       trial % 2 == 1);
            TokenSequence tokens;
            const std::size_t len = 1 + rng.uniform_index(10);
            for (std::size_t i = 0; i < len; ++i) {
                tokens.push_back(static_cast<TokenId>(rng.uniform_index(24)));
            }
            Eigen::VectorXd target(6);
            for (int j = 0; j < 6; ++j) target(j) = rng.normal();

            const Eigen::MatrixXd analytic = grad_similarity(params, target, tokens);
            const Eigen::MatrixXd numeric = fd_gradient(params, target, tokens, 1e-5);
            const double rel = (analytic - numeric).cwiseAbs().maxCoeff() /
                               std::max(1e-12, numeric.cwiseAbs().maxCoeff());
            REQUIRE(rel < 1e-4);
        }
    }
}

TEST_CASE("train_encoder basics") {
    Fixture fx;

    SECTION("zero epochs returns the seeded initialization unchanged") {
        TrainConfig cfg;
        cfg.dim = 16;
        cfg.epochs = 0;
        cfg.seed = 9;
        const auto trained = train_encoder(fx.vocab, fx.wl.corpus, fx.wl.queries, cfg);
        const auto fresh = init_encoder(fx.vocab.size(), 16, cfg.mode, 9);
        REQUIRE(trained.params.embedding_table == fresh.embedding_table);
        REQUIRE(trained.epoch_loss.empty());
    }

    SECTION("missing gold passage is rejected") {
        auto queries = fx.wl.queries;
        queries[0].gold_ids = {"p-does-not-exist"};
        REQUIRE_THROWS_AS(train_encoder(fx.vocab, fx.wl.corpus, queries, TrainConfig{}),
                          std::invalid_argument);
        queries[0].gold_ids.clear();
        REQUIRE_THROWS_AS(train_encoder(fx.vocab, fx.wl.corpus, queries, TrainConfig{}),
                          std::invalid_argument);
    }

    SECTION("training reduces the loss and is deterministic under seed") {
        TrainConfig cfg;
        cfg.dim = 24;
        cfg.epochs = 12;
        cfg.batch = 8;
        cfg.lr = 0.5;
        cfg.seed = 4;
        const auto a = train_encoder(fx.vocab, fx.wl.corpus, fx.wl.queries, cfg);
        REQUIRE(a.epoch_loss.size() == 12);
        REQUIRE(a.epoch_loss.back() <= a.epoch_loss.front());

        const auto b = train_encoder(fx.vocab, fx.wl.corpus, fx.wl.queries, cfg);
        REQUIRE(a.params.embedding_table == b.params.embedding_table);
        REQUIRE(a.epoch_loss == b.epoch_loss);
    }
}

TEST_CASE("trained encoder retrieves gold passages") {
    const auto wl = generate_synthetic_corpus(4, 50, 20, 16, 1);
    std::vector<std::string> texts;
    for (const auto& p : wl.corpus) texts.push_back(p.text);
    const Vocabulary vocab = build_vocab(texts, 600);

    // Train on a 50% split, evaluate recall on the held-out half of each
    // concept pooled together.
    std::vector<QueryRecord> train_split, eval_split;
    for (const auto& name : wl.concept_names) {
        const auto split = split_concept_workload(wl.queries, name, 0.5, 77);
        train_split.insert(train_split.end(), split.attack_queries.begin(),
                           split.attack_queries.end());
        eval_split.insert(eval_split.end(), split.heldout_queries.begin(),
                          split.heldout_queries.end());
    }

    TrainConfig cfg;
    cfg.dim = 32;
    cfg.mode = SimilarityMode::kCosine;
    cfg.epochs = 30;
    cfg.batch = 16;
    cfg.lr = 0.5;
    cfg.temperature = 0.1;
    cfg.seed = 13;
    const auto trained = train_encoder(vocab, wl.corpus, train_split, cfg);

    const auto index = build_index(trained.params, vocab, wl.corpus);
    REQUIRE(gold_recall_at_k(index, trained.params, vocab, eval_split, 10) >= 0.8);
}

TEST_CASE("checkpoint round trip is bit exact") {
    auto params = init_encoder(40, 12, SimilarityMode::kDot, 31, true);
    const auto path = std::filesystem::temp_directory_path() / "poisonlab_encoder_test.ckpt";
    save_encoder(params, path);
    const auto loaded = load_encoder(path);

    REQUIRE(loaded.mode == params.mode);
    REQUIRE(loaded.embedding_table == params.embedding_table);
    REQUIRE(loaded.projection.has_value());
    REQUIRE(loaded.projection->weight == params.projection->weight);
    REQUIRE(loaded.projection->bias == params.projection->bias);

    // Saving the loaded params reproduces the file byte for byte.
    const auto path2 = std::filesystem::temp_directory_path() / "poisonlab_encoder_test2.ckpt";
    save_encoder(loaded, path2);
    REQUIRE(read_text_file(path) == read_text_file(path2));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("untrained encoder is isotropic") {
    const auto wl = generate_synthetic_corpus(4, 30, 10, 12, 19);
    std::vector<std::string> texts;
    for (const auto& p : wl.corpus) texts.push_back(p.text);
    const Vocabulary vocab = build_vocab(texts, 400);
    const auto params = init_encoder(vocab.size(), 64, SimilarityMode::kCosine, 77);

    Rng rng(5);
    double sum = 0.0;
    const int n_pairs = 1000;
    for (int i = 0; i < n_pairs; ++i) {
        const std::size_t a = rng.uniform_index(texts.size());
        std::size_t b = rng.uniform_index(texts.size() - 1);
        if (b >= a) ++b;
        sum += embed_text(params, vocab, texts[a]).dot(embed_text(params, vocab, texts[b]));
    }
    REQUIRE(std::abs(sum / n_pairs) < 3.0 / std::sqrt(64.0));
}
