#include <catch2/catch_amalgamated.hpp>

#include "fixture.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/ngram_lm.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/tokenizer.hpp"

using namespace poisonlab;

namespace {

// Character-only vocabulary over a..f plus specials; every single letter is
// a standalone word token, which keeps LM examples easy to tally by hand.
Vocabulary letters_vocab() {
    std::vector<std::string> tokens = {Vocabulary::kUnkToken, Vocabulary::kPadToken};
    for (char c : std::string("abcdef")) tokens.push_back(std::string(1, c));
    for (char c : std::string("abcdef")) tokens.push_back(std::string("##") + c);
    return Vocabulary(std::move(tokens));
}

}  // namespace

TEST_CASE("unigram training on uniform single-token texts") {
    const Vocabulary vocab = letters_vocab();
    // One single-letter text per letter: every token equally frequent.
    std::vector<std::string> texts;
    for (char c : std::string("abcdef")) texts.emplace_back(1, c);
    const NGramLM lm = train_lm(vocab, texts, 1, 0.1);

    const auto ctx = lm.context_at({}, 0);
    const TokenId a = vocab.find("a");
    for (char c : std::string("abcdef")) {
        REQUIRE(lm.prob(ctx, vocab.find(std::string(1, c))) == Catch::Approx(lm.prob(ctx, a)));
    }
}

TEST_CASE("next-token probabilities sum to one per context") {
    const auto& fx = testfixture::standard();
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const auto& text = fx.wl.corpus[rng.uniform_index(fx.wl.corpus.size())].text;
        const TokenSequence tokens = encode(fx.vocab, text);
        const std::size_t pos = rng.uniform_index(tokens.size());
        const auto ctx = fx.lm.context_at(tokens, pos);
        double sum = 0.0;
        for (std::size_t t = 0; t < fx.vocab.size(); ++t) {
            sum += fx.lm.prob(ctx, static_cast<TokenId>(t));
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-12);
    }
    // Unseen context falls back to the uniform distribution and still sums to one.
    double sum = 0.0;
    for (std::size_t t = 0; t < fx.vocab.size(); ++t) {
        sum += fx.lm.prob({9999, 9998}, static_cast<TokenId>(t));
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("bigram counts match a hand tally") {
    const Vocabulary vocab = letters_vocab();
    // Three texts: "a b a", "a b", "b a". Bigram transitions with begin marker:
    //   (^,a):2 (^,b):1 (a,b):2 (b,a):2
    const NGramLM lm = train_lm(vocab, {"a b a", "a b", "b a"}, 2, 0.5);
    const TokenId a = vocab.find("a");
    const TokenId b = vocab.find("b");
    const std::vector<TokenId> begin = {NGramLM::kBeginMarker};

    REQUIRE(lm.count_of(begin, a) == 2);
    REQUIRE(lm.count_of(begin, b) == 1);
    REQUIRE(lm.count_of({a}, b) == 2);
    REQUIRE(lm.count_of({b}, a) == 2);
    REQUIRE(lm.count_of({a}, a) == 0);

    // Smoothed probability spot check: P(b | a) = (2 + 0.5) / (2 + 0.5 * V).
    const double v = static_cast<double>(vocab.size());
    REQUIRE(lm.prob({a}, b) == Catch::Approx((2.0 + 0.5) / (2.0 + 0.5 * v)));
}

TEST_CASE("perplexity") {
    const Vocabulary vocab = letters_vocab();
    std::vector<std::string> texts;
    for (char c : std::string("abcdef")) texts.emplace_back(1, c);
    const NGramLM uniform = train_lm(vocab, texts, 1, 0.1);

    SECTION("uniform unigram perplexity equals the vocabulary size") {
        // The smoothed model with no observations assigns exactly 1/|V|
        // everywhere, so perplexity of any sequence is |V|.
        const NGramLM flat(1, 0.5, vocab.size());
        const TokenSequence seq = encode(vocab, "a b c a");
        REQUIRE(perplexity(flat, seq) ==
                Catch::Approx(static_cast<double>(vocab.size())).epsilon(1e-12));
    }
    SECTION("empty sequence is rejected") {
        REQUIRE_THROWS_AS(perplexity(uniform, {}), std::invalid_argument);
    }
    SECTION("order-1 perplexity is invariant to duplicating the sequence") {
        const TokenSequence once = encode(vocab, "a b c");
        TokenSequence twice = once;
        twice.insert(twice.end(), once.begin(), once.end());
        REQUIRE(perplexity(uniform, once) == Catch::Approx(perplexity(uniform, twice)));
    }
    SECTION("training sentences score at most a random sequence of equal length") {
        const auto& fx = testfixture::standard();
        Rng rng(8);
        for (int trial = 0; trial < 10; ++trial) {
            const auto& text = fx.wl.corpus[rng.uniform_index(fx.wl.corpus.size())].text;
            const TokenSequence train_seq = encode(fx.vocab, text);
            TokenSequence random_seq;
            for (std::size_t i = 0; i < train_seq.size(); ++i) {
                TokenId t;
                do {
                    t = static_cast<TokenId>(rng.uniform_index(fx.vocab.size()));
                } while (fx.vocab.is_special(t));
                random_seq.push_back(t);
            }
            REQUIRE(perplexity(fx.lm, train_seq) <= perplexity(fx.lm, random_seq));
        }
    }
    SECTION("perplexity is finite and at least one") {
        const auto& fx = testfixture::standard();
        const TokenSequence seq = encode(fx.vocab, fx.wl.corpus[0].text);
        const double p = perplexity(fx.lm, seq);
        REQUIRE(std::isfinite(p));
        REQUIRE(p >= 1.0);
    }
}

TEST_CASE("top_fraction candidate sets") {
    const Vocabulary vocab = letters_vocab();
    const NGramLM lm = train_lm(vocab, {"a b", "a b", "a c"}, 2, 0.1);
    const TokenId a = vocab.find("a");

    // After "a": b seen twice, c once; everything else unseen.
    const auto top2 = lm.top_fraction({a}, 2.0 / static_cast<double>(vocab.size()));
    REQUIRE(top2.size() == 2);
    REQUIRE(top2[0] == vocab.find("b"));
    REQUIRE(top2[1] == vocab.find("c"));

    const auto all = lm.top_fraction({a}, 1.0);
    REQUIRE(all.size() == vocab.size());
}

TEST_CASE("zero_fp_threshold and apply_filter") {
    SECTION("threshold is the benign maximum") {
        REQUIRE(zero_fp_threshold({1.2, 0.8, 3.0}) == 3.0);
        REQUIRE(zero_fp_threshold({2.5, 2.5, 2.5}) == 2.5);
        REQUIRE_THROWS_AS(zero_fp_threshold({}), std::invalid_argument);
    }
    SECTION("scores equal to the threshold survive") {
        const auto outcome = apply_filter({{"x", 3.0}, {"y", 3.0001}, {"z", 0.5}}, 3.0);
        REQUIRE(outcome.survivor_ids == std::vector<std::string>{"x", "z"});
        REQUIRE(outcome.filtered_ids == std::vector<std::string>{"y"});
    }
    SECTION("empty candidate list yields an empty report") {
        const auto outcome = apply_filter({}, 1.0);
        REQUIRE(outcome.survivor_ids.empty());
        REQUIRE(outcome.filtered_ids.empty());
    }
    SECTION("mixed list agrees with a hand partition") {
        const std::vector<std::pair<std::string, double>> candidates = {
            {"a", 0.1}, {"b", 9.0}, {"c", 4.999}, {"d", 5.0}, {"e", 5.001}};
        const auto outcome = apply_filter(candidates, 5.0);
        REQUIRE(outcome.survivor_ids == std::vector<std::string>{"a", "c", "d"});
        REQUIRE(outcome.filtered_ids == std::vector<std::string>{"b", "e"});
    }
    SECTION("threshold construction never filters its own benign set") {
        const auto& fx = testfixture::standard();
        std::vector<double> scores;
        std::vector<std::pair<std::string, double>> candidates;
        for (const auto& p : fx.wl.corpus) {
            const double s = perplexity(fx.lm, encode(fx.vocab, p.text));
            scores.push_back(s);
            candidates.emplace_back(p.id, s);
        }
        const double threshold = zero_fp_threshold(scores);
        const auto outcome = apply_filter(candidates, threshold);
        REQUIRE(outcome.filtered_ids.empty());
        REQUIRE(outcome.survivor_ids.size() == fx.wl.corpus.size());
    }
}

TEST_CASE("lm construction guards") {
    REQUIRE_THROWS_AS(NGramLM(0, 0.1, 10), std::invalid_argument);
    REQUIRE_THROWS_AS(NGramLM(2, 0.0, 10), std::invalid_argument);
    REQUIRE_THROWS_AS(NGramLM(2, 0.1, 0), std::invalid_argument);
}
