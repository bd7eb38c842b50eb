#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "poisonlab/common.hpp"
#include "poisonlab/tokenizer.hpp"

namespace poisonlab {

// Additively smoothed n-gram model over token ids. Contexts are padded with
// a begin-of-text marker; the next-token support is exactly the vocabulary,
// so per-context probabilities sum to one and additive smoothing keeps every
// probability strictly positive.
class NGramLM {
public:
    static constexpr TokenId kBeginMarker = -1;

    NGramLM() = default;
    NGramLM(int order, double smoothing, std::size_t vocab_size)
        : order_(order), smoothing_(smoothing), vocab_size_(vocab_size) {
        if (order < 1) throw std::invalid_argument("NGramLM: order must be >= 1");
        if (smoothing <= 0.0) throw std::invalid_argument("NGramLM: smoothing must be > 0");
        if (vocab_size == 0) throw std::invalid_argument("NGramLM: empty vocabulary");
    }

    int order() const { return order_; }
    double smoothing() const { return smoothing_; }
    std::size_t vocab_size() const { return vocab_size_; }

    void observe_sequence(const TokenSequence& tokens) {
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            auto& slot = table_[context_at(tokens, i)];
            ++slot.total;
            ++slot.counts[tokens[i]];
        }
    }

    double prob(const std::vector<TokenId>& context, TokenId token) const {
        if (token < 0 || static_cast<std::size_t>(token) >= vocab_size_) {
            throw std::invalid_argument("NGramLM::prob: token id out of range");
        }
        const double v = static_cast<double>(vocab_size_);
        auto it = table_.find(context);
        if (it == table_.end()) return 1.0 / v;
        const auto& slot = it->second;
        auto cit = slot.counts.find(token);
        const double c = cit == slot.counts.end() ? 0.0 : static_cast<double>(cit->second);
        return (c + smoothing_) / (static_cast<double>(slot.total) + smoothing_ * v);
    }

    std::vector<TokenId> context_at(const TokenSequence& tokens, std::size_t position) const {
        std::vector<TokenId> ctx(static_cast<std::size_t>(order_ - 1), kBeginMarker);
        for (int j = 0; j < order_ - 1; ++j) {
            const auto offset = static_cast<long>(position) - (order_ - 1) + j;
            if (offset >= 0) ctx[static_cast<std::size_t>(j)] = tokens[static_cast<std::size_t>(offset)];
        }
        return ctx;
    }

    // Top ceil(fraction * |V|) token ids by next-token probability, ties
    // broken by ascending id. Used to restrict attack candidates to tokens a
    // language model would plausibly emit.
    std::vector<TokenId> top_fraction(const std::vector<TokenId>& context, double fraction) const {
        if (!(fraction > 0.0 && fraction <= 1.0)) {
            throw std::invalid_argument("NGramLM::top_fraction: fraction must be in (0, 1]");
        }
        auto keep = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(vocab_size_)));
        keep = std::max<std::size_t>(keep, 1);
        keep = std::min(keep, vocab_size_);

        std::vector<std::pair<std::int64_t, TokenId>> ranked;  // (-count, id)
        ranked.reserve(vocab_size_);
        auto it = table_.find(context);
        for (std::size_t t = 0; t < vocab_size_; ++t) {
            std::int64_t c = 0;
            if (it != table_.end()) {
                auto cit = it->second.counts.find(static_cast<TokenId>(t));
                if (cit != it->second.counts.end()) c = cit->second;
            }
            ranked.emplace_back(-c, static_cast<TokenId>(t));
        }
        std::sort(ranked.begin(), ranked.end());
        std::vector<TokenId> out;
        out.reserve(keep);
        for (std::size_t i = 0; i < keep; ++i) out.push_back(ranked[i].second);
        return out;
    }

    // Exposed for hand-tally tests.
    std::int64_t count_of(const std::vector<TokenId>& context, TokenId token) const {
        auto it = table_.find(context);
        if (it == table_.end()) return 0;
        auto cit = it->second.counts.find(token);
        return cit == it->second.counts.end() ? 0 : cit->second;
    }

private:
    struct Slot {
        std::int64_t total = 0;
        std::map<TokenId, std::int64_t> counts;
    };

    int order_ = 1;
    double smoothing_ = 0.1;
    std::size_t vocab_size_ = 0;
    std::map<std::vector<TokenId>, Slot> table_;
};

inline NGramLM train_lm(const Vocabulary& vocab, const std::vector<std::string>& texts, int order,
                        double smoothing) {
    NGramLM lm(order, smoothing, vocab.size());
    for (const auto& text : texts) lm.observe_sequence(encode(vocab, text));
    return lm;
}

// Mean negative log-probability of the sequence (natural log).
inline double log_perplexity(const NGramLM& lm, const TokenSequence& tokens) {
    if (tokens.empty()) throw std::invalid_argument("log_perplexity: empty token sequence");
    double nll = 0.0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        nll += -std::log(lm.prob(lm.context_at(tokens, i), tokens[i]));
    }
    return nll / static_cast<double>(tokens.size());
}

inline double perplexity(const NGramLM& lm, const TokenSequence& tokens) {
    return std::exp(log_perplexity(lm, tokens));
}

}  // namespace poisonlab
