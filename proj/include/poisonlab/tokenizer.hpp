#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "poisonlab/common.hpp"
#include "poisonlab/io.hpp"

namespace poisonlab {

using TokenId = int;
using TokenSequence = std::vector<TokenId>;

// Subword vocabulary with wordpiece-style continuation pieces ("##x" glues
// onto the previous piece of the same word). Encoding is greedy longest
// match left-to-right inside each whitespace-separated word, which makes it
// possible for hand-built token lists to be irreversible: decode then
// re-encode may produce a different (canonical) list.
class Vocabulary {
public:
    static constexpr const char* kContinuationMarker = "##";
    static constexpr const char* kUnkToken = "[unk]";
    static constexpr const char* kPadToken = "[pad]";

    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> ordered_tokens) : tokens_(std::move(ordered_tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
            if (!inserted) throw std::invalid_argument("duplicate token string: " + tokens_[i]);
        }
        unk_id_ = find(kUnkToken);
        pad_id_ = find(kPadToken);
        if (unk_id_ < 0 || pad_id_ < 0) {
            throw std::invalid_argument("vocabulary must contain the reserved special tokens");
        }
    }

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token_string(TokenId id) const {
        check_id(id);
        return tokens_[static_cast<std::size_t>(id)];
    }

    TokenId unk_id() const { return unk_id_; }
    TokenId pad_id() const { return pad_id_; }

    bool is_special(TokenId id) const { return id == unk_id_ || id == pad_id_; }
    bool is_continuation(TokenId id) const {
        const std::string& s = token_string(id);
        return s.size() > 2 && s.compare(0, 2, kContinuationMarker) == 0;
    }
    bool is_word_start(TokenId id) const { return !is_special(id) && !is_continuation(id); }

    // -1 when absent.
    TokenId find(std::string_view s) const {
        auto it = index_.find(std::string(s));
        return it == index_.end() ? -1 : it->second;
    }

    bool valid_id(TokenId id) const {
        return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
    }
    void check_id(TokenId id) const {
        if (!valid_id(id)) throw std::invalid_argument("token id out of range: " + std::to_string(id));
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId unk_id_ = -1;
    TokenId pad_id_ = -1;
};

namespace detail {

inline std::string to_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

}  // namespace detail

// Builds: specials, then every corpus character as word-start and
// continuation piece, then the most frequent adjacent-piece merges until
// target_size is reached. Merge counting runs over the corpus word
// segmentations, so every produced token occurs in the corpus.
inline Vocabulary build_vocab(const std::vector<std::string>& corpus_texts, std::size_t target_size) {
    std::map<std::string, std::int64_t> word_freq;
    std::map<char, bool> alphabet;
    for (const auto& text : corpus_texts) {
        for (auto& w : detail::split_words(detail::to_lower(text))) {
            ++word_freq[w];
            for (char c : w) alphabet[c] = true;
        }
    }

    std::vector<std::string> tokens = {Vocabulary::kUnkToken, Vocabulary::kPadToken};
    for (auto& [c, _] : alphabet) tokens.push_back(std::string(1, c));
    for (auto& [c, _] : alphabet) tokens.push_back(std::string(Vocabulary::kContinuationMarker) + c);

    if (target_size < tokens.size()) {
        throw std::invalid_argument("build_vocab: target_size " + std::to_string(target_size) +
                                    " below baseline vocabulary size " + std::to_string(tokens.size()));
    }

    std::map<std::string, bool> present;
    for (auto& t : tokens) present[t] = true;

    // Word segmentations start at character level: first char plain, rest
    // as continuation pieces.
    std::vector<std::pair<std::vector<std::string>, std::int64_t>> segs;
    segs.reserve(word_freq.size());
    for (auto& [w, n] : word_freq) {
        std::vector<std::string> pieces;
        for (std::size_t i = 0; i < w.size(); ++i) {
            pieces.push_back(i == 0 ? std::string(1, w[i])
                                    : std::string(Vocabulary::kContinuationMarker) + w[i]);
        }
        segs.emplace_back(std::move(pieces), n);
    }

    auto merge_pieces = [](const std::string& a, const std::string& b) {
        // b is always a continuation piece; the merge keeps a's marker.
        return a + b.substr(2);
    };

    while (tokens.size() < target_size) {
        std::map<std::pair<std::string, std::string>, std::int64_t> pair_freq;
        for (auto& [pieces, n] : segs) {
            for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
                pair_freq[{pieces[i], pieces[i + 1]}] += n;
            }
        }
        std::pair<std::string, std::string> best;
        std::int64_t best_count = 0;
        for (auto& [pr, n] : pair_freq) {
            if (present.count(merge_pieces(pr.first, pr.second))) continue;
            // Ties resolve to the lexicographically smallest pair (map order).
            if (n > best_count) {
                best = pr;
                best_count = n;
            }
        }
        if (best_count == 0) break;  // nothing left to merge

        const std::string merged = merge_pieces(best.first, best.second);
        tokens.push_back(merged);
        present[merged] = true;
        for (auto& [pieces, n] : segs) {
            std::vector<std::string> out;
            out.reserve(pieces.size());
            for (std::size_t i = 0; i < pieces.size(); ++i) {
                if (i + 1 < pieces.size() && pieces[i] == best.first && pieces[i + 1] == best.second) {
                    out.push_back(merged);
                    ++i;
                } else {
                    out.push_back(pieces[i]);
                }
            }
            pieces = std::move(out);
        }
    }

    return Vocabulary(std::move(tokens));
}

// Greedy longest-match encoding. Total: characters outside the vocabulary
// map to the unknown id and scanning resumes at the next character.
inline TokenSequence encode(const Vocabulary& vocab, std::string_view text) {
    TokenSequence out;
    for (const auto& word : detail::split_words(detail::to_lower(text))) {
        std::size_t pos = 0;
        while (pos < word.size()) {
            TokenId match = -1;
            std::size_t match_len = 0;
            for (std::size_t len = word.size() - pos; len >= 1; --len) {
                std::string piece = pos == 0 ? word.substr(pos, len)
                                             : std::string(Vocabulary::kContinuationMarker) +
                                                   word.substr(pos, len);
                const TokenId id = vocab.find(piece);
                if (id >= 0 && !vocab.is_special(id)) {
                    match = id;
                    match_len = len;
                    break;
                }
            }
            if (match < 0) {
                out.push_back(vocab.unk_id());
                pos += 1;
            } else {
                out.push_back(match);
                pos += match_len;
            }
        }
    }
    return out;
}

// Inverse rendering: word-start tokens begin a new space-separated word,
// continuation pieces are glued on. decode(encode(t)) reproduces canonical
// (lowercase, single-spaced) text.
inline std::string decode(const Vocabulary& vocab, const TokenSequence& tokens) {
    std::string out;
    for (TokenId id : tokens) {
        vocab.check_id(id);
        const std::string& s = vocab.token_string(id);
        if (vocab.is_continuation(id)) {
            out += s.substr(2);
        } else {
            if (!out.empty()) out += ' ';
            out += s;
        }
    }
    return out;
}

inline bool is_reversible(const Vocabulary& vocab, const TokenSequence& tokens) {
    return encode(vocab, decode(vocab, tokens)) == tokens;
}

// The ordered token list is the on-disk contract; ids are positions.
inline void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["continuation_marker"] = Vocabulary::kContinuationMarker;
    j["tokens"] = vocab.tokens();
    write_text_file(path, j.dump(2) + "\n");
}

inline Vocabulary load_vocab(const std::filesystem::path& path) {
    auto j = nlohmann::json::parse(read_text_file(path));
    if (!j.contains("tokens") || !j["tokens"].is_array()) {
        throw ConfigError("tokens", "missing or not an array in " + path.string());
    }
    return Vocabulary(j["tokens"].get<std::vector<std::string>>());
}

}  // namespace poisonlab
