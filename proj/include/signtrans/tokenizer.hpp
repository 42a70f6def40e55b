// Tokenization schemes: word, character, byte-pair encoding, WordPiece.
//
// BPE operates on Unicode code points, never bytes. The end-of-word marker
// "</w>" is attached to each word's final symbol before merging, which keeps
// merges from crossing word boundaries and makes decoding exact. WordPiece is
// encode-only against a supplied vocabulary (greedy longest match with "##"
// continuation pieces).
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "signtrans/rng.hpp"
#include "signtrans/utf8.hpp"

namespace signtrans {

using TokenSeq = std::vector<std::string>;

enum class TokenizerKind { word, character, bpe, wordpiece };

inline std::string to_string(TokenizerKind k) {
    switch (k) {
        case TokenizerKind::word: return "word";
        case TokenizerKind::character: return "char";
        case TokenizerKind::bpe: return "bpe";
        case TokenizerKind::wordpiece: return "wordpiece";
    }
    return "?";
}

inline TokenizerKind tokenizer_kind_from_string(const std::string& s) {
    if (s == "word") return TokenizerKind::word;
    if (s == "char") return TokenizerKind::character;
    if (s == "bpe") return TokenizerKind::bpe;
    if (s == "wordpiece") return TokenizerKind::wordpiece;
    throw std::invalid_argument("unknown tokenizer kind: '" + s + "'");
}

struct TokenizerModel {
    TokenizerKind kind = TokenizerKind::word;
    // bpe: learned merge rules in training order.
    std::vector<std::pair<std::string, std::string>> merges;
    // bpe: base symbols + merge products, informational. wordpiece: the match
    // vocabulary, "##"-prefixed entries are continuation pieces.
    std::vector<std::string> vocab;
    std::string end_of_word = "</w>";
    std::string space_token = "\xE2\x90\xA3";  // U+2423 open box
    std::string continuation = "##";
    std::string unk_token = "<unk>";
};

inline TokenSeq tokenize_word(const std::string& text) {
    TokenSeq out;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// One token per code point; spaces become an explicit space token so the
// decode side can restore them.
inline TokenSeq tokenize_char(const std::string& text, const TokenizerModel& model = {}) {
    TokenSeq out;
    for (auto& cp : utf8::split_codepoints(text)) {
        out.push_back(cp == " " ? model.space_token : cp);
    }
    return out;
}

namespace detail {

// Word turned into its initial BPE symbol sequence: code points, with the
// end-of-word marker glued onto the last one.
inline std::vector<std::string> bpe_word_symbols(const std::string& word,
                                                 const std::string& marker) {
    std::vector<std::string> syms = utf8::split_codepoints(word);
    if (!syms.empty()) syms.back() += marker;
    return syms;
}

using SymbolPair = std::pair<std::string, std::string>;

// Applies one merge rule to a symbol sequence, left to right, non-overlapping.
inline bool apply_merge(std::vector<std::string>& syms, const SymbolPair& pair) {
    bool changed = false;
    std::vector<std::string> out;
    out.reserve(syms.size());
    size_t i = 0;
    while (i < syms.size()) {
        if (i + 1 < syms.size() && syms[i] == pair.first && syms[i + 1] == pair.second) {
            out.push_back(pair.first + pair.second);
            i += 2;
            changed = true;
        } else {
            out.push_back(syms[i]);
            ++i;
        }
    }
    if (changed) syms = std::move(out);
    return changed;
}

}  // namespace detail

// Learns BPE merge rules from a word-level corpus. Every adjacent index pair
// counts (so "aaa" contributes (a,a) twice), weighted by word frequency. Ties
// break toward the lexicographically smaller pair. Stops when the vocabulary
// (base symbols + merge products) reaches vocab_size or no pair occurs at
// least twice. Pair counts are kept incrementally; only words touched by a
// merge are re-tallied.
inline TokenizerModel bpe_train(const std::vector<TokenSeq>& corpus, size_t vocab_size) {
    // Collapse the corpus into unique words with frequencies. Deterministic
    // order via std::map.
    std::map<std::string, int64_t> word_freq;
    for (const auto& seq : corpus) {
        for (const auto& w : seq) {
            if (!w.empty()) ++word_freq[w];
        }
    }

    TokenizerModel model;
    model.kind = TokenizerKind::bpe;

    struct Word {
        std::vector<std::string> symbols;
        int64_t freq;
    };
    std::vector<Word> words;
    words.reserve(word_freq.size());
    std::map<std::string, int64_t> base_symbols;
    for (const auto& [w, f] : word_freq) {
        Word entry{detail::bpe_word_symbols(w, model.end_of_word), f};
        for (const auto& s : entry.symbols) base_symbols[s] += f;
        words.push_back(std::move(entry));
    }

    if (vocab_size < base_symbols.size()) {
        throw std::invalid_argument(
            "bpe_train: vocab_size " + std::to_string(vocab_size) + " is below the " +
            std::to_string(base_symbols.size()) + " distinct base symbols");
    }

    std::map<detail::SymbolPair, int64_t> pair_counts;
    auto tally = [&](const std::vector<std::string>& syms, int64_t delta) {
        for (size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = pair_counts.find({syms[i], syms[i + 1]});
            if (it != pair_counts.end()) {
                it->second += delta;
                if (it->second == 0) pair_counts.erase(it);
            } else {
                pair_counts.emplace(detail::SymbolPair{syms[i], syms[i + 1]}, delta);
            }
        }
    };
    for (const auto& w : words) tally(w.symbols, w.freq);

    size_t current_vocab = base_symbols.size();
    while (current_vocab < vocab_size) {
        const detail::SymbolPair* best = nullptr;
        int64_t best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count || (count == best_count && best && pair < *best)) {
                best = &pair;
                best_count = count;
            }
        }
        if (best_count < 2) break;

        detail::SymbolPair merge = *best;
        for (auto& w : words) {
            std::vector<std::string> before = w.symbols;
            if (detail::apply_merge(w.symbols, merge)) {
                tally(before, -w.freq);
                tally(w.symbols, w.freq);
            }
        }
        model.merges.push_back(merge);
        ++current_vocab;
    }

    for (const auto& [s, f] : base_symbols) model.vocab.push_back(s);
    for (const auto& [l, r] : model.merges) model.vocab.push_back(l + r);
    return model;
}

// Splits each word to code points + end-of-word marker, then applies the
// learned merges in training order. Symbols never seen in training pass
// through as their own tokens.
inline TokenSeq bpe_encode(const TokenizerModel& model, const std::string& text) {
    if (model.kind != TokenizerKind::bpe) {
        throw std::invalid_argument("bpe_encode: model kind is not bpe");
    }
    TokenSeq out;
    for (const auto& word : tokenize_word(text)) {
        auto syms = detail::bpe_word_symbols(word, model.end_of_word);
        for (const auto& merge : model.merges) detail::apply_merge(syms, merge);
        out.insert(out.end(), syms.begin(), syms.end());
    }
    return out;
}

// Greedy longest match against the vocabulary, per word. Non-initial pieces
// carry the continuation marker. A word that cannot be matched at some
// position collapses to a single UNK token.
inline TokenSeq wordpiece_encode(const TokenizerModel& model, const std::string& text) {
    if (model.kind != TokenizerKind::wordpiece) {
        throw std::invalid_argument("wordpiece_encode: model kind is not wordpiece");
    }
    std::unordered_set<std::string> vocab(model.vocab.begin(), model.vocab.end());
    TokenSeq out;
    for (const auto& word : tokenize_word(text)) {
        auto cps = utf8::split_codepoints(word);
        TokenSeq pieces;
        size_t start = 0;
        bool ok = true;
        while (start < cps.size()) {
            size_t end = cps.size();
            std::string found;
            while (end > start) {
                std::string piece;
                for (size_t i = start; i < end; ++i) piece += cps[i];
                if (start > 0) piece = model.continuation + piece;
                if (vocab.count(piece)) {
                    found = piece;
                    break;
                }
                --end;
            }
            if (found.empty()) {
                ok = false;
                break;
            }
            pieces.push_back(found);
            start = end;
        }
        if (ok && !cps.empty()) {
            out.insert(out.end(), pieces.begin(), pieces.end());
        } else if (!cps.empty()) {
            out.push_back(model.unk_token);
        }
    }
    return out;
}

inline TokenSeq encode(const TokenizerModel& model, const std::string& text) {
    switch (model.kind) {
        case TokenizerKind::word: return tokenize_word(text);
        case TokenizerKind::character: return tokenize_char(text, model);
        case TokenizerKind::bpe: return bpe_encode(model, text);
        case TokenizerKind::wordpiece: return wordpiece_encode(model, text);
    }
    return {};
}

// Exact inverse of encode for word/char/bpe on whitespace-normalized input.
// WordPiece joins "##" pieces; UNK'd words are not recoverable.
inline std::string detokenize(const TokenizerModel& model, const TokenSeq& tokens) {
    std::string out;
    switch (model.kind) {
        case TokenizerKind::word:
            for (size_t i = 0; i < tokens.size(); ++i) {
                if (i) out += ' ';
                out += tokens[i];
            }
            break;
        case TokenizerKind::character:
            for (const auto& t : tokens) out += (t == model.space_token) ? " " : t;
            break;
        case TokenizerKind::bpe: {
            const std::string& m = model.end_of_word;
            std::vector<std::string> words;
            std::string cur;
            for (const auto& t : tokens) {
                if (t.size() >= m.size() && t.compare(t.size() - m.size(), m.size(), m) == 0) {
                    cur += t.substr(0, t.size() - m.size());
                    words.push_back(cur);
                    cur.clear();
                } else {
                    cur += t;
                }
            }
            if (!cur.empty()) words.push_back(cur);
            for (size_t i = 0; i < words.size(); ++i) {
                if (i) out += ' ';
                out += words[i];
            }
            break;
        }
        case TokenizerKind::wordpiece: {
            std::vector<std::string> words;
            for (const auto& t : tokens) {
                if (t.size() >= model.continuation.size() &&
                    t.compare(0, model.continuation.size(), model.continuation) == 0 &&
                    !words.empty()) {
                    words.back() += t.substr(model.continuation.size());
                } else {
                    words.push_back(t);
                }
            }
            for (size_t i = 0; i < words.size(); ++i) {
                if (i) out += ' ';
                out += words[i];
            }
            break;
        }
    }
    return out;
}

inline nlohmann::json tokenizer_to_json(const TokenizerModel& model) {
    nlohmann::json j;
    j["kind"] = to_string(model.kind);
    j["merges"] = nlohmann::json::array();
    for (const auto& [l, r] : model.merges) j["merges"].push_back({l, r});
    j["vocab"] = model.vocab;
    j["markers"] = {{"end_of_word", model.end_of_word},
                    {"space", model.space_token},
                    {"continuation", model.continuation},
                    {"unk", model.unk_token}};
    return j;
}

inline TokenizerModel tokenizer_from_json(const nlohmann::json& j) {
    TokenizerModel model;
    model.kind = tokenizer_kind_from_string(j.at("kind").get<std::string>());
    for (const auto& pair : j.at("merges")) {
        model.merges.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    }
    model.vocab = j.at("vocab").get<std::vector<std::string>>();
    const auto& markers = j.at("markers");
    model.end_of_word = markers.at("end_of_word").get<std::string>();
    model.space_token = markers.at("space").get<std::string>();
    model.continuation = markers.at("continuation").get<std::string>();
    model.unk_token = markers.at("unk").get<std::string>();
    return model;
}

inline void save_tokenizer(const TokenizerModel& model, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write tokenizer file: " + path);
    f << tokenizer_to_json(model).dump(2) << '\n';
}

inline TokenizerModel load_tokenizer(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open tokenizer file: " + path);
    nlohmann::json j;
    f >> j;
    return tokenizer_from_json(j);
}

// Stable content hash used to detect stale tokenizer/checkpoint pairings.
inline uint64_t tokenizer_hash(const TokenizerModel& model) {
    return fnv1a64(tokenizer_to_json(model).dump());
}

}  // namespace signtrans
