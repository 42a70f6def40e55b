// Synthetic desk-scale corpus: German-like source sentences over a small
// closed vocabulary, rule-mapped to uppercase glosses (function words drop
// out, some glosses carry a variant digit), Greek-letter pseudo-HamNoSys
// segments and one hand shape per gloss. The mapping is deterministic per
// word, so the translation tasks are exactly learnable, and generation is a
// pure function of the seed.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "signtrans/corpus.hpp"
#include "signtrans/rng.hpp"

namespace signtrans {

struct ToyWord {
    std::string text;   // source-side word
    std::string gloss;  // target gloss, variant digit included
};

struct ToyPaths {
    std::string train;
    std::string dev;
    std::string test;
    std::string dictionary;
};

namespace toy {

inline const std::vector<ToyWord>& content_words() {
    static const std::vector<ToyWord> words = {
        {"regen", "REGEN1"},   {"sonne", "SONNE"},    {"haus", "HAUS2"},
        {"kind", "KIND"},      {"hund", "HUND"},      {"katze", "KATZE1"},
        {"morgen", "MORGEN"},  {"abend", "ABEND"},    {"schule", "SCHULE"},
        {"arbeit", "ARBEIT3"}, {"wasser", "WASSER"},  {"brot", "BROT"},
        {"stadt", "STADT"},    {"wald", "WALD2"},     {"freund", "FREUND"},
    };
    return words;
}

inline const std::vector<std::string>& function_words() {
    static const std::vector<std::string> words = {"die", "der", "und"};
    return words;
}

// Symbol alphabet for the pseudo-HamNoSys segments (Greek minuscules).
inline const std::vector<std::string>& sign_alphabet() {
    static const std::vector<std::string> symbols = {
        "α", "β", "γ", "δ", "ε", "ζ", "η", "θ",
        "ι", "κ", "λ", "μ", "ν", "ξ", "ο", "π",
        "ρ", "σ", "τ", "υ", "φ", "χ", "ψ", "ω"};
    return symbols;
}

// Per-gloss sign: 2-4 symbols and a hand shape, fixed by the seed and the
// variant-stripped gloss, shared by the corpus and the dictionary.
struct ToySign {
    std::string segment;  // concatenated symbol code points
    std::string handshape;
};

inline ToySign sign_for(const std::string& gloss, uint64_t seed) {
    std::string key = strip_gloss_variants(gloss);
    Rng rng(derive_seed(seed, "sign." + key));
    const auto& alphabet = sign_alphabet();
    ToySign sign;
    size_t len = 2 + rng.bounded(3);
    for (size_t i = 0; i < len; ++i) {
        sign.segment += alphabet[static_cast<size_t>(rng.bounded(alphabet.size()))];
    }
    sign.handshape = "h" + std::to_string(1 + rng.bounded(6));
    return sign;
}

// One corpus line: text TAB gloss TAB hamnosys TAB handshape.
inline std::string sample_line(Rng& rng, uint64_t seed) {
    const auto& content = content_words();
    const auto& function = function_words();
    size_t n = 3 + rng.bounded(3);
    std::string text, gloss, hamnosys, handshape;
    for (size_t i = 0; i < n; ++i) {
        if (rng.bounded(4) == 0) {
            if (!text.empty()) text += ' ';
            text += function[static_cast<size_t>(rng.bounded(function.size()))];
        }
        const ToyWord& w = content[static_cast<size_t>(rng.bounded(content.size()))];
        ToySign sign = sign_for(w.gloss, seed);
        if (!text.empty()) text += ' ';
        text += w.text;
        if (!gloss.empty()) {
            gloss += ' ';
            hamnosys += kSignSeparator;
            handshape += ' ';
        }
        gloss += w.gloss;
        hamnosys += sign.segment;
        handshape += sign.handshape;
    }
    return text + '\t' + gloss + '\t' + hamnosys + '\t' + handshape;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path);
    for (const auto& line : lines) f << line << '\n';
}

}  // namespace toy

inline ToyPaths write_toy_corpus(const std::string& dir, uint64_t seed = 2250,
                                 size_t train_size = 200, size_t dev_size = 40,
                                 size_t test_size = 40) {
    std::filesystem::create_directories(dir);
    ToyPaths paths{dir + "/train.tsv", dir + "/dev.tsv", dir + "/test.tsv",
                   dir + "/dictionary.tsv"};

    auto make_split = [&](const std::string& name, size_t count) {
        Rng rng(derive_seed(seed, "split." + name));
        std::vector<std::string> lines;
        for (size_t i = 0; i < count; ++i) lines.push_back(toy::sample_line(rng, seed));
        return lines;
    };
    toy::write_lines(paths.train, make_split("train", train_size));
    toy::write_lines(paths.dev, make_split("dev", dev_size));
    toy::write_lines(paths.test, make_split("test", test_size));

    std::vector<std::string> dict_lines;
    for (const auto& w : toy::content_words()) {
        toy::ToySign sign = toy::sign_for(w.gloss, seed);
        dict_lines.push_back(strip_gloss_variants(w.gloss) + '\t' + sign.segment + '\t' +
                             sign.handshape);
    }
    toy::write_lines(paths.dictionary, dict_lines);
    return paths;
}

}  // namespace signtrans
