// Corpus-level BLEU-1..4 and ROUGE-L F1, plus gloss-to-HamNoSys conversion
// for protocol-comparable T2G2H scoring.
//
// BLEU follows the original corpus formulation: clipped n-gram precision
// pooled over the corpus, uniform weights, brevity penalty
// BP = min(1, e^{1-r/c}), no smoothing — any zero precision zeroes every
// order that includes it. ROUGE is the LCS-based F1, averaged per sentence.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "signtrans/corpus.hpp"

namespace signtrans {

using TokenCorpus = std::vector<std::vector<std::string>>;

namespace detail {

inline std::map<std::vector<std::string>, int64_t> ngram_counts(
    const std::vector<std::string>& tokens, size_t n) {
    std::map<std::vector<std::string>, int64_t> counts;
    if (tokens.size() < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                          tokens.begin() + static_cast<long>(i + n))];
    }
    return counts;
}

inline size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline void check_corpus(const TokenCorpus& hyps, const TokenCorpus& refs, const char* who) {
    if (hyps.empty()) throw ValidationError(std::string(who) + ": empty corpus");
    if (hyps.size() != refs.size()) {
        throw ValidationError(std::string(who) + ": " + std::to_string(hyps.size()) +
                              " hypotheses vs " + std::to_string(refs.size()) + " references");
    }
}

}  // namespace detail

struct BleuScores {
    std::array<double, 4> bleu{};        // BLEU-1..4, 0-100
    std::array<double, 4> precisions{};  // clipped p_1..p_4, 0-1
    double brevity_penalty = 0.0;
    int64_t hyp_len = 0;  // total candidate length c
    int64_t ref_len = 0;  // effective reference length r
};

inline BleuScores bleu(const TokenCorpus& hyps, const TokenCorpus& refs) {
    detail::check_corpus(hyps, refs, "bleu");
    constexpr size_t kMaxN = 4;
    std::array<int64_t, kMaxN> matched{}, candidates{};
    BleuScores out;
    for (size_t s = 0; s < hyps.size(); ++s) {
        const auto& h = hyps[s];
        const auto& r = refs[s];
        out.hyp_len += static_cast<int64_t>(h.size());
        out.ref_len += static_cast<int64_t>(r.size());
        for (size_t n = 1; n <= kMaxN; ++n) {
            if (h.size() < n) continue;
            candidates[n - 1] += static_cast<int64_t>(h.size() - n + 1);
            auto ref_counts = detail::ngram_counts(r, n);
            for (const auto& [gram, count] : detail::ngram_counts(h, n)) {
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) {
                    matched[n - 1] += std::min(count, it->second);
                }
            }
        }
    }
    for (size_t n = 0; n < kMaxN; ++n) {
        out.precisions[n] = candidates[n] > 0
                                ? static_cast<double>(matched[n]) / static_cast<double>(candidates[n])
                                : 0.0;
    }
    if (out.hyp_len == 0) {
        out.brevity_penalty = 0.0;  // nothing produced: every score is 0
        return out;
    }
    out.brevity_penalty =
        out.hyp_len >= out.ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(out.ref_len) / static_cast<double>(out.hyp_len));
    for (size_t k = 1; k <= kMaxN; ++k) {
        double log_sum = 0.0;
        bool zero = false;
        for (size_t n = 0; n < k; ++n) {
            if (out.precisions[n] <= 0.0) {
                zero = true;
                break;
            }
            log_sum += std::log(out.precisions[n]);
        }
        out.bleu[k - 1] =
            zero ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / static_cast<double>(k));
    }
    return out;
}

inline double rouge_l_f1(const TokenCorpus& hyps, const TokenCorpus& refs) {
    detail::check_corpus(hyps, refs, "rouge_l_f1");
    double total = 0.0;
    for (size_t s = 0; s < hyps.size(); ++s) {
        size_t lcs = detail::lcs_length(hyps[s], refs[s]);
        if (lcs == 0) continue;  // includes empty hyp or ref: F1 is 0
        double p = static_cast<double>(lcs) / static_cast<double>(hyps[s].size());
        double r = static_cast<double>(lcs) / static_cast<double>(refs[s].size());
        total += 2.0 * p * r / (p + r);
    }
    return 100.0 * total / static_cast<double>(hyps.size());
}

struct GlossConversion {
    std::vector<std::string> tokens;  // HamNoSys symbols with '|' between signs
    size_t missing = 0;               // glosses absent from the dictionary
};

// Dictionary lookup per Eq.-style T2G2H: each (variant-stripped) gloss
// becomes its sign's symbols; unknown glosses become a single UNK segment.
inline GlossConversion gloss_to_hamnosys(const std::vector<std::string>& gloss,
                                         const SignDictionary& dict,
                                         const std::string& unk = "<unk>") {
    GlossConversion out;
    for (size_t i = 0; i < gloss.size(); ++i) {
        if (i) out.tokens.push_back(kSignSeparator);
        if (const DictionaryEntry* e = dict.find(gloss[i])) {
            out.tokens.insert(out.tokens.end(), e->hamnosys.begin(), e->hamnosys.end());
        } else {
            out.tokens.push_back(unk);
            ++out.missing;
        }
    }
    return out;
}

struct ScoreReport {
    std::array<double, 4> bleu{};  // BLEU-1..4
    double rouge_l = 0.0;
    size_t sentences = 0;
    double length_ratio = 0.0;  // hypothesis/reference token count
    int64_t hyp_len = 0;
    int64_t ref_len = 0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"bleu1", bleu[0]},       {"bleu2", bleu[1]},
                              {"bleu3", bleu[2]},       {"bleu4", bleu[3]},
                              {"rouge_l", rouge_l},     {"sentences", sentences},
                              {"length_ratio", length_ratio}, {"hyp_len", hyp_len},
                              {"ref_len", ref_len}};
    }
};

inline ScoreReport score_corpus(const TokenCorpus& hyps, const TokenCorpus& refs) {
    BleuScores b = bleu(hyps, refs);
    ScoreReport r;
    r.bleu = b.bleu;
    r.rouge_l = rouge_l_f1(hyps, refs);
    r.sentences = hyps.size();
    r.hyp_len = b.hyp_len;
    r.ref_len = b.ref_len;
    r.length_ratio = b.ref_len > 0
                         ? static_cast<double>(b.hyp_len) / static_cast<double>(b.ref_len)
                         : 0.0;
    return r;
}

// Aligned table in the layout of the paper's result tables: one row per
// split, columns BLEU-4..1 then ROUGE.
inline std::string format_score_table(
    const std::vector<std::pair<std::string, ScoreReport>>& rows) {
    std::string out = "split      BLEU-4   BLEU-3   BLEU-2   BLEU-1  ROUGE-L\n";
    char buf[128];
    for (const auto& [label, r] : rows) {
        std::snprintf(buf, sizeof(buf), "%-9s %8.2f %8.2f %8.2f %8.2f %8.2f\n", label.c_str(),
                      r.bleu[3], r.bleu[2], r.bleu[1], r.bleu[0], r.rouge_l);
        out += buf;
    }
    return out;
}

}  // namespace signtrans
