// Independent reference implementations ("oracles") used to cross-check the
// library. These deliberately use naive algorithms and fresh recounts so that
// agreement with the optimized implementations is meaningful.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <signtrans/decode.hpp>
#include <signtrans/rng.hpp>
#include <signtrans/utf8.hpp>

namespace support {

using MergeList = std::vector<std::pair<std::string, std::string>>;

// From-scratch BPE trainer: full pair recount every iteration, naive merge
// application. Same contract as the library trainer (code-point symbols,
// "</w>" glued to the last symbol, overlapping pair counts weighted by word
// frequency, lexicographically smallest pair on count ties, stop below
// count 2 or at vocab_size).
inline MergeList bpe_oracle_merges(const std::vector<std::vector<std::string>>& corpus,
                                   size_t vocab_size) {
    std::map<std::string, long long> freq;
    for (const auto& seq : corpus) {
        for (const auto& w : seq) {
            if (!w.empty()) ++freq[w];
        }
    }
    std::vector<std::pair<std::vector<std::string>, long long>> words;
    std::set<std::string> base;
    for (const auto& [w, f] : freq) {
        auto syms = signtrans::utf8::split_codepoints(w);
        if (!syms.empty()) syms.back() += "</w>";
        for (const auto& s : syms) base.insert(s);
        words.push_back({syms, f});
    }

    MergeList merges;
    size_t vocab = base.size();
    while (vocab < vocab_size) {
        std::map<std::pair<std::string, std::string>, long long> counts;
        for (const auto& [syms, f] : words) {
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                counts[{syms[i], syms[i + 1]}] += f;
            }
        }
        std::pair<std::string, std::string> best;
        long long best_count = 0;
        for (const auto& [pair, count] : counts) {
            if (count > best_count) {  // map order: first hit is lexicographically smallest
                best_count = count;
                best = pair;
            }
        }
        if (best_count < 2) break;

        for (auto& [syms, f] : words) {
            std::vector<std::string> out;
            size_t i = 0;
            while (i < syms.size()) {
                if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
                    out.push_back(best.first + best.second);
                    i += 2;
                } else {
                    out.push_back(syms[i]);
                    ++i;
                }
            }
            syms = std::move(out);
        }
        merges.push_back(best);
        ++vocab;
    }
    return merges;
}

// Brute-force n-gram tally over a token sequence.
inline std::map<std::vector<std::string>, int> ngram_counts_oracle(
    const std::vector<std::string>& tokens, size_t n) {
    std::map<std::vector<std::string>, int> counts;
    if (tokens.size() < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)] += 1;
    }
    return counts;
}

// Independent corpus BLEU: brute-force n-gram tallies, straight-line math.
inline std::array<double, 4> bleu_oracle(const std::vector<std::vector<std::string>>& hyps,
                                         const std::vector<std::vector<std::string>>& refs) {
    long long matched[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
    long long c = 0, r = 0;
    for (size_t s = 0; s < hyps.size(); ++s) {
        c += static_cast<long long>(hyps[s].size());
        r += static_cast<long long>(refs[s].size());
        for (size_t n = 1; n <= 4; ++n) {
            auto h_counts = ngram_counts_oracle(hyps[s], n);
            auto r_counts = ngram_counts_oracle(refs[s], n);
            for (const auto& [gram, count] : h_counts) {
                total[n - 1] += count;
                auto it = r_counts.find(gram);
                if (it != r_counts.end()) matched[n - 1] += std::min(count, it->second);
            }
        }
    }
    std::array<double, 4> out{};
    if (c == 0) return out;
    double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    for (size_t k = 1; k <= 4; ++k) {
        double log_sum = 0;
        bool zero = false;
        for (size_t n = 1; n <= k; ++n) {
            double p = total[n - 1] > 0 ? static_cast<double>(matched[n - 1]) /
                                              static_cast<double>(total[n - 1])
                                        : 0.0;
            if (p <= 0) {
                zero = true;
                break;
            }
            log_sum += std::log(p);
        }
        out[k - 1] = zero ? 0.0 : 100.0 * bp * std::exp(log_sum / static_cast<double>(k));
    }
    return out;
}

// Deterministic toy "model": the next-token distribution is a pure function
// of (seed, prefix). Gives every decode test an endless supply of random but
// reproducible models.
struct RandomStepModel {
    uint64_t seed;
    size_t vocab;

    std::vector<double> operator()(const std::vector<int32_t>& prefix) const {
        uint64_t h = seed ^ 0x9E3779B97F4A7C15ull;
        for (int32_t t : prefix) {
            h ^= static_cast<uint64_t>(static_cast<uint32_t>(t)) + 0x2545F4914F6CDD1Dull;
            h = signtrans::splitmix64(h);
        }
        signtrans::Rng rng(h);
        std::vector<double> logits(vocab);
        for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
        double maxv = *std::max_element(logits.begin(), logits.end());
        double sum = 0;
        for (double v : logits) sum += std::exp(v - maxv);
        double lse = maxv + std::log(sum);
        for (auto& v : logits) v -= lse;
        return logits;
    }
};

// Exhaustive decode: enumerates every EOS-terminated sequence of length
// <= max_len plus every EOS-free sequence of exactly max_len, then picks the
// best score with the same tie-break as the beam (lexicographic tokens).
template <class StepFn>
signtrans::DecodeResult exhaustive_best(StepFn&& step, size_t max_len, double alpha,
                                        int32_t bos = 1, int32_t eos = 2) {
    signtrans::DecodeResult best;
    bool have = false;
    auto consider = [&](const std::vector<int32_t>& tokens, double logp, bool finished) {
        double score = logp / std::pow(static_cast<double>(tokens.size()), alpha);
        if (!have || score > best.score ||
            (score == best.score && tokens < best.tokens)) {
            best = {tokens, logp, score, finished};
            have = true;
        }
    };
    std::vector<int32_t> prefix = {bos};
    std::vector<int32_t> tokens;
    std::function<void(double)> walk = [&](double logp) {
        std::vector<double> lp = step(prefix);
        for (size_t tok = 0; tok < lp.size(); ++tok) {
            int32_t id = static_cast<int32_t>(tok);
            tokens.push_back(id);
            double next_logp = logp + lp[tok];
            if (id == eos) {
                consider(tokens, next_logp, true);
            } else if (tokens.size() == max_len) {
                consider(tokens, next_logp, false);
            } else {
                prefix.push_back(id);
                walk(next_logp);
                prefix.pop_back();
            }
            tokens.pop_back();
        }
    };
    walk(0.0);
    return best;
}

// Longest common subsequence length by plain recursion with memoization.
inline size_t lcs_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::map<std::pair<size_t, size_t>, size_t> memo;
    std::function<size_t(size_t, size_t)> go = [&](size_t i, size_t j) -> size_t {
        if (i == a.size() || j == b.size()) return 0;
        auto it = memo.find({i, j});
        if (it != memo.end()) return it->second;
        size_t r;
        if (a[i] == b[j]) {
            r = 1 + go(i + 1, j + 1);
        } else {
            r = std::max(go(i + 1, j), go(i, j + 1));
        }
        memo[{i, j}] = r;
        return r;
    };
    return go(0, 0);
}

}  // namespace support
