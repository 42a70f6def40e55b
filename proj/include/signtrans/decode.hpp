// Autoregressive inference: greedy search and beam search.
//
// Both are templated over a step function so they work against the real
// transformer and against hand-built toy distributions alike:
//
//   step(prefix) -> vector of log-probabilities over the vocabulary,
//
// where prefix is the BOS-led token sequence generated so far. Scores are
// cumulative log-probability, optionally length-normalized by len^alpha.
// All tie-breaks are deterministic: lowest token id per step, then
// lexicographically smallest token sequence.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace signtrans {

struct DecodeResult {
    std::vector<int32_t> tokens;  // generated ids, trailing EOS included when finished
    double logp = 0.0;            // sum of per-step log-probabilities
    double score = 0.0;           // logp / len^alpha (len counts EOS)
    bool finished = false;        // ended on EOS rather than the length cap
};

// Output tokens with any trailing EOS removed, ready for detokenization.
inline std::vector<int32_t> strip_eos(const std::vector<int32_t>& tokens, int32_t eos = 2) {
    if (!tokens.empty() && tokens.back() == eos) {
        return {tokens.begin(), tokens.end() - 1};
    }
    return tokens;
}

// HamNoSys targets run much longer than their sources, so the cap scales
// with source length; the factor is tuned per task at the pipeline level.
inline size_t default_max_len(size_t src_len, double factor = 1.5) {
    return static_cast<size_t>(factor * static_cast<double>(src_len)) + 10;
}

// Sums the model's log-probabilities along a fixed token sequence.
template <class StepFn>
double rescore(StepFn&& step, const std::vector<int32_t>& tokens, int32_t bos = 1) {
    std::vector<int32_t> prefix = {bos};
    double total = 0.0;
    for (int32_t tok : tokens) {
        std::vector<double> lp = step(prefix);
        total += lp[static_cast<size_t>(tok)];
        prefix.push_back(tok);
    }
    return total;
}

template <class StepFn>
DecodeResult greedy_decode(StepFn&& step, size_t max_len, int32_t bos = 1, int32_t eos = 2) {
    if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
    std::vector<int32_t> prefix = {bos};
    DecodeResult r;
    for (size_t t = 0; t < max_len; ++t) {
        std::vector<double> lp = step(prefix);
        if (lp.empty()) throw std::invalid_argument("greedy_decode: empty step distribution");
        size_t best = 0;
        for (size_t i = 1; i < lp.size(); ++i) {
            if (lp[i] > lp[best]) best = i;  // strict: ties keep the lowest id
        }
        r.tokens.push_back(static_cast<int32_t>(best));
        r.logp += lp[best];
        prefix.push_back(static_cast<int32_t>(best));
        if (static_cast<int32_t>(best) == eos) {
            r.finished = true;
            break;
        }
    }
    r.score = r.logp;
    return r;
}

// Beam search. Per step, every live hypothesis proposes its top beam_size
// tokens; EOS candidates move to the finished pool, the best beam_size
// others stay live. Hypotheses still live at max_len are force-finished.
// The winner is the pool entry with the best length-normalized score.
template <class StepFn>
DecodeResult beam_decode(StepFn&& step, size_t beam_size, size_t max_len, double alpha = 0.0,
                         int32_t bos = 1, int32_t eos = 2) {
    if (beam_size < 1) throw std::invalid_argument("beam_decode: beam_size must be >= 1");
    if (max_len < 1) throw std::invalid_argument("beam_decode: max_len must be >= 1");
    auto score_of = [alpha](double logp, size_t len) {
        return logp / std::pow(static_cast<double>(len), alpha);
    };

    struct Hyp {
        std::vector<int32_t> tokens;
        double logp;
    };
    std::vector<Hyp> live = {{{}, 0.0}};
    std::vector<DecodeResult> pool;

    for (size_t t = 0; t < max_len && !live.empty(); ++t) {
        std::vector<Hyp> candidates;
        for (const auto& h : live) {
            std::vector<int32_t> prefix;
            prefix.reserve(h.tokens.size() + 1);
            prefix.push_back(bos);
            prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
            std::vector<double> lp = step(prefix);
            if (lp.empty()) throw std::invalid_argument("beam_decode: empty step distribution");

            std::vector<size_t> idx(lp.size());
            std::iota(idx.begin(), idx.end(), size_t{0});
            size_t k = std::min(beam_size, lp.size());
            std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                              [&lp](size_t a, size_t b) {
                                  if (lp[a] != lp[b]) return lp[a] > lp[b];
                                  return a < b;
                              });
            for (size_t j = 0; j < k; ++j) {
                Hyp c = h;
                c.tokens.push_back(static_cast<int32_t>(idx[j]));
                c.logp += lp[idx[j]];
                candidates.push_back(std::move(c));
            }
        }
        std::vector<Hyp> next;
        for (auto& c : candidates) {
            if (c.tokens.back() == eos) {
                pool.push_back({c.tokens, c.logp, score_of(c.logp, c.tokens.size()), true});
            } else {
                next.push_back(std::move(c));
            }
        }
        std::sort(next.begin(), next.end(), [](const Hyp& a, const Hyp& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            return a.tokens < b.tokens;
        });
        if (next.size() > beam_size) next.resize(beam_size);
        live = std::move(next);
    }
    for (const auto& h : live) {
        pool.push_back({h.tokens, h.logp, score_of(h.logp, h.tokens.size()), false});
    }

    size_t best = 0;
    for (size_t i = 1; i < pool.size(); ++i) {
        if (pool[i].score > pool[best].score ||
            (pool[i].score == pool[best].score && pool[i].tokens < pool[best].tokens)) {
            best = i;
        }
    }
    return pool[best];
}

}  // namespace signtrans
