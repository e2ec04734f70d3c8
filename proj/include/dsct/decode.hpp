#pragma once

// Autoregressive decoding. Hypotheses keep the generated ids after BOS; a
// finished hypothesis ends with EOS, an unfinished one was truncated at
// max_len. Ranking uses sum-log-prob divided by length^alpha.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dsct/model.hpp"

namespace dsct {

struct ScoredSequence {
    std::vector<int> tokens; // after BOS; includes EOS when finished
    double logprob = 0.0;    // sum of per-token log-probabilities
    bool finished = false;

    double ranking_score(double alpha) const {
        if (alpha == 0.0 || tokens.empty()) return logprob;
        return logprob / std::pow(double(tokens.size()), alpha);
    }
    std::vector<int> words() const { // EOS stripped
        std::vector<int> w = tokens;
        if (!w.empty() && w.back() == kEos) w.pop_back();
        return w;
    }
};

namespace detail {

// log-probabilities of the next token given the prefix (BOS + generated so far)
template <typename S>
std::vector<double> next_logprobs(const CaptionModelT<S>& model, const TensorT<S>& region,
                                  const TensorT<S>& seg, const std::vector<int>& generated,
                                  Rng& rng, bool training) {
    std::vector<int> inputs;
    inputs.reserve(generated.size() + 1);
    inputs.push_back(kBos);
    inputs.insert(inputs.end(), generated.begin(), generated.end());
    auto fwd = model.forward_tokens(region, seg, inputs, rng, training);
    auto lp = log_softmax(fwd.logits, 1);
    const size_t v = lp.dim(1);
    const size_t last = lp.dim(0) - 1;
    std::vector<double> out(v);
    for (size_t j = 0; j < v; ++j) out[j] = double(lp.at(last, j));
    return out;
}

} // namespace detail

template <typename S>
ScoredSequence greedy_decode(const CaptionModelT<S>& model, const TensorT<S>& region,
                             const TensorT<S>& seg, size_t max_len, Rng& rng,
                             bool training = false) {
    ScoredSequence hyp;
    for (size_t step = 0; step < max_len; ++step) {
        auto lp = detail::next_logprobs(model, region, seg, hyp.tokens, rng, training);
        int best = -1;
        for (size_t j = 0; j < lp.size(); ++j) {
            if (j == size_t(kPad) || j == size_t(kBos)) continue;
            if (best < 0 || lp[j] > lp[size_t(best)]) best = int(j); // ties keep lowest id
        }
        hyp.tokens.push_back(best);
        hyp.logprob += lp[size_t(best)];
        if (best == kEos) {
            hyp.finished = true;
            break;
        }
    }
    return hyp;
}

// Standard beam search. Every step expands each live hypothesis with all
// generatable tokens, keeps the best k candidates, and retires those ending in
// EOS. Returns the k best complete sequences (retired ∪ truncated-at-max_len),
// ranked by length-normalized score, best first.
template <typename S>
std::vector<ScoredSequence> beam_search(const CaptionModelT<S>& model, const TensorT<S>& region,
                                        const TensorT<S>& seg, size_t beam_k, size_t max_len,
                                        double alpha, Rng& rng, bool training = false) {
    const size_t vocab = model.config().vocab_size;
    if (beam_k < 1) throw ContractError("beam_search: beam_k must be >= 1");

    std::vector<ScoredSequence> active{ScoredSequence{}};
    std::vector<ScoredSequence> finished;

    for (size_t step = 0; step < max_len && !active.empty(); ++step) {
        std::vector<ScoredSequence> candidates;
        candidates.reserve(active.size() * vocab);
        for (const auto& hyp : active) {
            auto lp = detail::next_logprobs(model, region, seg, hyp.tokens, rng, training);
            for (size_t j = 0; j < vocab; ++j) {
                if (j == size_t(kPad) || j == size_t(kBos)) continue;
                ScoredSequence next = hyp;
                next.tokens.push_back(int(j));
                next.logprob += lp[j];
                next.finished = int(j) == kEos;
                candidates.push_back(std::move(next));
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const auto& a, const auto& b) { return a.logprob > b.logprob; });
        if (candidates.size() > beam_k) candidates.resize(beam_k);
        active.clear();
        for (auto& c : candidates) {
            if (c.finished)
                finished.push_back(std::move(c));
            else
                active.push_back(std::move(c));
        }
    }
    // hypotheses still alive at max_len compete as truncated sequences
    for (auto& h : active) finished.push_back(std::move(h));

    std::stable_sort(finished.begin(), finished.end(), [alpha](const auto& a, const auto& b) {
        return a.ranking_score(alpha) > b.ranking_score(alpha);
    });
    if (finished.size() > beam_k) finished.resize(beam_k);
    return finished;
}

} // namespace dsct
