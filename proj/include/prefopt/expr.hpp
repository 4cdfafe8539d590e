#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

#include "prefopt/rewards.hpp"
#include "prefopt/scalar_math.hpp"
#include "prefopt/tape.hpp"

// Expression builders shared by both evaluation paths. Instantiated with
// ValueEnv they compute plain doubles; with TapeEnv they record the same
// expression on a tape for reverse-mode gradients. Reference-model quantities
// are always plain values: only the policy and the anchor head are trainable.

namespace prefopt {

struct ValueEnv {
  using scalar = double;

  const PolicyModel* model;
  const AnchorHead* head = nullptr;

  double param(size_t i) const { return model->params()[i]; }
  double head_weight(size_t j) const { return head->weight()[j]; }
  double head_bias() const { return head->bias(); }
  double constant(double c) const { return c; }
  std::span<const double> head_weights() const { return head->weight(); }
};

// Gradient slot layout: policy parameters first, then the head weights, then
// the head bias. Leaves are created lazily so a record only puts the
// parameters it touches on the tape.
class TapeEnv {
 public:
  using scalar = Var;

  TapeEnv(Tape& tape, const PolicyModel& model, const AnchorHead* head)
      : tape_(&tape),
        model_(&model),
        head_(head),
        head_base_(model.param_count()),
        leaf_(model.param_count() + (head ? head->dim() + 1 : 0), -1) {}

  Var param(size_t i) {
    if (leaf_[i] < 0) {
      leaf_[i] = static_cast<int32_t>(
          tape_->leaf(model_->params()[i], static_cast<uint32_t>(i)).node);
    }
    return {tape_, static_cast<uint32_t>(leaf_[i])};
  }

  Var head_weight(size_t j) {
    const size_t slot = head_base_ + j;
    if (leaf_[slot] < 0) {
      leaf_[slot] = static_cast<int32_t>(
          tape_->leaf(head_->weight()[j], static_cast<uint32_t>(slot)).node);
    }
    return {tape_, static_cast<uint32_t>(leaf_[slot])};
  }

  Var head_bias() {
    const size_t slot = head_base_ + head_->dim();
    if (leaf_[slot] < 0) {
      leaf_[slot] = static_cast<int32_t>(
          tape_->leaf(head_->bias(), static_cast<uint32_t>(slot)).node);
    }
    return {tape_, static_cast<uint32_t>(leaf_[slot])};
  }

  Var constant(double c) { return tape_->constant(c); }

  std::span<const Var> head_weights() {
    if (head_w_cache_.empty()) {
      head_w_cache_.reserve(head_->dim());
      for (uint32_t j = 0; j < head_->dim(); ++j) {
        head_w_cache_.push_back(head_weight(j));
      }
    }
    return head_w_cache_;
  }

  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  const PolicyModel* model_;
  const AnchorHead* head_;
  size_t head_base_;
  std::vector<int32_t> leaf_;
  std::vector<Var> head_w_cache_;
};

template <class E>
using scalar_t = typename E::scalar;

// ---- policy log-probabilities ----

template <class E>
scalar_t<E> tabular_logprob_expr(E& env, const PolicyModel& m,
                                 const PromptContext& ctx, int candidate) {
  const uint32_t k = m.candidate_count(ctx.prompt_id);
  std::vector<scalar_t<E>> logits;
  logits.reserve(k);
  for (uint32_t c = 0; c < k; ++c) {
    logits.push_back(env.param(m.logit_index(ctx.prompt_id, c)));
  }
  return logits[candidate] - logsumexp(std::span<const scalar_t<E>>(logits));
}

template <class E>
std::vector<scalar_t<E>> tinylm_step_expr(E& env, const PolicyModel& m,
                                          const std::vector<scalar_t<E>>* h_prev,
                                          Token t) {
  using S = scalar_t<E>;
  const uint32_t d = m.dim();
  std::vector<S> h;
  h.reserve(d);
  for (uint32_t i = 0; i < d; ++i) {
    S pre = env.param(m.emb_index(t, i));
    if (h_prev != nullptr) {
      std::vector<S> row;
      row.reserve(d);
      for (uint32_t j = 0; j < d; ++j) row.push_back(env.param(m.hid_index(i, j)));
      pre = pre + dot(std::span<const S>(row), std::span<const S>(*h_prev));
    }
    h.push_back(tanh(pre));
  }
  return h;
}

template <class E>
scalar_t<E> tinylm_token_logprob_expr(E& env, const PolicyModel& m,
                                      const std::vector<scalar_t<E>>& h, Token y) {
  using S = scalar_t<E>;
  const uint32_t d = m.dim();
  std::vector<S> logits;
  logits.reserve(m.vocab());
  for (Token k = 0; k < m.vocab(); ++k) {
    std::vector<S> col;
    col.reserve(d);
    for (uint32_t i = 0; i < d; ++i) col.push_back(env.param(m.out_index(i, k)));
    logits.push_back(dot(std::span<const S>(col), std::span<const S>(h)));
  }
  return logits[y] - logsumexp(std::span<const S>(logits));
}

template <class E>
scalar_t<E> seq_logprob_expr(E& env, const PolicyModel& m,
                             const PromptContext& ctx, const TokenSeq& y) {
  using S = scalar_t<E>;
  if (m.mode() == PolicyMode::Tabular) {
    const int c = find_candidate(ctx, y);
    if (c < 0) {
      throw ConfigError("response is not a registered candidate of prompt " +
                        std::to_string(ctx.prompt_id));
    }
    return tabular_logprob_expr(env, m, ctx, c);
  }
  std::vector<S> h;
  for (size_t i = 0; i < ctx.tokens.tokens.size(); ++i) {
    h = tinylm_step_expr(env, m, i == 0 ? nullptr : &h, ctx.tokens.tokens[i]);
  }
  S total = env.constant(0.0);
  for (Token t : y.tokens) {
    total = total + tinylm_token_logprob_expr(env, m, h, t);
    h = tinylm_step_expr(env, m, &h, t);
  }
  return total;
}

template <class E>
std::vector<std::vector<scalar_t<E>>> prompt_hidden_states_expr(
    E& env, const PolicyModel& m, const PromptContext& ctx) {
  using S = scalar_t<E>;
  std::vector<std::vector<S>> out;
  out.reserve(ctx.tokens.tokens.size());
  for (size_t i = 0; i < ctx.tokens.tokens.size(); ++i) {
    out.push_back(
        tinylm_step_expr(env, m, i == 0 ? nullptr : &out.back(), ctx.tokens.tokens[i]));
  }
  return out;
}

// ---- anchor readout and rewards ----

// sum_i log sigmoid(w . h_i + b), mean if normalize; hidden states may be
// frozen doubles or tape variables
template <class E, class H>
scalar_t<E> anchor_readout_expr(E& env, const std::vector<std::vector<H>>& hs,
                                bool normalize) {
  using S = scalar_t<E>;
  assert(!hs.empty());
  S acc = env.constant(0.0);
  for (const auto& h : hs) {
    S z = dot(env.head_weights(), std::span<const H>(h)) + env.head_bias();
    acc = acc + log_sigmoid(z);
  }
  if (normalize) acc = acc * (1.0 / static_cast<double>(hs.size()));
  return acc;
}

template <class E>
scalar_t<E> reward_policy_expr(E& env, const ReferencePair& pair,
                               const RewardSpec& spec, const PromptContext& ctx,
                               const TokenSeq& y) {
  if (spec.family == RewardFamily::LogRatio) {
    const double lref = seq_logprob(pair.reference, ctx, y);
    return (seq_logprob_expr(env, pair.policy, ctx, y) - lref) * spec.beta;
  }
  return seq_logprob_expr(env, pair.policy, ctx, y) *
         (spec.beta / static_cast<double>(y.length()));
}

template <class E>
scalar_t<E> reward_anchor_expr(E& env, const ReferencePair& pair,
                               const AnchorHead& head, const RewardSpec& spec,
                               const PromptContext& ctx) {
  using S = scalar_t<E>;
  const bool norm = head.normalize_by_length();
  if (spec.family == RewardFamily::LengthNorm) {
    if (pair.policy.mode() == PolicyMode::Tabular) {
      return anchor_readout_expr(env, ctx.hidden_states, norm) * spec.beta +
             spec.gamma;
    }
    const auto hs = prompt_hidden_states_expr(env, pair.policy, ctx);
    return anchor_readout_expr(env, hs, norm) * spec.beta + spec.gamma;
  }
  if (pair.policy.mode() == PolicyMode::Tabular) {
    // frozen states: drift of the readout from its construction snapshot
    const double a0 = anchor_logprob_at(head.snapshot_weight(),
                                        head.snapshot_bias(), norm,
                                        ctx.hidden_states);
    S a = anchor_readout_expr(env, ctx.hidden_states, norm);
    return (a - a0) * spec.beta + spec.gamma;
  }
  const auto hs_policy = prompt_hidden_states_expr(env, pair.policy, ctx);
  const auto hs_ref = prompt_hidden_states(pair.reference, ctx);
  S a = anchor_readout_expr(env, hs_policy, norm);
  S a_ref = anchor_readout_expr(env, hs_ref, norm);
  return (a - a_ref) * spec.beta + spec.gamma;
}

}  // namespace prefopt
