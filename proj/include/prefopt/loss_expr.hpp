#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "prefopt/expr.hpp"
#include "prefopt/objectives.hpp"

// Per-record loss expressions for every objective, written once and evaluated
// either as plain values or on a tape. All sigmoid terms go through
// log_sigmoid/softplus and every pooled denominator through max-shifted
// logsumexp, so rewards of magnitude up to 1e3 stay finite.

namespace prefopt {

inline void validate_record(const ObjectiveSpec& spec, const PreferenceRecord& rec) {
  if (is_multi(spec.method)) {
    if (rec.winners.empty() && rec.losers.empty()) {
      throw ConfigError("record " + std::to_string(rec.record_id) +
                        " has neither winners nor losers");
    }
    return;
  }
  if (rec.winners.size() != 1 || rec.losers.size() != 1) {
    throw ConfigError(std::string(method_name(spec.method)) +
                      " trains on paired records only; record " +
                      std::to_string(rec.record_id) + " has " +
                      std::to_string(rec.winners.size()) + " winners and " +
                      std::to_string(rec.losers.size()) + " losers");
  }
}

namespace detail {

// bounds for the odds transform: p in [1e-12, 1 - 1e-12] expressed in log space
inline const double kOddsLogLo = std::log(1e-12);
inline const double kOddsLogHi = std::log1p(-1e-12);

}  // namespace detail

template <class E>
scalar_t<E> pairwise_loss_expr(E& env, const ObjectiveSpec& spec,
                               const ReferencePair& pair, const AnchorHead& head,
                               const PromptContext& ctx,
                               const PreferenceRecord& rec, const LossAux& aux,
                               RecordRewards* out) {
  using S = scalar_t<E>;
  const TokenSeq& yw = rec.winners[0];
  const TokenSeq& yl = rec.losers[0];
  const RewardSpec rs = spec.reward_spec();

  auto note = [&](double rw, double rl, double ra) {
    if (out != nullptr) {
      out->winners.assign(1, rw);
      out->losers.assign(1, rl);
      out->anchor = ra;
    }
  };

  switch (spec.method) {
    case Method::DPO: {
      S rw = reward_policy_expr(env, pair, rs, ctx, yw);
      S rl = reward_policy_expr(env, pair, rs, ctx, yl);
      note(value_of(rw), value_of(rl),
           reward_anchor(pair, head, rs, ctx));
      return -log_sigmoid(rw - rl);
    }
    case Method::IPO: {
      S rw = reward_policy_expr(env, pair, rs, ctx, yw);
      S rl = reward_policy_expr(env, pair, rs, ctx, yl);
      note(value_of(rw), value_of(rl), reward_anchor(pair, head, rs, ctx));
      // squared deviation of the beta-free log-ratio gap from 1/(2 tau)
      S d = (rw - rl) * (1.0 / spec.beta) - 1.0 / (2.0 * spec.tau);
      return d * d;
    }
    case Method::CPO: {
      S lw = seq_logprob_expr(env, pair.policy, ctx, yw);
      S ll = seq_logprob_expr(env, pair.policy, ctx, yl);
      note(reward_policy(pair, rs, ctx, yw), reward_policy(pair, rs, ctx, yl),
           reward_anchor(pair, head, rs, ctx));
      return -log_sigmoid(lw * spec.beta - ll * spec.beta) - lw * spec.lambda;
    }
    case Method::KTO: {
      S rw = reward_policy_expr(env, pair, rs, ctx, yw);
      S rl = reward_policy_expr(env, pair, rs, ctx, yl);
      note(value_of(rw), value_of(rl), reward_anchor(pair, head, rs, ctx));
      return sigmoid(rw - aux.kto_z0) * (-spec.lambda_w) +
             sigmoid(aux.kto_z0 - rl) * spec.lambda_l;
    }
    case Method::ORPO: {
      S mw = seq_logprob_expr(env, pair.policy, ctx, yw) *
             (1.0 / static_cast<double>(yw.length()));
      S ml = seq_logprob_expr(env, pair.policy, ctx, yl) *
             (1.0 / static_cast<double>(yl.length()));
      note(reward_policy(pair, rs, ctx, yw), reward_policy(pair, rs, ctx, yl),
           reward_anchor(pair, head, rs, ctx));
      S mw_c = clamp(mw, detail::kOddsLogLo, detail::kOddsLogHi);
      S ml_c = clamp(ml, detail::kOddsLogLo, detail::kOddsLogHi);
      S lo_w = mw_c - log1mexp(mw_c);
      S lo_l = ml_c - log1mexp(ml_c);
      return -mw_c - log_sigmoid(lo_w - lo_l) * spec.lambda;
    }
    case Method::RDPO: {
      S rw = reward_policy_expr(env, pair, rs, ctx, yw);
      S rl = reward_policy_expr(env, pair, rs, ctx, yl);
      note(value_of(rw), value_of(rl), reward_anchor(pair, head, rs, ctx));
      const double len_term = spec.alpha * static_cast<double>(yw.length()) -
                              spec.alpha * static_cast<double>(yl.length());
      return -log_sigmoid(rw - rl + len_term);
    }
    case Method::SimPO: {
      S rw = reward_policy_expr(env, pair, rs, ctx, yw);
      S rl = reward_policy_expr(env, pair, rs, ctx, yl);
      note(value_of(rw), value_of(rl), reward_anchor(pair, head, rs, ctx));
      return -log_sigmoid(rw - rl - spec.gamma);
    }
    case Method::UAPO:
    case Method::SimUAPO: {
      S rw = reward_policy_expr(env, pair, rs, ctx, yw);
      S rl = reward_policy_expr(env, pair, rs, ctx, yl);
      S ra = reward_anchor_expr(env, pair, head, rs, ctx);
      note(value_of(rw), value_of(rl), value_of(ra));
      return -(log_sigmoid(rw - ra) + log_sigmoid(ra - rl));
    }
    default:
      throw ConfigError("pairwise loss called with a multi-response method");
  }
}

// winners and losers each compete against the anchor inside a shared softmax
// pool; either side may be empty
template <class E>
scalar_t<E> multi_loss_expr(E& env, const ObjectiveSpec& spec,
                            const ReferencePair& pair, const AnchorHead& head,
                            const PromptContext& ctx, const PreferenceRecord& rec,
                            RecordRewards* out) {
  using S = scalar_t<E>;
  const RewardSpec rs = spec.reward_spec();

  S anchor = reward_anchor_expr(env, pair, head, rs, ctx);
  std::vector<S> rw, rl;
  rw.reserve(rec.winners.size());
  rl.reserve(rec.losers.size());
  for (const TokenSeq& y : rec.winners) {
    rw.push_back(reward_policy_expr(env, pair, rs, ctx, y));
  }
  for (const TokenSeq& y : rec.losers) {
    rl.push_back(reward_policy_expr(env, pair, rs, ctx, y));
  }
  if (out != nullptr) {
    out->winners.clear();
    out->losers.clear();
    for (S r : rw) out->winners.push_back(value_of(r));
    for (S r : rl) out->losers.push_back(value_of(r));
    out->anchor = value_of(anchor);
  }

  S loss = env.constant(0.0);
  if (!rw.empty()) {
    std::vector<S> pool;
    pool.reserve(rw.size() + 1);
    pool.push_back(anchor);
    pool.insert(pool.end(), rw.begin(), rw.end());
    S lse_w = logsumexp(std::span<const S>(pool));
    for (S r : rw) loss = loss + (lse_w - r);
  }
  if (!rl.empty()) {
    std::vector<S> pool;
    pool.reserve(rl.size() + 1);
    pool.push_back(anchor);
    pool.insert(pool.end(), rl.begin(), rl.end());
    S lse_l = logsumexp(std::span<const S>(pool));
    loss = loss + (lse_l - anchor);
  }
  return loss;
}

template <class E>
scalar_t<E> record_loss_expr(E& env, const ObjectiveSpec& spec,
                             const ReferencePair& pair, const AnchorHead& head,
                             const PromptContext& ctx, const PreferenceRecord& rec,
                             const LossAux& aux, RecordRewards* out) {
  validate_record(spec, rec);
  if (is_multi(spec.method)) {
    return multi_loss_expr(env, spec, pair, head, ctx, rec, out);
  }
  return pairwise_loss_expr(env, spec, pair, head, ctx, rec, aux, out);
}

}  // namespace prefopt
