#include "prefopt/rewards.hpp"

#include "prefopt/expr.hpp"

namespace prefopt {

AnchorHead::AnchorHead(uint32_t dim, bool normalize_by_length)
    : w_(dim, 0.0), w0_(dim, 0.0), normalize_(normalize_by_length) {}

AnchorHead::AnchorHead(std::vector<double> w0, double b0, bool normalize_by_length)
    : w_(w0), b_(b0), w0_(std::move(w0)), b0_(b0), normalize_(normalize_by_length) {}

double anchor_logprob_at(std::span<const double> w, double b, bool normalize,
                         const std::vector<std::vector<double>>& hidden_states) {
  double acc = 0.0;
  for (const auto& h : hidden_states) {
    acc += log_sigmoid(dot(w, h) + b);
  }
  if (normalize) acc /= static_cast<double>(hidden_states.size());
  return acc;
}

double anchor_logprob(const AnchorHead& head,
                      const std::vector<std::vector<double>>& hidden_states) {
  return anchor_logprob_at(head.weight(), head.bias(), head.normalize_by_length(),
                           hidden_states);
}

double reward_policy(const ReferencePair& pair, const RewardSpec& spec,
                     const PromptContext& ctx, const TokenSeq& response) {
  ValueEnv env{&pair.policy, nullptr};
  return reward_policy_expr(env, pair, spec, ctx, response);
}

double reward_anchor(const ReferencePair& pair, const AnchorHead& head,
                     const RewardSpec& spec, const PromptContext& ctx) {
  ValueEnv env{&pair.policy, &head};
  return reward_anchor_expr(env, pair, head, spec, ctx);
}

}  // namespace prefopt
