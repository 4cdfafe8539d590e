#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "prefopt/policy.hpp"

namespace prefopt {

// Reward families shared by the objectives. LogRatio scores a response by
// beta * (log pi_theta - log pi_ref); LengthNorm is reference-free and scores
// by (beta / |y|) * log pi_theta.
enum class RewardFamily { LogRatio, LengthNorm };

struct RewardSpec {
  RewardFamily family = RewardFamily::LogRatio;
  double beta = 0.05;
  double gamma = 0.0;
};

// Linear-sigmoid readout over prompt hidden states:
//   sum_i log sigmoid(w . h_i + b), optionally divided by the token count.
// w and b are trainable and start at zero; a snapshot of the construction
// values is kept so log-ratio anchors can measure drift from it.
class AnchorHead {
 public:
  AnchorHead(uint32_t dim, bool normalize_by_length);
  AnchorHead(std::vector<double> w0, double b0, bool normalize_by_length);

  uint32_t dim() const { return static_cast<uint32_t>(w_.size()); }
  bool normalize_by_length() const { return normalize_; }

  std::vector<double>& weight() { return w_; }
  const std::vector<double>& weight() const { return w_; }
  double& bias() { return b_; }
  double bias() const { return b_; }

  const std::vector<double>& snapshot_weight() const { return w0_; }
  double snapshot_bias() const { return b0_; }

 private:
  std::vector<double> w_;
  double b_ = 0.0;
  std::vector<double> w0_;
  double b0_ = 0.0;
  bool normalize_ = false;
};

// readout with the head's current parameters
double anchor_logprob(const AnchorHead& head,
                      const std::vector<std::vector<double>>& hidden_states);

// readout with explicit parameters (used for the construction snapshot)
double anchor_logprob_at(std::span<const double> w, double b, bool normalize,
                         const std::vector<std::vector<double>>& hidden_states);

// reward of a concrete response under the family in `spec`
double reward_policy(const ReferencePair& pair, const RewardSpec& spec,
                     const PromptContext& ctx, const TokenSeq& response);

// Reward of the abstract anchor response for this prompt.
//   LogRatio:   beta * (readout under policy states - readout under reference
//               states) + gamma; in tabular mode the states are frozen, so the
//               reference term is the construction snapshot instead.
//   LengthNorm: beta * normalized readout + gamma.
double reward_anchor(const ReferencePair& pair, const AnchorHead& head,
                     const RewardSpec& spec, const PromptContext& ctx);

}  // namespace prefopt
