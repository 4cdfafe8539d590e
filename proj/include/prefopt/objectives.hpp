#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/rewards.hpp"

namespace prefopt {

enum class Method {
  DPO,
  IPO,
  CPO,
  KTO,
  ORPO,
  RDPO,
  SimPO,
  UAPO,
  SimUAPO,
  UAPOMulti,
  SimUAPOMulti,
};

Method parse_method(std::string_view name);
const char* method_name(Method m);
bool is_multi(Method m);
bool uses_anchor(Method m);
RewardFamily family_of(Method m);

// Hyperparameters for every objective live side by side; each method reads
// only the ones it defines.
struct ObjectiveSpec {
  Method method = Method::DPO;
  double beta = 0.05;
  double gamma = 0.0;      // anchor offset (UAPO family) or margin (SimPO)
  double tau = 0.5;        // IPO
  double lambda = 1.0;     // CPO and ORPO regularizer weight
  double alpha = 0.1;      // R-DPO length penalty
  double lambda_w = 1.0;   // KTO
  double lambda_l = 1.0;   // KTO
  uint32_t kto_mc_samples = 128;  // KL estimate fallback when not tabular

  RewardSpec reward_spec() const {
    return {family_of(method), beta, uses_anchor(method) ? gamma : 0.0};
  }
};

struct PreferenceRecord {
  uint64_t record_id = 0;
  uint32_t prompt_id = 0;
  TokenSeq prompt_tokens;  // copy of the context tokens; manifests stay self-contained
  std::vector<TokenSeq> winners;
  std::vector<TokenSeq> losers;
};

// Bradley-Terry win probability sigma(r_w - r_l)
double bt_prob(double reward_w, double reward_l);

// Quantities computed once per evaluation point and held constant while
// differentiating. KTO's reference point z0 is a baseline, not a trained
// term, so it does not receive gradient.
struct LossAux {
  double kto_z0 = 0.0;
};

LossAux compute_loss_aux(const ObjectiveSpec& spec, const ReferencePair& pair,
                         const PromptContext& ctx, uint64_t kl_seed);

struct RecordRewards {
  std::vector<double> winners;
  std::vector<double> losers;
  double anchor = 0.0;
};

// loss of a single record; fills `rewards` with the per-response values when given
double record_loss(const ObjectiveSpec& spec, const ReferencePair& pair,
                   const AnchorHead& head, const PromptContext& ctx,
                   const PreferenceRecord& rec, const LossAux& aux,
                   RecordRewards* rewards = nullptr);

struct SparseGrad {
  std::vector<std::pair<uint32_t, double>> entries;  // (slot, d loss / d param)
};

double record_loss_grad(const ObjectiveSpec& spec, const ReferencePair& pair,
                        const AnchorHead& head, const PromptContext& ctx,
                        const PreferenceRecord& rec, const LossAux& aux,
                        SparseGrad& grad, RecordRewards* rewards = nullptr);

// trainable vector layout: policy parameters, head weights, head bias
size_t trainable_count(const ReferencePair& pair, const AnchorHead& head);
std::vector<double> gather_trainable(const ReferencePair& pair,
                                     const AnchorHead& head);
void scatter_trainable(ReferencePair& pair, AnchorHead& head,
                       std::span<const double> flat);

enum class Exec { Serial, Parallel };

struct BatchResult {
  double loss = 0.0;
  std::vector<RecordRewards> rewards;  // one entry per record, input order
};

struct BatchGradResult {
  double loss = 0.0;
  std::vector<double> grad;  // dense, trainable layout
  std::vector<RecordRewards> rewards;
};

// Mean loss over records. Reduction always runs serially in ascending
// record_id order, so the result is bit-identical for any thread count and
// any permutation of the record list. `weights` (optional, same length as
// records) turns the mean into a normalized weighted mean.
BatchResult batch_loss(const ObjectiveSpec& spec, const ReferencePair& pair,
                       const AnchorHead& head,
                       const std::vector<PromptContext>& contexts,
                       std::span<const PreferenceRecord> records,
                       std::span<const double> weights, Exec exec,
                       uint64_t kl_seed);

BatchGradResult batch_grad(const ObjectiveSpec& spec, const ReferencePair& pair,
                           const AnchorHead& head,
                           const std::vector<PromptContext>& contexts,
                           std::span<const PreferenceRecord> records,
                           std::span<const double> weights, Exec exec,
                           uint64_t kl_seed);

}  // namespace prefopt
