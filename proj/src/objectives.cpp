#include "prefopt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "prefopt/loss_expr.hpp"

namespace prefopt {

Method parse_method(std::string_view name) {
  if (name == "DPO") return Method::DPO;
  if (name == "IPO") return Method::IPO;
  if (name == "CPO") return Method::CPO;
  if (name == "KTO") return Method::KTO;
  if (name == "ORPO") return Method::ORPO;
  if (name == "R-DPO") return Method::RDPO;
  if (name == "SimPO") return Method::SimPO;
  if (name == "UAPO") return Method::UAPO;
  if (name == "SimUAPO") return Method::SimUAPO;
  if (name == "UAPO-multi") return Method::UAPOMulti;
  if (name == "SimUAPO-multi") return Method::SimUAPOMulti;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::DPO: return "DPO";
    case Method::IPO: return "IPO";
    case Method::CPO: return "CPO";
    case Method::KTO: return "KTO";
    case Method::ORPO: return "ORPO";
    case Method::RDPO: return "R-DPO";
    case Method::SimPO: return "SimPO";
    case Method::UAPO: return "UAPO";
    case Method::SimUAPO: return "SimUAPO";
    case Method::UAPOMulti: return "UAPO-multi";
    case Method::SimUAPOMulti: return "SimUAPO-multi";
  }
  return "unknown";
}

bool is_multi(Method m) {
  return m == Method::UAPOMulti || m == Method::SimUAPOMulti;
}

bool uses_anchor(Method m) {
  return m == Method::UAPO || m == Method::SimUAPO || m == Method::UAPOMulti ||
         m == Method::SimUAPOMulti;
}

RewardFamily family_of(Method m) {
  switch (m) {
    case Method::DPO:
    case Method::IPO:
    case Method::KTO:
    case Method::RDPO:
    case Method::UAPO:
    case Method::UAPOMulti:
      return RewardFamily::LogRatio;
    default:
      return RewardFamily::LengthNorm;
  }
}

double bt_prob(double reward_w, double reward_l) {
  return std::exp(-softplus(-(reward_w - reward_l)));
}

LossAux compute_loss_aux(const ObjectiveSpec& spec, const ReferencePair& pair,
                         const PromptContext& ctx, uint64_t kl_seed) {
  LossAux aux;
  if (spec.method == Method::KTO) {
    const double kl = pair.policy.mode() == PolicyMode::Tabular
                          ? exact_kl(pair, ctx)
                          : mc_kl(pair, ctx, spec.kto_mc_samples, kl_seed);
    aux.kto_z0 = spec.beta * std::max(kl, 0.0);
  }
  return aux;
}

double record_loss(const ObjectiveSpec& spec, const ReferencePair& pair,
                   const AnchorHead& head, const PromptContext& ctx,
                   const PreferenceRecord& rec, const LossAux& aux,
                   RecordRewards* rewards) {
  ValueEnv env{&pair.policy, &head};
  return record_loss_expr(env, spec, pair, head, ctx, rec, aux, rewards);
}

double record_loss_grad(const ObjectiveSpec& spec, const ReferencePair& pair,
                        const AnchorHead& head, const PromptContext& ctx,
                        const PreferenceRecord& rec, const LossAux& aux,
                        SparseGrad& grad, RecordRewards* rewards) {
  Tape tape;
  TapeEnv env(tape, pair.policy, &head);
  Var loss = record_loss_expr(env, spec, pair, head, ctx, rec, aux, rewards);
  tape.backward(loss);
  grad.entries = tape.leaf_grads();
  return loss.value();
}

size_t trainable_count(const ReferencePair& pair, const AnchorHead& head) {
  return pair.policy.param_count() + head.dim() + 1;
}

std::vector<double> gather_trainable(const ReferencePair& pair,
                                     const AnchorHead& head) {
  std::vector<double> flat;
  flat.reserve(trainable_count(pair, head));
  flat.insert(flat.end(), pair.policy.params().begin(),
              pair.policy.params().end());
  flat.insert(flat.end(), head.weight().begin(), head.weight().end());
  flat.push_back(head.bias());
  return flat;
}

void scatter_trainable(ReferencePair& pair, AnchorHead& head,
                       std::span<const double> flat) {
  const size_t p = pair.policy.param_count();
  if (flat.size() != p + head.dim() + 1) {
    throw ConfigError("trainable vector has the wrong length");
  }
  std::copy(flat.begin(), flat.begin() + p, pair.policy.params().begin());
  std::copy(flat.begin() + p, flat.begin() + p + head.dim(),
            head.weight().begin());
  head.bias() = flat[p + head.dim()];
}

namespace {

// ascending record_id; ids are unique within a manifest
std::vector<size_t> reduce_order(std::span<const PreferenceRecord> records) {
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return records[a].record_id < records[b].record_id;
  });
  return order;
}

const PromptContext& context_of(const std::vector<PromptContext>& contexts,
                                const PreferenceRecord& rec) {
  if (rec.prompt_id >= contexts.size()) {
    throw ConfigError("record " + std::to_string(rec.record_id) +
                      " references unknown prompt " +
                      std::to_string(rec.prompt_id));
  }
  return contexts[rec.prompt_id];
}

void check_weights(std::span<const PreferenceRecord> records,
                   std::span<const double> weights) {
  if (!weights.empty() && weights.size() != records.size()) {
    throw ConfigError("weight vector length does not match record count");
  }
}

}  // namespace

BatchResult batch_loss(const ObjectiveSpec& spec, const ReferencePair& pair,
                       const AnchorHead& head,
                       const std::vector<PromptContext>& contexts,
                       std::span<const PreferenceRecord> records,
                       std::span<const double> weights, Exec exec,
                       uint64_t kl_seed) {
  check_weights(records, weights);
  if (records.empty()) throw ConfigError("empty record batch");
  const auto order = reduce_order(records);
  const auto n = static_cast<int64_t>(records.size());

  std::vector<double> losses(records.size(), 0.0);
  std::vector<RecordRewards> rewards(records.size());
  std::vector<std::exception_ptr> errors(records.size());

  const bool parallel = exec == Exec::Parallel;
#pragma omp parallel for schedule(dynamic, 8) if (parallel)
  for (int64_t i = 0; i < n; ++i) {
    try {
      const PreferenceRecord& rec = records[i];
      const PromptContext& ctx = context_of(contexts, rec);
      const LossAux aux =
          compute_loss_aux(spec, pair, ctx, derive_seed(kl_seed, rec.record_id));
      losses[i] = record_loss(spec, pair, head, ctx, rec, aux, &rewards[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (size_t i : order) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }

  BatchResult out;
  out.rewards = std::move(rewards);
  double total = 0.0;
  double wsum = 0.0;
  for (size_t i : order) {
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w * losses[i];
    wsum += w;
  }
  out.loss = total / wsum;
  return out;
}

BatchGradResult batch_grad(const ObjectiveSpec& spec, const ReferencePair& pair,
                           const AnchorHead& head,
                           const std::vector<PromptContext>& contexts,
                           std::span<const PreferenceRecord> records,
                           std::span<const double> weights, Exec exec,
                           uint64_t kl_seed) {
  check_weights(records, weights);
  if (records.empty()) throw ConfigError("empty record batch");
  const auto order = reduce_order(records);
  const auto n = static_cast<int64_t>(records.size());

  std::vector<double> losses(records.size(), 0.0);
  std::vector<SparseGrad> grads(records.size());
  std::vector<RecordRewards> rewards(records.size());
  std::vector<std::exception_ptr> errors(records.size());

  const bool parallel = exec == Exec::Parallel;
#pragma omp parallel for schedule(dynamic, 8) if (parallel)
  for (int64_t i = 0; i < n; ++i) {
    try {
      const PreferenceRecord& rec = records[i];
      const PromptContext& ctx = context_of(contexts, rec);
      const LossAux aux =
          compute_loss_aux(spec, pair, ctx, derive_seed(kl_seed, rec.record_id));
      losses[i] =
          record_loss_grad(spec, pair, head, ctx, rec, aux, grads[i], &rewards[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (size_t i : order) {
    if (errors[i]) std::rethrow_exception(errors[i]);
  }

  BatchGradResult out;
  out.rewards = std::move(rewards);
  out.grad.assign(trainable_count(pair, head), 0.0);
  double total = 0.0;
  double wsum = 0.0;
  for (size_t i : order) {
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w * losses[i];
    wsum += w;
    for (const auto& [slot, g] : grads[i].entries) {
      out.grad[slot] += w * g;
    }
  }
  out.loss = total / wsum;
  const double inv = 1.0 / wsum;
  for (double& g : out.grad) g *= inv;
  return out;
}

}  // namespace prefopt
