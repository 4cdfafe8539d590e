#include "prefopt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prefopt/gradcheck.hpp"
#include "prefopt/loss_expr.hpp"
#include "prefopt/rng.hpp"
#include "prefopt/scalar_math.hpp"

namespace prefopt {

namespace {
constexpr double kBoundTol = 1e-12;
}

TheoryReport check_sigmoid_bound(uint64_t n_samples, double range, uint64_t seed,
                                 Exec exec) {
  TheoryReport rep;
  rep.check = "sigmoid-product-bound";
  rep.instances = n_samples;
  rep.worst_margin = -std::numeric_limits<double>::infinity();

  const auto n = static_cast<int64_t>(n_samples);
  uint64_t violations = 0;
  double worst = rep.worst_margin;
  const bool parallel = exec == Exec::Parallel;
  // each sample uses its own derived seed, so the scan order cannot matter
#pragma omp parallel for schedule(static) reduction(+ : violations) \
    reduction(max : worst) if (parallel)
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
    const double a = rng.uniform(-range, range);
    const double m = rng.uniform(-range, range);
    const double b = rng.uniform(-range, range);
    const double lhs = log_sigmoid(a - m) + log_sigmoid(m - b);
    const double rhs = log_sigmoid(a - b);
    const double margin = lhs - rhs;
    worst = std::max(worst, margin);
    if (margin > kBoundTol) violations += 1;
  }
  rep.violations = violations;
  rep.worst_margin = worst;
  rep.pass = violations == 0;
  return rep;
}

TheoryReport check_lower_bound(uint32_t instances, uint64_t seed) {
  TheoryReport rep;
  rep.check = "anchored-loss-lower-bound";
  rep.instances = instances;
  rep.worst_margin = -std::numeric_limits<double>::infinity();
  for (uint32_t i = 0; i < instances; ++i) {
    RandomInstance inst =
        make_random_instance(Method::UAPO, PolicyMode::Tabular, derive_seed(seed, i));
    inst.spec.gamma = 0.0;
    const PromptContext& ctx = inst.world.contexts[inst.record.prompt_id];
    const LossAux aux;
    const double anchored =
        record_loss(inst.spec, inst.pair, inst.head, ctx, inst.record, aux);
    ObjectiveSpec paired = inst.spec;
    paired.method = Method::DPO;
    const double plain =
        record_loss(paired, inst.pair, inst.head, ctx, inst.record, aux);
    // -anchored <= -plain, i.e. plain - anchored <= 0
    const double margin = plain - anchored;
    rep.worst_margin = std::max(rep.worst_margin, margin);
    if (margin > kBoundTol) rep.violations += 1;
  }
  rep.pass = rep.violations == 0;
  return rep;
}

TheoryReport check_gradient_decomposition(uint32_t instances, uint64_t seed) {
  TheoryReport rep;
  rep.check = "winner-gradient-decomposition";
  rep.instances = instances;
  rep.worst_margin = 0.0;
  constexpr double kTol = 1e-8;

  for (uint32_t i = 0; i < instances; ++i) {
    const PolicyMode mode = i % 2 == 0 ? PolicyMode::Tabular : PolicyMode::TinyLM;
    RandomInstance inst =
        make_random_instance(Method::UAPO, mode, derive_seed(seed, i));
    inst.spec.gamma = 0.0;
    const PromptContext& ctx = inst.world.contexts[inst.record.prompt_id];
    const RewardSpec rs = inst.spec.reward_spec();
    const TokenSeq& yw = inst.record.winners[0];
    const size_t n = trainable_count(inst.pair, inst.head);

    // tape gradient of the winner term alone
    std::vector<double> g_total(n, 0.0);
    double rw_val = 0.0;
    double ra_val = 0.0;
    {
      Tape tape;
      TapeEnv env(tape, inst.pair.policy, &inst.head);
      Var rw = reward_policy_expr(env, inst.pair, rs, ctx, yw);
      Var ra = reward_anchor_expr(env, inst.pair, inst.head, rs, ctx);
      rw_val = rw.value();
      ra_val = ra.value();
      Var lw = -log_sigmoid(rw - ra);
      tape.backward(lw);
      for (const auto& [slot, g] : tape.leaf_grads()) g_total[slot] += g;
    }

    // pieces of the closed form
    std::vector<double> g_logpi(n, 0.0);
    {
      Tape tape;
      TapeEnv env(tape, inst.pair.policy, &inst.head);
      Var lp = seq_logprob_expr(env, inst.pair.policy, ctx, yw);
      tape.backward(lp);
      for (const auto& [slot, g] : tape.leaf_grads()) g_logpi[slot] += g;
    }
    std::vector<double> g_anchor(n, 0.0);
    {
      Tape tape;
      TapeEnv env(tape, inst.pair.policy, &inst.head);
      const RewardSpec unit{rs.family, 1.0, 0.0};
      Var a = reward_anchor_expr(env, inst.pair, inst.head, unit, ctx);
      tape.backward(a);
      for (const auto& [slot, g] : tape.leaf_grads()) g_anchor[slot] += g;
    }

    const double s = sigmoid(-(rw_val - ra_val));
    double worst = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double lead = g_logpi[j];
      if (rs.family == RewardFamily::LengthNorm) {
        lead /= static_cast<double>(yw.length());
      }
      const double closed = -inst.spec.beta * s * (lead - g_anchor[j]);
      worst = std::max(worst, std::fabs(g_total[j] - closed));
    }
    rep.worst_margin = std::max(rep.worst_margin, worst);
    if (worst >= kTol) rep.violations += 1;
  }
  rep.pass = rep.violations == 0;
  return rep;
}

AnchorDiagnostics anchor_diagnostics(const ReferencePair& pair,
                                     const AnchorHead& head,
                                     const ObjectiveSpec& spec,
                                     const std::vector<PromptContext>& contexts,
                                     std::span<const PreferenceRecord> records) {
  AnchorDiagnostics d;
  d.triples.reserve(records.size());
  const RewardSpec rs = spec.reward_spec();
  size_t sandwich = 0;
  size_t strict = 0;
  size_t correct = 0;
  double margin_sum = 0.0;
  for (const PreferenceRecord& rec : records) {
    if (rec.winners.size() != 1 || rec.losers.size() != 1) {
      throw ConfigError("anchor diagnostics expect paired records");
    }
    const PromptContext& ctx = contexts.at(rec.prompt_id);
    const double rw = reward_policy(pair, rs, ctx, rec.winners[0]);
    const double rl = reward_policy(pair, rs, ctx, rec.losers[0]);
    const double ra = reward_anchor(pair, head, rs, ctx);
    d.triples.push_back({rw, ra, rl});
    if (rw >= ra && ra >= rl) sandwich += 1;
    if (rw > ra && ra > rl) strict += 1;
    if (rw > rl) correct += 1;
    margin_sum += rw - rl;
  }
  const double n = static_cast<double>(records.size());
  if (!records.empty()) {
    d.sandwich_fraction = sandwich / n;
    d.strict_sandwich_fraction = strict / n;
    d.accuracy = correct / n;
    d.mean_margin = margin_sum / n;
  }
  return d;
}

}  // namespace prefopt
