#include "prefopt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "prefopt/optim.hpp"

namespace prefopt {

RandomInstance make_random_instance(Method method, PolicyMode mode,
                                    uint64_t seed) {
  Rng rng(derive_seed(seed, 7));

  WorldSpec ws;
  ws.prompts = 3;
  ws.candidates = 5;
  ws.vocab = 12;
  ws.dim = 6;
  ws.separation = 1.5;
  ws.ref_temperature = 2.0;
  ws.seed = derive_seed(seed, 8);
  ws.mode = mode;

  World world = gen_world(ws);
  ReferencePair pair = make_reference_pair(world);
  for (double& p : pair.policy.params()) p += rng.normal() * 0.7;

  const bool norm = family_of(method) == RewardFamily::LengthNorm;
  std::vector<double> w0(ws.dim);
  for (double& x : w0) x = rng.normal() * 0.4;
  AnchorHead head(std::move(w0), rng.normal() * 0.4, norm);
  for (double& x : head.weight()) x += rng.normal() * 0.5;
  head.bias() += rng.normal() * 0.5;

  RandomInstance inst(std::move(world), std::move(pair), std::move(head));

  inst.spec.method = method;
  if (family_of(method) == RewardFamily::LogRatio) {
    inst.spec.beta = rng.uniform(0.02, 0.2);
  } else {
    inst.spec.beta = rng.uniform(0.5, 4.0);
  }
  inst.spec.gamma = uses_anchor(method) ? rng.uniform(-1.0, 2.0)
                                        : rng.uniform(0.0, 2.0);
  inst.spec.tau = rng.uniform(0.1, 1.0);
  inst.spec.lambda = rng.uniform(0.1, 2.0);
  inst.spec.alpha = rng.uniform(0.01, 0.5);
  inst.spec.lambda_w = rng.uniform(0.5, 1.5);
  inst.spec.lambda_l = rng.uniform(0.5, 1.5);
  inst.spec.kto_mc_samples = 32;

  PreferenceRecord& rec = inst.record;
  rec.record_id = seed;
  rec.prompt_id = static_cast<uint32_t>(rng.below(ws.prompts));
  rec.prompt_tokens = inst.world.contexts[rec.prompt_id].tokens;

  size_t n_w = 1;
  size_t n_l = 1;
  if (is_multi(method)) {
    n_w = rng.below(3);
    n_l = rng.below(3);
    if (n_w == 0 && n_l == 0) n_w = 1;
  }
  std::vector<uint32_t> cands(ws.candidates);
  for (uint32_t c = 0; c < ws.candidates; ++c) cands[c] = c;
  for (size_t i = cands.size(); i > 1; --i) {
    std::swap(cands[i - 1], cands[rng.below(i)]);
  }
  const auto& responses = inst.world.contexts[rec.prompt_id].candidate_responses;
  size_t next = 0;
  for (size_t i = 0; i < n_w; ++i) rec.winners.push_back(responses[cands[next++]]);
  for (size_t i = 0; i < n_l; ++i) rec.losers.push_back(responses[cands[next++]]);
  return inst;
}

std::vector<double> tape_gradient(const RandomInstance& inst, const LossAux& aux) {
  const PromptContext& ctx = inst.world.contexts[inst.record.prompt_id];
  SparseGrad sparse;
  record_loss_grad(inst.spec, inst.pair, inst.head, ctx, inst.record, aux, sparse);
  std::vector<double> dense(trainable_count(inst.pair, inst.head), 0.0);
  for (const auto& [slot, g] : sparse.entries) dense[slot] += g;
  return dense;
}

std::vector<double> fd_gradient(const RandomInstance& inst, const LossAux& aux,
                                double h) {
  const PromptContext& ctx = inst.world.contexts[inst.record.prompt_id];
  const std::vector<double> at = gather_trainable(inst.pair, inst.head);
  auto f = [&](std::span<const double> x) {
    ReferencePair pair = inst.pair;
    AnchorHead head = inst.head;
    scatter_trainable(pair, head, x);
    return record_loss(inst.spec, pair, head, ctx, inst.record, aux);
  };
  return finite_diff(f, at, h);
}

GradCheckReport gradcheck_method(Method method, PolicyMode mode,
                                 uint32_t instances, uint64_t seed,
                                 double tolerance) {
  GradCheckReport report;
  report.method = method;
  report.mode = mode;
  report.instances = instances;
  for (uint32_t i = 0; i < instances; ++i) {
    const RandomInstance inst =
        make_random_instance(method, mode, derive_seed(seed, i));
    const PromptContext& ctx = inst.world.contexts[inst.record.prompt_id];
    const LossAux aux = compute_loss_aux(inst.spec, inst.pair, ctx,
                                         derive_seed(seed, 0x4b1dULL + i));
    const std::vector<double> gt = tape_gradient(inst, aux);
    const std::vector<double> gf = fd_gradient(inst, aux);
    report.max_rel_err = std::max(report.max_rel_err, max_rel_error(gt, gf));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace prefopt
