#include <doctest.h>

#include <cmath>
#include <vector>

#include "prefopt/analysis.hpp"
#include "prefopt/gradcheck.hpp"
#include "prefopt/loss_expr.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/rewards.hpp"
#include "prefopt/scalar_math.hpp"
#include "prefopt/synth.hpp"

using namespace prefopt;

namespace {

// a standalone prompt with three registered candidates and zeroed hidden
// states, paired with an explicit (policy, reference) tabular model
struct HandScene {
  PromptContext ctx;
  ReferencePair pair;
  AnchorHead head;

  HandScene(double logit0, double logit1, double logit2)
      : pair(PolicyModel::tabular({3})), head(4, false) {
    ctx.prompt_id = 0;
    ctx.tokens.tokens = {1, 2};
    ctx.candidate_responses = {TokenSeq{{5}}, TokenSeq{{6}}, TokenSeq{{7}}};
    ctx.hidden_states = {std::vector<double>(4, 0.0),
                         std::vector<double>(4, 0.0)};
    std::vector<double>& p = pair.policy.params();
    p[pair.policy.logit_index(0, 0)] = logit0;
    p[pair.policy.logit_index(0, 1)] = logit1;
    p[pair.policy.logit_index(0, 2)] = logit2;
  }
};

PreferenceRecord paired_record(const PromptContext& ctx, uint32_t w, uint32_t l) {
  PreferenceRecord rec;
  rec.prompt_id = ctx.prompt_id;
  rec.prompt_tokens = ctx.tokens;
  rec.winners.push_back(ctx.candidate_responses[w]);
  rec.losers.push_back(ctx.candidate_responses[l]);
  return rec;
}

std::vector<double> dense_leaf_grads(Tape& tape, size_t n) {
  std::vector<double> g(n, 0.0);
  for (const auto& [slot, val] : tape.leaf_grads()) g[slot] += val;
  return g;
}

}  // namespace

TEST_CASE("the two-sigmoid product never beats the direct sigmoid") {
  // pointwise identity at the origin
  CHECK(log_sigmoid(0.0) + log_sigmoid(0.0) <= log_sigmoid(0.0));
  CHECK(log_sigmoid(0.0) + log_sigmoid(0.0) ==
        doctest::Approx(-2.0 * std::log(2.0)).epsilon(1e-14));

  const TheoryReport rep = check_sigmoid_bound(10000, 50.0, 314, Exec::Serial);
  CHECK(rep.check == "sigmoid-product-bound");
  CHECK(rep.instances == 10000);
  CHECK(rep.violations == 0);
  CHECK(rep.pass);
  CHECK(rep.worst_margin <= 1e-12);
}

TEST_CASE("the sigmoid bound scan is identical serial and parallel") {
  const TheoryReport s = check_sigmoid_bound(20000, 50.0, 271, Exec::Serial);
  const TheoryReport p = check_sigmoid_bound(20000, 50.0, 271, Exec::Parallel);
  CHECK(s.violations == p.violations);
  CHECK(s.worst_margin == p.worst_margin);
  CHECK(s.pass == p.pass);
}

TEST_CASE("a zero sampling range degenerates to the origin identity") {
  const TheoryReport rep = check_sigmoid_bound(1, 0.0, 99, Exec::Serial);
  CHECK(rep.instances == 1);
  CHECK(rep.violations == 0);
  CHECK(rep.pass);
  CHECK(rep.worst_margin == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("anchored pairwise loss never undercuts the paired loss") {
  const TheoryReport rep = check_lower_bound(300, 512);
  CHECK(rep.check == "anchored-loss-lower-bound");
  CHECK(rep.instances == 300);
  CHECK(rep.violations == 0);
  CHECK(rep.pass);
  CHECK(rep.worst_margin <= 1e-12);
}

TEST_CASE("at construction the anchored loss is exactly twice the paired loss") {
  const World w = gen_world({.prompts = 2, .candidates = 3, .seed = 88});
  const ReferencePair pair = make_reference_pair(w);
  const AnchorHead head(w.spec.dim, false);
  ObjectiveSpec anchored;
  anchored.method = Method::UAPO;
  anchored.gamma = 0.0;
  ObjectiveSpec paired = anchored;
  paired.method = Method::DPO;
  const PreferenceRecord rec = paired_record(w.contexts[0], 0, 1);
  const LossAux aux;
  const double la = record_loss(anchored, pair, head, w.contexts[0], rec, aux);
  const double lp = record_loss(paired, pair, head, w.contexts[0], rec, aux);
  CHECK(la == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(lp == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(la >= lp);
}

TEST_CASE("the anchored loss approaches the paired loss as the pair separates") {
  // with the anchor midway, the gap shrinks monotonically toward zero
  auto gap = [](double delta) {
    const double anchored =
        -log_sigmoid(delta / 2.0) - log_sigmoid(delta / 2.0);
    const double paired = -log_sigmoid(delta);
    return anchored - paired;
  };
  CHECK(gap(10.0) > gap(40.0));
  CHECK(gap(40.0) >= 0.0);
  CHECK(gap(40.0) < 1e-8);
  // when the anchor exits far below the pair, the winner-side term vanishes
  const double rw = 1.0, rl = 0.0, anchor = rl - 60.0;
  CHECK(-log_sigmoid(rw - anchor) < 1e-20);
  CHECK(-log_sigmoid(rw - anchor) - log_sigmoid(anchor - rl) >=
        -log_sigmoid(rw - rl));
}

TEST_CASE("the winner-term gradient matches its closed form on random draws") {
  const TheoryReport rep = check_gradient_decomposition(100, 2718);
  CHECK(rep.check == "winner-gradient-decomposition");
  CHECK(rep.instances == 100);
  CHECK(rep.violations == 0);
  CHECK(rep.pass);
  CHECK(rep.worst_margin < 1e-8);
}

TEST_CASE("at construction the winner-term scaling factor is exactly one half") {
  const World w = gen_world({.prompts = 2, .candidates = 3, .seed = 90});
  const ReferencePair pair = make_reference_pair(w);
  const AnchorHead head(w.spec.dim, false);
  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  spec.beta = 0.05;
  spec.gamma = 0.0;
  const RewardSpec rs = spec.reward_spec();
  const PromptContext& ctx = w.contexts[1];
  const TokenSeq& yw = ctx.candidate_responses[2];
  const size_t n = trainable_count(pair, head);

  std::vector<double> g_total;
  {
    Tape tape;
    TapeEnv env(tape, pair.policy, &head);
    Var rw = reward_policy_expr(env, pair, rs, ctx, yw);
    Var ra = reward_anchor_expr(env, pair, head, rs, ctx);
    CHECK(rw.value() == 0.0);  // policy sits at the reference
    CHECK(ra.value() == 0.0);  // head sits at its snapshot
    Var lw = -log_sigmoid(rw - ra);
    tape.backward(lw);
    g_total = dense_leaf_grads(tape, n);
  }
  std::vector<double> g_logpi;
  {
    Tape tape;
    TapeEnv env(tape, pair.policy, &head);
    Var lp = seq_logprob_expr(env, pair.policy, ctx, yw);
    tape.backward(lp);
    g_logpi = dense_leaf_grads(tape, n);
  }
  std::vector<double> g_anchor;
  {
    Tape tape;
    TapeEnv env(tape, pair.policy, &head);
    Var a = reward_anchor_expr(env, pair, head, RewardSpec{rs.family, 1.0, 0.0}, ctx);
    tape.backward(a);
    g_anchor = dense_leaf_grads(tape, n);
  }
  for (size_t j = 0; j < n; ++j) {
    const double closed = -spec.beta * 0.5 * (g_logpi[j] - g_anchor[j]);
    CHECK(std::fabs(g_total[j] - closed) <= 1e-12);
  }
}

TEST_CASE("a saturated winner term contributes almost no gradient") {
  HandScene scene(0.0, 0.0, 0.0);
  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  spec.gamma = 0.0;
  // push the winner's logit, then rescale beta so the reward gap is exactly 50
  scene.pair.policy.params()[scene.pair.policy.logit_index(0, 0)] = 50.0;
  spec.beta = 1.0;
  const double delta =
      reward_policy(scene.pair, spec.reward_spec(), scene.ctx,
                    scene.ctx.candidate_responses[0]);
  spec.beta = 50.0 / delta;
  const RewardSpec rs = spec.reward_spec();

  Tape tape;
  TapeEnv env(tape, scene.pair.policy, &scene.head);
  Var rw = reward_policy_expr(env, scene.pair, rs, scene.ctx,
                              scene.ctx.candidate_responses[0]);
  Var ra = reward_anchor_expr(env, scene.pair, scene.head, rs, scene.ctx);
  CHECK(rw.value() - ra.value() == doctest::Approx(50.0).epsilon(1e-12));
  Var lw = -log_sigmoid(rw - ra);
  tape.backward(lw);
  for (const auto& [slot, g] : tape.leaf_grads()) {
    CHECK(std::fabs(g) < 1e-10);
  }
}

TEST_CASE("theory reports keep pass and violation counts consistent") {
  for (const TheoryReport& rep :
       {check_sigmoid_bound(500, 50.0, 7, Exec::Serial), check_lower_bound(50, 8),
        check_gradient_decomposition(10, 9)}) {
    CHECK(rep.pass == (rep.violations == 0));
  }
}

TEST_CASE("diagnostics on an untouched run report ties everywhere") {
  const World w = gen_world({.prompts = 3, .candidates = 4, .seed = 91});
  const ReferencePair pair = make_reference_pair(w);
  const AnchorHead head(w.spec.dim, false);
  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  spec.gamma = 0.0;
  std::vector<PreferenceRecord> recs = {paired_record(w.contexts[0], 0, 1),
                                        paired_record(w.contexts[2], 3, 2)};
  const AnchorDiagnostics d =
      anchor_diagnostics(pair, head, spec, w.contexts, recs);
  REQUIRE(d.triples.size() == 2);
  for (const auto& t : d.triples) {
    CHECK(t[0] == 0.0);
    CHECK(t[1] == 0.0);
    CHECK(t[2] == 0.0);
  }
  CHECK(d.sandwich_fraction == 1.0);         // non-strict comparisons accept ties
  CHECK(d.strict_sandwich_fraction == 0.0);  // strict ones do not
  CHECK(d.accuracy == 0.0);                  // ties count as failures
  CHECK(d.mean_margin == 0.0);
}

TEST_CASE("a representative reward triple is sandwich-ordered") {
  // craft policy logits so the two candidate rewards and the anchor offset
  // land on a known (reward_w, anchor, reward_l) = (-9.875, -10.764, -11.587)
  const double log_third = -std::log(3.0);
  const double z0 = log_third - 9.875;
  const double z1 = log_third - 11.587;
  const double z2 = std::log(1.0 - std::exp(z0) - std::exp(z1));
  HandScene scene(z0, z1, z2);
  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  spec.beta = 1.0;
  spec.gamma = -10.764;

  std::vector<PreferenceRecord> recs = {paired_record(scene.ctx, 0, 1)};
  const AnchorDiagnostics d = anchor_diagnostics(
      scene.pair, scene.head, spec, {scene.ctx}, recs);
  REQUIRE(d.triples.size() == 1);
  CHECK(d.triples[0][0] == doctest::Approx(-9.875).epsilon(1e-9));
  CHECK(d.triples[0][1] == doctest::Approx(-10.764).epsilon(1e-9));
  CHECK(d.triples[0][2] == doctest::Approx(-11.587).epsilon(1e-9));
  CHECK(d.sandwich_fraction == 1.0);
  CHECK(d.strict_sandwich_fraction == 1.0);
  CHECK(d.accuracy == 1.0);
  CHECK(d.mean_margin == doctest::Approx(-9.875 + 11.587).epsilon(1e-9));
}

TEST_CASE("mixed record sets average the sandwich and accuracy counts") {
  const double log_third = -std::log(3.0);
  const double z0 = log_third + 0.9;  // candidate 0 gains probability
  const double z1 = log_third - 1.4;  // candidate 1 loses probability
  const double z2 =
      std::log(1.0 - std::exp(z0) - std::exp(z1));
  HandScene scene(z0, z1, z2);
  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  spec.beta = 1.0;
  spec.gamma = 0.0;  // anchor stays at zero, between the two rewards

  std::vector<PreferenceRecord> recs = {
      paired_record(scene.ctx, 0, 1),   // ordered: rw > 0 > rl
      paired_record(scene.ctx, 1, 0)};  // inverted labels
  const AnchorDiagnostics d = anchor_diagnostics(
      scene.pair, scene.head, spec, {scene.ctx}, recs);
  REQUIRE(d.triples.size() == 2);
  CHECK(d.triples[0][0] > 0.0);
  CHECK(d.triples[0][2] < 0.0);
  CHECK(d.sandwich_fraction == 0.5);
  CHECK(d.strict_sandwich_fraction == 0.5);
  CHECK(d.accuracy == 0.5);
  CHECK(d.mean_margin == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("diagnostics insist on paired records") {
  HandScene scene(0.0, 0.0, 0.0);
  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  PreferenceRecord rec = paired_record(scene.ctx, 0, 1);
  rec.winners.push_back(scene.ctx.candidate_responses[2]);
  std::vector<PreferenceRecord> recs = {rec};
  CHECK_THROWS_AS(
      anchor_diagnostics(scene.pair, scene.head, spec, {scene.ctx}, recs),
      ConfigError);

  PreferenceRecord empty = paired_record(scene.ctx, 0, 1);
  empty.losers.clear();
  std::vector<PreferenceRecord> recs2 = {empty};
  CHECK_THROWS_AS(
      anchor_diagnostics(scene.pair, scene.head, spec, {scene.ctx}, recs2),
      ConfigError);
}

TEST_CASE("diagnostics on an empty record set stay at zero") {
  HandScene scene(0.0, 0.0, 0.0);
  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  const AnchorDiagnostics d = anchor_diagnostics(
      scene.pair, scene.head, spec, {scene.ctx}, std::span<const PreferenceRecord>{});
  CHECK(d.triples.empty());
  CHECK(d.sandwich_fraction == 0.0);
  CHECK(d.accuracy == 0.0);
  CHECK(d.mean_margin == 0.0);
}
