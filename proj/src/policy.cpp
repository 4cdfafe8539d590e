#include "prefopt/policy.hpp"

#include <cmath>
#include <cstring>

#include "prefopt/expr.hpp"
#include "prefopt/scalar_math.hpp"

namespace prefopt {

const char* mode_name(PolicyMode m) {
  return m == PolicyMode::Tabular ? "tabular" : "tiny-lm";
}

PolicyMode parse_mode(std::string_view name) {
  if (name == "tabular") return PolicyMode::Tabular;
  if (name == "tiny-lm") return PolicyMode::TinyLM;
  throw ConfigError("unknown policy mode \"" + std::string(name) +
                    "\" (expected \"tabular\" or \"tiny-lm\")");
}

PolicyModel PolicyModel::tabular(std::vector<uint32_t> candidates_per_prompt) {
  PolicyModel m;
  m.mode_ = PolicyMode::Tabular;
  m.offsets_.reserve(candidates_per_prompt.size() + 1);
  m.offsets_.push_back(0);
  for (uint32_t k : candidates_per_prompt) {
    if (k == 0) throw ConfigError("prompt with no candidates");
    m.offsets_.push_back(m.offsets_.back() + k);
  }
  m.params_.assign(m.offsets_.back(), 0.0);
  return m;
}

PolicyModel PolicyModel::tiny_lm(uint32_t vocab, uint32_t dim) {
  if (vocab == 0 || vocab > 64) throw ConfigError("tiny-lm vocab must be in [1, 64]");
  if (dim == 0) throw ConfigError("tiny-lm dim must be positive");
  PolicyModel m;
  m.mode_ = PolicyMode::TinyLM;
  m.vocab_ = vocab;
  m.dim_ = dim;
  m.params_.assign(size_t(vocab) * dim + size_t(dim) * dim + size_t(dim) * vocab,
                   0.0);
  return m;
}

uint32_t PolicyModel::prompt_count() const {
  return static_cast<uint32_t>(offsets_.size() - 1);
}

uint32_t PolicyModel::candidate_count(uint32_t prompt_id) const {
  if (mode_ != PolicyMode::Tabular || prompt_id + 1 >= offsets_.size()) {
    throw ConfigError("unknown prompt id " + std::to_string(prompt_id));
  }
  return static_cast<uint32_t>(offsets_[prompt_id + 1] - offsets_[prompt_id]);
}

size_t PolicyModel::logit_index(uint32_t prompt_id, uint32_t candidate) const {
  if (candidate >= candidate_count(prompt_id)) {
    throw ConfigError("candidate index out of range for prompt " +
                      std::to_string(prompt_id));
  }
  return offsets_[prompt_id] + candidate;
}

int find_candidate(const PromptContext& ctx, const TokenSeq& response) {
  for (size_t i = 0; i < ctx.candidate_responses.size(); ++i) {
    if (ctx.candidate_responses[i] == response) return static_cast<int>(i);
  }
  return -1;
}

double seq_logprob(const PolicyModel& model, const PromptContext& ctx,
                   const TokenSeq& response) {
  ValueEnv env{&model, nullptr};
  return seq_logprob_expr(env, model, ctx, response);
}

std::vector<std::vector<double>> prompt_hidden_states(const PolicyModel& model,
                                                      const PromptContext& ctx) {
  if (model.mode() == PolicyMode::Tabular) {
    if (ctx.hidden_states.size() != ctx.tokens.tokens.size()) {
      throw ConfigError("context is missing frozen hidden states");
    }
    return ctx.hidden_states;
  }
  ValueEnv env{&model, nullptr};
  return prompt_hidden_states_expr(env, model, ctx);
}

double exact_kl(const ReferencePair& pair, const PromptContext& ctx) {
  if (pair.policy.mode() != PolicyMode::Tabular) {
    throw ConfigError("exact_kl needs an enumerable candidate set; use mc_kl");
  }
  const uint32_t k = pair.policy.candidate_count(ctx.prompt_id);
  if (ctx.candidate_responses.size() != k) {
    throw ConfigError("context candidates do not match the model table");
  }
  double kl = 0.0;
  for (uint32_t c = 0; c < k; ++c) {
    const TokenSeq& y = ctx.candidate_responses[c];
    const double lp = seq_logprob(pair.policy, ctx, y);
    const double lr = seq_logprob(pair.reference, ctx, y);
    kl += std::exp(lp) * (lp - lr);
  }
  return kl;
}

double mc_kl(const ReferencePair& pair, const PromptContext& ctx,
             uint32_t samples, uint64_t seed) {
  Rng rng(seed);
  double acc = 0.0;
  if (pair.policy.mode() == PolicyMode::Tabular) {
    for (uint32_t s = 0; s < samples; ++s) {
      const uint32_t c = sample_candidate(pair.policy, ctx, rng);
      const TokenSeq& y = ctx.candidate_responses[c];
      acc += seq_logprob(pair.policy, ctx, y) - seq_logprob(pair.reference, ctx, y);
    }
    return acc / samples;
  }
  // Sample fixed-length responses token by token from the policy. The length
  // is pinned to the first registered candidate so the two distributions
  // share a support.
  const size_t len = ctx.candidate_responses.empty()
                         ? 8
                         : ctx.candidate_responses[0].length();
  const PolicyModel& pm = pair.policy;
  const PolicyModel& rm = pair.reference;
  ValueEnv penv{&pm, nullptr};
  ValueEnv renv{&rm, nullptr};
  for (uint32_t s = 0; s < samples; ++s) {
    auto hp = prompt_hidden_states_expr(penv, pm, ctx).back();
    auto hr = prompt_hidden_states_expr(renv, rm, ctx).back();
    double ratio = 0.0;
    for (size_t i = 0; i < len; ++i) {
      // categorical draw from the policy's next-token softmax
      std::vector<double> lp(pm.vocab());
      for (Token t = 0; t < pm.vocab(); ++t) {
        lp[t] = tinylm_token_logprob_expr(penv, pm, hp, t);
      }
      double u = rng.u01();
      Token pick = pm.vocab() - 1;
      double cum = 0.0;
      for (Token t = 0; t < pm.vocab(); ++t) {
        cum += std::exp(lp[t]);
        if (u < cum) {
          pick = t;
          break;
        }
      }
      ratio += lp[pick] - tinylm_token_logprob_expr(renv, rm, hr, pick);
      hp = tinylm_step_expr(penv, pm, &hp, pick);
      hr = tinylm_step_expr(renv, rm, &hr, pick);
    }
    acc += ratio;
  }
  return acc / samples;
}

uint32_t sample_candidate(const PolicyModel& model, const PromptContext& ctx,
                          Rng& rng) {
  if (model.mode() != PolicyMode::Tabular) {
    throw ConfigError("sample_candidate needs a tabular model");
  }
  const uint32_t k = model.candidate_count(ctx.prompt_id);
  std::vector<double> logits(k);
  for (uint32_t c = 0; c < k; ++c) {
    logits[c] = model.params()[model.logit_index(ctx.prompt_id, c)];
  }
  const double lse = logsumexp(logits);
  const double u = rng.u01();
  double cum = 0.0;
  for (uint32_t c = 0; c < k; ++c) {
    cum += std::exp(logits[c] - lse);
    if (u < cum) return c;
  }
  return k - 1;
}

uint64_t param_hash(const PolicyModel& model) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (double p : model.params()) {
    uint64_t bits;
    std::memcpy(&bits, &p, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace prefopt
