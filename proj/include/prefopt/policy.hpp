#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/common.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

using Token = uint32_t;

struct TokenSeq {
  std::vector<Token> tokens;

  size_t length() const { return tokens.size(); }
  bool operator==(const TokenSeq&) const = default;
};

// One prompt plus everything frozen that belongs to it. In tabular mode the
// candidate set is the model's support and hidden_states carries one frozen
// embedding vector per prompt token.
struct PromptContext {
  uint32_t prompt_id = 0;
  TokenSeq tokens;
  std::vector<TokenSeq> candidate_responses;
  std::vector<std::vector<double>> hidden_states;
};

enum class PolicyMode { Tabular, TinyLM };

const char* mode_name(PolicyMode m);
PolicyMode parse_mode(std::string_view name);

// Differentiable policy over responses. Tabular mode keeps one logit per
// (prompt, candidate). TinyLM mode is a tiny recurrent token model:
//   h_i = tanh(W_h h_{i-1} + emb[t_i]),  logits_i = W_o' h_i.
// Parameters live in one flat vector so the optimizer and the gradient
// layout stay trivial.
class PolicyModel {
 public:
  static PolicyModel tabular(std::vector<uint32_t> candidates_per_prompt);
  static PolicyModel tiny_lm(uint32_t vocab, uint32_t dim);

  PolicyMode mode() const { return mode_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  size_t param_count() const { return params_.size(); }

  // tabular layout
  uint32_t prompt_count() const;
  uint32_t candidate_count(uint32_t prompt_id) const;
  size_t logit_index(uint32_t prompt_id, uint32_t candidate) const;

  // tiny-lm layout
  uint32_t vocab() const { return vocab_; }
  uint32_t dim() const { return dim_; }
  size_t emb_index(Token t, uint32_t j) const { return size_t(t) * dim_ + j; }
  size_t hid_index(uint32_t i, uint32_t j) const {
    return size_t(vocab_) * dim_ + size_t(i) * dim_ + j;
  }
  size_t out_index(uint32_t i, Token k) const {
    return size_t(vocab_) * dim_ + size_t(dim_) * dim_ + size_t(i) * vocab_ + k;
  }

 private:
  PolicyMode mode_ = PolicyMode::Tabular;
  std::vector<double> params_;
  std::vector<size_t> offsets_;  // tabular: prompt -> first logit index
  uint32_t vocab_ = 0;
  uint32_t dim_ = 0;
};

// Trainable policy plus its frozen twin. The reference is a deep copy taken
// at construction and must never change afterwards.
struct ReferencePair {
  PolicyModel policy;
  PolicyModel reference;

  explicit ReferencePair(PolicyModel init) : policy(init), reference(std::move(init)) {}
  ReferencePair(PolicyModel trained, PolicyModel ref)
      : policy(std::move(trained)), reference(std::move(ref)) {}
};

// index of a registered candidate with identical tokens, or -1
int find_candidate(const PromptContext& ctx, const TokenSeq& response);

// log pi(response | prompt) under the model
double seq_logprob(const PolicyModel& model, const PromptContext& ctx,
                   const TokenSeq& response);

// Per-prompt-token hidden vectors. Tabular mode returns the frozen embeddings
// stored in the context; TinyLM mode runs the recurrence over prompt tokens.
std::vector<std::vector<double>> prompt_hidden_states(const PolicyModel& model,
                                                      const PromptContext& ctx);

// KL(pi_theta(.|x) || pi_ref(.|x)) summed over the candidate set. Tabular only.
double exact_kl(const ReferencePair& pair, const PromptContext& ctx);

// Monte Carlo estimate of the same KL from samples of pi_theta. Works in both
// modes; deterministic given the seed.
double mc_kl(const ReferencePair& pair, const PromptContext& ctx,
             uint32_t samples, uint64_t seed);

// sample a candidate index from the tabular softmax
uint32_t sample_candidate(const PolicyModel& model, const PromptContext& ctx,
                          Rng& rng);

// FNV-1a over the raw parameter bytes; used to prove the reference stays frozen
uint64_t param_hash(const PolicyModel& model);

}  // namespace prefopt
