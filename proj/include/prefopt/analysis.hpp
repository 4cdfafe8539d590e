#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "prefopt/objectives.hpp"

namespace prefopt {

struct TheoryReport {
  std::string check;
  uint64_t instances = 0;
  uint64_t violations = 0;
  double worst_margin = 0.0;  // largest observed violation amount; <= 0 means none
  bool pass = false;
};

// log sigmoid(a-m) + log sigmoid(m-b) <= log sigmoid(a-b) on uniform triples
// from [-range, range]^3, tolerance 1e-12
TheoryReport check_sigmoid_bound(uint64_t n_samples, double range, uint64_t seed,
                                 Exec exec = Exec::Parallel);

// the anchored pairwise loss never undercuts the plain paired loss at gamma=0:
// loss_anchored >= loss_paired on random instances, tolerance 1e-12
TheoryReport check_lower_bound(uint32_t instances, uint64_t seed);

// tape gradient of the winner term -log sigmoid(r_w - r_anchor) equals
// -beta * sigmoid(-(r_w - r_anchor)) * (grad log pi(y_w) - grad anchor ratio)
// componentwise within 1e-8, gamma = 0
TheoryReport check_gradient_decomposition(uint32_t instances, uint64_t seed);

struct AnchorDiagnostics {
  std::vector<std::array<double, 3>> triples;  // (r_w, r_anchor, r_l) per record
  double sandwich_fraction = 0.0;         // r_w >= r_anchor >= r_l
  double strict_sandwich_fraction = 0.0;  // strict inequalities
  double mean_margin = 0.0;               // mean (r_w - r_l)
  double accuracy = 0.0;                  // fraction r_w > r_l; ties fail
};

// paired records only
AnchorDiagnostics anchor_diagnostics(const ReferencePair& pair,
                                     const AnchorHead& head,
                                     const ObjectiveSpec& spec,
                                     const std::vector<PromptContext>& contexts,
                                     std::span<const PreferenceRecord> records);

}  // namespace prefopt
