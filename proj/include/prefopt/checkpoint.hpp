#pragma once

#include <cstdint>
#include <string>

#include "prefopt/rewards.hpp"

namespace prefopt {

// Everything needed to restore a trained run: both models, the anchor head
// with its construction snapshot, the seed lineage, and the step count.
// Stored as a little-endian binary container; round-trips are bit-exact.
struct Checkpoint {
  PolicyModel policy;
  PolicyModel reference;
  AnchorHead head;
  uint64_t world_seed = 0;
  uint64_t annotator_seed = 0;
  uint64_t construction_seed = 0;
  uint64_t step = 0;
};

// written to a temp file in the same directory, then renamed into place
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace prefopt
