#pragma once

#include <cstdint>

#include "prefopt/objectives.hpp"
#include "prefopt/synth.hpp"

namespace prefopt {

// Small self-contained problem: a little world, a perturbed policy, a random
// anchor head, one record. Used for gradient checks and the analysis suite.
struct RandomInstance {
  World world;
  ReferencePair pair;
  AnchorHead head;
  ObjectiveSpec spec;
  PreferenceRecord record;

  RandomInstance(World w, ReferencePair p, AnchorHead h)
      : world(std::move(w)), pair(std::move(p)), head(std::move(h)) {}
};

RandomInstance make_random_instance(Method method, PolicyMode mode,
                                    uint64_t seed);

// dense tape gradient of one record's loss, trainable layout
std::vector<double> tape_gradient(const RandomInstance& inst, const LossAux& aux);

// central-difference gradient of the same loss; aux is held at the center
// point so both sides differentiate the identical function
std::vector<double> fd_gradient(const RandomInstance& inst, const LossAux& aux,
                                double h = 1e-5);

struct GradCheckReport {
  Method method;
  PolicyMode mode;
  uint32_t instances = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

GradCheckReport gradcheck_method(Method method, PolicyMode mode,
                                 uint32_t instances, uint64_t seed,
                                 double tolerance = 1e-4);

}  // namespace prefopt
