#pragma once

#include <cstdint>
#include <string>

#include "prefopt/optim.hpp"
#include "prefopt/synth.hpp"

namespace prefopt {

struct DataConfig {
  DatasetForm form = DatasetForm::Pairwise;
  AnnotatorSpec annotator;
  uint32_t records_per_prompt = 1;
  uint64_t construction_seed = 3;
  std::string path;  // when set, records are loaded instead of generated
};

struct OptimizerConfig {
  AdamConfig adam;       // lr defaults to the desk-scale 1e-2
  uint32_t batch_size = 64;
  uint32_t epochs = 1;
  uint64_t steps = 0;    // 0: derived from epochs; otherwise total step count
};

struct EvalConfig {
  uint32_t records_per_prompt = 10;  // fresh held-out annotations
  uint32_t winrate_samples = 20;
  uint64_t seed = 9;
};

struct RunConfig {
  std::string name = "run";
  WorldSpec world;
  DataConfig data;
  ObjectiveSpec objective;
  OptimizerConfig optimizer;
  uint32_t telemetry_cadence = 10;
  std::string metrics_path = "metrics.csv";
  std::string checkpoint_path = "model.ckpt";
  EvalConfig eval;
  bool parallel = true;
};

// Strict JSON tree: unknown keys anywhere are errors, every missing key takes
// its documented default.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text, const std::string& origin);

// resolved total step count for a dataset of n records
uint64_t planned_steps(const OptimizerConfig& opt, size_t n_records);

}  // namespace prefopt
