#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prefopt/analysis.hpp"
#include "prefopt/checkpoint.hpp"
#include "prefopt/config.hpp"

namespace prefopt {

// One telemetry row. reward_* are means over the dataset; margin and accuracy
// cover records that carry both sides; kl_exact averages the policy/reference
// KL over record prompts; kl_winner_logratio is the mean winner log-ratio
// log pi_theta(y_w) - log pi_ref(y_w). grad_norm is the L2 norm of the
// full-dataset mean gradient at that step.
struct MetricsRow {
  uint64_t step = 0;
  double loss = 0.0;
  double reward_w = 0.0;
  double reward_l = 0.0;
  double reward_anchor = 0.0;
  double margin = 0.0;
  double accuracy = 0.0;
  double kl_exact = 0.0;
  double kl_winner_logratio = 0.0;
  double grad_norm = 0.0;
};

const char* metrics_header();
std::string format_metrics_row(const MetricsRow& row);
std::vector<MetricsRow> load_metrics(const std::string& path);

struct TrainResult {
  RunConfig cfg;
  World world;
  DatasetManifest data;
  ReferencePair pair;  // trained policy alongside the frozen reference
  AnchorHead head;
  std::vector<MetricsRow> rows;
  uint64_t steps = 0;
  double wall_seconds = 0.0;
};

// Deterministic end to end: the same config always produces byte-identical
// metrics and checkpoint files. On a numerical abort the last good parameters
// are checkpointed before the error propagates.
TrainResult train(const RunConfig& cfg);

struct EvalReport {
  double heldout_accuracy = 0.0;  // fresh rational pairwise annotations; ties fail
  uint32_t heldout_records = 0;
  double true_winrate = 0.0;  // policy sample beats reference sample on r*
  double kl_exact = 0.0;      // mean over prompts (sampling estimate for tiny-lm)
  double kl_winner_logratio = 0.0;
  uint64_t step = 0;          // training steps behind the evaluated parameters
};

EvalReport evaluate(const RunConfig& cfg, const ReferencePair& pair,
                    const AnchorHead& head, const World& world, uint64_t step);
EvalReport evaluate(const TrainResult& result);

// One row per config, in input order. Degradation columns compare a noisy run
// (flip_rate > 0) against the clean run with the same method and annotator
// seed as (noisy - clean) / clean; rows without a match report nan.
struct CompareRow {
  std::string name;
  Method method = Method::DPO;
  uint64_t annotator_seed = 0;
  double flip_rate = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double margin = 0.0;
  double heldout_accuracy = 0.0;
  double true_winrate = 0.0;
  double heldout_degradation = 0.0;
  double winrate_degradation = 0.0;
};

std::vector<CompareRow> compare(const std::vector<RunConfig>& configs);
std::string format_compare_csv(const std::vector<CompareRow>& rows);

enum class Series { Anchor, Margin, Accuracy, Kl };

Series parse_series(std::string_view name);

// column-oriented extract of one series, ready for any plotting tool
std::string plot_series(const std::vector<MetricsRow>& rows, Series series);

}  // namespace prefopt
