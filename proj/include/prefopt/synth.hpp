#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefopt/objectives.hpp"
#include "prefopt/policy.hpp"

namespace prefopt {

// A lab world: prompts, candidate responses, latent true rewards r*, and a
// reference policy that is a softmax of r*/temperature (tabular mode).
struct WorldSpec {
  uint32_t prompts = 100;
  uint32_t candidates = 5;
  uint32_t vocab = 64;
  uint32_t dim = 8;
  double separation = 3.0;       // std-dev of the latent rewards
  double ref_temperature = 2.0;  // reference = softmax(r* / temperature)
  uint64_t seed = 1;
  PolicyMode mode = PolicyMode::Tabular;
};

struct TrueRewardTable {
  std::vector<std::vector<double>> r;  // [prompt][candidate]
};

struct World {
  WorldSpec spec;
  std::vector<PromptContext> contexts;  // indexed by prompt_id
  TrueRewardTable rewards;
};

World gen_world(const WorldSpec& spec);

// policy initialized to the reference; tabular logits are r*/temperature,
// tiny-lm parameters are a seeded random draw
ReferencePair make_reference_pair(const World& world);

enum class AnnotatorKind { RationalBT, NoisySwap };

// RationalBT labels a pair by the Bradley-Terry draw on true rewards.
// NoisySwap applies the same labeling, then swaps winner and loser either
// independently per record with probability flip_rate or on a fixed seeded
// subset of round(flip_rate * n) records.
struct AnnotatorSpec {
  AnnotatorKind kind = AnnotatorKind::RationalBT;
  double flip_rate = 0.0;
  bool fixed_subset = false;
  uint64_t seed = 2;
};

enum class DatasetForm { Pairwise, Multi, WinnersOnly, LosersOnly };

const char* form_name(DatasetForm f);
DatasetForm parse_form(std::string_view name);
const char* annotator_name(AnnotatorKind k);
AnnotatorKind parse_annotator(std::string_view name);

struct DatasetManifest {
  DatasetForm form = DatasetForm::Pairwise;
  uint64_t world_seed = 0;
  AnnotatorSpec annotator;
  uint64_t construction_seed = 0;
  std::vector<PreferenceRecord> records;
};

// records_per_prompt records for every prompt, ids assigned 0..n-1 in order.
// Pair selection uses construction_seed; labels and swaps use annotator.seed.
DatasetManifest annotate(const World& world, const AnnotatorSpec& annotator,
                         DatasetForm form, uint32_t records_per_prompt,
                         uint64_t construction_seed);

// fraction of (prompt, sample) draws where a policy sample beats an
// independent reference sample on r*; ties count 1/2
double true_winrate(const ReferencePair& pair, const World& world,
                    uint32_t samples, uint64_t seed);

// line-delimited records with a provenance header line; byte-stable
void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace prefopt
