#include "prefopt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "prefopt/scalar_math.hpp"

namespace prefopt {

namespace {

TokenSeq random_seq(Rng& rng, uint32_t vocab, size_t len) {
  TokenSeq s;
  s.tokens.reserve(len);
  for (size_t i = 0; i < len; ++i) {
    s.tokens.push_back(static_cast<Token>(rng.below(vocab)));
  }
  return s;
}

// frozen embedding for one token id: standard normal scaled by 1/sqrt(dim)
std::vector<double> token_embedding(uint64_t world_seed, Token t, uint32_t dim) {
  Rng rng(derive_seed(world_seed, 0x10000ULL + t));
  std::vector<double> e(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : e) x = rng.normal() * scale;
  return e;
}

}  // namespace

World gen_world(const WorldSpec& spec) {
  if (spec.prompts == 0 || spec.candidates < 2) {
    throw ConfigError("world needs at least one prompt and two candidates");
  }
  if (spec.vocab == 0 || spec.vocab > 64) {
    throw ConfigError("world vocab must be in [1, 64]");
  }
  if (spec.separation < 0.0 || spec.ref_temperature <= 0.0) {
    throw ConfigError("separation must be >= 0 and temperature > 0");
  }

  World w;
  w.spec = spec;
  w.contexts.reserve(spec.prompts);
  w.rewards.r.reserve(spec.prompts);

  Rng rng(derive_seed(spec.seed, 1));
  for (uint32_t p = 0; p < spec.prompts; ++p) {
    PromptContext ctx;
    ctx.prompt_id = p;
    ctx.tokens = random_seq(rng, spec.vocab, 4 + rng.below(7));  // 4..10

    ctx.candidate_responses.reserve(spec.candidates);
    for (uint32_t c = 0; c < spec.candidates; ++c) {
      // candidate token sequences are distinct within a prompt so lookups by
      // content are unambiguous
      for (int attempt = 0; attempt < 256; ++attempt) {
        TokenSeq cand = random_seq(rng, spec.vocab, 2 + rng.below(11));  // 2..12
        if (std::find(ctx.candidate_responses.begin(),
                      ctx.candidate_responses.end(),
                      cand) == ctx.candidate_responses.end()) {
          ctx.candidate_responses.push_back(std::move(cand));
          break;
        }
      }
    }
    if (ctx.candidate_responses.size() != spec.candidates) {
      throw ConfigError("could not draw distinct candidates; enlarge the vocab");
    }

    if (spec.mode == PolicyMode::Tabular) {
      ctx.hidden_states.reserve(ctx.tokens.tokens.size());
      for (Token t : ctx.tokens.tokens) {
        ctx.hidden_states.push_back(token_embedding(spec.seed, t, spec.dim));
      }
    }

    std::vector<double> r(spec.candidates);
    for (double& x : r) x = rng.normal() * spec.separation;
    w.rewards.r.push_back(std::move(r));
    w.contexts.push_back(std::move(ctx));
  }
  return w;
}

ReferencePair make_reference_pair(const World& world) {
  const WorldSpec& spec = world.spec;
  if (spec.mode == PolicyMode::Tabular) {
    PolicyModel m = PolicyModel::tabular(
        std::vector<uint32_t>(spec.prompts, spec.candidates));
    for (uint32_t p = 0; p < spec.prompts; ++p) {
      for (uint32_t c = 0; c < spec.candidates; ++c) {
        m.params()[m.logit_index(p, c)] =
            world.rewards.r[p][c] / spec.ref_temperature;
      }
    }
    return ReferencePair(std::move(m));
  }
  PolicyModel m = PolicyModel::tiny_lm(spec.vocab, spec.dim);
  Rng rng(derive_seed(spec.seed, 2));
  const double scale = 0.5 / std::sqrt(static_cast<double>(spec.dim));
  for (double& x : m.params()) x = rng.normal() * scale;
  return ReferencePair(std::move(m));
}

const char* form_name(DatasetForm f) {
  switch (f) {
    case DatasetForm::Pairwise: return "pairwise";
    case DatasetForm::Multi: return "multi";
    case DatasetForm::WinnersOnly: return "winners-only";
    case DatasetForm::LosersOnly: return "losers-only";
  }
  return "unknown";
}

DatasetForm parse_form(std::string_view name) {
  if (name == "pairwise") return DatasetForm::Pairwise;
  if (name == "multi") return DatasetForm::Multi;
  if (name == "winners-only") return DatasetForm::WinnersOnly;
  if (name == "losers-only") return DatasetForm::LosersOnly;
  throw ConfigError("unknown dataset form '" + std::string(name) + "'");
}

const char* annotator_name(AnnotatorKind k) {
  return k == AnnotatorKind::RationalBT ? "bt" : "noisy-swap";
}

AnnotatorKind parse_annotator(std::string_view name) {
  if (name == "bt") return AnnotatorKind::RationalBT;
  if (name == "noisy-swap") return AnnotatorKind::NoisySwap;
  throw ConfigError("unknown annotator '" + std::string(name) + "'");
}

DatasetManifest annotate(const World& world, const AnnotatorSpec& annotator,
                         DatasetForm form, uint32_t records_per_prompt,
                         uint64_t construction_seed) {
  if (annotator.kind == AnnotatorKind::RationalBT && annotator.flip_rate != 0.0) {
    throw ConfigError("flip_rate must be 0 for the bt annotator");
  }
  if (annotator.flip_rate < 0.0 || annotator.flip_rate > 1.0) {
    throw ConfigError("flip_rate must be in [0, 1]");
  }
  if (records_per_prompt == 0) {
    throw ConfigError("records_per_prompt must be positive");
  }
  const uint32_t k = world.spec.candidates;
  const bool multi_based = form != DatasetForm::Pairwise;
  if (form == DatasetForm::Pairwise && k < 2) {
    throw ConfigError("pairwise form needs at least 2 candidates");
  }
  if (multi_based && k < 4) {
    throw ConfigError("multi form needs at least 4 candidates (1 winner, 3 losers)");
  }

  DatasetManifest m;
  m.form = form;
  m.world_seed = world.spec.seed;
  m.annotator = annotator;
  m.construction_seed = construction_seed;

  Rng pick(derive_seed(construction_seed, 1));
  Rng label(derive_seed(annotator.seed, 1));
  Rng flip(derive_seed(annotator.seed, 2));

  uint64_t next_id = 0;
  for (uint32_t p = 0; p < world.spec.prompts; ++p) {
    const PromptContext& ctx = world.contexts[p];
    const std::vector<double>& r = world.rewards.r[p];
    for (uint32_t rep = 0; rep < records_per_prompt; ++rep) {
      PreferenceRecord rec;
      rec.record_id = next_id++;
      rec.prompt_id = p;
      rec.prompt_tokens = ctx.tokens;
      if (form == DatasetForm::Pairwise) {
        const uint32_t a = static_cast<uint32_t>(pick.below(k));
        uint32_t b = static_cast<uint32_t>(pick.below(k - 1));
        if (b >= a) ++b;
        const bool a_wins = label.u01() < bt_prob(r[a], r[b]);
        const uint32_t w = a_wins ? a : b;
        const uint32_t l = a_wins ? b : a;
        rec.winners.push_back(ctx.candidate_responses[w]);
        rec.losers.push_back(ctx.candidate_responses[l]);
      } else {
        // winner = arg-max r*; losers = 3 draws from the rest
        const uint32_t w = static_cast<uint32_t>(
            std::max_element(r.begin(), r.end()) - r.begin());
        std::vector<uint32_t> rest;
        rest.reserve(k - 1);
        for (uint32_t c = 0; c < k; ++c) {
          if (c != w) rest.push_back(c);
        }
        for (uint32_t j = 0; j < 3; ++j) {
          const uint32_t idx =
              static_cast<uint32_t>(pick.below(rest.size() - j));
          std::swap(rest[idx], rest[rest.size() - 1 - j]);
        }
        rec.winners.push_back(ctx.candidate_responses[w]);
        for (uint32_t j = 0; j < 3; ++j) {
          rec.losers.push_back(ctx.candidate_responses[rest[rest.size() - 1 - j]]);
        }
      }
      m.records.push_back(std::move(rec));
    }
  }

  if (annotator.kind == AnnotatorKind::NoisySwap && annotator.flip_rate > 0.0) {
    auto swap_record = [&](PreferenceRecord& rec) {
      // pairwise: exchange the two sides; multi: winner trades places with a
      // uniformly chosen loser
      const size_t li = rec.losers.size() == 1
                            ? 0
                            : static_cast<size_t>(flip.below(rec.losers.size()));
      std::swap(rec.winners[0], rec.losers[li]);
    };
    if (annotator.fixed_subset) {
      const auto count = static_cast<size_t>(
          std::llround(annotator.flip_rate * static_cast<double>(m.records.size())));
      std::vector<size_t> idx(m.records.size());
      std::iota(idx.begin(), idx.end(), size_t{0});
      for (size_t i = idx.size(); i > 1; --i) {
        std::swap(idx[i - 1], idx[flip.below(i)]);
      }
      for (size_t i = 0; i < count; ++i) swap_record(m.records[idx[i]]);
    } else {
      for (PreferenceRecord& rec : m.records) {
        if (flip.u01() < annotator.flip_rate) swap_record(rec);
      }
    }
  }

  if (form == DatasetForm::WinnersOnly) {
    for (PreferenceRecord& rec : m.records) rec.losers.clear();
  } else if (form == DatasetForm::LosersOnly) {
    for (PreferenceRecord& rec : m.records) rec.winners.clear();
  }
  return m;
}

double true_winrate(const ReferencePair& pair, const World& world,
                    uint32_t samples, uint64_t seed) {
  if (world.spec.mode != PolicyMode::Tabular) {
    throw ConfigError("true_winrate needs a tabular world");
  }
  if (samples == 0) throw ConfigError("true_winrate needs samples > 0");
  Rng rng(derive_seed(seed, 3));
  double score = 0.0;
  for (uint32_t p = 0; p < world.spec.prompts; ++p) {
    const PromptContext& ctx = world.contexts[p];
    const std::vector<double>& r = world.rewards.r[p];
    for (uint32_t s = 0; s < samples; ++s) {
      const uint32_t cp = sample_candidate(pair.policy, ctx, rng);
      const uint32_t cr = sample_candidate(pair.reference, ctx, rng);
      if (r[cp] > r[cr]) {
        score += 1.0;
      } else if (r[cp] == r[cr]) {
        score += 0.5;
      }
    }
  }
  return score / (static_cast<double>(world.spec.prompts) * samples);
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json seq_to_json(const TokenSeq& s) {
  ordered_json a = ordered_json::array();
  for (Token t : s.tokens) a.push_back(t);
  return a;
}

TokenSeq seq_from_json(const ordered_json& a) {
  TokenSeq s;
  for (const auto& t : a) s.tokens.push_back(t.get<Token>());
  return s;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write manifest to '" + path + "'");

  ordered_json head;
  head["format"] = "preference-records-v1";
  head["form"] = form_name(manifest.form);
  head["world_seed"] = manifest.world_seed;
  head["annotator"] = {{"kind", annotator_name(manifest.annotator.kind)},
                       {"flip_rate", manifest.annotator.flip_rate},
                       {"fixed_subset", manifest.annotator.fixed_subset},
                       {"seed", manifest.annotator.seed}};
  head["construction_seed"] = manifest.construction_seed;
  out << head.dump() << "\n";

  for (const PreferenceRecord& rec : manifest.records) {
    ordered_json j;
    j["record_id"] = rec.record_id;
    j["prompt_id"] = rec.prompt_id;
    j["prompt"] = seq_to_json(rec.prompt_tokens);
    ordered_json winners = ordered_json::array();
    for (const TokenSeq& s : rec.winners) winners.push_back(seq_to_json(s));
    ordered_json losers = ordered_json::array();
    for (const TokenSeq& s : rec.losers) losers.push_back(seq_to_json(s));
    j["winners"] = winners;
    j["losers"] = losers;
    out << j.dump() << "\n";
  }
  if (!out) throw ConfigError("failed while writing '" + path + "'");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read manifest '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("manifest '" + path + "' is empty");

  DatasetManifest m;
  try {
    const ordered_json head = ordered_json::parse(line);
    if (head.at("format").get<std::string>() != "preference-records-v1") {
      throw ConfigError("unsupported manifest format in '" + path + "'");
    }
    m.form = parse_form(head.at("form").get<std::string>());
    m.world_seed = head.at("world_seed").get<uint64_t>();
    const auto& a = head.at("annotator");
    m.annotator.kind = parse_annotator(a.at("kind").get<std::string>());
    m.annotator.flip_rate = a.at("flip_rate").get<double>();
    m.annotator.fixed_subset = a.at("fixed_subset").get<bool>();
    m.annotator.seed = a.at("seed").get<uint64_t>();
    m.construction_seed = head.at("construction_seed").get<uint64_t>();

    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const ordered_json j = ordered_json::parse(line);
      PreferenceRecord rec;
      rec.record_id = j.at("record_id").get<uint64_t>();
      rec.prompt_id = j.at("prompt_id").get<uint32_t>();
      rec.prompt_tokens = seq_from_json(j.at("prompt"));
      for (const auto& s : j.at("winners")) rec.winners.push_back(seq_from_json(s));
      for (const auto& s : j.at("losers")) rec.losers.push_back(seq_from_json(s));
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed manifest '" + path + "': " + e.what());
  }
  return m;
}

}  // namespace prefopt
