#include "prefopt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "prefopt/loss_expr.hpp"
#include "prefopt/optim.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {
namespace {

// seed streams hung off world.seed; training and telemetry draws never collide
constexpr uint64_t kTelemetryAuxStream = 11;
constexpr uint64_t kTrainAuxStream = 12;
constexpr uint64_t kTelemetryKlStream = 13;
constexpr uint32_t kTelemetryKlSamples = 64;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double prompt_kl(const ReferencePair& pair, const PromptContext& ctx,
                 uint64_t seed) {
  if (pair.policy.mode() == PolicyMode::Tabular) return exact_kl(pair, ctx);
  return mc_kl(pair, ctx, kTelemetryKlSamples, seed);
}

struct Dataset {
  World world;
  DatasetManifest data;
};

Dataset prepare_dataset(const RunConfig& cfg) {
  World world = gen_world(cfg.world);
  DatasetManifest data;
  if (!cfg.data.path.empty()) {
    data = load_manifest(cfg.data.path);
    if (data.world_seed != cfg.world.seed) {
      throw ConfigError("manifest \"" + cfg.data.path + "\" was built for world seed " +
                        std::to_string(data.world_seed) + ", config has " +
                        std::to_string(cfg.world.seed));
    }
    for (const PreferenceRecord& rec : data.records) {
      if (rec.prompt_id >= world.contexts.size()) {
        throw ConfigError("record " + std::to_string(rec.record_id) +
                          " references prompt " + std::to_string(rec.prompt_id) +
                          " outside the world");
      }
      const PromptContext& ctx = world.contexts[rec.prompt_id];
      for (const TokenSeq& w : rec.winners) {
        if (find_candidate(ctx, w) < 0) {
          throw ConfigError("record " + std::to_string(rec.record_id) +
                            " has a winner that is not a candidate of prompt " +
                            std::to_string(rec.prompt_id));
        }
      }
      for (const TokenSeq& l : rec.losers) {
        if (find_candidate(ctx, l) < 0) {
          throw ConfigError("record " + std::to_string(rec.record_id) +
                            " has a loser that is not a candidate of prompt " +
                            std::to_string(rec.prompt_id));
        }
      }
    }
  } else {
    data = annotate(world, cfg.data.annotator, cfg.data.form,
                    cfg.data.records_per_prompt, cfg.data.construction_seed);
  }
  if (data.records.empty()) throw ConfigError("dataset has no records");
  for (const PreferenceRecord& rec : data.records) {
    validate_record(cfg.objective, rec);
  }
  return {std::move(world), std::move(data)};
}

MetricsRow telemetry_row(const RunConfig& cfg, const ReferencePair& pair,
                         const AnchorHead& head, const World& world,
                         const DatasetManifest& data, uint64_t step) {
  const Exec exec = cfg.parallel ? Exec::Parallel : Exec::Serial;
  const uint64_t aux_seed =
      derive_seed(derive_seed(cfg.world.seed, kTelemetryAuxStream), step);
  BatchGradResult bg = batch_grad(cfg.objective, pair, head, world.contexts,
                                  data.records, {}, exec, aux_seed);

  MetricsRow row;
  row.step = step;
  row.loss = bg.loss;

  double sum_w = 0.0, sum_l = 0.0, sum_anchor = 0.0;
  size_t n_w = 0, n_l = 0;
  double sum_margin = 0.0;
  size_t n_paired = 0, n_correct = 0;
  double sum_lr = 0.0;
  size_t n_lr = 0;
  double sum_kl = 0.0;
  const uint64_t kl_base =
      derive_seed(derive_seed(cfg.world.seed, kTelemetryKlStream), step);

  for (size_t i = 0; i < data.records.size(); ++i) {
    const PreferenceRecord& rec = data.records[i];
    const PromptContext& ctx = world.contexts[rec.prompt_id];
    const RecordRewards& rr = bg.rewards[i];
    for (double w : rr.winners) {
      sum_w += w;
      ++n_w;
    }
    for (double l : rr.losers) {
      sum_l += l;
      ++n_l;
    }
    sum_anchor += rr.anchor;
    if (!rr.winners.empty() && !rr.losers.empty()) {
      ++n_paired;
      sum_margin += mean_of(rr.winners) - mean_of(rr.losers);
      const double min_w = *std::min_element(rr.winners.begin(), rr.winners.end());
      const double max_l = *std::max_element(rr.losers.begin(), rr.losers.end());
      if (min_w > max_l) ++n_correct;
    }
    for (const TokenSeq& w : rec.winners) {
      sum_lr += seq_logprob(pair.policy, ctx, w) - seq_logprob(pair.reference, ctx, w);
      ++n_lr;
    }
    sum_kl += prompt_kl(pair, ctx, derive_seed(kl_base, rec.record_id));
  }

  const double n = static_cast<double>(data.records.size());
  row.reward_w = n_w ? sum_w / static_cast<double>(n_w) : 0.0;
  row.reward_l = n_l ? sum_l / static_cast<double>(n_l) : 0.0;
  row.reward_anchor = sum_anchor / n;
  row.margin = n_paired ? sum_margin / static_cast<double>(n_paired) : 0.0;
  row.accuracy = n_paired ? static_cast<double>(n_correct) / static_cast<double>(n_paired) : 0.0;
  row.kl_exact = sum_kl / n;
  row.kl_winner_logratio = n_lr ? sum_lr / static_cast<double>(n_lr) : 0.0;
  row.grad_norm = l2_norm(bg.grad);
  return row;
}

Checkpoint make_checkpoint(const RunConfig& cfg, const ReferencePair& pair,
                           const AnchorHead& head, uint64_t step) {
  return Checkpoint{pair.policy,           pair.reference,
                    head,                  cfg.world.seed,
                    cfg.data.annotator.seed, cfg.data.construction_seed,
                    step};
}

}  // namespace

const char* metrics_header() {
  return "step,loss,reward_w,reward_l,reward_anchor,margin,accuracy,"
         "kl_exact,kl_winner_logratio,grad_norm";
}

std::string format_metrics_row(const MetricsRow& r) {
  std::string out = std::to_string(r.step);
  const double vals[] = {r.loss,     r.reward_w, r.reward_l,
                         r.reward_anchor, r.margin,   r.accuracy,
                         r.kl_exact, r.kl_winner_logratio, r.grad_norm};
  for (double v : vals) {
    out += ',';
    out += g17(v);
  }
  return out;
}

std::vector<MetricsRow> load_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open metrics file \"" + path + "\"");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics file \"" + path + "\" is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != metrics_header()) {
    throw ConfigError("metrics file \"" + path + "\" has an unexpected header");
  }
  std::vector<MetricsRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 10) {
      throw ConfigError("metrics file \"" + path + "\" line " +
                        std::to_string(lineno) + ": expected 10 fields");
    }
    MetricsRow r;
    char* end = nullptr;
    r.step = std::strtoull(fields[0].c_str(), &end, 10);
    if (end == fields[0].c_str() || *end != '\0') {
      throw ConfigError("metrics file \"" + path + "\" line " +
                        std::to_string(lineno) + ": bad step");
    }
    double* slots[] = {&r.loss,     &r.reward_w, &r.reward_l,
                       &r.reward_anchor, &r.margin,   &r.accuracy,
                       &r.kl_exact, &r.kl_winner_logratio, &r.grad_norm};
    for (size_t i = 0; i < 9; ++i) {
      const std::string& f = fields[i + 1];
      end = nullptr;
      *slots[i] = std::strtod(f.c_str(), &end);
      if (end == f.c_str() || *end != '\0') {
        throw ConfigError("metrics file \"" + path + "\" line " +
                          std::to_string(lineno) + ": bad number \"" + f + "\"");
      }
    }
    rows.push_back(r);
  }
  return rows;
}

TrainResult train(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  Dataset ds = prepare_dataset(cfg);
  ReferencePair pair = make_reference_pair(ds.world);
  AnchorHead head(ds.world.spec.dim,
                  family_of(cfg.objective.method) == RewardFamily::LengthNorm);

  std::ofstream out(cfg.metrics_path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open metrics output \"" + cfg.metrics_path + "\"");
  out << metrics_header() << "\n";

  std::vector<MetricsRow> rows;
  auto log_row = [&](uint64_t step) {
    rows.push_back(telemetry_row(cfg, pair, head, ds.world, ds.data, step));
    out << format_metrics_row(rows.back()) << "\n";
    out.flush();
  };

  log_row(0);

  const uint64_t steps = planned_steps(cfg.optimizer, ds.data.records.size());
  const Exec exec = cfg.parallel ? Exec::Parallel : Exec::Serial;
  const uint64_t aux_base = derive_seed(cfg.world.seed, kTrainAuxStream);
  const size_t n = ds.data.records.size();
  std::vector<double> flat = gather_trainable(pair, head);
  AdamState adam(flat.size());
  std::vector<PreferenceRecord> batch;
  batch.reserve(cfg.optimizer.batch_size);
  size_t cursor = 0;

  for (uint64_t step = 1; step <= steps; ++step) {
    batch.clear();
    for (uint32_t i = 0; i < cfg.optimizer.batch_size; ++i) {
      batch.push_back(ds.data.records[(cursor + i) % n]);
    }
    cursor = (cursor + cfg.optimizer.batch_size) % n;
    try {
      BatchGradResult bg = batch_grad(cfg.objective, pair, head, ds.world.contexts,
                                      batch, {}, exec, derive_seed(aux_base, step));
      adam_step(adam, cfg.optimizer.adam, flat, bg.grad);
      scatter_trainable(pair, head, flat);
    } catch (const NumericError&) {
      // parameters have not been touched this step; persist them before failing
      save_checkpoint(make_checkpoint(cfg, pair, head, step - 1), cfg.checkpoint_path);
      throw;
    }
    if (step % cfg.telemetry_cadence == 0 || step == steps) log_row(step);
  }

  save_checkpoint(make_checkpoint(cfg, pair, head, steps), cfg.checkpoint_path);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return TrainResult{cfg,
                     std::move(ds.world),
                     std::move(ds.data),
                     std::move(pair),
                     std::move(head),
                     std::move(rows),
                     steps,
                     wall};
}

EvalReport evaluate(const RunConfig& cfg, const ReferencePair& pair,
                    const AnchorHead& head, const World& world, uint64_t step) {
  (void)head;  // held-out accuracy compares policy rewards; the anchor cancels
  AnnotatorSpec rational;
  rational.kind = AnnotatorKind::RationalBT;
  rational.seed = derive_seed(cfg.eval.seed, 1);
  DatasetManifest held =
      annotate(world, rational, DatasetForm::Pairwise, cfg.eval.records_per_prompt,
               derive_seed(cfg.eval.seed, 2));

  const RewardSpec rs = cfg.objective.reward_spec();
  size_t correct = 0;
  double sum_lr = 0.0;
  for (const PreferenceRecord& rec : held.records) {
    const PromptContext& ctx = world.contexts[rec.prompt_id];
    const double rw = reward_policy(pair, rs, ctx, rec.winners[0]);
    const double rl = reward_policy(pair, rs, ctx, rec.losers[0]);
    if (rw > rl) ++correct;
    sum_lr += seq_logprob(pair.policy, ctx, rec.winners[0]) -
              seq_logprob(pair.reference, ctx, rec.winners[0]);
  }

  EvalReport rep;
  rep.heldout_records = static_cast<uint32_t>(held.records.size());
  rep.heldout_accuracy =
      held.records.empty()
          ? 0.0
          : static_cast<double>(correct) / static_cast<double>(held.records.size());
  rep.kl_winner_logratio =
      held.records.empty() ? 0.0 : sum_lr / static_cast<double>(held.records.size());
  rep.true_winrate =
      world.spec.mode == PolicyMode::Tabular
          ? true_winrate(pair, world, cfg.eval.winrate_samples,
                         derive_seed(cfg.eval.seed, 3))
          : std::numeric_limits<double>::quiet_NaN();

  double sum_kl = 0.0;
  const uint64_t kl_base = derive_seed(cfg.eval.seed, 4);
  for (const PromptContext& ctx : world.contexts) {
    sum_kl += prompt_kl(pair, ctx, derive_seed(kl_base, ctx.prompt_id));
  }
  rep.kl_exact = world.contexts.empty()
                     ? 0.0
                     : sum_kl / static_cast<double>(world.contexts.size());
  rep.step = step;
  return rep;
}

EvalReport evaluate(const TrainResult& result) {
  return evaluate(result.cfg, result.pair, result.head, result.world, result.steps);
}

std::vector<CompareRow> compare(const std::vector<RunConfig>& configs) {
  if (configs.empty()) throw ConfigError("compare needs at least one config");
  for (const RunConfig& cfg : configs) {
    if (cfg.world.seed != configs.front().world.seed) {
      throw ConfigError("compare configs must share world.seed (\"" + cfg.name +
                        "\" has " + std::to_string(cfg.world.seed) + ", \"" +
                        configs.front().name + "\" has " +
                        std::to_string(configs.front().world.seed) + ")");
    }
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<CompareRow> rows;
  rows.reserve(configs.size());
  for (const RunConfig& cfg : configs) {
    TrainResult res = train(cfg);
    EvalReport ev = evaluate(res);
    CompareRow row;
    row.name = cfg.name;
    row.method = cfg.objective.method;
    row.annotator_seed = cfg.data.annotator.seed;
    row.flip_rate =
        cfg.data.annotator.kind == AnnotatorKind::NoisySwap ? cfg.data.annotator.flip_rate : 0.0;
    row.loss = res.rows.back().loss;
    row.train_accuracy = res.rows.back().accuracy;
    row.margin = res.rows.back().margin;
    row.heldout_accuracy = ev.heldout_accuracy;
    row.true_winrate = ev.true_winrate;
    row.heldout_degradation = nan;
    row.winrate_degradation = nan;
    rows.push_back(std::move(row));
  }

  for (CompareRow& noisy : rows) {
    if (!(noisy.flip_rate > 0.0)) continue;
    const CompareRow* clean = nullptr;
    bool unique = true;
    for (const CompareRow& cand : rows) {
      if (cand.flip_rate == 0.0 && cand.method == noisy.method &&
          cand.annotator_seed == noisy.annotator_seed) {
        if (clean) unique = false;
        clean = &cand;
      }
    }
    if (clean && unique) {
      noisy.heldout_degradation =
          (noisy.heldout_accuracy - clean->heldout_accuracy) / clean->heldout_accuracy;
      noisy.winrate_degradation =
          (noisy.true_winrate - clean->true_winrate) / clean->true_winrate;
    }
  }
  return rows;
}

std::string format_compare_csv(const std::vector<CompareRow>& rows) {
  std::string out =
      "name,method,annotator_seed,flip_rate,loss,train_accuracy,margin,"
      "heldout_accuracy,true_winrate,heldout_degradation,winrate_degradation\n";
  for (const CompareRow& r : rows) {
    out += csv_field(r.name);
    out += ',';
    out += method_name(r.method);
    out += ',';
    out += std::to_string(r.annotator_seed);
    const double vals[] = {r.flip_rate,       r.loss,
                           r.train_accuracy,  r.margin,
                           r.heldout_accuracy, r.true_winrate,
                           r.heldout_degradation, r.winrate_degradation};
    for (double v : vals) {
      out += ',';
      out += g17(v);
    }
    out += '\n';
  }
  return out;
}

Series parse_series(std::string_view name) {
  if (name == "anchor") return Series::Anchor;
  if (name == "margin") return Series::Margin;
  if (name == "accuracy") return Series::Accuracy;
  if (name == "kl") return Series::Kl;
  throw ConfigError("unknown series \"" + std::string(name) +
                    "\" (expected anchor, margin, accuracy, or kl)");
}

std::string plot_series(const std::vector<MetricsRow>& rows, Series series) {
  std::string out;
  switch (series) {
    case Series::Anchor:
      out = "step,reward_w,reward_anchor,reward_l\n";
      for (const MetricsRow& r : rows) {
        out += std::to_string(r.step) + ',' + g17(r.reward_w) + ',' +
               g17(r.reward_anchor) + ',' + g17(r.reward_l) + '\n';
      }
      break;
    case Series::Margin:
      out = "step,margin\n";
      for (const MetricsRow& r : rows) {
        out += std::to_string(r.step) + ',' + g17(r.margin) + '\n';
      }
      break;
    case Series::Accuracy:
      out = "step,accuracy\n";
      for (const MetricsRow& r : rows) {
        out += std::to_string(r.step) + ',' + g17(r.accuracy) + '\n';
      }
      break;
    case Series::Kl:
      out = "step,kl_exact,kl_winner_logratio\n";
      for (const MetricsRow& r : rows) {
        out += std::to_string(r.step) + ',' + g17(r.kl_exact) + ',' +
               g17(r.kl_winner_logratio) + '\n';
      }
      break;
  }
  return out;
}

}  // namespace prefopt
