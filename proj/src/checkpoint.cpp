#include "prefopt/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace prefopt {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  if (!in) throw ConfigError("truncated checkpoint");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void put_params(std::ofstream& out, const std::vector<double>& p) {
  put<uint64_t>(out, p.size());
  for (double x : p) put<double>(out, x);
}

void get_params(std::ifstream& in, std::vector<double>& p) {
  const auto n = get<uint64_t>(in);
  if (n != p.size()) throw ConfigError("checkpoint parameter count mismatch");
  for (double& x : p) x = get<double>(in);
}

void put_model_shape(std::ofstream& out, const PolicyModel& m) {
  put<uint8_t>(out, m.mode() == PolicyMode::Tabular ? 0 : 1);
  if (m.mode() == PolicyMode::Tabular) {
    put<uint32_t>(out, m.prompt_count());
    for (uint32_t p = 0; p < m.prompt_count(); ++p) {
      put<uint32_t>(out, m.candidate_count(p));
    }
  } else {
    put<uint32_t>(out, m.vocab());
    put<uint32_t>(out, m.dim());
  }
}

PolicyModel get_model_shape(std::ifstream& in) {
  const auto mode = get<uint8_t>(in);
  if (mode == 0) {
    const auto n = get<uint32_t>(in);
    std::vector<uint32_t> counts(n);
    for (uint32_t& c : counts) c = get<uint32_t>(in);
    return PolicyModel::tabular(std::move(counts));
  }
  const auto vocab = get<uint32_t>(in);
  const auto dim = get<uint32_t>(in);
  return PolicyModel::tiny_lm(vocab, dim);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint to '" + path + "'");
    out.write(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put_model_shape(out, ckpt.policy);
    put_params(out, ckpt.policy.params());
    put_params(out, ckpt.reference.params());
    put<uint32_t>(out, ckpt.head.dim());
    put<uint8_t>(out, ckpt.head.normalize_by_length() ? 1 : 0);
    for (double x : ckpt.head.weight()) put<double>(out, x);
    put<double>(out, ckpt.head.bias());
    for (double x : ckpt.head.snapshot_weight()) put<double>(out, x);
    put<double>(out, ckpt.head.snapshot_bias());
    put<uint64_t>(out, ckpt.world_seed);
    put<uint64_t>(out, ckpt.annotator_seed);
    put<uint64_t>(out, ckpt.construction_seed);
    put<uint64_t>(out, ckpt.step);
    out.flush();
    if (!out) throw ConfigError("failed while writing '" + path + "'");
  }
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ConfigError("'" + path + "' is not a checkpoint");
  }
  if (get<uint32_t>(in) != kVersion) {
    throw ConfigError("unsupported checkpoint version in '" + path + "'");
  }
  PolicyModel policy = get_model_shape(in);
  PolicyModel reference = policy;
  get_params(in, policy.params());
  get_params(in, reference.params());

  const auto dim = get<uint32_t>(in);
  const bool normalize = get<uint8_t>(in) != 0;
  std::vector<double> w(dim);
  for (double& x : w) x = get<double>(in);
  const double b = get<double>(in);
  std::vector<double> w0(dim);
  for (double& x : w0) x = get<double>(in);
  const double b0 = get<double>(in);
  AnchorHead head(std::move(w0), b0, normalize);
  head.weight() = std::move(w);
  head.bias() = b;

  Checkpoint ckpt{std::move(policy), std::move(reference), std::move(head)};
  ckpt.world_seed = get<uint64_t>(in);
  ckpt.annotator_seed = get<uint64_t>(in);
  ckpt.construction_seed = get<uint64_t>(in);
  ckpt.step = get<uint64_t>(in);
  return ckpt;
}

}  // namespace prefopt
