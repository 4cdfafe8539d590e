// Times batch gradient evaluation serial vs OpenMP and verifies that the two
// paths agree bit for bit (the reduction order is fixed by construction).

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "prefopt/objectives.hpp"
#include "prefopt/synth.hpp"

using namespace prefopt;

namespace {

double time_batch(const ObjectiveSpec& spec, const ReferencePair& pair,
                  const AnchorHead& head, const World& world,
                  const DatasetManifest& data, Exec exec, int reps,
                  BatchGradResult* last) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    *last = batch_grad(spec, pair, head, world.contexts, data.records, {}, exec, 7);
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt < best) best = dt;
  }
  return best;
}

bool bitwise_equal(const BatchGradResult& a, const BatchGradResult& b) {
  if (std::memcmp(&a.loss, &b.loss, sizeof(double)) != 0) return false;
  if (a.grad.size() != b.grad.size()) return false;
  return std::memcmp(a.grad.data(), b.grad.data(), a.grad.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  uint32_t prompts = 400;
  uint32_t records_per_prompt = 4;
  int reps = 5;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto next = [&]() -> const char* {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "missing value for %s\n", arg.c_str());
        std::exit(2);
      }
      return argv[++i];
    };
    if (arg == "--prompts") {
      prompts = static_cast<uint32_t>(std::stoul(next()));
    } else if (arg == "--records-per-prompt") {
      records_per_prompt = static_cast<uint32_t>(std::stoul(next()));
    } else if (arg == "--reps") {
      reps = std::stoi(next());
    } else {
      std::fprintf(stderr, "usage: bench_batch [--prompts N] [--records-per-prompt K] [--reps R]\n");
      return 2;
    }
  }

  WorldSpec ws;
  ws.prompts = prompts;
  ws.candidates = 5;
  ws.separation = 3.0;
  ws.seed = 21;
  const World world = gen_world(ws);
  const ReferencePair pair = make_reference_pair(world);

  AnnotatorSpec ann;
  const DatasetManifest data =
      annotate(world, ann, DatasetForm::Pairwise, records_per_prompt, 5);

  ObjectiveSpec spec;
  spec.method = Method::UAPO;
  spec.gamma = 1.0;
  AnchorHead head(ws.dim, false);

#ifdef _OPENMP
  const int threads = omp_get_max_threads();
#else
  const int threads = 1;
#endif
  std::printf("batch gradient over %zu records (UAPO, tabular), %d thread(s)\n",
              data.records.size(), threads);

  BatchGradResult serial, parallel;
  const double t_serial =
      time_batch(spec, pair, head, world, data, Exec::Serial, reps, &serial);
  const double t_parallel =
      time_batch(spec, pair, head, world, data, Exec::Parallel, reps, &parallel);

  std::printf("serial   %.6f s  (%.1f records/ms)\n", t_serial,
              data.records.size() / (t_serial * 1e3));
  std::printf("parallel %.6f s  (%.1f records/ms)  speedup %.2fx\n", t_parallel,
              data.records.size() / (t_parallel * 1e3), t_serial / t_parallel);

  if (!bitwise_equal(serial, parallel)) {
    std::printf("FAIL: serial and parallel results differ\n");
    return 1;
  }
  std::printf("serial and parallel results are bit-identical\n");
  return 0;
}
