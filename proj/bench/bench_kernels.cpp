// Serial reference kernels against their OpenMP counterparts.
// Arg 0 selects the serial path, 1 the parallel path.

#include <benchmark/benchmark.h>

#include "fedsc/compression.hpp"
#include "fedsc/federation.hpp"

using namespace fedsc;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

Matrix filled(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

void BM_WeightedSum(benchmark::State& state) {
  const int K = 16;
  std::vector<Matrix> xs;
  std::vector<const Matrix*> ptrs;
  for (int k = 0; k < K; ++k) xs.push_back(filled(5000, 200, static_cast<std::uint64_t>(k)));
  for (const auto& x : xs) ptrs.push_back(&x);
  const std::vector<double> w(K, 1.0 / K);
  Matrix out;
  for (auto _ : state) {
    kernels::weighted_sum(ptrs, w, out, exec_of(state));
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_WeightedSum)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Covariance(benchmark::State& state) {
  Matrix x = filled(5000, 200, 1);
  x = x.rowwise() - x.colwise().mean();
  Matrix out;
  for (auto _ : state) {
    kernels::covariance(x, out, exec_of(state));
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Covariance)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_RowScores(benchmark::State& state) {
  const Matrix table = filled(50000, 200, 2);
  const Vector q = filled(200, 1, 3).col(0);
  Vector scores;
  for (auto _ : state) {
    kernels::row_scores(table, q, scores, exec_of(state));
    benchmark::DoNotOptimize(scores.data());
  }
}
BENCHMARK(BM_RowScores)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Pca(benchmark::State& state) {
  const Matrix rows = structured_embedding(3000, 200, 4);
  for (auto _ : state) benchmark::DoNotOptimize(pca_components(rows, exec_of(state)).eigenvalues.data());
}
BENCHMARK(BM_Pca)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ClientRound(benchmark::State& state) {
  SceneSpec spec;
  spec.clients = 8;
  spec.n_train = {100};
  spec.n_test = {20};
  const Scene scene = generate_synthetic_scene(spec, 5);
  const ModelDims dims{.vocab = static_cast<int>(scene.vocab.size()), .embed = 32, .hidden = 16, .mlp = 32,
                       .classes = 2};
  RoundConfig rc;
  rc.local_epochs = 1;
  CompressionConfig cc;
  cc.d2 = 32;
  cc.privacy_queries = 0;
  Federation fed(scene, make_mode(ModeName::kteps_star), dims, LossConfig{}, rc, cc, exec_of(state));
  for (auto _ : state) benchmark::DoNotOptimize(fed.run_round().upload_bytes);
}
BENCHMARK(BM_ClientRound)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
