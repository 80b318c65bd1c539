#include <benchmark/benchmark.h>

#include "casceq/agreement.hpp"
#include "casceq/ctc.hpp"
#include "casceq/erasure.hpp"
#include "casceq/rng.hpp"
#include "casceq/text.hpp"

using namespace casceq;

namespace {

PairedPredictions random_pairs(std::size_t n) {
  const LabelSpace space("t", {"a", "b", "c", "d"});
  Rng rng(1);
  std::vector<std::string> gold, a, b;
  for (std::size_t i = 0; i < n; ++i) {
    gold.push_back(space.labels()[rng.index(4)]);
    a.push_back(rng.uniform() < 0.8 ? gold.back() : space.labels()[rng.index(4)]);
    b.push_back(rng.uniform() < 0.7 ? a.back() : space.labels()[rng.index(4)]);
  }
  return PairedPredictions::from_labels(space, gold, a, b);
}

MatrixD gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  MatrixD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_Kappa(benchmark::State& state) {
  const auto pp = random_pairs(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cohen_kappa(pp).kappa);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Kappa)->Arg(1000)->Arg(100000);

void BM_Bootstrap(benchmark::State& state) {
  const auto pp = random_pairs(1000);
  const BootstrapOptions opts{Metric::Kappa, static_cast<std::size_t>(state.range(0)), 0, 0.95, 1};
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap_ci(pp, opts));
}
BENCHMARK(BM_Bootstrap)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_CtcLossGrad(benchmark::State& state) {
  const auto t = state.range(0);
  const MatrixD logits = gaussian(t, alphabet::kClasses, 2);
  const auto target = encode_text("the quick brown fox jumps over the lazy dog");
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss_and_grad(logits, target).loss);
}
BENCHMARK(BM_CtcLossGrad)->Arg(200)->Arg(1000);

void BM_FitLeace(benchmark::State& state) {
  const auto d = state.range(0);
  const MatrixD x = gaussian(2000, d, 3);
  ConceptMatrix z;
  z.z = x.leftCols(48) * gaussian(48, 48, 4);
  for (auto _ : state) benchmark::DoNotOptimize(fit_leace(x, z).projection.data());
}
BENCHMARK(BM_FitLeace)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
