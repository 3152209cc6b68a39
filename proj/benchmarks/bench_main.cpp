#include <benchmark/benchmark.h>

#include <vector>

#include "fcil/clear.hpp"
#include "fcil/fed.hpp"
#include "fcil/model_io.hpp"
#include "fcil/nn.hpp"
#include "fcil/vtrace.hpp"

using namespace fcil;

namespace {

nn::Matrix random_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  nn::Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.normal();
  }
  return x;
}

nn::Batch random_batch(std::size_t rows, std::size_t cols, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed + 1);
  nn::Batch b{random_features(rows, cols, seed), {}};
  for (std::size_t i = 0; i < rows; ++i) {
    b.labels.push_back(static_cast<nn::ClassIndex>(rng.below(classes)));
  }
  return b;
}

// Default architecture: 81 inputs, three hidden layers of 300, 9 classes.
const std::vector<std::size_t> kDims{81, 300, 300, 300, 9};

void BM_Forward(benchmark::State& state) {
  const auto model = nn::mlp_init(kDims, RngSeed{1});
  const auto x = random_features(static_cast<std::size_t>(state.range(0)), 81, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::forward(model, x).logits.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(64)->Arg(512);

void BM_SupervisedStep(benchmark::State& state) {
  auto model = nn::mlp_init(kDims, RngSeed{1});
  const auto batch = random_batch(static_cast<std::size_t>(state.range(0)), 81, 9, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(clear::supervised_step(model, batch, 1e-4).loss.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SupervisedStep)->Arg(64);

void BM_ClearStep(benchmark::State& state) {
  auto model = nn::mlp_init(kDims, RngSeed{1});
  const auto batch = random_batch(64, 81, 9, 4);
  clear::ClearConfig cfg;
  clear::ReplayBuffer buffer(cfg.buffer_capacity);
  Rng rng(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(clear::clear_train_step(model, batch, buffer, cfg, 1e-4, rng).loss.total);
  }
}
BENCHMARK(BM_ClearStep);

void BM_Aggregate(benchmark::State& state) {
  std::vector<fed::ClientUpdate> updates;
  for (int k = 0; k < state.range(0); ++k) {
    fed::ClientUpdate u;
    u.client_id = static_cast<fed::ClientId>(k);
    u.weights = nn::mlp_init(kDims, RngSeed{static_cast<std::uint64_t>(k)});
    u.sample_count = 100 + static_cast<std::uint64_t>(k);
    updates.push_back(std::move(u));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(fed::aggregate(updates).weights.front().data());
  }
}
BENCHMARK(BM_Aggregate)->Arg(2)->Arg(10);

void BM_ModelBlobRoundTrip(benchmark::State& state) {
  const auto model = nn::mlp_init(kDims, RngSeed{1});
  for (auto _ : state) {
    const auto blob = nn::serialize_model(model);
    benchmark::DoNotOptimize(nn::deserialize_model(blob).weights.size());
  }
}
BENCHMARK(BM_ModelBlobRoundTrip);

void BM_Vtrace(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(9);
  clear::Trajectory t;
  for (std::size_t i = 0; i < n; ++i) {
    t.rewards.push_back(rng.normal());
    t.behavior_probs.push_back(rng.uniform(0.05, 1.0));
    t.current_probs.push_back(rng.uniform(0.05, 1.0));
    t.values.push_back(rng.normal());
  }
  t.bootstrap_value = rng.normal();
  t.discount = 0.99;
  for (auto _ : state) {
    benchmark::DoNotOptimize(clear::compute_vtrace(t).data());
  }
}
BENCHMARK(BM_Vtrace)->Arg(8)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
