// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch.hpp>

#include <cstdio>

#include "parsim/trainer.hpp"

using namespace parsim;

namespace {

ChronoSplit synthetic_split(std::size_t users, std::size_t items, std::size_t n,
                            std::uint64_t seed) {
  return chrono_split(generate_synthetic(users, items, n, seed));
}

}  // namespace

TEST_CASE("analytic BPR gradient matches central finite differences") {
  const std::size_t U = 4, I = 5, d = 3;
  SeededRng rng(13);
  DenseVector theta((U + I) * d);
  for (auto& v : theta) v = rng.uniform(-0.5, 0.5);

  std::vector<BprTriple> batch = {
      {0, 1, 2}, {1, 0, 3}, {0, 1, 4}, {2, 2, 0}, {3, 4, 1}, {1, 3, 3},
  };

  auto grad = bpr_batch_gradient(theta, U, I, d, batch);
  const double h = 1e-6;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    DenseVector up = theta, down = theta;
    up[i] += h;
    down[i] -= h;
    double numeric = (bpr_batch_loss(up, U, I, d, batch) - bpr_batch_loss(down, U, I, d, batch)) /
                     (2 * h);
    REQUIRE(grad[i] == Approx(numeric).epsilon(1e-5).margin(1e-9));
  }
}

TEST_CASE("evaluate_topk oracle model scores perfectly") {
  RecModel m;
  m.user_embeddings = DenseMatrix(1, 1, {1.0});
  m.item_embeddings = DenseMatrix(20, 1, std::vector<double>(20, 0.001));
  m.item_embeddings.values[0] = 100.0;  // the true item dominates

  ChronoSplit split;
  split.train.push_back({0, 1, 0});
  split.test.push_back({0, 0, 1});
  auto res = evaluate_topk(m, split, 10, 99, 7);
  CHECK(res.hr_at_10 == 1.0);
  CHECK(res.ndcg_at_10 == 1.0);
  CHECK(res.num_eval_users == 1);
}

TEST_CASE("evaluate_topk rank-11 boundary gives zero") {
  // 100 items, user interacted only with the true item, so all 99 negatives
  // enter the candidate set deterministically. Items 1..10 outscore the true
  // item: rank is exactly 11.
  RecModel m;
  m.user_embeddings = DenseMatrix(1, 1, {1.0});
  m.item_embeddings = DenseMatrix(100, 1, std::vector<double>(100, -1.0));
  m.item_embeddings.values[0] = 0.0;
  for (std::size_t i = 1; i <= 10; ++i) m.item_embeddings.values[i] = static_cast<double>(i);

  ChronoSplit split;
  split.test.push_back({0, 0, 1});
  auto res = evaluate_topk(m, split, 10, 99, 3);
  CHECK(res.hr_at_10 == 0.0);
  CHECK(res.ndcg_at_10 == 0.0);
}

TEST_CASE("evaluate_topk tie-break prefers the lower item id") {
  RecModel m;
  m.user_embeddings = DenseMatrix(1, 1, {1.0});
  // Ten items tied above zero, true item (id 15) scores zero, rest below.
  m.item_embeddings = DenseMatrix(100, 1, std::vector<double>(100, -1.0));
  m.item_embeddings.values[15] = 0.0;
  for (std::size_t i = 0; i < 9; ++i) m.item_embeddings.values[i] = 0.0;  // ties, lower ids

  ChronoSplit split;
  split.test.push_back({0, 15, 1});
  auto res = evaluate_topk(m, split, 10, 99, 3);
  // Nine tied items with lower ids rank ahead: rank 10, still a hit.
  CHECK(res.hr_at_10 == 1.0);
  CHECK(res.ndcg_at_10 == Approx(1.0 / std::log2(11.0)));
}

TEST_CASE("evaluate_topk skips users with no candidate negatives") {
  // User 0 interacted with every item, so nothing is left to rank against.
  RecModel m;
  m.user_embeddings = DenseMatrix(2, 1, {1.0, 1.0});
  m.item_embeddings = DenseMatrix(3, 1, {0.5, 0.2, 0.9});
  ChronoSplit split;
  split.train = {{0, 0, 0}, {0, 1, 1}, {1, 0, 2}};
  split.test = {{0, 2, 3}, {1, 2, 4}};
  auto res = evaluate_topk(m, split, 10, 99, 1);
  CHECK(res.skipped == 1);
  CHECK(res.num_eval_users == 1);

  // If every test record is skipped, that is an error.
  ChronoSplit all_seen;
  all_seen.train = {{0, 0, 0}, {0, 1, 1}};
  all_seen.test = {{0, 2, 2}};
  RecModel tiny;
  tiny.user_embeddings = DenseMatrix(1, 1, {1.0});
  tiny.item_embeddings = DenseMatrix(3, 1, {0.1, 0.2, 0.3});
  CHECK_THROWS_AS(evaluate_topk(tiny, all_seen, 10, 99, 1), std::invalid_argument);
}

TEST_CASE("random model scores HR@10 near 10/100") {
  auto split = synthetic_split(500, 300, 100'000, 17);
  REQUIRE(split.test.size() >= 10'000);
  auto model = RecModel::init(500, 300, 8, 99);
  auto res = evaluate_topk(model, split, 10, 99, 5);
  CHECK(res.num_eval_users >= 10'000);
  CHECK(res.hr_at_10 == Approx(0.10).margin(0.02));
}

TEST_CASE("training is deterministic run-to-run") {
  auto split = synthetic_split(60, 40, 3000, 4);
  StrategyConfig cfg;
  HyperParams h{0.05, 32, 120};

  auto r1 = train(RecModel::init(60, 40, 8, 11), split, cfg, h, 123);
  auto r2 = train(RecModel::init(60, 40, 8, 11), split, cfg, h, 123);
  CHECK(r1.loss_curve == r2.loss_curve);
  CHECK(flatten_params(r1.model) == flatten_params(r2.model));

  // Loss should actually move.
  CHECK(r1.loss_curve.back().second < r1.loss_curve.front().second);
}

TEST_CASE("P-worker sync training equals mean-of-shards single-worker training") {
  auto split = synthetic_split(60, 40, 3000, 4);
  const std::size_t U = 60, I = 40, d = 8;
  HyperParams h{0.05, 32, 200};

  StrategyConfig multi;
  multi.data_degree = 2;
  multi.collective = CollectiveAlgorithm::naive;
  auto trained = train(RecModel::init(U, I, d, 11), split, multi, h, 123);

  // Oracle: one worker, gradients formed as the mean of the two shard means.
  DenseVector theta = flatten_params(RecModel::init(U, I, d, 11));
  TripleSampler sampler(split.train, U, I, 123);
  for (std::size_t step = 0; step < h.steps; ++step) {
    auto batch = sampler.next_batch(h.batch_size);
    std::vector<BprTriple> s0(batch.begin(), batch.begin() + 16);
    std::vector<BprTriple> s1(batch.begin() + 16, batch.end());
    auto g0 = bpr_batch_gradient(theta, U, I, d, s0);
    auto g1 = bpr_batch_gradient(theta, U, I, d, s1);
    DenseVector mean(theta.size());
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = (g0[i] + g1[i]) / 2.0;
    theta = vec_axpy(-h.learning_rate, mean, theta);
  }
  CHECK(l2_distance(flatten_params(trained.model), theta) < 1e-8);
}

TEST_CASE("error feedback bookkeeping holds along a real training run") {
  auto split = synthetic_split(40, 30, 2000, 8);
  const std::size_t U = 40, I = 30, d = 6;
  const std::size_t dim = (U + I) * d;

  for (auto kind : {CompressorKind::onebit, CompressorKind::topk}) {
    CompressorConfig cfg{kind, dim / 10};
    DenseVector theta = flatten_params(RecModel::init(U, I, d, 2));
    TripleSampler sampler(split.train, U, I, 77);
    auto state = ErrorFeedbackState::zeros(dim);
    for (int step = 0; step < 500; ++step) {
      auto g = bpr_batch_gradient(theta, U, I, d, sampler.next_batch(16));
      DenseVector r_before = state.residual;
      auto msg = ef_compress_step(state, g, cfg);
      auto ghat = decompress(msg);
      for (std::size_t i = 0; i < dim; ++i) {
        REQUIRE(state.residual[i] + ghat[i] == Approx(r_before[i] + g[i]).margin(1e-10));
      }
      theta = vec_axpy(-0.05, ghat, theta);
    }
  }
}

TEST_CASE("async training produces a usable model deterministically") {
  auto split = synthetic_split(60, 40, 3000, 4);
  StrategyConfig cfg;
  cfg.data_degree = 4;
  cfg.mode = ExecutionMode::async;
  HyperParams h{0.05, 32, 150};

  auto r1 = train(RecModel::init(60, 40, 8, 11), split, cfg, h, 123);
  auto r2 = train(RecModel::init(60, 40, 8, 11), split, cfg, h, 123);
  CHECK(flatten_params(r1.model) == flatten_params(r2.model));
  CHECK(r1.loss_curve.back().second < r1.loss_curve.front().second);
}

TEST_CASE("train rejects tensor or pipeline degrees in the quality harness") {
  auto split = synthetic_split(20, 10, 500, 1);
  StrategyConfig cfg;
  cfg.tensor_degree = 2;
  HyperParams h{0.05, 16, 10};
  CHECK_THROWS_AS(train(RecModel::init(20, 10, 4, 1), split, cfg, h, 1), std::invalid_argument);
}

TEST_CASE("model snapshots round-trip through disk") {
  auto m = RecModel::init(7, 9, 4, 31);
  std::string path = "parsim_test_model.bin";
  save_model(path, m);
  auto loaded = load_model(path);
  CHECK(flatten_params(loaded) == flatten_params(m));
  CHECK(loaded.num_users() == 7);
  CHECK(loaded.num_items() == 9);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_model(path), std::runtime_error);
}
