#include "mtlstm/rng.hpp"
#include "mtlstm/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace mtlstm;

namespace {

// Smooth multichannel signal with per-seed phase.
Matrix wave(Index rows, Index D, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, D);
  for (Index d = 0; d < D; ++d) {
    const double phase = rng.uniform(0.0, 6.28);
    const double freq = rng.uniform(0.2, 0.6);
    for (Index t = 0; t < rows; ++t) m(t, d) = std::sin(freq * static_cast<double>(t) + phase);
  }
  return m;
}

Network fresh(Index D, Index H, std::uint64_t seed, GroupSchedule s) {
  return {LstmParams::initialized(D, H, D, seed, s, Connectivity::Full), s, Connectivity::Full};
}

double mapper_accuracy(const Network& mapper, std::span<const LabelWindow> data) {
  std::size_t hits = 0, total = 0;
  for (const auto& w : data) {
    const Matrix probs = mapper_probabilities(mapper, w.features->middleRows(w.start, w.length));
    for (Index t = 0; t < w.length; ++t) {
      Index best = 0;
      probs.row(t).maxCoeff(&best);
      hits += best == (*w.labels)[static_cast<std::size_t>(w.start + t)];
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("train: epoch loss is non-increasing early on") {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix series = wave(40, 3, seed + 100);
    std::vector<RegressionWindow> data;
    for (Index i = 0; i < 10; ++i) data.push_back({&series, 2 * i, 12});
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch = 5;
    cfg.learning_rate = 0.01;
    cfg.seed = seed;
    const auto res = train(data, fresh(3, 8, seed, GroupSchedule::balanced(8, {1, 2})), cfg);
    REQUIRE(res.loss_history.size() == 5);
    bool monotone = true;
    for (std::size_t e = 1; e < 5; ++e) monotone &= res.loss_history[e] <= res.loss_history[e - 1];
    good += monotone;
  }
  CHECK(good >= 9);
}

TEST_CASE("train: zero learning rate leaves parameters unchanged") {
  const Matrix series = wave(30, 2, 7);
  std::vector<RegressionWindow> data = {{&series, 0, 10}, {&series, 5, 10}, {&series, 9, 10}};
  const Network init = fresh(2, 6, 3, GroupSchedule::balanced(6, {1, 3}));
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.batch = 2;
  cfg.learning_rate = 0.0;
  const auto res = train(data, init, cfg);
  CHECK(res.params == init.params);
}

TEST_CASE("train: same seed gives bitwise identical parameters") {
  const Matrix series = wave(50, 3, 11);
  std::vector<RegressionWindow> data;
  for (Index i = 0; i < 8; ++i) data.push_back({&series, 3 * i, 15});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 3;
  cfg.seed = 42;
  const Network init = fresh(3, 8, 42, GroupSchedule::balanced(8, {1, 4}));
  const auto a = train(data, init, cfg);
  const auto b = train(data, init, cfg);
  CHECK(a.params == b.params);
  CHECK(a.loss_history == b.loss_history);
  cfg.seed = 43;
  CHECK_FALSE(train(data, init, cfg).params == a.params);
}

TEST_CASE("train: rejects bad input") {
  const Matrix series = wave(20, 2, 1);
  const Network init = fresh(2, 4, 0, GroupSchedule::standard(4));
  TrainConfig cfg;
  CHECK_THROWS_AS(train({}, init, cfg), std::invalid_argument);
  std::vector<RegressionWindow> no_target = {{&series, 10, 10}};
  CHECK_THROWS_AS(train(no_target, init, cfg), ShapeError);
  std::vector<RegressionWindow> mixed = {{&series, 0, 5}, {&series, 0, 6}};
  CHECK_THROWS_AS(train(mixed, init, cfg), ShapeError);
}

TEST_CASE("train: non-finite data aborts with a diagnostic") {
  Matrix series = wave(20, 2, 1);
  series(3, 1) = std::numeric_limits<double>::infinity();
  std::vector<RegressionWindow> data = {{&series, 0, 8}};
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(data, fresh(2, 4, 0, GroupSchedule::standard(4)), cfg);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("train_mapper: single class reaches 100% within 20 epochs") {
  const Matrix feats = wave(64, 3, 5);
  const std::vector<int> labels(64, 4);
  std::vector<LabelWindow> data;
  for (Index i = 0; i < 8; ++i) data.push_back({&feats, &labels, 4 * i, 16});
  TrainConfig cfg = TrainConfig::mapper_defaults();
  cfg.batch = 1;
  cfg.learning_rate = 0.01;
  const auto res = train_mapper(data, 3, cfg, 16);
  const Network mapper{res.params, GroupSchedule::standard(16), Connectivity::Full};
  CHECK(mapper_accuracy(mapper, data) == 1.0);
}

TEST_CASE("train_mapper: two-class toy corpus is learned") {
  // label = sign of the first feature
  Matrix feats(32 * 12, 2);
  std::vector<int> labels(static_cast<std::size_t>(feats.rows()));
  Rng rng(9);
  for (Index t = 0; t < feats.rows(); ++t) {
    feats(t, 0) = rng.uniform(-1.0, 1.0);
    feats(t, 1) = rng.uniform(-1.0, 1.0);
    labels[static_cast<std::size_t>(t)] = feats(t, 0) > 0 ? 2 : 1;
  }
  std::vector<LabelWindow> data;
  for (Index i = 0; i < 32; ++i) data.push_back({&feats, &labels, 12 * i, 12});
  TrainConfig cfg = TrainConfig::mapper_defaults();
  cfg.epochs = 200;
  cfg.batch = 4;
  cfg.learning_rate = 0.01;
  const auto res = train_mapper(data, 2, cfg, 16);
  const Network mapper{res.params, GroupSchedule::standard(16), Connectivity::Full};
  CHECK(mapper_accuracy(mapper, data) >= 0.99);

  const Matrix probs = mapper_probabilities(mapper, feats.topRows(12));
  CHECK(probs.cols() == kLabelCount);
  for (Index t = 0; t < probs.rows(); ++t) CHECK(std::abs(probs.row(t).sum() - 1.0) < 1e-9);
}

TEST_CASE("train_mapper: rejects labels outside 0..10") {
  const Matrix feats = wave(10, 2, 1);
  std::vector<int> labels(10, 0);
  labels[4] = 11;
  std::vector<LabelWindow> data = {{&feats, &labels, 0, 10}};
  CHECK_THROWS_AS(train_mapper(data, 2, TrainConfig::mapper_defaults(), 4), std::out_of_range);
}
