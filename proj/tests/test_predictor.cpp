#include "mtlstm/predictor.hpp"
#include "mtlstm/rng.hpp"
#include "mtlstm/trainer.hpp"
#include "mtlstm/usar_sim.hpp"

#include <doctest.h>

#include <sstream>

using namespace mtlstm;

namespace {

const EncodingSpec& spec() {
  static const EncodingSpec s = EncodingSpec::declared();
  return s;
}

bool valid_one_hots(const Vector& v) {
  for (const auto& slot : spec().slots) {
    if (record_fields()[slot.field].kind != FieldKind::Categorical) continue;
    const auto block = v.segment(slot.offset, slot.width);
    if (block.sum() != 1.0 || block.maxCoeff() != 1.0 || block.minCoeff() != 0.0) return false;
  }
  return true;
}

Network random_predictor(std::uint64_t seed, std::vector<std::int64_t> periods = {1, 5, 25}) {
  const Index D = spec().dimension;
  const auto s = GroupSchedule::balanced(12, std::move(periods));
  return {LstmParams::initialized(D, 12, D, seed, s, Connectivity::Full), s, Connectivity::Full};
}

Matrix random_window(Index rows, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(rows, spec().dimension);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1.0, 1.0);
  for (Index t = 0; t < rows; ++t) w.row(t) = snap_categoricals(w.row(t).transpose(), spec()).transpose();
  return w;
}

}  // namespace

TEST_CASE("snap_categoricals") {
  const auto& role = spec().slot_for("PlayerRole");
  Vector v = Vector::Zero(spec().dimension);
  v(0) = 0.3;  // part of CurrentLocation
  v.segment(role.offset, 3) << 0.2, 0.5, 0.3;
  const auto& vel = spec().slot_for("CurrentVelocity");
  v(vel.offset) = -1.75;
  Vector s = snap_categoricals(v, spec());
  CHECK(s.segment(role.offset, 3) == Vector::Unit(3, 1));
  CHECK(s(vel.offset) == -1.75);
  CHECK(valid_one_hots(s));
  CHECK(snap_categoricals(s, spec()) == s);

  v.segment(role.offset, 3) << 0.4, 0.4, 0.2;
  CHECK(snap_categoricals(v, spec()).segment(role.offset, 3) == Vector::Unit(3, 0));
  CHECK_THROWS_AS(snap_categoricals(Vector::Zero(5), spec()), ShapeError);
}

TEST_CASE("rollout of a constant model repeats its output") {
  const Index D = spec().dimension;
  Network net = random_predictor(1);
  net.params.head_weights.setZero();
  Vector v = snap_categoricals(random_window(1, 9).row(0).transpose(), spec());
  net.params.head_bias = v;
  Matrix window = random_window(20, 4);
  // keep monotone fields below v so the floor is inactive
  for (const auto& slot : spec().slots) {
    if (record_fields()[slot.field].monotone) window.col(slot.offset).setConstant(v(slot.offset) - 1.0);
  }
  const Matrix out = rollout(net, window, 15, spec());
  REQUIRE(out.rows() == 15);
  REQUIRE(out.cols() == D);
  for (Index t = 0; t < 15; ++t) CHECK(out.row(t) == v.transpose());
}

TEST_CASE("rollout contracts") {
  const Network net = random_predictor(2);
  const Matrix window = random_window(40, 5);

  const Matrix long_run = rollout(net, window, 300, spec());
  CHECK(long_run.rows() == 300);
  for (Index t = 0; t < long_run.rows(); ++t) CHECK(valid_one_hots(long_run.row(t).transpose()));

  for (Index a : {1, 7, 25, 60}) {
    const Matrix prefix = rollout(net, window, a, spec());
    CHECK(prefix == long_run.topRows(a));
  }

  // horizon 1 is one forward step past the window
  const auto seq = forward_sequence(window, net);
  Vector expected = snap_categoricals(seq.outputs.row(39).transpose(), spec());
  for (const auto& slot : spec().slots) {
    if (record_fields()[slot.field].monotone) {
      expected(slot.offset) = std::max(expected(slot.offset), window(39, slot.offset));
    }
  }
  CHECK(rollout(net, window, 1, spec()).row(0) == expected.transpose());

  // monotone fields never drop below the window's last value
  for (const auto& slot : spec().slots) {
    if (!record_fields()[slot.field].monotone) continue;
    CHECK(long_run.col(slot.offset).minCoeff() >= window(39, slot.offset));
  }
  CHECK(rollout(net, window, 0, spec()).rows() == 0);
  CHECK_THROWS_AS(rollout(net, Matrix::Zero(5, 3), 2, spec()), ShapeError);
}

TEST_CASE("literal re-feed rollout") {
  const Network net = random_predictor(3);
  const Matrix window = random_window(30, 6);
  RolloutOptions literal;
  literal.literal_refeed = true;
  const Matrix a = rollout(net, window, 12, spec(), literal);
  CHECK(a.rows() == 12);
  CHECK(a == rollout(net, window, 12, spec(), literal));
  CHECK(a.topRows(5) == rollout(net, window, 5, spec(), literal));
  // the first step sees exactly the window in both modes
  CHECK(a.row(0) == rollout(net, window, 1, spec()).row(0));
  for (Index t = 0; t < a.rows(); ++t) CHECK(valid_one_hots(a.row(t).transpose()));
}

TEST_CASE("rollout reports the failing iteration") {
  Network net = random_predictor(4);
  net.params.head_bias(spec().slot_for("CurrentVelocity").offset) = std::numeric_limits<double>::quiet_NaN();
  try {
    rollout(net, random_window(10, 1), 5, spec());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
  }
}

TEST_CASE("map_labels") {
  const Index D = spec().dimension;
  const auto s = GroupSchedule::standard(8);
  const Network mapper{LstmParams::initialized(D, 8, kLabelCount, 1, s, Connectivity::Full), s,
                       Connectivity::Full};
  const Matrix feats = random_window(17, 2);
  CHECK(map_labels(mapper, feats).size() == 17);
  const Matrix probs = mapper_probabilities(mapper, feats);
  for (Index t = 0; t < probs.rows(); ++t) CHECK(std::abs(probs.row(t).sum() - 1.0) < 1e-9);
  CHECK_THROWS_AS(map_labels(mapper, Matrix::Zero(4, D + 1)), ShapeError);
}

TEST_CASE("mapper overfit on one window reproduces its labels") {
  MissionConfig cfg;
  cfg.seed = 5;
  const auto mission = simulate(cfg);
  const auto series = downsample(mission.players[0], 10);
  const std::vector<FeatureSeries> train_set = {series};
  const auto enc_spec = fit_encoding(train_set);
  const Matrix feats = encode_series(series.records, enc_spec);
  std::vector<int> labels;
  for (auto l : series.labels) labels.push_back(label_index(l));
  const std::vector<LabelWindow> data = {{&feats, &labels, 300, 30}};

  TrainConfig tc = TrainConfig::mapper_defaults();
  tc.epochs = 300;
  tc.learning_rate = 0.01;
  const auto res = train_mapper(data, enc_spec.dimension, tc, 32);
  const Network mapper{res.params, GroupSchedule::standard(32), Connectivity::Full};
  const auto got = map_labels(mapper, feats.middleRows(300, 30));
  const std::vector<SemanticLabel> want(series.labels.begin() + 300, series.labels.begin() + 330);
  CHECK(got == want);
}

TEST_CASE("forecast output") {
  const Index D = spec().dimension;
  const auto s = GroupSchedule::standard(8);
  const Network mapper{LstmParams::initialized(D, 8, kLabelCount, 1, s, Connectivity::Full), s,
                       Connectivity::Full};
  const Network net = random_predictor(5);
  const Matrix window = random_window(25, 3);
  const auto f = forecast(net, mapper, window, 6, spec(), "w0");
  CHECK(f.labels.size() == 6);
  CHECK(f.features.rows() == 6);
  const auto g = forecast(net, mapper, window, 6, spec(), "w0");
  CHECK(f.labels == g.labels);
  CHECK(f.features == g.features);

  std::ostringstream out;
  write_forecast(out, f);
  const auto line = out.str();
  CHECK(line.rfind("{\"window_id\":\"w0\",\"horizon\":6,\"labels\":[", 0) == 0);
  CHECK(line.find("vectors") == std::string::npos);
  std::ostringstream with;
  write_forecast(with, f, true);
  CHECK(with.str().find("\"vectors\":[[") != std::string::npos);
}
