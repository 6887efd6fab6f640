#include <gtest/gtest.h>

#include <cmath>

#include "bcil/seqmodel.hpp"

using namespace bcil;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

TrainingSequence random_sequence(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TrainingSequence s;
  StateRow r{};
  for (auto& v : r) v = rng.uniform(-1, 1);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t d = 0; d < kStateDims; ++d) r[d] = 0.9 * r[d] + 0.3 * std::sin(0.2 * static_cast<double>(k) + d);
    s.rows.push_back(r);
  }
  return s;
}

/// Smooth periodic 18-dim sequence, easy enough to overfit.
TrainingSequence sine_sequence(std::size_t n) {
  TrainingSequence s;
  for (std::size_t k = 0; k < n; ++k) {
    StateRow r{};
    for (std::size_t d = 0; d < kStateDims; ++d) r[d] = std::sin(0.15 * static_cast<double>(k) + 0.4 * d);
    s.rows.push_back(r);
  }
  return s;
}

WindowBatch random_batch(Rng& rng, std::size_t in, std::size_t out, std::size_t steps, Eigen::Index batch) {
  WindowBatch b;
  for (std::size_t t = 0; t < steps; ++t) {
    b.inputs.push_back(Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(in), batch, [&] { return rng.uniform(); }));
    b.targets.push_back(Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(out), batch, [&] { return rng.uniform(); }));
  }
  return b;
}

double max_fd_error(const ModelWeights& w, const WindowBatch& b, const TrainingRegime& regime) {
  const auto g = bptt_gradients(w, b, regime);
  ModelWeights probe = w;
  double worst = 0.0;
  const double eps = 1e-6;
  for (std::size_t k = 0; k < probe.tensors.size(); ++k)
    for (Eigen::Index i = 0; i < probe.tensors[k].size(); ++i) {
      double& p = probe.tensors[k].data()[i];
      const double keep = p;
      p = keep + eps;
      const double up = window_loss(probe, b, regime);
      p = keep - eps;
      const double down = window_loss(probe, b, regime);
      p = keep;
      const double fd = (up - down) / (2 * eps);
      const double an = g.grad.tensors[k].data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
    }
  return worst;
}

}  // namespace

TEST(Normalizer, UnitRangeIsIdentity) {
  Normalizer n;
  n.lo.fill(0.0);
  n.hi.fill(1.0);
  for (double v : {0.0, 0.25, 1.0}) EXPECT_EQ(n.normalize(3, v), v);
}

TEST(Normalizer, DegenerateDimension) {
  TrainingSequence s;
  StateRow r{};
  r.fill(3.0);
  s.rows = {r, r};
  const auto n = fit_normalizer({s});
  EXPECT_EQ(n.normalize(0, 3.0), 0.5);
  EXPECT_EQ(n.denormalize(0, 0.5), 3.0);
}

TEST(Normalizer, RoundTripProperty) {
  const auto n = fit_normalizer({random_sequence(200, 1)});
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    StateRow v;
    for (std::size_t d = 0; d < kStateDims; ++d) v[d] = rng.uniform(n.lo[d], n.hi[d]);
    const auto back = n.denormalize(n.normalize(v));
    for (std::size_t d = 0; d < kStateDims; ++d) EXPECT_NEAR(back[d], v[d], 1e-12);
  }
}

TEST(Normalizer, TrainingDataInUnitInterval) {
  const auto seq = random_sequence(300, 5);
  const auto n = fit_normalizer({seq});
  for (const auto& r : seq.rows)
    for (double v : n.normalize(r)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
}

TEST(Normalizer, EmptyDataset) {
  try {
    fit_normalizer({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}

TEST(ModelStep, ZeroWeightsGiveZero) {
  ModelConfig c;
  c.variant = ModelVariant::SM2SM;
  c.layers = 2;
  c.units = 5;
  const auto w = ModelWeights::zeros(18, 5, 2, 18);
  auto h = HiddenState::zeros(w);
  const Eigen::VectorXd y = model_step(w, c, Eigen::VectorXd::Constant(18, 0.3), h);
  EXPECT_EQ(y, Eigen::VectorXd::Zero(18));
}

TEST(ModelStep, PureGivenSameHiddenState) {
  ModelConfig c;
  c.variant = ModelVariant::S2S;
  c.units = 6;
  Rng rng(3);
  const auto w = ModelWeights::random(9, 6, 2, 9, rng);
  auto h0 = HiddenState::zeros(w);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(9, 0, 1);
  model_step(w, c, x, h0);
  auto h1 = h0, h2 = h0;
  EXPECT_EQ(model_step(w, c, x, h1), model_step(w, c, x, h2));
}

TEST(ModelStep, SingleCellMatchesHandRecurrence) {
  // one input, one unit, one output; two steps by hand
  auto w = ModelWeights::zeros(1, 1, 1, 1);
  w.w_in(0) << 0.5, -0.3, 0.8, 0.2;   // i f g o
  w.w_rec(0) << 0.1, 0.4, -0.6, 0.3;
  w.bias(0) << 0.05, 1.0, -0.1, 0.0;
  w.w_out() << 1.5;
  w.b_out() << -0.2;
  std::vector<double> xs{0.7, -0.4};
  double h = 0, c = 0, y = 0;
  for (double x : xs) {
    const double i = sig(0.5 * x + 0.1 * h + 0.05);
    const double f = sig(-0.3 * x + 0.4 * h + 1.0);
    const double g = std::tanh(0.8 * x - 0.6 * h - 0.1);
    const double o = sig(0.2 * x + 0.3 * h);
    c = f * c + i * g;
    h = o * std::tanh(c);
    y = 1.5 * h - 0.2;
  }
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.units = 1;
  auto state = HiddenState::zeros(w);
  Eigen::VectorXd x(1), out;
  // dims must match a variant for model_step; call the stack directly
  for (double xi : xs) {
    Eigen::MatrixXd xm(1, 1);
    xm(0, 0) = xi;
    out = detail::step_stack(w, xm, state, nullptr).col(0);
  }
  EXPECT_NEAR(out(0), y, 1e-15);
  EXPECT_NEAR(state.h[0](0, 0), h, 1e-15);
  EXPECT_NEAR(state.c[0](0, 0), c, 1e-15);
}

TEST(ModelStep, DimensionMismatch) {
  ModelConfig c;
  c.variant = ModelVariant::S2M;
  Rng rng(1);
  const auto w = ModelWeights::random(9, 4, 1, 9, rng);
  auto h = HiddenState::zeros(w);
  try {
    model_step(w, c, Eigen::VectorXd::Zero(18), h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(LossMse, Examples) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(7, 4);
  EXPECT_EQ(loss_mse(a, a), 0.0);
  EXPECT_NEAR(loss_mse(a.array() + 0.1, a), 0.01, 1e-15);
  EXPECT_THROW(loss_mse(a, Eigen::MatrixXd::Zero(4, 7)), Error);
}

TEST(LossMse, MatchesTwoLoopReference) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + static_cast<int>(rng.below(30)), c = 1 + static_cast<int>(rng.below(20));
    Eigen::MatrixXd p(r, c), t(r, c);
    double sum = 0;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        p(i, j) = rng.uniform(-2, 2);
        t(i, j) = rng.uniform(-2, 2);
        sum += (p(i, j) - t(i, j)) * (p(i, j) - t(i, j));
      }
    EXPECT_NEAR(loss_mse(p, t), sum / (r * c), 1e-12);
  }
}

TEST(Bptt, FiniteDifferencesTeacherForced) {
  Rng rng(11);
  const auto w = ModelWeights::random(3, 4, 2, 2, rng);
  const auto b = random_batch(rng, 3, 2, 6, 3);
  EXPECT_LT(max_fd_error(w, b, TrainingRegime::teacher_forced()), 1e-5);
}

TEST(Bptt, FiniteDifferencesFreeRunning) {
  Rng rng(12);
  const auto w = ModelWeights::random(3, 4, 2, 3, rng);
  const auto b = random_batch(rng, 3, 3, 8, 2);
  EXPECT_LT(max_fd_error(w, b, TrainingRegime::autoregressive(3)), 1e-5);
  EXPECT_LT(max_fd_error(w, b, TrainingRegime::autoregressive(0)), 1e-5);
}

TEST(Bptt, PeriodOneEqualsTeacherForcing) {
  Rng rng(13);
  const auto w = ModelWeights::random(5, 6, 2, 5, rng);
  const auto b = random_batch(rng, 5, 5, 10, 4);
  const auto tf = bptt_gradients(w, b, TrainingRegime::teacher_forced());
  const auto ar = bptt_gradients(w, b, TrainingRegime::autoregressive(1));
  EXPECT_NEAR(tf.loss, ar.loss, 1e-12);
  for (std::size_t k = 0; k < tf.grad.tensors.size(); ++k)
    EXPECT_LE((tf.grad.tensors[k] - ar.grad.tensors[k]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bptt, InfinitePeriodIgnoresLaterInputs) {
  Rng rng(14);
  const auto w = ModelWeights::random(4, 5, 1, 4, rng);
  auto b = random_batch(rng, 4, 4, 7, 2);
  const auto regime = TrainingRegime::autoregressive(0);
  const double before = window_loss(w, b, regime);
  for (std::size_t t = 1; t < b.steps(); ++t) b.inputs[t].setConstant(123.0);
  EXPECT_EQ(window_loss(w, b, regime), before);
  for (std::size_t t = 1; t < 50; ++t) EXPECT_FALSE(regime.anchored(t));
  const auto ten = TrainingRegime::autoregressive(10);
  EXPECT_TRUE(ten.anchored(0));
  EXPECT_TRUE(ten.anchored(10));
  EXPECT_FALSE(ten.anchored(9));
}

TEST(Bptt, ZeroLossWindowHasZeroGradient) {
  Rng rng(15);
  const auto w = ModelWeights::random(3, 4, 2, 3, rng);
  auto b = random_batch(rng, 3, 3, 5, 2);
  for (const auto regime : {TrainingRegime::teacher_forced(), TrainingRegime::autoregressive(2)}) {
    std::vector<Eigen::MatrixXd> preds;
    window_loss(w, b, regime, &preds);
    b.targets = preds;
    const auto g = bptt_gradients(w, b, regime);
    EXPECT_EQ(g.loss, 0.0);
    EXPECT_EQ(g.grad.squared_norm(), 0.0);
  }
}

TEST(Bptt, NonFiniteLoss) {
  Rng rng(16);
  auto w = ModelWeights::random(3, 4, 1, 3, rng);
  auto b = random_batch(rng, 3, 3, 4, 1);
  b.targets[2](0, 0) = std::numeric_limits<double>::infinity();
  try {
    bptt_gradients(w, b, TrainingRegime::teacher_forced());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteGradient);
  }
}

TEST(AdamStep, ZeroGradientLeavesWeights) {
  Rng rng(17);
  auto w = ModelWeights::random(3, 4, 1, 3, rng);
  const auto before = w;
  Adam adam(AdamParams{}, w);
  auto zero = w;
  zero.set_zero();
  adam.step(w, zero);
  for (std::size_t k = 0; k < w.tensors.size(); ++k) EXPECT_EQ(w.tensors[k], before.tensors[k]);
}

TEST(AdamStep, FirstStepIsLrTimesSign) {
  Rng rng(18);
  auto w = ModelWeights::random(3, 4, 1, 3, rng);
  const auto before = w;
  auto g = w;
  for (auto& t : g.tensors) t = t.unaryExpr([&](double) { return rng.uniform(-5, 5); });
  AdamParams p;
  p.lr = 0.01;
  Adam adam(p, w);
  adam.step(w, g);
  for (std::size_t k = 0; k < w.tensors.size(); ++k)
    for (Eigen::Index i = 0; i < w.tensors[k].size(); ++i) {
      const double gi = g.tensors[k].data()[i];
      const double step = before.tensors[k].data()[i] - w.tensors[k].data()[i];
      EXPECT_NEAR(step, p.lr * (gi > 0 ? 1 : -1), 1e-6 * p.lr / std::min(1.0, std::abs(gi)) + 1e-12);
    }
}

TEST(AdamStep, Deterministic) {
  Rng rng(19);
  auto w1 = ModelWeights::random(3, 4, 1, 3, rng);
  auto w2 = w1;
  const auto g = ModelWeights::random(3, 4, 1, 3, rng);
  Adam a(AdamParams{}, w1), b(AdamParams{}, w2);
  for (int i = 0; i < 5; ++i) {
    a.step(w1, g);
    b.step(w2, g);
  }
  EXPECT_EQ(w1.hash(), w2.hash());
}

TEST(Train, OverfitsShortSequence) {
  ModelConfig c;
  c.variant = ModelVariant::SM2SM;
  c.layers = 1;
  c.units = 24;
  c.window = 20;
  c.batch = 1;
  c.epochs = 3000;
  c.adam.lr = 5e-3;
  c.target_loss = 1e-4;
  const auto [model, report] = train({sine_sequence(20)}, c);
  EXPECT_LT(report.loss.back(), 1e-4);
  EXPECT_LT(report.loss.size(), 3000u);
}

TEST(Train, SameSeedSameCurve) {
  ModelConfig c;
  c.variant = ModelVariant::S2S;
  c.units = 8;
  c.window = 12;
  c.batch = 5;
  c.epochs = 20;
  c.autoregressive = true;
  c.ar_period = 4;
  c.batch_chunk = 2;
  const std::vector<TrainingSequence> data{random_sequence(40, 1), random_sequence(30, 2)};
  const auto a = train(data, c);
  const auto b = train(data, c);
  EXPECT_EQ(a.second.loss, b.second.loss);
  EXPECT_EQ(a.second.weights_hash, b.second.weights_hash);
  c.seed = 2;
  EXPECT_NE(train(data, c).second.weights_hash, a.second.weights_hash);
}

TEST(Train, ChunkingDoesNotChangeTheGradient) {
  ModelConfig c;
  c.variant = ModelVariant::S2S;
  c.units = 6;
  c.window = 10;
  c.batch = 6;
  c.epochs = 3;
  const std::vector<TrainingSequence> data{random_sequence(40, 3)};
  c.batch_chunk = 6;
  const auto whole = train(data, c);
  c.batch_chunk = 4;
  const auto split = train(data, c);
  for (std::size_t e = 0; e < whole.second.loss.size(); ++e)
    EXPECT_NEAR(whole.second.loss[e], split.second.loss[e], 1e-12);
}

TEST(Train, LossInvariantToAffineUnits) {
  ModelConfig c;
  c.variant = ModelVariant::SM2SM;
  c.units = 6;
  c.window = 10;
  c.batch = 4;
  c.epochs = 10;
  auto data = random_sequence(50, 4);
  auto scaled = data;
  for (auto& r : scaled.rows)
    for (std::size_t d = 0; d < kStateDims; ++d) r[d] = 57.3 * r[d] + 0.25 * static_cast<double>(d);
  const auto a = train({data}, c);
  const auto b = train({scaled}, c);
  for (std::size_t e = 0; e < a.second.loss.size(); ++e)
    EXPECT_NEAR(a.second.loss[e], b.second.loss[e], 1e-10 * a.second.loss[e]);
}

TEST(Train, S2MReadsSlaveAndPredictsNextMaster) {
  const auto seq = random_sequence(30, 6);
  ModelConfig c;
  c.variant = ModelVariant::S2M;
  c.window = 5;
  const auto n = fit_normalizer({seq});
  std::vector<std::vector<StateRow>> norm(1);
  for (const auto& r : seq.rows) norm[0].push_back(n.normalize(r));
  const auto b = make_window_batch(norm, c, {{0, 7}});
  ASSERT_EQ(b.steps(), 4u);
  for (std::size_t t = 0; t < 4; ++t) {
    ASSERT_EQ(b.inputs[t].rows(), 9);
    ASSERT_EQ(b.targets[t].rows(), 9);
    for (Eigen::Index d = 0; d < 9; ++d) {
      EXPECT_EQ(b.inputs[t](d, 0), norm[0][7 + t][static_cast<std::size_t>(d)]);
      EXPECT_EQ(b.targets[t](d, 0), norm[0][8 + t][9 + static_cast<std::size_t>(d)]);
    }
  }
}

TEST(Variants, LayoutsMatchModelTable) {
  EXPECT_EQ(layout_of(ModelVariant::S2S).in_dims, 9u);
  EXPECT_EQ(layout_of(ModelVariant::S2S).out_dims, 9u);
  EXPECT_EQ(layout_of(ModelVariant::S2M).out_offset, 9u);
  // SM2SM input and target each carry both robots
  EXPECT_EQ(layout_of(ModelVariant::SM2SM).in_dims, 18u);
  EXPECT_EQ(layout_of(ModelVariant::SM2SM).out_dims, 18u);
  ModelConfig c;
  c.variant = ModelVariant::S2M;
  c.autoregressive = true;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Train, TooShortDataIsEmptyDataset) {
  ModelConfig c;
  c.window = 100;
  try {
    train({random_sequence(50, 1)}, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}

namespace {
SequenceModel small_model() {
  ModelConfig c;
  c.variant = ModelVariant::SM2SM;
  c.units = 5;
  c.window = 8;
  c.batch = 2;
  c.epochs = 3;
  return train({random_sequence(30, 9)}, c).first;
}
}  // namespace

TEST(Checkpoint, RoundTripPredictsIdentically) {
  const auto m = small_model();
  const auto back = deserialize_model(serialize_model(m));
  EXPECT_EQ(back.normalizer, m.normalizer);
  EXPECT_EQ(back.weights.hash(), m.weights.hash());
  ModelRunner a(m), b(back);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(18, 0.1, 0.9);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a.step(x), b.step(x));
}

TEST(Checkpoint, CorruptMagic) {
  std::string bytes = serialize_model(small_model());
  bytes[1] = 'X';
  try {
    deserialize_model(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Malformed);
  }
}

TEST(Checkpoint, NewerVersion) {
  std::string bytes = serialize_model(small_model());
  bytes[4] = '2';
  try {
    deserialize_model(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::VersionMismatch);
  }
}

TEST(Checkpoint, ShapeConflict) {
  std::string bytes = serialize_model(small_model());
  const auto at = bytes.find("units=5");
  ASSERT_NE(at, std::string::npos);
  bytes.replace(at, 7, "units=6");
  try {
    deserialize_model(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Malformed);
  }
}

TEST(Checkpoint, TruncatedPayload) {
  std::string bytes = serialize_model(small_model());
  bytes.resize(bytes.size() - 8);
  EXPECT_THROW(deserialize_model(bytes), Error);
}
