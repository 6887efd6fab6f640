#pragma once

// LSTM stack + linear head, trained by BPTT with Adam, in two regimes:
// teacher forcing, and free running where the model's own prediction is the
// next input except at every `period`-th step, which is re-anchored to data.

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bcil/core.hpp"
#include "bcil/teleop.hpp"

namespace bcil {

enum class ModelVariant { S2S, S2M, SM2SM };

inline const char* to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::S2S: return "S2S";
    case ModelVariant::S2M: return "S2M";
    case ModelVariant::SM2SM: return "SM2SM";
  }
  return "?";
}

inline ModelVariant parse_variant(std::string_view s) {
  if (s == "S2S") return ModelVariant::S2S;
  if (s == "S2M") return ModelVariant::S2M;
  if (s == "SM2SM") return ModelVariant::SM2SM;
  throw Error(ErrorKind::InvalidArgument, "unknown variant '" + std::string(s) + "' (S2S | S2M | SM2SM)");
}

/// Columns of the 18-dim state row (slave 0..8, master 9..17) a variant reads and predicts.
struct VariantLayout {
  std::size_t in_offset;
  std::size_t in_dims;
  std::size_t out_offset;
  std::size_t out_dims;
};

inline VariantLayout layout_of(ModelVariant v) {
  switch (v) {
    case ModelVariant::S2S: return {0, 9, 0, 9};
    case ModelVariant::S2M: return {0, 9, 9, 9};
    case ModelVariant::SM2SM: return {0, 18, 0, 18};
  }
  return {0, 0, 0, 0};
}

/// Free running needs the prediction to live in the input space.
inline bool supports_feedback(ModelVariant v) { return v != ModelVariant::S2M; }

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ModelConfig {
  ModelVariant variant = ModelVariant::SM2SM;
  int layers = 2;
  int units = 50;
  int window = 150;   // rows per training window
  int batch = 100;    // windows per Adam step
  bool autoregressive = false;
  int ar_period = 10; // 0 = never re-anchor after the first input
  AdamParams adam;
  int epochs = 100;   // one batch per epoch
  std::uint64_t seed = 1;
  double clip_norm = 1.0;     // global gradient-norm clip in free-running mode; 0 disables
  double target_loss = 0.0;   // stop as soon as the batch loss falls below; 0 disables
  int batch_chunk = 32;       // windows evaluated together

  std::size_t in_dims() const { return layout_of(variant).in_dims; }
  std::size_t out_dims() const { return layout_of(variant).out_dims; }

  void validate() const {
    if (layers < 1) throw Error(ErrorKind::InvalidArgument, "layers must be >= 1");
    if (units < 1) throw Error(ErrorKind::InvalidArgument, "units must be >= 1");
    if (window < 2) throw Error(ErrorKind::InvalidArgument, "window must be >= 2");
    if (batch < 1) throw Error(ErrorKind::InvalidArgument, "batch must be >= 1");
    if (epochs < 0) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 0");
    if (ar_period < 0) throw Error(ErrorKind::InvalidArgument, "ar period must be >= 0");
    if (batch_chunk < 1) throw Error(ErrorKind::InvalidArgument, "batch chunk must be >= 1");
    if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
        !(adam.eps > 0))
      throw Error(ErrorKind::InvalidArgument, "invalid Adam hyperparameters");
    if (autoregressive && !supports_feedback(variant))
      throw Error(ErrorKind::UnsupportedVariant, std::string(to_string(variant)) + " cannot be trained free-running");
  }

  std::string label() const {
    return std::string(to_string(variant)) + (autoregressive ? "-AR" : "-w/o-AR");
  }
};

// ---------------------------------------------------------------------------
// Normalisation

/// Per-dimension min-max map onto [0, 1]; constant dimensions map to 0.5.
struct Normalizer {
  std::array<double, kStateDims> lo{};
  std::array<double, kStateDims> hi{};

  double normalize(std::size_t d, double v) const {
    const double span = hi[d] - lo[d];
    return span > 0.0 ? (v - lo[d]) / span : 0.5;
  }
  double denormalize(std::size_t d, double v) const {
    const double span = hi[d] - lo[d];
    return span > 0.0 ? lo[d] + v * span : lo[d];
  }
  StateRow normalize(const StateRow& r) const {
    StateRow out;
    for (std::size_t d = 0; d < kStateDims; ++d) out[d] = normalize(d, r[d]);
    return out;
  }
  StateRow denormalize(const StateRow& r) const {
    StateRow out;
    for (std::size_t d = 0; d < kStateDims; ++d) out[d] = denormalize(d, r[d]);
    return out;
  }
  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

inline Normalizer fit_normalizer(const std::vector<TrainingSequence>& data) {
  Normalizer n;
  n.lo.fill(std::numeric_limits<double>::infinity());
  n.hi.fill(-std::numeric_limits<double>::infinity());
  std::size_t count = 0;
  for (const auto& seq : data)
    for (const auto& row : seq.rows) {
      ++count;
      for (std::size_t d = 0; d < kStateDims; ++d) {
        n.lo[d] = std::min(n.lo[d], row[d]);
        n.hi[d] = std::max(n.hi[d], row[d]);
      }
    }
  if (count == 0) throw Error(ErrorKind::EmptyDataset, "cannot fit a normalizer to an empty dataset");
  return n;
}

// ---------------------------------------------------------------------------
// Weights

/// Tensors in declaration order: per layer w_in (4H x in), w_rec (4H x H),
/// bias (4H x 1); then w_out (out x H), b_out (out x 1). Gate rows are i, f, g, o.
struct ModelWeights {
  std::vector<Eigen::MatrixXd> tensors;
  int layers = 0;

  static ModelWeights zeros(std::size_t in, std::size_t units, int layers, std::size_t out) {
    ModelWeights w;
    w.layers = layers;
    const auto h = static_cast<Eigen::Index>(units);
    for (int l = 0; l < layers; ++l) {
      const auto fan_in = static_cast<Eigen::Index>(l == 0 ? in : units);
      w.tensors.push_back(Eigen::MatrixXd::Zero(4 * h, fan_in));
      w.tensors.push_back(Eigen::MatrixXd::Zero(4 * h, h));
      w.tensors.push_back(Eigen::MatrixXd::Zero(4 * h, 1));
    }
    w.tensors.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), h));
    w.tensors.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), 1));
    return w;
  }

  /// Uniform(-1/sqrt(H), 1/sqrt(H)) for every tensor.
  static ModelWeights random(std::size_t in, std::size_t units, int layers, std::size_t out, Rng& rng) {
    ModelWeights w = zeros(in, units, layers, out);
    const double k = 1.0 / std::sqrt(static_cast<double>(units));
    for (auto& t : w.tensors)
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        for (Eigen::Index r = 0; r < t.rows(); ++r) t(r, c) = rng.uniform(-k, k);
    return w;
  }

  Eigen::MatrixXd& w_in(int l) { return tensors[static_cast<std::size_t>(3 * l)]; }
  Eigen::MatrixXd& w_rec(int l) { return tensors[static_cast<std::size_t>(3 * l + 1)]; }
  Eigen::MatrixXd& bias(int l) { return tensors[static_cast<std::size_t>(3 * l + 2)]; }
  Eigen::MatrixXd& w_out() { return tensors[static_cast<std::size_t>(3 * layers)]; }
  Eigen::MatrixXd& b_out() { return tensors[static_cast<std::size_t>(3 * layers + 1)]; }
  const Eigen::MatrixXd& w_in(int l) const { return tensors[static_cast<std::size_t>(3 * l)]; }
  const Eigen::MatrixXd& w_rec(int l) const { return tensors[static_cast<std::size_t>(3 * l + 1)]; }
  const Eigen::MatrixXd& bias(int l) const { return tensors[static_cast<std::size_t>(3 * l + 2)]; }
  const Eigen::MatrixXd& w_out() const { return tensors[static_cast<std::size_t>(3 * layers)]; }
  const Eigen::MatrixXd& b_out() const { return tensors[static_cast<std::size_t>(3 * layers + 1)]; }

  Eigen::Index units() const { return w_rec(0).cols(); }
  Eigen::Index in_dims() const { return w_in(0).cols(); }
  Eigen::Index out_dims() const { return w_out().rows(); }

  std::string tensor_name(std::size_t i) const {
    const auto l = i / 3;
    if (l < static_cast<std::size_t>(layers)) {
      static constexpr const char* parts[] = {"w_in", "w_rec", "bias"};
      return "lstm" + std::to_string(l) + "." + parts[i % 3];
    }
    return i == 3 * static_cast<std::size_t>(layers) ? "fc.w" : "fc.b";
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }

  void set_zero() {
    for (auto& t : tensors) t.setZero();
  }

  bool finite() const {
    for (const auto& t : tensors)
      if (!t.allFinite()) return false;
    return true;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& t : tensors) s += t.squaredNorm();
    return s;
  }

  std::string hash() const {
    Fnv1a h;
    for (const auto& t : tensors)
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) h.update(t(r, c));
    return hex64(h.digest());
  }
};

/// Per-layer hidden and cell state, one column per sequence.
struct HiddenState {
  std::vector<Eigen::MatrixXd> h;
  std::vector<Eigen::MatrixXd> c;

  static HiddenState zeros(const ModelWeights& w, Eigen::Index batch = 1) {
    HiddenState s;
    for (int l = 0; l < w.layers; ++l) {
      s.h.push_back(Eigen::MatrixXd::Zero(w.units(), batch));
      s.c.push_back(Eigen::MatrixXd::Zero(w.units(), batch));
    }
    return s;
  }
};

namespace detail {

inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

struct LayerCache {
  Eigen::MatrixXd x, h_prev, c_prev, i, f, g, o, c, tc, h;
};

/// One time step through the whole stack; fills `cache` when given.
inline Eigen::MatrixXd step_stack(const ModelWeights& w, const Eigen::MatrixXd& x, HiddenState& state,
                                  std::vector<LayerCache>* cache) {
  const Eigen::Index H = w.units();
  const Eigen::Index B = x.cols();
  Eigen::MatrixXd input = x;
  Eigen::MatrixXd z(4 * H, B);
  for (int l = 0; l < w.layers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    z.noalias() = w.w_in(l) * input;
    z.noalias() += w.w_rec(l) * state.h[ul];
    z.colwise() += w.bias(l).col(0);
    Eigen::ArrayXXd gi = sigmoid(z.topRows(H).array());
    Eigen::ArrayXXd gf = sigmoid(z.middleRows(H, H).array());
    Eigen::ArrayXXd gg = z.middleRows(2 * H, H).array().tanh();
    Eigen::ArrayXXd go = sigmoid(z.bottomRows(H).array());
    Eigen::ArrayXXd c = gf * state.c[ul].array() + gi * gg;
    Eigen::ArrayXXd tc = c.tanh();
    Eigen::MatrixXd h = (go * tc).matrix();
    if (cache) {
      auto& lc = (*cache)[ul];
      lc.x = input;
      lc.h_prev = state.h[ul];
      lc.c_prev = state.c[ul];
      lc.i = gi.matrix();
      lc.f = gf.matrix();
      lc.g = gg.matrix();
      lc.o = go.matrix();
      lc.c = c.matrix();
      lc.tc = tc.matrix();
      lc.h = h;
    }
    state.c[ul] = c.matrix();
    state.h[ul] = h;
    input = std::move(h);
  }
  Eigen::MatrixXd y = w.w_out() * input;
  y.colwise() += w.b_out().col(0);
  return y;
}

}  // namespace detail

/// One prediction step for a single sequence: normalized x in, normalized y out.
inline Eigen::VectorXd model_step(const ModelWeights& w, const ModelConfig& config, const Eigen::VectorXd& x,
                                  HiddenState& hidden) {
  if (static_cast<std::size_t>(x.size()) != config.in_dims() || w.in_dims() != x.size())
    throw Error(ErrorKind::DimensionMismatch, "model input has " + std::to_string(x.size()) + " dims, expected " +
                                                  std::to_string(config.in_dims()));
  Eigen::MatrixXd xm = x;
  return detail::step_stack(w, xm, hidden, nullptr).col(0);
}

/// Mean squared error over all steps (rows) and dimensions (columns).
inline double loss_mse(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw Error(ErrorKind::DimensionMismatch, "prediction/target shapes differ");
  if (predictions.size() == 0) throw Error(ErrorKind::DimensionMismatch, "empty prediction");
  return (predictions - targets).squaredNorm() / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// BPTT

struct TrainingRegime {
  bool free_running = false;
  std::size_t period = 10;  // re-anchor every `period` steps; 0 = never after step 0

  static TrainingRegime teacher_forced() { return {false, 1}; }
  static TrainingRegime autoregressive(std::size_t period) { return {true, period}; }

  /// True when step t reads the dataset rather than the previous prediction.
  bool anchored(std::size_t t) const {
    if (!free_running || t == 0) return true;
    return period != 0 && t % period == 0;
  }
};

/// T steps of B windows: inputs[t] is in x B, targets[t] is out x B (normalized).
struct WindowBatch {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> targets;

  std::size_t steps() const { return inputs.size(); }
  Eigen::Index batch() const { return inputs.empty() ? 0 : inputs.front().cols(); }
};

struct GradientResult {
  double loss = 0.0;
  ModelWeights grad;
  std::vector<Eigen::MatrixXd> predictions;  // per step, out x B
};

namespace detail {
inline void check_batch(const ModelWeights& w, const WindowBatch& b, const TrainingRegime& regime) {
  if (b.steps() < 1 || b.targets.size() != b.steps())
    throw Error(ErrorKind::DimensionMismatch, "window batch needs matching, non-empty inputs and targets");
  for (std::size_t t = 0; t < b.steps(); ++t) {
    if (b.inputs[t].rows() != w.in_dims() || b.targets[t].rows() != w.out_dims() ||
        b.inputs[t].cols() != b.batch() || b.targets[t].cols() != b.batch())
      throw Error(ErrorKind::DimensionMismatch, "window batch shape does not match the model");
  }
  if (regime.free_running && w.in_dims() != w.out_dims())
    throw Error(ErrorKind::UnsupportedVariant, "free running needs equal input and output dimensions");
}
}  // namespace detail

/// Forward pass only; returns the window loss.
inline double window_loss(const ModelWeights& w, const WindowBatch& b, const TrainingRegime& regime,
                          std::vector<Eigen::MatrixXd>* predictions = nullptr) {
  detail::check_batch(w, b, regime);
  HiddenState state = HiddenState::zeros(w, b.batch());
  double sse = 0.0;
  Eigen::MatrixXd y;
  for (std::size_t t = 0; t < b.steps(); ++t) {
    const Eigen::MatrixXd& x = regime.anchored(t) ? b.inputs[t] : y;
    y = detail::step_stack(w, x, state, nullptr);
    sse += (y - b.targets[t]).squaredNorm();
    if (predictions) predictions->push_back(y);
  }
  return sse / static_cast<double>(b.steps() * static_cast<std::size_t>(b.targets[0].size()));
}

/// Exact gradient of window_loss by backpropagation through time, including the
/// prediction-to-input feedback path in free-running mode.
inline GradientResult bptt_gradients(const ModelWeights& w, const WindowBatch& b, const TrainingRegime& regime) {
  detail::check_batch(w, b, regime);
  const std::size_t T = b.steps();
  const auto L = static_cast<std::size_t>(w.layers);
  const Eigen::Index H = w.units();
  const Eigen::Index B = b.batch();

  std::vector<std::vector<detail::LayerCache>> cache(T, std::vector<detail::LayerCache>(L));
  GradientResult out;
  out.predictions.reserve(T);
  HiddenState state = HiddenState::zeros(w, B);
  double sse = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const Eigen::MatrixXd& x = regime.anchored(t) ? b.inputs[t] : out.predictions.back();
    out.predictions.push_back(detail::step_stack(w, x, state, &cache[t]));
    sse += (out.predictions.back() - b.targets[t]).squaredNorm();
  }
  const double scale = 1.0 / static_cast<double>(T * static_cast<std::size_t>(b.targets[0].size()));
  out.loss = sse * scale;
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::NonFiniteGradient, "loss is not finite");

  out.grad = ModelWeights::zeros(static_cast<std::size_t>(w.in_dims()), static_cast<std::size_t>(H), w.layers,
                                 static_cast<std::size_t>(w.out_dims()));
  std::vector<Eigen::MatrixXd> dh_next(L, Eigen::MatrixXd::Zero(H, B));
  std::vector<Eigen::MatrixXd> dc_next(L, Eigen::MatrixXd::Zero(H, B));
  Eigen::MatrixXd dy_feedback = Eigen::MatrixXd::Zero(w.out_dims(), B);
  Eigen::MatrixXd dz(4 * H, B);

  for (std::size_t t = T; t-- > 0;) {
    Eigen::MatrixXd dy = 2.0 * scale * (out.predictions[t] - b.targets[t]) + dy_feedback;
    const auto& top = cache[t][L - 1];
    out.grad.w_out().noalias() += dy * top.h.transpose();
    out.grad.b_out() += dy.rowwise().sum();
    Eigen::MatrixXd dh_above = w.w_out().transpose() * dy;
    for (std::size_t l = L; l-- > 0;) {
      const auto& lc = cache[t][l];
      const int li = static_cast<int>(l);
      const Eigen::ArrayXXd dh = (dh_above + dh_next[l]).array();
      const Eigen::ArrayXXd o = lc.o.array();
      const Eigen::ArrayXXd tc = lc.tc.array();
      const Eigen::ArrayXXd dc = dh * o * (1.0 - tc.square()) + dc_next[l].array();
      const Eigen::ArrayXXd i = lc.i.array();
      const Eigen::ArrayXXd f = lc.f.array();
      const Eigen::ArrayXXd g = lc.g.array();
      dz.topRows(H) = (dc * g * i * (1.0 - i)).matrix();
      dz.middleRows(H, H) = (dc * lc.c_prev.array() * f * (1.0 - f)).matrix();
      dz.middleRows(2 * H, H) = (dc * i * (1.0 - g.square())).matrix();
      dz.bottomRows(H) = (dh * tc * o * (1.0 - o)).matrix();
      dc_next[l] = (dc * f).matrix();
      out.grad.w_in(li).noalias() += dz * lc.x.transpose();
      out.grad.w_rec(li).noalias() += dz * lc.h_prev.transpose();
      out.grad.bias(li) += dz.rowwise().sum();
      dh_next[l].noalias() = w.w_rec(li).transpose() * dz;
      dh_above.noalias() = w.w_in(li).transpose() * dz;
    }
    // dh_above now holds d(loss)/d(x_t); route it to y_{t-1} when x_t was a prediction
    if (t > 0 && !regime.anchored(t))
      dy_feedback = dh_above;
    else
      dy_feedback.setZero();
  }
  if (!out.grad.finite()) throw Error(ErrorKind::NonFiniteGradient, "gradient is not finite");
  return out;
}

// ---------------------------------------------------------------------------
// Adam

class Adam {
 public:
  Adam(const AdamParams& params, const ModelWeights& shape) : p_(params), m_(shape), v_(shape) {
    m_.set_zero();
    v_.set_zero();
  }

  /// Bias-corrected Adam update in place.
  void step(ModelWeights& w, const ModelWeights& grad) {
    if (grad.tensors.size() != w.tensors.size() || m_.tensors.size() != w.tensors.size())
      throw Error(ErrorKind::DimensionMismatch, "Adam: weight/gradient layout differs");
    ++t_;
    const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < w.tensors.size(); ++k) {
      auto g = grad.tensors[k].array();
      auto m = m_.tensors[k].array();
      auto v = v_.tensors[k].array();
      m = p_.beta1 * m + (1.0 - p_.beta1) * g;
      v = p_.beta2 * v + (1.0 - p_.beta2) * g.square();
      w.tensors[k].array() -= p_.lr * (m / c1) / ((v / c2).sqrt() + p_.eps);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamParams p_;
  ModelWeights m_;
  ModelWeights v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Models and training

struct SequenceModel {
  ModelConfig config;
  Normalizer normalizer;
  ModelWeights weights;

  /// Normalized input columns of a raw 18-dim state row.
  Eigen::VectorXd input_of(const StateRow& raw) const {
    const auto lay = layout_of(config.variant);
    Eigen::VectorXd x(static_cast<Eigen::Index>(lay.in_dims));
    for (std::size_t d = 0; d < lay.in_dims; ++d)
      x(static_cast<Eigen::Index>(d)) = normalizer.normalize(lay.in_offset + d, raw[lay.in_offset + d]);
    return x;
  }
  Eigen::VectorXd target_of(const StateRow& raw) const {
    const auto lay = layout_of(config.variant);
    Eigen::VectorXd y(static_cast<Eigen::Index>(lay.out_dims));
    for (std::size_t d = 0; d < lay.out_dims; ++d)
      y(static_cast<Eigen::Index>(d)) = normalizer.normalize(lay.out_offset + d, raw[lay.out_offset + d]);
    return y;
  }
};

/// Stateful single-sequence runner around a model.
class ModelRunner {
 public:
  explicit ModelRunner(const SequenceModel& model)
      : model_(&model), hidden_(HiddenState::zeros(model.weights)) {}

  void reset() { hidden_ = HiddenState::zeros(model_->weights); }
  Eigen::VectorXd step(const Eigen::VectorXd& x) { return model_step(model_->weights, model_->config, x, hidden_); }
  const SequenceModel& model() const { return *model_; }

 private:
  const SequenceModel* model_;
  HiddenState hidden_;
};

struct TrainReport {
  std::vector<double> loss;  // batch loss before each Adam step
  double wall_seconds = 0.0;
  std::string weights_hash;
  ModelConfig config;
};

/// Windows for a batch of (sequence, start) picks, in normalized space.
inline WindowBatch make_window_batch(const std::vector<std::vector<StateRow>>& normalized, const ModelConfig& config,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& picks) {
  const auto lay = layout_of(config.variant);
  const std::size_t steps = static_cast<std::size_t>(config.window) - 1;
  const auto B = static_cast<Eigen::Index>(picks.size());
  WindowBatch b;
  b.inputs.assign(steps, Eigen::MatrixXd(static_cast<Eigen::Index>(lay.in_dims), B));
  b.targets.assign(steps, Eigen::MatrixXd(static_cast<Eigen::Index>(lay.out_dims), B));
  for (Eigen::Index col = 0; col < B; ++col) {
    const auto [s, start] = picks[static_cast<std::size_t>(col)];
    const auto& rows = normalized[s];
    for (std::size_t t = 0; t < steps; ++t) {
      const StateRow& now = rows[start + t];
      const StateRow& next = rows[start + t + 1];
      for (std::size_t d = 0; d < lay.in_dims; ++d)
        b.inputs[t](static_cast<Eigen::Index>(d), col) = now[lay.in_offset + d];
      for (std::size_t d = 0; d < lay.out_dims; ++d)
        b.targets[t](static_cast<Eigen::Index>(d), col) = next[lay.out_offset + d];
    }
  }
  return b;
}

inline TrainingRegime regime_of(const ModelConfig& config) {
  return config.autoregressive ? TrainingRegime::autoregressive(static_cast<std::size_t>(config.ar_period))
                               : TrainingRegime::teacher_forced();
}

/// Seeded mini-batch training: each epoch draws `batch` windows uniformly over
/// all valid starts, accumulates their gradients in draw order, and takes one
/// Adam step.
inline std::pair<SequenceModel, TrainReport> train(const std::vector<TrainingSequence>& dataset,
                                                   const ModelConfig& config) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  SequenceModel model;
  model.config = config;
  model.normalizer = fit_normalizer(dataset);

  std::vector<std::vector<StateRow>> normalized;
  std::vector<std::pair<std::size_t, std::size_t>> starts_per_seq;  // (sequence, number of starts)
  std::size_t total_starts = 0;
  for (const auto& seq : dataset) {
    std::vector<StateRow> rows;
    rows.reserve(seq.rows.size());
    for (const auto& r : seq.rows) {
      for (double v : r)
        if (!std::isfinite(v)) throw Error(ErrorKind::DimensionMismatch, "dataset contains non-finite values");
      rows.push_back(model.normalizer.normalize(r));
    }
    const std::size_t w = static_cast<std::size_t>(config.window);
    if (rows.size() >= w) {
      starts_per_seq.emplace_back(normalized.size(), rows.size() - w + 1);
      total_starts += rows.size() - w + 1;
    }
    normalized.push_back(std::move(rows));
  }
  if (total_starts == 0)
    throw Error(ErrorKind::EmptyDataset, "no sequence is long enough for a window of " + std::to_string(config.window));

  Rng init_rng(mix_seed(config.seed, 0x1417));
  model.weights = ModelWeights::random(config.in_dims(), static_cast<std::size_t>(config.units), config.layers,
                                       config.out_dims(), init_rng);
  Adam adam(config.adam, model.weights);
  Rng pick_rng(mix_seed(config.seed, 0xba7c4));
  const TrainingRegime regime = regime_of(config);

  TrainReport report;
  report.config = config;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    picks.reserve(static_cast<std::size_t>(config.batch));
    for (int i = 0; i < config.batch; ++i) {
      std::uint64_t k = pick_rng.below(total_starts);
      for (const auto& [s, n] : starts_per_seq) {
        if (k < n) {
          picks.emplace_back(s, static_cast<std::size_t>(k));
          break;
        }
        k -= n;
      }
    }
    ModelWeights grad = ModelWeights::zeros(config.in_dims(), static_cast<std::size_t>(config.units), config.layers,
                                            config.out_dims());
    double loss = 0.0;
    const std::size_t chunk = static_cast<std::size_t>(config.batch_chunk);
    for (std::size_t first = 0; first < picks.size(); first += chunk) {
      const std::size_t last = std::min(picks.size(), first + chunk);
      std::vector<std::pair<std::size_t, std::size_t>> part(picks.begin() + static_cast<std::ptrdiff_t>(first),
                                                            picks.begin() + static_cast<std::ptrdiff_t>(last));
      const double weight = static_cast<double>(part.size()) / static_cast<double>(picks.size());
      const auto r = bptt_gradients(model.weights, make_window_batch(normalized, config, part), regime);
      loss += weight * r.loss;
      for (std::size_t k = 0; k < grad.tensors.size(); ++k) grad.tensors[k] += weight * r.grad.tensors[k];
    }
    report.loss.push_back(loss);
    if (config.target_loss > 0.0 && loss < config.target_loss) break;
    if (config.autoregressive && config.clip_norm > 0.0) {
      const double norm = std::sqrt(grad.squared_norm());
      if (norm > config.clip_norm)
        for (auto& t : grad.tensors) t *= config.clip_norm / norm;
    }
    adam.step(model.weights, grad);
  }
  report.weights_hash = model.weights.hash();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   BCIL1\n
//   key=value lines (config, normalizer, tensor name + shape in order)
//   \0
//   little-endian binary64 payload, tensors in declared order, row-major

namespace detail {
inline std::string join_doubles(const std::array<double, kStateDims>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}
inline void put_le(std::string& out, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}
inline double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}
}  // namespace detail

inline std::string serialize_model(const SequenceModel& m) {
  const auto& c = m.config;
  std::ostringstream meta;
  meta << "BCIL1\n";
  meta << "variant=" << to_string(c.variant) << '\n'
       << "layers=" << c.layers << '\n'
       << "units=" << c.units << '\n'
       << "window=" << c.window << '\n'
       << "batch=" << c.batch << '\n'
       << "autoregressive=" << (c.autoregressive ? 1 : 0) << '\n'
       << "ar_period=" << c.ar_period << '\n'
       << "lr=" << format_double(c.adam.lr) << '\n'
       << "beta1=" << format_double(c.adam.beta1) << '\n'
       << "beta2=" << format_double(c.adam.beta2) << '\n'
       << "eps=" << format_double(c.adam.eps) << '\n'
       << "epochs=" << c.epochs << '\n'
       << "seed=" << c.seed << '\n'
       << "clip_norm=" << format_double(c.clip_norm) << '\n'
       << "target_loss=" << format_double(c.target_loss) << '\n'
       << "norm_min=" << detail::join_doubles(m.normalizer.lo) << '\n'
       << "norm_max=" << detail::join_doubles(m.normalizer.hi) << '\n';
  for (std::size_t i = 0; i < m.weights.tensors.size(); ++i)
    meta << "tensor=" << m.weights.tensor_name(i) << ' ' << m.weights.tensors[i].rows() << ' '
         << m.weights.tensors[i].cols() << '\n';
  std::string out = meta.str();
  out.push_back('\0');
  for (const auto& t : m.weights.tensors)
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index col = 0; col < t.cols(); ++col) detail::put_le(out, t(r, col));
  return out;
}

inline SequenceModel deserialize_model(const std::string& bytes) {
  auto malformed = [](const std::string& why) { return Error(ErrorKind::Malformed, "checkpoint: " + why); };
  if (bytes.size() < 6 || bytes.compare(0, 4, "BCIL") != 0) throw malformed("bad magic");
  if (bytes.compare(0, 6, "BCIL1\n") != 0) {
    if (bytes.size() >= 6 && bytes[5] == '\n')
      throw Error(ErrorKind::VersionMismatch, "checkpoint version '" + bytes.substr(4, 1) + "' is not supported");
    throw malformed("bad magic");
  }
  const auto nul = bytes.find('\0', 6);
  if (nul == std::string::npos) throw malformed("missing metadata terminator");
  std::map<std::string, std::string> kv;
  std::vector<std::tuple<std::string, long, long>> shapes;
  std::istringstream meta(bytes.substr(6, nul - 6));
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw malformed("metadata line without '='");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "tensor") {
      std::istringstream ts(value);
      std::string name;
      long r = -1, c = -1;
      if (!(ts >> name >> r >> c) || r < 0 || c < 0) throw malformed("bad tensor line '" + value + "'");
      shapes.emplace_back(name, r, c);
    } else {
      kv[key] = value;
    }
  }
  auto need = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw malformed("missing key '" + k + "'");
    return it->second;
  };
  auto num = [&](const std::string& k) {
    double v;
    if (!parse_double(need(k), v)) throw malformed("bad value for '" + k + "'");
    return v;
  };
  auto integer = [&](const std::string& k) {
    const double v = num(k);
    if (v != std::floor(v)) throw malformed("non-integer value for '" + k + "'");
    return static_cast<long long>(v);
  };
  SequenceModel m;
  auto& c = m.config;
  try {
    c.variant = parse_variant(need("variant"));
  } catch (const Error&) {
    throw malformed("unknown variant");
  }
  c.layers = static_cast<int>(integer("layers"));
  c.units = static_cast<int>(integer("units"));
  c.window = static_cast<int>(integer("window"));
  c.batch = static_cast<int>(integer("batch"));
  c.autoregressive = integer("autoregressive") != 0;
  c.ar_period = static_cast<int>(integer("ar_period"));
  c.adam.lr = num("lr");
  c.adam.beta1 = num("beta1");
  c.adam.beta2 = num("beta2");
  c.adam.eps = num("eps");
  c.epochs = static_cast<int>(integer("epochs"));
  c.seed = static_cast<std::uint64_t>(std::stoull(need("seed")));
  c.clip_norm = num("clip_norm");
  c.target_loss = num("target_loss");
  try {
    c.validate();
  } catch (const Error& e) {
    throw malformed(std::string("invalid config: ") + e.what());
  }
  for (auto [key, dst] : {std::pair{"norm_min", &m.normalizer.lo}, std::pair{"norm_max", &m.normalizer.hi}}) {
    const auto parts = split(need(key), ',');
    if (parts.size() != kStateDims) throw malformed(std::string(key) + " must have 18 values");
    for (std::size_t d = 0; d < kStateDims; ++d)
      if (!parse_double(parts[d], (*dst)[d])) throw malformed(std::string("bad number in ") + key);
  }
  for (std::size_t d = 0; d < kStateDims; ++d)
    if (!(m.normalizer.lo[d] <= m.normalizer.hi[d])) throw malformed("normalizer min exceeds max");

  m.weights = ModelWeights::zeros(c.in_dims(), static_cast<std::size_t>(c.units), c.layers, c.out_dims());
  if (shapes.size() != m.weights.tensors.size()) throw malformed("tensor count does not match the config");
  std::size_t expected_bytes = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, r, cols] = shapes[i];
    const auto& t = m.weights.tensors[i];
    if (name != m.weights.tensor_name(i) || r != t.rows() || cols != t.cols())
      throw malformed("tensor '" + name + "' conflicts with the config");
    expected_bytes += static_cast<std::size_t>(r * cols) * 8;
  }
  if (bytes.size() - nul - 1 != expected_bytes) throw malformed("payload size does not match tensor shapes");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + nul + 1;
  for (auto& t : m.weights.tensors)
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index col = 0; col < t.cols(); ++col, p += 8) t(r, col) = detail::get_le(p);
  if (!m.weights.finite()) throw malformed("non-finite weights");
  return m;
}

inline void save_model(const SequenceModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
  const std::string bytes = serialize_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
}

inline SequenceModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace bcil
