#pragma once

// Single-unit recurrent detector
//   s_t = ReLU(w_state * s_{t-1} + (w_input * x_t + bias)),  alarm when s_t >= h,
// where x_t is the evidence (or its m-th power). With both weights 1 and
// bias -D_alpha^m on m-th powers it is exactly the CUSUM-style statistic.
// Training labels synthetic anomalous segments 1 and nominal frames 0 and
// minimizes the mean cross-entropy of sigmoid(a (s_t - h)).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqvad/detector.hpp"
#include "seqvad/error.hpp"
#include "seqvad/model.hpp"

namespace seqvad {

struct RnnDetector {
  double w_state = 1.0;
  double w_input = 1.0;
  double bias = 0.0;
  double sharpness = 1.0;  // a, training-time sigmoid scale
  double h = 0.0;
  int m = 1;
  bool power_input = true;  // feed D^m instead of D

  bool operator==(const RnnDetector&) const = default;
};

inline double rnn_input(const RnnDetector& r, double evidence) noexcept {
  return r.power_input ? evidence_power(evidence, r.m) : evidence;
}

inline StepResult rnn_update(const RnnDetector& r, double state, double evidence) {
  const double pre = r.w_state * state + (r.w_input * rnn_input(r, evidence) + r.bias);
  const double next = std::max(pre, 0.0);
  return {next, is_alarm(next, r.h)};
}

/// The weight setting under which rnn_update reproduces update().
inline RnnDetector fixed_weight_rnn(const DecisionRule& rule) {
  RnnDetector r;
  r.m = rule.m;
  r.h = rule.h;
  r.bias = -evidence_power(rule.d_alpha, rule.m);
  r.sharpness = rule.h > 0.0 ? 10.0 / rule.h : 1.0;
  return r;
}

struct RnnTrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::size_t truncation = 25;      // frames per truncated BPTT window
  std::size_t sequence_length = 2000;
  std::size_t nominal_block = 60;   // nominal frames between synthetic segments
  std::size_t anomaly_block = 20;   // frames per synthetic anomalous segment
  double sharpness = 0.0;           // 0 selects 10 / h
  bool power_input = true;
};

struct RnnSequence {
  std::vector<double> evidence;
  std::vector<double> labels;
};

/// Alternating blocks of nominal evidence (label 0, cycled in order) and
/// synthetic anomalous evidence (label 1).
inline RnnSequence make_rnn_training_sequence(std::span<const double> nominal_evidence,
                                              const CalibrationResult& calibration, const RnnTrainConfig& config,
                                              std::uint64_t seed) {
  if (nominal_evidence.empty()) fail(ErrorKind::insufficient_data, "RNN training needs nominal evidence");
  if (config.nominal_block == 0 || config.anomaly_block == 0) {
    fail(ErrorKind::validation, "RNN block lengths must be positive");
  }
  const auto synthetic = generate_synthetic_evidence(calibration, config.sequence_length, seed);
  RnnSequence seq;
  seq.evidence.reserve(config.sequence_length);
  std::size_t nominal_pos = 0;
  std::size_t synthetic_pos = 0;
  while (seq.evidence.size() < config.sequence_length) {
    for (std::size_t i = 0; i < config.nominal_block && seq.evidence.size() < config.sequence_length; ++i) {
      seq.evidence.push_back(nominal_evidence[nominal_pos++ % nominal_evidence.size()]);
      seq.labels.push_back(0.0);
    }
    for (std::size_t i = 0; i < config.anomaly_block && seq.evidence.size() < config.sequence_length; ++i) {
      seq.evidence.push_back(synthetic[synthetic_pos++]);
      seq.labels.push_back(1.0);
    }
  }
  return seq;
}

struct RnnLossGradient {
  double loss = 0.0;
  std::array<double, 3> grad{};  // d/d(w_state, w_input, bias)
  double final_state = 0.0;
};

/// Mean cross-entropy over a window and its exact gradient by
/// backpropagation through time. `initial_state` is treated as a constant.
inline RnnLossGradient rnn_loss_gradient(const RnnDetector& r, std::span<const double> evidence,
                                         std::span<const double> labels, double initial_state) {
  const std::size_t n = evidence.size();
  RnnLossGradient out;
  if (n == 0) {
    out.final_state = initial_state;
    return out;
  }
  std::vector<double> inputs(n), pre(n), state(n + 1);
  state[0] = initial_state;
  double loss = 0.0;
  std::vector<double> dloss_dstate(n);
  for (std::size_t t = 0; t < n; ++t) {
    inputs[t] = rnn_input(r, evidence[t]);
    pre[t] = r.w_state * state[t] + (r.w_input * inputs[t] + r.bias);
    state[t + 1] = std::max(pre[t], 0.0);
    const double z = r.sharpness * (state[t + 1] - r.h);
    // softplus(z) - y z, evaluated stably
    const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += softplus - labels[t] * z;
    const double sigma = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    dloss_dstate[t] = r.sharpness * (sigma - labels[t]);
  }
  const double scale = 1.0 / static_cast<double>(n);
  double carry = 0.0;  // dL/ds_{t+1} flowing back from later frames
  for (std::size_t t = n; t-- > 0;) {
    const double ds = dloss_dstate[t] * scale + carry;
    const double dpre = pre[t] > 0.0 ? ds : 0.0;
    out.grad[0] += dpre * state[t];
    out.grad[1] += dpre * inputs[t];
    out.grad[2] += dpre;
    carry = dpre * r.w_state;
  }
  out.loss = loss * scale;
  out.final_state = state[n];
  return out;
}

struct RnnTrainResult {
  RnnDetector detector;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // full-sequence loss, index 0 before training
};

inline double rnn_sequence_loss(const RnnDetector& r, const RnnSequence& seq) {
  return rnn_loss_gradient(r, seq.evidence, seq.labels, 0.0).loss;
}

/// Trains (w_state, w_input, bias) from the fixed-weight starting point with
/// truncated BPTT; h stays at the calibrated value.
inline RnnTrainResult train_rnn_detector(std::span<const double> nominal_evidence, const NominalModel& model,
                                         const RnnTrainConfig& config, std::uint64_t seed) {
  if (config.truncation == 0) fail(ErrorKind::validation, "truncation window must be positive");
  const auto rule = model.decision_rule();
  const auto seq = make_rnn_training_sequence(nominal_evidence, model.calibration(), config, seed);

  RnnTrainResult result;
  RnnDetector r = fixed_weight_rnn(rule);
  r.power_input = config.power_input;
  if (!r.power_input) r.bias = -rule.d_alpha;
  if (config.sharpness > 0.0) r.sharpness = config.sharpness;

  result.initial_loss = rnn_sequence_loss(r, seq);
  result.loss_history.push_back(result.initial_loss);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double carried = 0.0;
    for (std::size_t begin = 0; begin < seq.evidence.size(); begin += config.truncation) {
      const std::size_t len = std::min(config.truncation, seq.evidence.size() - begin);
      const auto g = rnn_loss_gradient(r, std::span(seq.evidence).subspan(begin, len),
                                       std::span(seq.labels).subspan(begin, len), carried);
      if (!std::isfinite(g.loss)) fail(ErrorKind::numeric, "RNN training diverged at epoch " + std::to_string(epoch));
      r.w_state -= config.learning_rate * g.grad[0];
      r.w_input -= config.learning_rate * g.grad[1];
      r.bias -= config.learning_rate * g.grad[2];
      carried = g.final_state;
    }
    const double loss = rnn_sequence_loss(r, seq);
    if (!std::isfinite(loss) || !std::isfinite(r.w_state) || !std::isfinite(r.w_input) || !std::isfinite(r.bias)) {
      fail(ErrorKind::numeric, "RNN training diverged at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(loss);
  }
  result.detector = r;
  result.final_loss = result.loss_history.back();
  return result;
}

}  // namespace seqvad
