#pragma once

// NominalModel: everything calibrated from nominal training data, plus the
// per-frame anomaly evidence computed against it.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqvad/calibration.hpp"
#include "seqvad/data_model.hpp"
#include "seqvad/error.hpp"
#include "seqvad/knn.hpp"
#include "seqvad/regressor.hpp"

namespace seqvad {

/// The slice of a model the sequential statistic needs.
struct DecisionRule {
  int m = 1;
  double d_alpha = 0.0;
  double h = 0.0;

  double drift(double evidence) const noexcept { return evidence_power(evidence, m) - evidence_power(d_alpha, m); }
};

class NominalModel {
 public:
  NominalModel() = default;

  NominalModel(NormalizationStats stats, TrainingSet reference, CalibrationResult calibration)
      : stats_(std::move(stats)),
        index_(std::make_shared<const TrainingSet>(std::move(reference))),
        calibration_(calibration),
        calibrated_(true) {
    if (stats_.dim() != index_.training_set().dim()) {
      fail(ErrorKind::dimension_mismatch, "normalization stats and reference set disagree on m");
    }
  }

  bool calibrated() const noexcept { return calibrated_; }
  std::size_t dimension() const noexcept { return stats_.dim(); }
  std::size_t k() const noexcept { return calibrated_ ? index_.training_set().k() : 0; }
  const NormalizationStats& stats() const noexcept { return stats_; }
  const TrainingSet& reference() const { return index_.training_set(); }
  const KdTree& index() const noexcept { return index_; }
  const CalibrationResult& calibration() const noexcept { return calibration_; }

  const std::optional<KnnRegressor>& regressor() const noexcept { return regressor_; }
  bool uses_regressor() const noexcept { return use_regressor_ && regressor_.has_value(); }
  void set_regressor(KnnRegressor r, bool enabled) {
    if (r.input_dim() != dimension()) fail(ErrorKind::dimension_mismatch, "regressor input width differs from m");
    regressor_ = std::move(r);
    use_regressor_ = enabled;
  }
  void enable_regressor(bool enabled) noexcept { use_regressor_ = enabled; }

  /// Replaces h, keeping the rest of the calibration (used for threshold
  /// overrides and per-beta sweeps).
  void set_threshold(double h) {
    if (!(h >= 0.0)) fail(ErrorKind::validation, "threshold must be non-negative");
    calibration_.h = h;
  }
  void set_beta(double beta) {
    calibration_.beta = beta;
    calibration_.h = compute_threshold(calibration_.omega0, beta);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  void set_seed(std::uint64_t seed) noexcept { seed_ = seed; }

  DecisionRule decision_rule() const {
    if (!calibrated_) fail(ErrorKind::validation, "model is not calibrated");
    return DecisionRule{calibration_.m, calibration_.d_alpha, calibration_.h};
  }

  FrameObservation normalize_frame(const FrameObservation& frame) const { return normalize(frame, stats_); }

  /// Distance of one normalized object: regressor output when enabled,
  /// otherwise the exact kNN distance.
  double object_distance(std::span<const double> x) const {
    if (!calibrated_) fail(ErrorKind::validation, "model is not calibrated");
    if (uses_regressor()) return regressor_->predict(x);
    return index_.knn_distance(x);
  }

 private:
  NormalizationStats stats_;
  KdTree index_;
  CalibrationResult calibration_;
  bool calibrated_ = false;
  std::optional<KnnRegressor> regressor_;
  bool use_regressor_ = false;
  std::uint64_t seed_ = 0;
};

/// Frame evidence: the largest object distance in a normalized frame. A frame
/// without objects carries no evidence (0).
inline double frame_evidence(const FrameObservation& normalized_frame, const NominalModel& model) {
  double best = 0.0;
  for (const auto& obj : normalized_frame.objects) best = std::max(best, model.object_distance(obj));
  return best;
}

/// Per-frame evidence for frames whose objects are the rows of the index, in
/// order, each scored leave-one-out against the rest.
inline std::vector<double> leave_one_out_frame_evidence(std::span<const FrameObservation> normalized_frames,
                                                        const KdTree& index) {
  const auto per_object = leave_one_out_distances(index);
  std::vector<double> evidence;
  evidence.reserve(normalized_frames.size());
  std::size_t row = 0;
  for (const auto& frame : normalized_frames) {
    double best = 0.0;
    for (std::size_t i = 0; i < frame.objects.size(); ++i) best = std::max(best, per_object.at(row++));
    evidence.push_back(best);
  }
  return evidence;
}

struct CalibrateOptions {
  double alpha = 0.05;
  double beta = 0.05;
  std::size_t k = 10;
  double phi_safety = 1.0;
  bool train_regressor = false;
  double lambda = 1e-5;
  RegressorTrainConfig regressor;
  std::uint64_t seed = 0;
};

/// Full calibration pipeline: normalization, leave-one-out evidences,
/// D_alpha, D_max, phi, v_m, omega0, h and, optionally, the regressor.
inline NominalModel calibrate(std::span<const FrameObservation> training, const CalibrateOptions& options) {
  if (training.empty()) fail(ErrorKind::insufficient_data, "no training frames");
  if (!(options.alpha >= 0.0 && options.alpha < 1.0)) fail(ErrorKind::validation, "alpha must lie in [0, 1)");
  const auto stats = fit_normalization(training);
  const std::size_t m = stats.dim();

  std::vector<FrameObservation> normalized;
  normalized.reserve(training.size());
  for (const auto& f : training) normalized.push_back(normalize(f, stats));

  auto reference = TrainingSet::from_frames(normalized, m, options.k);
  if (reference.size() < options.k + 1) {
    fail(ErrorKind::insufficient_data, "leave-one-out evidence needs more than k training objects");
  }
  KdTree index(std::make_shared<const TrainingSet>(reference));
  const auto evidence = leave_one_out_frame_evidence(normalized, index);
  const auto calibration =
      derive_calibration(evidence, options.alpha, options.beta, static_cast<int>(m), options.phi_safety);

  NominalModel model(stats, std::move(reference), calibration);
  model.set_seed(options.seed);
  if (options.train_regressor) {
    const auto targets = leave_one_out_distances(model.index());
    auto trained = train_knn_regressor(model.reference(), targets, options.lambda, options.regressor, options.seed);
    model.set_regressor(std::move(trained.model), true);
  }
  return model;
}

// Model file: a single JSON document.
//   format "seqvad-model", version 1, seed, k, calibration scalars,
//   normalization {min, max}, reference {rows, dim, features (row-major)},
//   use_regressor, regressor (layer records) or null.

inline constexpr int model_format_version = 1;

inline nlohmann::json model_to_json(const NominalModel& model) {
  if (!model.calibrated()) fail(ErrorKind::validation, "cannot serialize an uncalibrated model");
  const auto& c = model.calibration();
  nlohmann::json j;
  j["format"] = "seqvad-model";
  j["version"] = model_format_version;
  j["seed"] = model.seed();
  j["k"] = model.k();
  j["calibration"] = {{"alpha", c.alpha}, {"beta", c.beta},   {"m", c.m},         {"d_alpha", c.d_alpha},
                      {"d_max", c.d_max}, {"phi", c.phi},     {"phi_safety", c.phi_safety},
                      {"v_m", c.v_m},     {"theta", c.theta}, {"omega0", c.omega0}, {"h", c.h}};
  j["normalization"] = {{"min", model.stats().min}, {"max", model.stats().max}};
  j["reference"] = {{"rows", model.reference().size()},
                    {"dim", model.reference().dim()},
                    {"features", model.reference().features()}};
  j["use_regressor"] = model.uses_regressor();
  j["regressor"] = model.regressor() ? model.regressor()->to_json() : nlohmann::json(nullptr);
  return j;
}

inline NominalModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "seqvad-model") fail(ErrorKind::parse, "not a seqvad model file");
    const int version = j.at("version").get<int>();
    if (version != model_format_version) fail(ErrorKind::parse, "unsupported model version " + std::to_string(version));
    const auto& jc = j.at("calibration");
    CalibrationResult c;
    c.alpha = jc.at("alpha").get<double>();
    c.beta = jc.at("beta").get<double>();
    c.m = jc.at("m").get<int>();
    c.d_alpha = jc.at("d_alpha").get<double>();
    c.d_max = jc.at("d_max").get<double>();
    c.phi = jc.at("phi").get<double>();
    c.phi_safety = jc.at("phi_safety").get<double>();
    c.v_m = jc.at("v_m").get<double>();
    c.theta = jc.at("theta").get<double>();
    c.omega0 = jc.at("omega0").get<double>();
    c.h = jc.at("h").get<double>();
    NormalizationStats stats{j.at("normalization").at("min").get<std::vector<double>>(),
                             j.at("normalization").at("max").get<std::vector<double>>()};
    const auto& jr = j.at("reference");
    TrainingSet reference(jr.at("features").get<std::vector<double>>(), jr.at("dim").get<std::size_t>(),
                          j.at("k").get<std::size_t>());
    if (reference.size() != jr.at("rows").get<std::size_t>()) fail(ErrorKind::parse, "reference row count mismatch");
    NominalModel model(std::move(stats), std::move(reference), c);
    model.set_seed(j.at("seed").get<std::uint64_t>());
    if (!j.at("regressor").is_null()) {
      model.set_regressor(KnnRegressor::from_json(j.at("regressor")), j.at("use_regressor").get<bool>());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("model file: ") + e.what());
  }
}

inline void save_model(std::ostream& out, const NominalModel& model) {
  out << model_to_json(model).dump() << '\n';
  if (!out) fail(ErrorKind::io, "failed writing model");
}

inline NominalModel load_model(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::parse, std::string("model file: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace seqvad
