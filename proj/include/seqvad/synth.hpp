#pragma once

// Seeded synthetic scenarios: nominal objects from a Gaussian mixture clipped
// to the unit cube, anomalous frames carrying one mean-shifted object.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "seqvad/data_model.hpp"
#include "seqvad/error.hpp"

namespace seqvad {

struct MixtureComponent {
  std::vector<double> mean;
  double scale = 0.1;  // isotropic standard deviation
};

/// Anomalous window [start, end] (inclusive) in test video `video`.
struct AnomalyWindow {
  std::size_t video = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct ScenarioConfig {
  std::size_t m = 18;
  std::size_t n_train_frames = 2000;
  std::size_t n_test_frames = 400;  // per test video
  std::size_t n_videos = 4;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::vector<MixtureComponent> components;
  std::vector<double> anomaly_shift;  // added to one object of each anomalous frame
  std::vector<AnomalyWindow> anomaly_windows;
  /// Probability that a nominal test frame carries one object shifted by
  /// `outlier_shift` (isolated nominal outliers).
  double outlier_rate = 0.0;
  std::vector<double> outlier_shift;
  std::uint64_t seed = 1;

  /// Three components with means drawn in [0.3, 0.7]^m, one anomaly window
  /// per video covering frames [n/3, n/3 + n/5), uniform shift `shift`.
  static ScenarioConfig make_default(std::size_t m = 18, std::uint64_t seed = 1, double shift = 0.5) {
    ScenarioConfig c;
    c.m = m;
    c.seed = seed;
    std::mt19937_64 rng(seed ^ 0x5ca1ab1eULL);
    std::uniform_real_distribution<double> mean_dist(0.3, 0.7);
    for (int i = 0; i < 3; ++i) {
      MixtureComponent comp;
      comp.scale = 0.08;
      comp.mean.resize(m);
      for (auto& v : comp.mean) v = mean_dist(rng);
      c.components.push_back(std::move(comp));
    }
    c.anomaly_shift.assign(m, shift);
    c.set_default_windows();
    return c;
  }

  void set_default_windows() {
    anomaly_windows.clear();
    const auto start = static_cast<std::int64_t>(n_test_frames / 3);
    const auto len = static_cast<std::int64_t>(std::max<std::size_t>(1, n_test_frames / 5));
    for (std::size_t v = 0; v < n_videos; ++v) anomaly_windows.push_back({v, start, start + len - 1});
  }

  void validate() const {
    if (m == 0) fail(ErrorKind::validation, "scenario m must be positive");
    if (components.empty()) fail(ErrorKind::validation, "scenario needs at least one mixture component");
    for (const auto& c : components) {
      if (c.mean.size() != m) fail(ErrorKind::dimension_mismatch, "mixture mean has wrong length");
      if (!(c.scale >= 0.0)) fail(ErrorKind::validation, "mixture scale must be non-negative");
    }
    if (min_objects > max_objects) fail(ErrorKind::validation, "min_objects exceeds max_objects");
    if (!anomaly_shift.empty() && anomaly_shift.size() != m) {
      fail(ErrorKind::dimension_mismatch, "anomaly shift has wrong length");
    }
    if (outlier_rate > 0.0 && outlier_shift.size() != m) {
      fail(ErrorKind::dimension_mismatch, "outlier shift has wrong length");
    }
    if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0)) fail(ErrorKind::validation, "outlier rate must lie in [0, 1]");
    for (std::size_t i = 0; i < anomaly_windows.size(); ++i) {
      const auto& w = anomaly_windows[i];
      if (w.video >= n_videos || w.start < 0 || w.end < w.start ||
          w.end >= static_cast<std::int64_t>(n_test_frames)) {
        fail(ErrorKind::validation, "anomaly window " + std::to_string(i) + " lies outside its video");
      }
      for (std::size_t j = 0; j < i; ++j) {
        const auto& o = anomaly_windows[j];
        if (o.video == w.video && w.start <= o.end && o.start <= w.end) {
          fail(ErrorKind::validation, "anomaly windows " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
        }
      }
    }
  }
};

struct Scenario {
  std::vector<FrameObservation> train;
  std::vector<FrameObservation> test;
  std::vector<GroundTruthEvent> truth;
};

inline std::string test_video_id(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "test_%03zu", v);
  return buf;
}

namespace detail {

class MixtureSampler {
 public:
  MixtureSampler(const ScenarioConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {}

  FeatureVector draw_object() {
    std::uniform_int_distribution<std::size_t> pick(0, config_.components.size() - 1);
    const auto& comp = config_.components[pick(rng_)];
    FeatureVector x(config_.m);
    for (std::size_t d = 0; d < config_.m; ++d) x[d] = std::clamp(comp.mean[d] + comp.scale * normal_(rng_), 0.0, 1.0);
    return x;
  }

  FrameObservation draw_frame(const std::string& video, std::int64_t index) {
    std::uniform_int_distribution<std::size_t> count(config_.min_objects, config_.max_objects);
    FrameObservation f{video, index, {}};
    const std::size_t n = count(rng_);
    for (std::size_t i = 0; i < n; ++i) f.objects.push_back(draw_object());
    return f;
  }

  bool coin(double p) { return p > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  /// Shifts the first object of a frame, adding one if the frame is empty.
  void shift_one(FrameObservation& f, const std::vector<double>& shift) {
    if (f.objects.empty()) f.objects.push_back(draw_object());
    auto& obj = f.objects.front();
    for (std::size_t d = 0; d < config_.m; ++d) obj[d] = std::clamp(obj[d] + shift[d], 0.0, 1.0);
  }

 private:
  const ScenarioConfig& config_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace detail

inline Scenario generate_scenario(const ScenarioConfig& config) {
  config.validate();
  detail::MixtureSampler sampler(config, config.seed);
  Scenario s;
  s.train.reserve(config.n_train_frames);
  for (std::size_t t = 0; t < config.n_train_frames; ++t) {
    s.train.push_back(sampler.draw_frame("train", static_cast<std::int64_t>(t)));
  }
  std::vector<double> zero_shift(config.m, 0.0);
  const auto& shift = config.anomaly_shift.empty() ? zero_shift : config.anomaly_shift;
  for (std::size_t v = 0; v < config.n_videos; ++v) {
    const auto id = test_video_id(v);
    for (std::size_t t = 0; t < config.n_test_frames; ++t) {
      const auto idx = static_cast<std::int64_t>(t);
      auto frame = sampler.draw_frame(id, idx);
      const bool anomalous = std::any_of(config.anomaly_windows.begin(), config.anomaly_windows.end(),
                                         [&](const auto& w) { return w.video == v && idx >= w.start && idx <= w.end; });
      if (anomalous) {
        sampler.shift_one(frame, shift);
      } else if (sampler.coin(config.outlier_rate)) {
        sampler.shift_one(frame, config.outlier_shift);
      }
      s.test.push_back(std::move(frame));
    }
  }
  for (const auto& w : config.anomaly_windows) {
    s.truth.push_back(
        GroundTruthEvent{test_video_id(w.video), w.start, w.end, static_cast<std::int64_t>(config.n_test_frames)});
  }
  validate_ground_truth(s.truth);
  return s;
}

/// Purely nominal frames in a single video "nominal".
inline std::vector<FrameObservation> generate_nominal_stream(const ScenarioConfig& config, std::size_t n_frames,
                                                             std::uint64_t seed) {
  config.validate();
  detail::MixtureSampler sampler(config, seed);
  std::vector<FrameObservation> frames;
  frames.reserve(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) frames.push_back(sampler.draw_frame("nominal", static_cast<std::int64_t>(t)));
  return frames;
}

}  // namespace seqvad
