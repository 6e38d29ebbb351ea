#pragma once

// Sequential decision making on per-frame evidence:
//   s_t = max(s_{t-1} + D_t^m - D_alpha^m, 0), alarm when s_t >= h,
// with online localization of each alarmed event.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "seqvad/calibration.hpp"
#include "seqvad/data_model.hpp"
#include "seqvad/error.hpp"
#include "seqvad/model.hpp"

namespace seqvad {

inline constexpr std::size_t default_drop_window = 5;

/// Alarm rule. A zero statistic carries no accumulated evidence and never
/// alarms, which gives h = 0 the meaning "alarm on any positive statistic".
inline bool is_alarm(double statistic, double h) noexcept { return statistic >= h && statistic > 0.0; }

struct DetectorState {
  static constexpr std::size_t history_capacity = 32;

  double statistic = 0.0;
  std::int64_t frame_index = -1;
  bool in_alarm = false;
  std::optional<std::int64_t> alarm_frame;
  std::size_t drop_count = 0;
  std::deque<double> statistic_history;  // most recent last

  void remember(double s) {
    statistic_history.push_back(s);
    if (statistic_history.size() > history_capacity) statistic_history.pop_front();
  }
};

struct StepResult {
  double statistic = 0.0;
  bool alarm = false;
};

/// One recursion step on `state`.
inline StepResult update(DetectorState& state, double evidence, const DecisionRule& rule) {
  const double next = std::max(state.statistic + rule.drift(evidence), 0.0);
  state.statistic = next;
  ++state.frame_index;
  state.remember(next);
  return {next, is_alarm(next, rule.h)};
}

inline StepResult update(DetectorState& state, double evidence, const NominalModel& model) {
  return update(state, evidence, model.decision_rule());
}

/// The recursion over a whole evidence series, no resets.
inline std::vector<double> statistic_series(std::span<const double> evidence, const DecisionRule& rule) {
  std::vector<double> out;
  out.reserve(evidence.size());
  double s = 0.0;
  for (double e : evidence) {
    s = std::max(s + rule.drift(e), 0.0);
    out.push_back(s);
  }
  return out;
}

struct DetectionEvent {
  std::string video_id;
  std::int64_t alarm_frame = 0;
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;
  double peak_statistic = 0.0;

  bool operator==(const DetectionEvent&) const = default;
};

/// Offline end-point search. Starting after the alarm, the end is the first
/// index e whose statistic and the next drop_window - 1 statistics each
/// strictly decrease from their predecessor. Without such a window the event
/// runs to the last index. Frame numbers in the result are series positions.
inline DetectionEvent localize(std::span<const double> statistics, std::size_t alarm_index,
                               std::size_t drop_window = default_drop_window) {
  if (alarm_index >= statistics.size()) fail(ErrorKind::validation, "alarm index out of range");
  if (drop_window == 0) fail(ErrorKind::validation, "drop window must be at least 1");
  std::size_t end = statistics.size() - 1;
  std::size_t run = 0;
  for (std::size_t i = alarm_index + 1; i < statistics.size(); ++i) {
    run = statistics[i] < statistics[i - 1] ? run + 1 : 0;
    if (run == drop_window) {
      end = i + 1 - drop_window;
      break;
    }
  }
  const auto first = statistics.begin() + static_cast<std::ptrdiff_t>(alarm_index);
  const double peak = *std::max_element(first, statistics.begin() + static_cast<std::ptrdiff_t>(end) + 1);
  return DetectionEvent{{}, static_cast<std::int64_t>(alarm_index), static_cast<std::int64_t>(alarm_index),
                        static_cast<std::int64_t>(end), peak};
}

struct FrameDecision {
  std::string video_id;
  std::int64_t frame_index = 0;
  double evidence = 0.0;
  double statistic = 0.0;
  bool alarm = false;

  bool operator==(const FrameDecision&) const = default;
};

/// Online detector for one video stream. After an event's drop window
/// completes, the event is emitted and the statistic restarts from 0.
class StreamDetector {
 public:
  StreamDetector(DecisionRule rule, std::size_t drop_window = default_drop_window, std::string video_id = {})
      : rule_(rule), drop_window_(drop_window), video_id_(std::move(video_id)) {
    if (drop_window_ == 0) fail(ErrorKind::validation, "drop window must be at least 1");
  }

  const DetectorState& state() const noexcept { return state_; }

  FrameDecision step(std::int64_t frame_index, double evidence) {
    const double previous = state_.statistic;
    const auto result = update(state_, evidence, rule_);
    state_.frame_index = frame_index;
    recent_frames_.push_back(frame_index);
    if (recent_frames_.size() > drop_window_) recent_frames_.pop_front();

    if (state_.in_alarm) {
      state_.drop_count = result.statistic < previous ? state_.drop_count + 1 : 0;
      peak_ = std::max(peak_, result.statistic);
      if (state_.drop_count == drop_window_) {
        close_event(recent_frames_.front());
        state_.statistic = 0.0;
      }
    } else if (result.alarm) {
      state_.in_alarm = true;
      state_.alarm_frame = frame_index;
      state_.drop_count = 0;
      peak_ = result.statistic;
    }
    last_frame_ = frame_index;
    return FrameDecision{video_id_, frame_index, evidence, result.statistic, result.alarm};
  }

  /// Closes an event still open at the end of the stream.
  void finish() {
    if (state_.in_alarm) close_event(last_frame_);
  }

  const std::vector<DetectionEvent>& events() const noexcept { return events_; }

 private:
  void close_event(std::int64_t end_frame) {
    const std::int64_t start = *state_.alarm_frame;
    events_.push_back(DetectionEvent{video_id_, start, start, end_frame, peak_});
    state_.in_alarm = false;
    state_.alarm_frame.reset();
    state_.drop_count = 0;
    peak_ = 0.0;
  }

  DecisionRule rule_;
  std::size_t drop_window_;
  std::string video_id_;
  DetectorState state_;
  std::deque<std::int64_t> recent_frames_;
  std::vector<DetectionEvent> events_;
  std::int64_t last_frame_ = 0;
  double peak_ = 0.0;
};

struct DetectionOutput {
  std::vector<FrameDecision> frames;  // sorted by (video_id, frame_index)
  std::vector<DetectionEvent> events;
};

/// Evidence of each frame in a raw (unnormalized) stream, in input order.
inline std::vector<double> stream_evidence(std::span<const FrameObservation> frames, const NominalModel& model) {
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    for (const auto& obj : f.objects) {
      if (obj.size() != model.dimension()) {
        fail(ErrorKind::dimension_mismatch, "frame " + std::to_string(f.frame_index) + " of '" + f.video_id +
                                                "' has " + std::to_string(obj.size()) + " features, model expects " +
                                                std::to_string(model.dimension()));
      }
    }
    out.push_back(frame_evidence(model.normalize_frame(f), model));
  }
  return out;
}

/// Runs one detector per video over a raw (unnormalized) feature stream.
inline DetectionOutput detect_stream(std::span<const FrameObservation> stream, const NominalModel& model,
                                     std::size_t drop_window = default_drop_window) {
  const auto rule = model.decision_rule();
  std::map<std::string, std::vector<FrameObservation>> by_video;
  for (const auto& f : stream) by_video[f.video_id].push_back(f);

  DetectionOutput out;
  out.frames.reserve(stream.size());
  for (const auto& [video, frames] : by_video) {
    const auto evidence = stream_evidence(frames, model);
    StreamDetector detector(rule, drop_window, video);
    for (std::size_t i = 0; i < frames.size(); ++i) out.frames.push_back(detector.step(frames[i].frame_index, evidence[i]));
    detector.finish();
    out.events.insert(out.events.end(), detector.events().begin(), detector.events().end());
  }
  return out;
}

/// Number of maximal alarmed stretches the online detector raises on one
/// evidence series.
inline std::size_t count_alarm_runs(std::span<const double> evidence, const DecisionRule& rule,
                                    std::size_t drop_window = default_drop_window) {
  StreamDetector detector(rule, drop_window);
  std::size_t runs = 0;
  bool previous = false;
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    const bool alarm = detector.step(static_cast<std::int64_t>(i), evidence[i]).alarm;
    if (alarm && !previous) ++runs;
    previous = alarm;
  }
  return runs;
}

// Detection records, one JSON object per line:
//   {"video_id", "frame_index", "evidence", "statistic", "alarm"}
// and events {"video_id", "alarm_frame", "start_frame", "end_frame", "peak_statistic"}.

inline nlohmann::json to_json(const FrameDecision& d) {
  return {{"video_id", d.video_id},
          {"frame_index", d.frame_index},
          {"evidence", d.evidence},
          {"statistic", d.statistic},
          {"alarm", d.alarm}};
}

inline nlohmann::json to_json(const DetectionEvent& e) {
  return {{"video_id", e.video_id},
          {"alarm_frame", e.alarm_frame},
          {"start_frame", e.start_frame},
          {"end_frame", e.end_frame},
          {"peak_statistic", e.peak_statistic}};
}

inline void write_detections(std::ostream& out, std::span<const FrameDecision> frames) {
  for (const auto& d : frames) out << to_json(d).dump() << '\n';
  if (!out) fail(ErrorKind::io, "failed writing detection records");
}

inline void write_events(std::ostream& out, std::span<const DetectionEvent> events) {
  for (const auto& e : events) out << to_json(e).dump() << '\n';
  if (!out) fail(ErrorKind::io, "failed writing events");
}

/// Reads detection records; "evidence" is optional. Records are returned
/// sorted by (video_id, frame_index) and must not repeat a frame.
inline std::vector<FrameDecision> parse_detections(std::istream& in) {
  std::vector<FrameDecision> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    const auto record = detail::parse_json_line(line, line_no);
    if (!record.is_object()) fail(ErrorKind::parse, detail::line_context(line_no) + ": record is not an object");
    FrameDecision d;
    d.video_id = detail::require_string(record, "video_id", line_no);
    d.frame_index = detail::require_integer(record, "frame_index", line_no);
    const auto stat = record.find("statistic");
    if (stat == record.end() || !stat->is_number()) {
      fail(ErrorKind::parse, detail::line_context(line_no) + ": missing numeric 'statistic'");
    }
    d.statistic = stat->get<double>();
    const auto alarm = record.find("alarm");
    if (alarm == record.end() || !alarm->is_boolean()) {
      fail(ErrorKind::parse, detail::line_context(line_no) + ": missing boolean 'alarm'");
    }
    d.alarm = alarm->get<bool>();
    if (const auto ev = record.find("evidence"); ev != record.end() && ev->is_number()) d.evidence = ev->get<double>();
    out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.video_id, a.frame_index) < std::tie(b.video_id, b.frame_index);
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].video_id == out[i - 1].video_id && out[i].frame_index == out[i - 1].frame_index) {
      fail(ErrorKind::validation, "duplicate detection record for frame " + std::to_string(out[i].frame_index) +
                                      " of '" + out[i].video_id + "'");
    }
  }
  return out;
}

/// Synthetic anomalous evidence, i.i.d. uniform on the open interval
/// (D_alpha, 2 D_max).
inline std::vector<double> generate_synthetic_evidence(const CalibrationResult& calibration, std::size_t n,
                                                       std::uint64_t seed) {
  const double lo = calibration.d_alpha;
  const double hi = 2.0 * calibration.d_max;
  if (!(calibration.d_max > calibration.d_alpha)) {
    fail(ErrorKind::validation, "inconsistent calibration: D_max must exceed D_alpha");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out;
  out.reserve(n);
  while (out.size() < n) {
    const double v = dist(rng);
    if (v > lo && v < hi) out.push_back(v);
  }
  return out;
}

inline std::vector<double> generate_synthetic_evidence(const NominalModel& model, std::size_t n, std::uint64_t seed) {
  if (!model.calibrated()) fail(ErrorKind::validation, "model is not calibrated");
  return generate_synthetic_evidence(model.calibration(), n, seed);
}

struct FewShotOptions {
  std::size_t shot_length = 10;
  /// Dimensions kept for the adapted scene; empty keeps all.
  std::vector<bool> feature_mask;
};

/// Recalibrates the statistical parameters (normalization, reference set,
/// D_alpha, D_max, phi, omega0, h) from the first K shots of a new scene.
/// k, m and the regressor carry over from `base`.
inline NominalModel adapt_few_shot(const NominalModel& base, std::span<const FrameObservation> shots, std::size_t K,
                                   double beta, const FewShotOptions& options = {}) {
  if (K == 0) return base;
  if (!base.calibrated()) fail(ErrorKind::validation, "base model is not calibrated");
  const std::size_t needed = K * options.shot_length;
  if (shots.size() < needed) {
    fail(ErrorKind::insufficient_data,
         std::to_string(K) + " shots need " + std::to_string(needed) + " frames, got " + std::to_string(shots.size()));
  }
  const std::size_t m = base.dimension();
  if (!options.feature_mask.empty() && options.feature_mask.size() != m) {
    fail(ErrorKind::dimension_mismatch, "feature mask length differs from m");
  }
  const auto used = shots.first(needed);
  auto stats = fit_normalization(used);
  if (stats.dim() != m) fail(ErrorKind::dimension_mismatch, "shot features do not match the base model's m");
  // A collapsed range normalizes to 0, which removes the dimension from every
  // distance computed with these stats, at calibration and at detection time.
  for (std::size_t d = 0; d < options.feature_mask.size(); ++d) {
    if (!options.feature_mask[d]) stats.max[d] = stats.min[d];
  }

  std::vector<FrameObservation> normalized;
  normalized.reserve(used.size());
  for (const auto& f : used) normalized.push_back(normalize(f, stats));

  auto reference = TrainingSet::from_frames(normalized, m, base.k());
  if (reference.size() < base.k() + 1) {
    fail(ErrorKind::insufficient_data, "shots contain too few objects for leave-one-out evidence");
  }
  KdTree index(std::make_shared<const TrainingSet>(reference));
  const auto evidence = leave_one_out_frame_evidence(normalized, index);
  const auto& bc = base.calibration();
  const auto calibration = derive_calibration(evidence, bc.alpha, beta, bc.m, bc.phi_safety);

  NominalModel adapted(stats, std::move(reference), calibration);
  adapted.set_seed(base.seed());
  if (base.regressor()) adapted.set_regressor(*base.regressor(), base.uses_regressor());
  return adapted;
}

}  // namespace seqvad
