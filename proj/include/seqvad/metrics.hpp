#pragma once

// Event-based online detection metrics (precision as a function of
// normalized detection delay, integrated to APD), frame-level ROC AUC over
// concatenated videos, and empirical false alarm rate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqvad/data_model.hpp"
#include "seqvad/detector.hpp"
#include "seqvad/error.hpp"

namespace seqvad {

/// Maximal run of consecutive alarmed positions [begin, end] (inclusive).
struct AlarmRun {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const AlarmRun&) const = default;
};

inline std::vector<AlarmRun> alarm_runs(std::span<const double> statistics, double h) {
  std::vector<AlarmRun> runs;
  bool open = false;
  for (std::size_t i = 0; i < statistics.size(); ++i) {
    const bool a = is_alarm(statistics[i], h);
    if (a && !open) runs.push_back({i, i});
    if (a) runs.back().end = i;
    open = a;
  }
  return runs;
}

/// Statistic series of one video with the frame number of each entry and,
/// when known, the detector's own alarm decision per frame.
struct VideoSeries {
  std::string video_id;
  std::vector<std::int64_t> frames;
  std::vector<double> statistics;
  std::vector<bool> alarms;
};

/// Groups per-frame detector output into per-video series sorted by video id.
inline std::vector<VideoSeries> group_by_video(std::span<const FrameDecision> decisions) {
  std::map<std::string, VideoSeries> grouped;
  for (const auto& d : decisions) {
    auto& s = grouped[d.video_id];
    s.video_id = d.video_id;
    s.frames.push_back(d.frame_index);
    s.statistics.push_back(d.statistic);
    s.alarms.push_back(d.alarm);
  }
  std::vector<VideoSeries> out;
  out.reserve(grouped.size());
  for (auto& [id, s] : grouped) out.push_back(std::move(s));
  return out;
}

struct CurvePoint {
  double threshold = 0.0;
  double gamma = 0.0;
  double precision = 0.0;
};

struct PrecisionDelayCurve {
  std::vector<CurvePoint> points;  // sorted by gamma, one point per distinct gamma
};

struct DetectionCounts {
  std::size_t alarms = 0;
  std::size_t true_alarms = 0;
  double mean_normalized_delay = 0.0;
};

/// Alarm runs scored against ground truth at one threshold. A run is true
/// when it overlaps an event of its video; an event's delay is measured from
/// its start to the first overlapping run (0 if the run began earlier),
/// normalized by segment_length - start_frame; missed events count as 1.
inline DetectionCounts score_threshold(std::span<const VideoSeries> series, std::span<const GroundTruthEvent> truth,
                                       double h) {
  std::map<std::string, const VideoSeries*> by_id;
  for (const auto& s : series) by_id[s.video_id] = &s;
  std::map<std::string, std::vector<const GroundTruthEvent*>> events_by_video;
  for (const auto& e : truth) {
    if (!by_id.contains(e.video_id)) {
      fail(ErrorKind::validation, "ground truth references video '" + e.video_id + "' with no statistics");
    }
    events_by_video[e.video_id].push_back(&e);
  }

  DetectionCounts counts;
  double delay_sum = 0.0;
  for (const auto& s : series) {
    const auto runs = alarm_runs(s.statistics, h);
    counts.alarms += runs.size();
    const auto ev = events_by_video.find(s.video_id);
    if (ev == events_by_video.end()) continue;
    std::vector<std::optional<std::int64_t>> first_hit(ev->second.size());
    for (const auto& run : runs) {
      const std::int64_t run_start = s.frames[run.begin];
      const std::int64_t run_end = s.frames[run.end];
      bool is_true = false;
      for (std::size_t i = 0; i < ev->second.size(); ++i) {
        const auto* e = ev->second[i];
        if (run_start <= e->end_frame && run_end >= e->start_frame) {
          is_true = true;
          if (!first_hit[i]) first_hit[i] = run_start;
        }
      }
      if (is_true) ++counts.true_alarms;
    }
    for (std::size_t i = 0; i < ev->second.size(); ++i) {
      const auto* e = ev->second[i];
      if (!first_hit[i]) {
        delay_sum += 1.0;
        continue;
      }
      const double delay = static_cast<double>(std::max<std::int64_t>(0, *first_hit[i] - e->start_frame));
      delay_sum += delay / static_cast<double>(e->segment_length - e->start_frame);
    }
  }
  if (!truth.empty()) counts.mean_normalized_delay = delay_sum / static_cast<double>(truth.size());
  return counts;
}

/// One (gamma, precision) point per threshold; thresholds without any alarm
/// have undefined precision and are skipped. Points sharing a gamma keep the
/// highest precision.
inline PrecisionDelayCurve precision_delay_curve(std::span<const VideoSeries> series,
                                                 std::span<const GroundTruthEvent> truth,
                                                 std::span<const double> thresholds) {
  if (thresholds.empty()) fail(ErrorKind::validation, "threshold list is empty");
  if (truth.empty()) fail(ErrorKind::validation, "precision-delay curve needs at least one ground-truth event");
  std::vector<CurvePoint> raw;
  for (double h : thresholds) {
    const auto c = score_threshold(series, truth, h);
    if (c.alarms == 0) continue;
    raw.push_back({h, c.mean_normalized_delay,
                   static_cast<double>(c.true_alarms) / static_cast<double>(c.alarms)});
  }
  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) {
    return a.gamma < b.gamma || (a.gamma == b.gamma && a.precision > b.precision);
  });
  PrecisionDelayCurve curve;
  for (const auto& p : raw) {
    if (curve.points.empty() || curve.points.back().gamma != p.gamma) curve.points.push_back(p);
  }
  return curve;
}

/// Integral of precision over gamma in [0, 1] by the trapezoid rule, with the
/// first and last precision held constant out to gamma = 0 and gamma = 1.
inline double apd(const PrecisionDelayCurve& curve) {
  const auto& p = curve.points;
  if (p.empty()) return 0.0;
  double area = p.front().precision * std::clamp(p.front().gamma, 0.0, 1.0);
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double g0 = std::clamp(p[i - 1].gamma, 0.0, 1.0);
    const double g1 = std::clamp(p[i].gamma, 0.0, 1.0);
    area += 0.5 * (p[i - 1].precision + p[i].precision) * (g1 - g0);
  }
  area += p.back().precision * (1.0 - std::clamp(p.back().gamma, 0.0, 1.0));
  return area;
}

/// At most `max_points` thresholds drawn from the unique statistic values:
/// half evenly spaced by rank, half evenly spaced in value (each snapped up to
/// the nearest observed value). The rank half follows where the statistic
/// spends its time; the value half keeps the sparse high range, where
/// detection delay is decided, from being skipped.
inline std::vector<double> threshold_grid(std::span<const VideoSeries> series, std::size_t max_points = 200) {
  std::vector<double> values;
  for (const auto& s : series) values.insert(values.end(), s.statistics.begin(), s.statistics.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() <= max_points || max_points < 4) return values;
  const std::size_t by_rank = max_points / 2;
  const std::size_t by_value = max_points - by_rank;
  std::vector<double> grid;
  grid.reserve(max_points);
  const double step = static_cast<double>(values.size() - 1) / static_cast<double>(by_rank - 1);
  for (std::size_t i = 0; i < by_rank; ++i) {
    grid.push_back(values[static_cast<std::size_t>(std::llround(step * static_cast<double>(i)))]);
  }
  const double lo = values.front();
  const double hi = values.back();
  for (std::size_t i = 0; i < by_value; ++i) {
    const double target = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(by_value - 1);
    auto it = std::lower_bound(values.begin(), values.end(), target);
    if (it == values.end()) --it;
    grid.push_back(*it);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

/// ROC area from the Mann-Whitney rank statistic; tied scores share their
/// average rank (ties count one half).
inline double frame_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::dimension_mismatch, "scores and labels differ in length");
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) fail(ErrorKind::validation, "labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) fail(ErrorKind::validation, "AUC is undefined with a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) positive_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Per-frame 0/1 labels for each series entry.
inline std::vector<int> frame_labels(const VideoSeries& series, std::span<const GroundTruthEvent> truth) {
  std::vector<int> labels(series.frames.size(), 0);
  for (const auto& e : truth) {
    if (e.video_id != series.video_id) continue;
    for (std::size_t i = 0; i < series.frames.size(); ++i) {
      if (e.contains(series.frames[i])) labels[i] = 1;
    }
  }
  return labels;
}

struct FarMeasurement {
  double far = 0.0;
  double period = std::numeric_limits<double>::infinity();
};

inline FarMeasurement measure_far(std::size_t alarm_run_count, std::size_t nominal_frames) {
  if (nominal_frames == 0) fail(ErrorKind::validation, "FAR needs at least one nominal frame");
  FarMeasurement m;
  m.far = static_cast<double>(alarm_run_count) / static_cast<double>(nominal_frames);
  if (alarm_run_count > 0) m.period = 1.0 / m.far;
  return m;
}

inline FarMeasurement measure_far(std::span<const AlarmRun> runs, std::size_t nominal_frames) {
  return measure_far(runs.size(), nominal_frames);
}

struct EvalReport {
  std::optional<double> apd;
  std::optional<double> frame_auc;
  double empirical_far = 0.0;
  double false_alarm_period = std::numeric_limits<double>::infinity();
  std::size_t frames = 0;
  std::size_t nominal_frames = 0;
  std::size_t events = 0;
  std::size_t false_alarm_runs = 0;
  PrecisionDelayCurve curve;
};

/// Runs of consecutive `true` flags.
inline std::vector<AlarmRun> flag_runs(const std::vector<bool>& flags) {
  std::vector<AlarmRun> runs;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) continue;
    if (i == 0 || !flags[i - 1]) runs.push_back({i, i});
    runs.back().end = i;
  }
  return runs;
}

/// APD over the default threshold grid, frame AUC of the statistic over all
/// videos concatenated, and the false alarm rate: detector alarm runs that
/// touch no event, per nominal frame. APD and AUC stay empty when undefined.
inline EvalReport evaluate(std::span<const VideoSeries> series, std::span<const GroundTruthEvent> truth,
                           std::size_t grid_points = 200) {
  EvalReport report;
  report.events = truth.size();
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : series) {
    const auto l = frame_labels(s, truth);
    scores.insert(scores.end(), s.statistics.begin(), s.statistics.end());
    labels.insert(labels.end(), l.begin(), l.end());
    for (const auto& run : flag_runs(s.alarms)) {
      bool touches_event = false;
      for (std::size_t i = run.begin; i <= run.end && !touches_event; ++i) touches_event = l[i] == 1;
      if (!touches_event) ++report.false_alarm_runs;
    }
  }
  report.frames = scores.size();
  report.nominal_frames = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
  if (report.nominal_frames > 0) {
    const auto far = measure_far(report.false_alarm_runs, report.nominal_frames);
    report.empirical_far = far.far;
    report.false_alarm_period = far.period;
  }

  if (!truth.empty()) {
    const auto grid = threshold_grid(series, grid_points);
    if (!grid.empty()) {
      report.curve = precision_delay_curve(series, truth, grid);
      report.apd = apd(report.curve);
    }
    if (report.frames > report.nominal_frames && report.nominal_frames > 0) {
      report.frame_auc = frame_auc(scores, labels);
    }
  }
  return report;
}

}  // namespace seqvad
