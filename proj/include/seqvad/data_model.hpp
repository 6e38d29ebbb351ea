#pragma once

// Domain types, line-delimited JSON ingestion for feature streams and ground
// truth, and min/max feature normalization.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "seqvad/error.hpp"

namespace seqvad {

/// One object's feature point. Length is the model dimensionality m.
using FeatureVector = std::vector<double>;

struct FrameObservation {
  std::string video_id;
  std::int64_t frame_index = 0;
  std::vector<FeatureVector> objects;

  bool operator==(const FrameObservation&) const = default;
};

struct NormalizationStats {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t dim() const noexcept { return min.size(); }
  bool operator==(const NormalizationStats&) const = default;
};

struct GroundTruthEvent {
  std::string video_id;
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;
  std::int64_t segment_length = 0;

  bool contains(std::int64_t frame) const noexcept { return frame >= start_frame && frame <= end_frame; }
  bool operator==(const GroundTruthEvent&) const = default;
};

namespace detail {

inline std::string line_context(std::size_t line_no) { return "line " + std::to_string(line_no); }

inline nlohmann::json parse_json_line(const std::string& line, std::size_t line_no) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::parse, line_context(line_no) + ": " + e.what());
  }
}

inline bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

inline std::int64_t require_integer(const nlohmann::json& record, const char* key, std::size_t line_no) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_number_integer()) {
    fail(ErrorKind::parse, line_context(line_no) + ": field '" + key + "' missing or not an integer");
  }
  return it->get<std::int64_t>();
}

inline std::string require_string(const nlohmann::json& record, const char* key, std::size_t line_no) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_string()) {
    fail(ErrorKind::parse, line_context(line_no) + ": field '" + key + "' missing or not a string");
  }
  return it->get<std::string>();
}

}  // namespace detail

/// Parses a feature stream: one JSON object per line with `video_id`,
/// `frame_index` and `objects` (array of equal-length numeric arrays).
/// Blank lines are skipped. The first object seen fixes the dimensionality.
inline std::vector<FrameObservation> parse_feature_stream(std::istream& in) {
  std::vector<FrameObservation> frames;
  std::map<std::string, std::int64_t> last_index;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    const auto record = detail::parse_json_line(line, line_no);
    if (!record.is_object()) fail(ErrorKind::parse, detail::line_context(line_no) + ": record is not an object");

    FrameObservation frame;
    frame.video_id = detail::require_string(record, "video_id", line_no);
    frame.frame_index = detail::require_integer(record, "frame_index", line_no);
    if (frame.frame_index < 0) {
      fail(ErrorKind::parse, detail::line_context(line_no) + ": negative frame_index");
    }

    auto objects = record.find("objects");
    if (objects == record.end() || !objects->is_array()) {
      fail(ErrorKind::parse, detail::line_context(line_no) + ": field 'objects' missing or not an array");
    }
    frame.objects.reserve(objects->size());
    for (const auto& obj : *objects) {
      if (!obj.is_array() || obj.empty()) {
        fail(ErrorKind::parse, detail::line_context(line_no) + ": object is not a non-empty numeric array");
      }
      FeatureVector values;
      values.reserve(obj.size());
      for (const auto& v : obj) {
        if (!v.is_number()) fail(ErrorKind::parse, detail::line_context(line_no) + ": non-numeric feature value");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail(ErrorKind::parse, detail::line_context(line_no) + ": non-finite feature value");
        values.push_back(x);
      }
      if (dim == 0) {
        dim = values.size();
      } else if (values.size() != dim) {
        fail(ErrorKind::dimension_mismatch, detail::line_context(line_no) + ": object has " +
                                                std::to_string(values.size()) + " features, stream has " +
                                                std::to_string(dim));
      }
      frame.objects.push_back(std::move(values));
    }

    auto [it, inserted] = last_index.try_emplace(frame.video_id, frame.frame_index);
    if (!inserted) {
      if (frame.frame_index <= it->second) {
        fail(ErrorKind::validation, detail::line_context(line_no) + ": frame_index " +
                                        std::to_string(frame.frame_index) + " not increasing for video '" +
                                        frame.video_id + "'");
      }
      it->second = frame.frame_index;
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

inline nlohmann::json to_json(const FrameObservation& frame) {
  return nlohmann::json{{"video_id", frame.video_id}, {"frame_index", frame.frame_index}, {"objects", frame.objects}};
}

inline void write_feature_stream(std::ostream& out, std::span<const FrameObservation> frames) {
  for (const auto& frame : frames) out << to_json(frame).dump() << '\n';
}

/// Dimensionality of a stream, or 0 when no frame carries an object.
inline std::size_t stream_dimension(std::span<const FrameObservation> frames) noexcept {
  for (const auto& f : frames) {
    if (!f.objects.empty()) return f.objects.front().size();
  }
  return 0;
}

inline void validate_ground_truth(std::vector<GroundTruthEvent>& events) {
  for (const auto& e : events) {
    if (e.end_frame < e.start_frame) {
      fail(ErrorKind::validation, "event in '" + e.video_id + "' ends (" + std::to_string(e.end_frame) +
                                      ") before it starts (" + std::to_string(e.start_frame) + ")");
    }
    if (e.start_frame < 0 || e.end_frame >= e.segment_length) {
      fail(ErrorKind::validation, "event in '" + e.video_id + "' lies outside its segment [0, " +
                                      std::to_string(e.segment_length) + ")");
    }
  }
  std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return std::tie(a.video_id, a.start_frame) < std::tie(b.video_id, b.start_frame);
  });
  for (std::size_t i = 1; i < events.size(); ++i) {
    const auto& prev = events[i - 1];
    const auto& cur = events[i];
    if (prev.video_id == cur.video_id && cur.start_frame <= prev.end_frame) {
      fail(ErrorKind::validation, "overlapping events in '" + cur.video_id + "' at frames " +
                                      std::to_string(prev.start_frame) + " and " + std::to_string(cur.start_frame));
    }
  }
}

/// Parses ground truth: one JSON object per line with `video_id`,
/// `start_frame`, `end_frame`, `segment_length`. Result is sorted by
/// (video_id, start_frame).
inline std::vector<GroundTruthEvent> parse_ground_truth(std::istream& in) {
  std::vector<GroundTruthEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    const auto record = detail::parse_json_line(line, line_no);
    if (!record.is_object()) fail(ErrorKind::parse, detail::line_context(line_no) + ": record is not an object");
    GroundTruthEvent e;
    e.video_id = detail::require_string(record, "video_id", line_no);
    e.start_frame = detail::require_integer(record, "start_frame", line_no);
    e.end_frame = detail::require_integer(record, "end_frame", line_no);
    e.segment_length = detail::require_integer(record, "segment_length", line_no);
    events.push_back(std::move(e));
  }
  validate_ground_truth(events);
  return events;
}

inline void write_ground_truth(std::ostream& out, std::span<const GroundTruthEvent> events) {
  for (const auto& e : events) {
    out << nlohmann::json{{"video_id", e.video_id},
                          {"start_frame", e.start_frame},
                          {"end_frame", e.end_frame},
                          {"segment_length", e.segment_length}}
               .dump()
        << '\n';
  }
}

/// Per-dimension min and max over every training object.
inline NormalizationStats fit_normalization(std::span<const FrameObservation> training) {
  NormalizationStats stats;
  for (const auto& frame : training) {
    for (const auto& obj : frame.objects) {
      if (stats.min.empty()) {
        stats.min = obj;
        stats.max = obj;
        continue;
      }
      if (obj.size() != stats.dim()) {
        fail(ErrorKind::dimension_mismatch, "training object has " + std::to_string(obj.size()) +
                                                " features, expected " + std::to_string(stats.dim()));
      }
      for (std::size_t d = 0; d < obj.size(); ++d) {
        stats.min[d] = std::min(stats.min[d], obj[d]);
        stats.max[d] = std::max(stats.max[d], obj[d]);
      }
    }
  }
  if (stats.min.empty()) fail(ErrorKind::insufficient_data, "training data contains no objects");
  return stats;
}

/// Maps each value to (x - min) / (max - min) clamped to [0, 1]. Constant
/// dimensions (min == max) map to 0.
inline FeatureVector normalize(std::span<const double> x, const NormalizationStats& stats) {
  if (x.size() != stats.dim()) {
    fail(ErrorKind::dimension_mismatch,
         "feature vector has " + std::to_string(x.size()) + " values, stats have " + std::to_string(stats.dim()));
  }
  FeatureVector out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double range = stats.max[d] - stats.min[d];
    out[d] = range > 0.0 ? std::clamp((x[d] - stats.min[d]) / range, 0.0, 1.0) : 0.0;
  }
  return out;
}

inline FrameObservation normalize(const FrameObservation& frame, const NormalizationStats& stats) {
  FrameObservation out{frame.video_id, frame.frame_index, {}};
  out.objects.reserve(frame.objects.size());
  for (const auto& obj : frame.objects) out.objects.push_back(normalize(obj, stats));
  return out;
}

}  // namespace seqvad
