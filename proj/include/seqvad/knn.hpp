#pragma once

// Exact k-th nearest neighbour distances: a brute-force reference and a
// kd-tree index that returns bit-identical values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "seqvad/data_model.hpp"
#include "seqvad/error.hpp"

namespace seqvad {

inline constexpr std::size_t no_exclusion = std::numeric_limits<std::size_t>::max();

/// Squared Euclidean distance accumulated in dimension order. Both search
/// paths call this function so their results agree to the last bit.
inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  double sum = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    sum += diff * diff;
  }
  return sum;
}

/// Row-major N x m matrix of normalized nominal features plus the neighbour
/// count k. Invariant: N >= k >= 1.
class TrainingSet {
 public:
  TrainingSet() = default;

  TrainingSet(std::vector<double> features, std::size_t dim, std::size_t k)
      : features_(std::move(features)), dim_(dim), k_(k) {
    if (dim_ == 0) fail(ErrorKind::validation, "training set dimensionality must be positive");
    if (features_.size() % dim_ != 0) fail(ErrorKind::validation, "feature matrix size is not a multiple of m");
    if (k_ == 0) fail(ErrorKind::validation, "k must be at least 1");
    if (size() < k_) {
      fail(ErrorKind::insufficient_data,
           "training set has " + std::to_string(size()) + " points, k = " + std::to_string(k_));
    }
  }

  static TrainingSet from_frames(std::span<const FrameObservation> frames, std::size_t dim, std::size_t k) {
    std::vector<double> flat;
    for (const auto& f : frames) {
      for (const auto& obj : f.objects) {
        if (obj.size() != dim) {
          fail(ErrorKind::dimension_mismatch,
               "object has " + std::to_string(obj.size()) + " features, expected " + std::to_string(dim));
        }
        flat.insert(flat.end(), obj.begin(), obj.end());
      }
    }
    return TrainingSet(std::move(flat), dim, k);
  }

  std::size_t size() const noexcept { return dim_ == 0 ? 0 : features_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t k() const noexcept { return k_; }
  std::span<const double> row(std::size_t i) const noexcept { return {features_.data() + i * dim_, dim_}; }
  const std::vector<double>& features() const noexcept { return features_; }

 private:
  std::vector<double> features_;
  std::size_t dim_ = 0;
  std::size_t k_ = 0;
};

namespace detail {

inline void check_query(std::span<const double> query, const TrainingSet& set, std::size_t k, std::size_t exclude) {
  if (query.size() != set.dim()) {
    fail(ErrorKind::dimension_mismatch,
         "query has " + std::to_string(query.size()) + " features, training set has " + std::to_string(set.dim()));
  }
  const std::size_t available = set.size() - (exclude < set.size() ? 1 : 0);
  if (k == 0 || available < k) {
    fail(ErrorKind::insufficient_data,
         std::to_string(available) + " candidate points for k = " + std::to_string(k));
  }
}

}  // namespace detail

/// Brute-force k-th nearest neighbour distance; the correctness oracle for
/// every accelerated path. `exclude` drops one training row (leave-one-out).
inline double knn_distance_brute(std::span<const double> query, const TrainingSet& set, std::size_t k,
                                 std::size_t exclude = no_exclusion) {
  detail::check_query(query, set, k, exclude);
  std::vector<double> sq;
  sq.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i == exclude) continue;
    sq.push_back(squared_distance(query, set.row(i)));
  }
  std::nth_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(k - 1), sq.end());
  return std::sqrt(sq[k - 1]);
}

inline double knn_distance_brute(std::span<const double> query, const TrainingSet& set) {
  return knn_distance_brute(query, set, set.k());
}

/// Static kd-tree over a shared, immutable TrainingSet. Queries are exact:
/// pruning only discards cells whose bounding-plane distance strictly exceeds
/// the current k-th best.
class KdTree {
 public:
  static constexpr std::size_t leaf_size = 12;

  KdTree() = default;

  explicit KdTree(TrainingSet set) : KdTree(std::make_shared<const TrainingSet>(std::move(set))) {}

  explicit KdTree(std::shared_ptr<const TrainingSet> set) : set_(std::move(set)), order_(set_->size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!order_.empty()) {
      nodes_.reserve(2 * order_.size() / leaf_size + 1);
      build(0, order_.size());
    }
  }

  const TrainingSet& training_set() const noexcept { return *set_; }
  const std::shared_ptr<const TrainingSet>& shared_set() const noexcept { return set_; }

  double knn_distance(std::span<const double> query, std::size_t k, std::size_t exclude = no_exclusion) const {
    if (set_ == nullptr) fail(ErrorKind::validation, "kd-tree is not built");
    detail::check_query(query, *set_, k, exclude);
    Search search{query, k, exclude, {}};
    visit(0, search);
    return std::sqrt(search.heap.top());
  }

  double knn_distance(std::span<const double> query) const { return knn_distance(query, set_->k()); }

 private:
  struct Node {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t split_dim = 0;
    double split_value = 0.0;
    std::int64_t left = -1;
    std::int64_t right = -1;
  };

  struct Search {
    std::span<const double> query;
    std::size_t k;
    std::size_t exclude;
    std::priority_queue<double> heap;  // max-heap of the k best squared distances

    double worst() const noexcept {
      return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top();
    }
    void offer(double sq) {
      if (heap.size() < k) {
        heap.push(sq);
      } else if (sq < heap.top()) {
        heap.pop();
        heap.push(sq);
      }
    }
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size) return id;

    // Split on the dimension with the largest spread.
    const std::size_t dim = set_->dim();
    std::size_t best_dim = 0;
    double best_spread = -1.0;
    for (std::size_t d = 0; d < dim; ++d) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        const double v = set_->row(order_[i])[d];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = d;
      }
    }
    if (best_spread <= 0.0) return id;  // all points identical

    const std::size_t mid = begin + (end - begin) / 2;
    auto first = order_.begin() + static_cast<std::ptrdiff_t>(begin);
    std::nth_element(first, order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return set_->row(a)[best_dim] < set_->row(b)[best_dim];
                     });
    // Left holds values <= split, right holds values >= split.
    const double split = set_->row(order_[mid])[best_dim];
    const auto left = static_cast<std::int64_t>(build(begin, mid));
    const auto right = static_cast<std::int64_t>(build(mid, end));
    Node& node = nodes_[id];
    node.split_dim = best_dim;
    node.split_value = split;
    node.left = left;
    node.right = right;
    return id;
  }

  void visit(std::size_t id, Search& s) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == s.exclude) continue;
        s.offer(squared_distance(s.query, set_->row(idx)));
      }
      return;
    }
    const double diff = s.query[node.split_dim] - node.split_value;
    const auto near = static_cast<std::size_t>(diff <= 0.0 ? node.left : node.right);
    const auto far = static_cast<std::size_t>(diff <= 0.0 ? node.right : node.left);
    visit(near, s);
    if (diff * diff <= s.worst()) visit(far, s);
  }

  std::shared_ptr<const TrainingSet> set_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Leave-one-out k-th neighbour distance of every training point: the point's
/// own row is excluded so an in-set point does not match itself.
inline std::vector<double> leave_one_out_distances(const KdTree& tree) {
  const TrainingSet& set = tree.training_set();
  std::vector<double> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out[i] = tree.knn_distance(set.row(i), set.k(), i);
  return out;
}

}  // namespace seqvad
