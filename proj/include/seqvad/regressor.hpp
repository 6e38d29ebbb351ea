#pragma once

// Fully connected regressor approximating kNN distances, trained on
//   (1/N) sum_j ((D_j - f(x_j)) / sigma)^2 + lambda * sum(weights^2)
// with seeded mini-batch gradient descent. Inputs and outputs pass through a
// fixed affine standardization fitted on the training data; sigma is the
// output scale (the target standard deviation), so the loss is measured in
// units of the target spread.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seqvad/error.hpp"
#include "seqvad/knn.hpp"

namespace seqvad {

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;     // outputs

  bool operator==(const DenseLayer&) const = default;
};

struct RegressorTrainConfig {
  std::vector<std::size_t> hidden{20, 20, 20};
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 0.03;
  bool standardize = true;  // fit input/output standardization before training
};

/// Affine maps around the network: x' = (x - input_shift) / input_scale and
/// y = output_shift + output_scale * net(x'). Identity by default.
struct Standardization {
  std::vector<double> input_shift;
  std::vector<double> input_scale;
  double output_shift = 0.0;
  double output_scale = 1.0;

  static Standardization identity(std::size_t dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0), 0.0, 1.0};
  }

  bool operator==(const Standardization&) const = default;
};

class KnnRegressor {
 public:
  KnnRegressor() = default;

  explicit KnnRegressor(std::vector<DenseLayer> layers)
      : layers_(std::move(layers)),
        standardization_(Standardization::identity(layers_.empty() ? 0 : layers_.front().inputs)) {
    validate();
  }

  KnnRegressor(std::vector<DenseLayer> layers, Standardization standardization)
      : layers_(std::move(layers)), standardization_(std::move(standardization)) {
    validate();
  }

  /// He-uniform weights, zero biases. Hidden layers use ReLU, the scalar
  /// output is linear.
  static KnnRegressor initialize(std::size_t input_dim, std::span<const std::size_t> hidden, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<DenseLayer> layers;
    std::size_t fan_in = input_dim;
    auto add_layer = [&](std::size_t outputs) {
      DenseLayer layer{fan_in, outputs, std::vector<double>(fan_in * outputs), std::vector<double>(outputs, 0.0)};
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& w : layer.weights) w = dist(rng);
      layers.push_back(std::move(layer));
      fan_in = outputs;
    };
    for (std::size_t width : hidden) add_layer(width);
    add_layer(1);
    return KnnRegressor(std::move(layers));
  }

  bool empty() const noexcept { return layers_.empty(); }
  std::size_t input_dim() const noexcept { return layers_.empty() ? 0 : layers_.front().inputs; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  const Standardization& standardization() const noexcept { return standardization_; }
  bool operator==(const KnnRegressor&) const = default;

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> sizes;
    if (layers_.empty()) return sizes;
    sizes.push_back(layers_.front().inputs);
    for (const auto& l : layers_) sizes.push_back(l.outputs);
    return sizes;
  }

  /// Network output before the non-negativity clamp.
  double forward(std::span<const double> x) const {
    check_input(x);
    std::vector<double> current = standardize_input(x);
    std::vector<double> next;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const auto& layer = layers_[li];
      next.assign(layer.outputs, 0.0);
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        double z = layer.bias[o];
        const double* w = layer.weights.data() + o * layer.inputs;
        for (std::size_t i = 0; i < layer.inputs; ++i) z += w[i] * current[i];
        next[o] = (li + 1 < layers_.size()) ? std::max(z, 0.0) : z;
      }
      current.swap(next);
    }
    return standardization_.output_shift + standardization_.output_scale * current.front();
  }

  /// Approximate kNN distance; distances are non-negative so the output is
  /// clamped at zero.
  double predict(std::span<const double> x) const { return std::max(forward(x), 0.0); }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
    return n;
  }

  /// Flattened parameters: for each layer its weights, then its biases.
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& l : layers_) {
      p.insert(p.end(), l.weights.begin(), l.weights.end());
      p.insert(p.end(), l.bias.begin(), l.bias.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) fail(ErrorKind::dimension_mismatch, "parameter vector has wrong length");
    std::size_t pos = 0;
    for (auto& l : layers_) {
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(pos), l.weights.size(), l.weights.begin());
      pos += l.weights.size();
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
      pos += l.bias.size();
    }
  }

  /// f(theta): sum of squared weights, biases excluded.
  double regularizer() const noexcept {
    double sum = 0.0;
    for (const auto& l : layers_)
      for (double w : l.weights) sum += w * w;
    return sum;
  }

  double max_abs_weight() const noexcept {
    double m = 0.0;
    for (const auto& l : layers_)
      for (double w : l.weights) m = std::max(m, std::abs(w));
    return m;
  }

  /// Mean squared standardized error over `rows` plus lambda * f(theta);
  /// writes the gradient (same layout as parameters()) into `grad`.
  double loss_and_gradient(const TrainingSet& inputs, std::span<const double> targets,
                           std::span<const std::size_t> rows, double lambda, std::vector<double>& grad) const {
    grad.assign(parameter_count(), 0.0);
    if (rows.empty()) return lambda * regularizer();
    const std::size_t n_layers = layers_.size();
    // activations[0] is the input, activations[l + 1] the output of layer l.
    std::vector<std::vector<double>> activations(n_layers + 1);
    std::vector<std::vector<double>> deltas(n_layers);
    const double scale = 1.0 / static_cast<double>(rows.size());
    const double out_scale = standardization_.output_scale;
    double sse = 0.0;

    for (std::size_t row : rows) {
      check_input(inputs.row(row));
      activations[0] = standardize_input(inputs.row(row));
      for (std::size_t li = 0; li < n_layers; ++li) {
        const auto& layer = layers_[li];
        auto& out = activations[li + 1];
        out.assign(layer.outputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
          double z = layer.bias[o];
          const double* w = layer.weights.data() + o * layer.inputs;
          for (std::size_t i = 0; i < layer.inputs; ++i) z += w[i] * activations[li][i];
          out[o] = (li + 1 < n_layers) ? std::max(z, 0.0) : z;
        }
      }
      const double prediction = standardization_.output_shift + out_scale * activations[n_layers][0];
      // Residual in target-spread units; d(residual)/d(net) = 1.
      const double residual = (prediction - targets[row]) / out_scale;
      sse += residual * residual;

      deltas[n_layers - 1].assign(1, 2.0 * residual * scale);
      for (std::size_t li = n_layers; li-- > 0;) {
        const auto& layer = layers_[li];
        const auto& delta = deltas[li];
        const std::size_t offset = layer_offset(li);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
          const double d = delta[o];
          if (d == 0.0) continue;
          double* gw = grad.data() + offset + o * layer.inputs;
          for (std::size_t i = 0; i < layer.inputs; ++i) gw[i] += d * activations[li][i];
          grad[offset + layer.weights.size() + o] += d;
        }
        if (li == 0) break;
        auto& prev = deltas[li - 1];
        prev.assign(layer.inputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
          const double d = delta[o];
          if (d == 0.0) continue;
          const double* w = layer.weights.data() + o * layer.inputs;
          for (std::size_t i = 0; i < layer.inputs; ++i) prev[i] += d * w[i];
        }
        // ReLU derivative: zero where the activation was clamped.
        for (std::size_t i = 0; i < layer.inputs; ++i) {
          if (activations[li][i] <= 0.0) prev[i] = 0.0;
        }
      }
    }

    for (std::size_t li = 0; li < n_layers; ++li) {
      const std::size_t offset = layer_offset(li);
      const auto& w = layers_[li].weights;
      for (std::size_t i = 0; i < w.size(); ++i) grad[offset + i] += 2.0 * lambda * w[i];
    }
    return sse * scale + lambda * regularizer();
  }

  /// Full training objective over every row.
  double objective(const TrainingSet& inputs, std::span<const double> targets, double lambda) const {
    double sse = 0.0;
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      const double r = (forward(inputs.row(j)) - targets[j]) / standardization_.output_scale;
      sse += r * r;
    }
    return sse / static_cast<double>(inputs.size()) + lambda * regularizer();
  }

  // Binary layout (little-endian):
  //   char[4] "SQVR", u32 version = 1, u32 layer_count L,
  //   u64 sizes[L + 1] (input width, then each layer's output width),
  //   f64 input_shift[in], f64 input_scale[in], f64 output_shift, f64 output_scale,
  //   then per layer: f64 weights[out * in] row-major, f64 bias[out].
  void write(std::ostream& out) const {
    out.write(magic, 4);
    write_pod(out, std::uint32_t{format_version});
    write_pod(out, static_cast<std::uint32_t>(layers_.size()));
    for (std::size_t s : layer_sizes()) write_pod(out, static_cast<std::uint64_t>(s));
    for (double v : standardization_.input_shift) write_pod(out, v);
    for (double v : standardization_.input_scale) write_pod(out, v);
    write_pod(out, standardization_.output_shift);
    write_pod(out, standardization_.output_scale);
    for (const auto& l : layers_) {
      for (double w : l.weights) write_pod(out, w);
      for (double b : l.bias) write_pod(out, b);
    }
    if (!out) fail(ErrorKind::io, "failed writing regressor");
  }

  static KnnRegressor read(std::istream& in) {
    char tag[4] = {};
    in.read(tag, 4);
    if (!in || std::memcmp(tag, magic, 4) != 0) fail(ErrorKind::parse, "not a regressor file (bad magic)");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != format_version) fail(ErrorKind::parse, "unsupported regressor version " + std::to_string(version));
    const auto n_layers = read_pod<std::uint32_t>(in);
    if (n_layers == 0 || n_layers > 1024) fail(ErrorKind::parse, "implausible layer count");
    std::vector<std::uint64_t> sizes(n_layers + 1);
    for (auto& s : sizes) s = read_pod<std::uint64_t>(in);
    if (sizes[0] == 0 || sizes[0] > (std::uint64_t{1} << 24)) fail(ErrorKind::parse, "implausible input width");
    Standardization st = Standardization::identity(sizes[0]);
    for (auto& v : st.input_shift) v = read_pod<double>(in);
    for (auto& v : st.input_scale) v = read_pod<double>(in);
    st.output_shift = read_pod<double>(in);
    st.output_scale = read_pod<double>(in);
    std::vector<DenseLayer> layers;
    for (std::size_t li = 0; li < n_layers; ++li) {
      DenseLayer l{sizes[li], sizes[li + 1], std::vector<double>(sizes[li] * sizes[li + 1]),
                   std::vector<double>(sizes[li + 1])};
      for (auto& w : l.weights) w = read_pod<double>(in);
      for (auto& b : l.bias) b = read_pod<double>(in);
      layers.push_back(std::move(l));
    }
    return KnnRegressor(std::move(layers), std::move(st));
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) {
      layers.push_back({{"inputs", l.inputs}, {"outputs", l.outputs}, {"weights", l.weights}, {"bias", l.bias}});
    }
    const auto& st = standardization_;
    return {{"version", format_version},
            {"standardization",
             {{"input_shift", st.input_shift},
              {"input_scale", st.input_scale},
              {"output_shift", st.output_shift},
              {"output_scale", st.output_scale}}},
            {"layers", layers}};
  }

  static KnnRegressor from_json(const nlohmann::json& j) {
    try {
      std::vector<DenseLayer> layers;
      for (const auto& l : j.at("layers")) {
        layers.push_back(DenseLayer{l.at("inputs").get<std::size_t>(), l.at("outputs").get<std::size_t>(),
                                    l.at("weights").get<std::vector<double>>(),
                                    l.at("bias").get<std::vector<double>>()});
      }
      const auto& js = j.at("standardization");
      Standardization st{js.at("input_shift").get<std::vector<double>>(),
                         js.at("input_scale").get<std::vector<double>>(), js.at("output_shift").get<double>(),
                         js.at("output_scale").get<double>()};
      return KnnRegressor(std::move(layers), std::move(st));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, std::string("regressor record: ") + e.what());
    }
  }

 private:
  static constexpr char magic[4] = {'S', 'Q', 'V', 'R'};
  static constexpr std::uint32_t format_version = 1;

  template <typename T>
  static void write_pod(std::ostream& out, T value) {
    static_assert(std::endian::native == std::endian::little, "regressor format assumes little-endian host");
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  template <typename T>
  static T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) fail(ErrorKind::parse, "truncated regressor file");
    return value;
  }

  std::size_t layer_offset(std::size_t li) const noexcept {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < li; ++i) offset += layers_[i].weights.size() + layers_[i].bias.size();
    return offset;
  }

  std::vector<double> standardize_input(std::span<const double> x) const {
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      z[i] = (x[i] - standardization_.input_shift[i]) / standardization_.input_scale[i];
    }
    return z;
  }

  void check_input(std::span<const double> x) const {
    if (layers_.empty()) fail(ErrorKind::validation, "regressor has no layers");
    if (x.size() != input_dim()) {
      fail(ErrorKind::dimension_mismatch,
           "regressor input has " + std::to_string(x.size()) + " values, expected " + std::to_string(input_dim()));
    }
  }

  void validate() const {
    if (layers_.empty()) fail(ErrorKind::validation, "regressor needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.inputs == 0 || l.outputs == 0 || l.weights.size() != l.inputs * l.outputs ||
          l.bias.size() != l.outputs) {
        fail(ErrorKind::validation, "malformed regressor layer " + std::to_string(i));
      }
      if (i > 0 && layers_[i - 1].outputs != l.inputs) {
        fail(ErrorKind::validation, "regressor layer widths do not chain at layer " + std::to_string(i));
      }
      for (double v : l.weights)
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite regressor weight");
      for (double v : l.bias)
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite regressor bias");
    }
    if (layers_.back().outputs != 1) fail(ErrorKind::validation, "regressor output must be scalar");
    const auto& st = standardization_;
    if (st.input_shift.size() != input_dim() || st.input_scale.size() != input_dim()) {
      fail(ErrorKind::validation, "standardization width differs from the input layer");
    }
    auto usable_scale = [](double s) { return std::isfinite(s) && s > 0.0; };
    if (!std::all_of(st.input_scale.begin(), st.input_scale.end(), usable_scale) || !usable_scale(st.output_scale)) {
      fail(ErrorKind::validation, "standardization scales must be positive and finite");
    }
    if (!std::all_of(st.input_shift.begin(), st.input_shift.end(), [](double v) { return std::isfinite(v); }) ||
        !std::isfinite(st.output_shift)) {
      fail(ErrorKind::validation, "standardization shifts must be finite");
    }
  }

  std::vector<DenseLayer> layers_;
  Standardization standardization_;
};

struct RegressorTrainResult {
  KnnRegressor model;
  double final_objective = 0.0;
  std::vector<double> objective_history;  // full objective after each epoch, index 0 = before training
};

/// Mean and standard deviation per input column and of the targets. A
/// constant column or target gets scale 1.
inline Standardization fit_standardization(const TrainingSet& inputs, std::span<const double> targets) {
  const std::size_t n = inputs.size();
  const std::size_t dim = inputs.dim();
  auto st = Standardization::identity(dim);
  auto spread = [n](double sum, double sum_sq) {
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(sum_sq / static_cast<double>(n) - mean * mean, 0.0);
    const double sd = std::sqrt(var);
    return std::pair{mean, sd > 1e-12 ? sd : 1.0};
  };
  for (std::size_t d = 0; d < dim; ++d) {
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = inputs.row(j)[d];
      sum += v;
      sum_sq += v * v;
    }
    std::tie(st.input_shift[d], st.input_scale[d]) = spread(sum, sum_sq);
  }
  double sum = 0.0, sum_sq = 0.0;
  for (double t : targets) {
    sum += t;
    sum_sq += t * t;
  }
  std::tie(st.output_shift, st.output_scale) = spread(sum, sum_sq);
  return st;
}

/// Trains the regressor on (inputs, targets). The output starts at the mean
/// target; batches are reshuffled every epoch from `seed`.
inline RegressorTrainResult train_knn_regressor(const TrainingSet& inputs, std::span<const double> targets,
                                                double lambda, const RegressorTrainConfig& config,
                                                std::uint64_t seed) {
  if (inputs.size() == 0) fail(ErrorKind::insufficient_data, "regressor training needs at least one point");
  if (targets.size() != inputs.size()) fail(ErrorKind::dimension_mismatch, "one target per training point required");
  if (lambda < 0.0 || !std::isfinite(lambda)) fail(ErrorKind::validation, "lambda must be finite and non-negative");
  if (config.batch_size == 0) fail(ErrorKind::validation, "batch size must be positive");

  RegressorTrainResult result;
  {
    auto layers = KnnRegressor::initialize(inputs.dim(), config.hidden, seed).layers();
    Standardization st = Standardization::identity(inputs.dim());
    if (config.standardize) {
      st = fit_standardization(inputs, targets);
    } else {
      st.output_shift = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(targets.size());
    }
    result.model = KnnRegressor(std::move(layers), std::move(st));
  }

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> params = result.model.parameters();
  std::vector<double> grad;
  result.objective_history.push_back(result.model.objective(inputs, targets, lambda));

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const double loss = result.model.loss_and_gradient(inputs, targets, batch, lambda, grad);
      if (!std::isfinite(loss)) {
        fail(ErrorKind::numeric, "regressor training diverged at epoch " + std::to_string(epoch));
      }
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.learning_rate * grad[i];
      for (double p : params) {
        if (!std::isfinite(p)) fail(ErrorKind::numeric, "regressor training diverged at epoch " + std::to_string(epoch));
      }
      result.model.set_parameters(params);
    }
    const double obj = result.model.objective(inputs, targets, lambda);
    if (!std::isfinite(obj)) fail(ErrorKind::numeric, "regressor training diverged at epoch " + std::to_string(epoch));
    result.objective_history.push_back(obj);
  }
  result.final_objective = result.objective_history.back();
  return result;
}

}  // namespace seqvad
