// seqvad command-line tool: calibrate, detect, evaluate, verify-far, synth.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 numeric failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seqvad/seqvad.hpp"

namespace {

using nlohmann::json;
using namespace seqvad;

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_numeric = 3;

std::ifstream open_input(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorKind::io, "cannot read '" + path + "': no such file");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  return in;
}

/// Writes `body` to `path` in one go so a failed run leaves no partial file.
void write_file(const std::string& path, const std::string& body) {
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
    out << body;
    out.flush();
    if (!out) fail(ErrorKind::io, "failed writing '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot move output into '" + path + "': " + ec.message());
}

std::vector<FrameObservation> read_features(const std::string& path) {
  auto in = open_input(path);
  try {
    return parse_feature_stream(in);
  } catch (const Error& e) {
    fail(e.kind(), "'" + path + "': " + e.what());
  }
}

NominalModel read_model(const std::string& path) {
  auto in = open_input(path);
  try {
    return load_model(in);
  } catch (const Error& e) {
    fail(e.kind(), "'" + path + "': " + e.what());
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// JSON has no infinity; an unbounded period is written as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

template <class T>
json optional_or_null(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  std::string train;
  std::string model_out;
  CalibrateOptions options;
};

void add_calibrate(CLI::App& app, CalibrateArgs& a) {
  auto* sub = app.add_subcommand("calibrate", "Fit a nominal model on training features and write it to disk");
  sub->add_option("--train", a.train, "Training feature stream (JSONL)")->required();
  sub->add_option("--model-out", a.model_out, "Model file to write")->required();
  sub->add_option("--alpha", a.options.alpha, "Nominal significance level")->capture_default_str()->check(
      CLI::Range(0.0, 1.0));
  sub->add_option("--beta", a.options.beta, "Target false alarm rate bound")->capture_default_str()->check(
      CLI::Range(0.0, 1.0));
  sub->add_option("--k", a.options.k, "Number of neighbors")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--phi-safety", a.options.phi_safety, "Multiplier on the estimated drift bound")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_flag("--regressor,!--no-regressor", a.options.train_regressor, "Train the kNN-distance regressor")
      ->capture_default_str();
  sub->add_option("--lambda", a.options.lambda, "Regressor L2 penalty")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  sub->add_option("--epochs", a.options.regressor.epochs, "Regressor training epochs")->capture_default_str();
  sub->add_option("--learning-rate", a.options.regressor.learning_rate, "Regressor learning rate")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", a.options.regressor.batch_size, "Regressor mini-batch size")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--seed", a.options.seed, "Seed for every random choice")->capture_default_str();
}

int run_calibrate(const CalibrateArgs& a) {
  if (a.options.alpha >= 1.0) fail(ErrorKind::validation, "alpha must be below 1");
  if (!(a.options.beta > 0.0)) fail(ErrorKind::validation, "beta must be positive");
  const auto training = read_features(a.train);
  const auto model = calibrate(training, a.options);
  std::ostringstream body;
  save_model(body, model);
  write_file(a.model_out, body.str());

  const auto& c = model.calibration();
  std::cout << "frames: " << training.size() << '\n'
            << "objects: " << model.reference().size() << '\n'
            << "m: " << c.m << '\n'
            << "D_alpha: " << fmt(c.d_alpha) << '\n'
            << "D_max: " << fmt(c.d_max) << '\n'
            << "phi: " << fmt(c.phi) << '\n'
            << "omega0: " << fmt(c.omega0) << '\n'
            << "h: " << fmt(c.h) << '\n'
            << "far_bound: " << fmt(c.bound()) << '\n'
            << "regressor: " << (model.uses_regressor() ? "on" : "off") << '\n'
            << "seed: " << model.seed() << '\n';
  return exit_ok;
}

// ------------------------------------------------------------------ detect

struct DetectArgs {
  std::string model;
  std::string features;
  std::string out;
  std::string events;
  std::optional<double> threshold;
  std::optional<double> beta;
  std::string regressor = "model";
  std::size_t drop_window = default_drop_window;
};

void add_detect(CLI::App& app, DetectArgs& a) {
  auto* sub = app.add_subcommand("detect", "Run the sequential detector over a feature stream");
  sub->add_option("--model", a.model, "Model file from calibrate")->required();
  sub->add_option("--features", a.features, "Feature stream to score (JSONL)")->required();
  sub->add_option("--out", a.out, "Per-frame detection records to write (JSONL)")->required();
  sub->add_option("--events", a.events, "Localized events to write (JSONL); optional");
  auto* threshold =
      sub->add_option("--threshold", a.threshold, "Override h (default: the model's calibrated h)")->check(
          CLI::NonNegativeNumber);
  sub->add_option("--beta", a.beta, "Recompute h for this false alarm rate bound")
      ->check(CLI::Range(0.0, 1.0))
      ->excludes(threshold);
  sub->add_option("--regressor", a.regressor, "Distance source: on, off, or model (as stored)")
      ->capture_default_str()
      ->check(CLI::IsMember({"on", "off", "model"}));
  sub->add_option("--drop-window", a.drop_window, "Consecutive statistic drops that end an event")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

int run_detect(const DetectArgs& a) {
  auto model = read_model(a.model);
  if (a.threshold) model.set_threshold(*a.threshold);
  if (a.beta) {
    if (!(*a.beta > 0.0)) fail(ErrorKind::validation, "beta must be positive");
    model.set_beta(*a.beta);
  }
  if (a.regressor == "on") {
    if (!model.regressor()) fail(ErrorKind::validation, "model '" + a.model + "' has no trained regressor");
    model.enable_regressor(true);
  } else if (a.regressor == "off") {
    model.enable_regressor(false);
  }
  const auto stream = read_features(a.features);
  const auto output = detect_stream(stream, model, a.drop_window);
  if (output.frames.size() != stream.size()) fail(ErrorKind::validation, "detector dropped frames");

  std::ostringstream frames;
  write_detections(frames, output.frames);
  write_file(a.out, frames.str());
  if (!a.events.empty()) {
    std::ostringstream events;
    write_events(events, output.events);
    write_file(a.events, events.str());
  }
  std::size_t alarmed = 0;
  for (const auto& f : output.frames) alarmed += f.alarm ? 1 : 0;
  std::cout << "frames: " << output.frames.size() << '\n'
            << "alarmed_frames: " << alarmed << '\n'
            << "events: " << output.events.size() << '\n'
            << "h: " << fmt(model.calibration().h) << '\n'
            << "regressor: " << (model.uses_regressor() ? "on" : "off") << '\n'
            << "seed: " << model.seed() << '\n';
  return exit_ok;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string detections;
  std::string truth;
  std::string report;
  std::string curve;
  std::size_t grid = 200;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* sub = app.add_subcommand("evaluate", "Score detection records against ground truth");
  sub->add_option("--detections", a.detections, "Detection records from detect (JSONL)")->required();
  sub->add_option("--truth", a.truth, "Ground-truth events (JSONL; may be empty)")->required();
  sub->add_option("--report", a.report, "JSON report to write")->required();
  sub->add_option("--curve", a.curve, "Precision-delay curve to write (CSV); optional");
  sub->add_option("--grid", a.grid, "Maximum number of thresholds on the curve")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

int run_evaluate(const EvaluateArgs& a) {
  std::vector<FrameDecision> decisions;
  {
    auto in = open_input(a.detections);
    decisions = parse_detections(in);
  }
  std::vector<GroundTruthEvent> truth;
  {
    auto in = open_input(a.truth);
    truth = parse_ground_truth(in);
  }
  if (decisions.empty()) fail(ErrorKind::insufficient_data, "'" + a.detections + "' holds no detection records");
  const auto series = group_by_video(decisions);
  if (!truth.empty()) {
    bool covered = false;
    for (const auto& s : series) {
      const auto labels = frame_labels(s, truth);
      for (int l : labels) covered = covered || l == 1;
    }
    if (!covered) {
      fail(ErrorKind::validation, "ground truth '" + a.truth + "' covers no frame of '" + a.detections + "'");
    }
  }
  const auto report = evaluate(series, truth, a.grid);

  json j;
  j["apd"] = optional_or_null(report.apd);
  j["frame_auc"] = optional_or_null(report.frame_auc);
  j["far"] = report.empirical_far;
  j["false_alarm_period"] = finite_or_null(report.false_alarm_period);
  j["false_alarm_runs"] = report.false_alarm_runs;
  j["frames"] = report.frames;
  j["nominal_frames"] = report.nominal_frames;
  j["events"] = report.events;
  j["videos"] = series.size();
  j["curve_points"] = report.curve.points.size();
  write_file(a.report, j.dump(2) + "\n");

  if (!a.curve.empty()) {
    std::ostringstream csv;
    csv << "threshold,gamma,precision\n";
    csv.precision(17);
    for (const auto& p : report.curve.points) csv << p.threshold << ',' << p.gamma << ',' << p.precision << '\n';
    write_file(a.curve, csv.str());
  }
  std::cout << "apd: " << (report.apd ? fmt(*report.apd) : "undefined") << '\n'
            << "frame_auc: " << (report.frame_auc ? fmt(*report.frame_auc) : "undefined") << '\n'
            << "far: " << fmt(report.empirical_far) << '\n';
  return exit_ok;
}

// -------------------------------------------------------------- verify-far

struct VerifyFarArgs {
  std::string model;
  std::vector<double> betas{0.1, 0.05, 0.01};
  std::string features;
  std::uint64_t scenario_seed = 1;
  std::size_t streams = 10;
  std::size_t frames = 50000;
  std::uint64_t seed = 1;
  std::size_t drop_window = default_drop_window;
  std::string out;
};

void add_verify_far(CLI::App& app, VerifyFarArgs& a) {
  auto* sub = app.add_subcommand("verify-far", "Measure the false alarm rate on nominal streams for several betas");
  sub->add_option("--model", a.model, "Model file from calibrate")->required();
  sub->add_option("--betas", a.betas, "Comma-separated false alarm rate bounds")
      ->delimiter(',')
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--features", a.features,
                  "Nominal feature stream to use instead of generated streams (JSONL); optional");
  sub->add_option("--scenario-seed", a.scenario_seed,
                  "Seed of the synthetic scenario the model was calibrated on (sets the mixture)")
      ->capture_default_str();
  sub->add_option("--streams", a.streams, "Number of generated nominal streams")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--frames", a.frames, "Frames per generated stream")->capture_default_str()->check(
      CLI::PositiveNumber);
  sub->add_option("--seed", a.seed, "Seed of the generated streams (stream i uses seed + i)")->capture_default_str();
  sub->add_option("--drop-window", a.drop_window, "Consecutive statistic drops that end an event")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", a.out, "JSON table to write; optional");
}

int run_verify_far(const VerifyFarArgs& a) {
  const auto model = read_model(a.model);
  if (a.betas.empty()) fail(ErrorKind::validation, "no beta values given");
  for (double b : a.betas) {
    if (!(b > 0.0 && b <= 1.0)) fail(ErrorKind::validation, "beta " + fmt(b) + " is outside (0, 1]");
  }

  // Evidence does not depend on h, so it is computed once per stream.
  std::vector<std::vector<double>> evidence;
  if (!a.features.empty()) {
    const auto stream = read_features(a.features);
    std::map<std::string, std::vector<FrameObservation>> by_video;
    for (const auto& f : stream) by_video[f.video_id].push_back(f);
    for (const auto& [video, frames] : by_video) evidence.push_back(stream_evidence(frames, model));
  } else {
    const auto config = ScenarioConfig::make_default(model.dimension(), a.scenario_seed);
    for (std::size_t i = 0; i < a.streams; ++i) {
      evidence.push_back(stream_evidence(generate_nominal_stream(config, a.frames, a.seed + i), model));
    }
  }
  std::size_t total_frames = 0;
  for (const auto& e : evidence) total_frames += e.size();

  json rows = json::array();
  std::cout << "beta\th\tbound\talarm_runs\tframes\tempirical_far\tperiod\tmin_period\twithin_bound\n";
  for (double beta : a.betas) {
    auto swept = model;
    swept.set_beta(beta);
    const auto rule = swept.decision_rule();
    std::size_t runs = 0;
    for (const auto& e : evidence) runs += count_alarm_runs(e, rule, a.drop_window);
    const auto far = measure_far(runs, total_frames);
    const bool within = far.far <= beta;
    rows.push_back({{"beta", beta},
                    {"h", rule.h},
                    {"bound", swept.calibration().bound()},
                    {"alarm_runs", runs},
                    {"frames", total_frames},
                    {"empirical_far", far.far},
                    {"period", finite_or_null(far.period)},
                    {"min_period", 1.0 / beta},
                    {"within_bound", within}});
    std::cout << fmt(beta) << '\t' << fmt(rule.h) << '\t' << fmt(swept.calibration().bound()) << '\t' << runs << '\t'
              << total_frames << '\t' << fmt(far.far) << '\t' << fmt(far.period) << '\t' << fmt(1.0 / beta) << '\t'
              << (within ? "yes" : "no") << '\n';
  }
  if (!a.out.empty()) {
    json j;
    j["seed"] = a.seed;
    j["scenario_seed"] = a.scenario_seed;
    j["source"] = a.features.empty() ? json("generated") : json(a.features);
    j["streams"] = evidence.size();
    j["drop_window"] = a.drop_window;
    j["rows"] = rows;
    write_file(a.out, j.dump(2) + "\n");
  }
  return exit_ok;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
  std::string out_dir;
  std::size_t m = 18;
  std::uint64_t seed = 1;
  double shift = 0.5;
  std::size_t train_frames = 2000;
  std::size_t test_frames = 400;
  std::size_t videos = 4;
  double outlier_rate = 0.0;
  double outlier_shift = 0.5;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* sub = app.add_subcommand("synth", "Write a seeded synthetic scenario: train, test and truth files");
  sub->add_option("--out-dir", a.out_dir, "Directory for train.jsonl, test.jsonl, truth.jsonl, scenario.json")
      ->required();
  sub->add_option("--m", a.m, "Feature dimensionality")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--seed", a.seed, "Scenario seed")->capture_default_str();
  sub->add_option("--shift", a.shift, "Mean shift of the anomalous object in each dimension")->capture_default_str();
  sub->add_option("--train-frames", a.train_frames, "Training frames")->capture_default_str();
  sub->add_option("--test-frames", a.test_frames, "Frames per test video")->capture_default_str()->check(
      CLI::PositiveNumber);
  sub->add_option("--videos", a.videos, "Number of test videos")->capture_default_str();
  sub->add_option("--outlier-rate", a.outlier_rate, "Probability of an isolated outlier in a nominal test frame")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--outlier-shift", a.outlier_shift, "Mean shift of an isolated outlier object")
      ->capture_default_str();
}

int run_synth(const SynthArgs& a) {
  auto config = ScenarioConfig::make_default(a.m, a.seed, a.shift);
  config.n_train_frames = a.train_frames;
  config.n_test_frames = a.test_frames;
  config.n_videos = a.videos;
  config.outlier_rate = a.outlier_rate;
  config.outlier_shift.assign(a.m, a.outlier_shift);
  config.set_default_windows();
  const auto scenario = generate_scenario(config);

  std::error_code ec;
  std::filesystem::create_directories(a.out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create '" + a.out_dir + "': " + ec.message());
  const std::filesystem::path dir(a.out_dir);

  std::ostringstream train, test, truth;
  write_feature_stream(train, scenario.train);
  write_feature_stream(test, scenario.test);
  write_ground_truth(truth, scenario.truth);
  write_file((dir / "train.jsonl").string(), train.str());
  write_file((dir / "test.jsonl").string(), test.str());
  write_file((dir / "truth.jsonl").string(), truth.str());

  json meta;
  meta["seed"] = a.seed;
  meta["m"] = a.m;
  meta["shift"] = a.shift;
  meta["train_frames"] = a.train_frames;
  meta["test_frames"] = a.test_frames;
  meta["videos"] = a.videos;
  meta["outlier_rate"] = a.outlier_rate;
  meta["outlier_shift"] = a.outlier_shift;
  write_file((dir / "scenario.json").string(), meta.dump(2) + "\n");

  std::cout << "train_frames: " << scenario.train.size() << '\n'
            << "test_frames: " << scenario.test.size() << '\n'
            << "events: " << scenario.truth.size() << '\n'
            << "seed: " << a.seed << '\n';
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqvad: sequential video anomaly detection with a bounded false alarm rate"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file with one [subcommand] section per stage; flags win");
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CalibrateArgs calibrate_args;
  DetectArgs detect_args;
  EvaluateArgs evaluate_args;
  VerifyFarArgs verify_args;
  SynthArgs synth_args;
  add_calibrate(app, calibrate_args);
  add_detect(app, detect_args);
  add_evaluate(app, evaluate_args);
  add_verify_far(app, verify_args);
  add_synth(app, synth_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage;
  }

  try {
    if (app.got_subcommand("calibrate")) return run_calibrate(calibrate_args);
    if (app.got_subcommand("detect")) return run_detect(detect_args);
    if (app.got_subcommand("evaluate")) return run_evaluate(evaluate_args);
    if (app.got_subcommand("verify-far")) return run_verify_far(verify_args);
    if (app.got_subcommand("synth")) return run_synth(synth_args);
  } catch (const Error& e) {
    std::cerr << "seqvad: " << e.what() << '\n';
    return e.kind() == ErrorKind::numeric ? exit_numeric : exit_data;
  } catch (const std::exception& e) {
    std::cerr << "seqvad: " << e.what() << '\n';
    return exit_data;
  }
  return exit_usage;
}
