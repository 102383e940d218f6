#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "verf/geom.hpp"
#include "verf/monitor.hpp"
#include "verf/scene.hpp"

namespace verf {

// light_true_e is VERF-Light fed the true essential matrix.
enum class HarnessMethod { Light, Pnp, Disparity, LightTrueE };

std::string_view to_string(HarnessMethod m);
HarnessMethod harness_method_from_string(std::string_view name);

struct SceneSpec {
  SceneKind kind = SceneKind::RandomBox;
  int n_points = 500;
  double extent = 1.0;
  std::uint64_t seed = 0;
};

struct ErrorRegimes {
  double k = 4.0;                 // high regime is (eps, k eps]
  double low_probability = 0.5;
};

// Cameras on a hemisphere around the scene centroid.
struct CameraPathSpec {
  double radius_min = 2.0;        // multiples of the scene extent
  double radius_max = 4.0;
  double elevation_min_deg = 20.0;
  double elevation_max_deg = 80.0;
  double max_roll_deg = 5.0;
};

struct ExperimentConfig {
  SceneSpec scene;
  CameraIntrinsics intrinsics{500.0, 500.0, 320.0, 240.0, 640, 480};
  int n_trials = 100;
  double epsilon = 0.1;
  ErrorRegimes regimes;
  CameraPathSpec camera_path;
  OracleFlowConfig oracle;        // its seed is ignored; trials derive their own
  std::vector<HarnessMethod> methods{HarnessMethod::Light, HarnessMethod::Pnp, HarnessMethod::Disparity};
  MonitorConfig monitor;          // its epsilon is overwritten by `epsilon`
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  int threads = 1;                // 0 picks the hardware concurrency
  bool timing = true;             // false writes ms = 0 so outputs are byte-stable
  bool exclude_band = false;      // drop true errors in [0.8 eps, 1.2 eps] from accuracy
  std::optional<double> fixed_error_ratio;  // every error = ratio * eps

  void validate() const;
  MonitorConfig effective_monitor() const;
};

// Throws ConfigError on unknown keys, wrong types or invalid values.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

struct TrialSpec {
  int id = 0;
  Pose truth;
  Pose estimate;
  double true_error = 0.0;
  bool low_regime = true;
};

std::vector<TrialSpec> sample_trials(const ExperimentConfig& cfg);

struct MethodResult {
  HarnessMethod method = HarnessMethod::Light;
  double confidence = 0.0;
  Decision decision = Decision::Incorrect;
  std::optional<FailureReason> failure_reason;
  double ms = 0.0;
  std::optional<Pose> corrected_pose;
};

struct TrialRecord {
  int id = 0;
  Pose truth;
  Pose estimate;
  double true_error = 0.0;
  std::vector<MethodResult> results;

  const MethodResult* find(HarnessMethod m) const;
};

// One line of trials.csv.
struct TrialRow {
  int trial_id = 0;
  double true_error = 0.0;
  std::string method;
  double confidence = 0.0;
  std::string decision;
  std::string failure_reason;
  double ms = 0.0;
};

struct ConfusionSummary {
  std::string method;
  int tp = 0;  // said correct, was correct
  int fp = 0;
  int tn = 0;
  int fn = 0;
  int failed = 0;    // included in tn/fn
  int excluded = 0;  // inside the boundary band
  int counted() const { return tp + fp + tn + fn; }
  double accuracy() const { return counted() ? 100.0 * (tp + tn) / counted() : 0.0; }
};

struct ExperimentResult {
  std::vector<TrialRecord> records;
  std::vector<ConfusionSummary> summary;
};

inline constexpr double kBandLow = 0.8;
inline constexpr double kBandHigh = 1.2;

// Runs every configured method on every trial. When the config names an
// output directory, trials.csv is streamed there in trial order.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Verifies one trial; exposed for tests and the CLI.
TrialRecord run_trial(const ExperimentConfig& cfg, const SyntheticScene& scene, const TrialSpec& trial);

std::vector<TrialRow> to_rows(const TrialRecord& record, bool timing);
std::vector<ConfusionSummary> summarize(const std::vector<TrialRow>& rows, double epsilon, bool exclude_band);

std::string trials_csv_header();
std::string format_row(const TrialRow& row);
std::vector<TrialRow> read_trials_csv(const std::filesystem::path& path);
void write_trials_csv(const std::filesystem::path& path, const std::vector<TrialRow>& rows);
void write_summary_csv(const std::filesystem::path& path, const std::vector<ConfusionSummary>& summary);
std::vector<ConfusionSummary> read_summary_csv(const std::filesystem::path& path);
void write_scatter_svg(const std::filesystem::path& path, const std::vector<TrialRow>& rows, double epsilon,
                       double cutoff);

// trials.csv, summary.csv, scatter.svg, run.json and, when PnP ran,
// pnp_corrections.csv.
void emit_reports(const ExperimentConfig& cfg, const ExperimentResult& result,
                  const std::filesystem::path& out_dir);

}  // namespace verf
