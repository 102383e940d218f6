// verf: experiment runner and single-shot pose verification.
//
//   verf run --config cfg.json [--out dir] [--threads n]
//   verf verify --image sensor.png --pose r00,...,c2 --manifest renders.json
//               --intrinsics fx,fy,cx,cy --epsilon 0.1 --method light [--flow-dir dir]
//   verf report --records trials.csv --out dir [--epsilon e] [--cutoff c]
//
// Exit codes: 0 success, 1 configuration error, 2 I/O error.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "verf/error.hpp"
#include "verf/flow.hpp"
#include "verf/harness.hpp"
#include "verf/image.hpp"
#include "verf/monitor.hpp"
#include "verf/scene.hpp"

namespace {

using nlohmann::json;
using namespace verf;

constexpr int kOk = 0;
constexpr int kConfig = 1;
constexpr int kIo = 2;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::BadManifest:
      return kConfig;
    default:
      return kIo;
  }
}

std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  std::string cell;
  for (const char c : text + ",") {
    if (c == ',' || c == ' ') {
      if (cell.empty()) continue;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size()) throw Error(ErrorCode::ConfigError, "bad number '" + cell + "'");
      out.push_back(v);
      cell.clear();
    } else {
      cell += c;
    }
  }
  return out;
}

void print_summary(const std::vector<ConfusionSummary>& summary) {
  std::printf("%-14s %5s %5s %5s %5s %7s %9s %9s\n", "method", "tp", "fp", "tn", "fn", "failed", "excluded",
              "accuracy");
  for (const ConfusionSummary& s : summary) {
    std::printf("%-14s %5d %5d %5d %5d %7d %9d %8.2f%%\n", s.method.c_str(), s.tp, s.fp, s.tn, s.fn, s.failed,
                s.excluded, s.accuracy());
  }
}

int cmd_run(const std::string& config_path, const std::string& out, int threads) {
  ExperimentConfig cfg = load_config(config_path);
  if (const char* env = std::getenv("VERF_SEED")) {
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "VERF_SEED must be an unsigned integer");
    }
  }
  if (!out.empty()) cfg.output_dir = out;
  if (cfg.output_dir.empty()) cfg.output_dir = ".";
  if (threads >= 0) cfg.threads = threads;
  cfg.validate();

  const ExperimentResult result = run_experiment(cfg);
  emit_reports(cfg, result, cfg.output_dir);
  print_summary(result.summary);
  return kOk;
}

int cmd_verify(const std::string& image, const std::string& pose_text, const std::string& manifest,
               const std::string& intrinsics_text, double epsilon, const std::string& method_name,
               const std::string& flow_dir, double cutoff) {
  const std::vector<double> pose_values = parse_numbers(pose_text);
  const Pose x_est = Pose::from_row_major(pose_values);
  const std::vector<double> k = parse_numbers(intrinsics_text);
  if (k.size() != 4) throw Error(ErrorCode::ConfigError, "--intrinsics takes fx,fy,cx,cy");
  const Method method = method_from_string(method_name);

  const GrayImage sensor = read_png_gray(image);
  const CameraIntrinsics K{k[0], k[1], k[2], k[3], sensor.width(), sensor.height()};
  if (!K.is_valid()) throw Error(ErrorCode::ConfigError, "invalid intrinsics");

  ImageDirectoryBackend renders(manifest, K);
  std::unique_ptr<FlowBackend> flow;
  if (flow_dir.empty()) {
    flow = std::make_unique<PatchMatchFlowBackend>();
  } else {
    const std::string sensor_stem = std::filesystem::path(image).stem().string();
    flow = std::make_unique<FloDirectoryBackend>(flow_dir, [&renders, sensor_stem](const View& v) {
      return v.pose ? renders.stem_for(*v.pose) : sensor_stem;
    });
  }

  MonitorConfig cfg;
  cfg.epsilon = epsilon;
  cfg.confidence_cutoff = cutoff;
  VerificationReport report;
  switch (method) {
    case Method::Light: report = verf_light(sensor, x_est, K, renders, *flow, cfg); break;
    case Method::Pnp: report = verf_pnp(sensor, x_est, K, renders, *flow, cfg); break;
    case Method::Disparity: report = disparity_check(sensor, x_est, K, renders, *flow, cfg); break;
  }

  json j = {{"method", std::string(to_string(report.method))},
            {"confidence", report.confidence},
            {"decision", std::string(to_string(report.decision))},
            {"n", report.n},
            {"n_prime", report.n_prime},
            {"n_double_prime", report.n_double_prime}};
  const auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  j["direction_estimate"] = report.direction_estimate ? vec(*report.direction_estimate) : json(nullptr);
  j["estimated_offset"] = report.estimated_offset ? vec(*report.estimated_offset) : json(nullptr);
  j["corrected_pose"] = report.corrected_pose ? json(report.corrected_pose->to_row_major()) : json(nullptr);
  j["failure_reason"] =
      report.failure_reason ? json(std::string(to_string(*report.failure_reason))) : json(nullptr);
  if (report.failure_reason) j["failure_detail"] = report.failure_detail;
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int cmd_report(const std::string& records, const std::string& out, double epsilon, double cutoff,
               bool exclude_band) {
  const std::filesystem::path records_path(records);
  const std::filesystem::path run_json = records_path.parent_path() / "run.json";
  if (std::filesystem::exists(run_json)) {
    std::ifstream in(run_json);
    try {
      const json j = json::parse(in);
      if (epsilon <= 0.0) epsilon = j.at("epsilon").get<double>();
      if (cutoff <= 0.0) cutoff = j.at("cutoff").get<double>();
      if (!exclude_band) exclude_band = j.value("exclude_band", false);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, run_json.string() + ": " + e.what());
    }
  }
  if (epsilon <= 0.0) throw Error(ErrorCode::ConfigError, "--epsilon is required when run.json is absent");
  if (cutoff <= 0.0) cutoff = 0.5;

  const std::vector<TrialRow> rows = read_trials_csv(records_path);
  if (rows.empty()) throw Error(ErrorCode::IoError, records + " holds no records");
  const std::filesystem::path out_dir(out);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out);
  const auto summary = summarize(rows, epsilon, exclude_band);
  write_summary_csv(out_dir / "summary.csv", summary);
  write_scatter_svg(out_dir / "scatter.svg", rows, epsilon, cutoff);
  print_summary(summary);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-estimate verification against rendered views"};
  app.require_subcommand(1);

  std::string config_path, run_out;
  int threads = -1;
  CLI::App* run = app.add_subcommand("run", "Run a batch experiment from a JSON config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", run_out, "Output directory (overrides output_dir)");
  run->add_option("--threads", threads, "Worker threads, 0 for all cores");

  std::string image, pose, manifest, intrinsics, method = "light", flow_dir;
  double epsilon = 0.0, cutoff = 0.5;
  CLI::App* verify = app.add_subcommand("verify", "Check one pose estimate against a sensor image");
  verify->add_option("--image", image, "Sensor image (PNG)")->required();
  verify->add_option("--pose", pose, "12 numbers, row-major 3x4 camera-to-world")->required();
  verify->add_option("--manifest", manifest, "Manifest of pre-rendered views")->required();
  verify->add_option("--intrinsics", intrinsics, "fx,fy,cx,cy")->required();
  verify->add_option("--epsilon", epsilon, "Position error bound")->required()->check(CLI::PositiveNumber);
  verify->add_option("--method", method, "light, pnp or disparity")
      ->check(CLI::IsMember({"light", "pnp", "disparity"}));
  verify->add_option("--flow-dir", flow_dir, "Directory of <from>__<to>.flo files (default: patch matching)");
  verify->add_option("--cutoff", cutoff, "Confidence cutoff");

  std::string records, report_out;
  double report_epsilon = 0.0, report_cutoff = 0.0;
  bool exclude_band = false;
  CLI::App* report = app.add_subcommand("report", "Summarize an existing trials.csv");
  report->add_option("--records", records, "trials.csv")->required();
  report->add_option("--out", report_out, "Output directory")->required();
  report->add_option("--epsilon", report_epsilon, "Epsilon (default: from run.json)");
  report->add_option("--cutoff", report_cutoff, "Cutoff (default: from run.json)");
  report->add_flag("--exclude-band", exclude_band, "Drop errors in [0.8 eps, 1.2 eps] from accuracy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(config_path, run_out, threads);
    if (*verify) {
      return cmd_verify(image, pose, manifest, intrinsics, epsilon, method, flow_dir, cutoff);
    }
    return cmd_report(records, report_out, report_epsilon, report_cutoff, exclude_band);
  } catch (const Error& e) {
    std::cerr << "verf: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "verf: " << e.what() << '\n';
    return kIo;
  }
}
