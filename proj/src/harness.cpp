#include "verf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "verf/error.hpp"
#include "verf/robust.hpp"

namespace verf {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigError, what); }

// Strict reader: every key must be known, every value of the right type.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) config_error(where_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      config_error(where_ + "." + key + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) config_error("unknown key " + where_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::IoError, path.string() + ": bad number '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::IoError, path.string() + ": bad integer '" + s + "'");
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(HarnessMethod m) {
  switch (m) {
    case HarnessMethod::Light: return "light";
    case HarnessMethod::Pnp: return "pnp";
    case HarnessMethod::Disparity: return "disparity";
    case HarnessMethod::LightTrueE: return "light_true_e";
  }
  return "unknown";
}

HarnessMethod harness_method_from_string(std::string_view name) {
  if (name == "light") return HarnessMethod::Light;
  if (name == "pnp") return HarnessMethod::Pnp;
  if (name == "disparity") return HarnessMethod::Disparity;
  if (name == "light_true_e") return HarnessMethod::LightTrueE;
  config_error("unknown method '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  if (n_trials < 1) config_error("n_trials must be >= 1");
  if (!(epsilon > 0.0)) config_error("epsilon must be positive");
  if (!(regimes.k > 1.0)) config_error("regimes.k must exceed 1");
  if (!(regimes.low_probability >= 0.0 && regimes.low_probability <= 1.0)) {
    config_error("regimes.low_probability must lie in [0, 1]");
  }
  if (scene.n_points < 10) config_error("scene.n_points must be >= 10");
  if (!(scene.extent > 0.0)) config_error("scene.extent must be positive");
  if (!intrinsics.is_valid()) config_error("intrinsics are invalid");
  if (!(camera_path.radius_min > 0.0 && camera_path.radius_max >= camera_path.radius_min)) {
    config_error("camera_path radii must satisfy 0 < radius_min <= radius_max");
  }
  if (!(camera_path.elevation_min_deg <= camera_path.elevation_max_deg && camera_path.elevation_min_deg > -90.0 &&
        camera_path.elevation_max_deg < 90.0)) {
    config_error("camera_path elevations must be ordered and inside (-90, 90)");
  }
  if (methods.empty()) config_error("methods must not be empty");
  if (threads < 0) config_error("threads must be >= 0");
  if (fixed_error_ratio && !(*fixed_error_ratio >= 0.0)) config_error("fixed_error_ratio must be >= 0");
  try {
    oracle.validate();
    effective_monitor().validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
}

MonitorConfig ExperimentConfig::effective_monitor() const {
  MonitorConfig m = monitor;
  m.epsilon = epsilon;
  return m;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  ObjectReader top(j, "config");

  if (const json* s = top.child("scene")) {
    ObjectReader r(*s, "scene");
    std::string kind = std::string(to_string(cfg.scene.kind));
    r.read("kind", kind);
    try {
      cfg.scene.kind = scene_kind_from_string(kind);
    } catch (const Error& e) {
      config_error(e.what());
    }
    r.read("n_points", cfg.scene.n_points);
    r.read("extent", cfg.scene.extent);
    r.read("seed", cfg.scene.seed);
    r.finish();
  }
  if (const json* s = top.child("intrinsics")) {
    ObjectReader r(*s, "intrinsics");
    r.read("fx", cfg.intrinsics.fx);
    r.read("fy", cfg.intrinsics.fy);
    r.read("cx", cfg.intrinsics.cx);
    r.read("cy", cfg.intrinsics.cy);
    r.read("width", cfg.intrinsics.width);
    r.read("height", cfg.intrinsics.height);
    r.finish();
  }
  top.read("n_trials", cfg.n_trials);
  top.read("epsilon", cfg.epsilon);
  if (const json* s = top.child("regimes")) {
    ObjectReader r(*s, "regimes");
    r.read("k", cfg.regimes.k);
    r.read("low_probability", cfg.regimes.low_probability);
    r.finish();
  }
  if (const json* s = top.child("camera_path")) {
    ObjectReader r(*s, "camera_path");
    r.read("radius_min", cfg.camera_path.radius_min);
    r.read("radius_max", cfg.camera_path.radius_max);
    r.read("elevation_min_deg", cfg.camera_path.elevation_min_deg);
    r.read("elevation_max_deg", cfg.camera_path.elevation_max_deg);
    r.read("max_roll_deg", cfg.camera_path.max_roll_deg);
    r.finish();
  }
  if (const json* s = top.child("oracle")) {
    ObjectReader r(*s, "oracle");
    r.read("noise_sigma_px", cfg.oracle.noise_sigma_px);
    r.read("outlier_fraction", cfg.oracle.outlier_fraction);
    r.read("outlier_max_px", cfg.oracle.outlier_max_px);
    r.read("resolution_px", cfg.oracle.resolution_px);
    r.finish();
  }
  if (const json* s = top.child("methods")) {
    if (!s->is_array()) config_error("methods must be an array");
    cfg.methods.clear();
    for (const json& m : *s) {
      if (!m.is_string()) config_error("methods must hold strings");
      cfg.methods.push_back(harness_method_from_string(m.get<std::string>()));
    }
  }
  if (const json* s = top.child("monitor")) {
    ObjectReader r(*s, "monitor");
    MonitorConfig& m = cfg.monitor;
    r.read("light_sigma_px", m.light_sigma_px);
    if (const json* p = r.child("pnp_sigma"); p && !p->is_null()) {
      if (!p->is_number()) config_error("monitor.pnp_sigma must be a number");
      m.pnp_sigma = p->get<double>();
    }
    r.read("disparity_sigma_px", m.disparity_sigma_px);
    r.read("confidence_cutoff", m.confidence_cutoff);
    r.read("pnp_baseline_factor", m.pnp_baseline_factor);
    r.read("min_inliers", m.min_inliers);
    if (const json* rs = r.child("ransac")) {
      ObjectReader rr(*rs, "monitor.ransac");
      rr.read("sampson_threshold_px", m.ransac.sampson_threshold_px);
      rr.read("max_iterations", m.ransac.max_iterations);
      rr.read("confidence", m.ransac.confidence);
      std::string solver = m.ransac.solver == MinimalSolver::FivePoint ? "five_point" : "eight_point";
      rr.read("solver", solver);
      if (solver == "five_point") {
        m.ransac.solver = MinimalSolver::FivePoint;
      } else if (solver == "eight_point") {
        m.ransac.solver = MinimalSolver::EightPoint;
      } else {
        config_error("monitor.ransac.solver must be eight_point or five_point");
      }
      rr.finish();
    }
    if (const json* fs = r.child("features")) {
      ObjectReader fr(*fs, "monitor.features");
      fr.read("max_features", m.features.max_features);
      fr.read("quality_level", m.features.quality_level);
      fr.read("min_distance_px", m.features.min_distance_px);
      fr.finish();
    }
    r.finish();
  }
  std::string out_dir;
  top.read("output_dir", out_dir);
  cfg.output_dir = out_dir;
  top.read("seed", cfg.seed);
  top.read("threads", cfg.threads);
  top.read("timing", cfg.timing);
  top.read("exclude_band", cfg.exclude_band);
  if (const json* f = top.child("fixed_error_ratio"); f && !f->is_null()) {
    if (!f->is_number()) config_error("fixed_error_ratio must be a number");
    cfg.fixed_error_ratio = f->get<double>();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const MonitorConfig& m = cfg.monitor;
  json methods = json::array();
  for (const HarnessMethod h : cfg.methods) methods.push_back(std::string(to_string(h)));
  json j = {
      {"scene",
       {{"kind", std::string(to_string(cfg.scene.kind))},
        {"n_points", cfg.scene.n_points},
        {"extent", cfg.scene.extent},
        {"seed", cfg.scene.seed}}},
      {"intrinsics",
       {{"fx", cfg.intrinsics.fx},
        {"fy", cfg.intrinsics.fy},
        {"cx", cfg.intrinsics.cx},
        {"cy", cfg.intrinsics.cy},
        {"width", cfg.intrinsics.width},
        {"height", cfg.intrinsics.height}}},
      {"n_trials", cfg.n_trials},
      {"epsilon", cfg.epsilon},
      {"regimes", {{"k", cfg.regimes.k}, {"low_probability", cfg.regimes.low_probability}}},
      {"camera_path",
       {{"radius_min", cfg.camera_path.radius_min},
        {"radius_max", cfg.camera_path.radius_max},
        {"elevation_min_deg", cfg.camera_path.elevation_min_deg},
        {"elevation_max_deg", cfg.camera_path.elevation_max_deg},
        {"max_roll_deg", cfg.camera_path.max_roll_deg}}},
      {"oracle",
       {{"noise_sigma_px", cfg.oracle.noise_sigma_px},
        {"outlier_fraction", cfg.oracle.outlier_fraction},
        {"outlier_max_px", cfg.oracle.outlier_max_px},
        {"resolution_px", cfg.oracle.resolution_px}}},
      {"methods", methods},
      {"monitor",
       {{"light_sigma_px", m.light_sigma_px},
        {"pnp_sigma", m.pnp_sigma ? json(*m.pnp_sigma) : json(nullptr)},
        {"disparity_sigma_px", m.disparity_sigma_px},
        {"confidence_cutoff", m.confidence_cutoff},
        {"pnp_baseline_factor", m.pnp_baseline_factor},
        {"min_inliers", m.min_inliers},
        {"ransac",
         {{"sampson_threshold_px", m.ransac.sampson_threshold_px},
          {"max_iterations", m.ransac.max_iterations},
          {"confidence", m.ransac.confidence},
          {"solver", m.ransac.solver == MinimalSolver::FivePoint ? "five_point" : "eight_point"}}},
        {"features",
         {{"max_features", m.features.max_features},
          {"quality_level", m.features.quality_level},
          {"min_distance_px", m.features.min_distance_px}}}}},
      {"output_dir", cfg.output_dir.string()},
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"timing", cfg.timing},
      {"exclude_band", cfg.exclude_band},
      {"fixed_error_ratio", cfg.fixed_error_ratio ? json(*cfg.fixed_error_ratio) : json(nullptr)},
  };
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    config_error(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::vector<TrialSpec> sample_trials(const ExperimentConfig& cfg) {
  cfg.validate();
  constexpr double deg = std::numbers::pi / 180.0;
  const SyntheticScene scene = generate_scene(cfg.scene.kind, cfg.scene.n_points, cfg.scene.extent, cfg.scene.seed);
  const Vec3 centroid = scene.centroid();
  const CameraPathSpec& path = cfg.camera_path;

  std::vector<TrialSpec> trials;
  trials.reserve(cfg.n_trials);
  for (int id = 0; id < cfg.n_trials; ++id) {
    std::mt19937_64 rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(id)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double radius = cfg.scene.extent * (path.radius_min + (path.radius_max - path.radius_min) * unit(rng));
    const double azimuth = 2.0 * std::numbers::pi * unit(rng);
    const double elevation =
        deg * (path.elevation_min_deg + (path.elevation_max_deg - path.elevation_min_deg) * unit(rng));
    const double roll = deg * path.max_roll_deg * (2.0 * unit(rng) - 1.0);
    const Vec3 eye = centroid + radius * Vec3(std::cos(elevation) * std::cos(azimuth),
                                              std::cos(elevation) * std::sin(azimuth), std::sin(elevation));

    TrialSpec t;
    t.id = id;
    t.truth = Pose::look_at(eye, centroid, Vec3::UnitZ(), roll);
    t.low_regime = unit(rng) < cfg.regimes.low_probability;
    const double u = unit(rng);
    if (cfg.fixed_error_ratio) {
      t.true_error = *cfg.fixed_error_ratio * cfg.epsilon;
    } else if (t.low_regime) {
      t.true_error = cfg.epsilon * u;
    } else {
      // (eps, k eps]: 1 - u lies in (0, 1].
      t.true_error = cfg.epsilon * (1.0 + (cfg.regimes.k - 1.0) * (1.0 - u));
    }
    Vec3 dir;
    do {
      dir = Vec3(gauss(rng), gauss(rng), gauss(rng));
    } while (dir.norm() < 1e-9);
    t.estimate = Pose{t.truth.rotation, t.truth.position + t.true_error * dir.normalized()};
    t.true_error = (t.estimate.position - t.truth.position).norm();
    trials.push_back(t);
  }
  return trials;
}

const MethodResult* TrialRecord::find(HarnessMethod m) const {
  for (const MethodResult& r : results) {
    if (r.method == m) return &r;
  }
  return nullptr;
}

TrialRecord run_trial(const ExperimentConfig& cfg, const SyntheticScene& scene, const TrialSpec& trial) {
  const CameraIntrinsics& K = cfg.intrinsics;
  auto shared = std::make_shared<const SyntheticScene>(scene);
  SyntheticRenderBackend renderer(shared, K);
  const std::uint64_t trial_seed = stream_seed(cfg.seed ^ 0x5eed5eedULL, static_cast<std::uint64_t>(trial.id));

  TrialRecord record;
  record.id = trial.id;
  record.truth = trial.truth;
  record.estimate = trial.estimate;
  record.true_error = trial.true_error;

  std::optional<GrayImage> sensor;
  try {
    sensor = render(scene, trial.truth, K);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyView) throw;
  }

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const HarnessMethod method = cfg.methods[mi];
    MonitorConfig mcfg = cfg.effective_monitor();
    mcfg.ransac.seed = stream_seed(trial_seed, 2 * mi);
    OracleFlowConfig ocfg = cfg.oracle;
    ocfg.seed = stream_seed(trial_seed, 2 * mi + 1);
    OracleFlowBackend flow(shared, K, trial.truth, ocfg);

    MethodResult result;
    result.method = method;
    const auto start = std::chrono::steady_clock::now();
    VerificationReport report;
    if (!sensor) {
      report.failure_reason = FailureReason::EmptyRender;
    } else {
      switch (method) {
        case HarnessMethod::Light:
          report = verf_light(*sensor, trial.estimate, K, renderer, flow, mcfg);
          break;
        case HarnessMethod::LightTrueE: {
          std::optional<TruthEssentialOverride> truth_e;
          try {
            truth_e = TruthEssentialOverride::from_poses(trial.estimate, trial.truth);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateBaseline) throw;
          }
          if (truth_e) {
            report = verf_light(*sensor, trial.estimate, K, renderer, flow, mcfg, truth_e);
          } else {
            report.failure_reason = FailureReason::EssentialFailed;
          }
          break;
        }
        case HarnessMethod::Pnp:
          report = verf_pnp(*sensor, trial.estimate, K, renderer, flow, mcfg);
          break;
        case HarnessMethod::Disparity:
          report = disparity_check(*sensor, trial.estimate, K, renderer, flow, mcfg);
          break;
      }
    }
    const auto stop = std::chrono::steady_clock::now();
    result.confidence = report.confidence;
    result.decision = report.decision;
    result.failure_reason = report.failure_reason;
    result.corrected_pose = report.corrected_pose;
    result.ms = std::chrono::duration<double, std::milli>(stop - start).count();
    record.results.push_back(result);
  }
  return record;
}

std::vector<TrialRow> to_rows(const TrialRecord& record, bool timing) {
  std::vector<TrialRow> rows;
  for (const MethodResult& r : record.results) {
    TrialRow row;
    row.trial_id = record.id;
    row.true_error = record.true_error;
    row.method = std::string(to_string(r.method));
    row.confidence = r.confidence;
    row.decision = std::string(to_string(r.decision));
    row.failure_reason = r.failure_reason ? std::string(to_string(*r.failure_reason)) : std::string();
    row.ms = timing ? r.ms : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::vector<ConfusionSummary> summarize(const std::vector<TrialRow>& rows, double epsilon, bool exclude_band) {
  std::vector<ConfusionSummary> out;
  std::map<std::string, std::size_t> slot;
  for (const TrialRow& row : rows) {
    auto it = slot.find(row.method);
    if (it == slot.end()) {
      it = slot.emplace(row.method, out.size()).first;
      out.push_back(ConfusionSummary{row.method});
    }
    ConfusionSummary& s = out[it->second];
    if (exclude_band && row.true_error >= kBandLow * epsilon && row.true_error <= kBandHigh * epsilon) {
      ++s.excluded;
      continue;
    }
    const bool truly_correct = row.true_error <= epsilon;
    const bool said_correct = row.decision == "correct";
    if (!row.failure_reason.empty()) ++s.failed;
    if (said_correct) {
      (truly_correct ? s.tp : s.fp)++;
    } else {
      (truly_correct ? s.fn : s.tn)++;
    }
  }
  return out;
}

std::string trials_csv_header() { return "trial_id,true_error,method,confidence,decision,failure_reason,ms"; }

std::string format_row(const TrialRow& row) {
  return std::to_string(row.trial_id) + "," + fmt("%.17g", row.true_error) + "," + row.method + "," +
         fmt("%.12f", row.confidence) + "," + row.decision + "," + row.failure_reason + "," + fmt("%.3f", row.ms);
}

std::vector<TrialRow> read_trials_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != trials_csv_header()) {
    throw Error(ErrorCode::IoError, path.string() + ": unexpected header");
  }
  std::vector<TrialRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 7) throw Error(ErrorCode::IoError, path.string() + ": expected 7 columns");
    TrialRow row;
    row.trial_id = parse_int(cells[0], path);
    row.true_error = parse_double(cells[1], path);
    row.method = cells[2];
    row.confidence = parse_double(cells[3], path);
    row.decision = cells[4];
    row.failure_reason = cells[5];
    row.ms = parse_double(cells[6], path);
    if (row.decision != "correct" && row.decision != "incorrect") {
      throw Error(ErrorCode::IoError, path.string() + ": bad decision '" + row.decision + "'");
    }
    rows.push_back(row);
  }
  return rows;
}

void write_trials_csv(const std::filesystem::path& path, const std::vector<TrialRow>& rows) {
  std::ofstream out = open_out(path);
  out << trials_csv_header() << '\n';
  for (const TrialRow& row : rows) out << format_row(row) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<ConfusionSummary>& summary) {
  std::ofstream out = open_out(path);
  out << "method,tp,fp,tn,fn,failed,excluded,accuracy_pct\n";
  for (const ConfusionSummary& s : summary) {
    out << s.method << ',' << s.tp << ',' << s.fp << ',' << s.tn << ',' << s.fn << ',' << s.failed << ','
        << s.excluded << ',' << fmt("%.4f", s.accuracy()) << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::vector<ConfusionSummary> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ConfusionSummary> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 8) throw Error(ErrorCode::IoError, path.string() + ": expected 8 columns");
    ConfusionSummary s{c[0]};
    s.tp = parse_int(c[1], path);
    s.fp = parse_int(c[2], path);
    s.tn = parse_int(c[3], path);
    s.fn = parse_int(c[4], path);
    s.failed = parse_int(c[5], path);
    s.excluded = parse_int(c[6], path);
    out.push_back(s);
  }
  return out;
}

void write_scatter_svg(const std::filesystem::path& path, const std::vector<TrialRow>& rows, double epsilon,
                       double cutoff) {
  constexpr double W = 800.0, H = 480.0, left = 60.0, right = 160.0, top = 20.0, bottom = 50.0;
  double max_error = 2.0 * epsilon;
  for (const TrialRow& r : rows) max_error = std::max(max_error, r.true_error);
  max_error *= 1.05;
  const auto sx = [&](double e) { return left + (W - left - right) * e / max_error; };
  const auto sy = [&](double q) { return top + (H - top - bottom) * (1.0 - q); };
  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::vector<std::string> methods;
  for (const TrialRow& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }

  std::ofstream out = open_out(path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
      << "<g id=\"axes\" stroke=\"black\" fill=\"none\">\n"
      << "<line x1=\"" << left << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(max_error) << "\" y2=\"" << sy(0)
      << "\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << sy(0) << "\" x2=\"" << left << "\" y2=\"" << sy(1) << "\"/>\n"
      << "</g>\n"
      << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">true error</text>\n"
      << "<text x=\"16\" y=\"" << (top + H - bottom) / 2 << "\" transform=\"rotate(-90 16 "
      << (top + H - bottom) / 2 << ")\" text-anchor=\"middle\">confidence</text>\n"
      << "<line id=\"epsilon-marker\" x1=\"" << fmt("%.6f", sx(epsilon)) << "\" y1=\"" << sy(0) << "\" x2=\""
      << fmt("%.6f", sx(epsilon)) << "\" y2=\"" << sy(1) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\">"
      << "<title>epsilon=" << fmt("%.17g", epsilon) << "</title></line>\n"
      << "<line id=\"cutoff-marker\" x1=\"" << left << "\" y1=\"" << fmt("%.6f", sy(cutoff)) << "\" x2=\""
      << sx(max_error) << "\" y2=\"" << fmt("%.6f", sy(cutoff)) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\">"
      << "<title>cutoff=" << fmt("%.17g", cutoff) << "</title></line>\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* colour = palette[m % std::size(palette)];
    out << "<g id=\"method-" << xml_escape(methods[m]) << "\" fill=\"" << colour << "\" fill-opacity=\"0.6\">\n";
    for (const TrialRow& r : rows) {
      if (r.method != methods[m]) continue;
      out << "<circle cx=\"" << fmt("%.3f", sx(r.true_error)) << "\" cy=\"" << fmt("%.3f", sy(r.confidence))
          << "\" r=\"3\"><title>trial=" << r.trial_id << " error=" << fmt("%.17g", r.true_error)
          << " confidence=" << fmt("%.12f", r.confidence) << "</title></circle>\n";
    }
    out << "</g>\n";
    const double ly = top + 20.0 * static_cast<double>(m) + 10.0;
    out << "<circle cx=\"" << W - right + 20 << "\" cy=\"" << ly << "\" r=\"5\" fill=\"" << colour << "\"/>\n"
        << "<text x=\"" << W - right + 32 << "\" y=\"" << ly + 5 << "\">" << xml_escape(methods[m]) << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::vector<TrialSpec> trials = sample_trials(cfg);
  const SyntheticScene scene = generate_scene(cfg.scene.kind, cfg.scene.n_points, cfg.scene.extent, cfg.scene.seed);

  std::ofstream stream;
  if (!cfg.output_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + cfg.output_dir.string());
    stream = open_out(cfg.output_dir / "trials.csv");
    stream << trials_csv_header() << '\n' << std::flush;
  }

  ExperimentResult result;
  result.records.resize(trials.size());
  std::vector<bool> done(trials.size(), false);
  std::size_t next_to_write = 0;
  std::mutex mutex;
  std::atomic<std::size_t> next_trial{0};

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next_trial.fetch_add(1);
      if (i >= trials.size()) return;
      TrialRecord rec = run_trial(cfg, scene, trials[i]);
      std::lock_guard lock(mutex);
      result.records[i] = std::move(rec);
      done[i] = true;
      // Flush the completed prefix so the file stays in trial order.
      while (next_to_write < trials.size() && done[next_to_write]) {
        if (stream.is_open()) {
          for (const TrialRow& row : to_rows(result.records[next_to_write], cfg.timing)) {
            stream << format_row(row) << '\n';
          }
          stream.flush();
        }
        ++next_to_write;
      }
    }
  };

  unsigned n_threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                        : static_cast<unsigned>(cfg.threads);
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(trials.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (stream.is_open() && !stream) throw Error(ErrorCode::IoError, "failed writing trials.csv");

  std::vector<TrialRow> rows;
  for (const TrialRecord& rec : result.records) {
    const auto r = to_rows(rec, cfg.timing);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  result.summary = summarize(rows, cfg.epsilon, cfg.exclude_band);
  return result;
}

void emit_reports(const ExperimentConfig& cfg, const ExperimentResult& result, const std::filesystem::path& out_dir) {
  if (result.records.empty()) throw Error(ErrorCode::InvalidArgument, "no records to report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string());

  std::vector<TrialRow> rows;
  for (const TrialRecord& rec : result.records) {
    const auto r = to_rows(rec, cfg.timing);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  write_trials_csv(out_dir / "trials.csv", rows);
  write_summary_csv(out_dir / "summary.csv", result.summary);
  write_scatter_svg(out_dir / "scatter.svg", rows, cfg.epsilon, cfg.monitor.confidence_cutoff);

  json run = {{"epsilon", cfg.epsilon},
              {"cutoff", cfg.monitor.confidence_cutoff},
              {"exclude_band", cfg.exclude_band},
              {"config", config_to_json(cfg)}};
  std::ofstream run_out = open_out(out_dir / "run.json");
  run_out << run.dump(2) << '\n';

  if (std::find(cfg.methods.begin(), cfg.methods.end(), HarnessMethod::Pnp) != cfg.methods.end()) {
    std::ofstream out = open_out(out_dir / "pnp_corrections.csv");
    out << "trial_id,true_error,corrected_error,status\n";
    for (const TrialRecord& rec : result.records) {
      const MethodResult* r = rec.find(HarnessMethod::Pnp);
      if (!r) continue;
      out << rec.id << ',' << fmt("%.17g", rec.true_error) << ',';
      if (r->corrected_pose) {
        out << fmt("%.17g", (r->corrected_pose->position - rec.truth.position).norm()) << ",ok\n";
      } else {
        out << ',' << (r->failure_reason ? to_string(*r->failure_reason) : std::string_view("failed")) << '\n';
      }
    }
  }
}

}  // namespace verf
