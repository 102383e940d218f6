// Python bindings for the verification core.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "verf/error.hpp"
#include "verf/flow.hpp"
#include "verf/geom.hpp"
#include "verf/harness.hpp"
#include "verf/monitor.hpp"
#include "verf/scene.hpp"
#include "verf/stats.hpp"

namespace py = pybind11;
using namespace verf;

namespace {

NormalizedPoint point(const std::pair<double, double>& p) { return {p.first, p.second}; }

py::array_t<float> to_array(const GrayImage& img) {
  py::array_t<float> out({img.height(), img.width()});
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

GrayImage from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::InvalidArgument, "image must be a 2-D array");
  const auto h = static_cast<int>(a.shape(0));
  const auto w = static_cast<int>(a.shape(1));
  return GrayImage(w, h, std::vector<float>(a.data(), a.data() + a.size()));
}

py::dict report_dict(const VerificationReport& r) {
  py::dict d;
  d["method"] = std::string(to_string(r.method));
  d["confidence"] = r.confidence;
  d["decision"] = std::string(to_string(r.decision));
  d["n"] = r.n;
  d["n_prime"] = r.n_prime;
  d["n_double_prime"] = r.n_double_prime;
  d["direction_estimate"] = r.direction_estimate ? py::cast(*r.direction_estimate) : py::none();
  d["estimated_offset"] = r.estimated_offset ? py::cast(*r.estimated_offset) : py::none();
  d["corrected_pose"] = r.corrected_pose ? py::cast(*r.corrected_pose) : py::none();
  d["failure_reason"] = r.failure_reason ? py::cast(std::string(to_string(*r.failure_reason))) : py::none();
  return d;
}

py::dict row_dict(const TrialRow& r) {
  py::dict d;
  d["trial_id"] = r.trial_id;
  d["true_error"] = r.true_error;
  d["method"] = r.method;
  d["confidence"] = r.confidence;
  d["decision"] = r.decision;
  d["failure_reason"] = r.failure_reason;
  d["ms"] = r.ms;
  return d;
}

py::dict summary_dict(const ConfusionSummary& s) {
  py::dict d;
  d["method"] = s.method;
  d["tp"] = s.tp;
  d["fp"] = s.fp;
  d["tn"] = s.tn;
  d["fn"] = s.fn;
  d["failed"] = s.failed;
  d["excluded"] = s.excluded;
  d["accuracy"] = s.accuracy();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pose-estimate verification against rendered views";

  static py::exception<Error> verf_error(m, "VerfError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object type = py::reinterpret_borrow<py::object>(verf_error.ptr());
      py::object exc = type(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(verf_error.ptr(), exc.ptr());
    }
  });

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](const Mat3& r, const Vec3& c) { return Pose{r, c}; }), py::arg("rotation"),
           py::arg("position"))
      .def_readwrite("rotation", &Pose::rotation)
      .def_readwrite("position", &Pose::position)
      .def("to_camera", &Pose::to_camera)
      .def("to_world", &Pose::to_world)
      .def("to_row_major", &Pose::to_row_major)
      .def_static("from_row_major", [](const std::vector<double>& v) { return Pose::from_row_major(v); })
      .def_static("look_at", &Pose::look_at, py::arg("eye"), py::arg("target"), py::arg("up"),
                  py::arg("roll") = 0.0);

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init([](double fx, double fy, double cx, double cy, int w, int h) {
             return CameraIntrinsics{fx, fy, cx, cy, w, h};
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"))
      .def_readwrite("fx", &CameraIntrinsics::fx)
      .def_readwrite("fy", &CameraIntrinsics::fy)
      .def_readwrite("cx", &CameraIntrinsics::cx)
      .def_readwrite("cy", &CameraIntrinsics::cy)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height)
      .def("matrix", &CameraIntrinsics::matrix);

  m.def("essential_from_poses", [](const Pose& a, const Pose& b) { return essential_from_poses(a, b).matrix(); },
        "E with b^T E a = 0 for normalized points a in view a and b in view b.");
  m.def(
      "sampson_distance",
      [](const Mat3& e, std::pair<double, double> a, std::pair<double, double> b, const CameraIntrinsics& K) {
        return sampson_distance(EssentialMatrix::project(e), point(a), point(b), K);
      },
      "First-order reprojection distance in pixels.");
  m.def("triangulate", [](const Pose& pa, const Pose& pb, std::pair<double, double> a,
                          std::pair<double, double> b) { return triangulate(pa, pb, point(a), point(b)); });
  m.def("normal_cdf", &normal_cdf);
  m.def("pnp_confidence", &pnp_confidence, py::arg("offset_norm"), py::arg("epsilon"), py::arg("sigma"));
  m.def("disparity_confidence", &disparity_confidence, py::arg("mean_disparity_px"), py::arg("sigma_px"));

  py::class_<SyntheticScene, std::shared_ptr<SyntheticScene>>(m, "Scene")
      .def_property_readonly("points",
                             [](const SyntheticScene& s) {
                               Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> p(s.points.size(), 3);
                               for (std::size_t i = 0; i < s.points.size(); ++i) {
                                 p.row(static_cast<Eigen::Index>(i)) = s.points[i].position.transpose();
                               }
                               return p;
                             })
      .def("centroid", &SyntheticScene::centroid);
  m.def(
      "generate_scene",
      [](const std::string& kind, int n, double extent, std::uint64_t seed) {
        return std::make_shared<SyntheticScene>(generate_scene(scene_kind_from_string(kind), n, extent, seed));
      },
      py::arg("kind"), py::arg("n_points"), py::arg("extent"), py::arg("seed"));
  m.def("render", [](const SyntheticScene& s, const Pose& pose, const CameraIntrinsics& K) {
    return to_array(render(s, pose, K));
  });

  m.def(
      "verify",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> sensor, const Pose& estimate,
         const CameraIntrinsics& K, std::shared_ptr<SyntheticScene> scene, double epsilon,
         const std::string& method) {
        const GrayImage img = from_array(sensor);
        SyntheticRenderBackend renders(scene, K);
        PatchMatchFlowBackend flow;
        MonitorConfig cfg;
        cfg.epsilon = epsilon;
        cfg.validate();
        switch (method_from_string(method)) {
          case Method::Light: return report_dict(verf_light(img, estimate, K, renders, flow, cfg));
          case Method::Pnp: return report_dict(verf_pnp(img, estimate, K, renders, flow, cfg));
          case Method::Disparity: break;
        }
        return report_dict(disparity_check(img, estimate, K, renders, flow, cfg));
      },
      py::arg("sensor"), py::arg("estimate"), py::arg("intrinsics"), py::arg("scene"), py::arg("epsilon"),
      py::arg("method") = "light", "Verifies a pose estimate against a scene, matching features by patch search.");

  m.def(
      "read_flo",
      [](const std::filesystem::path& path) {
        const DenseFlowField f = read_flo(path);
        py::array_t<float> flow({f.height, f.width, 2});
        py::array_t<bool> valid({f.height, f.width});
        auto fv = flow.mutable_unchecked<3>();
        auto vv = valid.mutable_unchecked<2>();
        for (int y = 0; y < f.height; ++y) {
          for (int x = 0; x < f.width; ++x) {
            fv(y, x, 0) = f.du[f.index(x, y)];
            fv(y, x, 1) = f.dv[f.index(x, y)];
            vv(y, x) = f.valid[f.index(x, y)] != 0;
          }
        }
        return py::make_tuple(flow, valid);
      },
      "Returns (flow[h, w, 2], valid[h, w]).");

  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(config_json);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCode::ConfigError, e.what());
        }
        const ExperimentConfig cfg = config_from_json(j);
        cfg.validate();
        ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = run_experiment(cfg);
          if (!cfg.output_dir.empty()) emit_reports(cfg, result, cfg.output_dir);
        }
        py::list rows;
        for (const auto& rec : result.records) {
          for (const auto& r : to_rows(rec, cfg.timing)) rows.append(row_dict(r));
        }
        py::list summary;
        for (const auto& s : result.summary) summary.append(summary_dict(s));
        return py::make_tuple(rows, summary);
      },
      py::arg("config_json"), "Runs a batch experiment from a JSON string; returns (rows, summary).");
}
