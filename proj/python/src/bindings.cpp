#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "ensx/core/error.hpp"
#include "ensx/ensemble/ensemble.hpp"
#include "ensx/library/library.hpp"
#include "ensx/metrics/metrics.hpp"
#include "ensx/models/spec.hpp"
#include "ensx/session/session.hpp"

namespace py = pybind11;
using namespace ensx;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the json module does the Python side.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) {
  if (obj.is_none()) return json::object();
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

class PySessions {
 public:
  explicit PySessions(const std::string& library) : manager_({}, library) {}

  py::tuple request(const std::string& method, const std::string& path, const py::object& body,
                    const std::map<std::string, std::string>& query) {
    const auto payload = from_py(body);
    session::ApiResponse res;
    {
      py::gil_scoped_release release;
      res = session::handle_request(manager_, method, path, query, payload);
    }
    return py::make_tuple(res.status, to_py(res.body));
  }

  py::dict replay(const std::string& script) {
    session::ReplayResult r;
    {
      py::gil_scoped_release release;
      r = session::replay(manager_, script);
    }
    py::dict out;
    out["responses"] = to_py(r.responses);
    out["last_session"] = r.last_session;
    out["digest"] = r.digest;
    out["failures"] = r.failures;
    return out;
  }

  std::string digest(const std::string& session_id) const {
    const auto s = manager_.get(session_id);
    if (!s) throw Error(ErrorCode::NotFound, "no session " + session_id);
    return s->digest();
  }

 private:
  session::SessionManager manager_;
};

py::dict build(const std::string& data, const std::string& label, const std::string& out, double test_fraction,
               int folds, std::uint64_t seed, std::uint64_t train_seed, int limit) {
  library::DataSource source;
  source.path = std::filesystem::absolute(data).lexically_normal().string();
  source.label = label;
  source.test_fraction = test_fraction;
  source.folds = folds;
  source.seed = seed;
  library::ModelLibrary lib;
  {
    py::gil_scoped_release release;
    const auto ds = source.load();
    auto specs = models::default_grid();
    if (limit > 0 && static_cast<std::size_t>(limit) < specs.size()) specs.resize(static_cast<std::size_t>(limit));
    library::BuildOptions opts;
    opts.grid_name = "default";
    opts.source = source;
    lib = library::build_library(ds, dataio::encode(ds), specs, train_seed, opts);
    library::save_library(lib, out);
  }
  py::dict d;
  d["models"] = lib.size();
  d["failures"] = lib.manifest.failures.size();
  d["classes"] = lib.manifest.classes;
  d["test_rows"] = lib.test_rows();
  d["cv_rows"] = lib.cv_rows();
  d["build_seconds"] = lib.manifest.build_seconds;
  return d;
}

py::object auto_select(const std::string& dir, const std::string& metric, int max_size, int bags,
                       double bag_fraction, std::uint64_t seed) {
  ensemble::SelectOptions opt;
  opt.metric = ensemble::hillclimb_from_name(metric);
  opt.max_size = max_size;
  opt.bags = bags;
  opt.bag_fraction = bag_fraction;
  opt.seed = seed;
  const auto lib = library::load_library(dir);
  const auto trace = ensemble::auto_select(lib, opt);
  auto j = trace.to_json(lib);
  const auto state = ensemble::evaluate(lib, trace.members);
  j["perf"] = ensemble::perf_json(state.perf);
  return to_py(j);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ensemble library, selection and exploration sessions";

  py::register_exception<Error>(m, "EnsxError", PyExc_RuntimeError);

  m.def("default_grid", [] {
    std::vector<std::string> ids;
    for (const auto& s : models::default_grid()) ids.push_back(s.id());
    return ids;
  });

  m.def("binary_auc", [](const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
    return metrics::binary_auc(scores, positive).value;
  }, py::arg("scores"), py::arg("positive"));
  m.def("q_statistic", [](const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    return metrics::q_statistic(a, b).value;
  }, py::arg("correct_a"), py::arg("correct_b"));
  m.def("f_measure", [](const std::vector<int>& predicted, const std::vector<int>& truth, int cls) {
    return metrics::f_measure(predicted, truth, cls).value;
  }, py::arg("predicted"), py::arg("truth"), py::arg("cls"));

  m.def("build_library", &build, py::arg("data"), py::arg("label"), py::arg("out"), py::arg("test_fraction") = 0.2,
        py::arg("folds") = 5, py::arg("seed") = 1, py::arg("train_seed") = 1, py::arg("limit") = 0,
        "Train the default grid (or its first `limit` specs) and save the library.");
  m.def("auto_select", &auto_select, py::arg("library"), py::arg("metric") = "acc_cv", py::arg("max_size") = 10,
        py::arg("bags") = 1, py::arg("bag_fraction") = 0.5, py::arg("seed") = 1);

  py::class_<PySessions>(m, "Sessions")
      .def(py::init<const std::string&>(), py::arg("library") = "")
      .def("request", &PySessions::request, py::arg("method"), py::arg("path"), py::arg("body") = py::none(),
           py::arg("query") = std::map<std::string, std::string>{},
           "Route one API call; returns (status, body).")
      .def("replay", &PySessions::replay, py::arg("script"))
      .def("digest", &PySessions::digest, py::arg("session_id"));
}
