#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <map>
#include <string>

#include "qcdq/artifacts.hpp"
#include "qcdq/asymptotics.hpp"
#include "qcdq/config.hpp"
#include "qcdq/error.hpp"
#include "qcdq/experiment.hpp"
#include "qcdq/rng.hpp"

namespace py = pybind11;
using qcdq::Json;

// Config trees cross the boundary as JSON text; the Python package wraps these
// functions with json.loads / json.dumps.

namespace {

Json resolve(const std::string& user_text, const std::map<std::string, std::string>& overrides) {
  Json user = Json::parse(user_text);
  for (const auto& [k, v] : overrides) qcdq::apply_override(user, k, v);
  return qcdq::merge_with_defaults(user);
}

std::string run(const std::string& subcommand, const std::string& config_text, const std::string& recipe,
                unsigned threads) {
  const Json cfg = Json::parse(config_text);
  qcdq::RunContext ctx{cfg, qcdq::resolve_output_dir(cfg, subcommand), threads};
  py::gil_scoped_release release;
  return qcdq::run_subcommand(subcommand, ctx, recipe).dump();
}

std::string summarize(const std::string& config_text, std::size_t component) {
  const Json cfg = Json::parse(config_text);
  const qcdq::QcdModel model = qcdq::parse_model(cfg);
  const qcdq::SisSpec spec = qcdq::parse_sis(cfg, model);
  if (component >= static_cast<std::size_t>(spec.dim())) throw qcdq::ValidationError("component out of range");
  const double rho_a = qcdq::resolve_rho_a(cfg, model.change);
  const auto profile = qcdq::make_profile(spec.components[component].drift, model, rho_a, cfg);
  Json out = qcdq::to_json(qcdq::summarize(profile));
  out["shift"] = spec.components[component].drift.shift;
  out["rho_a"] = rho_a;
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_qcdq, m) {
  m.doc() = "Quickest change detection by Q-learning (native core)";

  py::register_exception<qcdq::ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<qcdq::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("default_config", [] { return qcdq::default_config().dump(); });
  m.def("recipe_names", &qcdq::recipe_names);
  m.def("recipe_config", [](const std::string& name) { return qcdq::recipe_config(name).dump(); });
  m.def("resolve_config", [](const std::string& user, const std::map<std::string, std::string>& overrides) {
    return resolve(user, overrides).dump();
  }, py::arg("user"), py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("config_hash", [](const std::string& cfg) { return qcdq::config_hash(Json::parse(cfg)); });
  m.def("run", &run, py::arg("subcommand"), py::arg("config"), py::arg("recipe") = "", py::arg("threads") = 1);
  m.def("summarize", &summarize, py::arg("config"), py::arg("component") = 0);
  m.def("stream_seed", [](std::uint64_t master, std::uint64_t tag, std::uint64_t index) {
    return qcdq::stream_seed(master, static_cast<qcdq::StreamTag>(tag), index);
  });
}
