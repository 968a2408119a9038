#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "heatrisk/epi.hpp"
#include "heatrisk/error.hpp"
#include "heatrisk/ggpm.hpp"
#include "heatrisk/heatwave.hpp"
#include "heatrisk/io.hpp"
#include "heatrisk/pipeline.hpp"
#include "heatrisk/surface.hpp"

namespace py = pybind11;
namespace hr = heatrisk;

namespace {

std::vector<bool> detect(const std::vector<double>& series, double threshold, const std::string& preset) {
  return hr::heatwave::detect(series, threshold, hr::heatwave::DurationPreset::by_name(preset));
}

std::vector<double> tps(const std::vector<std::pair<double, double>>& knots, const std::vector<double>& z,
                        double lambda, const std::vector<std::pair<double, double>>& at) {
  std::vector<hr::Point> k, p;
  for (auto [x, y] : knots) k.push_back({x, y});
  for (auto [x, y] : at) p.push_back({x, y});
  return hr::surface::tps_predict(hr::surface::tps_fit(k, z, lambda), p);
}

hr::pipeline::PipelineConfig load_config(const std::filesystem::path& path) {
  return hr::pipeline::PipelineConfig::from_json(hr::io::read_text(path), path.parent_path());
}

// Runs a stage with the JSON log captured and returned as a string.
std::string run_stage(const std::string& stage, const std::filesystem::path& config_path,
                      std::optional<std::string> method, std::optional<double> tau, std::optional<int> year) {
  std::ostringstream out;
  hr::pipeline::Logger log(out);
  {
    py::gil_scoped_release release;
    hr::pipeline::run(stage, load_config(config_path), {method, tau, year}, log);
  }
  return out.str();
}

std::filesystem::path simulate(const std::filesystem::path& out, std::uint64_t seed, bool null_effects) {
  hr::synthetic::Scenario sc;
  if (null_effects) sc.effects = hr::synthetic::Effects::none();
  std::ostringstream sink;
  hr::pipeline::Logger log(sink);
  hr::pipeline::simulate(sc, seed, out, log);
  return out / "config.json";
}

}  // namespace

PYBIND11_MODULE(_heatrisk, m) {
  m.doc() = "Heat exposure and mortality risk pipeline";

  static py::exception<hr::Error> error(m, "HeatriskError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const hr::Error& e) {
      py::set_error(error, (e.code() + ": " + e.what()).c_str());
    }
  });

  m.def("pc_prior_rate", &hr::epi::pc_prior_rate, py::arg("u"), py::arg("alpha"),
        "Exponential rate of the PC prior on the RW2 standard deviation.");
  m.def(
      "conditional_loglik",
      [](const std::vector<double>& eta, std::size_t case_index) {
        return hr::epi::conditional_loglik(eta, case_index);
      },
      py::arg("eta"), py::arg("case_index"));
  m.def("matern", &hr::ggpm::matern, py::arg("h"), py::arg("k"), py::arg("nu"));
  m.def("detect_heatwaves", &detect, py::arg("series"), py::arg("threshold"), py::arg("preset") = "base",
        "Heatwave flags for one contiguous series.");
  m.def("tps_interpolate", &tps, py::arg("knots"), py::arg("values"), py::arg("lam"), py::arg("points"),
        "Fits a thin plate spline and evaluates it at `points`.");

  m.def("default_config", [] { return hr::pipeline::PipelineConfig::defaults().to_json(); });
  m.def("subcommands", &hr::pipeline::subcommands);
  m.def("simulate", &simulate, py::arg("out"), py::arg("seed") = 1, py::arg("null_effects") = false,
        "Writes a synthetic bundle; returns the config path.");
  m.def("run", &run_stage, py::arg("stage"), py::arg("config"), py::arg("method") = py::none(),
        py::arg("tau") = py::none(), py::arg("year") = py::none(), "Runs one stage; returns the JSON log.");
}
