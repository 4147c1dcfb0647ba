#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ilb/error.hpp"
#include "ilb/harness.hpp"

namespace py = pybind11;
using namespace ilb;

namespace {

py::dict report_dict(const ProgramReport& r) {
  py::dict d;
  d["offered"] = r.offered;
  d["accepted"] = r.accepted;
  d["acceptance_rate_pct"] = r.acceptance_rate_pct;
  d["responsiveness_cost"] = r.responsiveness_cost;
  d["total_reduction_pct"] = r.total_reduction_pct;
  d["incentive_total"] = r.incentive_total;
  d["r_extra"] = r.r_extra;
  d["shortfall_met"] = r.shortfall_met;
  return d;
}

py::dict table_dict(const SweepTable& t) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(t.rows.size()),
                       static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.rows[r][c];
    }
  }
  py::dict d;
  d["header"] = t.header;
  d["rows"] = rows;
  d["raw_header"] = t.raw_header;
  d["raw_rows"] = t.raw_rows;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ilb, m) {
  m.doc() = "Incentive-driven load balancing core";
  m.attr("__version__") = kVersion;

  // Messages start with the error kind, e.g. "invalid-spec: ...".
  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::class_<Household>(m, "Household")
      .def_readonly("id", &Household::id)
      .def_readonly("neighborhood_id", &Household::neighborhood_id)
      .def_readonly("county", &Household::county)
      .def_readonly("elasticity", &Household::elasticity)
      .def_readonly("baseline_rate", &Household::baseline_rate)
      .def_property_readonly("load", [](const Household& h) {
        return py::array_t<double>(static_cast<py::ssize_t>(h.load.values.size()), h.load.values.data());
      })
      .def("day_total", [](const Household& h, std::size_t day) { return h.load.day_total(day); })
      .def("__repr__", [](const Household& h) { return "<Household " + h.id + ">"; });

  py::class_<Community>(m, "Community")
      .def_readonly("households", &Community::households)
      .def("__len__", &Community::size)
      .def("features", &normalize_features, "z-scored socio-economic features, one row per household")
      .def("save", [](const Community& c, const std::string& households_csv, const std::string& loads_csv) {
        save_community(c, households_csv, loads_csv);
      })
      .def_static("load", [](const std::string& households_csv, const std::string& loads_csv) {
        return load_community(households_csv, loads_csv);
      });

  m.def(
      "generate_community",
      [](int counties, int neighborhoods, int households, int days, double elasticity_mean,
         double elasticity_std, std::uint64_t seed) {
        return generate_community(
            {counties, neighborhoods, households, days, elasticity_mean, elasticity_std}, seed);
      },
      py::arg("counties") = 5, py::arg("neighborhoods") = 1, py::arg("households") = 50,
      py::arg("days") = 30, py::arg("elasticity_mean") = -0.25, py::arg("elasticity_std") = 0.1,
      py::arg("seed") = 1);

  py::class_<OfferTerms>(m, "OfferTerms")
      .def(py::init([](double pct, std::vector<int> days, int cycle) {
             return OfferTerms{pct, std::move(days), cycle};
           }),
           py::arg("target_reduction_pct") = 10.0, py::arg("emergency_days") = std::vector<int>{},
           py::arg("cycle_days") = 30)
      .def_readwrite("target_reduction_pct", &OfferTerms::target_reduction_pct)
      .def_readwrite("emergency_days", &OfferTerms::emergency_days)
      .def_readwrite("cycle_days", &OfferTerms::cycle_days);

  m.def("price_change_pct", &price_change_pct, py::arg("target_reduction_pct"), py::arg("elasticity"));
  m.def("min_incentive", &min_incentive, py::arg("household"), py::arg("terms"));
  m.def("rate_hike", py::overload_cast<double, double>(&rate_hike), py::arg("incentive_total"),
        py::arg("nonparticipant_kwh"));

  m.def(
      "spectral_clusters",
      [](const Eigen::MatrixXd& a, std::uint64_t seed) { return spectral_clusters(SimilarityMatrix(a), seed); },
      py::arg("similarity"), py::arg("seed") = 1);
  m.def(
      "kernel_similarity",
      [](const Eigen::MatrixXd& f, double t) { return kernel_similarity(f, t).values(); },
      py::arg("features"), py::arg("temperature") = 0.5);
  m.def(
      "inject_noise",
      [](const Eigen::MatrixXd& a, double level, std::uint64_t seed) {
        return inject_noise(SimilarityMatrix(a), level, seed).values();
      },
      py::arg("similarity"), py::arg("level_pct"), py::arg("seed") = 1);
  m.def(
      "spearman",
      [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); },
      py::arg("x"), py::arg("y"));

  m.def(
      "run_scenario",
      [](const std::string& config_json, const std::string& out_dir) {
        const auto config = pipeline_config_from_json(config_json);
        ScenarioRun run;
        {
          py::gil_scoped_release release;
          run = ilb::run_scenario(config);
          if (!out_dir.empty()) write_run_outputs(run, config, out_dir);
        }
        py::dict d = report_dict(run.report);
        d["emergency_days"] = run.emergency_days;
        d["offered_ids"] = [&] {
          std::vector<std::string> ids;
          for (const auto& h : run.households) {
            if (h.offered) ids.push_back(h.id);
          }
          return ids;
        }();
        d["validation_mse"] = run.history.validation_mse;
        d["similarity"] = run.similarity.values();
        return d;
      },
      py::arg("config_json") = "{}", py::arg("out_dir") = "",
      "Runs the full pipeline from a JSON configuration and returns the program report.");
  m.def(
      "run_sweep",
      [](const std::string& spec_json) {
        const auto spec = sweep_spec_from_json(spec_json);
        SweepTable table;
        {
          py::gil_scoped_release release;
          table = ilb::run_sweep(spec);
        }
        return table_dict(table);
      },
      py::arg("spec_json"));
}
