// Thin numpy-facing wrapper. Field layout is time-major throughout:
// element t*p + s of a field vector is month t at location s.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "coex/bayes_linear.hpp"
#include "coex/basis.hpp"
#include "coex/coex_field.hpp"
#include "coex/coex_process.hpp"
#include "coex/config.hpp"
#include "coex/errors.hpp"
#include "coex/hier_process.hpp"
#include "coex/linalg.hpp"
#include "coex/pipeline.hpp"

namespace py = pybind11;
using namespace coex;

namespace {

std::vector<GeoLocation> to_locations(const Matrix& latlon) {
  if (latlon.cols() != 2) throw InvalidInput("locations must be an (p, 2) array of lat, lon");
  std::vector<GeoLocation> out;
  out.reserve(static_cast<std::size_t>(latlon.rows()));
  for (Index i = 0; i < latlon.rows(); ++i) out.push_back(make_location(latlon(i, 0), latlon(i, 1)));
  return out;
}

field::FieldEnsemble to_ensemble(const Matrix& members, Index months, const Matrix& latlon) {
  field::FieldEnsemble e;
  e.months = months;
  e.locations = to_locations(latlon);
  for (Index i = 0; i < members.rows(); ++i) e.members.push_back(members.row(i).transpose());
  e.validate();
  return e;
}

py::dict field_dict(const field::FieldReconstruction& r) {
  py::dict d;
  d["mean"] = r.mean;
  d["var_temporal"] = r.var_temporal;
  d["var_spatial"] = r.var_spatial;
  d["variance"] = r.marginal_variance();
  return d;
}

field::FieldReconstruction from_field_dict(const py::dict& d) {
  field::FieldReconstruction r;
  r.mean = d["mean"].cast<Vector>();
  r.var_temporal = d["var_temporal"].cast<Matrix>();
  r.var_spatial = d["var_spatial"].cast<Matrix>();
  return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayes linear reconstruction of coupled climate fields";
  m.attr("__version__") = pipeline::kVersion;

  auto base = py::register_exception<Error>(m, "CoexError", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<InvalidBeliefs>(m, "InvalidBeliefs", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def(
      "adjust",
      [](const Vector& mean_x, const Vector& mean_d, const Matrix& cov_xx, const Matrix& cov_xd,
         const Matrix& cov_dd, const Vector& d) {
        const auto r = bayes_linear::adjust({mean_x, mean_d, cov_xx, cov_xd, cov_dd}, d);
        return py::make_tuple(r.adj_mean, r.adj_cov);
      },
      py::arg("mean_x"), py::arg("mean_d"), py::arg("cov_xx"), py::arg("cov_xd"), py::arg("cov_dd"),
      py::arg("d"), "Adjusted expectation and variance of X given D = d.");

  m.def("pinv", [](const Matrix& a) { return pinv(a); }, py::arg("a"));
  m.def(
      "kron_matvec",
      [](const Matrix& temporal, const Matrix& spatial, const Vector& v) {
        return kron_matvec(KroneckerOp{temporal, spatial}, v);
      },
      py::arg("temporal"), py::arg("spatial"), py::arg("v"));
  m.def(
      "nearest_kron_psd",
      [](const Matrix& s, Index n, Index p) {
        const auto f = nearest_kron_psd(s, n, p);
        return py::make_tuple(f.temporal, f.spatial);
      },
      py::arg("s"), py::arg("n"), py::arg("p"));

  m.def(
      "ispline",
      [](double t, int order, std::vector<double> knots, double t_min, double t_max, bool intercept) {
        basis::ISplineBasis b{order, std::move(knots), t_min, t_max, intercept};
        b.validate();
        return basis::ispline_eval(b, t);
      },
      py::arg("t"), py::arg("order") = 3, py::arg("knots") = std::vector<double>{-1.0, 1.0, 3.0},
      py::arg("t_min") = -2.0, py::arg("t_max") = 30.0, py::arg("intercept") = true);

  m.def(
      "wendland",
      [](double d, double kappa2, double c, double tau) {
        return basis::wendland_from_distance(d, basis::WendlandParams{kappa2, c, tau});
      },
      py::arg("d"), py::arg("kappa2") = 1.61, py::arg("c") = 0.92, py::arg("tau") = 6.0);

  m.def("ensemble_shrinkage", &field::ensemble_shrinkage, py::arg("alpha2"), py::arg("m"));

  m.def(
      "first_update_field",
      [](const Matrix& members, Index months, const Matrix& latlon, double alpha2, double kappa2,
         double c) {
        const auto e = to_ensemble(members, months, latlon);
        field::CoexFieldSpec spec;
        spec.alpha2 = alpha2;
        spec.var_mean = field::estimate_var_MX(e, alpha2);
        spec.discrepancy = basis::WendlandParams{kappa2, c, 6.0};
        return field_dict(field::first_update_field(e, spec));
      },
      py::arg("members"), py::arg("months"), py::arg("locations"), py::arg("alpha2") = 1.0,
      py::arg("kappa2") = 1.61, py::arg("c") = 0.92,
      "members is (m, n*p); returns the ensemble-adjusted field as a dict.");

  m.def(
      "second_update_field",
      [](const py::dict& rec, const Matrix& latlon, const Matrix& obs_latlon, const Vector& values,
         const Vector& sd) {
        auto r = from_field_dict(rec);
        const auto grid = to_locations(latlon);
        const auto where = to_locations(obs_latlon);
        if (values.size() != static_cast<Index>(where.size()) || sd.size() != values.size())
          throw InvalidInput("observation arrays differ in length");
        field::ObservationSet obs;
        for (std::size_t i = 0; i < where.size(); ++i) {
          field::Observation o;
          o.value = values(static_cast<Index>(i));
          o.sd = sd(static_cast<Index>(i));
          o.location = where[i];
          o.weights.time = field::annual_weights(r.n());
          o.weights.space = field::interpolation_weights(where[i], grid);
          obs.items.push_back(o);
        }
        return field_dict(field::second_update_field(r, obs));
      },
      py::arg("rec"), py::arg("locations"), py::arg("obs_locations"), py::arg("values"), py::arg("sd"),
      "Updates by annual-mean point observations.");

  m.def(
      "adjust_hierarchy",
      [](const std::vector<Matrix>& designs, const std::vector<Vector>& responses,
         const std::vector<Vector>& residual_vars, const Vector& mean_M, const Matrix& var_M,
         const Matrix& var_R, bool dense) {
        if (designs.size() != responses.size() || designs.size() != residual_vars.size())
          throw InvalidInput("group arrays differ in length");
        std::vector<hier::GroupData> groups;
        for (std::size_t i = 0; i < designs.size(); ++i)
          groups.push_back({designs[i], responses[i], residual_vars[i]});
        hier::HierPrior prior{mean_M, var_M, var_R, std::nullopt};
        const auto adj = dense ? hier::adjust_hierarchy_dense(groups, prior)
                               : hier::adjust_hierarchy(hier::project_all(groups), prior,
                                                        hier::residual_projections(groups));
        const auto pop = hier::extract_population(adj);
        py::dict d;
        d["mean_B"] = adj.adj_mean_B;
        d["var_B"] = adj.adj_var_B;
        d["population_mean"] = pop.mean;
        d["population_cov"] = pop.cov;
        return d;
      },
      py::arg("designs"), py::arg("responses"), py::arg("residual_vars"), py::arg("mean_M"),
      py::arg("var_M"), py::arg("var_R"), py::arg("dense") = false);

  m.def(
      "run_config",
      [](const std::filesystem::path& path) {
        const auto cfg = config::load_config(path);
        const auto in = pipeline::Inputs::load(cfg);
        const auto rec = pipeline::run_reconstruction(cfg, in);
        py::dict d;
        d["sst_ensemble"] = field_dict(rec.sst_ensemble);
        d["sst_data"] = field_dict(rec.sst_data);
        if (rec.sic_second) {
          d["sic_mean"] = rec.sic_second->clamped_mean();
          d["sic_variance"] = rec.sic_second->marginal_variance();
        }
        std::vector<std::string> stages;
        for (const auto& t : rec.timings) stages.push_back(t.stage);
        d["stages"] = stages;
        return d;
      },
      py::arg("config_path"), "Runs every stage of a config file; writes nothing.");

  m.def(
      "fit",
      [](const std::filesystem::path& path) {
        return pipeline::fit_command(path, config::load_config(path));
      },
      py::arg("config_path"), "Same as the `fit` verb of the command line tool.");
}
