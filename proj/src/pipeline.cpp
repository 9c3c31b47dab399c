#include "coex/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>

#include "json.hpp"

#include "coex/errors.hpp"
#include "coex/parallel.hpp"

namespace coex::pipeline {

namespace fs = std::filesystem;

Inputs Inputs::load(const config::RunConfig& cfg) {
  Inputs in;
  in.sst = io::load_field_bundle(cfg.sst_path);
  if (cfg.sic_path) in.sic = io::load_field_bundle(*cfg.sic_path);
  if (cfg.obs_path) in.obs = io::load_observation_table(*cfg.obs_path);
  if (cfg.extent_path) in.extent = io::load_extent_table(*cfg.extent_path);
  in.validate();
  return in;
}

void Inputs::validate() const {
  try {
    sst.ensemble.validate(2);
  } catch (const InvalidInput& e) {
    throw SchemaError(std::string("sst bundle: ") + e.what());
  }
  const auto& grid = sst.ensemble.locations;
  if (sic) {
    const auto& e = sic->ensemble;
    if (e.m() != sst.ensemble.m() || e.n() != sst.ensemble.n() || e.p() != sst.ensemble.p()) {
      throw SchemaError("sic bundle dimensions do not match the sst bundle");
    }
    for (std::size_t s = 0; s < grid.size(); ++s) {
      if (e.locations[s].lat != grid[s].lat || e.locations[s].lon != grid[s].lon) {
        throw SchemaError("sic bundle grid differs from the sst grid at location " +
                          std::to_string(s + 1));
      }
    }
    if (e.labels != sst.ensemble.labels) {
      throw SchemaError("sic and sst bundles list different members or a different member order");
    }
  }
  if (extent) {
    if (!sic) throw SchemaError("an extent table needs a sic bundle");
    io::extent_indicator(*extent, grid);
  }
}

SicSettings SicSettings::from(const config::RunConfig& cfg) {
  SicSettings s;
  s.splines = cfg.splines;
  s.pca_energy = cfg.pca_energy;
  s.hetero = cfg.hetero;
  s.beta_alpha2 = cfg.beta_alpha2;
  s.discrepancy = cfg.process_discrepancy;
  s.dist_scale = cfg.process_dist_scale;
  s.projection_tol = cfg.projection_tol;
  return s;
}

SicModel fit_sic_model(const field::FieldEnsemble& sst, const field::FieldEnsemble& sic,
                       const SicSettings& settings,
                       const std::optional<process::ExtentObservations>& extent) {
  sst.validate(2);
  sic.validate(2);
  if (sst.m() != sic.m() || sst.n() != sic.n() || sst.p() != sic.p()) {
    throw InvalidInput("fit_sic_model: ensembles differ in shape");
  }
  const Index m = sst.m();
  const Index n = sst.n();
  const Index p = sst.p();
  SicModel model;
  model.member_splines.resize(static_cast<std::size_t>(m));
  model.theta_hats.resize(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    model.member_splines[ui] = basis::spline_values(settings.splines, sst.members[ui]);
    model.theta_hats[ui] = basis::fit_theta_hat(sic.members[ui], model.member_splines[ui], n, p);
  }
  model.pca = basis::pca_spatial_basis(model.theta_hats, settings.pca_energy);

  // Wendland on great-circle distance needs the range within the diameter.
  basis::WendlandParams w = settings.discrepancy;
  w.c = std::min(w.c, std::numbers::pi * settings.dist_scale);
  process::RealityProcessSpec spec;
  spec.splines = settings.splines;
  spec.coefficients = model.pca;
  spec.var_US = process::discrepancy_covariance(sst.locations, w, settings.dist_scale);
  spec.locations = sst.locations;
  spec.months = n;
  spec.validate();

  model.groups.resize(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    auto& g = model.groups[ui];
    g.design = process::phi_star(spec, model.member_splines[ui]);
    g.response = sic.members[ui] - process::design_offset(spec, model.member_splines[ui]);
    g.residual_var.resize(n * p);
    for (Index r = 0; r < n * p; ++r) {
      g.residual_var(r) = basis::hetero_residual_var(sst.members[ui](r), settings.hetero);
    }
  }
  model.beta = hier::project_all(model.groups);
  model.resid = hier::residual_projections(model.groups);
  model.prior = hier::HierPrior::from_eigenvalues(model.pca.eigenvalues, settings.beta_alpha2,
                                                  canonical_mean(model.beta.beta_hats));
  model.adjusted = hier::adjust_hierarchy(model.beta, model.prior, model.resid);
  model.projection = hier::check_projection_invariance(model.groups, settings.projection_tol);

  model.pipeline.spec = std::move(spec);
  model.pipeline.pop = hier::extract_population(model.adjusted);
  model.pipeline.extent = extent;
  model.pipeline.prepare();
  return model;
}

namespace {

class StageTimer {
 public:
  StageTimer(std::vector<StageTime>& log, std::string name)
      : log_(log), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const auto dt = std::chrono::steady_clock::now() - start_;
    log_.push_back({name_, std::chrono::duration<double>(dt).count()});
  }
  const std::string& name() const { return name_; }

 private:
  std::vector<StageTime>& log_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

template <class F>
auto stage(std::vector<StageTime>& log, const std::string& name, F&& body) {
  StageTimer timer(log, name);
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

std::string month_tag(Index t) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02d", static_cast<int>(t + 1));
  return buf;
}

}  // namespace

Reconstruction run_reconstruction(const config::RunConfig& cfg, const Inputs& in) {
  Reconstruction rec;
  rec.config = cfg;
  const auto& sst = in.sst.ensemble;
  rec.grid = sst.locations;
  rec.member_labels = sst.labels;
  const auto& grid = sst.locations;
  const Index n = sst.n();

  rec.var_MX = stage(rec.timings, "estimate_var_MX",
                     [&] { return field::estimate_var_MX(sst, cfg.field_alpha2); });
  rec.sst_ensemble = stage(rec.timings, "first_update_field", [&] {
    field::CoexFieldSpec spec;
    spec.alpha2 = cfg.field_alpha2;
    spec.var_mean = rec.var_MX;
    spec.discrepancy = cfg.field_discrepancy;
    spec.dist_scale = cfg.field_dist_scale;
    return field::first_update_field(sst, spec);
  });
  rec.observations = stage(rec.timings, "observations", [&] {
    auto obs = io::build_observations(in.obs, grid, n, cfg.observations);
    if (cfg.pseudo_enabled) obs = field::add_pseudo_observations(obs, cfg.pseudo, grid, n);
    return obs;
  });
  rec.sst_data = stage(rec.timings, "second_update_field", [&] {
    return field::second_update_field(rec.sst_ensemble, rec.observations, cfg.pinv_rel_tol,
                                      cfg.condition_warning);
  });
  if (rec.sst_data.diagnostics && rec.sst_data.diagnostics->ill_conditioned) {
    std::cerr << "warning: var[Z] for the sst update has condition number "
              << rec.sst_data.diagnostics->condition_number << "\n";
  }
  if (!in.sic) return rec;

  std::optional<process::ExtentObservations> extent;
  if (in.extent) {
    extent = cfg.extent;
    extent->indicator = io::extent_indicator(*in.extent, grid);
  }
  rec.sic = stage(rec.timings, "fit_sic", [&] {
    return fit_sic_model(sst, in.sic->ensemble, SicSettings::from(cfg), extent);
  });
  const auto& pipe = rec.sic->pipeline;
  rec.sic_first = stage(rec.timings, "first_update_process", [&] {
    return process::first_update_process(rec.sst_data.mean, pipe.pop, pipe.spec);
  });
  if (extent) {
    rec.sic_second = stage(rec.timings, "second_update_process", [&] {
      return process::second_update_process(*rec.sic_first, pipe.cells, extent->indicator,
                                            *pipe.error, cfg.pinv_rel_tol, cfg.condition_warning);
    });
    if (rec.sic_second->diagnostics && rec.sic_second->diagnostics->ill_conditioned) {
      std::cerr << "warning: var[Z_Y] for the sic update has condition number "
                << rec.sic_second->diagnostics->condition_number << "\n";
    }
  }
  return rec;
}


namespace {

std::ofstream open_out(const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void emit_stage(std::vector<fs::path>& files, const fs::path& out, const std::string& prefix,
                std::span<const GeoLocation> grid, const Vector& mean, const Vector& var, Index n) {
  for (Index t = 0; t < n; ++t) {
    const fs::path f = out / (prefix + "_month" + month_tag(t) + ".csv");
    io::write_month_table(f, grid, mean, var, t);
    files.push_back(f);
  }
}

}  // namespace

std::vector<fs::path> emit_reconstruction(const Reconstruction& rec, const fs::path& out) {
  std::vector<fs::path> files;
  const auto& grid = rec.grid;
  const Index n = rec.sst_data.n();
  const Index p = rec.sst_data.p();
  emit_stage(files, out, "sst_ensemble", grid, rec.sst_ensemble.mean,
             rec.sst_ensemble.marginal_variance(), n);
  emit_stage(files, out, "sst_data", grid, rec.sst_data.mean, rec.sst_data.marginal_variance(), n);
  const Vector update = rec.sst_data.mean - rec.sst_ensemble.mean;
  for (Index t = 0; t < n; ++t) {
    const fs::path f = out / ("sst_update_month" + month_tag(t) + ".csv");
    auto o = open_out(f);
    o << "lat,lon,update\n";
    for (Index s = 0; s < p; ++s) {
      const auto& g = grid[static_cast<std::size_t>(s)];
      o << io::format_double(g.lat) << ',' << io::format_double(g.lon) << ','
        << io::format_double(update(t * p + s)) << '\n';
    }
    if (!o) throw IoError("failed writing " + f.string());
    files.push_back(f);
  }
  if (rec.sic_first) {
    emit_stage(files, out, "sic_ensemble", grid, rec.sic_first->clamped_mean(),
               rec.sic_first->marginal_variance(), n);
  }
  if (rec.sic_second) {
    emit_stage(files, out, "sic_data", grid, rec.sic_second->clamped_mean(),
               rec.sic_second->marginal_variance(), n);
  }
  return files;
}

namespace {

PsdRecord psd_record(const std::string& what, const Matrix& m, double tol) {
  const auto rep = psd_project_report(m, tol);
  return PsdRecord{what, rep.min_eigenvalue, rep.clipped, tol};
}

}  // namespace

std::vector<fs::path> diagnose(const Reconstruction& rec, const fs::path& out) {
  const fs::path dir = out / "diagnostics";
  const auto& cfg = rec.config;
  std::vector<fs::path> files;
  auto d = io::format_double;

  {
    const fs::path f = dir / "projection_invariance.csv";
    auto o = open_out(f);
    o << "group,discrepancy,residual_coupling,tol,passed\n";
    if (rec.sic) {
      const auto& r = rec.sic->projection;
      for (std::size_t i = 0; i < r.discrepancies.size(); ++i) {
        o << rec.member_labels[i] << ',' << d(r.discrepancies[i]) << ',' << d(r.couplings[i]) << ','
          << d(r.tol) << ',' << (r.discrepancies[i] <= r.tol ? 1 : 0) << '\n';
      }
    }
    files.push_back(f);
  }
  {
    const fs::path f = dir / "conditioning.csv";
    auto o = open_out(f);
    o << "stage,observations,condition_number,rank,ill_conditioned\n";
    if (const auto& dg = rec.sst_data.diagnostics) {
      o << "second_update_field," << rec.observations.size() << ',' << d(dg->condition_number)
        << ',' << dg->rank << ',' << (dg->ill_conditioned ? 1 : 0) << '\n';
    }
    if (rec.sic_second && rec.sic_second->diagnostics) {
      const auto& dg = *rec.sic_second->diagnostics;
      o << "second_update_process," << rec.sic_second->cov.correction->cells.size() << ','
        << d(dg.condition_number) << ',' << dg.rank << ',' << (dg.ill_conditioned ? 1 : 0) << '\n';
    }
    files.push_back(f);
  }
  if (rec.sic) {
    const auto& model = *rec.sic;
    const Index k = model.pca.rank();
    {
      const fs::path f = dir / "beta_hat.csv";
      auto o = open_out(f);
      o << "group,residual_norm";
      for (Index j = 0; j < k; ++j) o << ",beta_" << (j + 1);
      for (Index j = 0; j < k; ++j) o << ",adjusted_" << (j + 1);
      o << '\n';
      for (Index i = 0; i < model.beta.m(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        o << rec.member_labels[ui] << ',' << d(model.beta.projection_residual_norms[ui]);
        for (Index j = 0; j < k; ++j) o << ',' << d(model.beta.beta_hats[ui](j));
        const Vector adj = model.adjusted.beta_mean(i);
        for (Index j = 0; j < k; ++j) o << ',' << d(adj(j));
        o << '\n';
      }
      files.push_back(f);
    }
    {
      const fs::path f = dir / "curves.csv";
      auto o = open_out(f);
      o << "site,lat,lon,sst,sic\n";
      const auto& spec = model.pipeline.spec;
      const Index p = spec.p();
      const Index l = spec.l();
      const Vector theta = spec.coefficients.center + spec.coefficients.columns * model.pipeline.pop.mean;
      for (Index site : cfg.curve_sites) {
        if (site < 0 || site >= p) {
          throw SchemaError("diagnose.curve_sites: site " + std::to_string(site) + " is off the grid");
        }
        Vector ts(l);
        for (Index c = 0; c < l; ++c) ts(c) = theta(c * p + site);
        const auto& g = rec.grid[static_cast<std::size_t>(site)];
        for (Index j = 0; j < cfg.curve_points; ++j) {
          const double t = spec.splines.t_min + (spec.splines.t_max - spec.splines.t_min) *
                                                    static_cast<double>(j) /
                                                    static_cast<double>(cfg.curve_points - 1);
          o << site << ',' << d(g.lat) << ',' << d(g.lon) << ',' << d(t) << ','
            << d(basis::ispline_eval(spec.splines, t).dot(ts)) << '\n';
        }
      }
      files.push_back(f);
    }
  }
  {
    std::vector<PsdRecord> log;
    log.push_back(psd_record("var_MX_spatial", rec.var_MX.spatial, cfg.psd_tol));
    log.push_back(psd_record("sst_ensemble_spatial", rec.sst_ensemble.var_spatial, cfg.psd_tol));
    log.push_back(psd_record("sst_data_spatial", rec.sst_data.var_spatial, cfg.psd_tol));
    if (rec.sic) {
      log.push_back(psd_record("hierarchy_adjusted", rec.sic->adjusted.adj_var_B, cfg.psd_tol));
      log.push_back(psd_record("population", rec.sic->pipeline.pop.cov, cfg.psd_tol));
      // The process covariances are (n*p)^2; only small grids are checked in full.
      constexpr Index kDenseLimit = 3000;
      if (rec.sic_first && rec.sic_first->cov.size() <= kDenseLimit) {
        log.push_back(psd_record("sic_ensemble", rec.sic_first->cov.dense(), cfg.psd_tol));
      }
      if (rec.sic_second && rec.sic_second->cov.size() <= kDenseLimit) {
        log.push_back(psd_record("sic_data", rec.sic_second->cov.dense(), cfg.psd_tol));
      }
    }
    const fs::path f = dir / "psd_log.csv";
    auto o = open_out(f);
    o << "quantity,min_eigenvalue,clipped,tol\n";
    for (const auto& r : log) {
      o << r.quantity << ',' << d(r.min_eigenvalue) << ',' << r.clipped << ',' << d(r.tol) << '\n';
    }
    files.push_back(f);
  }
  return files;
}

std::vector<process::PlausibleSample> draw_samples(const Reconstruction& rec, Index count,
                                                   std::uint64_t seed) {
  process::SampleOptions opt;
  opt.count = count;
  opt.seed = seed;
  opt.bound = rec.config.sample_bound;
  opt.scalar_z = rec.config.sample_scalar_z;
  return process::sample_plausible(rec.sst_data, rec.sic ? &rec.sic->pipeline : nullptr, opt);
}

std::vector<fs::path> write_samples(const Reconstruction& rec,
                                    const std::vector<process::PlausibleSample>& samples,
                                    const fs::path& out) {
  std::vector<fs::path> files;
  const Index p = static_cast<Index>(rec.grid.size());
  auto d = io::format_double;
  for (const auto& s : samples) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04d.csv", static_cast<int>(s.draw));
    const fs::path f = out / "samples" / name;
    auto o = open_out(f);
    const bool sic = s.y_sample.size() != 0;
    o << "# seed: " << s.seed << "\n# draw: " << s.draw << "\n";
    o << "month_index,lat,lon,sst" << (sic ? ",sic" : "") << '\n';
    for (Index r = 0; r < s.x_sample.size(); ++r) {
      const auto& g = rec.grid[static_cast<std::size_t>(r % p)];
      o << (r / p + 1) << ',' << d(g.lat) << ',' << d(g.lon) << ',' << d(s.x_sample(r));
      if (sic) o << ',' << d(s.y_sample(r));
      o << '\n';
    }
    if (!o) throw IoError("failed writing " + f.string());
    files.push_back(f);
  }
  return files;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Manifest make_manifest(const fs::path& config_path, const config::RunConfig& cfg) {
  Manifest m;
  m.config_hash = hex64(io::hash_file(config_path));
  m.input_hashes.emplace_back("sst", hex64(io::hash_file(cfg.sst_path)));
  if (cfg.sic_path) m.input_hashes.emplace_back("sic", hex64(io::hash_file(*cfg.sic_path)));
  if (cfg.obs_path) m.input_hashes.emplace_back("obs", hex64(io::hash_file(*cfg.obs_path)));
  if (cfg.extent_path) {
    m.input_hashes.emplace_back("extent", hex64(io::hash_file(*cfg.extent_path)));
  }
  m.seed = cfg.sample_seed;
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["config_hash"] = m.config_hash;
  for (const auto& [name, h] : m.input_hashes) j["input_hashes"][name] = h;
  j["seed"] = m.seed;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& t : m.timings) j["stages"].push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  j["outputs"] = m.outputs;
  auto o = open_out(path);
  o << j.dump(2) << '\n';
  if (!o) throw IoError("failed writing " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no manifest at " + path.string() + "; run fit first");
  Manifest m;
  try {
    const auto j = nlohmann::ordered_json::parse(io::read_file(path));
    m.version = j.at("version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& [name, h] : j.at("input_hashes").items()) {
      m.input_hashes.emplace_back(name, h.get<std::string>());
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("stages")) {
      m.timings.push_back({s.at("stage").get<std::string>(), s.at("seconds").get<double>()});
    }
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void verify_manifest(const Manifest& recorded, const Manifest& current) {
  if (recorded.config_hash != current.config_hash) {
    throw SchemaError("config changed since the run (hash " + recorded.config_hash + " vs " +
                      current.config_hash + ")");
  }
  auto sorted = [](auto v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  if (sorted(recorded.input_hashes) != sorted(current.input_hashes)) {
    throw SchemaError("inputs changed since the run recorded in the manifest");
  }
}

int fit_command(const fs::path& config_path, const config::RunConfig& cfg) {
  Manifest manifest = make_manifest(config_path, cfg);
  const Inputs in = Inputs::load(cfg);
  Reconstruction rec = run_reconstruction(cfg, in);
  const fs::path out = cfg.output_dir;
  std::vector<fs::path> files = emit_reconstruction(rec, out);
  if (cfg.sample_count > 0) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto samples = draw_samples(rec, cfg.sample_count, cfg.sample_seed);
    const auto more = write_samples(rec, samples, out);
    files.insert(files.end(), more.begin(), more.end());
    rec.timings.push_back(
        {"sample", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  }
  manifest.timings = rec.timings;
  for (const auto& f : files) manifest.outputs.push_back(fs::relative(f, out).generic_string());
  write_manifest(out / "manifest.json", manifest);
  return 0;
}

int sample_command(const fs::path& config_path, const config::RunConfig& cfg) {
  const fs::path out = cfg.output_dir;
  verify_manifest(read_manifest(out / "manifest.json"), make_manifest(config_path, cfg));
  const Reconstruction rec = run_reconstruction(cfg, Inputs::load(cfg));
  const Index count = std::max<Index>(cfg.sample_count, 1);
  write_samples(rec, draw_samples(rec, count, cfg.sample_seed), out);
  return 0;
}

int diagnose_command(const fs::path& config_path, const config::RunConfig& cfg) {
  const fs::path out = cfg.output_dir;
  verify_manifest(read_manifest(out / "manifest.json"), make_manifest(config_path, cfg));
  const Reconstruction rec = run_reconstruction(cfg, Inputs::load(cfg));
  diagnose(rec, out);
  return 0;
}

int validate_command(const config::RunConfig& cfg) {
  const Inputs in = Inputs::load(cfg);
  try {
    io::build_observations(in.obs, in.sst.ensemble.locations, in.sst.ensemble.n(),
                           cfg.observations)
        .validate(in.sst.ensemble.n(), in.sst.ensemble.p());
  } catch (const InvalidInput& e) {
    throw SchemaError(std::string("observations: ") + e.what());
  }
  if (in.extent && in.sst.ensemble.n() <= std::max(cfg.extent.north_month, cfg.extent.south_month)) {
    throw SchemaError("extent months are not among the bundle's months");
  }
  return 0;
}

}  // namespace coex::pipeline
