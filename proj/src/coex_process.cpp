#include "coex/coex_process.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "coex/errors.hpp"
#include "coex/parallel.hpp"

namespace coex::process {

void RealityProcessSpec::validate() const {
  splines.validate();
  if (months < 1 || locations.empty()) throw InvalidInput("process spec: empty grid");
  if (!var_US || var_US->rows() != p() || var_US->cols() != p()) {
    throw InvalidInput("process spec: var[U_S] must be p x p");
  }
  const Index lp = l() * p();
  if (coefficients.columns.rows() != lp || coefficients.center.size() != lp) {
    throw InvalidInput("process spec: coefficient basis has " +
                       std::to_string(coefficients.columns.rows()) + " rows, expected l*p = " +
                       std::to_string(lp));
  }
}

std::shared_ptr<const Matrix> discrepancy_covariance(std::span<const GeoLocation> locations,
                                                     const basis::WendlandParams& w,
                                                     double dist_scale) {
  return std::make_shared<const Matrix>(basis::wendland_gram(locations, w, dist_scale));
}

Matrix phi_star(const RealityProcessSpec& spec, const Matrix& compact) {
  const Index p = spec.p();
  const Index l = spec.l();
  const Index k = spec.k();
  if (compact.cols() != l || compact.rows() != spec.n() * p) {
    throw InvalidInput("phi_star: spline values have the wrong shape");
  }
  const Matrix& gamma = spec.coefficients.columns;
  Matrix phi = Matrix::Zero(compact.rows(), k);
  parallel_for(0, static_cast<std::size_t>(compact.rows()), [&](std::size_t ri) {
    const Index r = static_cast<Index>(ri);
    const Index s = r % p;
    for (Index c = 0; c < l; ++c) {
      const double v = compact(r, c);
      if (v != 0.0) phi.row(r) += v * gamma.row(c * p + s);
    }
  });
  return phi;
}

Vector design_offset(const RealityProcessSpec& spec, const Matrix& compact) {
  const Index p = spec.p();
  const Vector& center = spec.coefficients.center;
  Vector out = Vector::Zero(compact.rows());
  for (Index r = 0; r < compact.rows(); ++r) {
    const Index s = r % p;
    for (Index c = 0; c < compact.cols(); ++c) out(r) += compact(r, c) * center(c * p + s);
  }
  return out;
}

Matrix ProcessCovariance::base_columns(std::span<const Index> cells) const {
  const Index np = size();
  const Index pp = p();
  const Index d = static_cast<Index>(cells.size());
  Matrix phi_sel(d, phi.cols());
  Matrix psi_sel(d, compact.cols());
  Matrix us_sel(pp, d);
  for (Index j = 0; j < d; ++j) {
    const Index c = cells[static_cast<std::size_t>(j)];
    if (c < 0 || c >= np) throw InvalidInput("covariance column index out of range");
    phi_sel.row(j) = phi.row(c);
    psi_sel.row(j) = compact.row(c);
    us_sel.col(j) = var_US->col(c % pp);
  }
  Matrix out = phi * (var_M * phi_sel.transpose());
  const Matrix gram = compact * psi_sel.transpose();
  for (Index t = 0; t < n(); ++t) {
    out.middleRows(t * pp, pp) += gram.middleRows(t * pp, pp).cwiseProduct(us_sel);
  }
  return out;
}

Matrix ProcessCovariance::columns(std::span<const Index> cells) const {
  Matrix out = base_columns(cells);
  if (correction) {
    const auto& cr = *correction;
    Matrix rows(static_cast<Index>(cells.size()), cr.cross.cols());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      rows.row(static_cast<Index>(j)) = cr.cross.row(cells[j]);
    }
    out -= cr.cross * (cr.weight * rows.transpose());
  }
  return out;
}

Vector ProcessCovariance::diagonal() const {
  const Index pp = p();
  Vector out = (phi * var_M).cwiseProduct(phi).rowwise().sum();
  for (Index r = 0; r < size(); ++r) {
    const Index s = r % pp;
    out(r) += compact.row(r).squaredNorm() * (*var_US)(s, s);
  }
  if (correction) {
    out -= (correction->cross * correction->weight).cwiseProduct(correction->cross).rowwise().sum();
  }
  return out.cwiseMax(0.0);
}

Matrix ProcessCovariance::dense() const {
  std::vector<Index> all(static_cast<std::size_t>(size()));
  for (Index r = 0; r < size(); ++r) all[static_cast<std::size_t>(r)] = r;
  return symmetrize(columns(all));
}

Vector ProcessReconstruction::clamped_mean() const { return mean.cwiseMax(0.0).cwiseMin(1.0); }

ProcessReconstruction first_update_process(const Vector& x_star, const hier::Population& pop,
                                           const RealityProcessSpec& spec) {
  spec.validate();
  const Index np = spec.n() * spec.p();
  if (x_star.size() != np) {
    throw InvalidInput("first_update_process: x* has length " + std::to_string(x_star.size()) +
                       ", expected n*p = " + std::to_string(np));
  }
  if (!x_star.allFinite()) throw InvalidInput("first_update_process: x* is not finite");
  if (pop.mean.size() != spec.k() || pop.cov.rows() != spec.k() || pop.cov.cols() != spec.k()) {
    throw InvalidInput("first_update_process: population beliefs do not match the basis rank");
  }
  ProcessReconstruction rec;
  rec.cov.compact = basis::spline_values(spec.splines, x_star);
  rec.cov.phi = phi_star(spec, rec.cov.compact);
  rec.cov.var_M = symmetrize(pop.cov);
  rec.cov.var_US = spec.var_US;
  rec.cov.months = spec.n();
  rec.mean = rec.cov.phi * pop.mean + design_offset(spec, rec.cov.compact);
  rec.stage = Stage::kFirst;
  return rec;
}

std::vector<Index> build_H_Y(Index months, std::span<const GeoLocation> locations,
                             Index north_month, Index south_month) {
  if (north_month < 0 || north_month >= months || south_month < 0 || south_month >= months) {
    throw InvalidInput("build_H_Y: February/August month indices " + std::to_string(north_month) +
                       "/" + std::to_string(south_month) + " are not among the " +
                       std::to_string(months) + " months");
  }
  const Index p = static_cast<Index>(locations.size());
  std::vector<Index> cells(locations.size());
  for (Index s = 0; s < p; ++s) {
    const Index t = locations[static_cast<std::size_t>(s)].lat >= 0.0 ? north_month : south_month;
    cells[static_cast<std::size_t>(s)] = t * p + s;
  }
  return cells;
}

Matrix dense_selector(std::span<const Index> cells, Index size) {
  Matrix h = Matrix::Zero(static_cast<Index>(cells.size()), size);
  for (std::size_t i = 0; i < cells.size(); ++i) h(static_cast<Index>(i), cells[i]) = 1.0;
  return h;
}

void ExtentObservations::validate(Index p) const {
  if (indicator.size() != p) {
    throw InvalidInput("extent indicator has " + std::to_string(indicator.size()) +
                       " entries, expected " + std::to_string(p));
  }
  for (Index s = 0; s < p; ++s) {
    if (indicator(s) != 0.0 && indicator(s) != 1.0) {
      throw InvalidInput("extent indicator must be 0 or 1");
    }
  }
  if (!(sd_min > 0.0 && sd_max >= sd_min)) throw InvalidInput("extent sds must satisfy 0 < min <= max");
  if (!(length > 0.0)) throw InvalidInput("extent sd length scale must be positive");
  correlation.validate();
}

Vector boundary_distances(std::span<const GeoLocation> locations, const Vector& indicator) {
  const Index p = static_cast<Index>(locations.size());
  if (indicator.size() != p) throw InvalidInput("boundary_distances: indicator length");
  Vector out(p);
  parallel_for(0, locations.size(), [&](std::size_t si) {
    const Index s = static_cast<Index>(si);
    double best = std::numeric_limits<double>::infinity();
    for (Index o = 0; o < p; ++o) {
      if (indicator(o) != indicator(s)) {
        best = std::min(best, geodesic_dist(locations[si], locations[static_cast<std::size_t>(o)]));
      }
    }
    out(s) = 0.5 * best;
  });
  return out;
}

ExtentErrorModel extent_error_model(const ExtentObservations& obs,
                                    std::span<const GeoLocation> locations,
                                    const Vector& boundary_distance) {
  const Index p = static_cast<Index>(locations.size());
  if (boundary_distance.size() != p) throw InvalidInput("extent_error_model: distance length");
  if ((boundary_distance.array() < 0.0).any()) {
    throw InvalidInput("extent_error_model: distances must be non-negative");
  }
  ExtentErrorModel out;
  out.sd = (obs.sd_min + (obs.sd_max - obs.sd_min) *
                             (-boundary_distance.array() / obs.length).exp())
               .matrix();
  out.cor = basis::wendland_gram(locations, obs.correlation, obs.dist_scale) /
            obs.correlation.kappa2;
  return out;
}

ProcessReconstruction second_update_process(const ProcessReconstruction& rec,
                                            const std::vector<Index>& cells, const Vector& z,
                                            const ExtentErrorModel& err, double pinv_rel_tol,
                                            double condition_warning) {
  if (rec.stage != Stage::kFirst) {
    throw InvalidInput("second_update_process: reconstruction is not at the first stage");
  }
  const Index d = static_cast<Index>(cells.size());
  if (z.size() != d || err.sd.size() != d || err.cor.rows() != d) {
    throw InvalidInput("second_update_process: observation sizes disagree");
  }
  ProcessReconstruction out = rec;
  out.stage = Stage::kSecond;
  out.diagnostics = UpdateDiagnostics{};
  if (d == 0) return out;

  Correction cr;
  cr.cells = cells;
  cr.cross = rec.cov.columns(cells);
  cr.obs_cov = err.cov();
  Matrix var_z(d, d);
  Vector resid(d);
  for (Index i = 0; i < d; ++i) {
    var_z.row(i) = cr.cross.row(cells[static_cast<std::size_t>(i)]);
    resid(i) = z(i) - rec.mean(cells[static_cast<std::size_t>(i)]);
  }
  var_z = symmetrize(var_z + cr.obs_cov);
  const PinvWithCondition inv = pinv_with_condition(var_z, pinv_rel_tol);
  cr.weight = inv.inverse;
  out.mean += cr.cross * (cr.weight * resid);
  out.cov.correction = std::move(cr);
  out.diagnostics->condition_number = inv.condition;
  out.diagnostics->rank = inv.rank;
  out.diagnostics->ill_conditioned = !(inv.condition <= condition_warning);
  return out;
}

ProcessReconstruction second_update_process(const ProcessReconstruction& rec,
                                            const ExtentObservations& obs,
                                            std::span<const GeoLocation> locations,
                                            double pinv_rel_tol, double condition_warning) {
  const Index p = static_cast<Index>(locations.size());
  obs.validate(p);
  const auto cells = build_H_Y(rec.cov.n(), locations, obs.north_month, obs.south_month);
  const auto err = extent_error_model(obs, locations, boundary_distances(locations, obs.indicator));
  return second_update_process(rec, cells, obs.indicator, err, pinv_rel_tol, condition_warning);
}

void SicPipeline::prepare() {
  spec.validate();
  if (!extent) return;
  extent->validate(spec.p());
  cells = build_H_Y(spec.n(), spec.locations, extent->north_month, extent->south_month);
  error = extent_error_model(*extent, spec.locations,
                             boundary_distances(spec.locations, extent->indicator));
}

ProcessReconstruction SicPipeline::run(const Vector& x_star) const {
  ProcessReconstruction rec = first_update_process(x_star, pop, spec);
  if (!extent) return rec;
  if (!error) return second_update_process(rec, *extent, spec.locations);
  return second_update_process(rec, cells, extent->indicator, *error);
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

DrawStream::DrawStream(std::uint64_t seed, std::uint64_t draw) {
  std::uint64_t a = seed;
  std::uint64_t b = draw ^ 0xD1B54A32D192ED03ULL;
  state_ = splitmix64(a) ^ (splitmix64(b) * 0x9E3779B97F4A7C15ULL);
}

double DrawStream::uniform() {
  return static_cast<double>(splitmix64(state_) >> 11) * 0x1.0p-53;
}

Vector DrawStream::box(Index count, double bound) {
  Vector z(count);
  for (Index i = 0; i < count; ++i) z(i) = bound * (2.0 * uniform() - 1.0);
  return z;
}

namespace {

// Keeps a draw inside the box mean +- bound * sd.
void clamp_to_box(Vector& v, const Vector& mean, const Vector& sd, double bound) {
  v = v.cwiseMax(mean - bound * sd).cwiseMin(mean + bound * sd);
}

struct SstRoot {
  Matrix temporal;
  Matrix spatial;
};

SstRoot sst_root(const field::FieldReconstruction& sst) {
  SstRoot r;
  const Index n = sst.n();
  const double c = sst.var_temporal(0, 0);
  const bool constant =
      c >= 0.0 && (sst.var_temporal.array() - c).abs().maxCoeff() <= 1e-12 * std::max(c, 1e-300);
  // S S^T = c J with S = sqrt(c) J / sqrt(n).
  r.temporal = constant ? Matrix(Matrix::Constant(n, n, std::sqrt(c / static_cast<double>(n))))
                        : sym_sqrt(sst.var_temporal);
  r.spatial = sym_sqrt(psd_project(sst.var_spatial));
  return r;
}

}  // namespace

std::vector<PlausibleSample> sample_plausible(const field::FieldReconstruction& sst,
                                              const SicPipeline* sic, const SampleOptions& opt) {
  if (opt.count < 1) throw InvalidInput("sample_plausible: count must be at least 1");
  if (!(opt.bound >= 0.0) || !std::isfinite(opt.bound)) {
    throw InvalidInput("sample_plausible: bound must be finite and non-negative");
  }
  const Index np = sst.mean.size();
  const Vector sd_x = sst.marginal_variance().cwiseMax(0.0).cwiseSqrt();
  const SstRoot root_x = opt.scalar_z ? SstRoot{} : sst_root(sst);
  const KroneckerOp root_op{root_x.temporal, root_x.spatial};

  const Index k = sic ? sic->spec.k() : 0;
  const Index l = sic ? sic->spec.l() : 0;
  const Index p = sic ? sic->spec.p() : 0;
  Matrix root_M, root_S, root_W;
  if (sic && !opt.scalar_z) {
    root_M = sym_sqrt(psd_project(sic->pop.cov));
    root_S = sym_sqrt(psd_project(*sic->spec.var_US));
    if (sic->extent) {
      ExtentErrorModel err =
          sic->error ? *sic->error
                     : extent_error_model(*sic->extent, sic->spec.locations,
                                          boundary_distances(sic->spec.locations,
                                                             sic->extent->indicator));
      root_W = err.sd.asDiagonal() * sym_sqrt(psd_project(err.cor));
    }
  }

  std::vector<PlausibleSample> out(static_cast<std::size_t>(opt.count));
  parallel_for(0, out.size(), [&](std::size_t i) {
    PlausibleSample& s = out[i];
    s.seed = opt.seed;
    s.draw = static_cast<Index>(i);
    DrawStream stream(opt.seed, i);

    Vector zx;
    if (opt.scalar_z) {
      zx = stream.box(1, opt.bound);
      s.x_sample = sst.mean + zx(0) * sd_x;
    } else {
      zx = stream.box(np, opt.bound);
      s.x_sample = sst.mean + kron_matvec(root_op, zx);
      clamp_to_box(s.x_sample, sst.mean, sd_x, opt.bound);
    }

    if (!sic) {
      s.z_draws = zx;
      return;
    }
    const ProcessReconstruction rec = sic->run(s.x_sample);
    const Vector sd_y = rec.marginal_variance().cwiseMax(0.0).cwiseSqrt();
    Vector zy;
    if (opt.scalar_z) {
      zy = stream.box(1, opt.bound);
      s.y_sample = rec.mean + zy(0) * sd_y;
    } else {
      const Index d = rec.cov.correction ? static_cast<Index>(rec.cov.correction->cells.size()) : 0;
      zy = stream.box(k + l * p + d, opt.bound);
      // Draw through the first-stage root, then apply (I - K H) and the
      // observation-noise term so the draw has the adjusted covariance.
      Vector f = rec.cov.phi * (root_M * zy.head(k));
      Matrix u(p, l);
      for (Index c = 0; c < l; ++c) u.col(c) = root_S * zy.segment(k + c * p, p);
      for (Index r = 0; r < f.size(); ++r) f(r) += rec.cov.compact.row(r).dot(u.row(r % p));
      if (rec.cov.correction) {
        const auto& cr = *rec.cov.correction;
        Vector g = root_W * zy.tail(d);
        for (Index j = 0; j < d; ++j) g(j) += f(cr.cells[static_cast<std::size_t>(j)]);
        f -= cr.cross * (cr.weight * g);
      }
      s.y_sample = rec.mean + f;
      clamp_to_box(s.y_sample, rec.mean, sd_y, opt.bound);
    }
    s.y_sample = s.y_sample.cwiseMax(0.0).cwiseMin(1.0);
    s.z_draws.resize(zx.size() + zy.size());
    s.z_draws << zx, zy;
  });
  return out;
}

}  // namespace coex::process
