#include "coex/coex_field.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <string>

#include "coex/errors.hpp"

namespace coex::field {

void FieldEnsemble::validate(Index min_members) const {
  if (m() < min_members) {
    throw InvalidInput("field ensemble needs at least " + std::to_string(min_members) +
                       " members, got " + std::to_string(m()));
  }
  if (months < 1 || locations.empty()) throw InvalidInput("field ensemble has no cells");
  if (!labels.empty() && static_cast<Index>(labels.size()) != m()) {
    throw InvalidInput("field ensemble: label count does not match member count");
  }
  for (const auto& x : members) {
    if (x.size() != months * p()) {
      throw InvalidInput("field ensemble: member length " + std::to_string(x.size()) +
                         " does not match n*p = " + std::to_string(months * p()));
    }
    if (!x.allFinite()) throw InvalidInput("field ensemble: non-finite member values");
  }
}

std::vector<ObservationWeights> ObservationSet::weights() const {
  std::vector<ObservationWeights> out;
  out.reserve(items.size());
  for (const auto& o : items) out.push_back(o.weights);
  return out;
}

Vector ObservationSet::values() const {
  Vector v(static_cast<Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) v(static_cast<Index>(i)) = items[i].value;
  return v;
}

void ObservationSet::validate(Index n, Index p) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& o = items[i];
    const std::string tag = "observation " + std::to_string(i);
    if (!std::isfinite(o.value) || !std::isfinite(o.bias_mean)) {
      throw InvalidInput(tag + ": value and bias must be finite");
    }
    if (!(o.sd > 0.0) || !std::isfinite(o.sd)) throw InvalidInput(tag + ": sd must be positive");
    if (o.weights.time.size() != n) throw InvalidInput(tag + ": time weights have wrong length");
    if ((o.weights.time.array() < 0.0).any() || std::abs(o.weights.time.sum() - 1.0) > 1e-12) {
      throw InvalidInput(tag + ": time weights must be non-negative and sum to 1");
    }
    const auto& sw = o.weights.space;
    if (sw.index.empty() || sw.index.size() != sw.weight.size()) {
      throw InvalidInput(tag + ": spatial weights are empty or malformed");
    }
    for (std::size_t k = 0; k < sw.size(); ++k) {
      if (sw.index[k] < 0 || sw.index[k] >= p || sw.weight[k] < 0.0) {
        throw InvalidInput(tag + ": spatial weight out of range");
      }
    }
    if (std::abs(sw.sum() - 1.0) > 1e-12) {
      throw InvalidInput(tag + ": spatial weights must sum to 1");
    }
  }
}

Vector ensemble_mean(const FieldEnsemble& e) {
  e.validate(1);
  return canonical_mean(e.members);
}

Matrix empirical_covariance(const FieldEnsemble& e) {
  e.validate(2);
  const Vector mean = canonical_mean(e.members);
  const auto order = canonical_order(e.members);
  Matrix anomalies(mean.size(), e.m());
  for (Index j = 0; j < e.m(); ++j) anomalies.col(j) = e.members[order[j]] - mean;
  return symmetrize(anomalies * anomalies.transpose() / static_cast<double>(e.m() - 1));
}

KroneckerOp estimate_var_MX(const FieldEnsemble& e, double alpha2) {
  e.validate(2);
  if (!(alpha2 > 0.0)) throw InvalidInput("alpha2 must be positive");
  const Index n = e.n();
  const Index p = e.p();
  const Vector mean = canonical_mean(e.members);
  const auto order = canonical_order(e.members);
  Matrix averaged(p, e.m());
  for (Index j = 0; j < e.m(); ++j) {
    const Vector anomaly = e.members[order[j]] - mean;
    averaged.col(j) = Eigen::Map<const Matrix>(anomaly.data(), p, n).rowwise().mean();
  }
  // rounding in the mean leaves ~1 ulp of anomaly when every member agrees
  const double scale = mean.size() ? mean.cwiseAbs().maxCoeff() : 0.0;
  if (averaged.cwiseAbs().maxCoeff() <= 64.0 * std::numeric_limits<double>::epsilon() * scale) {
    throw DegenerateEnsemble("estimate_var_MX: ensemble has zero variance");
  }
  Matrix spatial = symmetrize(averaged * averaged.transpose()) / static_cast<double>(e.m() - 1);
  return KroneckerOp{ones(n), spatial / (1.0 + alpha2)};
}

KroneckerOp estimate_var_MX_unconstrained(const FieldEnsemble& e, double alpha2) {
  if (!(alpha2 > 0.0)) throw InvalidInput("alpha2 must be positive");
  const Matrix s = empirical_covariance(e);
  const double scale = ensemble_mean(e).cwiseAbs().maxCoeff();
  const double eps = 64.0 * std::numeric_limits<double>::epsilon() * scale;
  if (s.cwiseAbs().maxCoeff() <= eps * eps) {
    throw DegenerateEnsemble("estimate_var_MX: ensemble has zero variance");
  }
  KronFactors f = nearest_kron_psd(s, e.n(), e.p());
  return KroneckerOp{f.temporal, f.spatial / (1.0 + alpha2)};
}

double ensemble_shrinkage(double alpha2, Index m) {
  if (!(alpha2 > 0.0) || m < 1) throw InvalidInput("ensemble_shrinkage: invalid arguments");
  return alpha2 / (static_cast<double>(m) + alpha2);
}

FieldReconstruction first_update_field(const EnsembleSummary& summary,
                                       std::span<const GeoLocation> locations,
                                       const CoexFieldSpec& spec) {
  const Index p = static_cast<Index>(locations.size());
  const Index n = spec.var_mean.temporal.rows();
  if (spec.var_mean.spatial.rows() != p || spec.var_mean.spatial.cols() != p ||
      spec.var_mean.temporal.cols() != n) {
    throw InvalidInput("first_update_field: var[M(X)] factors do not match the grid");
  }
  if (summary.mean.size() != n * p) {
    throw InvalidInput("first_update_field: ensemble mean has length " +
                       std::to_string(summary.mean.size()) + ", expected " +
                       std::to_string(n * p));
  }
  if (spec.discrepancy_mean.size() != 0 && spec.discrepancy_mean.size() != n * p) {
    throw InvalidInput("first_update_field: discrepancy mean has the wrong length");
  }
  FieldReconstruction rec;
  rec.mean = summary.mean;
  if (spec.discrepancy_mean.size() != 0) rec.mean += spec.discrepancy_mean;
  rec.var_temporal = spec.var_mean.temporal;
  rec.var_spatial = ensemble_shrinkage(spec.alpha2, summary.m) * spec.var_mean.spatial +
                    basis::wendland_gram(locations, spec.discrepancy, spec.dist_scale);
  rec.var_spatial = symmetrize(rec.var_spatial);
  rec.stage = Stage::kEnsembleAdjusted;
  return rec;
}

FieldReconstruction first_update_field(const FieldEnsemble& e, const CoexFieldSpec& spec) {
  e.validate(1);
  return first_update_field(EnsembleSummary{ensemble_mean(e), e.m()}, e.locations, spec);
}

Vector annual_weights(Index n) {
  if (n < 1) throw InvalidInput("annual_weights: n must be positive");
  return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

Vector summer_weights(Index n, bool northern) {
  if (n != 12) throw InvalidInput("summer weights require 12 monthly slices");
  Vector w = Vector::Zero(n);
  const Index first = northern ? 6 : 0;  // Jul-Sep or Jan-Mar
  w.segment(first, 3).setConstant(1.0 / 3.0);
  return w;
}

SparseWeights interpolation_weights(const GeoLocation& where, std::span<const GeoLocation> grid,
                                    int neighbours) {
  if (grid.empty()) throw InvalidInput("interpolation_weights: empty grid");
  if (neighbours < 1) throw InvalidInput("interpolation_weights: neighbours must be positive");
  std::vector<std::pair<double, Index>> dist(grid.size());
  for (std::size_t s = 0; s < grid.size(); ++s) {
    dist[s] = {geodesic_dist(where, grid[s]), static_cast<Index>(s)};
  }
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(neighbours), grid.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  SparseWeights out;
  if (dist.front().first < 1e-12) {
    out.index.push_back(dist.front().second);
    out.weight.push_back(1.0);
    return out;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += 1.0 / dist[i].first;
  for (std::size_t i = 0; i < k; ++i) {
    out.index.push_back(dist[i].second);
    out.weight.push_back((1.0 / dist[i].first) / total);
  }
  return out;
}

ObservationSet add_pseudo_observations(const ObservationSet& obs, const PseudoObsConfig& config,
                                       std::span<const GeoLocation> grid, Index n) {
  ObservationSet out = obs;
  if (config.count_per_pole <= 0) return out;
  if (!(config.sd > 0.0)) throw InvalidInput("pseudo-observation sd must be positive");
  const Vector annual = annual_weights(n);
  for (double lat : {config.latitude, -config.latitude}) {
    for (int k = 0; k < config.count_per_pole; ++k) {
      Observation o;
      o.location = make_location(lat, -180.0 + 360.0 * k / config.count_per_pole);
      o.value = config.value;
      o.sd = config.sd;
      o.weights.time = annual;
      o.weights.space = interpolation_weights(o.location, grid);
      o.pseudo = true;
      out.items.push_back(std::move(o));
    }
  }
  return out;
}

bool NordicRule::contains(const GeoLocation& loc) const {
  return loc.lat > lat_min && loc.lon >= lon_min && loc.lon <= lon_max;
}

ErrorModel build_error_model(const ObservationSet& obs) {
  const Index d = static_cast<Index>(obs.size());
  ErrorModel out;
  out.bias_mean.resize(d);
  Vector sd(d);
  for (Index i = 0; i < d; ++i) {
    const auto& o = obs.items[static_cast<std::size_t>(i)];
    if (!(o.sd > 0.0)) {
      throw InvalidInput("observation " + std::to_string(i) + " has non-positive sd");
    }
    sd(i) = o.sd;
    out.bias_mean(i) = o.bias_mean;
  }
  Matrix core = Matrix::Identity(d, d);
  for (Index i = 0; i < d; ++i) {
    const auto& bi = obs.items[static_cast<std::size_t>(i)].bias_block;
    if (!bi) continue;
    for (Index j = 0; j < d; ++j) {
      const auto& bj = obs.items[static_cast<std::size_t>(j)].bias_block;
      if (i != j && bj && *bi == *bj) core(i, j) = 1.0;
    }
  }
  out.cov = sd.asDiagonal() * core * sd.asDiagonal();
  return out;
}

FieldReconstruction second_update_field(const FieldReconstruction& rec, const ObservationSet& obs,
                                        double pinv_rel_tol, double condition_warning) {
  if (rec.stage != Stage::kEnsembleAdjusted) {
    throw InvalidInput("second_update_field: reconstruction is not at the ensemble stage");
  }
  const Index n = rec.n();
  const Index p = rec.p();
  if (rec.mean.size() != n * p) throw InvalidInput("second_update_field: mean length mismatch");
  FieldReconstruction out = rec;
  out.stage = Stage::kDataAdjusted;
  out.diagnostics = UpdateDiagnostics{};
  if (obs.empty()) return out;
  obs.validate(n, p);

  const double c = rec.var_temporal(0, 0);
  const double scale = std::max(std::abs(c), 1e-300);
  if (c < 0.0 || (rec.var_temporal.array() - c).abs().maxCoeff() > 1e-12 * scale) {
    throw InvalidInput("second_update_field: the temporal factor must be a constant matrix");
  }

  const auto weights = obs.weights();
  const Index d = static_cast<Index>(weights.size());
  const ErrorModel err = build_error_model(obs);
  const Matrix var_z = kron_quadform(rec.covariance(), weights) + err.cov;
  const PinvWithCondition inv = pinv_with_condition(var_z, pinv_rel_tol);

  Vector resid(d);
  for (Index i = 0; i < d; ++i) {
    const auto& w = weights[static_cast<std::size_t>(i)];
    double fitted = 0.0;
    for (Index t = 0; t < n; ++t) {
      if (w.time(t) == 0.0) continue;
      double at_t = 0.0;
      for (std::size_t k = 0; k < w.space.size(); ++k) {
        at_t += w.space.weight[k] * rec.mean(t * p + w.space.index[k]);
      }
      fitted += w.time(t) * at_t;
    }
    resid(i) = obs.items[static_cast<std::size_t>(i)].value - fitted - err.bias_mean(i);
  }

  const Matrix cross = spatial_cross(rec.var_spatial, weights);  // p x d
  const Matrix gain = c * (cross * inv.inverse);                 // p x d
  const Vector increment = gain * resid;
  for (Index t = 0; t < n; ++t) out.mean.segment(t * p, p) += increment;
  out.var_spatial = symmetrize(rec.var_spatial - gain * cross.transpose());

  out.diagnostics->condition_number = inv.condition;
  out.diagnostics->rank = inv.rank;
  out.diagnostics->ill_conditioned = !(inv.condition <= condition_warning);
  return out;
}

Matrix dense_observation_operator(std::span<const ObservationWeights> obs, Index n, Index p) {
  Matrix h = Matrix::Zero(static_cast<Index>(obs.size()), n * p);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& w = obs[i];
    for (Index t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < w.space.size(); ++k) {
        h(static_cast<Index>(i), t * p + w.space.index[k]) += w.time(t) * w.space.weight[k];
      }
    }
  }
  return h;
}

}  // namespace coex::field
