#include "coex/basis.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <string>

#include "coex/errors.hpp"
#include "coex/parallel.hpp"

namespace coex::basis {

void ISplineBasis::validate() const {
  if (order < 2) throw InvalidInput("I-spline order must be at least 2");
  if (!(std::isfinite(t_min) && std::isfinite(t_max) && t_min < t_max)) {
    throw InvalidInput("I-spline boundary must satisfy t_min < t_max");
  }
  double prev = t_min;
  for (double k : interior_knots) {
    if (!(k > prev) || !(k < t_max)) {
      throw InvalidInput("I-spline interior knots must be sorted and strictly inside the boundary");
    }
    prev = k;
  }
}

Index ISplineBasis::spline_count() const {
  return static_cast<Index>(interior_knots.size()) + order;
}

Index ISplineBasis::size() const { return spline_count() + (include_intercept ? 1 : 0); }

namespace {

// Knots for B-splines one order above the M-splines, clamped at both ends.
std::vector<double> integrated_knots(const ISplineBasis& b) {
  std::vector<double> u;
  const int reps = b.order + 1;
  u.reserve(b.interior_knots.size() + 2 * reps);
  u.insert(u.end(), reps, b.t_min);
  u.insert(u.end(), b.interior_knots.begin(), b.interior_knots.end());
  u.insert(u.end(), reps, b.t_max);
  return u;
}

}  // namespace

Vector ispline_eval(const ISplineBasis& b, double t) {
  b.validate();
  if (!std::isfinite(t)) throw InvalidInput("ispline_eval: temperature must be finite");
  const Index nspl = b.spline_count();
  const Index off = b.include_intercept ? 1 : 0;
  Vector out = Vector::Zero(b.size());
  if (b.include_intercept) out(0) = 1.0;
  if (t <= b.t_min) return out;
  if (t >= b.t_max) {
    out.tail(nspl).setOnes();
    return out;
  }

  const std::vector<double> u = integrated_knots(b);
  const int degree = b.order;  // B-splines of order k+1 have degree k
  const Index count = nspl + 1;  // number of order k+1 B-splines
  // Knot span with u[mu] <= t < u[mu+1].
  Index mu = degree;
  while (mu + 1 < count && u[mu + 1] <= t) ++mu;

  // Cox-de Boor: the degree+1 nonzero basis values N[mu-degree .. mu].
  std::vector<double> n(degree + 1, 0.0), left(degree + 1), right(degree + 1);
  n[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = t - u[mu + 1 - j];
    right[j] = u[mu + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }

  // I_i(t) = sum_{j > i} B_j(t).
  for (Index i = 0; i < nspl; ++i) {
    double acc = 0.0;
    if (i + 1 <= mu - degree) {
      acc = 1.0;
    } else {
      for (Index j = std::max<Index>(i + 1, mu - degree); j <= mu; ++j) acc += n[j - (mu - degree)];
    }
    out(off + i) = std::clamp(acc, 0.0, 1.0);
  }
  return out;
}

Matrix build_design(const ISplineBasis& b, std::span<const double> temps) {
  b.validate();
  Matrix out(static_cast<Index>(temps.size()), b.size());
  for (std::size_t s = 0; s < temps.size(); ++s) {
    out.row(static_cast<Index>(s)) = ispline_eval(b, temps[s]).transpose();
  }
  return out;
}

Matrix spline_values(const ISplineBasis& b, const Vector& field) {
  return build_design(b, std::span<const double>(field.data(), static_cast<std::size_t>(field.size())));
}

Matrix expand_design(const Matrix& compact, Index p) {
  if (p <= 0 || compact.rows() % p != 0) {
    throw InvalidInput("expand_design: row count is not a multiple of p");
  }
  const Index rows = compact.rows();
  const Index l = compact.cols();
  Matrix out = Matrix::Zero(rows, l * p);
  for (Index r = 0; r < rows; ++r) {
    const Index s = r % p;
    for (Index c = 0; c < l; ++c) out(r, c * p + s) = compact(r, c);
  }
  return out;
}

Vector fit_theta_hat(const Vector& response, const Matrix& compact, Index n, Index p) {
  if (n < 1) throw InvalidInput("fit_theta_hat: at least one month is required");
  if (response.size() != n * p || compact.rows() != n * p) {
    throw InvalidInput("fit_theta_hat: response/design size does not match n*p");
  }
  if (!response.allFinite()) throw InvalidInput("fit_theta_hat: response is not finite");
  const Index l = compact.cols();
  Vector theta(l * p);
  parallel_for(0, static_cast<std::size_t>(p), [&](std::size_t si) {
    const Index s = static_cast<Index>(si);
    Matrix design(n, l);
    Vector y(n);
    for (Index t = 0; t < n; ++t) {
      design.row(t) = compact.row(t * p + s);
      y(t) = response(t * p + s);
    }
    const Vector coef = pinv(design) * y;
    for (Index c = 0; c < l; ++c) theta(c * p + s) = coef(c);
  });
  return theta;
}

SpatialBasis pca_spatial_basis(std::span<const Vector> theta_hats, double energy) {
  const Index m = static_cast<Index>(theta_hats.size());
  if (m < 2) throw InvalidInput("pca_spatial_basis: at least two members are required");
  if (!(energy > 0.0 && energy <= 1.0)) {
    throw InvalidInput("pca_spatial_basis: energy must lie in (0, 1]");
  }
  const Index dim = theta_hats.front().size();
  const auto order = canonical_order(theta_hats);
  SpatialBasis out;
  out.center = canonical_mean(theta_hats);
  Matrix centred(m, dim);
  for (Index r = 0; r < m; ++r) {
    const Vector& v = theta_hats[order[static_cast<std::size_t>(r)]];
    if (v.size() != dim) throw InvalidInput("pca_spatial_basis: coefficient lengths differ");
    centred.row(r) = (v - out.center).transpose();
  }
  if (centred.cwiseAbs().maxCoeff() <=
      64.0 * std::numeric_limits<double>::epsilon() * out.center.cwiseAbs().maxCoeff()) {
    throw DegenerateEnsemble("pca_spatial_basis: all members are identical");
  }
  Eigen::BDCSVD<Matrix> svd(centred, Eigen::ComputeThinV);
  const Vector lambda = svd.singularValues().array().square() / static_cast<double>(m - 1);
  const double total = lambda.sum();
  if (!(total > 0.0)) throw DegenerateEnsemble("pca_spatial_basis: zero ensemble variance");

  const Index max_k = std::min<Index>(m - 1, dim);
  Index k = 0;
  double cum = 0.0;
  while (k < max_k) {
    cum += lambda(k);
    ++k;
    if (cum / total >= energy - 1e-12) break;
  }
  out.columns = svd.matrixV().leftCols(k);
  out.eigenvalues = lambda.head(k);
  out.retained_fraction = cum / total;
  // Fix the sign of each component so its largest entry is positive.
  for (Index j = 0; j < k; ++j) {
    Index arg = 0;
    out.columns.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.columns(arg, j) < 0.0) out.columns.col(j) *= -1.0;
  }
  return out;
}

void HeteroParams::validate() const {
  if (!(sigma2_min > 0.0 && sigma2_max >= sigma2_min)) {
    throw InvalidInput("heteroskedastic variance requires sigma2_max >= sigma2_min > 0");
  }
  if (!(width > 0.0)) throw InvalidInput("heteroskedastic variance width must be positive");
}

double hetero_residual_var(double t, const HeteroParams& params) {
  params.validate();
  const double z = (t - params.center) / params.width;
  return params.sigma2_min + (params.sigma2_max - params.sigma2_min) * std::exp(-0.5 * z * z);
}

void WendlandParams::validate() const {
  if (!(kappa2 > 0.0)) throw InvalidInput("Wendland kappa2 must be positive");
  if (!(c > 0.0)) throw InvalidInput("Wendland range c must be positive");
  if (!(tau >= 6.0)) throw InvalidInput("Wendland shape tau must be at least 6");
}

double wendland_from_distance(double d, const WendlandParams& w) {
  if (d >= w.c) return 0.0;
  const double r = d / w.c;
  const double poly = 1.0 + w.tau * r + (w.tau * w.tau - 1.0) / 3.0 * r * r;
  return w.kappa2 * poly * std::pow(1.0 - r, w.tau);
}

double wendland_cov(const GeoLocation& a, const GeoLocation& b, const WendlandParams& w,
                    double dist_scale) {
  w.validate();
  if (!(dist_scale > 0.0)) throw InvalidInput("distance scale must be positive");
  return wendland_from_distance(geodesic_dist(a, b) * dist_scale, w);
}

Matrix wendland_gram(std::span<const GeoLocation> locations, const WendlandParams& w,
                     double dist_scale) {
  w.validate();
  if (!(dist_scale > 0.0)) throw InvalidInput("distance scale must be positive");
  const Index p = static_cast<Index>(locations.size());
  Matrix out(p, p);
  parallel_for(0, static_cast<std::size_t>(p), [&](std::size_t i) {
    const Index r = static_cast<Index>(i);
    out(r, r) = w.kappa2;
    for (Index c = r + 1; c < p; ++c) {
      out(r, c) = wendland_from_distance(
          geodesic_dist(locations[i], locations[static_cast<std::size_t>(c)]) * dist_scale, w);
    }
  });
  for (Index r = 0; r < p; ++r) {
    for (Index c = r + 1; c < p; ++c) out(c, r) = out(r, c);
  }
  return out;
}

}  // namespace coex::basis
