#pragma once

// Bases for the dependent-field model: monotone I-splines in temperature,
// a principal-component basis over per-location spline coefficients, a
// heteroskedastic residual variance profile, and the C4-Wendland
// covariance on the sphere.
//
// Coefficient layout: a stacked coefficient vector of length l*p is indexed
// c*p + s (spline column c at location s), matching I_l ⊗ var[U_S].

#include <span>
#include <vector>

#include "coex/linalg.hpp"

namespace coex::basis {

struct ISplineBasis {
  int order = 3;  // order of the underlying M-splines (quadratic pieces)
  std::vector<double> interior_knots{-1.0, 1.0, 3.0};
  double t_min = -2.0;
  double t_max = 30.0;
  bool include_intercept = true;

  void validate() const;
  Index spline_count() const;  // I-spline columns, excluding the intercept
  Index size() const;          // l
};

/// Basis values at temperature t. The intercept (when enabled) is column 0.
/// Values are clamped: 0 below t_min, 1 above t_max.
Vector ispline_eval(const ISplineBasis& b, double t);

/// Row s holds ispline_eval at temps[s] (p x l).
Matrix build_design(const ISplineBasis& b, std::span<const double> temps);

/// Compact spline values for a time-major field of n*p temperatures:
/// row t*p + s holds the l basis values at that cell.
Matrix spline_values(const ISplineBasis& b, const Vector& field);

/// The full block-sparse design Psi(X) of size (n*p) x (l*p). Dense; for
/// small problems and test oracles only.
Matrix expand_design(const Matrix& compact, Index p);

/// Per-location least squares of the n monthly responses on the n design
/// rows at that location. Returns the stacked l*p coefficient vector.
Vector fit_theta_hat(const Vector& response, const Matrix& compact, Index n, Index p);

struct SpatialBasis {
  Matrix columns;      // (l*p) x k, orthonormal
  Vector eigenvalues;  // k, non-increasing
  Vector center;       // l*p ensemble mean of the coefficient vectors
  double retained_fraction = 0.0;

  Index rank() const { return columns.cols(); }
};

/// Principal components of the centred coefficient vectors, keeping the
/// smallest k whose cumulative variance reaches `energy`.
SpatialBasis pca_spatial_basis(std::span<const Vector> theta_hats, double energy);

struct HeteroParams {
  double sigma2_min = 1e-3;
  double sigma2_max = 2.5e-2;
  double center = 1.0;  // degC
  double width = 2.0;   // degC

  void validate() const;
};

/// sigma2_min + (sigma2_max - sigma2_min) exp(-(t - center)^2 / (2 width^2))
double hetero_residual_var(double t, const HeteroParams& params);

struct WendlandParams {
  double kappa2 = 1.61;
  double c = 0.92;
  double tau = 6.0;

  void validate() const;
};

/// Wendland covariance at distance d (same units as c).
double wendland_from_distance(double d, const WendlandParams& w);

double wendland_cov(const GeoLocation& a, const GeoLocation& b, const WendlandParams& w,
                    double dist_scale = 1.0);

Matrix wendland_gram(std::span<const GeoLocation> locations, const WendlandParams& w,
                     double dist_scale = 1.0);

}  // namespace coex::basis
