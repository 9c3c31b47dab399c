#pragma once

// Second-order (Bayes linear) belief adjustment.
//
// Beliefs are expectations and covariances only. Adjusting X by observed D
// projects X orthogonally onto span[1, D]:
//
//   E_D[X]   = E[X] + cov[X,D] var[D]^+ (d - E[D])
//   var_D[X] = var[X] - cov[X,D] var[D]^+ cov[D,X]
//
// with ^+ the Moore-Penrose inverse, so rank-deficient data are handled.

#include <span>
#include <variant>
#include <vector>

#include "coex/linalg.hpp"

namespace coex::bayes_linear {

using CovarianceOperator = std::variant<Matrix, KroneckerOp>;

Index dimension(const CovarianceOperator& cov);
Matrix materialize(const CovarianceOperator& cov);

struct BeliefStructure {
  Vector mean;
  CovarianceOperator cov;

  void validate(double tol = 1e-8) const;
};

struct JointBeliefs {
  Vector mean_x;
  Vector mean_d;
  Matrix cov_xx;
  Matrix cov_xd;
  Matrix cov_dd;

  Index dim_x() const { return mean_x.size(); }
  Index dim_d() const { return mean_d.size(); }

  void check_dimensions() const;
  // Smallest eigenvalue of the stacked joint covariance.
  double min_joint_eigenvalue() const;
};

struct AdjustmentResult {
  Vector adj_mean;
  Matrix adj_cov;
  Vector resolved_variance_fraction;
};

struct Tolerances {
  double pinv_rel = -1.0;     // negative: default_pinv_tol
  double psd = 1e-10;         // projection of adjusted variances
  double joint_psd = 1e-8;    // relative to the largest |eigenvalue|
};

Vector adjust_expectation(const JointBeliefs& jb, const Vector& d_obs,
                          const Tolerances& tol = {});

/// Throws InvalidBeliefs when the joint block matrix is not PSD within
/// tol.joint_psd. Result is symmetrised and PSD-projected.
Matrix adjust_variance(const JointBeliefs& jb, const Tolerances& tol = {});

/// Both adjustments sharing a single pseudo-inverse of var[D].
AdjustmentResult adjust(const JointBeliefs& jb, const Vector& d_obs,
                        const Tolerances& tol = {});

/// 1 - var_D[X]_kk / var[X]_kk, with 0/0 taken as 0.
Vector resolutions(const Matrix& prior_cov, const Matrix& adj_cov);

/// Second-order exchangeable collection X_i = M(X) + R_i(X), i = 1..m.
struct ExchangeableSpec {
  Index m = 0;
  Vector mean_M;
  Matrix cov_M;  // var[M(X)]
  Matrix cov_R;  // var[R_i(X)]

  Index dim() const { return mean_M.size(); }
  void validate() const;
};

/// cov[X_i, X_j] = cov_M + 1{i=j} cov_R, with 0-based indices.
Matrix build_exchangeable_cov(const ExchangeableSpec& spec, Index i, Index j);

/// The full (m*dim) x (m*dim) covariance of the stacked members.
Matrix assemble_exchangeable_cov(const ExchangeableSpec& spec);

/// Adjusts M(X) by the sample mean of the members, which is sufficient
/// for the full collection.
AdjustmentResult sample_mean_adjust(const ExchangeableSpec& spec,
                                    std::span<const Vector> members,
                                    const Tolerances& tol = {});

}  // namespace coex::bayes_linear
