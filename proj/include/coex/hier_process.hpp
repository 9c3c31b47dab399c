#pragma once

// Bayes linear hierarchical model over exchangeable groups.
//
//   Y_i  = Phi_i beta_i + R_i(Y)       group i, q_i responses, k coefficients
//   beta_i = M(beta) + R_i(beta)
//
// Groups are summarised by their least-squares projections beta_hat_i and the
// joint system B = (beta_1..beta_m, M(beta)) is adjusted by them. The dense
// path adjusts B by the stacked responses directly and serves as an oracle.

#include <optional>
#include <span>
#include <vector>

#include "coex/bayes_linear.hpp"
#include "coex/linalg.hpp"

namespace coex::hier {

struct GroupData {
  Matrix design;        // Phi_i, q x k
  Vector response;      // Y_i, q
  Vector residual_var;  // diagonal of var[R_i(Y)], q

  Index q() const { return design.rows(); }
  Index k() const { return design.cols(); }
  void validate() const;
};

struct HierPrior {
  Vector mean_Mbeta;
  Matrix var_Mbeta;
  Matrix var_Rbeta;
  std::optional<Vector> lambda;  // marginal var[beta_i] when built from PCA

  Index k() const { return mean_Mbeta.size(); }
  void validate(double tol = 1e-10) const;

  /// var[M] = lambda / (1 + alpha2), var[R] = alpha2 lambda / (1 + alpha2),
  /// so that var[beta_i] = diag(lambda).
  static HierPrior from_eigenvalues(const Vector& lambda, double alpha2, const Vector& mean);
};

struct BetaHat {
  Vector beta;
  double residual_norm = 0.0;
};

/// beta_hat = (Phi^T Phi)^+ Phi^T Y and ||Y - Phi beta_hat||.
BetaHat project_beta_hat(const GroupData& g);

struct BetaHatSet {
  std::vector<Vector> beta_hats;
  std::vector<double> projection_residual_norms;

  Index m() const { return static_cast<Index>(beta_hats.size()); }
};

BetaHatSet project_all(std::span<const GroupData> groups);

/// var[R_i(beta_hat)] = Phi^+ var[R_i(Y)] Phi^+T, k x k.
Matrix residual_projection(const GroupData& g);
std::vector<Matrix> residual_projections(std::span<const GroupData> groups);

struct ProjectionReport {
  double max_discrepancy = 0.0;    // max_i ||P_i - P_1||_F
  double residual_coupling = 0.0;  // max_i ||(I - P_i) V_i P_i||_F
  double tol = 0.0;
  bool passed = false;             // max_discrepancy <= tol
  std::vector<double> discrepancies;
  std::vector<double> couplings;
};

/// Compares the column spaces of the designs through their orthonormal
/// bases, so no q x q projector is formed. The residual coupling is zero
/// when var[R_i(Y)] maps col(Phi_i) into itself (isotropic residuals, say),
/// which together with equal column spaces makes beta_hat sufficient.
ProjectionReport check_projection_invariance(std::span<const GroupData> groups, double tol);

struct AdjustedHierarchy {
  Index m = 0;
  Index k = 0;
  Vector adj_mean_B;  // (beta_1..beta_m, M(beta))
  Matrix adj_var_B;
  Vector prior_mean_B;
  Matrix prior_var_B;

  Vector beta_mean(Index i) const { return adj_mean_B.segment(i * k, k); }
  Matrix beta_cov(Index i) const { return adj_var_B.block(i * k, i * k, k, k); }
};

/// Prior mean and covariance of B implied by the exchangeable structure.
void prior_of_B(const HierPrior& prior, Index m, Vector& mean, Matrix& cov);

/// Adjusts B by the beta_hat_i. Groups are processed in a canonical order
/// and the result is mapped back, so relabelling groups permutes the beta
/// blocks and leaves the M(beta) block bit-for-bit unchanged.
AdjustedHierarchy adjust_hierarchy(const BetaHatSet& bh, const HierPrior& prior,
                                   std::span<const Matrix> resid_projections,
                                   const bayes_linear::Tolerances& tol = {});

/// Adjusts B by (Y_1..Y_m, 0_km), every quantity written as a linear map of
/// the uncorrelated primitives M(beta), R_i(beta), R_i(Y). The pseudo-data
/// rows carry zero variance and drop out of the pseudo-inverse.
AdjustedHierarchy adjust_hierarchy_dense(std::span<const GroupData> groups, const HierPrior& prior,
                                         const bayes_linear::Tolerances& tol = {});

struct Population {
  Vector mean;
  Matrix cov;
};

Population extract_population(const AdjustedHierarchy& adj);

}  // namespace coex::hier
