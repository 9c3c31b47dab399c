#include "coex/hier_process.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coex/errors.hpp"
#include "coex/parallel.hpp"

namespace coex::hier {

void GroupData::validate() const {
  if (design.rows() == 0 || design.cols() == 0) throw InvalidInput("group design is empty");
  if (response.size() != design.rows() || residual_var.size() != design.rows()) {
    throw InvalidInput("group response/residual length does not match the design rows");
  }
  if (!design.allFinite() || !response.allFinite()) {
    throw InvalidInput("group design or response is not finite");
  }
  if (!residual_var.allFinite() || (residual_var.array() <= 0.0).any()) {
    throw InvalidInput("group residual variances must be positive");
  }
}

void HierPrior::validate(double tol) const {
  const Index kk = k();
  if (var_Mbeta.rows() != kk || var_Mbeta.cols() != kk || var_Rbeta.rows() != kk ||
      var_Rbeta.cols() != kk) {
    throw InvalidInput("hierarchy prior: covariance dimensions disagree with the mean");
  }
  if (lambda && lambda->size() != kk) throw InvalidInput("hierarchy prior: lambda length");
  bayes_linear::BeliefStructure{mean_Mbeta, var_Mbeta}.validate(tol);
  bayes_linear::BeliefStructure{mean_Mbeta, var_Rbeta}.validate(tol);
}

HierPrior HierPrior::from_eigenvalues(const Vector& lambda, double alpha2, const Vector& mean) {
  if (!(alpha2 > 0.0)) throw InvalidInput("alpha2 must be positive");
  if (lambda.size() != mean.size()) throw InvalidInput("lambda and mean lengths differ");
  if ((lambda.array() < 0.0).any()) throw InvalidInput("eigenvalues must be non-negative");
  HierPrior p;
  p.mean_Mbeta = mean;
  const Vector vm = lambda / (1.0 + alpha2);
  p.var_Mbeta = vm.asDiagonal();
  p.var_Rbeta = (alpha2 * vm).asDiagonal();
  p.lambda = lambda;
  return p;
}

BetaHat project_beta_hat(const GroupData& g) {
  g.validate();
  if (g.design.cwiseAbs().maxCoeff() == 0.0) throw InvalidInput("group design is all zero");
  BetaHat out;
  out.beta = pinv(g.design) * g.response;
  out.residual_norm = (g.response - g.design * out.beta).norm();
  return out;
}

BetaHatSet project_all(std::span<const GroupData> groups) {
  BetaHatSet out;
  out.beta_hats.resize(groups.size());
  out.projection_residual_norms.resize(groups.size());
  parallel_for(0, groups.size(), [&](std::size_t i) {
    BetaHat b = project_beta_hat(groups[i]);
    out.beta_hats[i] = std::move(b.beta);
    out.projection_residual_norms[i] = b.residual_norm;
  });
  return out;
}

Matrix residual_projection(const GroupData& g) {
  g.validate();
  const Matrix pp = pinv(g.design);
  return symmetrize(pp * g.residual_var.asDiagonal() * pp.transpose());
}

std::vector<Matrix> residual_projections(std::span<const GroupData> groups) {
  std::vector<Matrix> out(groups.size());
  parallel_for(0, groups.size(), [&](std::size_t i) { out[i] = residual_projection(groups[i]); });
  return out;
}

namespace {

Matrix orthonormal_basis(const Matrix& a) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return Matrix(a.rows(), 0);
  const double cut = default_pinv_tol(a.rows(), a.cols()) * s(0);
  Index r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  return svd.matrixU().leftCols(r);
}

// Stacks the keys that identify a group so that sorting them gives an
// order independent of the input labelling.
std::vector<std::size_t> group_order(const std::vector<Vector>& keys) {
  return canonical_order(std::span<const Vector>(keys));
}

}  // namespace

ProjectionReport check_projection_invariance(std::span<const GroupData> groups, double tol) {
  if (groups.size() < 2) throw InvalidInput("projection invariance needs at least two groups");
  ProjectionReport rep;
  rep.tol = tol;
  std::vector<Matrix> bases(groups.size());
  std::vector<double> coupling(groups.size(), 0.0);
  parallel_for(0, groups.size(), [&](std::size_t i) {
    groups[i].validate();
    bases[i] = orthonormal_basis(groups[i].design);
    const Matrix vq = groups[i].residual_var.asDiagonal() * bases[i];
    coupling[i] = (vq - bases[i] * (bases[i].transpose() * vq)).norm();
  });
  const Matrix& q1 = bases.front();
  rep.discrepancies.resize(groups.size(), 0.0);
  for (std::size_t i = 1; i < groups.size(); ++i) {
    if (groups[i].q() != groups[0].q()) {
      throw InvalidInput("projection invariance: groups have different response lengths");
    }
    // ||P_i - P_1||_F^2 = ||(I - P_1) Q_i||^2 + ||(I - P_i) Q_1||^2; the
    // trace form r_i + r_1 - 2||Q_1^T Q_i||^2 cancels to ~1e-8 after the sqrt
    const Matrix& qi = bases[i];
    const double a = (qi - q1 * (q1.transpose() * qi)).squaredNorm();
    const double b = (q1 - qi * (qi.transpose() * q1)).squaredNorm();
    rep.discrepancies[i] = std::sqrt(a + b);
  }
  rep.max_discrepancy = *std::max_element(rep.discrepancies.begin(), rep.discrepancies.end());
  rep.residual_coupling = *std::max_element(coupling.begin(), coupling.end());
  rep.couplings = std::move(coupling);
  rep.passed = rep.max_discrepancy <= tol;
  return rep;
}

void prior_of_B(const HierPrior& prior, Index m, Vector& mean, Matrix& cov) {
  const Index k = prior.k();
  mean.resize((m + 1) * k);
  cov.resize((m + 1) * k, (m + 1) * k);
  for (Index i = 0; i <= m; ++i) {
    mean.segment(i * k, k) = prior.mean_Mbeta;
    for (Index j = 0; j <= m; ++j) {
      cov.block(i * k, j * k, k, k) = prior.var_Mbeta;
      if (i == j && i < m) cov.block(i * k, j * k, k, k) += prior.var_Rbeta;
    }
  }
}

namespace {

// Maps a result computed on canonically ordered groups back to the caller's
// labelling: sorted block r belongs to group order[r].
AdjustedHierarchy unpermute(const AdjustedHierarchy& sorted, const std::vector<std::size_t>& order) {
  const Index m = sorted.m;
  const Index k = sorted.k;
  std::vector<Index> where(static_cast<std::size_t>(m + 1));
  for (Index r = 0; r < m; ++r) where[static_cast<std::size_t>(r)] = static_cast<Index>(order[r]);
  where[static_cast<std::size_t>(m)] = m;
  AdjustedHierarchy out = sorted;
  for (Index r = 0; r <= m; ++r) {
    const Index a = where[static_cast<std::size_t>(r)];
    out.adj_mean_B.segment(a * k, k) = sorted.adj_mean_B.segment(r * k, k);
    for (Index c = 0; c <= m; ++c) {
      const Index b = where[static_cast<std::size_t>(c)];
      out.adj_var_B.block(a * k, b * k, k, k) = sorted.adj_var_B.block(r * k, c * k, k, k);
    }
  }
  return out;
}

}  // namespace

AdjustedHierarchy adjust_hierarchy(const BetaHatSet& bh, const HierPrior& prior,
                                   std::span<const Matrix> resid_projections,
                                   const bayes_linear::Tolerances& tol) {
  prior.validate();
  const Index m = bh.m();
  const Index k = prior.k();
  if (m < 1) throw InvalidInput("adjust_hierarchy: no groups");
  if (static_cast<Index>(resid_projections.size()) != m) {
    throw InvalidInput("adjust_hierarchy: one residual projection per group is required");
  }
  std::vector<Vector> keys(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const auto& b = bh.beta_hats[static_cast<std::size_t>(i)];
    const auto& r = resid_projections[static_cast<std::size_t>(i)];
    if (b.size() != k || r.rows() != k || r.cols() != k) {
      throw InvalidInput("adjust_hierarchy: group " + std::to_string(i) +
                         " does not have k = " + std::to_string(k) + " coefficients");
    }
    if (!b.allFinite() || !r.allFinite()) throw InvalidInput("adjust_hierarchy: non-finite input");
    Vector key(k + k * k);
    key << b, r.reshaped();
    keys[static_cast<std::size_t>(i)] = std::move(key);
  }
  const auto order = group_order(keys);

  AdjustedHierarchy sorted;
  sorted.m = m;
  sorted.k = k;
  prior_of_B(prior, m, sorted.prior_mean_B, sorted.prior_var_B);

  bayes_linear::JointBeliefs jb;
  jb.mean_x = sorted.prior_mean_B;
  jb.cov_xx = sorted.prior_var_B;
  jb.mean_d = sorted.prior_mean_B.head(m * k);
  // beta_hat_i = beta_i + R_i(beta_hat), the residual uncorrelated with B.
  jb.cov_xd = sorted.prior_var_B.leftCols(m * k);
  jb.cov_dd = sorted.prior_var_B.topLeftCorner(m * k, m * k);
  Vector d(m * k);
  for (Index r = 0; r < m; ++r) {
    const std::size_t g = order[static_cast<std::size_t>(r)];
    jb.cov_dd.block(r * k, r * k, k, k) += resid_projections[g];
    d.segment(r * k, k) = bh.beta_hats[g];
  }
  const auto res = bayes_linear::adjust(jb, d, tol);
  sorted.adj_mean_B = res.adj_mean;
  sorted.adj_var_B = res.adj_cov;
  return unpermute(sorted, order);
}

AdjustedHierarchy adjust_hierarchy_dense(std::span<const GroupData> groups, const HierPrior& prior,
                                         const bayes_linear::Tolerances& tol) {
  prior.validate();
  const Index m = static_cast<Index>(groups.size());
  const Index k = prior.k();
  if (m < 1) throw InvalidInput("adjust_hierarchy_dense: no groups");
  std::vector<Vector> keys(groups.size());
  Index qtot = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    g.validate();
    if (g.k() != k) throw InvalidInput("adjust_hierarchy_dense: design width differs from k");
    Vector key(g.q() * (k + 2));
    key << g.response, g.design.reshaped(), g.residual_var;
    keys[i] = std::move(key);
    qtot += g.q();
  }
  const auto order = group_order(keys);

  // Primitives xi = (M, R_1(beta)..R_m(beta), R_1(Y)..R_m(Y)), uncorrelated.
  const Index nxi = (m + 1) * k + qtot;
  Vector mean_xi = Vector::Zero(nxi);
  mean_xi.head(k) = prior.mean_Mbeta;
  Matrix var_xi = Matrix::Zero(nxi, nxi);
  var_xi.topLeftCorner(k, k) = prior.var_Mbeta;
  for (Index i = 0; i < m; ++i) var_xi.block((i + 1) * k, (i + 1) * k, k, k) = prior.var_Rbeta;

  const Index nb = (m + 1) * k;
  const Index nd = qtot + m * k;
  Matrix a_b = Matrix::Zero(nb, nxi);
  Matrix a_d = Matrix::Zero(nd, nxi);
  Vector d = Vector::Zero(nd);
  Index row = 0;
  Index yoff = (m + 1) * k;
  for (Index r = 0; r < m; ++r) {
    const auto& g = groups[order[static_cast<std::size_t>(r)]];
    const Index q = g.q();
    a_b.block(r * k, 0, k, k).setIdentity();
    a_b.block(r * k, (r + 1) * k, k, k).setIdentity();
    // Y_i = Phi_i M + Phi_i R_i(beta) + R_i(Y)
    a_d.block(row, 0, q, k) = g.design;
    a_d.block(row, (r + 1) * k, q, k) = g.design;
    a_d.block(row, yoff, q, q).setIdentity();
    var_xi.block(yoff, yoff, q, q) = g.residual_var.asDiagonal();
    d.segment(row, q) = g.response;
    row += q;
    yoff += q;
  }
  a_b.block(m * k, 0, k, k).setIdentity();
  // 0 = beta_i - M - R_i(beta): identically zero rows.
  for (Index r = 0; r < m; ++r) {
    a_d.block(row + r * k, 0, k, nxi) = a_b.block(r * k, 0, k, nxi) - a_b.block(m * k, 0, k, nxi);
    a_d.block(row + r * k, (r + 1) * k, k, k) -= Matrix::Identity(k, k);
  }

  AdjustedHierarchy sorted;
  sorted.m = m;
  sorted.k = k;
  prior_of_B(prior, m, sorted.prior_mean_B, sorted.prior_var_B);
  bayes_linear::JointBeliefs jb;
  jb.mean_x = a_b * mean_xi;
  jb.mean_d = a_d * mean_xi;
  jb.cov_xx = symmetrize(a_b * var_xi * a_b.transpose());
  jb.cov_xd = a_b * var_xi * a_d.transpose();
  jb.cov_dd = symmetrize(a_d * var_xi * a_d.transpose());
  const auto res = bayes_linear::adjust(jb, d, tol);
  sorted.adj_mean_B = res.adj_mean;
  sorted.adj_var_B = res.adj_cov;
  return unpermute(sorted, order);
}

Population extract_population(const AdjustedHierarchy& adj) {
  const Index off = adj.m * adj.k;
  if (adj.adj_mean_B.size() != off + adj.k) {
    throw InvalidInput("extract_population: adjusted hierarchy has inconsistent size");
  }
  return Population{adj.adj_mean_B.tail(adj.k), adj.adj_var_B.bottomRightCorner(adj.k, adj.k)};
}

}  // namespace coex::hier
