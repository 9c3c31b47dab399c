#include "coex/bayes_linear.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coex/errors.hpp"

namespace coex::bayes_linear {

Index dimension(const CovarianceOperator& cov) {
  return std::visit([](const auto& c) -> Index { return c.rows(); }, cov);
}

Matrix materialize(const CovarianceOperator& cov) {
  if (const auto* dense = std::get_if<Matrix>(&cov)) return *dense;
  return std::get<KroneckerOp>(cov).dense();
}

void BeliefStructure::validate(double tol) const {
  if (dimension(cov) != mean.size()) {
    throw InvalidInput("belief structure: mean length does not match covariance");
  }
  auto check_psd = [tol](const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) throw InvalidInput(std::string(what) + " is not square");
    if (m.size() == 0) return;
    if ((m - m.transpose()).cwiseAbs().maxCoeff() >
        tol * std::max(1.0, m.cwiseAbs().maxCoeff())) {
      throw InvalidBeliefs(std::string(what) + " is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -tol * scale) {
      throw InvalidBeliefs(std::string(what) + " is not positive semi-definite");
    }
  };
  if (const auto* dense = std::get_if<Matrix>(&cov)) {
    check_psd(*dense, "covariance");
  } else {
    const auto& k = std::get<KroneckerOp>(cov);
    check_psd(k.temporal, "temporal factor");
    check_psd(k.spatial, "spatial factor");
  }
}

void JointBeliefs::check_dimensions() const {
  const Index nx = mean_x.size();
  const Index nd = mean_d.size();
  if (cov_xx.rows() != nx || cov_xx.cols() != nx || cov_xd.rows() != nx ||
      cov_xd.cols() != nd || cov_dd.rows() != nd || cov_dd.cols() != nd) {
    throw InvalidInput("joint beliefs: covariance blocks do not match the means (x: " +
                       std::to_string(nx) + ", d: " + std::to_string(nd) + ")");
  }
}

double JointBeliefs::min_joint_eigenvalue() const {
  check_dimensions();
  const Index nx = dim_x();
  const Index nd = dim_d();
  Matrix joint(nx + nd, nx + nd);
  joint.topLeftCorner(nx, nx) = cov_xx;
  joint.topRightCorner(nx, nd) = cov_xd;
  joint.bottomLeftCorner(nd, nx) = cov_xd.transpose();
  joint.bottomRightCorner(nd, nd) = cov_dd;
  if (joint.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(joint), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

namespace {

void check_joint_psd(const JointBeliefs& jb, const Tolerances& tol) {
  const double min_eig = jb.min_joint_eigenvalue();
  const double scale =
      std::max({1.0, jb.cov_xx.size() ? jb.cov_xx.cwiseAbs().maxCoeff() : 0.0,
                jb.cov_dd.size() ? jb.cov_dd.cwiseAbs().maxCoeff() : 0.0});
  if (min_eig < -tol.joint_psd * scale) {
    throw InvalidBeliefs("joint covariance is not positive semi-definite (min eigenvalue " +
                         std::to_string(min_eig) + ")");
  }
}

}  // namespace

Vector adjust_expectation(const JointBeliefs& jb, const Vector& d_obs, const Tolerances& tol) {
  jb.check_dimensions();
  if (d_obs.size() != jb.dim_d()) {
    throw InvalidInput("adjust_expectation: observed data has length " +
                       std::to_string(d_obs.size()) + ", expected " +
                       std::to_string(jb.dim_d()));
  }
  if (jb.dim_d() == 0) return jb.mean_x;
  const Matrix inv = pinv(jb.cov_dd, tol.pinv_rel);
  return jb.mean_x + jb.cov_xd * (inv * (d_obs - jb.mean_d));
}

Matrix adjust_variance(const JointBeliefs& jb, const Tolerances& tol) {
  jb.check_dimensions();
  check_joint_psd(jb, tol);
  if (jb.dim_d() == 0) return psd_project(jb.cov_xx, tol.psd);
  const Matrix inv = pinv(jb.cov_dd, tol.pinv_rel);
  return psd_project(jb.cov_xx - jb.cov_xd * inv * jb.cov_xd.transpose(), tol.psd);
}

AdjustmentResult adjust(const JointBeliefs& jb, const Vector& d_obs, const Tolerances& tol) {
  jb.check_dimensions();
  if (d_obs.size() != jb.dim_d()) {
    throw InvalidInput("adjust: observed data has length " + std::to_string(d_obs.size()) +
                       ", expected " + std::to_string(jb.dim_d()));
  }
  check_joint_psd(jb, tol);
  AdjustmentResult out;
  if (jb.dim_d() == 0) {
    out.adj_mean = jb.mean_x;
    out.adj_cov = psd_project(jb.cov_xx, tol.psd);
  } else {
    const Matrix inv = pinv(jb.cov_dd, tol.pinv_rel);
    const Matrix gain = jb.cov_xd * inv;
    out.adj_mean = jb.mean_x + gain * (d_obs - jb.mean_d);
    out.adj_cov = psd_project(jb.cov_xx - gain * jb.cov_xd.transpose(), tol.psd);
  }
  out.resolved_variance_fraction = resolutions(jb.cov_xx, out.adj_cov);
  return out;
}

Vector resolutions(const Matrix& prior_cov, const Matrix& adj_cov) {
  if (prior_cov.rows() != adj_cov.rows()) throw InvalidInput("resolutions: size mismatch");
  Vector r(prior_cov.rows());
  for (Index k = 0; k < r.size(); ++k) {
    const double prior = prior_cov(k, k);
    r(k) = prior == 0.0 ? 0.0 : 1.0 - adj_cov(k, k) / prior;
  }
  return r;
}

void ExchangeableSpec::validate() const {
  const Index d = mean_M.size();
  if (m < 1) throw InvalidInput("exchangeable spec: member count must be positive");
  if (cov_M.rows() != d || cov_M.cols() != d || cov_R.rows() != d || cov_R.cols() != d) {
    throw InvalidInput("exchangeable spec: covariance dimensions disagree with the mean");
  }
}

Matrix build_exchangeable_cov(const ExchangeableSpec& spec, Index i, Index j) {
  spec.validate();
  if (i < 0 || j < 0 || i >= spec.m || j >= spec.m) {
    throw InvalidInput("exchangeable covariance: member index out of range");
  }
  return i == j ? Matrix(spec.cov_M + spec.cov_R) : spec.cov_M;
}

Matrix assemble_exchangeable_cov(const ExchangeableSpec& spec) {
  spec.validate();
  const Index d = spec.dim();
  Matrix out(spec.m * d, spec.m * d);
  for (Index i = 0; i < spec.m; ++i) {
    for (Index j = 0; j < spec.m; ++j) {
      out.block(i * d, j * d, d, d) = build_exchangeable_cov(spec, i, j);
    }
  }
  return out;
}

AdjustmentResult sample_mean_adjust(const ExchangeableSpec& spec,
                                    std::span<const Vector> members, const Tolerances& tol) {
  if (members.empty()) throw InvalidInput("sample_mean_adjust: empty ensemble");
  spec.validate();
  if (static_cast<Index>(members.size()) != spec.m) {
    throw InvalidInput("sample_mean_adjust: expected " + std::to_string(spec.m) +
                       " members, got " + std::to_string(members.size()));
  }
  for (const auto& x : members) {
    if (x.size() != spec.dim()) throw InvalidInput("sample_mean_adjust: member length mismatch");
  }
  const Vector xbar = canonical_mean(members);
  JointBeliefs jb;
  jb.mean_x = spec.mean_M;
  jb.mean_d = spec.mean_M;
  jb.cov_xx = spec.cov_M;
  jb.cov_xd = spec.cov_M;
  jb.cov_dd = spec.cov_M + spec.cov_R / static_cast<double>(spec.m);
  return adjust(jb, xbar, tol);
}

}  // namespace coex::bayes_linear
