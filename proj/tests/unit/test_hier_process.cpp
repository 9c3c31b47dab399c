#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "coex/errors.hpp"
#include "coex/hier_process.hpp"

using namespace coex;
using namespace coex::hier;
using namespace testing;

namespace {

HierPrior random_prior(Index k, double alpha2 = 1.0) {
  HierPrior p;
  p.mean_Mbeta = random_vector(k);
  p.var_Mbeta = random_psd(k);
  p.var_Rbeta = alpha2 * p.var_Mbeta;
  return p;
}

// Groups sharing one column space with isotropic residuals.
std::vector<GroupData> shared_groups(Index m, Index q, Index k) {
  const Matrix base = random_matrix(q, k);
  std::uniform_real_distribution<double> u(0.05, 0.5);
  std::vector<GroupData> out;
  for (Index i = 0; i < m; ++i) {
    GroupData g;
    g.design = base * (random_matrix(k, k) + 3.0 * Matrix::Identity(k, k));
    g.response = random_vector(q);
    g.residual_var = Vector::Constant(q, u(rng()));
    out.push_back(g);
  }
  return out;
}

// Adjusts B = (beta_1..beta_m, M) by beta_hat written out block by block.
DenseAdjusted oracle_hier(const std::vector<Vector>& bh, const HierPrior& p,
                          const std::vector<Matrix>& rproj) {
  const Index m = static_cast<Index>(bh.size()), k = p.k();
  Matrix vb = Matrix::Zero((m + 1) * k, (m + 1) * k);
  for (Index i = 0; i <= m; ++i)
    for (Index j = 0; j <= m; ++j) {
      Matrix blk = p.var_Mbeta;
      if (i == j && i < m) blk += p.var_Rbeta;
      vb.block(i * k, j * k, k, k) = blk;
    }
  Matrix cross = vb.leftCols(m * k);
  Matrix vd = vb.topLeftCorner(m * k, m * k);
  Vector d(m * k), ed(m * k);
  for (Index i = 0; i < m; ++i) {
    vd.block(i * k, i * k, k, k) += rproj[i];
    d.segment(i * k, k) = bh[i];
    ed.segment(i * k, k) = p.mean_Mbeta;
  }
  return oracle_adjust(p.mean_Mbeta.replicate(m + 1, 1), vb, ed, cross, vd, d);
}

AdjustedHierarchy run(const std::vector<GroupData>& groups, const HierPrior& prior) {
  return adjust_hierarchy(project_all(groups), prior, residual_projections(groups));
}

}  // namespace

TEST_SUITE("hier_process") {

TEST_CASE("beta hat projections") {
  GroupData g;
  g.design = random_matrix(20, 3);
  const Vector beta = random_vector(3);
  g.response = g.design * beta;
  g.residual_var = Vector::Ones(20);
  BetaHat b = project_beta_hat(g);
  CHECK(b.residual_norm < 1e-10);
  CHECK(rel_err(b.beta, beta) < 1e-10);

  g.design = random_matrix(20, 3).householderQr().householderQ() * Matrix::Identity(20, 3);
  g.response = random_vector(20);
  CHECK(rel_err(project_beta_hat(g).beta, Vector(g.design.transpose() * g.response)) < 1e-12);

  g.design = random_matrix(20, 3);
  const Matrix& x = g.design;
  const Vector normal = (x.transpose() * x).ldlt().solve(x.transpose() * g.response);
  BetaHat r = project_beta_hat(g);
  CHECK(rel_err(r.beta, normal) <= 1e-10);
  CHECK(r.residual_norm == doctest::Approx((g.response - x * normal).norm()).epsilon(1e-10));
}

TEST_CASE("group validation") {
  GroupData g;
  g.design = random_matrix(4, 2);
  g.response = random_vector(4);
  g.residual_var = Vector::Ones(4);
  g.validate();
  g.residual_var(1) = 0.0;
  CHECK_THROWS_AS(g.validate(), InvalidInput);
  g.residual_var = Vector::Ones(3);
  CHECK_THROWS_AS(g.validate(), InvalidInput);
}

TEST_CASE("residual projection") {
  GroupData g;
  g.design = random_matrix(6, 2);
  g.response = random_vector(6);
  g.residual_var = random_vector(6).cwiseAbs().array() + 0.1;
  const Matrix pi = oracle_pinv(g.design);
  CHECK(rel_err(residual_projection(g), Matrix(pi * g.residual_var.asDiagonal() * pi.transpose())) < 1e-10);
}

TEST_CASE("projection invariance report") {
  auto groups = shared_groups(3, 8, 2);
  auto rep = check_projection_invariance(groups, 1e-10);
  CHECK(rep.passed);
  CHECK(rep.max_discrepancy < 1e-10);
  CHECK(rep.residual_coupling < 1e-10);
  CHECK(rep.discrepancies.size() == 3);

  groups[1].design = groups[0].design;
  CHECK(check_projection_invariance(groups, 1e-10).max_discrepancy < 1e-12);

  // rotate one column into a new direction
  groups[2].design.col(1) += random_vector(8);
  auto bad = check_projection_invariance(groups, 1e-10);
  CHECK_FALSE(bad.passed);
  CHECK(bad.max_discrepancy > 1e-3);

  // explicit projector oracle
  auto proj = [](const Matrix& phi) { return Matrix(phi * oracle_pinv(phi)); };
  const double direct = (proj(groups[2].design) - proj(groups[0].design)).norm();
  CHECK(bad.discrepancies[2] == doctest::Approx(direct).epsilon(1e-8));
}

TEST_CASE("prior from eigenvalues") {
  Vector lambda(3);
  lambda << 4.0, 2.0, 1.0;
  Vector mean = random_vector(3);
  HierPrior p = HierPrior::from_eigenvalues(lambda, 1.0, mean);
  CHECK(rel_err(Matrix(p.var_Mbeta + p.var_Rbeta), Matrix(lambda.asDiagonal())) < 1e-15);
  CHECK(p.var_Mbeta(0, 0) == 2.0);
  HierPrior q = HierPrior::from_eigenvalues(lambda, 3.0, mean);
  CHECK(q.var_Rbeta(1, 1) == doctest::Approx(1.5));
  CHECK(rel_err(q.mean_Mbeta, mean) == 0.0);
  HierPrior bad = p;
  bad.var_Mbeta(0, 0) = -1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("adjust hierarchy matches the block oracle") {
  for (int rep = 0; rep < 5; ++rep) {
    auto groups = shared_groups(3, 10, 2);
    auto prior = random_prior(2);
    auto bh = project_all(groups);
    auto rp = residual_projections(groups);
    auto adj = adjust_hierarchy(bh, prior, rp);
    auto o = oracle_hier(bh.beta_hats, prior, rp);
    CHECK(rel_err(adj.adj_mean_B, o.mean) <= 1e-10);
    CHECK(rel_err(adj.adj_var_B, o.cov) <= 1e-10);
    CHECK(min_eig(adj.prior_var_B - adj.adj_var_B) >= -1e-10);
  }
}

TEST_CASE("sufficiency: projection path equals the dense path") {
  for (int rep = 0; rep < 5; ++rep) {
    auto groups = shared_groups(3, 12, 2);
    auto prior = random_prior(2);
    auto a = run(groups, prior);
    auto b = adjust_hierarchy_dense(groups, prior);
    CHECK(rel_err(a.adj_mean_B, b.adj_mean_B) <= 1e-8);
    CHECK(rel_err(a.adj_var_B, b.adj_var_B) <= 1e-8);
  }
}

TEST_CASE("sufficiency fails without a shared column space") {
  auto groups = shared_groups(3, 12, 2);
  groups[1].design = random_matrix(12, 2);
  for (Index j = 0; j < 12; ++j) {
    groups[1].residual_var(j) = 0.01 + 2.0 * (j % 3);
    groups[2].residual_var(j) = 0.01 + 2.0 * ((j + 1) % 3);
  }
  auto prior = random_prior(2);
  CHECK_FALSE(check_projection_invariance(groups, 1e-10).passed);
  auto a = run(groups, prior);
  auto b = adjust_hierarchy_dense(groups, prior);
  CHECK((a.adj_mean_B - b.adj_mean_B).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("noise free groups are pinned") {
  auto groups = shared_groups(3, 10, 2);
  for (auto& g : groups) g.residual_var.setConstant(1e-8);
  auto prior = random_prior(2);
  auto bh = project_all(groups);
  auto adj = run(groups, prior);
  for (Index i = 0; i < 3; ++i) CHECK(rel_err(adj.beta_mean(i), bh.beta_hats[i]) <= 1e-6);
  auto dense = adjust_hierarchy_dense(groups, prior);
  CHECK(rel_err(adj.adj_mean_B, dense.adj_mean_B) <= 1e-6);
}

TEST_CASE("scalar hierarchy by hand") {
  // m=2, k=1, q=1, design 1: beta_hat = y, var = vM + vR + r = 4
  std::vector<GroupData> groups(2);
  const double y[2] = {4.0, 6.0};
  for (int i = 0; i < 2; ++i) {
    groups[i].design = Matrix::Ones(1, 1);
    groups[i].response = Vector::Constant(1, y[i]);
    groups[i].residual_var = Vector::Constant(1, 2.0);
  }
  HierPrior p{Vector::Zero(1), Matrix::Ones(1, 1), Matrix::Ones(1, 1), std::nullopt};
  for (const auto& adj : {run(groups, p), adjust_hierarchy_dense(groups, p)}) {
    auto pop = extract_population(adj);
    CHECK(pop.mean(0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(pop.cov(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(adj.beta_mean(0)(0) == doctest::Approx(8.0 / 3.0).epsilon(1e-12));
    CHECK(adj.beta_mean(1)(0) == doctest::Approx(10.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("single group collapses to one regression") {
  auto groups = shared_groups(1, 8, 2);
  auto prior = random_prior(2);
  auto bh = project_all(groups);
  auto rp = residual_projections(groups);
  // beta = M + R observed through beta_hat = beta + noise
  const Matrix vb = prior.var_Mbeta + prior.var_Rbeta;
  auto o = oracle_adjust(prior.mean_Mbeta, vb, prior.mean_Mbeta, vb, Matrix(vb + rp[0]), bh.beta_hats[0]);
  auto adj = adjust_hierarchy(bh, prior, rp);
  CHECK(rel_err(adj.beta_mean(0), o.mean) < 1e-10);
  CHECK(rel_err(adj.beta_cov(0), o.cov) < 1e-10);
}

TEST_CASE("degenerate population prior keeps the prior mean") {
  auto groups = shared_groups(3, 8, 2);
  HierPrior p = random_prior(2);
  p.var_Mbeta.setZero();
  p.var_Rbeta = random_psd(2);
  auto a = run(groups, p);
  auto b = adjust_hierarchy_dense(groups, p);
  CHECK(rel_err(extract_population(a).mean, p.mean_Mbeta) < 1e-14);
  CHECK(rel_err(extract_population(b).mean, p.mean_Mbeta) < 1e-14);
}

TEST_CASE("huge group variance decouples groups") {
  auto groups = shared_groups(3, 10, 2);
  HierPrior p = random_prior(2);
  p.var_Rbeta = 1e8 * Matrix::Identity(2, 2);
  auto a = run(groups, p);
  auto changed = groups;
  changed[1].response = random_vector(10) * 5.0;
  auto b = run(changed, p);
  CHECK(rel_err(a.beta_mean(0), b.beta_mean(0)) <= 1e-4);
  auto bd = adjust_hierarchy_dense(changed, p);
  CHECK(rel_err(bd.beta_mean(0), a.beta_mean(0)) <= 1e-4);
}

TEST_CASE("symmetric data: population mean is the mean of the groups") {
  std::vector<GroupData> groups(4);
  const Matrix phi = random_matrix(6, 1);
  const Vector base = random_vector(6);
  for (int i = 0; i < 4; ++i) {
    groups[i].design = phi;
    groups[i].response = base + phi * ((i - 1.5) * 0.7);
    groups[i].residual_var = Vector::Constant(6, 0.3);
  }
  auto bh = project_all(groups);
  HierPrior p{canonical_mean(bh.beta_hats), Matrix::Constant(1, 1, 0.8), Matrix::Constant(1, 1, 0.8), std::nullopt};
  auto adj = run(groups, p);
  double avg = 0.0;
  for (Index i = 0; i < 4; ++i) avg += adj.beta_mean(i)(0) / 4.0;
  CHECK(extract_population(adj).mean(0) == doctest::Approx(avg).epsilon(1e-12));
  CHECK(rel_err(extract_population(adj).cov, Matrix(adj.adj_var_B.bottomRightCorner(1, 1))) == 0.0);
}

TEST_CASE("relabelling groups permutes the result") {
  auto groups = shared_groups(4, 8, 2);
  auto prior = random_prior(2);
  auto a = run(groups, prior);
  std::vector<GroupData> perm{groups[2], groups[0], groups[3], groups[1]};
  auto b = run(perm, prior);
  const Index map[4] = {2, 0, 3, 1};
  for (Index i = 0; i < 4; ++i)
    CHECK((b.beta_mean(i).array() == a.beta_mean(map[i]).array()).all());
  CHECK((extract_population(a).mean.array() == extract_population(b).mean.array()).all());
  CHECK((extract_population(a).cov.array() == extract_population(b).cov.array()).all());
}

TEST_CASE("mismatched inputs are rejected") {
  auto groups = shared_groups(3, 8, 2);
  auto prior = random_prior(3);
  CHECK_THROWS_AS(run(groups, prior), InvalidInput);
  auto bh = project_all(groups);
  auto rp = residual_projections(groups);
  rp.pop_back();
  CHECK_THROWS_AS(adjust_hierarchy(bh, random_prior(2), rp), InvalidInput);
}

}
