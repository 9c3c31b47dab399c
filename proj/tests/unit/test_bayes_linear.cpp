#include <algorithm>

#include "doctest.h"
#include "helpers.hpp"

#include "coex/bayes_linear.hpp"
#include "coex/errors.hpp"

using namespace coex;
using namespace coex::bayes_linear;
using namespace testing;

namespace {

// Random consistent joint beliefs: D = G X + noise.
JointBeliefs random_joint(Index nx, Index nd) {
  const Matrix vx = random_psd(nx);
  const Matrix g = random_matrix(nd, nx);
  const Matrix noise = random_psd(nd, 0.05) * 0.1;
  JointBeliefs jb;
  jb.mean_x = random_vector(nx);
  jb.mean_d = g * jb.mean_x;
  jb.cov_xx = vx;
  jb.cov_xd = vx * g.transpose();
  jb.cov_dd = g * vx * g.transpose() + noise;
  return jb;
}

ExchangeableSpec random_spec(Index m, Index dim) {
  ExchangeableSpec s;
  s.m = m;
  s.mean_M = random_vector(dim);
  s.cov_M = random_psd(dim);
  s.cov_R = random_psd(dim) * 0.5;
  return s;
}

}  // namespace

TEST_SUITE("bayes_linear") {

TEST_CASE("no information leaves beliefs unchanged") {
  JointBeliefs jb = random_joint(3, 2);
  jb.cov_xd.setZero();
  const Vector d = random_vector(2);
  CHECK(rel_err(adjust_expectation(jb, d), jb.mean_x) == 0.0);
  CHECK(rel_err(adjust_variance(jb), jb.cov_xx) < 1e-12);
}

TEST_CASE("observing X exactly") {
  const Matrix v = random_psd(3);
  JointBeliefs jb{random_vector(3), Vector(), v, v, v};
  jb.mean_d = jb.mean_x;
  CHECK(rel_err(adjust_expectation(jb, jb.mean_x), jb.mean_x) < 1e-12);
  CHECK(adjust_variance(jb).norm() < 1e-10);
  const Vector d = random_vector(3);
  CHECK(rel_err(adjust_expectation(jb, d), d) < 1e-10);
}

TEST_CASE("hand assembled two by one adjustment") {
  JointBeliefs jb;
  jb.mean_x = Vector(2);
  jb.mean_x << 1.0, -1.0;
  jb.mean_d = Vector::Constant(1, 0.5);
  jb.cov_xx = Matrix(2, 2);
  jb.cov_xx << 2.0, 0.5, 0.5, 1.0;
  jb.cov_xd = Matrix(2, 1);
  jb.cov_xd << 1.0, 0.25;
  jb.cov_dd = Matrix::Constant(1, 1, 4.0);
  Vector d = Vector::Constant(1, 2.5);
  // E_D = E + c (2.5 - 0.5) / 4
  Vector e(2);
  e << 1.0 + 0.5, -1.0 + 0.125;
  CHECK(rel_err(adjust_expectation(jb, d), e) < 1e-14);
  Matrix v(2, 2);
  v << 2.0 - 0.25, 0.5 - 0.0625, 0.5 - 0.0625, 1.0 - 0.015625;
  CHECK(rel_err(adjust_variance(jb), v) < 1e-14);
}

TEST_CASE("random joint beliefs match the dense oracle") {
  for (int rep = 0; rep < 10; ++rep) {
    JointBeliefs jb = random_joint(4, 2);
    const Vector d = random_vector(2);
    auto o = oracle_adjust(jb.mean_x, jb.cov_xx, jb.mean_d, jb.cov_xd, jb.cov_dd, d);
    auto r = adjust(jb, d);
    CHECK(rel_err(r.adj_mean, o.mean) <= 1e-10);
    CHECK(rel_err(r.adj_cov, o.cov) <= 1e-10);
    CHECK(rel_err(adjust_variance(jb), o.cov) <= 1e-10);
    CHECK(r.resolved_variance_fraction.minCoeff() >= -1e-12);
    CHECK(r.resolved_variance_fraction.maxCoeff() <= 1.0 + 1e-12);
  }
}

TEST_CASE("dimension and belief errors") {
  JointBeliefs jb = random_joint(3, 2);
  CHECK_THROWS_AS(adjust_expectation(jb, Vector::Zero(3)), InvalidInput);
  jb.cov_xd *= 100.0;  // far outside what the marginals allow
  CHECK_THROWS_AS(adjust_variance(jb), InvalidBeliefs);
}

TEST_CASE("resolutions treat zero prior variance as unresolved") {
  Matrix prior = Matrix::Zero(2, 2);
  prior(0, 0) = 2.0;
  Matrix adj = Matrix::Zero(2, 2);
  adj(0, 0) = 0.5;
  Vector r = resolutions(prior, adj);
  CHECK(r(0) == doctest::Approx(0.75));
  CHECK(r(1) == 0.0);
}

TEST_CASE("exchangeable blocks") {
  auto s = random_spec(3, 2);
  CHECK(rel_err(build_exchangeable_cov(s, 1, 1), Matrix(s.cov_M + s.cov_R)) == 0.0);
  CHECK(rel_err(build_exchangeable_cov(s, 0, 2), s.cov_M) == 0.0);
  CHECK_THROWS_AS(build_exchangeable_cov(s, 0, 3), InvalidInput);
  const Matrix full = assemble_exchangeable_cov(s);
  CHECK(full.rows() == 6);
  CHECK(min_eig(full) >= -1e-10);
}

TEST_CASE("sample mean adjustment corner cases") {
  auto s = random_spec(4, 3);
  s.cov_R.setZero();
  std::vector<Vector> members;
  for (int i = 0; i < 4; ++i) members.push_back(random_vector(3));
  Vector xbar = Vector::Zero(3);
  for (auto& v : members) xbar += v / 4.0;
  auto r = sample_mean_adjust(s, members);
  CHECK(rel_err(r.adj_mean, xbar) < 1e-10);
  CHECK(r.adj_cov.norm() < 1e-10);

  auto t = random_spec(3, 2);
  std::vector<Vector> same(3, t.mean_M);
  CHECK(rel_err(sample_mean_adjust(t, same).adj_mean, t.mean_M) < 1e-12);
  CHECK_THROWS_AS(sample_mean_adjust(t, std::vector<Vector>{}), InvalidInput);
}

TEST_CASE("adjusted variance shrinks as the ensemble grows") {
  auto s = random_spec(1, 3);
  Matrix prev;
  for (Index m : {1, 2, 4, 8}) {
    s.m = m;
    std::vector<Vector> members(m, s.mean_M);
    const Matrix v = sample_mean_adjust(s, members).adj_cov;
    // dense oracle using var[Xbar] = cov_M + cov_R / m
    auto o = oracle_adjust(s.mean_M, s.cov_M, s.mean_M, s.cov_M,
                           Matrix(s.cov_M + s.cov_R / double(m)), s.mean_M);
    CHECK(rel_err(v, o.cov) < 1e-10);
    if (prev.size()) CHECK(min_eig(prev - v) >= -1e-10);
    prev = v;
  }
}

TEST_CASE("sample mean equals adjusting by every member") {
  auto s = random_spec(4, 2);
  std::vector<Vector> members;
  for (int i = 0; i < 4; ++i) members.push_back(random_vector(2));
  Vector d(8);
  for (int i = 0; i < 4; ++i) d.segment(2 * i, 2) = members[i];
  Matrix cxd(2, 8);
  for (int i = 0; i < 4; ++i) cxd.block(0, 2 * i, 2, 2) = s.cov_M;
  auto o = oracle_adjust(s.mean_M, s.cov_M, s.mean_M.replicate(4, 1), cxd,
                         assemble_exchangeable_cov(s), d);
  auto r = sample_mean_adjust(s, members);
  CHECK(rel_err(r.adj_mean, o.mean) <= 1e-10);
  CHECK(rel_err(r.adj_cov, o.cov) <= 1e-10);
}

TEST_CASE("kronecker belief structures materialise") {
  KroneckerOp k{random_psd(2), random_psd(3)};
  BeliefStructure b{Vector::Zero(6), k};
  CHECK(dimension(b.cov) == 6);
  CHECK(rel_err(materialize(b.cov), k.dense()) == 0.0);
  b.validate();
  BeliefStructure bad{Vector::Zero(5), k};
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

}
