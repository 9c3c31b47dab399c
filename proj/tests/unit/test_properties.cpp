#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "tempdir.hpp"

#include "coex/bayes_linear.hpp"
#include "coex/basis.hpp"
#include "coex/coex_field.hpp"
#include "coex/coex_process.hpp"
#include "coex/hier_process.hpp"
#include "coex/io.hpp"
#include "coex/parallel.hpp"

using namespace coex;
using namespace testing;

TEST_SUITE("properties") {

TEST_CASE("I-splines are nondecreasing on random pairs") {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(-5.0, 35.0);
  basis::ISplineBasis b;
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    double t1 = u(g), t2 = u(g);
    if (t1 > t2) std::swap(t1, t2);
    const Vector a = basis::ispline_eval(b, t1), c = basis::ispline_eval(b, t2);
    if ((a.array() > c.array()).any()) ++violations;
    if (a.minCoeff() < 0.0 || a.maxCoeff() > 1.0) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("pinv Penrose identities up to 50 by 50") {
  std::mt19937_64 g(2);
  for (Index r : {1, 7, 23, 50})
    for (Index c : {1, 13, 50}) {
      Matrix m = random_matrix(r, c, g);
      if (r > 3 && c > 3) m.col(2) = m.col(0) + m.col(1);  // rank deficient
      const Matrix mi = pinv(m);
      CHECK(rel_err(m * mi * m, m) <= 1e-10);
      CHECK(rel_err(mi * m * mi, mi) <= 1e-10);
    }
}

TEST_CASE("nearest kron recovers PSD inputs") {
  std::mt19937_64 g(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 1 + rep % 4, p = 2 + rep % 3;
    const Matrix vt = random_psd(n, 0.1, g), vs = random_psd(p, 0.1, g);
    KroneckerOp k{vt, vs};
    auto f = nearest_kron_psd(k.dense(), n, p);
    KroneckerOp back{f.temporal, f.spatial};
    CHECK(frob_rel(back.dense(), k.dense()) <= 1e-8);
  }
}

TEST_CASE("geodesic symmetry and triangle inequality") {
  std::mt19937_64 g(4);
  int violations = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    auto pts = sphere_points(3, g);
    const double ab = geodesic_dist(pts[0], pts[1]), ba = geodesic_dist(pts[1], pts[0]);
    const double bc = geodesic_dist(pts[1], pts[2]), ac = geodesic_dist(pts[0], pts[2]);
    if (ab != ba) ++violations;
    if (ac > ab + bc + 1e-12) ++violations;
    if (ab < 0.0 || ab > M_PI) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("adjusted residuals are uncorrelated with the data") {
  std::mt19937_64 g(5);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix vx = random_psd(4, 0.1, g), gm = random_matrix(3, 4, g);
    bayes_linear::JointBeliefs jb{Vector::Zero(4), Vector::Zero(3), vx, vx * gm.transpose(),
                                  gm * vx * gm.transpose() + 0.1 * Matrix::Identity(3, 3)};
    // X - E_D[X] = X - A D with A = cov_xd var_d^+; its covariance with D
    const Matrix a = jb.cov_xd * pinv(jb.cov_dd);
    const Matrix cross = jb.cov_xd - a * jb.cov_dd;
    CHECK(cross.cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(min_eig(jb.cov_xx - bayes_linear::adjust_variance(jb)) >= -1e-10);
  }
}

TEST_CASE("sample mean adjustment ignores member order") {
  std::mt19937_64 g(6);
  bayes_linear::ExchangeableSpec s{5, random_vector(3, g), random_psd(3, 0.1, g), random_psd(3, 0.1, g)};
  std::vector<Vector> members;
  for (int i = 0; i < 5; ++i) members.push_back(random_vector(3, g));
  auto a = bayes_linear::sample_mean_adjust(s, members);
  for (int rep = 0; rep < 10; ++rep) {
    std::shuffle(members.begin(), members.end(), g);
    auto b = bayes_linear::sample_mean_adjust(s, members);
    CHECK((a.adj_mean.array() == b.adj_mean.array()).all());
    CHECK((a.adj_cov.array() == b.adj_cov.array()).all());
  }
}

TEST_CASE("scalar hierarchy shrinks toward the population") {
  std::mt19937_64 g(7);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix phi = random_matrix(5, 1, g);
    std::vector<hier::GroupData> groups(4);
    for (auto& gr : groups) {
      gr.design = phi;
      gr.response = random_vector(5, g) * 2.0;
      gr.residual_var = Vector::Constant(5, 0.4);
    }
    hier::HierPrior p{random_vector(1, g), Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 0.7), std::nullopt};
    auto bh = hier::project_all(groups);
    auto adj = hier::adjust_hierarchy(bh, p, hier::residual_projections(groups));
    const double pop = hier::extract_population(adj).mean(0);
    for (Index i = 0; i < 4; ++i) {
      const double lo = std::min(bh.beta_hats[i](0), pop), hi = std::max(bh.beta_hats[i](0), pop);
      const double e = adj.beta_mean(i)(0);
      CHECK(e >= lo - 1e-10);
      CHECK(e <= hi + 1e-10);
    }
    CHECK(min_eig(adj.prior_var_B - adj.adj_var_B) >= -1e-10);
  }
}

TEST_CASE("field updates reduce variance and ignore member order") {
  std::mt19937_64 g(8);
  for (int rep = 0; rep < 5; ++rep) {
    field::FieldEnsemble e;
    e.months = 3;
    e.locations = sphere_points(10, g);
    for (int i = 0; i < 5; ++i) e.members.push_back(random_vector(30, g));
    field::CoexFieldSpec spec;
    spec.var_mean = field::estimate_var_MX(e, 1.0);
    field::ObservationSet obs;
    for (const auto& loc : sphere_points(4, g)) {
      field::Observation o;
      o.value = random_vector(1, g)(0);
      o.sd = 0.5;
      o.location = loc;
      o.weights.time = field::annual_weights(3);
      o.weights.space = field::interpolation_weights(loc, e.locations);
      obs.items.push_back(o);
    }
    auto r1 = field::first_update_field(e, spec);
    auto r2 = field::second_update_field(r1, obs);
    CHECK(min_eig(r1.var_spatial - r2.var_spatial) >= -1e-10);
    std::shuffle(e.members.begin(), e.members.end(), g);
    spec.var_mean = field::estimate_var_MX(e, 1.0);
    auto s2 = field::second_update_field(field::first_update_field(e, spec), obs);
    CHECK((r2.mean.array() == s2.mean.array()).all());
    CHECK((r2.var_spatial.array() == s2.var_spatial.array()).all());
  }
}

TEST_CASE("file formats round trip exactly") {
  std::mt19937_64 g(9);
  TempDir dir;
  int mismatches = 0;
  for (int rep = 0; rep < 5; ++rep) {
    io::FieldBundle b;
    b.ensemble.months = 2;
    b.ensemble.locations = sphere_points(6, g);
    b.ensemble.labels = {"a", "b", "c"};
    for (int i = 0; i < 3; ++i) {
      Vector v = random_vector(12, g);
      for (Index j = 0; j < v.size(); ++j) v(j) *= std::pow(10.0, static_cast<double>(j % 7) * 40 - 120);
      b.ensemble.members.push_back(v);
    }
    io::write_field_bundle(dir / "b.csv", b);
    auto r = io::load_field_bundle(dir / "b.csv");
    for (int i = 0; i < 3; ++i)
      mismatches += static_cast<int>((r.ensemble.members[i].array() != b.ensemble.members[i].array()).count());

    std::vector<io::ObservationRecord> rows(3);
    for (auto& row : rows) {
      row.lat = b.ensemble.locations[0].lat;
      row.lon = b.ensemble.locations[0].lon;
      row.value = random_vector(1, g)(0);
      row.sd = 0.1 + std::abs(random_vector(1, g)(0));
    }
    rows[1].season = io::Season::kCustom;
    rows[1].weights = {1.0 / 3.0, 2.0 / 3.0};
    rows[2].bias_block = "x";
    io::write_observation_table(dir / "o.csv", rows);
    auto back = io::load_observation_table(dir / "o.csv");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      mismatches += back[i].value != rows[i].value;
      mismatches += back[i].sd != rows[i].sd;
      mismatches += back[i].lat != rows[i].lat;
      mismatches += back[i].weights != rows[i].weights;
    }

    std::vector<io::ExtentRecord> ext;
    for (const auto& l : b.ensemble.locations) ext.push_back({l.lat, l.lon, static_cast<int>(g() % 2)});
    io::write_extent_table(dir / "e.csv", ext);
    auto eback = io::load_extent_table(dir / "e.csv");
    for (std::size_t i = 0; i < ext.size(); ++i) {
      mismatches += eback[i].lat != ext[i].lat;
      mismatches += eback[i].inside != ext[i].inside;
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("sampling is reproducible for a seed and stays in the box") {
  field::FieldReconstruction sst;
  std::mt19937_64 g(10);
  sst.mean = random_vector(12, g);
  sst.var_temporal = ones(2);
  sst.var_spatial = random_psd(6, 0.1, g);
  sst.stage = field::Stage::kDataAdjusted;
  process::SampleOptions opt;
  opt.count = 10;
  int violations = 0;
  for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
    opt.seed = seed;
    auto a = process::sample_plausible(sst, nullptr, opt);
    auto b = process::sample_plausible(sst, nullptr, opt);
    const Vector sd = sst.marginal_variance().cwiseSqrt();
    for (std::size_t i = 0; i < a.size(); ++i) {
      violations += static_cast<int>((a[i].x_sample.array() != b[i].x_sample.array()).count());
      violations += static_cast<int>(
          ((a[i].x_sample - sst.mean).cwiseAbs().array() > opt.bound * sd.array() + 1e-12).count());
    }
  }
  CHECK(violations == 0);
  // thread count does not change the draws
  opt.seed = 3;
  auto serial = process::sample_plausible(sst, nullptr, opt);
  set_thread_count(3);
  auto threaded = process::sample_plausible(sst, nullptr, opt);
  set_thread_count(1);
  for (std::size_t i = 0; i < serial.size(); ++i)
    CHECK((serial[i].x_sample.array() == threaded[i].x_sample.array()).all());
}

}
