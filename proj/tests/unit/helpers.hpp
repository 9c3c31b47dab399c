#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "coex/linalg.hpp"

namespace testing {

using coex::Index;
using coex::Matrix;
using coex::Vector;

inline std::mt19937_64& rng() {
  static std::mt19937_64 gen(20240611);
  return gen;
}

inline Matrix random_matrix(Index r, Index c, std::mt19937_64& g = rng()) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = nd(g);
  return m;
}

inline Vector random_vector(Index n, std::mt19937_64& g = rng()) {
  return random_matrix(n, 1, g).col(0);
}

// A A^T plus a small ridge, so it is comfortably PSD.
inline Matrix random_psd(Index n, double ridge = 0.1, std::mt19937_64& g = rng()) {
  Matrix a = random_matrix(n, n, g);
  return a * a.transpose() + ridge * Matrix::Identity(n, n);
}

inline double min_eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  return es.eigenvalues().minCoeff();
}

inline double frob_rel(const Matrix& a, const Matrix& b) {
  const double nb = b.norm();
  return (a - b).norm() / (nb > 0 ? nb : 1.0);
}

// Uniform-ish points on the sphere.
inline std::vector<coex::GeoLocation> sphere_points(int count, std::mt19937_64& g = rng()) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), lon(-180.0, 180.0);
  std::vector<coex::GeoLocation> out;
  for (int i = 0; i < count; ++i) {
    const double z = u(g);
    out.push_back(coex::make_location(std::asin(z) * 180.0 / M_PI, lon(g)));
  }
  return out;
}

// Dense Bayes linear adjustment written out with a plain SVD pseudo-inverse,
// independent of the library's own implementation.
struct DenseAdjusted {
  Vector mean;
  Matrix cov;
};

inline Matrix oracle_pinv(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double cut = s.size() ? s(0) * 1e-13 * std::max(m.rows(), m.cols()) : 0.0;
  Matrix sinv = Matrix::Zero(m.cols(), m.rows());
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) sinv(i, i) = 1.0 / s(i);
  return svd.matrixV() * sinv * svd.matrixU().transpose();
}

inline DenseAdjusted oracle_adjust(const Vector& ex, const Matrix& vx, const Vector& ed,
                                   const Matrix& cxd, const Matrix& vd, const Vector& d) {
  const Matrix vdi = oracle_pinv(vd);
  return {ex + cxd * vdi * (d - ed), vx - cxd * vdi * cxd.transpose()};
}

}  // namespace testing
