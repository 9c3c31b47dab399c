#include "coex/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "coex/errors.hpp"

namespace coex {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw InvalidInput(std::string(what) + ": input contains non-finite entries");
  }
}

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

Matrix KroneckerOp::dense() const {
  const Index n = temporal.rows();
  const Index p = spatial.rows();
  Matrix out(n * p, n * p);
  for (Index t = 0; t < n; ++t) {
    for (Index u = 0; u < n; ++u) {
      out.block(t * p, u * p, p, p) = temporal(t, u) * spatial;
    }
  }
  return out;
}

Vector KroneckerOp::diagonal() const {
  const Index n = temporal.rows();
  const Index p = spatial.rows();
  Vector d(n * p);
  for (Index t = 0; t < n; ++t) {
    d.segment(t * p, p) = temporal(t, t) * spatial.diagonal();
  }
  return d;
}

GeoLocation make_location(double lat, double lon) {
  if (!std::isfinite(lat) || !std::isfinite(lon)) {
    throw InvalidInput("location coordinates must be finite");
  }
  if (lat < -90.0 || lat > 90.0) {
    throw InvalidInput("latitude " + std::to_string(lat) + " outside [-90, 90]");
  }
  double wrapped = std::fmod(lon + 180.0, 360.0);
  if (wrapped < 0.0) wrapped += 360.0;
  return GeoLocation{lat, wrapped - 180.0};
}

double SparseWeights::sum() const {
  return std::accumulate(weight.begin(), weight.end(), 0.0);
}

double default_pinv_tol(Index rows, Index cols) {
  return 1e-12 * static_cast<double>(std::max<Index>({rows, cols, 1}));
}

PinvWithCondition pinv_with_condition(const Matrix& m, double rel_tol) {
  require_finite(m, "pinv");
  if (rel_tol < 0.0) rel_tol = default_pinv_tol(m.rows(), m.cols());
  PinvWithCondition out;
  if (m.size() == 0) {
    out.inverse = Matrix::Zero(m.cols(), m.rows());
    return out;
  }
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  const double cutoff = rel_tol * smax;
  Vector inv_sv = Vector::Zero(sv.size());
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) {
      inv_sv(i) = 1.0 / sv(i);
      ++out.rank;
    }
  }
  out.inverse = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
  const double last = sv.size() > 0 ? sv(sv.size() - 1) : 0.0;
  out.condition = (last > 0.0) ? smax / last : std::numeric_limits<double>::infinity();
  if (smax == 0.0) out.condition = std::numeric_limits<double>::infinity();
  return out;
}

Matrix pinv(const Matrix& m, double rel_tol) {
  return pinv_with_condition(m, rel_tol).inverse;
}

Matrix symmetrize(const Matrix& m) {
  if (m.rows() != m.cols()) throw InvalidInput("symmetrize: matrix is not square");
  return 0.5 * (m + m.transpose());
}

PsdProjection psd_project_report(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) throw InvalidInput("psd_project: matrix is not square");
  require_finite(m, "psd_project");
  PsdProjection out;
  if (m.size() == 0) {
    out.matrix = m;
    return out;
  }
  const Matrix sym = symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector lambda = es.eigenvalues();
  out.min_eigenvalue = lambda.minCoeff();
  if (out.min_eigenvalue >= 0.0) {
    out.matrix = sym;
    return out;
  }
  for (Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -tol) ++out.clipped;
    if (lambda(i) < 0.0) lambda(i) = 0.0;
  }
  const Matrix& v = es.eigenvectors();
  out.matrix = symmetrize(v * lambda.asDiagonal() * v.transpose());
  return out;
}

Matrix psd_project(const Matrix& m, double tol) {
  return psd_project_report(m, tol).matrix;
}

Matrix sym_sqrt(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) throw InvalidInput("sym_sqrt: matrix is not square");
  require_finite(m, "sym_sqrt");
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector lambda = es.eigenvalues();
  const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  for (Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -tol * scale) {
      throw NotPsd("sym_sqrt: eigenvalue " + std::to_string(lambda(i)) +
                   " is below the PSD tolerance");
    }
    lambda(i) = std::sqrt(std::max(0.0, lambda(i)));
  }
  const Matrix& v = es.eigenvectors();
  return symmetrize(v * lambda.asDiagonal() * v.transpose());
}

Vector kron_matvec(const KroneckerOp& k, const Vector& v) {
  const Index n = k.temporal.rows();
  const Index p = k.spatial.rows();
  if (k.temporal.cols() != n || k.spatial.cols() != p) {
    throw InvalidInput("kron_matvec: factors must be square");
  }
  if (v.size() != n * p) {
    throw InvalidInput("kron_matvec: vector length " + std::to_string(v.size()) +
                       " does not match n*p = " + std::to_string(n * p));
  }
  Eigen::Map<const Matrix> vm(v.data(), p, n);
  Matrix prod = k.spatial * vm * k.temporal.transpose();
  return Eigen::Map<const Vector>(prod.data(), n * p);
}

Matrix spatial_cross(const Matrix& spatial, std::span<const ObservationWeights> obs) {
  const Index p = spatial.rows();
  Matrix out = Matrix::Zero(p, static_cast<Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& sw = obs[i].space;
    if (sw.index.size() != sw.weight.size()) {
      throw InvalidInput("spatial weights: index/weight length mismatch");
    }
    for (std::size_t k = 0; k < sw.size(); ++k) {
      const Index node = sw.index[k];
      if (node < 0 || node >= p) throw InvalidInput("spatial weight index out of range");
      out.col(static_cast<Index>(i)) += sw.weight[k] * spatial.col(node);
    }
  }
  return out;
}

Matrix kron_quadform(const KroneckerOp& k, std::span<const ObservationWeights> obs) {
  const Index n = k.temporal.rows();
  const Index d = static_cast<Index>(obs.size());
  Matrix a(n, d);
  for (Index i = 0; i < d; ++i) {
    if (obs[i].time.size() != n) {
      throw InvalidInput("kron_quadform: time weights have length " +
                         std::to_string(obs[i].time.size()) + ", expected " +
                         std::to_string(n));
    }
    a.col(i) = obs[i].time;
  }
  const Matrix gram_t = a.transpose() * k.temporal * a;
  const Matrix cross = spatial_cross(k.spatial, obs);
  Matrix gram_s(d, d);
  for (Index j = 0; j < d; ++j) {
    for (Index i = 0; i < d; ++i) {
      double acc = 0.0;
      const auto& sw = obs[i].space;
      for (std::size_t q = 0; q < sw.size(); ++q) acc += sw.weight[q] * cross(sw.index[q], j);
      gram_s(i, j) = acc;
    }
  }
  return gram_t.cwiseProduct(gram_s);
}

KronFactors nearest_kron_psd(const Matrix& s, Index n, Index p) {
  if (n <= 0 || p <= 0 || s.rows() != n * p || s.cols() != n * p) {
    throw InvalidInput("nearest_kron_psd: matrix of size " + std::to_string(s.rows()) +
                       " is not factorable as n*p = " + std::to_string(n * p));
  }
  require_finite(s, "nearest_kron_psd");
  // Rearrangement: row (t, u) holds vec of block (t, u).
  Matrix r(n * n, p * p);
  for (Index u = 0; u < n; ++u) {
    for (Index t = 0; t < n; ++t) {
      const Matrix block = s.block(t * p, u * p, p, p);
      r.row(u * n + t) = Eigen::Map<const Vector>(block.data(), p * p).transpose();
    }
  }
  Eigen::BDCSVD<Matrix> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double sigma = svd.singularValues()(0);
  const double root = std::sqrt(sigma);
  Vector ut = root * svd.matrixU().col(0);
  Vector vs = root * svd.matrixV().col(0);
  Matrix vt_mat = Eigen::Map<const Matrix>(ut.data(), n, n);
  Matrix vs_mat = Eigen::Map<const Matrix>(vs.data(), p, p);
  if (vt_mat.trace() < 0.0 || (vt_mat.trace() == 0.0 && vs_mat.trace() < 0.0)) {
    vt_mat = -vt_mat;
    vs_mat = -vs_mat;
  }
  const double norm_t = vt_mat.norm();
  if (norm_t > 0.0) {
    vt_mat /= norm_t;
    vs_mat *= norm_t;
  }
  KronFactors out{psd_project(vt_mat), psd_project(vs_mat)};
  return out;
}

double geodesic_dist(const GeoLocation& a, const GeoLocation& b) {
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = 0.5 * (phi2 - phi1);
  const double dlambda = 0.5 * (b.lon - a.lon) * kDegToRad;
  const double s_phi = std::sin(dphi);
  const double c_phi = std::cos(dphi);
  const double s_lam = std::sin(dlambda);
  const double cc = std::cos(phi1) * std::cos(phi2) * s_lam * s_lam;
  const double h = std::clamp(s_phi * s_phi + cc, 0.0, 1.0);
  const double one_minus_h = std::clamp(c_phi * c_phi - cc, 0.0, 1.0);
  return 2.0 * std::atan2(std::sqrt(h), std::sqrt(one_minus_h));
}

Matrix ones(Index n) { return Matrix::Ones(n, n); }

std::vector<std::size_t> canonical_order(std::span<const Vector> items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Vector& x = items[a];
    const Vector& y = items[b];
    if (x.size() != y.size()) return x.size() < y.size();
    return std::lexicographical_compare(x.data(), x.data() + x.size(), y.data(),
                                        y.data() + y.size());
  });
  return order;
}

Vector canonical_mean(std::span<const Vector> items) {
  if (items.empty()) throw InvalidInput("mean of an empty collection");
  const auto order = canonical_order(items);
  Vector acc = Vector::Zero(items.front().size());
  for (std::size_t i : order) {
    if (items[i].size() != acc.size()) throw InvalidInput("mean: vectors differ in length");
    acc += items[i];
  }
  return acc / static_cast<double>(items.size());
}

double rel_err(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput("rel_err: shape mismatch");
  }
  if (a.size() == 0) return 0.0;
  const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace coex
