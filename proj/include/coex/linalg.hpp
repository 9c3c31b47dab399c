#pragma once

// Dense linear algebra kernels shared by every stage of the reconstruction:
// pseudo-inverses, PSD repair, symmetric square roots, Kronecker-structured
// products that never materialise the full operator, and great-circle
// distances on the unit sphere.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace coex {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A covariance of the form temporal ⊗ spatial over a field stored
/// time-major (entry t*p + s).
struct KroneckerOp {
  Matrix temporal;  // n x n
  Matrix spatial;   // p x p

  Index months() const { return temporal.rows(); }
  Index locations() const { return spatial.rows(); }
  Index rows() const { return temporal.rows() * spatial.rows(); }

  // Materialises the full product. Only for small operators and tests.
  Matrix dense() const;
  // Diagonal of the product without materialising it.
  Vector diagonal() const;
};

struct GeoLocation {
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, [-180, 180)
};

// Validated constructor; longitudes are wrapped into [-180, 180).
GeoLocation make_location(double lat, double lon);

struct SparseWeights {
  std::vector<Index> index;
  std::vector<double> weight;

  std::size_t size() const { return index.size(); }
  double sum() const;
};

/// Weights of one observation: time averaging over n months composed with
/// spatial interpolation over p grid nodes. Its row of H is time ⊗ space.
struct ObservationWeights {
  Vector time;
  SparseWeights space;
};

double default_pinv_tol(Index rows, Index cols);

/// Moore-Penrose pseudo-inverse via SVD. Singular values at or below
/// rel_tol * sigma_max are treated as zero. A negative rel_tol selects
/// default_pinv_tol.
Matrix pinv(const Matrix& m, double rel_tol = -1.0);

struct PinvWithCondition {
  Matrix inverse;
  double condition = 0.0;  // sigma_max / sigma_min (inf when singular)
  Index rank = 0;
};
PinvWithCondition pinv_with_condition(const Matrix& m, double rel_tol = -1.0);

struct PsdProjection {
  Matrix matrix;
  double min_eigenvalue = 0.0;  // of the symmetrised input
  Index clipped = 0;            // eigenvalues below -tol
};

/// Frobenius-nearest PSD matrix: symmetrise, then zero every negative
/// eigenvalue. `tol` only decides what counts as a reportable violation.
PsdProjection psd_project_report(const Matrix& m, double tol);
Matrix psd_project(const Matrix& m, double tol = 1e-12);

Matrix symmetrize(const Matrix& m);

/// Symmetric square root S = V diag(sqrt(lambda)) V^T, so S S^T = M.
/// Throws NotPsd when an eigenvalue is below -tol * max(1, |lambda|_max).
Matrix sym_sqrt(const Matrix& m, double tol = 1e-10);

/// (temporal ⊗ spatial) v through vec(A_S V A_T^T) with V the p x n reshape.
Vector kron_matvec(const KroneckerOp& k, const Vector& v);

/// H (A_T ⊗ A_S) H^T where row i of H is time_i ⊗ space_i.
/// Entry (i, j) = (a_i^T A_T a_j)(s_i^T A_S s_j).
Matrix kron_quadform(const KroneckerOp& k,
                     std::span<const ObservationWeights> obs);

/// A_S S^T for sparse spatial weight rows: column i is A_S s_i (p x d).
Matrix spatial_cross(const Matrix& spatial, std::span<const ObservationWeights> obs);

struct KronFactors {
  Matrix temporal;
  Matrix spatial;
};

/// Nearest Kronecker product in Frobenius norm (rank-one SVD of the
/// rearranged matrix), each factor then PSD-projected. The temporal factor
/// is scaled to unit Frobenius norm with non-negative trace.
KronFactors nearest_kron_psd(const Matrix& s, Index n, Index p);

/// Great-circle angle in radians, [0, pi].
double geodesic_dist(const GeoLocation& a, const GeoLocation& b);

Matrix ones(Index n);

/// Order of vectors under lexicographic comparison (stable for ties). Used
/// to make reductions over exchangeable collections independent of their
/// input order bit for bit.
std::vector<std::size_t> canonical_order(std::span<const Vector> items);

/// Mean of the vectors, accumulated in canonical order.
Vector canonical_mean(std::span<const Vector> items);

/// Largest |a - b| relative to max(|b|_max, floor).
double rel_err(const Matrix& a, const Matrix& b, double floor = 1e-300);

std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 14695981039346656037ULL);

}  // namespace coex
