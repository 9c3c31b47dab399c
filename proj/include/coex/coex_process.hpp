#pragma once

// Reality process for the dependent field (sea-ice concentration), given a
// temperature field X*:
//
//   Y*(X*) = phi(X*) M(beta) + Psi(X*) Theta_bar + U_Y,   U_Y = Psi(X*) U_Theta
//   Z_Y    = H_Y Y* + W_Y
//
// with phi(X*) = Psi(X*) Gamma, Gamma the PCA basis of the spline
// coefficients and var[U_Theta] = I_l ⊗ var[U_S]. Covariances are kept in
// factored form; full (n*p)^2 matrices are formed only by dense().

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "coex/basis.hpp"
#include "coex/coex_field.hpp"
#include "coex/hier_process.hpp"
#include "coex/linalg.hpp"

namespace coex::process {

struct RealityProcessSpec {
  basis::ISplineBasis splines;
  basis::SpatialBasis coefficients;     // Gamma, Theta_bar
  std::shared_ptr<const Matrix> var_US;  // p x p
  std::vector<GeoLocation> locations;
  Index months = 0;

  Index n() const { return months; }
  Index p() const { return static_cast<Index>(locations.size()); }
  Index l() const { return splines.size(); }
  Index k() const { return coefficients.rank(); }
  void validate() const;
};

/// var[U_S] from a Wendland covariance over the locations.
std::shared_ptr<const Matrix> discrepancy_covariance(std::span<const GeoLocation> locations,
                                                     const basis::WendlandParams& w,
                                                     double dist_scale);

/// phi(x) = Psi(x) Gamma, (n*p) x k.
Matrix phi_star(const RealityProcessSpec& spec, const Matrix& compact);
/// Psi(x) Theta_bar, n*p.
Vector design_offset(const RealityProcessSpec& spec, const Matrix& compact);

/// Rank-one-per-cell correction applied by the observation update:
/// cov' = cov - C W C^T with C = cov[:, cells].
struct Correction {
  std::vector<Index> cells;
  Matrix cross;    // C, (n*p) x d
  Matrix weight;   // W = var[Z]^+, d x d
  Matrix obs_cov;  // var[W_Y]
};

struct ProcessCovariance {
  Matrix phi;      // (n*p) x k
  Matrix var_M;    // k x k
  Matrix compact;  // (n*p) x l spline values
  std::shared_ptr<const Matrix> var_US;
  Index months = 0;
  std::optional<Correction> correction;

  Index n() const { return months; }
  Index p() const { return var_US ? var_US->rows() : 0; }
  Index size() const { return phi.rows(); }

  /// Columns of the first-stage covariance at the given cells.
  Matrix base_columns(std::span<const Index> cells) const;
  Matrix columns(std::span<const Index> cells) const;
  Vector diagonal() const;
  Matrix dense() const;
};

enum class Stage { kFirst, kSecond };

struct UpdateDiagnostics {
  double condition_number = 0.0;
  bool ill_conditioned = false;
  Index rank = 0;
};

struct ProcessReconstruction {
  Vector mean;  // unclamped
  ProcessCovariance cov;
  Stage stage = Stage::kFirst;
  std::optional<UpdateDiagnostics> diagnostics;

  Vector clamped_mean() const;
  Vector marginal_variance() const { return cov.diagonal(); }
};

/// Mean phi(x) E[M] + Psi(x) Theta_bar; covariance
/// phi var[M] phi^T + Psi(x) (I_l ⊗ var[U_S]) Psi(x)^T.
ProcessReconstruction first_update_process(const Vector& x_star, const hier::Population& pop,
                                           const RealityProcessSpec& spec);

/// Cell t*p + s per location: month `north_month` where lat >= 0 and
/// `south_month` elsewhere (0-based month indices).
std::vector<Index> build_H_Y(Index months, std::span<const GeoLocation> locations,
                             Index north_month = 1, Index south_month = 7);
Matrix dense_selector(std::span<const Index> cells, Index size);

struct ExtentObservations {
  Vector indicator;  // 1 inside the maximum extent, 0 outside
  double sd_min = 0.02;
  double sd_max = 0.3;
  double length = 0.05;  // radians
  basis::WendlandParams correlation{1.0, 0.2, 6.0};
  double dist_scale = 1.0;
  Index north_month = 1;
  Index south_month = 7;

  void validate(Index p) const;
};

/// Half the great-circle distance to the nearest location with the opposite
/// flag; infinity when every flag agrees.
Vector boundary_distances(std::span<const GeoLocation> locations, const Vector& indicator);

struct ExtentErrorModel {
  Vector sd;        // diagonal of K
  Matrix cor;
  Matrix cov() const { return sd.asDiagonal() * cor * sd.asDiagonal(); }
};

ExtentErrorModel extent_error_model(const ExtentObservations& obs,
                                    std::span<const GeoLocation> locations,
                                    const Vector& boundary_distance);

ProcessReconstruction second_update_process(const ProcessReconstruction& rec,
                                            const ExtentObservations& obs,
                                            std::span<const GeoLocation> locations,
                                            double pinv_rel_tol = -1.0,
                                            double condition_warning = 1e12);
/// Same update with a precomputed error model.
ProcessReconstruction second_update_process(const ProcessReconstruction& rec,
                                            const std::vector<Index>& cells, const Vector& z,
                                            const ExtentErrorModel& err,
                                            double pinv_rel_tol = -1.0,
                                            double condition_warning = 1e12);

/// The SIC stages as a function of the temperature field.
struct SicPipeline {
  RealityProcessSpec spec;
  hier::Population pop;
  std::optional<ExtentObservations> extent;

  void prepare();  // caches the error model
  ProcessReconstruction run(const Vector& x_star) const;

  std::optional<ExtentErrorModel> error;
  std::vector<Index> cells;
};

struct SampleOptions {
  Index count = 24;
  std::uint64_t seed = 0;
  double bound = 3.0;
  bool scalar_z = false;
};

struct PlausibleSample {
  Vector x_sample;
  Vector y_sample;  // clamped to [0, 1]
  std::uint64_t seed = 0;
  Index draw = 0;
  Vector z_draws;  // SST draws followed by SIC draws
};

/// Uniform draws on (-bound, bound) from a counter-based stream keyed by
/// (seed, draw).
class DrawStream {
 public:
  DrawStream(std::uint64_t seed, std::uint64_t draw);
  double uniform();  // [0, 1)
  Vector box(Index count, double bound);

 private:
  std::uint64_t state_;
};

/// Draws from the box of half-width bound * sd around the adjusted means:
/// SST first, then SIC conditional on the sampled SST. Without a SIC
/// pipeline only temperature is sampled.
std::vector<PlausibleSample> sample_plausible(const field::FieldReconstruction& sst,
                                              const SicPipeline* sic, const SampleOptions& opt);

}  // namespace coex::process
