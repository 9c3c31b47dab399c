#pragma once

// The coexchangeable model for a single gridded field.
//
//   X_i = M(X) + R_i(X)          ensemble members, var[R] = alpha2 var[M]
//   X*  = M(X) + U_X             reality
//   Z   = H X* + W               observations
//
// Covariances are Kronecker structured (temporal ⊗ spatial) over a
// time-major field, and the update runs in two stages: by the ensemble
// mean, then by the observations. No stage ever forms an (n*p)^2 matrix.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coex/basis.hpp"
#include "coex/linalg.hpp"

namespace coex::field {

struct FieldEnsemble {
  std::vector<Vector> members;  // each n*p, time-major
  Index months = 0;
  std::vector<GeoLocation> locations;
  std::vector<std::string> labels;

  Index m() const { return static_cast<Index>(members.size()); }
  Index n() const { return months; }
  Index p() const { return static_cast<Index>(locations.size()); }
  void validate(Index min_members = 2) const;
};

/// Second-order specification of the field model. The Kronecker factors
/// describe var[M(X)]; the discrepancy variance is Wendland in space and
/// shares the temporal factor of var[M(X)].
struct CoexFieldSpec {
  double alpha2 = 1.0;
  KroneckerOp var_mean;          // var[M(X)]
  Vector discrepancy_mean;       // E[U_X], n*p (empty means zero)
  basis::WendlandParams discrepancy{1.61, 0.92, 6.0};
  double dist_scale = 1.0;
};

struct Observation {
  double value = 0.0;
  double sd = 1.0;
  double bias_mean = 0.0;
  std::optional<std::string> bias_block;
  GeoLocation location;
  ObservationWeights weights;
  bool pseudo = false;
};

struct ObservationSet {
  std::vector<Observation> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::vector<ObservationWeights> weights() const;
  Vector values() const;
  void validate(Index n, Index p) const;
};

enum class Stage { kEnsembleAdjusted, kDataAdjusted };

struct UpdateDiagnostics {
  double condition_number = 0.0;
  bool ill_conditioned = false;
  Index rank = 0;
};

struct FieldReconstruction {
  Vector mean;          // n*p
  Matrix var_temporal;  // n x n
  Matrix var_spatial;   // p x p
  Stage stage = Stage::kEnsembleAdjusted;
  std::optional<UpdateDiagnostics> diagnostics;

  Index n() const { return var_temporal.rows(); }
  Index p() const { return var_spatial.rows(); }
  KroneckerOp covariance() const { return KroneckerOp{var_temporal, var_spatial}; }
  Vector marginal_variance() const { return covariance().diagonal(); }
};

Vector ensemble_mean(const FieldEnsemble& e);

/// Empirical member covariance S_X, dense (n*p)^2. Small problems only.
Matrix empirical_covariance(const FieldEnsemble& e);

/// var[M(X)] as J ⊗ V_S / (1 + alpha2), where J ⊗ V_S is the Frobenius
/// nearest fit to S_X with the temporal factor fixed to all-ones. V_S is the
/// covariance of the time-averaged members, so S_X is never formed.
KroneckerOp estimate_var_MX(const FieldEnsemble& e, double alpha2);

/// Same scaling, but with both factors free (nearest_kron_psd on S_X).
KroneckerOp estimate_var_MX_unconstrained(const FieldEnsemble& e, double alpha2);

/// alpha2 / (m + alpha2): share of var[M(X)] left after the ensemble update.
double ensemble_shrinkage(double alpha2, Index m);

struct EnsembleSummary {
  Vector mean;  // sample mean of the members
  Index m = 0;
};

/// First stage: E = Xbar + E[U_X]; var = J ⊗ (shrinkage * var[M]_S + var[U_S]).
FieldReconstruction first_update_field(const EnsembleSummary& summary,
                                       std::span<const GeoLocation> locations,
                                       const CoexFieldSpec& spec);
FieldReconstruction first_update_field(const FieldEnsemble& e, const CoexFieldSpec& spec);

// ---- observation construction ---------------------------------------------

Vector annual_weights(Index n);
/// Equal weights over three summer months: Jul-Sep in the north, Jan-Mar in
/// the south. Requires n = 12.
Vector summer_weights(Index n, bool northern);

/// Inverse-distance weights over the `neighbours` nearest grid nodes; a
/// single unit weight when the point sits on a node.
SparseWeights interpolation_weights(const GeoLocation& where,
                                    std::span<const GeoLocation> grid, int neighbours = 4);

struct PseudoObsConfig {
  int count_per_pole = 10;
  double latitude = 80.0;
  double value = -1.92;
  double sd = 0.25;
};

ObservationSet add_pseudo_observations(const ObservationSet& obs, const PseudoObsConfig& config,
                                       std::span<const GeoLocation> grid, Index n);

struct NordicRule {
  double lat_min = 62.0;
  double lon_min = -180.0;
  double lon_max = 180.0;
  std::string label = "nordic";

  bool contains(const GeoLocation& loc) const;
};

struct ErrorModel {
  Vector bias_mean;
  Matrix cov;  // V_D (I + V_B) V_D
};

ErrorModel build_error_model(const ObservationSet& obs);

/// Second stage by the observations. Requires var_temporal = c*J and time
/// weights summing to one, under which the adjusted covariance keeps the
/// form c*J ⊗ var_spatial'.
FieldReconstruction second_update_field(const FieldReconstruction& rec, const ObservationSet& obs,
                                        double pinv_rel_tol = -1.0,
                                        double condition_warning = 1e12);

/// Dense observation operator H (d x n*p), rows time_i ⊗ space_i. Test and
/// diagnostic use only.
Matrix dense_observation_operator(std::span<const ObservationWeights> obs, Index n, Index p);

}  // namespace coex::field
