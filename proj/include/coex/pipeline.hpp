#pragma once

// End-to-end reconstruction: the temperature field first, then sea ice
// conditional on it, then outputs, diagnostics and plausible samples.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coex/coex_field.hpp"
#include "coex/coex_process.hpp"
#include "coex/config.hpp"
#include "coex/hier_process.hpp"
#include "coex/io.hpp"

namespace coex::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct Inputs {
  io::FieldBundle sst;
  std::optional<io::FieldBundle> sic;
  std::vector<io::ObservationRecord> obs;
  std::optional<std::vector<io::ExtentRecord>> extent;

  static Inputs load(const config::RunConfig& cfg);
  void validate() const;
};

struct SicSettings {
  basis::ISplineBasis splines;
  double pca_energy = 0.95;
  basis::HeteroParams hetero;
  double beta_alpha2 = 1.0;
  basis::WendlandParams discrepancy{0.3, 4.0, 6.0};
  double dist_scale = 1.0;
  double projection_tol = 1e-10;

  static SicSettings from(const config::RunConfig& cfg);
};

/// Everything learnt from the paired ensembles about sea ice as a function
/// of temperature.
struct SicModel {
  std::vector<Matrix> member_splines;  // Psi(X_i), compact
  std::vector<Vector> theta_hats;
  basis::SpatialBasis pca;
  std::vector<hier::GroupData> groups;
  hier::BetaHatSet beta;
  std::vector<Matrix> resid;
  hier::HierPrior prior;
  hier::AdjustedHierarchy adjusted;
  hier::ProjectionReport projection;
  process::SicPipeline pipeline;
};

/// Fits the SIC model. Members are paired by position.
SicModel fit_sic_model(const field::FieldEnsemble& sst, const field::FieldEnsemble& sic,
                       const SicSettings& settings,
                       const std::optional<process::ExtentObservations>& extent);

struct StageTime {
  std::string stage;
  double seconds = 0.0;
};

struct PsdRecord {
  std::string quantity;
  double min_eigenvalue = 0.0;
  Index clipped = 0;
  double tol = 0.0;
};

struct Reconstruction {
  config::RunConfig config;
  std::vector<GeoLocation> grid;
  std::vector<std::string> member_labels;
  field::ObservationSet observations;
  KroneckerOp var_MX;
  field::FieldReconstruction sst_ensemble;
  field::FieldReconstruction sst_data;
  std::optional<SicModel> sic;
  std::optional<process::ProcessReconstruction> sic_first;
  std::optional<process::ProcessReconstruction> sic_second;
  std::vector<StageTime> timings;
};

/// Runs every stage; failures are rethrown as StageError naming the stage.
Reconstruction run_reconstruction(const config::RunConfig& cfg, const Inputs& in);

/// Per-month lat,lon,mean,variance tables for each stage of each field and
/// the SST update contribution (lat,lon,update).
std::vector<std::filesystem::path> emit_reconstruction(const Reconstruction& rec,
                                                       const std::filesystem::path& out);

/// Writes the diagnostics/ tables and returns their paths.
std::vector<std::filesystem::path> diagnose(const Reconstruction& rec,
                                            const std::filesystem::path& out);

std::vector<process::PlausibleSample> draw_samples(const Reconstruction& rec, Index count,
                                                   std::uint64_t seed);
std::vector<std::filesystem::path> write_samples(const Reconstruction& rec,
                                                 const std::vector<process::PlausibleSample>& s,
                                                 const std::filesystem::path& out);

struct Manifest {
  std::string version = kVersion;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> input_hashes;
  std::uint64_t seed = 0;
  std::vector<StageTime> timings;
  std::vector<std::string> outputs;
};

Manifest make_manifest(const std::filesystem::path& config_path, const config::RunConfig& cfg);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
/// Throws SchemaError when the config or inputs no longer match the run.
void verify_manifest(const Manifest& recorded, const Manifest& current);

std::string hex64(std::uint64_t v);

// Verbs of the command line tool. Return the process exit code.
int fit_command(const std::filesystem::path& config_path, const config::RunConfig& cfg);
int sample_command(const std::filesystem::path& config_path, const config::RunConfig& cfg);
int diagnose_command(const std::filesystem::path& config_path, const config::RunConfig& cfg);
int validate_command(const config::RunConfig& cfg);

}  // namespace coex::pipeline
