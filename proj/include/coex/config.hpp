#pragma once

// Run configuration. The file is a flat list of `section.key = value` lines;
// '#' starts a comment. Unknown or repeated keys are rejected before any
// computation. Input paths are resolved relative to the config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coex/basis.hpp"
#include "coex/coex_field.hpp"
#include "coex/coex_process.hpp"
#include "coex/io.hpp"

namespace coex::config {

struct RunConfig {
  std::filesystem::path sst_path;
  std::optional<std::filesystem::path> sic_path;
  std::optional<std::filesystem::path> obs_path;
  std::optional<std::filesystem::path> extent_path;
  std::filesystem::path output_dir = "out";

  double field_alpha2 = 1.0;
  basis::WendlandParams field_discrepancy{1.61, 0.92, 6.0};
  double field_dist_scale = 1.0;

  io::ObservationOptions observations;
  bool pseudo_enabled = true;
  field::PseudoObsConfig pseudo;

  basis::ISplineBasis splines;
  double pca_energy = 0.95;
  basis::HeteroParams hetero;
  double beta_alpha2 = 1.0;

  basis::WendlandParams process_discrepancy{0.3, 4.0, 6.0};
  double process_dist_scale = 1.0;

  process::ExtentObservations extent;  // indicator filled from the table

  Index sample_count = 24;
  double sample_bound = 3.0;
  std::uint64_t sample_seed = 0;
  bool sample_scalar_z = false;

  double pinv_rel_tol = -1.0;
  double condition_warning = 1e12;
  double projection_tol = 1e-10;
  double psd_tol = 1e-10;

  std::vector<Index> curve_sites{0};
  Index curve_points = 33;

  void validate() const;
};

/// Documented keys with their defaults, one `key = value` per line.
std::string default_config_text();
std::vector<std::string> known_keys();

RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace coex::config
