#pragma once

// Text interchange formats. All numbers are written with 17 significant
// digits so a write followed by a read reproduces every double exactly.
//
// FieldBundle:
//   # field: sst
//   # units: degC
//   # m: 3
//   # n: 2
//   # p: 16
//   # grid: free text
//   member_id,month_index,lat,lon,value
//   ...
// Members and locations are ordered by first appearance; month_index runs
// 1..n. The lattice must be complete and free of duplicates.
//
// ObservationTable: lat,lon,value,sd,season,weights,bias_block
//   season is annual, summer_NH, summer_SH or custom; custom rows give n
//   ';'-separated time weights. An empty bias_block assigns the block from
//   the regional rule; "none" leaves the row unblocked.
//
// ExtentTable: lat,lon,inside with inside in {0,1}.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coex/coex_field.hpp"
#include "coex/linalg.hpp"

namespace coex::io {

struct FieldBundle {
  std::string field = "field";
  std::string units;
  std::string grid;
  field::FieldEnsemble ensemble;
};

FieldBundle load_field_bundle(const std::filesystem::path& path);
void write_field_bundle(const std::filesystem::path& path, const FieldBundle& bundle);

enum class Season { kAnnual, kSummerNH, kSummerSH, kCustom };

struct ObservationRecord {
  double lat = 0.0;
  double lon = 0.0;
  double value = 0.0;
  double sd = 1.0;
  Season season = Season::kAnnual;
  std::vector<double> weights;
  std::optional<std::string> bias_block;  // nullopt: assign by rule
  bool unblocked = false;                 // "none"
};

std::vector<ObservationRecord> load_observation_table(const std::filesystem::path& path);
void write_observation_table(const std::filesystem::path& path,
                             const std::vector<ObservationRecord>& rows);

struct ObservationOptions {
  int neighbours = 4;
  double block_bias_mean = 2.0;
  field::NordicRule nordic;
};

/// Turns table rows into weighted observations on the grid.
field::ObservationSet build_observations(const std::vector<ObservationRecord>& rows,
                                         std::span<const GeoLocation> grid, Index n,
                                         const ObservationOptions& opt);

struct ExtentRecord {
  double lat = 0.0;
  double lon = 0.0;
  int inside = 0;
};

std::vector<ExtentRecord> load_extent_table(const std::filesystem::path& path);
void write_extent_table(const std::filesystem::path& path, const std::vector<ExtentRecord>& rows);

/// Indicator over the grid; every grid location must appear in the table.
Vector extent_indicator(const std::vector<ExtentRecord>& rows, std::span<const GeoLocation> grid);

/// Per-month grid table: lat,lon,mean,variance.
void write_month_table(const std::filesystem::path& path, std::span<const GeoLocation> grid,
                       const Vector& mean, const Vector& variance, Index month);

std::string format_double(double v);
double parse_double(const std::string& text, const std::string& where);
std::vector<std::string> split(const std::string& line, char sep);
std::string trim(const std::string& s);

std::string read_file(const std::filesystem::path& path);
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace coex::io
