#include "coex/config.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "coex/errors.hpp"

namespace coex::config {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&, const std::filesystem::path&)>;

double num(const std::string& v, const std::string& key) {
  try {
    return io::parse_double(v, "config key " + key);
  } catch (const ParseError& e) {
    throw SchemaError(e.what());
  }
}

long long integer(const std::string& v, const std::string& key) {
  const double d = num(v, key);
  if (d != std::floor(d) || std::abs(d) > 9.0e15) {
    throw SchemaError("config key " + key + ": expected an integer, got '" + v + "'");
  }
  return static_cast<long long>(d);
}

bool boolean(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw SchemaError("config key " + key + ": expected true or false, got '" + v + "'");
}

std::filesystem::path path_of(const std::string& v, const std::filesystem::path& base) {
  const std::filesystem::path p(v);
  return p.is_absolute() ? p : base / p;
}

#define NUM(field) [](RunConfig& c, const std::string& v, const auto&) { c.field = num(v, #field); }
#define INT(field) \
  [](RunConfig& c, const std::string& v, const auto&) { c.field = integer(v, #field); }
#define BOOL(field) \
  [](RunConfig& c, const std::string& v, const auto&) { c.field = boolean(v, #field); }

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"input.sst", [](RunConfig& c, const std::string& v, const auto& b) { c.sst_path = path_of(v, b); }},
      {"input.sic", [](RunConfig& c, const std::string& v, const auto& b) { c.sic_path = path_of(v, b); }},
      {"input.obs", [](RunConfig& c, const std::string& v, const auto& b) { c.obs_path = path_of(v, b); }},
      {"input.extent",
       [](RunConfig& c, const std::string& v, const auto& b) { c.extent_path = path_of(v, b); }},
      {"output.dir", [](RunConfig& c, const std::string& v, const auto& b) { c.output_dir = path_of(v, b); }},
      {"field.alpha2", NUM(field_alpha2)},
      {"field.kappa2", NUM(field_discrepancy.kappa2)},
      {"field.range", NUM(field_discrepancy.c)},
      {"field.tau", NUM(field_discrepancy.tau)},
      {"field.dist_scale", NUM(field_dist_scale)},
      {"obs.neighbours", INT(observations.neighbours)},
      {"obs.block_bias_mean", NUM(observations.block_bias_mean)},
      {"nordic.lat_min", NUM(observations.nordic.lat_min)},
      {"nordic.lon_min", NUM(observations.nordic.lon_min)},
      {"nordic.lon_max", NUM(observations.nordic.lon_max)},
      {"pseudo.enabled", BOOL(pseudo_enabled)},
      {"pseudo.count", INT(pseudo.count_per_pole)},
      {"pseudo.latitude", NUM(pseudo.latitude)},
      {"pseudo.value", NUM(pseudo.value)},
      {"pseudo.sd", NUM(pseudo.sd)},
      {"spline.order", INT(splines.order)},
      {"spline.knots",
       [](RunConfig& c, const std::string& v, const auto&) {
         c.splines.interior_knots.clear();
         if (v.empty()) return;
         for (const auto& x : io::split(v, ';')) c.splines.interior_knots.push_back(num(x, "spline.knots"));
       }},
      {"spline.t_min", NUM(splines.t_min)},
      {"spline.t_max", NUM(splines.t_max)},
      {"spline.intercept", BOOL(splines.include_intercept)},
      {"pca.energy", NUM(pca_energy)},
      {"hetero.sigma2_min", NUM(hetero.sigma2_min)},
      {"hetero.sigma2_max", NUM(hetero.sigma2_max)},
      {"hetero.center", NUM(hetero.center)},
      {"hetero.width", NUM(hetero.width)},
      {"beta.alpha2", NUM(beta_alpha2)},
      {"process.kappa2", NUM(process_discrepancy.kappa2)},
      {"process.range", NUM(process_discrepancy.c)},
      {"process.tau", NUM(process_discrepancy.tau)},
      {"process.dist_scale", NUM(process_dist_scale)},
      {"extent.sd_min", NUM(extent.sd_min)},
      {"extent.sd_max", NUM(extent.sd_max)},
      {"extent.length", NUM(extent.length)},
      {"extent.range", NUM(extent.correlation.c)},
      {"extent.tau", NUM(extent.correlation.tau)},
      {"extent.dist_scale", NUM(extent.dist_scale)},
      {"extent.north_month",
       [](RunConfig& c, const std::string& v, const auto&) { c.extent.north_month = integer(v, "extent.north_month") - 1; }},
      {"extent.south_month",
       [](RunConfig& c, const std::string& v, const auto&) { c.extent.south_month = integer(v, "extent.south_month") - 1; }},
      {"sample.count", INT(sample_count)},
      {"sample.bound", NUM(sample_bound)},
      {"sample.seed",
       [](RunConfig& c, const std::string& v, const auto&) {
         const long long s = integer(v, "sample.seed");
         if (s < 0) throw SchemaError("config key sample.seed must be non-negative");
         c.sample_seed = static_cast<std::uint64_t>(s);
       }},
      {"sample.scalar_z", BOOL(sample_scalar_z)},
      {"tol.pinv", NUM(pinv_rel_tol)},
      {"tol.condition", NUM(condition_warning)},
      {"tol.projection", NUM(projection_tol)},
      {"tol.psd", NUM(psd_tol)},
      {"diagnose.curve_sites",
       [](RunConfig& c, const std::string& v, const auto&) {
         c.curve_sites.clear();
         if (v.empty()) return;
         for (const auto& x : io::split(v, ';')) c.curve_sites.push_back(integer(x, "diagnose.curve_sites"));
       }},
      {"diagnose.curve_points", INT(curve_points)},
  };
  return table;
}

#undef NUM
#undef INT
#undef BOOL

void range_check(bool ok, const std::string& what) {
  if (!ok) throw SchemaError("config: " + what);
}

}  // namespace

void RunConfig::validate() const {
  range_check(!sst_path.empty(), "input.sst is required");
  range_check(field_alpha2 > 0.0, "field.alpha2 must be positive");
  range_check(beta_alpha2 > 0.0, "beta.alpha2 must be positive");
  range_check(field_dist_scale > 0.0 && process_dist_scale > 0.0 && extent.dist_scale > 0.0,
              "distance scales must be positive");
  range_check(observations.neighbours >= 1, "obs.neighbours must be at least 1");
  range_check(pseudo.count_per_pole >= 0, "pseudo.count must be non-negative");
  range_check(pseudo.sd > 0.0, "pseudo.sd must be positive");
  range_check(std::abs(pseudo.latitude) <= 90.0, "pseudo.latitude must lie in [-90, 90]");
  range_check(pca_energy > 0.0 && pca_energy <= 1.0, "pca.energy must lie in (0, 1]");
  range_check(sample_count >= 0, "sample.count must be non-negative");
  range_check(sample_bound >= 0.0, "sample.bound must be non-negative");
  range_check(extent.sd_min > 0.0 && extent.sd_max >= extent.sd_min,
              "extent sds must satisfy 0 < sd_min <= sd_max");
  range_check(extent.length > 0.0, "extent.length must be positive");
  range_check(extent.north_month >= 0 && extent.south_month >= 0,
              "extent months are 1-based and must be positive");
  range_check(projection_tol >= 0.0 && psd_tol >= 0.0, "tolerances must be non-negative");
  range_check(condition_warning > 0.0, "tol.condition must be positive");
  range_check(curve_points >= 2, "diagnose.curve_points must be at least 2");
  try {
    field_discrepancy.validate();
    process_discrepancy.validate();
    extent.correlation.validate();
    splines.validate();
    hetero.validate();
  } catch (const InvalidInput& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

std::string default_config_text() {
  const RunConfig c;
  std::ostringstream o;
  auto d = io::format_double;
  std::string knots;
  for (double k : c.splines.interior_knots) knots += (knots.empty() ? "" : ";") + d(k);
  o << "input.sst = sst.csv\n"
    << "# input.sic = sic.csv\n# input.obs = obs.csv\n# input.extent = extent.csv\n"
    << "output.dir = out\n"
    << "field.alpha2 = " << d(c.field_alpha2) << "\nfield.kappa2 = " << d(c.field_discrepancy.kappa2)
    << "\nfield.range = " << d(c.field_discrepancy.c) << "\nfield.tau = " << d(c.field_discrepancy.tau)
    << "\nfield.dist_scale = " << d(c.field_dist_scale)
    << "\nobs.neighbours = " << c.observations.neighbours
    << "\nobs.block_bias_mean = " << d(c.observations.block_bias_mean)
    << "\nnordic.lat_min = " << d(c.observations.nordic.lat_min)
    << "\nnordic.lon_min = " << d(c.observations.nordic.lon_min)
    << "\nnordic.lon_max = " << d(c.observations.nordic.lon_max)
    << "\npseudo.enabled = true\npseudo.count = " << c.pseudo.count_per_pole
    << "\npseudo.latitude = " << d(c.pseudo.latitude) << "\npseudo.value = " << d(c.pseudo.value)
    << "\npseudo.sd = " << d(c.pseudo.sd) << "\nspline.order = " << c.splines.order
    << "\nspline.knots = " << knots << "\nspline.t_min = " << d(c.splines.t_min)
    << "\nspline.t_max = " << d(c.splines.t_max) << "\nspline.intercept = true"
    << "\npca.energy = " << d(c.pca_energy) << "\nhetero.sigma2_min = " << d(c.hetero.sigma2_min)
    << "\nhetero.sigma2_max = " << d(c.hetero.sigma2_max) << "\nhetero.center = " << d(c.hetero.center)
    << "\nhetero.width = " << d(c.hetero.width) << "\nbeta.alpha2 = " << d(c.beta_alpha2)
    << "\nprocess.kappa2 = " << d(c.process_discrepancy.kappa2)
    << "\nprocess.range = " << d(c.process_discrepancy.c)
    << "\nprocess.tau = " << d(c.process_discrepancy.tau)
    << "\nprocess.dist_scale = " << d(c.process_dist_scale)
    << "\nextent.sd_min = " << d(c.extent.sd_min) << "\nextent.sd_max = " << d(c.extent.sd_max)
    << "\nextent.length = " << d(c.extent.length) << "\nextent.range = " << d(c.extent.correlation.c)
    << "\nextent.tau = " << d(c.extent.correlation.tau)
    << "\nextent.dist_scale = " << d(c.extent.dist_scale)
    << "\nextent.north_month = " << c.extent.north_month + 1
    << "\nextent.south_month = " << c.extent.south_month + 1
    << "\nsample.count = " << c.sample_count << "\nsample.bound = " << d(c.sample_bound)
    << "\nsample.seed = " << c.sample_seed << "\nsample.scalar_z = false"
    << "\ntol.pinv = " << d(c.pinv_rel_tol) << "\ntol.condition = " << d(c.condition_warning)
    << "\ntol.projection = " << d(c.projection_tol) << "\ntol.psd = " << d(c.psd_tol)
    << "\ndiagnose.curve_sites = 0\ndiagnose.curve_points = " << c.curve_points << "\n";
  return o.str();
}

RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  cfg.output_dir = base_dir / "out";
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = io::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw SchemaError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = io::trim(t.substr(0, eq));
    const std::string value = io::trim(t.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw SchemaError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw SchemaError("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    }
    it->second(cfg, value, base_dir);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_config_text(text, base);
}

}  // namespace coex::config
