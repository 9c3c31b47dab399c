#include "coex/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "coex/errors.hpp"

namespace coex::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_double(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (t.empty() || res.ec != std::errc{} || res.ptr != last) {
    throw ParseError(where + ": cannot parse number '" + t + "'");
  }
  if (!std::isfinite(v)) throw ParseError(where + ": non-finite value '" + t + "'");
  return v;
}

namespace {

int parse_int(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  int v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size()) {
    throw ParseError(where + ": cannot parse integer '" + t + "'");
  }
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void check_header(const std::string& line, const std::string& expected,
                  const std::filesystem::path& path) {
  std::string got;
  for (const auto& f : split(line, ',')) got += (got.empty() ? "" : ",") + f;
  if (got != expected) {
    throw SchemaError(path.string() + ": expected header '" + expected + "', got '" + line + "'");
  }
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

// Exact coordinate key after longitude wrapping.
std::pair<double, double> coord_key(double lat, double lon) {
  const GeoLocation g = make_location(lat, lon);
  return {g.lat, g.lon};
}

}  // namespace

FieldBundle load_field_bundle(const std::filesystem::path& path) {
  auto in = open_input(path);
  FieldBundle b;
  std::map<std::string, std::string> meta;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto colon = t.find(':');
      if (colon != std::string::npos) {
        meta[trim(t.substr(1, colon - 1))] = trim(t.substr(colon + 1));
      }
      continue;
    }
    check_header(t, "member_id,month_index,lat,lon,value", path);
    have_header = true;
    break;
  }
  if (!have_header) throw SchemaError(path.string() + ": empty field bundle");
  if (meta.count("field")) b.field = meta["field"];
  if (meta.count("units")) b.units = meta["units"];
  if (meta.count("grid")) b.grid = meta["grid"];

  struct Rec {
    std::size_t member, loc;
    int month;
    double value;
  };
  std::vector<Rec> recs;
  std::map<std::string, std::size_t> member_ix;
  std::vector<std::string> member_ids;
  std::map<std::pair<double, double>, std::size_t> loc_ix;
  std::vector<GeoLocation> locs;
  int max_month = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = split(t, ',');
    if (f.size() != 5) throw SchemaError(where(path, lineno) + ": expected 5 fields");
    if (f[0].empty()) throw SchemaError(where(path, lineno) + ": empty member_id");
    const int month = parse_int(f[1], where(path, lineno));
    const double lat = parse_double(f[2], where(path, lineno));
    const double lon = parse_double(f[3], where(path, lineno));
    const double value = parse_double(f[4], where(path, lineno));
    if (month < 1) throw SchemaError(where(path, lineno) + ": month_index must be >= 1");
    auto [mit, mnew] = member_ix.emplace(f[0], member_ids.size());
    if (mnew) member_ids.push_back(f[0]);
    GeoLocation g;
    try {
      g = make_location(lat, lon);
    } catch (const InvalidInput& e) {
      throw SchemaError(where(path, lineno) + ": " + e.what());
    }
    auto [lit, lnew] = loc_ix.emplace(std::make_pair(g.lat, g.lon), locs.size());
    if (lnew) locs.push_back(g);
    max_month = std::max(max_month, month);
    recs.push_back({mit->second, lit->second, month, value});
  }
  if (recs.empty()) throw SchemaError(path.string() + ": field bundle has no records");

  const std::size_t m = member_ids.size();
  const std::size_t p = locs.size();
  const std::size_t n = static_cast<std::size_t>(max_month);
  auto expect = [&](const char* key, std::size_t got) {
    if (meta.count(key) && parse_int(meta[key], path.string() + " header " + key) !=
                               static_cast<int>(got)) {
      throw SchemaError(path.string() + ": header " + key + " = " + meta[key] +
                        " but the records give " + std::to_string(got));
    }
  };
  expect("m", m);
  expect("n", n);
  expect("p", p);

  std::vector<Vector> members(m, Vector::Constant(static_cast<Index>(n * p), std::nan("")));
  std::vector<char> seen(m * n * p, 0);
  auto key_text = [&](std::size_t mi, int month, std::size_t li) {
    return "(member " + member_ids[mi] + ", month " + std::to_string(month) + ", lat " +
           format_double(locs[li].lat) + ", lon " + format_double(locs[li].lon) + ")";
  };
  for (const auto& r : recs) {
    const std::size_t cell = (r.member * n + static_cast<std::size_t>(r.month - 1)) * p + r.loc;
    if (seen[cell]) throw SchemaError(path.string() + ": duplicate record " + key_text(r.member, r.month, r.loc));
    seen[cell] = 1;
    members[r.member](static_cast<Index>((r.month - 1) * p + r.loc)) = r.value;
  }
  for (std::size_t mi = 0; mi < m; ++mi) {
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t li = 0; li < p; ++li) {
        if (!seen[(mi * n + t) * p + li]) {
          throw SchemaError(path.string() + ": missing record " +
                            key_text(mi, static_cast<int>(t + 1), li));
        }
      }
    }
  }
  b.ensemble.members = std::move(members);
  b.ensemble.months = static_cast<Index>(n);
  b.ensemble.locations = std::move(locs);
  b.ensemble.labels = std::move(member_ids);
  return b;
}

void write_field_bundle(const std::filesystem::path& path, const FieldBundle& b) {
  const auto& e = b.ensemble;
  e.validate(1);
  auto out = open_output(path);
  out << "# field: " << b.field << "\n# units: " << b.units << "\n# m: " << e.m()
      << "\n# n: " << e.n() << "\n# p: " << e.p() << "\n# grid: " << b.grid << "\n";
  out << "member_id,month_index,lat,lon,value\n";
  for (Index i = 0; i < e.m(); ++i) {
    const std::string id = e.labels.empty() ? "m" + std::to_string(i + 1)
                                            : e.labels[static_cast<std::size_t>(i)];
    for (Index t = 0; t < e.n(); ++t) {
      for (Index s = 0; s < e.p(); ++s) {
        const auto& g = e.locations[static_cast<std::size_t>(s)];
        out << id << ',' << (t + 1) << ',' << format_double(g.lat) << ',' << format_double(g.lon)
            << ',' << format_double(e.members[static_cast<std::size_t>(i)](t * e.p() + s)) << '\n';
      }
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<ObservationRecord> load_observation_table(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<ObservationRecord> rows;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!have_header) {
      check_header(t, "lat,lon,value,sd,season,weights,bias_block", path);
      have_header = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 7) throw SchemaError(where(path, lineno) + ": expected 7 fields");
    ObservationRecord r;
    const std::string w = where(path, lineno);
    r.lat = parse_double(f[0], w);
    r.lon = parse_double(f[1], w);
    r.value = parse_double(f[2], w);
    r.sd = parse_double(f[3], w);
    if (!(r.sd > 0.0)) throw SchemaError(w + ": sd must be positive");
    if (std::abs(r.lat) > 90.0) throw SchemaError(w + ": latitude out of range");
    if (f[4] == "annual") {
      r.season = Season::kAnnual;
    } else if (f[4] == "summer_NH") {
      r.season = Season::kSummerNH;
    } else if (f[4] == "summer_SH") {
      r.season = Season::kSummerSH;
    } else if (f[4] == "custom") {
      r.season = Season::kCustom;
      if (f[5].empty()) throw SchemaError(w + ": custom season needs weights");
      for (const auto& x : split(f[5], ';')) r.weights.push_back(parse_double(x, w));
    } else {
      throw SchemaError(w + ": unknown season '" + f[4] + "'");
    }
    if (r.season != Season::kCustom && !f[5].empty()) {
      throw SchemaError(w + ": weights are only allowed for the custom season");
    }
    if (f[6] == "none") {
      r.unblocked = true;
    } else if (!f[6].empty()) {
      r.bias_block = f[6];
    }
    rows.push_back(std::move(r));
  }
  if (!have_header) throw SchemaError(path.string() + ": empty observation table");
  return rows;
}

void write_observation_table(const std::filesystem::path& path,
                             const std::vector<ObservationRecord>& rows) {
  auto out = open_output(path);
  out << "lat,lon,value,sd,season,weights,bias_block\n";
  for (const auto& r : rows) {
    static const char* names[] = {"annual", "summer_NH", "summer_SH", "custom"};
    std::string w;
    for (double x : r.weights) w += (w.empty() ? "" : ";") + format_double(x);
    out << format_double(r.lat) << ',' << format_double(r.lon) << ',' << format_double(r.value)
        << ',' << format_double(r.sd) << ',' << names[static_cast<int>(r.season)] << ',' << w << ','
        << (r.unblocked ? "none" : r.bias_block.value_or("")) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

field::ObservationSet build_observations(const std::vector<ObservationRecord>& rows,
                                         std::span<const GeoLocation> grid, Index n,
                                         const ObservationOptions& opt) {
  field::ObservationSet set;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    field::Observation o;
    o.location = make_location(r.lat, r.lon);
    o.value = r.value;
    o.sd = r.sd;
    if ((r.season == Season::kSummerNH || r.season == Season::kSummerSH) && n != 12) {
      throw SchemaError("observation " + std::to_string(i + 1) +
                        ": summer seasons need 12 months, the field has " + std::to_string(n));
    }
    switch (r.season) {
      case Season::kAnnual: o.weights.time = field::annual_weights(n); break;
      case Season::kSummerNH: o.weights.time = field::summer_weights(n, true); break;
      case Season::kSummerSH: o.weights.time = field::summer_weights(n, false); break;
      case Season::kCustom:
        if (static_cast<Index>(r.weights.size()) != n) {
          throw SchemaError("observation " + std::to_string(i + 1) + ": custom weights need " +
                            std::to_string(n) + " entries");
        }
        o.weights.time = Eigen::Map<const Vector>(r.weights.data(), n);
        break;
    }
    o.weights.space = field::interpolation_weights(o.location, grid, opt.neighbours);
    if (r.bias_block) {
      o.bias_block = r.bias_block;
    } else if (!r.unblocked && opt.nordic.contains(o.location)) {
      o.bias_block = opt.nordic.label;
    }
    if (o.bias_block) o.bias_mean = opt.block_bias_mean;
    set.items.push_back(std::move(o));
  }
  return set;
}

std::vector<ExtentRecord> load_extent_table(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<ExtentRecord> rows;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!have_header) {
      check_header(t, "lat,lon,inside", path);
      have_header = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 3) throw SchemaError(where(path, lineno) + ": expected 3 fields");
    ExtentRecord r;
    r.lat = parse_double(f[0], where(path, lineno));
    r.lon = parse_double(f[1], where(path, lineno));
    r.inside = parse_int(f[2], where(path, lineno));
    if (r.inside != 0 && r.inside != 1) throw SchemaError(where(path, lineno) + ": inside must be 0 or 1");
    rows.push_back(r);
  }
  if (!have_header) throw SchemaError(path.string() + ": empty extent table");
  return rows;
}

void write_extent_table(const std::filesystem::path& path, const std::vector<ExtentRecord>& rows) {
  auto out = open_output(path);
  out << "lat,lon,inside\n";
  for (const auto& r : rows) {
    out << format_double(r.lat) << ',' << format_double(r.lon) << ',' << r.inside << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Vector extent_indicator(const std::vector<ExtentRecord>& rows, std::span<const GeoLocation> grid) {
  std::map<std::pair<double, double>, int> flags;
  for (const auto& r : rows) {
    const auto key = coord_key(r.lat, r.lon);
    auto [it, fresh] = flags.emplace(key, r.inside);
    if (!fresh && it->second != r.inside) {
      throw SchemaError("extent table: conflicting flags at lat " + format_double(r.lat) +
                        ", lon " + format_double(r.lon));
    }
  }
  Vector out(static_cast<Index>(grid.size()));
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const auto it = flags.find({grid[s].lat, grid[s].lon});
    if (it == flags.end()) {
      throw SchemaError("extent table does not cover grid location lat " +
                        format_double(grid[s].lat) + ", lon " + format_double(grid[s].lon));
    }
    out(static_cast<Index>(s)) = it->second;
  }
  return out;
}

void write_month_table(const std::filesystem::path& path, std::span<const GeoLocation> grid,
                       const Vector& mean, const Vector& variance, Index month) {
  const Index p = static_cast<Index>(grid.size());
  auto out = open_output(path);
  out << "lat,lon,mean,variance\n";
  for (Index s = 0; s < p; ++s) {
    const auto& g = grid[static_cast<std::size_t>(s)];
    out << format_double(g.lat) << ',' << format_double(g.lon) << ','
        << format_double(mean(month * p + s)) << ',' << format_double(variance(month * p + s))
        << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return fnv1a64(s.data(), s.size());
}

}  // namespace coex::io
