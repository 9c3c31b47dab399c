#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "tempdir.hpp"

#include "coex/errors.hpp"
#include "coex/io.hpp"

using namespace coex;
using namespace coex::io;
using namespace testing;

namespace {

const std::filesystem::path kFixtures = COEX_FIXTURE_DIR;

const char* kHeader =
    "# field: sst\n# units: degC\n# m: 2\n# n: 1\n# p: 2\n"
    "member_id,month_index,lat,lon,value\n";

}  // namespace

TEST_SUITE("io") {

TEST_CASE("fixture bundle loads with exact values") {
  FieldBundle b = load_field_bundle(kFixtures / "sst.csv");
  const auto& e = b.ensemble;
  CHECK(b.field == "sst");
  CHECK(b.units == "degC");
  REQUIRE(e.m() == 3);
  REQUIRE(e.n() == 3);
  REQUIRE(e.p() == 16);
  CHECK(e.labels[0] == "alpha");
  CHECK(e.labels[2] == "charlie");
  for (Index i = 0; i < 3; ++i)
    for (Index t = 0; t < 3; ++t)
      for (Index s = 0; s < 16; ++s) {
        const double lat = e.locations[s].lat;
        const double expect = 20.0 - 0.3 * std::abs(lat) + 0.25 * i + 0.5 * t + 0.125 * (s % 4);
        CHECK(e.members[i](t * 16 + s) == doctest::Approx(expect).epsilon(1e-15));
      }
  FieldBundle sic = load_field_bundle(kFixtures / "sic.csv");
  CHECK(sic.ensemble.members[0].minCoeff() >= 0.0);
  CHECK(sic.ensemble.members[0].maxCoeff() <= 1.0);
}

TEST_CASE("bundle schema errors") {
  TempDir dir;
  write_text(dir / "empty.csv", "");
  CHECK_THROWS_AS(load_field_bundle(dir / "empty.csv"), SchemaError);

  write_text(dir / "dup.csv", std::string(kHeader) +
                                  "a,1,0,0,1\na,1,0,10,2\nb,1,0,0,3\nb,1,0,0,4\n");
  try {
    load_field_bundle(dir / "dup.csv");
    FAIL("expected a schema error");
  } catch (const SchemaError& err) {
    CHECK(std::string(err.what()).find("b") != std::string::npos);
  }

  write_text(dir / "missing.csv", std::string(kHeader) + "a,1,0,0,1\na,1,0,10,2\nb,1,0,0,3\n");
  CHECK_THROWS_AS(load_field_bundle(dir / "missing.csv"), SchemaError);

  write_text(dir / "nan.csv", std::string(kHeader) + "a,1,0,0,nan\na,1,0,10,2\nb,1,0,0,3\nb,1,0,10,4\n");
  CHECK_THROWS_AS(load_field_bundle(dir / "nan.csv"), ParseError);

  write_text(dir / "meta.csv", "# m: 5\nmember_id,month_index,lat,lon,value\na,1,0,0,1\nb,1,0,0,1\n");
  CHECK_THROWS_AS(load_field_bundle(dir / "meta.csv"), SchemaError);

  write_text(dir / "lat.csv", "member_id,month_index,lat,lon,value\na,1,95,0,1\nb,1,95,0,1\n");
  CHECK_THROWS_AS(load_field_bundle(dir / "lat.csv"), SchemaError);

  CHECK_THROWS_AS(load_field_bundle(dir / "absent.csv"), IoError);
}

TEST_CASE("bundle round trip is exact") {
  TempDir dir;
  FieldBundle b;
  b.field = "x";
  b.units = "u";
  b.grid = "random";
  b.ensemble.months = 3;
  b.ensemble.locations = sphere_points(5);
  b.ensemble.labels = {"m0", "m1"};
  for (int i = 0; i < 2; ++i) {
    Vector v = random_vector(15);
    v(0) = 1.0 / 3.0;
    v(1) = -1e-300;
    v(2) = 6.02214076e23;
    b.ensemble.members.push_back(v);
  }
  write_field_bundle(dir / "b.csv", b);
  FieldBundle r = load_field_bundle(dir / "b.csv");
  for (int i = 0; i < 2; ++i) CHECK((r.ensemble.members[i].array() == b.ensemble.members[i].array()).all());
  for (Index s = 0; s < 5; ++s) {
    CHECK(r.ensemble.locations[s].lat == b.ensemble.locations[s].lat);
    CHECK(r.ensemble.locations[s].lon == b.ensemble.locations[s].lon);
  }
  CHECK(r.ensemble.labels == b.ensemble.labels);
  CHECK(r.units == "u");
}

TEST_CASE("observation table") {
  auto rows = load_observation_table(kFixtures / "obs.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].season == Season::kAnnual);
  CHECK_FALSE(rows[0].bias_block.has_value());
  CHECK(rows[2].season == Season::kCustom);
  CHECK(rows[2].weights.size() == 3);
  CHECK(rows[2].unblocked);
  CHECK(*rows[3].bias_block == "shelf");

  auto grid = load_field_bundle(kFixtures / "sst.csv").ensemble.locations;
  auto obs = build_observations(rows, grid, 3, ObservationOptions{});
  REQUIRE(obs.size() == 4);
  obs.validate(3, 16);
  CHECK(*obs.items[1].bias_block == "nordic");
  CHECK(obs.items[1].bias_mean == 2.0);
  CHECK_FALSE(obs.items[0].bias_block.has_value());
  CHECK_FALSE(obs.items[2].bias_block.has_value());
  CHECK(obs.items[2].weights.time(2) == 0.5);
  CHECK(obs.items[3].bias_mean == 2.0);

  TempDir dir;
  write_observation_table(dir / "o.csv", rows);
  auto back = load_observation_table(dir / "o.csv");
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].value == rows[i].value);
    CHECK(back[i].season == rows[i].season);
    CHECK(back[i].weights == rows[i].weights);
    CHECK(back[i].bias_block == rows[i].bias_block);
    CHECK(back[i].unblocked == rows[i].unblocked);
  }
}

TEST_CASE("observation table errors") {
  TempDir dir;
  const std::string head = "lat,lon,value,sd,season,weights,bias_block\n";
  write_text(dir / "sd.csv", head + "0,0,1,0,annual,,\n");
  CHECK_THROWS_AS(load_observation_table(dir / "sd.csv"), SchemaError);
  write_text(dir / "season.csv", head + "0,0,1,1,winter,,\n");
  CHECK_THROWS_AS(load_observation_table(dir / "season.csv"), SchemaError);
  write_text(dir / "w.csv", head + "0,0,1,1,custom,0.5;0.25;0.25,\n");
  auto rows = load_observation_table(dir / "w.csv");
  auto grid = sphere_points(4);
  CHECK_THROWS_AS(build_observations(rows, grid, 2, ObservationOptions{}), SchemaError);
  write_text(dir / "summer.csv", head + "10,0,1,1,summer_NH,,\n");
  CHECK_THROWS_AS(build_observations(load_observation_table(dir / "summer.csv"), grid, 2,
                                     ObservationOptions{}),
                  SchemaError);
}

TEST_CASE("extent table") {
  auto grid = load_field_bundle(kFixtures / "sst.csv").ensemble.locations;
  auto rows = load_extent_table(kFixtures / "extent.csv");
  Vector ind = extent_indicator(rows, grid);
  for (Index s = 0; s < 16; ++s) CHECK(ind(s) == (std::abs(grid[s].lat) == 70.0 ? 1.0 : 0.0));
  rows.pop_back();
  CHECK_THROWS_AS(extent_indicator(rows, grid), SchemaError);
  TempDir dir;
  write_text(dir / "e.csv", "lat,lon,inside\n0,0,2\n");
  CHECK_THROWS_AS(load_extent_table(dir / "e.csv"), SchemaError);
}

TEST_CASE("number formatting") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-310, 1e300, 0.0}) CHECK(parse_double(format_double(v), "t") == v);
  CHECK_THROWS_AS(parse_double("inf", "t"), ParseError);
  CHECK_THROWS_AS(parse_double("1.5x", "t"), ParseError);
  CHECK(trim("  a b \r") == "a b");
  CHECK(split("a,,b", ',').size() == 3);
}

TEST_CASE("month tables") {
  TempDir dir;
  auto grid = sphere_points(3);
  Vector mean = Vector::LinSpaced(6, 0, 5), var = Vector::Zero(6);
  write_month_table(dir / "t.csv", grid, mean, var, 1);
  const std::string text = read_file(dir / "t.csv");
  CHECK(text.rfind("lat,lon,mean,variance\n", 0) == 0);
  CHECK(text.find(",3,0\n") != std::string::npos);
  CHECK(text.find(",0,0\n") == std::string::npos);
  CHECK(hash_file(dir / "t.csv") == hash_file(dir / "t.csv"));
}

}
