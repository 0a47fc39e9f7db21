#include <doctest.h>

#include <cmath>

#include "../support.hpp"
#include "trajforge/core.hpp"
#include "trajforge/error.hpp"

using namespace trajforge;

namespace {

// Brute force: the cell whose [lo, hi) box contains the point.
int scan_cell(double lat, double lon, const GridSpec& g) {
  for (int r = 0; r < g.n_rows; ++r)
    for (int c = 0; c < g.n_cols; ++c) {
      const double lat0 = g.origin_lat + r * g.cell_lat_deg(), lon0 = g.origin_lon + c * g.cell_lon_deg();
      if (lat >= lat0 && lat < lat0 + g.cell_lat_deg() && lon >= lon0 && lon < lon0 + g.cell_lon_deg())
        return r * g.n_cols + c + 1;
    }
  return -1;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Io;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("grid corners and adjacency") {
    const GridSpec g{39.9, 116.3, 1.0, 10, 10};
    CHECK(discretize_location(g.origin_lat, g.origin_lon, g) == 1);
    CHECK(discretize_location(g.origin_lat + 1e-9, g.origin_lon + g.cell_lon_deg() * 1.5, g) == 2);
    const auto [clat, clon] = cell_centroid(24, g);
    CHECK(clat == doctest::Approx(g.origin_lat + 2.5 * g.cell_lat_deg()));
    CHECK(clon == doctest::Approx(g.origin_lon + 3.5 * g.cell_lon_deg()));
    CHECK(discretize_location(clat, clon, g) == 24);
    CHECK(scan_cell(clat, clon, g) == 24);
  }

  TEST_CASE("grid boundaries are lower inclusive") {
    const GridSpec g{39.9, 116.3, 1.0, 3, 3};
    CHECK(discretize_location(g.origin_lat + g.cell_lat_deg(), g.origin_lon, g) == 4);
    CHECK(code_of([&] { (void)discretize_location(g.origin_lat + 3 * g.cell_lat_deg(), g.origin_lon, g); }) ==
          ErrorCode::OutOfBounds);
    CHECK(code_of([&] { (void)discretize_location(g.origin_lat - 1e-9, g.origin_lon, g); }) == ErrorCode::OutOfBounds);
    CHECK(code_of([&] { (void)cell_centroid(0, g); }) == ErrorCode::InvalidCell);
    CHECK(code_of([&] { (void)cell_centroid(10, g); }) == ErrorCode::InvalidCell);
  }

  TEST_CASE("discretize_location agrees with a scan over all cells") {
    const GridSpec g{39.9, 116.3, 0.7, 6, 9};
    Rng rng = make_rng(11, "grid-scan");
    for (int i = 0; i < 2000; ++i) {
      const double lat = g.origin_lat + uniform01(rng) * g.n_rows * g.cell_lat_deg();
      const double lon = g.origin_lon + uniform01(rng) * g.n_cols * g.cell_lon_deg();
      const int expect = scan_cell(lat, lon, g);
      if (expect < 0) continue;  // rounding at the far edge
      REQUIRE(discretize_location(lat, lon, g) == expect);
    }
  }

  TEST_CASE("centroid roundtrip and spacing") {
    const GridSpec g{39.9, 116.3, 1.0, 5, 5};
    for (int c = 1; c <= g.cell_count(); ++c) {
      const auto [lat, lon] = cell_centroid(c, g);
      CHECK(discretize_location(lat, lon, g) == c);
    }
    const auto [a_lat, a_lon] = cell_centroid(12, g);
    const auto [b_lat, b_lon] = cell_centroid(13, g);
    CHECK(std::abs(haversine_km(a_lat, a_lon, b_lat, b_lon) - 1.0) < 1e-3);
  }

  TEST_CASE("time slots") {
    const TimeSpec ts;
    CHECK(ts.slots_per_day() == 96);
    CHECK(discretize_time(0, ts) == 0);
    CHECK(discretize_time(86399, ts) == 95);
    CHECK(discretize_time(34200, ts) == 38);
    for (int s = 0; s < 96; ++s) {
      CHECK(discretize_time(s * 900.0, ts) == s);
      CHECK(discretize_time(s * 900.0 + 899.5, ts) == s);
    }
    CHECK(code_of([&] { (void)discretize_time(86400, ts); }) == ErrorCode::OutOfRange);
    CHECK(code_of([&] { (void)discretize_time(-1, ts); }) == ErrorCode::OutOfRange);
  }

  TEST_CASE("satisfies") {
    const Trajectory t{"t", {{30, 5, 2}}};
    CHECK(satisfies(t, {5, 28, 32, {}}));
    CHECK_FALSE(satisfies(t, {6, 28, 32, {}}));
    CHECK(satisfies(t, {5, 30, 31, {}}));
    CHECK(satisfies(t, {5, 29, 30, {}}));
    CHECK_FALSE(satisfies(t, {5, 31, 40, {}}));
  }

  TEST_CASE("satisfies_all") {
    const Trajectory t{"t", {{30, 5, 2}, {40, 7, 1}}};
    CHECK(satisfies_all(t, {}).all);
    const auto rep = satisfies_all(t, {{}, {{5, 28, 32, {}}, {8, 40, 40, {}}}});
    CHECK_FALSE(rep.all);
    CHECK(rep.per_constraint == std::vector<bool>{true, false});
    // one visit inside two overlapping windows at its location
    CHECK(satisfies_all(t, {{}, {{5, 28, 31, {}}, {5, 30, 35, {}}}}).all);
  }

  TEST_CASE("satisfies is monotone in the window") {
    Rng rng = make_rng(3, "monotone");
    const GridSpec g = tfsupport::small_grid();
    const TimeSpec ts;
    for (int i = 0; i < 500; ++i) {
      const auto t = tfsupport::random_trajectory(rng, g, ts);
      const int lo = static_cast<int>(uniform_int(rng, 0, 95));
      const int hi = static_cast<int>(uniform_int(rng, lo, 95));
      const Constraint c{static_cast<int>(uniform_int(rng, 1, g.cell_count())), lo, hi, {}};
      const Constraint wide{c.location, std::max(0, lo - 3), std::min(95, hi + 3), {}};
      if (satisfies(t, c)) REQUIRE(satisfies(t, wide));
      // exhaustive reading of the definition
      bool expect = false;
      for (const auto& v : t.visits) expect = expect || (v.location == c.location && lo <= v.arrival && v.arrival <= hi);
      REQUIRE(satisfies(t, c) == expect);
    }
  }

  TEST_CASE("validate_trajectory") {
    const TimeSpec ts;
    const GridSpec g = tfsupport::small_grid();
    CHECK(is_valid({"a", {{10, 3, 2}, {13, 3, 2}}}, ts, g));

    auto kinds = [&](const Trajectory& t) {
      std::vector<Violation::Kind> out;
      for (const auto& v : validate_trajectory(t, ts, g)) out.push_back(v.kind);
      return out;
    };
    CHECK(kinds({"b", {{10, 3, 5}, {13, 3, 2}}}) == std::vector{Violation::Kind::Overlap});
    CHECK(kinds({"c", {{95, 3, 3}}}) == std::vector{Violation::Kind::DayBoundary});
    CHECK(kinds({"d", {}}) == std::vector{Violation::Kind::Empty});
    CHECK(kinds({"e", {{10, 21, 1}}}) == std::vector{Violation::Kind::LocationOutOfRange});
    CHECK(kinds({"f", {{20, 1, 1}, {10, 2, 1}}}).front() == Violation::Kind::NotIncreasing);
    CHECK(kinds({"g", {{10, 1, 0}}}).front() == Violation::Kind::DurationOutOfRange);
    CHECK(kinds({"h", {{96, 1, 1}}}).front() == Violation::Kind::ArrivalOutOfRange);
    // all problems are reported, not just the first
    CHECK(kinds({"i", {{10, 0, 5}, {12, 99, 1}}}).size() >= 3);
  }

  TEST_CASE("spec validation") {
    CHECK(code_of([] { GridSpec{0, 0, 0.0, 2, 2}.validate(); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { GridSpec{0, 0, 1.0, 0, 2}.validate(); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { TimeSpec{7}.validate(); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { validate_constraint({1, 5, 4, {}}, tfsupport::small_grid(), TimeSpec{}); }) ==
          ErrorCode::InvalidConfig);
  }
}
