// Writes a synthetic GPS CSV: each user keeps a home, a workplace and a few
// haunts inside the default grid, and pings every few minutes while dwelling
// and while travelling between them.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trajforge/core.hpp"
#include "trajforge/rng.hpp"

using namespace trajforge;

namespace {

struct Place {
  double lat, lon;
};

Place random_place(const GridSpec& grid, Rng& rng) {
  // keep a one-cell margin so jitter stays inside the box
  const double lat = grid.origin_lat + grid.cell_lat_deg() * (1.0 + uniform01(rng) * (grid.n_rows - 2));
  const double lon = grid.origin_lon + grid.cell_lon_deg() * (1.0 + uniform01(rng) * (grid.n_cols - 2));
  return {lat, lon};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic GPS fixture"};
  std::string out = "fixture.csv";
  int users = 20, days = 5;
  std::uint64_t seed = 1;
  double ping_minutes = 5.0;
  GridSpec grid{39.75, 116.15, 1.0, 20, 20};
  app.add_option("out", out, "CSV path");
  app.add_option("--users", users);
  app.add_option("--days", days);
  app.add_option("--seed", seed);
  app.add_option("--ping-minutes", ping_minutes);
  app.add_option("--origin-lat", grid.origin_lat);
  app.add_option("--origin-lon", grid.origin_lon);
  app.add_option("--rows", grid.n_rows);
  app.add_option("--cols", grid.n_cols);
  CLI11_PARSE(app, argc, argv);
  grid.validate();

  std::ofstream os(out, std::ios::binary);
  if (!os) {
    std::cerr << "cannot write " << out << "\n";
    return 2;
  }
  os << "user_id,timestamp,lat,lon\n";
  const double day0 = 1704067200.0;  // 2024-01-01T00:00:00Z
  const double step = ping_minutes * 60.0;
  const double jitter = grid.cell_lat_deg() * 0.02;
  char buf[128];

  for (int u = 0; u < users; ++u) {
    Rng rng = make_rng(seed, "fixture", static_cast<std::uint64_t>(u));
    const Place home = random_place(grid, rng);
    const Place work = random_place(grid, rng);
    std::vector<Place> haunts;
    for (int k = 0; k < 3; ++k) haunts.push_back(random_place(grid, rng));
    const std::string uid = "u" + std::to_string(u);

    for (int d = 0; d < days; ++d) {
      // (place, leave hour) itinerary for the day
      std::vector<std::pair<Place, double>> plan;
      plan.push_back({home, 7.0 + uniform01(rng) * 2.0});
      if (uniform01(rng) < 0.8) plan.push_back({work, 12.0 + uniform01(rng) * 1.0});
      const int extra = static_cast<int>(uniform_int(rng, 0, 2));
      double leave = plan.back().second + 1.0;
      for (int k = 0; k < extra; ++k) {
        leave += 1.0 + uniform01(rng) * 3.0;
        plan.push_back({haunts[uniform_index(rng, haunts.size())], leave});
      }
      if (plan.size() > 1) plan.push_back({work, std::max(leave + 1.0, 17.0 + uniform01(rng))});
      plan.push_back({home, 23.9});

      double t = day0 + d * 86400.0 + 60.0;
      Place at = plan.front().first;
      for (std::size_t k = 0; k < plan.size(); ++k) {
        const auto& [place, leave_h] = plan[k];
        // travel leg, 20 minutes
        if (k > 0) {
          for (int s = 1; s <= 4; ++s) {
            const double f = s / 5.0;
            std::snprintf(buf, sizeof buf, "%s,%.0f,%.6f,%.6f\n", uid.c_str(), t, at.lat + f * (place.lat - at.lat),
                          at.lon + f * (place.lon - at.lon));
            os << buf;
            t += 300.0;
          }
        }
        at = place;
        const double until = day0 + d * 86400.0 + leave_h * 3600.0;
        while (t < until) {
          std::snprintf(buf, sizeof buf, "%s,%.0f,%.6f,%.6f\n", uid.c_str(), t,
                        place.lat + jitter * standard_normal(rng), place.lon + jitter * standard_normal(rng));
          os << buf;
          t += step;
        }
      }
    }
  }
  return 0;
}
