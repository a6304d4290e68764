#include <doctest.h>

#include <algorithm>

#include "spotlight/oracles.hpp"

using namespace spotlight;

TEST_CASE("shrink/expand round trip matches its frozen pass count") {
  // Both the clipping path and the 4x raster oracle land on the same count.
  const oracles::RoundTripStats s = oracles::geometry_round_trip(500);
  CHECK(s.total == 500);
  CHECK(s.polygon_pass == 97);
  CHECK(s.raster_pass == 97);
  CHECK(s.max_disagreement <= 0.02);
}

TEST_CASE("published metric triples") {
  const auto rows = oracles::published_triples();
  CHECK(rows.size() == 14);
  const auto reproduced = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.reproduced; });
  CHECK(reproduced == 10);
}

TEST_CASE("verify suite passes") {
  for (const oracles::CheckResult& r : oracles::verify_suite()) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
