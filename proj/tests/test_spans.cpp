#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "s3d/error.hpp"
#include "s3d/spans.hpp"

using namespace s3d;

namespace {

const std::vector<double> kRatios{0.25, 0.5, 0.75, 1.0};

std::size_t count(std::vector<int> layers, std::vector<double> ratios) {
  return tile_default_spans({std::move(layers), std::move(ratios)}).size();
}

}  // namespace

TEST_CASE("span counts of the full-scale grid and its ablations") {
  CHECK(count({32, 16, 8, 4, 2, 1}, kRatios) == 252);
  CHECK(count({32, 16, 8, 4, 2, 1}, {1.0}) == 63);
  CHECK(count({32, 16, 8, 4, 2, 1}, {0.5, 1.0}) == 126);
  CHECK(count({32, 16, 8, 4, 2, 1}, {0.5, 0.75, 1.0}) == 189);
  CHECK(count({32, 16, 8, 4, 2}, kRatios) == 248);
  CHECK(count({32, 16, 8, 4}, kRatios) == 240);
  CHECK(count({32, 16, 8}, kRatios) == 224);
  CHECK(count({8, 4, 2, 1}, kRatios) == 60);
}

TEST_CASE("span count equals |ratios| * sum of layer lengths") {
  for (int top = 1; top <= 12; ++top) {
    std::vector<int> layers;
    for (int l = top; l >= 1; l -= 1 + top % 3) layers.push_back(l);
    for (std::size_t nr = 1; nr <= 4; ++nr) {
      std::vector<double> ratios(kRatios.end() - static_cast<long>(nr), kRatios.end());
      const auto sum = std::accumulate(layers.begin(), layers.end(), std::size_t{0});
      CHECK(count(layers, ratios) == nr * sum);
      CHECK(SpanGridConfig{layers, ratios}.span_count() == nr * sum);
    }
  }
}

TEST_CASE("tiling geometry and ordering") {
  const auto g = tile_default_spans({{16, 8}, kRatios});
  // layer 1 (L = 8), cell 3, ratio 0.5
  const std::size_t i = 16 * 4 + 3 * 4 + 1;
  CHECK(g.origins[i].layer == 1);
  CHECK(g.origins[i].cell == 3);
  CHECK(g.origins[i].ratio == 1);
  CHECK(g.spans[i].center == 0.4375);
  CHECK(g.spans[i].length == 0.0625);
  for (std::size_t k = 1; k < g.size(); ++k) {
    const auto& a = g.origins[k - 1];
    const auto& b = g.origins[k];
    CHECK(std::tie(a.layer, a.cell, a.ratio) < std::tie(b.layer, b.cell, b.ratio));
  }
}

TEST_CASE("ratio-1 spans partition the window") {
  for (int L : {32, 16, 8, 5, 3, 1}) {
    const auto g = tile_default_spans({{L}, {1.0}});
    double total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      total += g.spans[i].length;
      for (std::size_t j = i + 1; j < g.size(); ++j) CHECK(temporal_iou(g.spans[i], g.spans[j]) < 1e-12);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    CHECK(std::abs(g.spans.front().start()) < 1e-12);
    CHECK(std::abs(g.spans.back().end() - 1.0) < 1e-12);
  }
}

TEST_CASE("invalid span grids are configuration errors") {
  CHECK_THROWS_AS(tile_default_spans({{}, {1.0}}), ConfigError);
  CHECK_THROWS_AS(tile_default_spans({{4, 0}, {1.0}}), ConfigError);
  CHECK_THROWS_AS(tile_default_spans({{4, 4}, {1.0}}), ConfigError);
  CHECK_THROWS_AS(tile_default_spans({{4}, {}}), ConfigError);
  CHECK_THROWS_AS(tile_default_spans({{4}, {0.5, 0.25}}), ConfigError);
  CHECK_THROWS_AS(tile_default_spans({{4}, {1.5}}), ConfigError);
  CHECK_THROWS_AS(tile_default_spans({{4}, {0.0}}), ConfigError);
}

TEST_CASE("temporal IoU") {
  CHECK(temporal_iou({0.5, 1.0}, {0.5, 1.0}) == 1.0);
  CHECK(temporal_iou(Span::from_interval(0.0, 0.5), Span::from_interval(0.25, 0.75)) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(temporal_iou(Span::from_interval(0.0, 0.2), Span::from_interval(0.5, 0.7)) == 0.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 0; n < 1000; ++n) {
    const Span a{u(rng), 0.01 + u(rng)}, b{u(rng), 0.01 + u(rng)};
    const double v = temporal_iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == temporal_iou(b, a));
    CHECK(std::abs(v - oracle::span_iou(a, b)) < 1e-12);
    CHECK(temporal_iou(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("IoU never grows as the overlap shrinks") {
  // Sliding an interval of fixed length away from a reference both shrinks
  // the intersection and grows the union.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 0; n < 1000; ++n) {
    const double as = u(rng), ae = as + 0.01 + u(rng);
    const double len = 0.01 + u(rng);
    const double bs = as + (ae - as) * u(rng);  // starts inside a, to its right
    const double shift = u(rng);
    const Span a = Span::from_interval(as, ae);
    const Span near = Span::from_interval(bs, bs + len);
    const Span far = Span::from_interval(bs + shift, bs + shift + len);
    CHECK(temporal_iou(a, far) <= temporal_iou(a, near) + 1e-15);
  }
}

TEST_CASE("offset encode/decode") {
  const Offsets z = encode_offsets({0.3, 0.2}, {0.3, 0.2});
  CHECK(z.center == 0.0);
  CHECK(z.length == 0.0);
  const Offsets o = encode_offsets({0.55, 0.5}, {0.5, 0.25});
  CHECK(o.center == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(o.length == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const Span d = decode_offsets({0.2, std::log(2.0)}, {0.5, 0.25});
  CHECK(d.center == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(d.length == doctest::Approx(0.5).epsilon(1e-12));
  const Span same = decode_offsets({0.0, 0.0}, {0.7, 0.1});
  CHECK(same.center == 0.7);
  CHECK(same.length == 0.1);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> c(-0.5, 1.5), l(1e-3, 2.0);
  for (int n = 0; n < 1000; ++n) {
    const Span g{c(rng), l(rng)}, ref{c(rng), l(rng)};
    const Span back = decode_offsets(encode_offsets(g, ref), ref);
    CHECK(std::abs(back.center - g.center) < 1e-9);
    CHECK(std::abs(back.length - g.length) < 1e-9);
  }
}

TEST_CASE("matching: vacuous and identity cases") {
  const auto grid = tile_default_spans({{8, 4, 2, 1}, kRatios});
  const auto empty = match_spans(grid, {}, 3);
  CHECK(empty.positive_count() == 0);
  for (double s : empty.soft_label) CHECK(s == 0.0);

  const std::vector<GroundTruth> one{{grid.spans[13], 2}};
  const auto r = match_spans(grid, one, 3);
  REQUIRE(r.assignment[13].has_value());
  CHECK(r.assignment[13]->truth == 0);
  CHECK(r.assignment[13]->label == 2);
  CHECK(r.soft_label[13] == 1.0);
  CHECK(r.target_offsets[13].center == 0.0);
  CHECK(r.target_offsets[13].length == 0.0);
}

TEST_CASE("matching: IoU of exactly 0.5 is negative") {
  // [0, 0.5] vs [0, 1]: IoU = 0.5 exactly in binary floating point.
  DefaultSpanGrid grid;
  grid.spans = {Span::from_interval(0.0, 0.5), Span::from_interval(0.0, 0.25)};
  grid.origins.resize(2);
  const std::vector<GroundTruth> g{{Span::from_interval(0.0, 1.0), 1}};
  const auto r = match_spans(grid, g, 1);
  CHECK(r.soft_label[0] == 0.5);
  CHECK_FALSE(r.assignment[0].has_value());
  CHECK(r.soft_label[1] == 0.25);
}

TEST_CASE("matching: ties go to the lowest ground-truth index") {
  DefaultSpanGrid grid;
  grid.spans = {Span::from_interval(0.4, 0.6)};
  grid.origins.resize(1);
  const std::vector<GroundTruth> g{{Span::from_interval(0.4, 0.62), 1}, {Span::from_interval(0.38, 0.6), 2}};
  REQUIRE(oracle::span_iou(grid.spans[0], g[0].span) == oracle::span_iou(grid.spans[0], g[1].span));
  const auto r = match_spans(grid, g, 2);
  REQUIRE(r.assignment[0].has_value());
  CHECK(r.assignment[0]->truth == 0);
}

TEST_CASE("matching agrees with the exhaustive oracle") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto grid = tile_default_spans({{8, 4, 2, 1}, kRatios});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GroundTruth> g;
    const int m = static_cast<int>(u(rng) * 6);
    for (int j = 0; j < m; ++j) {
      const double s = u(rng), e = s + (1.0 - s) * u(rng) + 1e-3;
      g.push_back({Span::from_interval(s, std::min(e, 1.0)), 1 + static_cast<int>(u(rng) * 3)});
    }
    const auto got = match_spans(grid, g, 3);
    const auto want = oracle::match(grid.spans, g);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      CHECK(got.soft_label[i] == doctest::Approx(want.soft_label[i]).epsilon(1e-12));
      CHECK(got.assignment[i].has_value() == (got.soft_label[i] > 0.5));
      REQUIRE(got.assignment[i].has_value() == want.assignment[i].has_value());
      if (got.assignment[i]) {
        CHECK(got.assignment[i]->truth == want.assignment[i]->truth);
        CHECK(got.assignment[i]->label == want.assignment[i]->label);
        CHECK(got.target_offsets[i].center == doctest::Approx(want.target_offsets[i].center));
        CHECK(got.target_offsets[i].length == doctest::Approx(want.target_offsets[i].length));
      }
    }
  }
}

TEST_CASE("matching rejects out-of-range labels") {
  const auto grid = tile_default_spans({{4}, {1.0}});
  const std::vector<GroundTruth> zero{{{0.5, 0.5}, 0}};
  const std::vector<GroundTruth> big{{{0.5, 0.5}, 4}};
  CHECK_THROWS_AS(match_spans(grid, zero, 3), InputError);
  CHECK_THROWS_AS(match_spans(grid, big, 3), InputError);
}
