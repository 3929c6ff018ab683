#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "s3d/error.hpp"
#include "s3d/infer.hpp"

using namespace s3d;

namespace {

std::vector<ScoredSpan> random_candidates(std::mt19937_64& rng, int n, bool ties) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoredSpan> c;
  for (int i = 0; i < n; ++i) {
    const double s = u(rng), e = s + 0.02 + 0.4 * u(rng);
    c.push_back({Span::from_interval(s, e), ties ? std::round(u(rng) * 4) / 4 : u(rng)});
  }
  return c;
}

PredictionVector prediction(int k, double act, int best_class = 1) {
  PredictionVector p;
  p.class_scores = Vector::Zero(k);
  p.class_scores(best_class - 1) = 2.0;
  p.act_score = act;
  return p;
}

}  // namespace

TEST_CASE("NMS basics") {
  CHECK(temporal_nms({}, 0.5).empty());
  const std::vector<ScoredSpan> one{{{0.5, 0.2}, 0.3}};
  CHECK(temporal_nms(one, 0.5).size() == 1);
  const std::vector<ScoredSpan> dup{{{0.5, 0.2}, 0.8}, {{0.5, 0.2}, 0.9}};
  const auto kept = temporal_nms_indices(dup, 0.5);
  CHECK(kept == std::vector<std::size_t>{1});

  const std::vector<ScoredSpan> three{{Span::from_interval(0.2, 0.4), 0.9},
                                      {Span::from_interval(0.25, 0.45), 0.8},
                                      {Span::from_interval(0.7, 0.9), 0.7}};
  CHECK(temporal_iou(three[0].span, three[1].span) == doctest::Approx(0.6));
  CHECK(temporal_nms_indices(three, 0.5) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("NMS agrees with the quadratic oracle and its invariants hold") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_candidates(rng, 1 + trial % 50, trial % 3 == 0);
    const double thr = trial % 5 == 0 ? 0.3 : 0.5;
    const auto got = temporal_nms_indices(c, thr);
    CHECK(got == oracle::nms(c, thr));
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (i) CHECK(c[got[i - 1]].score >= c[got[i]].score);
      for (std::size_t j = i + 1; j < got.size(); ++j) CHECK(temporal_iou(c[got[i]].span, c[got[j]].span) <= thr);
    }
    const auto once = temporal_nms(c, thr);
    const auto twice = temporal_nms(once, thr);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].score == twice[i].score);
  }
}

TEST_CASE("detect_window") {
  const auto grid = tile_default_spans({{4, 2}, {0.5, 1.0}});
  std::vector<PredictionVector> preds(grid.size(), prediction(3, 0.01));
  CHECK(detect_window(preds, grid, 0.05, 0.5).empty());

  preds[3] = prediction(3, 0.9, 2);
  const auto one = detect_window(preds, grid, 0.05, 0.5);
  REQUIRE(one.size() == 1);
  CHECK(one[0].label == 2);
  CHECK(one[0].span.center == grid.spans[3].center);
  CHECK(one[0].span.length == grid.spans[3].length);
  const double softmax = std::exp(2.0) / (std::exp(2.0) + 2.0);
  CHECK(one[0].score == doctest::Approx(0.9 * softmax).epsilon(1e-12));

  // Offsets are decoded against the default span.
  preds[3].offsets = {0.5, std::log(0.5)};
  const auto moved = detect_window(preds, grid, 0.05, 0.5);
  CHECK(moved[0].span.center == doctest::Approx(grid.spans[3].center + 0.5 * grid.spans[3].length));
  CHECK(moved[0].span.length == doctest::Approx(0.5 * grid.spans[3].length));

  // No threshold, no suppression: one candidate per default span.
  std::vector<PredictionVector> all(grid.size(), prediction(3, 0.5));
  CHECK(detect_window(all, grid, 0.0, 1.0).size() == grid.size());

  preds.pop_back();
  CHECK_THROWS_AS(detect_window(preds, grid, 0.05, 0.5), InputError);
}

TEST_CASE("raising the score threshold never adds detections") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto grid = tile_default_spans({{8, 4, 2, 1}, {0.25, 0.5, 0.75, 1.0}});
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PredictionVector> preds;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      auto p = prediction(3, u(rng), 1 + static_cast<int>(u(rng) * 3));
      p.offsets = {u(rng) - 0.5, u(rng) - 0.5};
      preds.push_back(p);
    }
    std::size_t prev = grid.size() + 1;
    for (double thr : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
      const auto d = detect_window(preds, grid, thr, 0.5);
      CHECK(d.size() <= prev);
      prev = d.size();
      for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i - 1].score >= d[i].score);
    }
  }
}

TEST_CASE("window to absolute time") {
  const WindowPlacement full{0.0, 32.0, 8.0};
  const auto a = to_absolute({{0.5, 1.0}, 1, 0.5}, full);
  CHECK(a.start_sec == 0.0);
  CHECK(a.end_sec == 32.0);
  const auto b = to_absolute({{0.25, 0.25}, 2, 0.5}, {64.0, 32.0, 8.0});
  CHECK(b.start_sec == 68.0);
  CHECK(b.end_sec == 76.0);
  CHECK(b.label == 2);
  const auto clipped = to_absolute({{0.0, 0.5}, 1, 0.5}, {10.0, 8.0, 8.0});
  CHECK(clipped.start_sec == 10.0);
  CHECK(clipped.end_sec == 12.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const WindowPlacement p{100 * u(rng), 1 + 20 * u(rng), 8.0};
    const double x = u(rng);
    CHECK(std::abs(p.to_normalized(p.to_seconds(x)) - x) < 1e-9);
  }
}

TEST_CASE("merging windows") {
  const std::vector<std::vector<Detection>> disjoint{{{0, 4, 1, 0.9}}, {{10, 14, 1, 0.8}}, {{20, 22, 2, 0.3}}};
  CHECK(merge_windows(disjoint, 0.5).size() == 3);

  const std::vector<std::vector<Detection>> dup{{{4, 8, 1, 0.6}}, {{4, 8, 1, 0.7}}};
  const auto m = merge_windows(dup, 0.5);
  REQUIRE(m.size() == 1);
  CHECK(m[0].score == 0.7);

  // Overlapping detections of different classes both survive.
  const std::vector<std::vector<Detection>> classes{{{4, 8, 1, 0.6}}, {{4, 8, 2, 0.7}}};
  CHECK(merge_windows(classes, 0.5).size() == 2);

  // Random multi-window case against per-class oracle NMS.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Detection>> per(4);
    std::vector<Detection> flat;
    for (auto& w : per) {
      for (int i = 0; i < 8; ++i) {
        const double s = 40 * u(rng);
        w.push_back({s, s + 1 + 5 * u(rng), 1 + static_cast<int>(u(rng) * 2), u(rng)});
        flat.push_back(w.back());
      }
    }
    const auto got = merge_windows(per, 0.5);
    std::size_t expected = 0;
    for (int label : {1, 2}) {
      std::vector<ScoredSpan> c;
      for (const auto& d : flat)
        if (d.label == label) c.push_back({Span::from_interval(d.start_sec, d.end_sec), d.score});
      expected += oracle::nms(c, 0.5).size();
    }
    CHECK(got.size() == expected);
  }
}

TEST_CASE("window offsets cover the video") {
  CHECK(window_offsets(64, 64, 32) == std::vector<long long>{0});
  CHECK(window_offsets(65, 64, 32) == std::vector<long long>{0, 32});
  CHECK(window_offsets(10, 64, 32) == std::vector<long long>{0});
  CHECK(window_offsets(200, 64, 32).back() + 64 >= 200);
  CHECK_THROWS_AS(window_offsets(100, 64, 0), ConfigError);
}

TEST_CASE("frame extraction pads past the end") {
  TensorD v = TensorD::constant({10, 2, 2, 3}, 1.0);
  const TensorD w = extract_frames(v, 6, 8, 0.5);
  CHECK(w.dim(0) == 8);
  for (Index t = 0; t < 4; ++t) CHECK(w(t, 1, 1, 2) == 1.0);
  for (Index t = 4; t < 8; ++t) {
    CHECK(w(t, 1, 1, 2) >= 0.0);
    CHECK(w(t, 1, 1, 2) < 0.5);
  }
  CHECK(extract_frames(v, 6, 8, 0.5) == w);
  CHECK(extract_frames(v, 6, 8, 0.0)(7, 0, 0, 0) == 0.0);
}

TEST_CASE("detection JSON round trip") {
  const std::vector<std::string> names{"a", "b"};
  const std::vector<Detection> d{{1.0, 2.0, 1, 0.3}, {3.0, 4.5, 2, 0.9}};
  const auto j = detections_to_json("v1", d, names);
  CHECK(j["detections"][0]["score"] == 0.9);  // sorted by score
  CHECK(j["detections"][0]["label"] == "b");
  const auto back = detections_from_json(j, names);
  REQUIRE(back.size() == 1);
  CHECK(back[0].video_id == "v1");
  CHECK(back[0].detections[1].label == 1);
  CHECK(back[0].detections[1].end_sec == 2.0);

  nlohmann::json bad = j;
  bad["detections"][0]["label"] = "zzz";
  CHECK_THROWS_AS(detections_from_json(bad, names), InputError);
  CHECK_THROWS_AS(detections_from_json(nlohmann::json{{"video_id", "x"}}, names), InputError);
}
