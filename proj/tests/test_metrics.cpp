#include <doctest.h>

#include <random>
#include <set>

#include "costrgcn/errors.hpp"
#include "costrgcn/metrics.hpp"

using namespace costrgcn;

namespace {

constexpr int kN = 9;  // NoGesture index in these fixtures

std::vector<GestureEvent> random_events(std::mt19937_64& rng, std::size_t length, int classes) {
  std::vector<GestureEvent> out;
  std::size_t t = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
  while (true) {
    const std::size_t len = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    if (t + len > length) break;
    out.push_back({std::uniform_int_distribution<int>(0, classes - 1)(rng), t, t + len - 1});
    t += len + std::uniform_int_distribution<std::size_t>(0, 8)(rng);
  }
  return out;
}

std::vector<int> paint(const std::vector<GestureEvent>& events, std::size_t length) {
  std::vector<int> out(length, kN);
  for (const auto& e : events) {
    for (std::size_t t = e.start; t <= e.end; ++t) out[t] = e.label;
  }
  return out;
}

}  // namespace

TEST_CASE("interval IoU oracle") {
  CHECK(temporal_iou({0, 0, 9}, {0, 5, 14}) == doctest::Approx(5.0 / 15.0).epsilon(1e-15));
  CHECK(temporal_iou({0, 0, 3}, {0, 4, 6}) == 0.0);
  CHECK(temporal_iou({0, 2, 2}, {0, 2, 2}) == 1.0);
}

TEST_CASE("exact predictions match every event") {
  const std::vector<GestureEvent> gt{{0, 0, 9}, {1, 12, 20}, {0, 30, 31}};
  const auto r = match_events(gt, gt);
  CHECK(r.total() == ClassCounts{3, 0, 0});
  CHECK(r.matches.size() == 3);
  CHECK(*detection_rate(r.total()) == 1.0);
  CHECK(*false_positive_rate(r.total()) == 0.0);
}

TEST_CASE("no predictions") {
  const std::vector<GestureEvent> gt{{0, 0, 9}, {1, 12, 20}};
  const auto r = match_events({}, gt);
  CHECK(r.total() == ClassCounts{0, 0, 2});
  CHECK(*false_positive_rate(r.total()) == 0.0);
}

TEST_CASE("partial overlap above threshold matches") {
  const std::vector<GestureEvent> p{{0, 0, 9}}, g{{0, 5, 14}};
  CHECK(match_events(p, g, 0.25).total() == ClassCounts{1, 0, 0});
  CHECK(match_events(p, g, 0.34).total() == ClassCounts{0, 1, 1});
  const std::vector<GestureEvent> wrong{{1, 5, 14}};
  CHECK(match_events(p, wrong).total() == ClassCounts{0, 1, 1});
}

TEST_CASE("each ground-truth event is claimed once, earliest first") {
  const std::vector<GestureEvent> g{{0, 0, 9}, {0, 10, 19}};
  const std::vector<GestureEvent> p{{0, 5, 14}};
  const auto r = match_events(p, g);
  REQUIRE(r.matches.size() == 1);
  CHECK(r.matches[0].second == 0);
  CHECK(r.total() == ClassCounts{1, 0, 1});
}

TEST_CASE("rate formulas") {
  CHECK(*detection_rate({9, 0, 1}) == 0.9);
  CHECK(*false_positive_rate({10, 2, 6}) == 0.125);
  CHECK(!detection_rate({0, 3, 0}).has_value());
  CHECK(!false_positive_rate({0, 3, 0}).has_value());
}

TEST_CASE("overlapping or unsorted events are rejected") {
  const std::vector<GestureEvent> overlap{{0, 0, 5}, {1, 5, 8}};
  const std::vector<GestureEvent> unsorted{{0, 10, 12}, {0, 0, 3}};
  CHECK_THROWS_AS(match_events(overlap, {}), InputError);
  CHECK_THROWS_AS(match_events({}, unsorted), InputError);
}

TEST_CASE("jaccard oracles") {
  std::vector<int> gt(20, kN), pr(20, kN);
  for (int t = 0; t <= 9; ++t) gt[t] = 0;
  for (int t = 5; t <= 14; ++t) pr[t] = 0;
  CHECK(*jaccard_index({pr}, {gt}, kN) == doctest::Approx(5.0 / 15.0).epsilon(1e-15));
  CHECK(*jaccard_index({gt}, {gt}, kN) == 1.0);
  std::vector<int> disjoint(20, kN);
  for (int t = 15; t < 20; ++t) disjoint[t] = 0;
  CHECK(*jaccard_index({disjoint}, {gt}, kN) == 0.0);
  CHECK(!jaccard_index({std::vector<int>(4, kN)}, {std::vector<int>(4, kN)}, kN).has_value());
  CHECK_THROWS_AS(jaccard_terms(std::vector<int>(3, kN), std::vector<int>(4, kN), kN), InputError);
}

TEST_CASE("jaccard averages over (sequence, label) pairs") {
  // Sequence 1: label 0 perfect, label 1 predicted but absent from GT.
  // Sequence 2: label 0 half.
  const std::vector<int> g1{0, 0, kN, kN}, p1{0, 0, 1, kN};
  const std::vector<int> g2{0, 0, 0, 0}, p2{0, 0, kN, kN};
  CHECK(*jaccard_index({p1, p2}, {g1, g2}, kN) == doctest::Approx((1.0 + 0.0 + 0.5) / 3.0));
}

TEST_CASE("random fixtures agree with brute-force set arithmetic") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t length = 60;
    const auto g = random_events(rng, length, 3);
    const auto p = random_events(rng, length, 3);
    const auto gl = paint(g, length), pl = paint(p, length);
    // Jaccard via explicit frame sets.
    double sum = 0.0;
    int pairs = 0;
    for (int l = 0; l < 3; ++l) {
      std::set<std::size_t> a, b, inter, uni;
      for (std::size_t t = 0; t < length; ++t) {
        if (gl[t] == l) a.insert(t);
        if (pl[t] == l) b.insert(t);
      }
      for (auto t : a) (b.count(t) ? inter : uni).insert(t);
      uni.insert(a.begin(), a.end());
      uni.insert(b.begin(), b.end());
      if (uni.empty()) continue;
      sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
      ++pairs;
    }
    const auto j = jaccard_index({pl}, {gl}, kN);
    REQUIRE(j.has_value() == (pairs > 0));
    if (pairs > 0) CHECK(*j == sum / pairs);
    // Symmetry.
    if (j) CHECK(*jaccard_index({gl}, {pl}, kN) == *j);
    // Count bookkeeping.
    const auto r = match_events(p, g);
    const auto c = r.total();
    CHECK(c.tp + c.fn == g.size());
    CHECK(c.tp + c.fp == p.size());
    std::set<std::size_t> used;
    for (const auto& [pi, gi] : r.matches) {
      CHECK(used.insert(gi).second);
      CHECK(p[pi].label == g[gi].label);
      CHECK(temporal_iou(p[pi], g[gi]) >= 0.25);
    }
  }
}

TEST_CASE("a spurious prediction never helps") {
  const std::vector<GestureEvent> g{{0, 10, 19}};
  std::vector<GestureEvent> p{{0, 10, 18}};
  const auto before = match_events(p, g).total();
  p.push_back({1, 40, 45});
  const auto after = match_events(p, g).total();
  CHECK(*detection_rate(after) <= *detection_rate(before));
  CHECK(*false_positive_rate(after) >= *false_positive_rate(before));
}

TEST_CASE("report pools counts and is order invariant") {
  const LabelSet labels({"A", "B"});
  const int n = labels.no_gesture();
  SequenceOutcome o1{{0, 0, n, n}, {0, 0, n, n}, {{0, 0, 1}}, {{0, 0, 1}}};
  SequenceOutcome o2{{1, 1, 1, n}, {n, 0, 0, n}, {{1, 0, 2}}, {{0, 1, 2}}};
  const std::vector<SequenceOutcome> a{o1, o2}, b{o2, o1};
  const auto ra = evaluate_outcomes(a, labels), rb = evaluate_outcomes(b, labels);
  CHECK(ra.counts == ClassCounts{1, 1, 1});
  CHECK(*ra.detection_rate == 0.5);
  CHECK(*ra.false_positive_rate == 0.5);
  CHECK(ra.to_json() == rb.to_json());
  CHECK(!ra.per_class.at("B").detection_rate.has_value());
  CHECK(ra.table().find("overall") != std::string::npos);
}
