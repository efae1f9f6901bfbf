#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "costrgcn/errors.hpp"
#include "costrgcn/graph.hpp"
#include "costrgcn/preprocess.hpp"
#include "test_util.hpp"

using namespace costrgcn;

namespace {

SkeletonSequence random_sequence(const HandTopology& topo, std::size_t frames, std::uint64_t seed,
                                 std::vector<Annotation> ann = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<SkeletonFrame> fs;
  for (std::size_t t = 0; t < frames; ++t) {
    SkeletonFrame f(topo.joint_count());
    for (auto& c : f.coords()) c = u(rng);
    fs.push_back(f);
  }
  return SkeletonSequence(topo.joint_count(), fs, std::move(ann));
}

double seq_diff(const SkeletonSequence& a, const SkeletonSequence& b) {
  return max_abs_diff(a.to_tensor(), b.to_tensor());
}

HandTopology path3() { return HandTopology::create(3, {{0, 1}, {1, 2}}); }

// Random spanning tree plus a few chords.
HandTopology random_topology(std::size_t n, std::mt19937_64& rng) {
  std::vector<Edge> edges;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t p = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    edges.push_back({p, i});
    seen.insert({p, i});
  }
  const std::size_t extra = n > 2 ? std::uniform_int_distribution<std::size_t>(0, n / 2)(rng) : 0;
  for (std::size_t e = 0; e < extra; ++e) {
    std::size_t a = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::size_t b = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (seen.insert({a, b}).second) edges.push_back({a, b});
  }
  return HandTopology::create(n, edges);
}

SkeletonFrame random_frame(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SkeletonFrame f(n);
  for (auto& c : f.coords()) c = u(rng);
  return f;
}

}  // namespace

TEST_CASE("default hand topology is a 20-joint tree") {
  const HandTopology t = default_hand_topology();
  CHECK(t.joint_count() == 20);
  CHECK(t.edges().size() == 19);
  CHECK(t.wrist_index() == 0);
}

TEST_CASE("topology validation") {
  CHECK(path3().joint_count() == 3);
  CHECK_THROWS_AS(HandTopology::create(2, {{0, 0}, {0, 1}}), ConfigError);
  CHECK_THROWS_AS(HandTopology::create(2, {{0, 1}, {1, 0}}), ConfigError);
  CHECK_THROWS_AS(HandTopology::create(3, {{0, 1}}), ConfigError);
  CHECK_THROWS_AS(HandTopology::create(2, {{0, 2}}), ConfigError);
}

TEST_CASE("topology json round trip") {
  const HandTopology t = default_hand_topology();
  const HandTopology u = topology_from_json_text(topology_to_json_text(t));
  CHECK(u.edges() == t.edges());
  CHECK(u.wrist_index() == t.wrist_index());
  CHECK_THROWS_AS(topology_from_json_text("{\"joint_count\": 2}"), ConfigError);
}

TEST_CASE("distance partitions") {
  const auto raw = partition_graph(path3(), DistancePartition{2});
  REQUIRE(raw.size() == 3);
  CHECK(max_abs_diff(raw[0], Tensor::identity(3)) == 0.0);
  CHECK(raw[2].at(0, 2) == 1.0);
  CHECK(raw[2].at(0, 1) == 0.0);
  CHECK(raw[1].at(0, 1) == 1.0);
  CHECK(raw[1].at(1, 2) == 1.0);
  CHECK(raw[1].at(0, 2) == 0.0);
}

TEST_CASE("uni labeling") {
  const auto raw = partition_graph(path3(), UniLabeling{});
  REQUIRE(raw.size() == 2);
  CHECK(max_abs_diff(raw[0], Tensor::identity(3)) == 0.0);
  CHECK(max_abs_diff(raw[1], Tensor::matrix({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}})) == 0.0);
}

TEST_CASE("spatial configuration on a star centered at its hub") {
  const HandTopology star = HandTopology::create(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}});
  SkeletonFrame f(5);
  f.set_joint(1, {1, 0, 0});
  f.set_joint(2, {-1, 0, 0});
  f.set_joint(3, {0, 1, 0});
  f.set_joint(4, {0, -1, 0});
  const auto raw = partition_graph(star, SpatialConfiguration{}, f);
  REQUIRE(raw.size() == 3);
  CHECK(max_abs_diff(raw[0], Tensor::identity(5)) == 0.0);
  for (std::size_t leaf = 1; leaf < 5; ++leaf) {
    CHECK(raw[1].at(leaf, 0) == 1.0);  // leaf -> hub is centripetal
    CHECK(raw[2].at(leaf, 0) == 0.0);
    CHECK(raw[2].at(0, leaf) == 1.0);  // hub -> leaf is centrifugal
    CHECK(raw[1].at(0, leaf) == 0.0);
  }
  CHECK_THROWS_AS(partition_graph(star, SpatialConfiguration{}), MissingReferenceError);
}

TEST_CASE("single node normalizes to one") {
  const AdjacencyStack s = normalize_adjacency({Tensor({1, 1})});
  CHECK(s.matrices[0].at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("two-node uni labeling normalization") {
  const HandTopology t = HandTopology::create(2, {{0, 1}});
  const AdjacencyStack s = normalize_adjacency(partition_graph(t, UniLabeling{}));
  // raw+I: 2I and all-ones; D_ii = 4.
  CHECK(s.degree[0] == 4.0);
  CHECK(s.degree[1] == 4.0);
  CHECK(max_abs_diff(s.matrices[0], Tensor::matrix({{0.5, 0}, {0, 0.5}})) < 1e-15);
  CHECK(max_abs_diff(s.matrices[1], Tensor::matrix({{0.25, 0.25}, {0.25, 0.25}})) < 1e-15);
  const AdjacencyStack n = normalize_adjacency(partition_graph(t, UniLabeling{}), false);
  CHECK(n.degree[0] == 2.0);
  CHECK(max_abs_diff(n.matrices[1], Tensor::matrix({{0, 0.5}, {0.5, 0}})) < 1e-15);
}

TEST_CASE("non-binary raw partitions are rejected") {
  CHECK_THROWS_AS(normalize_adjacency({Tensor({2, 2}, 0.5)}), InputError);
}

TEST_CASE("spectral invariant and symmetry over random topologies") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 25)(rng);
    const HandTopology t = random_topology(n, rng);
    const SkeletonFrame f = random_frame(n, rng);
    const std::vector<PartitionStrategy> strategies = {UniLabeling{}, DistancePartition{3},
                                                       SpatialConfiguration{}};
    for (const auto& st : strategies) {
      for (bool add_identity : {true, false}) {
        const AdjacencyStack s = normalize_adjacency(partition_graph(t, st, f), add_identity);
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (const auto& a : s.matrices) {
            for (std::size_t j = 0; j < n; ++j) acc += a.at(i, j) * std::sqrt(s.degree[j]);
          }
          worst = std::max(worst, std::abs(acc - std::sqrt(s.degree[i])));
        }
        CHECK(worst <= 1e-9);
        if (!std::holds_alternative<SpatialConfiguration>(st)) {
          for (const auto& a : s.matrices) {
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < n; ++j) {
                CHECK(a.at(i, j) >= 0.0);
                CHECK(a.at(i, j) == a.at(j, i));
              }
            }
          }
        }
      }
    }
    const auto raw = partition_graph(t, DistancePartition{4});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (const auto& r : raw) s += r.at(i, j);
        CHECK((s == 0.0 || s == 1.0));
      }
    }
  }
}

TEST_CASE("partition names parse") {
  CHECK(partition_name(parse_partition("distance:3")) == "distance:3");
  CHECK(partition_name(parse_partition("uni")) == "uni");
  CHECK(partition_name(parse_partition("spatial")) == "spatial");
  CHECK_THROWS_AS(parse_partition("distance:0"), ConfigError);
  CHECK_THROWS_AS(parse_partition("bogus"), ConfigError);
}

TEST_CASE("normalize_sequence invariances") {
  const HandTopology t = default_hand_topology();
  const SkeletonSequence s = random_sequence(t, 6, 1);
  const SkeletonSequence n = normalize_sequence(s, t);
  std::vector<SkeletonFrame> shifted = s.frames(), doubled = s.frames();
  for (auto& f : shifted) {
    for (std::size_t j = 0; j < 20; ++j) {
      f.coord(j, 0) += 3.0;
      f.coord(j, 1) -= 1.5;
      f.coord(j, 2) += 0.25;
    }
  }
  for (auto& f : doubled) {
    for (auto& c : f.coords()) c *= 2.0;
  }
  CHECK(seq_diff(normalize_sequence(SkeletonSequence(20, shifted), t), n) <= 1e-12);
  CHECK(seq_diff(normalize_sequence(SkeletonSequence(20, doubled), t), n) <= 1e-12);
  CHECK(seq_diff(normalize_sequence(n, t), n) <= 1e-9);
  const Point3 wrist = n.frame(0).joint(0);
  for (double c : wrist) CHECK(std::abs(c) < 1e-15);
  double bones = 0.0;
  for (const auto& [a, b] : t.edges()) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = n.frame(0).coord(a, c) - n.frame(0).coord(b, c);
      d2 += d * d;
    }
    bones += std::sqrt(d2);
  }
  CHECK(bones / t.edges().size() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("all-zero sequence is degenerate") {
  const HandTopology t = default_hand_topology();
  const SkeletonSequence z(20, std::vector<SkeletonFrame>(3, SkeletonFrame(20)));
  CHECK_THROWS_AS(normalize_sequence(z, t), DegenerateSkeletonError);
}

TEST_CASE("random moving") {
  const HandTopology t = default_hand_topology();
  const SkeletonSequence s = random_sequence(t, 10, 3);
  CHECK(seq_diff(random_moving(s, {0, 0, 0}, 5), s) == 0.0);
  CHECK(seq_diff(random_moving(s, {}, 5), random_moving(s, {}, 5)) == 0.0);
  CHECK(seq_diff(random_moving(s, {}, 5), s) > 1e-3);
  const SkeletonSequence r = random_moving(s, {0.3, 0.0, 0.0}, 8);
  for (std::size_t f = 0; f < s.length(); ++f) {
    for (std::size_t a = 0; a < 20; ++a) {
      for (std::size_t b = a + 1; b < 20; ++b) {
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          d0 += std::pow(s.frame(f).coord(a, c) - s.frame(f).coord(b, c), 2);
          d1 += std::pow(r.frame(f).coord(a, c) - r.frame(f).coord(b, c), 2);
        }
        CHECK(std::abs(std::sqrt(d0) - std::sqrt(d1)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("add_noise") {
  const HandTopology t = default_hand_topology();
  const SkeletonSequence s = random_sequence(t, 4, 4);
  CHECK(seq_diff(add_noise(s, 0.0, 1), s) == 0.0);
  CHECK(seq_diff(add_noise(s, 0.001, 1), add_noise(s, 0.001, 1)) == 0.0);
  const SkeletonSequence big = random_sequence(t, 16667, 5);
  const SkeletonSequence noisy = add_noise(big, 0.001, 9);
  double s1 = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < big.length(); ++f) {
    for (std::size_t i = 0; i < 60; ++i) {
      const double d = noisy.frame(f).coords()[i] - big.frame(f).coords()[i];
      s1 += d;
      s2 += d * d;
      ++n;
    }
  }
  CHECK(n >= 1000000);
  const double mean = s1 / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  CHECK(std::abs(sd - 0.001) <= 0.05 * 0.001);
}

TEST_CASE("sliding window augmentation") {
  const HandTopology t = default_hand_topology();
  CHECK(sliding_window_augment(random_sequence(t, 10, 1), 10, 5, 0.5).size() == 1);
  const SkeletonSequence s = random_sequence(t, 30, 2, {{"Circle", 2, 20}});
  const auto w = sliding_window_augment(s, 10, 5, 0.5);
  REQUIRE(w.size() == 5);
  CHECK(w[0].label == "Circle");  // frames 0-9: 8 of 10 inside
  CHECK(w[1].label == "Circle");  // fully inside
  CHECK(w[1].window.length() == 10);
  // frames 16-20 of window [15, 25) are inside: 5/10 reaches 0.5
  CHECK(w[3].label == "Circle");
  CHECK(w[4].label == kNoGesture);
  const SkeletonSequence s2 = random_sequence(t, 20, 3, {{"Circle", 6, 9}});
  CHECK(sliding_window_augment(s2, 10, 10, 0.5)[0].label == kNoGesture);  // 4/10 overlap
}

TEST_CASE("segment_sequences") {
  const HandTopology t = default_hand_topology();
  const SkeletonSequence s = random_sequence(t, 100, 6, {{"A", 10, 30}, {"B", 60, 80}});
  const Segmentation seg = segment_sequences(s);
  REQUIRE(seg.gestures.size() == 2);
  CHECK(seg.gestures[0].label == "A");
  CHECK(seg.gestures[0].window.length() == 21);
  REQUIRE(seg.fragments.size() == 3);
  CHECK(seg.fragments[0].start == 0);
  CHECK(seg.fragments[0].window.length() == 10);
  CHECK(seg.fragments[1].start == 31);
  CHECK(seg.fragments[1].window.length() == 29);
  CHECK(seg.fragments[2].start == 81);
  CHECK(seg.fragments[2].window.length() == 19);
  const SkeletonSequence full = random_sequence(t, 20, 7, {{"A", 0, 9}, {"B", 10, 19}});
  CHECK(segment_sequences(full).fragments.empty());
  const SkeletonSequence three = random_sequence(t, 60, 8, {{"A", 3, 10}, {"B", 20, 30}, {"C", 33, 50}});
  const Segmentation s3 = segment_sequences(three);
  CHECK(s3.gestures.size() == 3);
  CHECK(s3.fragments.size() <= 4);
  for (const auto& f : s3.fragments) CHECK(f.window.length() >= kMinFragmentFrames);
}

TEST_CASE("sequence validation") {
  const HandTopology t = default_hand_topology();
  CHECK_THROWS_AS(random_sequence(t, 10, 1, {{"A", 0, 5}, {"B", 5, 8}}), InputError);
  CHECK_THROWS_AS(random_sequence(t, 10, 1, {{"A", 5, 10}}), InputError);
  CHECK_THROWS_AS(SkeletonSequence(20, {}), InputError);
  const SkeletonSequence s = random_sequence(t, 10, 1, {{"A", 2, 5}});
  const auto labels = s.frame_labels();
  CHECK(labels[1] == kNoGesture);
  CHECK(labels[2] == "A");
  const SkeletonSequence sl = s.slice(4, 9);
  REQUIRE(sl.annotations().size() == 1);
  CHECK(sl.annotations()[0] == Annotation{"A", 0, 1});
}

TEST_CASE("label set") {
  const LabelSet l({"A", "B"});
  CHECK(l.size() == 3);
  CHECK(l.name(l.no_gesture()) == kNoGesture);
  CHECK(l.index("B") == 1);
  CHECK_THROWS_AS(l.index("C"), LabelError);
}
