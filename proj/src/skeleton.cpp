#include "costrgcn/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "costrgcn/errors.hpp"

namespace costrgcn {

HandTopology HandTopology::create(std::size_t joint_count, std::vector<Edge> edges,
                                  std::size_t wrist_index, std::vector<std::string> joint_names) {
  if (joint_count == 0) throw ConfigError("topology needs at least one joint");
  if (wrist_index >= joint_count) throw ConfigError("wrist index out of range");
  if (!joint_names.empty() && joint_names.size() != joint_count) {
    throw ConfigError("joint_names length differs from joint_count");
  }
  std::set<Edge> seen;
  for (auto& e : edges) {
    if (e.first >= joint_count || e.second >= joint_count) {
      throw ConfigError("edge (" + std::to_string(e.first) + "," + std::to_string(e.second) +
                        ") references a joint outside [0," + std::to_string(joint_count) + ")");
    }
    if (e.first == e.second) {
      throw ConfigError("self edge on joint " + std::to_string(e.first));
    }
    const Edge key{std::min(e.first, e.second), std::max(e.first, e.second)};
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate edge (" + std::to_string(key.first) + "," +
                        std::to_string(key.second) + ")");
    }
  }
  HandTopology t;
  t.joint_count_ = joint_count;
  t.edges_ = std::move(edges);
  t.wrist_index_ = wrist_index;
  t.joint_names_ = std::move(joint_names);
  const auto hops = t.hop_distances();
  for (std::size_t j = 0; j < joint_count; ++j) {
    if (hops[0][j] == std::numeric_limits<std::size_t>::max()) {
      throw ConfigError("topology is disconnected: joint " + std::to_string(j) +
                        " unreachable from joint 0");
    }
  }
  return t;
}

std::vector<std::vector<std::size_t>> HandTopology::hop_distances() const {
  constexpr auto kInf = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::size_t>> nbr(joint_count_);
  for (const auto& [a, b] : edges_) {
    nbr[a].push_back(b);
    nbr[b].push_back(a);
  }
  std::vector<std::vector<std::size_t>> dist(joint_count_, std::vector<std::size_t>(joint_count_, kInf));
  for (std::size_t s = 0; s < joint_count_; ++s) {
    std::queue<std::size_t> q;
    dist[s][s] = 0;
    q.push(s);
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (auto v : nbr[u]) {
        if (dist[s][v] == kInf) {
          dist[s][v] = dist[s][u] + 1;
          q.push(v);
        }
      }
    }
  }
  return dist;
}

HandTopology default_hand_topology() {
  std::vector<Edge> edges{{0, 1}};
  const std::vector<std::pair<std::size_t, std::size_t>> chains{
      {2, 3}, {5, 4}, {9, 4}, {13, 4}, {17, 3}};
  for (const auto& [first, len] : chains) {
    edges.emplace_back(1, first);
    for (std::size_t i = 1; i < len; ++i) edges.emplace_back(first + i - 1, first + i);
  }
  std::vector<std::string> names{"wrist", "palm"};
  const std::vector<std::pair<std::string, std::size_t>> fingers{
      {"thumb", 3}, {"index", 4}, {"middle", 4}, {"ring", 4}, {"pinky", 3}};
  for (const auto& [finger, len] : fingers) {
    for (std::size_t i = 0; i < len; ++i) names.push_back(finger + std::to_string(i));
  }
  return HandTopology::create(20, std::move(edges), 0, std::move(names));
}

HandTopology topology_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("topology config: ") + e.what());
  }
  if (!j.contains("joint_count") || !j.contains("edges")) {
    throw ConfigError("topology config needs \"joint_count\" and \"edges\"");
  }
  try {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("topology edge must be a pair");
      edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    std::vector<std::string> names;
    if (j.contains("joint_names")) names = j.at("joint_names").get<std::vector<std::string>>();
    return HandTopology::create(j.at("joint_count").get<std::size_t>(), std::move(edges),
                                j.value("wrist_index", std::size_t{0}), std::move(names));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("topology config: ") + e.what());
  }
}

HandTopology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open topology file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return topology_from_json_text(ss.str());
}

std::string topology_to_json_text(const HandTopology& topology) {
  nlohmann::json j;
  j["joint_count"] = topology.joint_count();
  j["wrist_index"] = topology.wrist_index();
  j["edges"] = nlohmann::json::array();
  for (const auto& [a, b] : topology.edges()) j["edges"].push_back({a, b});
  if (!topology.joint_names().empty()) j["joint_names"] = topology.joint_names();
  return j.dump(2);
}

// ---------------------------------------------------------------------------

SkeletonFrame::SkeletonFrame(std::size_t joint_count, std::vector<double> coords)
    : joints_(std::move(coords)) {
  if (joints_.size() != joint_count * kCoords) {
    throw InputError("frame has " + std::to_string(joints_.size()) + " values, expected " +
                     std::to_string(joint_count * kCoords));
  }
}

Point3 SkeletonFrame::centroid() const {
  Point3 c{0, 0, 0};
  const std::size_t n = joint_count();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < kCoords; ++k) c[k] += joints_[j * kCoords + k];
  }
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

SkeletonSequence::SkeletonSequence(std::size_t joint_count, std::vector<SkeletonFrame> frames,
                                   std::vector<Annotation> annotations, std::string id)
    : id_(std::move(id)),
      joint_count_(joint_count),
      frames_(std::move(frames)),
      annotations_(std::move(annotations)) {
  std::sort(annotations_.begin(), annotations_.end(),
            [](const Annotation& a, const Annotation& b) { return a.start < b.start; });
  validate();
}

void SkeletonSequence::validate() const {
  if (frames_.empty()) throw InputError("sequence '" + id_ + "' has no frames");
  for (std::size_t t = 0; t < frames_.size(); ++t) {
    if (frames_[t].joint_count() != joint_count_) {
      throw InputError("frame " + std::to_string(t) + " has " +
                       std::to_string(frames_[t].joint_count()) + " joints, expected " +
                       std::to_string(joint_count_));
    }
    for (double v : frames_[t].coords()) {
      if (!std::isfinite(v)) throw InputError("frame " + std::to_string(t) + " has a non-finite coordinate");
    }
  }
  for (std::size_t i = 0; i < annotations_.size(); ++i) {
    const auto& a = annotations_[i];
    if (a.label == kNoGesture || a.label.empty()) {
      throw InputError("annotation label must name a gesture class");
    }
    if (a.start > a.end || a.end >= frames_.size()) {
      throw InputError("annotation [" + std::to_string(a.start) + "," + std::to_string(a.end) +
                       "] outside sequence of length " + std::to_string(frames_.size()));
    }
    if (i > 0 && annotations_[i - 1].end >= a.start) {
      throw InputError("annotations overlap at frame " + std::to_string(a.start));
    }
  }
}

SkeletonSequence SkeletonSequence::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > frames_.size()) {
    throw InputError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside sequence of length " + std::to_string(frames_.size()));
  }
  std::vector<SkeletonFrame> frames(frames_.begin() + static_cast<std::ptrdiff_t>(begin),
                                    frames_.begin() + static_cast<std::ptrdiff_t>(end));
  std::vector<Annotation> ann;
  for (const auto& a : annotations_) {
    if (a.end < begin || a.start >= end) continue;
    ann.push_back({a.label, std::max(a.start, begin) - begin, std::min(a.end, end - 1) - begin});
  }
  return SkeletonSequence(joint_count_, std::move(frames), std::move(ann), id_);
}

std::vector<std::string> SkeletonSequence::frame_labels() const {
  std::vector<std::string> labels(frames_.size(), kNoGesture);
  for (const auto& a : annotations_) {
    for (std::size_t t = a.start; t <= a.end; ++t) labels[t] = a.label;
  }
  return labels;
}

Tensor SkeletonSequence::to_tensor() const {
  Tensor out({frames_.size(), joint_count_, kCoords});
  double* dst = out.data();
  for (const auto& f : frames_) dst = std::copy(f.coords().begin(), f.coords().end(), dst);
  return out;
}

// ---------------------------------------------------------------------------

LabelSet::LabelSet(std::vector<std::string> gesture_classes) : names_(std::move(gesture_classes)) {
  std::set<std::string> unique;
  for (const auto& n : names_) {
    if (n.empty() || n == kNoGesture) throw ConfigError("invalid gesture class name '" + n + "'");
    if (!unique.insert(n).second) throw ConfigError("duplicate gesture class '" + n + "'");
  }
  names_.push_back(kNoGesture);
}

int LabelSet::index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw LabelError("unknown label '" + name + "'");
  return static_cast<int>(it - names_.begin());
}

const std::string& LabelSet::name(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= names_.size()) {
    throw LabelError("label index " + std::to_string(index) + " out of range");
  }
  return names_[static_cast<std::size_t>(index)];
}

}  // namespace costrgcn
