#include "costrgcn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "costrgcn/errors.hpp"

namespace fs = std::filesystem;

namespace costrgcn {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + ": field \"" + key + "\" has the wrong type");
  }
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// canonical files

nlohmann::json sequence_to_json(const SkeletonSequence& seq) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : seq.frames()) {
    nlohmann::json joints = nlohmann::json::array();
    for (std::size_t j = 0; j < f.joint_count(); ++j) {
      const Point3 p = f.joint(j);
      joints.push_back({p[0], p[1], p[2]});
    }
    frames.push_back(std::move(joints));
  }
  nlohmann::json ann = nlohmann::json::array();
  for (const auto& a : seq.annotations()) {
    ann.push_back({{"label", a.label}, {"start", a.start}, {"end", a.end}});
  }
  return {{"id", seq.id()}, {"joints", seq.joint_count()}, {"frames", frames}, {"annotations", ann}};
}

SkeletonSequence sequence_from_json(const nlohmann::json& j,
                                    std::optional<std::size_t> expected_joints) {
  const std::string id = j.is_object() ? j.value("id", std::string()) : std::string();
  const std::string where = "sequence '" + id + "'";
  const auto joints = field<std::size_t>(j, "joints", where);
  if (expected_joints && joints != *expected_joints) {
    throw ParseError(where + ": field \"joints\" is " + std::to_string(joints) + ", manifest says " +
                     std::to_string(*expected_joints));
  }
  const auto& frames_json = j.contains("frames") ? j.at("frames") : nlohmann::json();
  if (!frames_json.is_array() || frames_json.empty()) {
    throw ParseError(where + ": field \"frames\" must be a non-empty array");
  }
  std::vector<SkeletonFrame> frames;
  for (std::size_t t = 0; t < frames_json.size(); ++t) {
    const auto& fj = frames_json[t];
    const std::string fw = where + ": frames[" + std::to_string(t) + "]";
    if (!fj.is_array() || fj.size() != joints) {
      throw ParseError(fw + " must hold " + std::to_string(joints) + " joints");
    }
    SkeletonFrame f(joints);
    for (std::size_t k = 0; k < joints; ++k) {
      const auto& p = fj[k];
      if (!p.is_array() || p.size() != kCoords) {
        throw ParseError(fw + "[" + std::to_string(k) + "] must be [x, y, z]");
      }
      for (std::size_t c = 0; c < kCoords; ++c) {
        if (!p[c].is_number()) throw ParseError(fw + "[" + std::to_string(k) + "] is not numeric");
        f.coord(k, c) = p[c].get<double>();
        if (!std::isfinite(f.coord(k, c))) throw ParseError(fw + " has a non-finite coordinate");
      }
    }
    frames.push_back(std::move(f));
  }
  std::vector<Annotation> annotations;
  if (j.contains("annotations")) {
    const auto& aj = j.at("annotations");
    if (!aj.is_array()) throw ParseError(where + ": field \"annotations\" must be an array");
    for (std::size_t i = 0; i < aj.size(); ++i) {
      const std::string aw = where + ": annotations[" + std::to_string(i) + "]";
      Annotation a{field<std::string>(aj[i], "label", aw), field<std::size_t>(aj[i], "start", aw),
                   field<std::size_t>(aj[i], "end", aw)};
      if (a.start > a.end || a.end >= frames.size()) {
        throw ParseError(aw + ": span [" + std::to_string(a.start) + ", " + std::to_string(a.end) +
                         "] outside " + std::to_string(frames.size()) + " frames");
      }
      annotations.push_back(std::move(a));
    }
  }
  try {
    return SkeletonSequence(joints, std::move(frames), std::move(annotations), id);
  } catch (const InputError& e) {
    throw ParseError(where + ": " + e.what());
  }
}

void save_canonical(const SkeletonSequence& seq, const std::string& path) {
  write_file(path, sequence_to_json(seq).dump() + "\n");
}

SkeletonSequence load_canonical(const std::string& path,
                                std::optional<std::size_t> expected_joints) {
  try {
    return sequence_from_json(parse_json(read_file(path), path), expected_joints);
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw ParseError(path + ": " + msg);
  }
}

// ---------------------------------------------------------------------------
// manifest

LabelSet DatasetManifest::labels() const {
  return LabelSet(std::vector<std::string>(classes.begin(), classes.end() - 1));
}

std::vector<DatasetRecord> DatasetManifest::split(const std::string& tag) const {
  std::vector<DatasetRecord> out;
  for (const auto& r : records) {
    if (tag.empty() || r.split == tag) out.push_back(r);
  }
  return out;
}

void DatasetManifest::validate() const {
  if (classes.size() < 2 || classes.back() != kNoGesture) {
    throw ParseError("manifest classes must list gestures followed by " + kNoGesture);
  }
  std::set<std::string> seen;
  for (const auto& c : classes) {
    if (!seen.insert(c).second) throw ParseError("manifest class '" + c + "' is duplicated");
  }
  if (joints == 0) throw ParseError("manifest lambda must be positive");
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw ParseError("manifest record '" + r.id + "' is duplicated");
    if (r.split != "train" && r.split != "val" && r.split != "test") {
      throw ParseError("manifest record '" + r.id + "' has split '" + r.split + "'");
    }
  }
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) records.push_back({{"id", r.id}, {"path", r.path}, {"split", r.split}});
  return {{"classes", m.classes}, {"lambda", m.joints}, {"records", records}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.classes = field<std::vector<std::string>>(j, "classes", "manifest");
  m.joints = field<std::size_t>(j, "lambda", "manifest");
  const auto& rj = j.contains("records") ? j.at("records") : nlohmann::json::array();
  if (!rj.is_array()) throw ParseError("manifest: field \"records\" must be an array");
  for (std::size_t i = 0; i < rj.size(); ++i) {
    const std::string w = "manifest: records[" + std::to_string(i) + "]";
    m.records.push_back({field<std::string>(rj[i], "id", w), field<std::string>(rj[i], "path", w),
                         field<std::string>(rj[i], "split", w)});
  }
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  write_file(path, to_json(m).dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& path) {
  return manifest_from_json(parse_json(read_file(path), path));
}

std::vector<SkeletonSequence> load_split(const std::string& manifest_path, const std::string& split) {
  const DatasetManifest m = load_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<SkeletonSequence> out;
  for (const auto& r : m.split(split)) {
    SkeletonSequence s = load_canonical((base / r.path).string(), m.joints);
    if (s.id().empty()) s.set_id(r.id);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SHREC'21

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ';') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

std::size_t parse_index(const std::string& text, const std::string& where) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) throw ParseError(where + ": '" + text + "' is not a frame index");
  return v;
}

// Numeric ids sort numerically, everything else lexicographically after them.
bool id_less(const std::string& a, const std::string& b) {
  const bool na = !a.empty() && std::all_of(a.begin(), a.end(), ::isdigit);
  const bool nb = !b.empty() && std::all_of(b.begin(), b.end(), ::isdigit);
  if (na && nb) return a.size() != b.size() ? a.size() < b.size() : a < b;
  if (na != nb) return na;
  return a < b;
}

}  // namespace

SkeletonSequence parse_shrec_sequence(const std::string& text, const std::string& id) {
  std::vector<SkeletonFrame> frames;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (char& c : line) {
      if (c == ';' || c == ',') c = ' ';
    }
    std::vector<double> coords;
    const char* p = line.c_str();
    while (true) {
      while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
      if (*p == '\0') break;
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(p, &end);
      if (end == p || errno == ERANGE || !std::isfinite(v)) {
        throw ParseError(id + " line " + std::to_string(line_no) + ": malformed value");
      }
      coords.push_back(v);
      p = end;
    }
    if (coords.empty()) continue;
    if (coords.size() != kShrecJoints * kCoords) {
      throw ParseError(id + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(kShrecJoints * kCoords) + " values (20 joints), got " +
                       std::to_string(coords.size()));
    }
    frames.emplace_back(kShrecJoints, std::move(coords));
  }
  if (frames.empty()) throw ParseError(id + ": no frames");
  return SkeletonSequence(kShrecJoints, std::move(frames), {}, id);
}

DatasetManifest import_shrec21(const std::string& directory, const std::string& out_dir) {
  struct Pending {
    SkeletonSequence seq;
    std::string split;
  };
  std::vector<Pending> pending;
  std::set<std::string> class_names;
  const std::vector<std::pair<std::string, std::string>> splits{{"training_set", "train"},
                                                                {"test_set", "test"}};
  for (const auto& [folder, tag] : splits) {
    const fs::path root = fs::path(directory) / folder;
    const fs::path seq_dir = root / "sequences";
    if (!fs::is_directory(seq_dir)) throw InputError("missing directory " + seq_dir.string());
    std::map<std::string, std::vector<Annotation>> annotations;
    const fs::path ann_path = root / "annotations.txt";
    if (!fs::exists(ann_path)) throw InputError("missing file " + ann_path.string());
    std::istringstream ann(read_file(ann_path.string()));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ann, line)) {
      ++line_no;
      const auto f = split_fields(line);
      if (f.empty()) continue;
      const std::string where = ann_path.string() + " line " + std::to_string(line_no);
      if ((f.size() - 1) % 3 != 0) throw ParseError(where + ": expected id followed by label;start;end triples");
      auto& list = annotations[f[0]];
      for (std::size_t i = 1; i < f.size(); i += 3) {
        list.push_back({f[i], parse_index(f[i + 1], where), parse_index(f[i + 2], where)});
        class_names.insert(f[i]);
      }
    }
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(seq_dir)) {
      if (entry.path().extension() == ".txt") ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end(), id_less);
    for (const auto& id : ids) {
      const SkeletonSequence raw =
          parse_shrec_sequence(read_file((seq_dir / (id + ".txt")).string()), tag + "_" + id);
      std::vector<Annotation> list = annotations[id];
      for (const auto& a : list) {
        if (a.start > a.end || a.end >= raw.length()) {
          throw ParseError("annotation " + a.label + " [" + std::to_string(a.start) + ", " +
                           std::to_string(a.end) + "] outside sequence " + id + " of " +
                           std::to_string(raw.length()) + " frames");
        }
      }
      try {
        pending.push_back({SkeletonSequence(kShrecJoints, raw.frames(), list, raw.id()), tag});
      } catch (const InputError& e) {
        throw ParseError("sequence " + id + ": " + e.what());
      }
    }
  }
  DatasetManifest m;
  m.classes.assign(class_names.begin(), class_names.end());
  m.classes.push_back(kNoGesture);
  m.joints = kShrecJoints;
  fs::create_directories(fs::path(out_dir) / "sequences");
  for (const auto& p : pending) {
    const std::string rel = "sequences/" + p.seq.id() + ".json";
    save_canonical(p.seq, (fs::path(out_dir) / rel).string());
    m.records.push_back({p.seq.id(), rel, p.split});
  }
  m.validate();
  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

// ---------------------------------------------------------------------------

SkeletonSequence resample_window(const SkeletonSequence& seq, std::size_t gamma_target) {
  if (gamma_target == 0) throw ConfigError("resample target must be >= 1");
  const std::size_t g = seq.length();
  if (g == gamma_target) return SkeletonSequence(seq.joint_count(), seq.frames(), {}, seq.id());
  std::vector<SkeletonFrame> out;
  for (std::size_t i = 0; i < gamma_target; ++i) {
    const double s = gamma_target == 1 ? 0.0
                                        : static_cast<double>(i) * static_cast<double>(g - 1) /
                                              static_cast<double>(gamma_target - 1);
    const auto lo = std::min(static_cast<std::size_t>(std::floor(s)), g - 1);
    const std::size_t hi = std::min(lo + 1, g - 1);
    const double w = s - static_cast<double>(lo);
    SkeletonFrame f = seq.frame(lo);
    if (w > 0.0) {
      const auto& b = seq.frame(hi).coords();
      auto& c = f.coords();
      for (std::size_t k = 0; k < c.size(); ++k) c[k] = (1.0 - w) * c[k] + w * b[k];
    }
    out.push_back(std::move(f));
  }
  return SkeletonSequence(seq.joint_count(), std::move(out), {}, seq.id());
}

// ---------------------------------------------------------------------------
// synthetic data

std::string Prototype::name() const {
  switch (kind) {
    case PrototypeKind::kStaticPose: return "StaticPose" + std::to_string(pose);
    case PrototypeKind::kCircleCW: return "CircleCW";
    case PrototypeKind::kCircleCCW: return "CircleCCW";
    case PrototypeKind::kSwipeLeft: return "SwipeLeft";
    case PrototypeKind::kSwipeRight: return "SwipeRight";
    case PrototypeKind::kCross: return "Cross";
  }
  return "?";
}

Prototype parse_prototype(const std::string& name) {
  if (name == "CircleCW") return {PrototypeKind::kCircleCW};
  if (name == "CircleCCW") return {PrototypeKind::kCircleCCW};
  if (name == "SwipeLeft") return {PrototypeKind::kSwipeLeft};
  if (name == "SwipeRight") return {PrototypeKind::kSwipeRight};
  if (name == "Cross") return {PrototypeKind::kCross};
  const std::string prefix = "StaticPose";
  if (name.rfind(prefix, 0) == 0) {
    const std::string rest = name.substr(prefix.size());
    std::size_t pos = 0;
    unsigned long k = 0;
    try {
      k = std::stoul(rest, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == rest.size() && pos > 0 && k >= 1 && k <= 31) {
      return {PrototypeKind::kStaticPose, static_cast<unsigned>(k)};
    }
  }
  throw ConfigError("unknown gesture prototype '" + name + "'");
}

void SyntheticConfig::validate() const {
  if (classes.size() < 2) throw ConfigError("synthetic data needs at least 2 classes");
  std::set<std::string> names;
  for (const auto& c : classes) {
    if (c.kind == PrototypeKind::kStaticPose && (c.pose < 1 || c.pose > 31)) {
      throw ConfigError("StaticPose finger mask must be in 1..31");
    }
    if (!names.insert(c.name()).second) throw ConfigError("duplicate prototype " + c.name());
  }
  if (min_gestures < 1 || min_gestures > max_gestures) throw ConfigError("bad gestures-per-stream range");
  if (min_gap < 1 || min_gap > max_gap) throw ConfigError("bad idle-gap range");
  if (min_gesture_frames < 2 || min_gesture_frames > max_gesture_frames) {
    throw ConfigError("bad gesture-length range");
  }
  if (!(jitter >= 0.0)) throw ConfigError("jitter must be >= 0");
  if (train_streams + val_streams + test_streams == 0) throw ConfigError("no streams requested");
}

nlohmann::json to_json(const SyntheticConfig& c) {
  std::vector<std::string> names;
  for (const auto& p : c.classes) names.push_back(p.name());
  return {{"classes", names},
          {"train_streams", c.train_streams},
          {"val_streams", c.val_streams},
          {"test_streams", c.test_streams},
          {"min_gestures", c.min_gestures},
          {"max_gestures", c.max_gestures},
          {"min_gap", c.min_gap},
          {"max_gap", c.max_gap},
          {"min_gesture_frames", c.min_gesture_frames},
          {"max_gesture_frames", c.max_gesture_frames},
          {"jitter", c.jitter},
          {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j, SyntheticConfig c) {
  try {
    if (j.contains("classes")) {
      c.classes.clear();
      for (const auto& n : j.at("classes")) c.classes.push_back(parse_prototype(n.get<std::string>()));
    }
    c.train_streams = j.value("train_streams", c.train_streams);
    c.val_streams = j.value("val_streams", c.val_streams);
    c.test_streams = j.value("test_streams", c.test_streams);
    c.min_gestures = j.value("min_gestures", c.min_gestures);
    c.max_gestures = j.value("max_gestures", c.max_gestures);
    c.min_gap = j.value("min_gap", c.min_gap);
    c.max_gap = j.value("max_gap", c.max_gap);
    c.min_gesture_frames = j.value("min_gesture_frames", c.min_gesture_frames);
    c.max_gesture_frames = j.value("max_gesture_frames", c.max_gesture_frames);
    c.jitter = j.value("jitter", c.jitter);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

struct Finger {
  std::size_t first, length;
  double bx, by;      // base offset from the palm joint
  double dx, dy;      // pointing direction
  double segment;
};

const std::array<Finger, 5> kFingers{{{2, 3, -0.030, -0.005, -0.7, 0.7, 0.025},
                                      {5, 4, -0.016, 0.030, -0.1, 1.0, 0.022},
                                      {9, 4, 0.000, 0.032, 0.0, 1.0, 0.024},
                                      {13, 4, 0.015, 0.030, 0.1, 1.0, 0.022},
                                      {17, 3, 0.028, 0.025, 0.25, 1.0, 0.018}}};

constexpr double kPalmY = 0.04;
constexpr double kCurlPerJoint = 1.1;  // radians at full curl
constexpr double kCircleRadius = 0.06;
constexpr double kSwipeAmplitude = 0.12;
constexpr double kCrossSize = 0.06;

// Local hand pose with per-finger curl amounts in [0, 1].
SkeletonFrame posed_hand(const std::array<double, 5>& curl) {
  SkeletonFrame f(20);
  f.set_joint(0, {0.0, 0.0, 0.0});
  f.set_joint(1, {0.0, kPalmY, 0.0});
  for (std::size_t i = 0; i < kFingers.size(); ++i) {
    const Finger& fg = kFingers[i];
    const double n = std::hypot(fg.dx, fg.dy);
    const double ux = fg.dx / n, uy = fg.dy / n;
    Point3 p{fg.bx, kPalmY + fg.by, 0.0};
    f.set_joint(fg.first, p);
    for (std::size_t k = 1; k < fg.length; ++k) {
      const double theta = static_cast<double>(k) * curl[i] * kCurlPerJoint;
      p = {p[0] + fg.segment * std::cos(theta) * ux, p[1] + fg.segment * std::cos(theta) * uy,
           p[2] - fg.segment * std::sin(theta)};
      f.set_joint(fg.first + k, p);
    }
  }
  return f;
}

// Hand offset and finger curl of a prototype at normalized time s in [0, 1].
struct GesturePose {
  double x = 0.0, y = 0.0;
  std::array<double, 5> curl{};
};

GesturePose gesture_pose(const Prototype& p, double s) {
  GesturePose g;
  const double two_pi = 2.0 * std::numbers::pi;
  switch (p.kind) {
    case PrototypeKind::kCircleCW:
    case PrototypeKind::kCircleCCW: {
      const double sign = p.kind == PrototypeKind::kCircleCW ? -1.0 : 1.0;
      const double theta = -std::numbers::pi / 2.0 + sign * two_pi * s;
      g.x = kCircleRadius * std::cos(theta);
      g.y = kCircleRadius + kCircleRadius * std::sin(theta);
      break;
    }
    case PrototypeKind::kSwipeLeft:
    case PrototypeKind::kSwipeRight:
      g.x = (p.kind == PrototypeKind::kSwipeLeft ? -0.5 : 0.5) * kSwipeAmplitude *
            (1.0 - std::cos(std::numbers::pi * s));
      break;
    case PrototypeKind::kCross: {
      static const double pts[5][2] = {{0, 0}, {1, 1}, {1, 0}, {0, 1}, {0, 0}};
      const double u = std::min(s, 1.0) * 4.0;
      const auto i = std::min<std::size_t>(static_cast<std::size_t>(u), 3);
      const double w = u - static_cast<double>(i);
      g.x = kCrossSize * ((1 - w) * pts[i][0] + w * pts[i + 1][0]);
      g.y = kCrossSize * ((1 - w) * pts[i][1] + w * pts[i + 1][1]);
      break;
    }
    case PrototypeKind::kStaticPose: {
      const double ramp = std::clamp(std::min(s, 1.0 - s) / 0.2, 0.0, 1.0);
      for (std::size_t f = 0; f < 5; ++f) g.curl[f] = (p.pose >> f) & 1U ? ramp : 0.0;
      break;
    }
  }
  return g;
}

struct StreamPlacement {
  double scale, yaw;
  Point3 origin;
};

SkeletonFrame place(const SkeletonFrame& local, const GesturePose& g, const StreamPlacement& pl,
                    double jitter, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const double c = std::cos(pl.yaw), s = std::sin(pl.yaw);
  SkeletonFrame out(local.joint_count());
  for (std::size_t j = 0; j < local.joint_count(); ++j) {
    const Point3 p = local.joint(j);
    const double x = pl.scale * p[0] + g.x, y = pl.scale * p[1] + g.y, z = pl.scale * p[2];
    Point3 q{c * x - s * y + pl.origin[0], s * x + c * y + pl.origin[1], z + pl.origin[2]};
    for (auto& v : q) v += jitter * noise(rng);
    out.set_joint(j, q);
  }
  return out;
}

}  // namespace

SkeletonFrame rest_pose() { return posed_hand({}); }

SyntheticDataset gen_synthetic(const SyntheticConfig& config) {
  config.validate();
  SyntheticDataset ds;
  for (const auto& p : config.classes) ds.manifest.classes.push_back(p.name());
  ds.manifest.classes.push_back(kNoGesture);
  ds.manifest.joints = 20;
  const std::vector<std::pair<std::string, std::size_t>> splits{
      {"train", config.train_streams}, {"val", config.val_streams}, {"test", config.test_streams}};
  std::uint64_t stream_index = 0;
  for (const auto& [tag, count] : splits) {
    for (std::size_t n = 0; n < count; ++n, ++stream_index) {
      std::mt19937_64 rng(mix(config.seed, stream_index));
      auto uniform_int = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
      };
      auto uniform = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
      };
      const StreamPlacement pl{uniform(0.9, 1.1), uniform(-0.2, 0.2),
                               {uniform(-0.1, 0.1), uniform(-0.1, 0.1), uniform(0.3, 0.5)}};
      const SkeletonFrame rest = rest_pose();
      std::vector<SkeletonFrame> frames;
      std::vector<Annotation> annotations;
      // Where the previous gesture left the hand.
      GesturePose base;
      auto idle = [&](std::size_t len) {
        for (std::size_t t = 0; t < len; ++t) frames.push_back(place(rest, base, pl, config.jitter, rng));
      };
      const std::size_t gestures = uniform_int(config.min_gestures, config.max_gestures);
      idle(uniform_int(config.min_gap, config.max_gap));
      for (std::size_t g = 0; g < gestures; ++g) {
        const Prototype& proto = config.classes[uniform_int(0, config.classes.size() - 1)];
        const std::size_t len = uniform_int(config.min_gesture_frames, config.max_gesture_frames);
        const std::size_t start = frames.size();
        for (std::size_t t = 0; t < len; ++t) {
          GesturePose gp = gesture_pose(proto, static_cast<double>(t) / static_cast<double>(len - 1));
          gp.x += base.x;
          gp.y += base.y;
          frames.push_back(place(posed_hand(gp.curl), gp, pl, config.jitter, rng));
        }
        const GesturePose end = gesture_pose(proto, 1.0);
        base.x += end.x;
        base.y += end.y;
        annotations.push_back({proto.name(), start, frames.size() - 1});
        idle(uniform_int(config.min_gap, config.max_gap));
      }
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03zu", tag.c_str(), n);
      ds.sequences.emplace_back(20, std::move(frames), std::move(annotations), id);
      ds.manifest.records.push_back({id, std::string("sequences/") + id + ".json", tag});
    }
  }
  ds.manifest.validate();
  return ds;
}

void write_dataset(const SyntheticDataset& dataset, const std::string& directory) {
  fs::create_directories(fs::path(directory) / "sequences");
  for (std::size_t i = 0; i < dataset.sequences.size(); ++i) {
    save_canonical(dataset.sequences[i],
                   (fs::path(directory) / dataset.manifest.records[i].path).string());
  }
  save_manifest(dataset.manifest, (fs::path(directory) / "manifest.json").string());
}

double displacement_centroid_accuracy(std::span<const SkeletonSequence> sequences,
                                      std::span<const std::string> classes) {
  struct Segment {
    std::size_t cls;
    Point3 feature;
  };
  std::vector<Segment> segments;
  for (const auto& seq : sequences) {
    for (const auto& a : seq.annotations()) {
      const auto it = std::find(classes.begin(), classes.end(), a.label);
      if (it == classes.end()) continue;
      const Point3 w0 = seq.frame(a.start).joint(0);
      Point3 mean{};
      for (std::size_t t = a.start; t <= a.end; ++t) {
        const Point3 w = seq.frame(t).joint(0);
        for (std::size_t k = 0; k < 3; ++k) mean[k] += (w[k] - w0[k]) / static_cast<double>(a.length());
      }
      segments.push_back({static_cast<std::size_t>(it - classes.begin()), mean});
    }
  }
  std::vector<Point3> centroid(classes.size(), Point3{});
  std::vector<std::size_t> count(classes.size(), 0);
  for (std::size_t i = 0; i < segments.size(); i += 2) {
    for (std::size_t k = 0; k < 3; ++k) centroid[segments[i].cls][k] += segments[i].feature[k];
    ++count[segments[i].cls];
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (count[c] == 0) throw DataError("no fitting segment for class " + classes[c]);
    for (auto& v : centroid[c]) v /= static_cast<double>(count[c]);
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 1; i < segments.size(); i += 2) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        d += (segments[i].feature[k] - centroid[c][k]) * (segments[i].feature[k] - centroid[c][k]);
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == segments[i].cls ? 1 : 0;
    ++total;
  }
  if (total == 0) throw DataError("no held-out segments for the separability oracle");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace costrgcn
