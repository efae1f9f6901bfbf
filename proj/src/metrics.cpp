#include "costrgcn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "costrgcn/errors.hpp"

namespace costrgcn {

std::vector<GestureEvent> events_from_annotations(const SkeletonSequence& seq,
                                                  const LabelSet& labels) {
  std::vector<GestureEvent> out;
  for (const auto& a : seq.annotations()) out.push_back({labels.index(a.label), a.start, a.end});
  std::sort(out.begin(), out.end(),
            [](const GestureEvent& a, const GestureEvent& b) { return a.start < b.start; });
  return out;
}

std::vector<int> frame_labels_from_annotations(const SkeletonSequence& seq,
                                               const LabelSet& labels) {
  std::vector<int> out(seq.length(), labels.no_gesture());
  for (const auto& a : seq.annotations()) {
    const int id = labels.index(a.label);
    for (std::size_t t = a.start; t <= a.end && t < out.size(); ++t) out[t] = id;
  }
  return out;
}

double temporal_iou(const GestureEvent& a, const GestureEvent& b) {
  const std::size_t lo = std::max(a.start, b.start), hi = std::min(a.end, b.end);
  const std::size_t inter = hi >= lo ? hi - lo + 1 : 0;
  const std::size_t uni = a.length() + b.length() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ClassCounts MatchResult::total() const {
  ClassCounts c;
  for (const auto& [label, counts] : per_class) c += counts;
  return c;
}

void MatchResult::pool(const MatchResult& other) {
  for (const auto& [label, counts] : other.per_class) per_class[label] += counts;
}

namespace {

void check_events(std::span<const GestureEvent> events, const char* which) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].end < events[i].start) {
      throw InputError(std::string(which) + " event " + std::to_string(i) + " ends before it starts");
    }
    if (i > 0 && events[i].start <= events[i - 1].end) {
      throw InputError(std::string(which) + " events " + std::to_string(i - 1) + " and " +
                       std::to_string(i) + " overlap or are unsorted");
    }
  }
}

}  // namespace

MatchResult match_events(std::span<const GestureEvent> predicted,
                         std::span<const GestureEvent> ground_truth, double iou_threshold) {
  check_events(predicted, "predicted");
  check_events(ground_truth, "ground-truth");
  MatchResult r;
  std::vector<bool> taken(ground_truth.size(), false);
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    bool matched = false;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g] || ground_truth[g].label != predicted[p].label) continue;
      if (temporal_iou(predicted[p], ground_truth[g]) >= iou_threshold) {
        taken[g] = true;
        matched = true;
        r.matches.emplace_back(p, g);
        ++r.per_class[predicted[p].label].tp;
        break;
      }
    }
    if (!matched) ++r.per_class[predicted[p].label].fp;
  }
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    if (!taken[g]) ++r.per_class[ground_truth[g].label].fn;
  }
  return r;
}

std::optional<double> detection_rate(const ClassCounts& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

std::optional<double> false_positive_rate(const ClassCounts& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.fp) / static_cast<double>(c.tp + c.fn);
}

std::vector<JaccardTerm> jaccard_terms(std::span<const int> predicted,
                                       std::span<const int> ground_truth, int no_gesture) {
  if (predicted.size() != ground_truth.size()) {
    throw InputError("label sequences differ in length: " + std::to_string(predicted.size()) +
                     " vs " + std::to_string(ground_truth.size()));
  }
  std::map<int, JaccardTerm> terms;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    const int p = predicted[t], g = ground_truth[t];
    if (p != no_gesture) {
      auto& term = terms[p];
      term.label = p;
      ++term.union_size;
      if (p == g) ++term.intersection;
    }
    if (g != no_gesture && g != p) {
      auto& term = terms[g];
      term.label = g;
      ++term.union_size;
    }
  }
  std::vector<JaccardTerm> out;
  for (const auto& [label, term] : terms) out.push_back(term);
  return out;
}

std::optional<double> jaccard_index(const std::vector<std::vector<int>>& predicted,
                                    const std::vector<std::vector<int>>& ground_truth,
                                    int no_gesture) {
  if (predicted.size() != ground_truth.size()) {
    throw InputError("prediction and ground-truth sequence counts differ");
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    for (const auto& term : jaccard_terms(predicted[s], ground_truth[s], no_gesture)) {
      sum += term.value();
      ++pairs;
    }
  }
  if (pairs == 0) return std::nullopt;
  return sum / static_cast<double>(pairs);
}

MetricsReport evaluate_outcomes(std::span<const SequenceOutcome> outcomes, const LabelSet& labels,
                                double iou_threshold) {
  MetricsReport report;
  report.sequences = outcomes.size();
  MatchResult pooled;
  std::map<int, std::pair<double, std::size_t>> jac;
  double jac_sum = 0.0;
  std::size_t jac_pairs = 0;
  for (const auto& o : outcomes) {
    pooled.pool(match_events(o.predicted_events, o.truth_events, iou_threshold));
    for (const auto& term : jaccard_terms(o.predicted_labels, o.truth_labels, labels.no_gesture())) {
      jac[term.label].first += term.value();
      ++jac[term.label].second;
      jac_sum += term.value();
      ++jac_pairs;
    }
  }
  report.counts = pooled.total();
  report.detection_rate = detection_rate(report.counts);
  report.false_positive_rate = false_positive_rate(report.counts);
  if (jac_pairs > 0) report.jaccard_index = jac_sum / static_cast<double>(jac_pairs);
  for (int c = 0; c < labels.no_gesture(); ++c) {
    ClassMetrics m;
    if (auto it = pooled.per_class.find(c); it != pooled.per_class.end()) m.counts = it->second;
    m.detection_rate = detection_rate(m.counts);
    m.false_positive_rate = false_positive_rate(m.counts);
    if (auto it = jac.find(c); it != jac.end()) {
      m.jaccard_index = it->second.first / static_cast<double>(it->second.second);
    }
    report.per_class[labels.name(c)] = m;
  }
  return report;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json counts_json(const ClassCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"sequences", sequences},
                      {"counts", counts_json(counts)},
                      {"detection_rate", opt(detection_rate)},
                      {"false_positive_rate", opt(false_positive_rate)},
                      {"jaccard_index", opt(jaccard_index)}};
  nlohmann::json pc = nlohmann::json::object();
  for (const auto& [name, m] : per_class) {
    pc[name] = {{"counts", counts_json(m.counts)},
                {"detection_rate", opt(m.detection_rate)},
                {"false_positive_rate", opt(m.false_positive_rate)},
                {"jaccard_index", opt(m.jaccard_index)}};
  }
  j["per_class"] = pc;
  return j;
}

std::string MetricsReport::table() const {
  std::size_t width = 7;
  for (const auto& [name, m] : per_class) width = std::max(width, name.size());
  std::ostringstream os;
  char line[256];
  auto row = [&](const std::string& name, const ClassCounts& c, const std::optional<double>& dr,
                 const std::optional<double>& fpr, const std::optional<double>& jac) {
    std::snprintf(line, sizeof line, "%-*s %5zu %5zu %5zu %9s %9s %9s\n", static_cast<int>(width),
                  name.c_str(), c.tp, c.fp, c.fn, fmt(dr).c_str(), fmt(fpr).c_str(),
                  fmt(jac).c_str());
    os << line;
  };
  std::snprintf(line, sizeof line, "%-*s %5s %5s %5s %9s %9s %9s\n", static_cast<int>(width),
                "class", "TP", "FP", "FN", "detection", "fp_rate", "jaccard");
  os << line;
  for (const auto& [name, m] : per_class) {
    row(name, m.counts, m.detection_rate, m.false_positive_rate, m.jaccard_index);
  }
  row("overall", counts, detection_rate, false_positive_rate, jaccard_index);
  return os.str();
}

}  // namespace costrgcn
