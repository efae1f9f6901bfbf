#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "costrgcn/bench.hpp"
#include "costrgcn/dataset.hpp"
#include "costrgcn/errors.hpp"
#include "costrgcn/metrics.hpp"
#include "costrgcn/model.hpp"
#include "costrgcn/online.hpp"
#include "costrgcn/run_config.hpp"
#include "costrgcn/trainer.hpp"

namespace fs = std::filesystem;
using namespace costrgcn;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint = "checkpoint.json";
  std::string thresholds = "thresholds.json";
  std::optional<std::size_t> window, stride;
  std::optional<std::string> engine;
  std::string out;
  std::string data;
  std::string split = "test";
  std::string input;
  std::vector<std::size_t> bench_windows{16, 64, 128};
  std::size_t bench_steps = 20;
  std::string source;
};

RunConfig effective_config(const Flags& f) {
  RunConfig c = f.config.empty() ? default_run_config() : load_run_config(f.config);
  if (f.seed) c.set_seed(*f.seed);
  if (f.window) c.online.window = *f.window;
  if (f.stride) c.online.stride = *f.stride;
  if (f.engine) c.online.engine = parse_engine(*f.engine);
  c.validate();
  return c;
}

void echo_config(const RunConfig& c) {
  std::cerr << "effective config: " << to_json(c).dump() << "\n";
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << "\n";
}

struct Streams {
  LabelSet labels;
  std::vector<SkeletonSequence> train, val;
};

// Validation streams come from the "val" split, or every fifth training stream
// when the manifest has none.
Streams load_train_val(const std::string& manifest_path) {
  if (manifest_path.empty()) throw InputError("--data <manifest.json> is required");
  const DatasetManifest m = load_manifest(manifest_path);
  Streams s{m.labels(), load_split(manifest_path, "train"), load_split(manifest_path, "val")};
  if (s.val.empty()) {
    std::vector<SkeletonSequence> keep;
    for (std::size_t i = 0; i < s.train.size(); ++i) {
      (i % 5 == 4 ? s.val : keep).push_back(s.train[i]);
    }
    s.train = std::move(keep);
  }
  return s;
}

int cmd_gen_synthetic(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c);
  if (f.out.empty()) throw InputError("--out <directory> is required");
  const SyntheticDataset ds = gen_synthetic(c.synthetic);
  write_dataset(ds, f.out);
  std::cout << "wrote " << ds.sequences.size() << " streams to " << f.out << "\n";
  return 0;
}

int cmd_import(const Flags& f) {
  if (f.out.empty()) throw InputError("--out <directory> is required");
  const DatasetManifest m = import_shrec21(f.source, f.out);
  std::cout << "imported " << m.records.size() << " sequences (" << m.split("train").size()
            << " train, " << m.split("test").size() << " test), " << m.classes.size() - 1
            << " gesture classes\n";
  return 0;
}

int cmd_train(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c);
  const Streams s = load_train_val(f.data);
  const HandTopology topo = c.hand_topology();
  const auto train_set = build_samples(s.train, s.labels, topo, c.samples);
  const auto val_set = build_samples(s.val, s.labels, topo, c.samples);
  std::cerr << train_set.size() << " training / " << val_set.size() << " validation windows\n";
  std::optional<SkeletonFrame> reference;
  if (std::holds_alternative<SpatialConfiguration>(c.model.partition)) {
    reference = normalize_sequence(s.train.front(), topo).frame(0);
  }
  Model model = make_model(c.model, topo, s.labels, c.seed, reference);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainHistory h = train(model, train_set, val_set, c.train, [&](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %4zu  loss %.5f  val_loss %.5f  val_acc %.4f  lr %.3g  %.0fs\n",
                 r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.lr,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  });
  const fs::path dir = f.out.empty() ? fs::path(".") : fs::path(f.out);
  fs::create_directories(dir);
  const std::string ckpt = f.out.empty() ? f.checkpoint : (dir / "checkpoint.json").string();
  save_checkpoint(model, ckpt);
  write_json(to_json(h), (dir / "history.json").string());
  write_json(to_json(c), (dir / "config.json").string());
  std::cout << "best epoch " << h.best_epoch << " of " << h.epochs.size() << ", checkpoint " << ckpt
            << "\n";
  return 0;
}

int cmd_learn_thresholds(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c);
  const Model model = load_checkpoint(f.checkpoint);
  const Streams s = load_train_val(f.data);
  const auto val_set = build_samples(s.val, model.labels(), model.topology(), c.samples);
  const ThresholdTable t = learn_thresholds(model, val_set, c.online.default_threshold);
  write_json(to_json(t), f.out.empty() ? f.thresholds : f.out);
  return 0;
}

int cmd_eval_offline(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c);
  const Model model = load_checkpoint(f.checkpoint);
  if (f.data.empty()) throw InputError("--data <manifest.json> is required");
  const auto streams = load_split(f.data, f.split);
  const auto samples = build_samples(streams, model.labels(), model.topology(), c.samples);
  const Evaluation e = evaluate(model, samples);
  const nlohmann::json j = {{"split", f.split}, {"windows", samples.size()}, {"loss", e.loss},
                            {"accuracy", e.accuracy}};
  write_json(j, f.out);
  std::fprintf(stderr, "%-10s %8s %10s %10s\n%-10s %8zu %10.4f %10.4f\n", "split", "windows", "loss",
               "accuracy", f.split.c_str(), samples.size(), e.loss, e.accuracy);
  return 0;
}

ThresholdTable thresholds_or_default(const Flags& f, const RunConfig& c) {
  if (fs::exists(f.thresholds)) return load_thresholds(f.thresholds);
  std::cerr << "no threshold file " << f.thresholds << "; using default " << c.online.default_threshold
            << "\n";
  return ThresholdTable(c.online.default_threshold);
}

int cmd_stream(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c);
  const Model model = load_checkpoint(f.checkpoint);
  const ThresholdTable t = thresholds_or_default(f, c);
  OnlineRecognizer rec(model, t, c.online);
  std::vector<int> labels;
  auto emit = [&](const std::vector<std::pair<std::size_t, int>>& out) {
    for (const auto& [frame, label] : out) {
      std::cout << frame << " " << model.labels().name(label) << "\n";
      labels.push_back(label);
    }
  };
  if (!f.input.empty() && f.input != "-") {
    const SkeletonSequence seq = load_canonical(f.input, model.config().joint_count);
    for (const auto& fr : seq.frames()) emit(rec.push(fr));
  } else {
    FrameReader reader(std::cin, model.config().joint_count);
    while (auto fr = reader.next()) emit(rec.push(*fr));
  }
  emit(rec.finish());
  const auto events = extract_events(labels, model.labels().no_gesture(), c.online.min_duration,
                                     c.online.merge_gap);
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : events) {
    std::cout << "# event " << model.labels().name(e.label) << " " << e.start << " " << e.end << "\n";
    ev.push_back({{"label", model.labels().name(e.label)}, {"start", e.start}, {"end", e.end}});
  }
  if (!f.out.empty()) write_json({{"frames", labels.size()}, {"events", ev}}, f.out);
  return 0;
}

int cmd_eval_online(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c);
  const Model model = load_checkpoint(f.checkpoint);
  const ThresholdTable t = thresholds_or_default(f, c);
  if (f.data.empty()) throw InputError("--data <manifest.json> is required");
  const auto streams = load_split(f.data, f.split);
  std::vector<SequenceOutcome> outcomes;
  for (const auto& s : streams) {
    const RecognitionResult r = stream_recognize(model, t, s, c.online);
    outcomes.push_back({r.frame_labels, frame_labels_from_annotations(s, model.labels()), r.events,
                        events_from_annotations(s, model.labels())});
  }
  const MetricsReport report = evaluate_outcomes(outcomes, model.labels(), c.iou_threshold);
  write_json(report.to_json(), f.out);
  std::cerr << report.table();
  return 0;
}

int cmd_bench(const Flags& f) {
  const RunConfig c = effective_config(f);
  echo_config(c);
  std::vector<std::size_t> windows = f.bench_windows;
  if (f.window) windows = {*f.window};
  nlohmann::json rows = nlohmann::json::array();
  std::fprintf(stderr, "%7s %14s %14s %9s %12s %12s %9s\n", "window", "co_scores", "batch_scores",
               "ratio", "co_s/step", "batch_s/step", "speedup");
  for (std::size_t w : windows) {
    const StreamingBench b =
        bench_streaming(c.model.encoder, c.model.joint_count, w, f.bench_steps, 2, c.seed);
    rows.push_back(b.to_json());
    std::fprintf(stderr, "%7zu %14llu %14llu %9.5f %12.6f %12.6f %9.1f\n", w,
                 static_cast<unsigned long long>(b.continual_score_flops),
                 static_cast<unsigned long long>(b.batch_score_flops), b.score_ratio(),
                 b.continual_seconds, b.batch_seconds, b.speedup());
  }
  write_json({{"encoder", to_json(c.model)}, {"results", rows}}, f.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual spatio-temporal graph transformer for online hand-gesture recognition"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run config; flags override it")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "seed for data generation, initialization and shuffling");
    sub->add_option("--out", f.out, "output file or directory");
  };
  auto online = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", f.checkpoint, "model checkpoint")->capture_default_str();
    sub->add_option("--thresholds", f.thresholds, "threshold table")->capture_default_str();
    sub->add_option("--window", f.window, "online window W");
    sub->add_option("--stride", f.stride, "verdict stride");
    sub->add_option("--engine", f.engine, "batch | aligned | continual")
        ->check(CLI::IsMember({"batch", "aligned", "continual"}));
  };

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic gesture-stream dataset");
  common(gen);
  auto* imp = app.add_subcommand("import-shrec21", "convert a raw SHREC'21 release");
  common(imp);
  imp->add_option("source", f.source, "raw release directory")->required()->check(CLI::ExistingDirectory);
  auto* tr = app.add_subcommand("train", "train on a manifest's train split");
  common(tr);
  tr->add_option("--data", f.data, "dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--checkpoint", f.checkpoint, "checkpoint path when --out is not given");
  auto* lt = app.add_subcommand("learn-thresholds", "fit per-class probability thresholds");
  common(lt);
  online(lt);
  lt->add_option("--data", f.data, "dataset manifest")->required()->check(CLI::ExistingFile);
  auto* eo = app.add_subcommand("eval-offline", "window classification accuracy");
  common(eo);
  online(eo);
  eo->add_option("--data", f.data, "dataset manifest")->required()->check(CLI::ExistingFile);
  eo->add_option("--split", f.split, "train | val | test")->capture_default_str();
  auto* st = app.add_subcommand("stream", "label frames from a file or standard input");
  common(st);
  online(st);
  st->add_option("--input", f.input, "canonical sequence file; '-' or absent reads standard input");
  auto* ev = app.add_subcommand("eval-online", "online detection metrics over a split");
  common(ev);
  online(ev);
  ev->add_option("--data", f.data, "dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", f.split, "train | val | test")->capture_default_str();
  auto* be = app.add_subcommand("bench", "continual vs full-window recomputation cost");
  common(be);
  be->add_option("--window", f.window, "single window size (default 16, 64, 128)");
  be->add_option("--steps", f.bench_steps, "timed continual steps")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_synthetic(f);
    if (*imp) return cmd_import(f);
    if (*tr) return cmd_train(f);
    if (*lt) return cmd_learn_thresholds(f);
    if (*eo) return cmd_eval_offline(f);
    if (*st) return cmd_stream(f);
    if (*ev) return cmd_eval_online(f);
    if (*be) return cmd_bench(f);
  } catch (const NumericError& e) {
    std::cerr << "numeric guard: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
