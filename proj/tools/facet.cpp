// Command-line driver: data generation, the three training stages, encoding,
// evaluation and the ablation grid. Every command that produces results writes
// a manifest and a metrics CSV into the run directory.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "facet/ablation.hpp"

namespace fs = std::filesystem;
using namespace facet;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir = "run";
  std::string data_dir;
};

const char* kSplits[3] = {"train", "val", "test"};

std::string data_dir_of(const Common& c) { return c.data_dir.empty() ? (fs::path(c.run_dir) / "data").string() : c.data_dir; }

// Explicit --config, else the run directory's saved config, else defaults;
// --set overrides apply last.
RunConfig resolve_config(const Common& c) {
  Json j = Json::object();
  std::string path = c.config_path;
  if (path.empty() && fs::exists(fs::path(c.run_dir) / "config.json")) path = (fs::path(c.run_dir) / "config.json").string();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("config file " + path + " is not valid JSON");
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  return config_from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_run_dir(const Common& c, const RunConfig& cfg) {
  fs::create_directories(c.run_dir);
  write_json(fs::path(c.run_dir) / "config.json", to_json(cfg));
}

Dataset load_data(const Common& c) {
  const auto dir = data_dir_of(c);
  if (!fs::exists(fs::path(dir) / "train.fcv")) {
    throw std::runtime_error("no dataset in " + dir + " (run generate-data first)");
  }
  return load_dataset(dir);
}

void append_epochs(std::ostream& os, const StageReport& rep) {
  for (const auto& e : rep.epochs) {
    os << rep.stage << ',' << e.epoch << ',' << e.train_loss << ',';
    if (e.val_acc) os << *e.val_acc;
    os << '\n';
  }
}

std::string labels_csv(const std::vector<EncodedVideo>& videos) {
  std::ostringstream os;
  os << "video_id,identity";
  for (const char* n : kTraitShortNames) os << ',' << n;
  os << '\n';
  os.precision(9);
  for (const auto& v : videos) {
    os << v.video_id << ',' << v.identity;
    for (double t : v.traits.values) os << ',' << t;
    os << '\n';
  }
  return os.str();
}

std::string predictions_csv(const std::vector<EncodedVideo>& videos) {
  std::ostringstream os;
  os << "video_id";
  for (const char* n : kTraitShortNames) os << ',' << n;
  os << '\n';
  os.precision(9);
  for (const auto& v : videos) {
    os << v.video_id;
    for (double t : v.segment_average().values) os << ',' << t;
    os << '\n';
  }
  return os.str();
}

// video_id -> row of five numbers, from labels.csv or segment_average.csv.
std::map<std::int64_t, TraitVector> read_trait_csv(const fs::path& path, std::size_t skip_columns) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " (run encode first)");
  std::map<std::int64_t, TraitVector> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 1 + skip_columns + kTraitCount) throw io::FormatError("malformed row in " + path.string());
    TraitVector t;
    for (std::size_t i = 0; i < kTraitCount; ++i) t[i] = std::stod(cells[1 + skip_columns + i]);
    t.validate(path.string().c_str());
    out[std::stoll(cells[0])] = t;
  }
  return out;
}

std::vector<LabeledHeatmap> read_heatmaps(const fs::path& dir) {
  const auto labels = read_trait_csv(dir / "labels.csv", 1);
  std::vector<LabeledHeatmap> out;
  for (const auto& [id, t] : labels) {
    const auto path = dir / (std::to_string(id) + ".hm");
    if (!fs::exists(path)) throw std::runtime_error("missing heatmap file " + path.string());
    auto h = load_heatmap(path.string());
    if (h.video_id != id) throw io::FormatError("heatmap file " + path.string() + " holds video " + std::to_string(h.video_id));
    out.push_back({std::move(h), t});
  }
  if (out.empty()) throw std::runtime_error("no encoded videos in " + dir.string());
  return out;
}

void require(const fs::path& path, const char* hint) {
  if (!fs::exists(path)) throw std::runtime_error("missing " + path.string() + " (" + hint + ")");
}

int cmd_generate(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  prepare_run_dir(c, cfg);
  auto ds = generate_dataset(cfg, cfg.seed);
  round_labels_to_f32(ds);
  const auto dir = data_dir_of(c);
  fs::create_directories(dir);
  save_dataset(dir, ds);
  const std::string hash = dataset_hash(ds);
  write_json(fs::path(dir) / "manifest.json", Json{{"stage", "generate-data"},
                                                   {"config_hash", config_hash(cfg)},
                                                   {"seed", cfg.seed},
                                                   {"data_hash", hash},
                                                   {"videos", {ds.train.size(), ds.val.size(), ds.test.size()}},
                                                   {"config", to_json(cfg)}});
  std::ostringstream csv;
  csv << "split,videos,identities\n";
  const std::vector<SyntheticVideo>* splits[3] = {&ds.train, &ds.val, &ds.test};
  for (int s = 0; s < 3; ++s) {
    std::set<std::int64_t> ids;
    for (const auto& v : *splits[s]) ids.insert(v.identity);
    csv << kSplits[s] << ',' << splits[s]->size() << ',' << ids.size() << '\n';
  }
  write_text(fs::path(dir) / "splits.csv", csv.str());
  std::cout << "wrote " << dir << " (data hash " << hash << ")\n" << csv.str();
  return 0;
}

int cmd_train_backbone(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  prepare_run_dir(c, cfg);
  const auto ds = load_data(c);
  const std::string hash = dataset_hash(ds);
  Models m(cfg);
  const fs::path run = c.run_dir;
  std::ostringstream metrics;
  metrics << "stage,epoch,train_loss,val_acc\n";

  auto r1 = train_stage1(m, ds);
  save_checkpoint((run / "stage1.ckpt").string(), m.stage1_params());
  write_json(run / "manifest_stage1.json", stage_manifest(r1, cfg, hash));
  append_epochs(metrics, r1);
  std::cout << "stage1: monitor loss " << r1.scalars["monitor_loss_start"] << " -> "
            << r1.scalars["monitor_loss_epoch" + std::to_string(r1.epochs.size())] << '\n';

  auto r2 = train_stage2(m, ds);
  save_checkpoint((run / "backbone.ckpt").string(), m.backbone_params());
  write_json(run / "manifest_stage2.json", stage_manifest(r2, cfg, hash));
  append_epochs(metrics, r2);
  write_text(run / "backbone_metrics.csv", metrics.str());
  std::cout << "stage2: best epoch " << r2.best_epoch << ", val segment-average ACC " << r2.best_val_acc
            << ", orthogonality " << r2.scalars["loss2_start"] << " -> " << r2.scalars["loss2_end"] << '\n';
  return 0;
}

int cmd_encode(const Common& c, bool csv) {
  const RunConfig cfg = resolve_config(c);
  prepare_run_dir(c, cfg);
  const fs::path run = c.run_dir;
  require(run / "backbone.ckpt", "run train-backbone first");
  const auto ds = load_data(c);
  Models m(cfg);
  auto ps = m.backbone_params();
  load_checkpoint((run / "backbone.ckpt").string(), ps);
  const std::vector<SyntheticVideo>* splits[3] = {&ds.train, &ds.val, &ds.test};
  for (int s = 0; s < 3; ++s) {
    const fs::path dir = run / "encoded" / kSplits[s];
    fs::create_directories(dir);
    const auto enc = encode_split(m, *splits[s]);
    for (const auto& v : enc) {
      const std::string stem = std::to_string(v.video_id);
      io::write_file((dir / (stem + ".desc")).string(), encode_descriptors(v.video_id, v.descriptors));
      save_heatmap((dir / (stem + ".hm")).string(), v.heatmap);
      if (csv) {
        std::ostringstream os;
        write_heatmap_csv(os, v.heatmap);
        write_text(dir / (stem + ".csv"), os.str());
      }
    }
    write_text(dir / "labels.csv", labels_csv(enc));
    write_text(dir / "segment_average.csv", predictions_csv(enc));
    std::cout << kSplits[s] << ": encoded " << enc.size() << " videos into " << dir.string() << '\n';
  }
  return 0;
}

int cmd_train_head(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  prepare_run_dir(c, cfg);
  const fs::path run = c.run_dir;
  const auto train = read_heatmaps(run / "encoded" / "train");
  const auto val = read_heatmaps(run / "encoded" / "val");
  Models m(cfg);
  auto rep = train_stage3(m.head, cfg, train, val);
  save_checkpoint((run / "head.ckpt").string(), m.head_params());
  std::string data_hash = "unknown";
  const fs::path data_manifest = fs::path(data_dir_of(c)) / "manifest.json";
  if (fs::exists(data_manifest)) {
    std::ifstream in(data_manifest);
    data_hash = Json::parse(in).value("data_hash", "unknown");
  }
  write_json(run / "manifest_stage3.json", stage_manifest(rep, cfg, data_hash));
  std::ostringstream metrics;
  metrics << "stage,epoch,train_loss,val_acc\n";
  append_epochs(metrics, rep);
  write_text(run / "head_metrics.csv", metrics.str());
  std::cout << "stage3: best epoch " << rep.best_epoch << " of " << rep.epochs.size() << ", val ACC " << rep.best_val_acc
            << '\n';
  return 0;
}

int cmd_evaluate(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const fs::path run = c.run_dir;
  require(run / "head.ckpt", "run train-head first");
  Models m(cfg);
  auto ps = m.head_params();
  load_checkpoint((run / "head.ckpt").string(), ps);
  const auto train_labels = read_trait_csv(run / "encoded" / "train" / "labels.csv", 1);
  std::vector<TraitVector> train_y;
  for (const auto& [id, t] : train_labels) train_y.push_back(t);
  const TraitVector mean = mean_traits(train_y);

  std::ostringstream os;
  os << "split,mode,";
  write_acc_header(os);
  os << '\n';
  for (const char* split : {"val", "test"}) {
    const fs::path dir = run / "encoded" / split;
    const auto maps = read_heatmaps(dir);
    const auto labels = labels_of(maps);
    const auto seg = read_trait_csv(dir / "segment_average.csv", 0);
    std::vector<TraitVector> seg_preds;
    for (const auto& h : maps) seg_preds.push_back(seg.at(h.heatmap.video_id));
    const std::pair<const char*, AccReport> rows[3] = {
        {"spectral_head", acc_metric(head_predict(m.head, maps), labels)},
        {"segment_average", acc_metric(seg_preds, labels)},
        {"train_mean", constant_baseline(mean, labels)}};
    for (const auto& [mode, r] : rows) {
      os << split << ',' << mode << ',';
      write_acc_row(os, r);
      os << '\n';
    }
  }
  write_text(run / "evaluation.csv", os.str());
  write_json(run / "manifest_evaluate.json",
             Json{{"stage", "evaluate"}, {"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"config", to_json(cfg)}});
  std::cout << os.str();
  return 0;
}

int cmd_ablate(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  prepare_run_dir(c, cfg);
  const fs::path run = c.run_dir;
  const auto ds = load_data(c);
  const auto rep = run_ablations(cfg, ds);
  std::ostringstream test, val, probe;
  write_ablation_csv(test, rep, true);
  write_ablation_csv(val, rep, false);
  write_probe_csv(probe, rep);
  write_text(run / "ablation.csv", test.str());
  write_text(run / "ablation_val.csv", val.str());
  write_text(run / "identity_probe.csv", probe.str());
  write_json(run / "manifest_ablation.json", Json{{"stage", "ablate"},
                                                  {"config_hash", config_hash(cfg)},
                                                  {"seed", cfg.seed},
                                                  {"data_hash", dataset_hash(ds)},
                                                  {"config", to_json(cfg)}});
  std::cout << "test split\n" << test.str() << "\nidentity probe\n" << probe.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Apparent-personality pipeline on synthetic video: data, training, encoding, evaluation, ablations"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "JSON config file (defaults to <run-dir>/config.json if present)");
  app.add_option("-s,--set", common.overrides, "Override a config key, e.g. --set train.stage3.lr=0.01");
  app.add_option("-r,--run-dir", common.run_dir, "Run directory for checkpoints, manifests and metrics")
      ->capture_default_str();
  app.add_option("-d,--data", common.data_dir, "Dataset directory (default <run-dir>/data)");

  auto* gen = app.add_subcommand("generate-data", "Render the synthetic train/val/test videos");
  auto* backbone = app.add_subcommand("train-backbone", "Stages 1 and 2: C3D pre-training, then backbone + DS module");
  bool csv = false;
  auto* enc = app.add_subcommand("encode", "Write per-video descriptor and spectral heatmap files");
  enc->add_flag("--csv", csv, "Also write a human-readable CSV dump of every heatmap");
  auto* head = app.add_subcommand("train-head", "Stage 3: multitask head on the encoded heatmaps");
  auto* eval = app.add_subcommand("evaluate", "Per-trait ACC on the validation and test splits");
  auto* ablate = app.add_subcommand("ablate", "DS x video-level x multi-task ablation grid and identity probe");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_generate(common);
    if (backbone->parsed()) return cmd_train_backbone(common);
    if (enc->parsed()) return cmd_encode(common, csv);
    if (head->parsed()) return cmd_train_head(common);
    if (eval->parsed()) return cmd_evaluate(common);
    if (ablate->parsed()) return cmd_ablate(common);
  } catch (const std::exception& e) {
    std::cerr << "facet: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
