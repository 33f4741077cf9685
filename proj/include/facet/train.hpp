#pragma once

// Three-stage training protocol, per-video encoding and video-level
// prediction. Everything runs in 32-bit floats and is deterministic for a
// given RunConfig: every source of randomness is forked from cfg.seed.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "facet/c3d_transformer.hpp"
#include "facet/checkpoint.hpp"
#include "facet/config.hpp"
#include "facet/data.hpp"
#include "facet/domain_specific.hpp"
#include "facet/metrics.hpp"
#include "facet/multitask_head.hpp"
#include "facet/optim.hpp"
#include "facet/spectral.hpp"

namespace facet {

using Real = float;

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_finite_loss(double loss, const std::string& stage, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(stage + ": loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                          std::to_string(step));
  }
}

// Stage-1 regression head: global average of the C3D volume, one linear layer.
struct Stage1Head {
  Linear<Real> fc;

  Stage1Head() = default;
  Stage1Head(std::size_t channels, Rng& rng) : fc(channels, kTraitCount, rng) {}

  Tensor<Real> operator()(const Tensor<Real>& volume) const {
    const auto& s = volume.shape();
    return sigmoid(fc(global_avg_pool(reshape(volume, {s[0], s[1], s[2] * s[3] * s[4]}))));
  }

  void collect(ParameterSet<Real>& set, const std::string& prefix) const { fc.collect(set, join_name(prefix, "fc")); }
};

// All networks of one run, initialised from the run seed.
struct Models {
  RunConfig cfg;
  C3DTransformer<Real> backbone;
  DomainSpecificModule<Real> ds;
  Stage1Head stage1;
  MultiTaskHead<Real> head;

  explicit Models(const RunConfig& c) : cfg(c) {
    Rng root(c.seed);
    Rng rb = root.fork(11), rd = root.fork(12), rs = root.fork(13), rh = root.fork(14);
    backbone = C3DTransformer<Real>(c.backbone, rb);
    ds = DomainSpecificModule<Real>(c.ds, rd);
    stage1 = Stage1Head(c.backbone.volume_channels(), rs);
    head = MultiTaskHead<Real>(c.head, rh);
  }

  ParameterSet<Real> stage1_params() const {
    ParameterSet<Real> ps;
    backbone.collect_c3d(ps, "backbone");
    stage1.collect(ps, "stage1_head");
    return ps;
  }

  // Backbone plus DS module: the stage-2 checkpoint.
  ParameterSet<Real> backbone_params() const {
    ParameterSet<Real> ps;
    backbone.collect(ps, "backbone");
    ds.collect(ps, "ds");
    return ps;
  }

  ParameterSet<Real> head_params() const {
    ParameterSet<Real> ps;
    head.collect(ps, "head");
    return ps;
  }

  Tensor<Real> ds_input(const BackboneOutput<Real>& out) const {
    return cfg.ds.per_scale ? concat(out.per_scale, 1) : out.descriptor;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_acc;
};

struct StageReport {
  std::string stage;
  std::string optimizer;
  double lr = 0.0;
  std::size_t batch_size = 0;
  std::size_t max_epochs = 0;
  std::size_t best_epoch = 0;  // 1-based; 0 when no validation was run
  double best_val_acc = 0.0;
  std::vector<EpochRecord> epochs;
  std::map<std::string, double> scalars;
};

namespace detail {

struct SegmentRef {
  const SyntheticVideo* video;
  std::size_t index;
};

inline std::vector<SegmentRef> segment_refs(const std::vector<SyntheticVideo>& videos, std::size_t length) {
  std::vector<SegmentRef> refs;
  for (const auto& v : videos)
    for (std::size_t s = 0; s < v.segment_count(length); ++s) refs.push_back({&v, s});
  if (refs.empty()) throw std::invalid_argument("training split has no segments");
  return refs;
}

inline Tensor<Real> clip_batch(const std::vector<SegmentClip>& clips) {
  std::vector<const SegmentClip*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  return batch_clips<Real>(ptrs);
}

inline Tensor<Real> label_batch(const std::vector<TraitVector>& labels) {
  std::vector<Real> v;
  for (const auto& l : labels)
    for (double t : l.values) v.push_back(static_cast<Real>(t));
  return Tensor<Real>({labels.size(), kTraitCount}, std::move(v));
}

inline void load_segments(const std::vector<SegmentRef>& refs, const std::vector<std::size_t>& order, std::size_t begin,
                          std::size_t end, std::size_t length, Tensor<Real>& x, Tensor<Real>& y) {
  std::vector<SegmentClip> clips;
  std::vector<TraitVector> labels;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& r = refs[order[i]];
    clips.push_back(r.video->segment(r.index, length));
    labels.push_back(r.video->traits);
  }
  x = clip_batch(clips);
  y = label_batch(labels);
}

inline std::vector<std::size_t> iota_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

// Fixed subset of training segments used to track losses between epochs.
inline std::vector<std::size_t> monitor_subset(std::size_t n, std::uint64_t seed, std::size_t cap = 60) {
  auto order = iota_order(n);
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(std::min(cap, n));
  return order;
}

inline std::vector<TraitVector> to_traits(const Tensor<Real>& preds) {
  std::vector<TraitVector> out(preds.dim(0));
  const auto& v = preds.values();
  for (std::size_t b = 0; b < out.size(); ++b)
    for (std::size_t i = 0; i < kTraitCount; ++i) out[b][i] = static_cast<double>(v[b * kTraitCount + i]);
  return out;
}

inline std::vector<TraitVector> labels_of(const std::vector<SyntheticVideo>& videos) {
  std::vector<TraitVector> out;
  for (const auto& v : videos) out.push_back(v.traits);
  return out;
}

}  // namespace detail

inline double stage1_monitor_loss(const Models& m, const std::vector<detail::SegmentRef>& refs,
                                  const std::vector<std::size_t>& subset) {
  NoGradGuard no_grad;
  ForwardContext eval;
  double total = 0.0;
  for (std::size_t b = 0; b < subset.size(); b += 10) {
    Tensor<Real> x, y;
    detail::load_segments(refs, subset, b, std::min(subset.size(), b + 10), m.cfg.backbone.segment_length, x, y);
    total += static_cast<double>(mse(m.stage1(m.backbone.c3d()(x, eval)), y, Reduction::Sum).item());
  }
  return total / static_cast<double>(subset.size() * kTraitCount);
}

// C3D block + temporary head, plain MSE against the video label.
inline StageReport train_stage1(Models& m, const Dataset& data) {
  const auto& sc = m.cfg.train.stage1;
  const std::size_t L = m.cfg.backbone.segment_length;
  StageReport rep{"stage1", "adam", sc.lr, sc.batch_size, sc.max_epochs, 0, 0.0, {}, {}};
  const auto refs = detail::segment_refs(data.train, L);
  const auto monitor = detail::monitor_subset(refs.size(), Rng(m.cfg.seed).fork(41).next_u64());
  auto ps = m.stage1_params();
  Adam<Real> opt(ps.trainable(), sc.lr);
  Rng shuffle = Rng(m.cfg.seed).fork(21);
  Rng drop = Rng(m.cfg.seed).fork(31);
  rep.scalars["monitor_loss_start"] = stage1_monitor_loss(m, refs, monitor);
  auto order = detail::iota_order(refs.size());
  for (std::size_t epoch = 1; epoch <= sc.max_epochs; ++epoch) {
    shuffle.shuffle(order);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < order.size(); b += sc.batch_size, ++steps) {
      Tensor<Real> x, y;
      detail::load_segments(refs, order, b, std::min(order.size(), b + sc.batch_size), L, x, y);
      ForwardContext ctx{true, &drop};
      auto loss = mse(m.stage1(m.backbone.c3d()(x, ctx)), y);
      const double lv = loss.item();
      check_finite_loss(lv, "stage1", epoch, steps);
      ps.zero_grad();
      backward(loss);
      opt.step();
      sum += lv;
    }
    rep.epochs.push_back({epoch, sum / static_cast<double>(steps), std::nullopt});
    rep.scalars["monitor_loss_epoch" + std::to_string(epoch)] = stage1_monitor_loss(m, refs, monitor);
  }
  return rep;
}

// Per-video outputs of the trained backbone and DS module.
struct EncodedVideo {
  std::int64_t video_id = 0;
  std::int64_t identity = 0;
  TraitVector traits;
  std::vector<std::vector<double>> descriptors;  // N x D
  std::vector<std::vector<double>> ds_inputs;    // N x ds input width
  std::vector<std::vector<double>> personality;  // N x 5*dim
  std::vector<std::vector<double>> noise;        // N x 5*dim
  std::vector<TraitVector> segment_predictions;
  SpectralHeatmap heatmap;

  // Mean of the segment-level DS predictions.
  TraitVector segment_average() const {
    if (segment_predictions.empty()) throw std::invalid_argument("segment_average: video has no segments");
    TraitVector t;
    for (const auto& p : segment_predictions)
      for (std::size_t i = 0; i < kTraitCount; ++i) t[i] += p[i];
    for (std::size_t i = 0; i < kTraitCount; ++i) t[i] /= static_cast<double>(segment_predictions.size());
    return t;
  }
};

namespace detail {

inline std::vector<std::vector<double>> rows_of(const Tensor<Real>& t) {
  const std::size_t n = t.dim(0), d = t.size() / n;
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  const auto& v = t.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) rows[i][j] = static_cast<double>(v[i * d + j]);
  return rows;
}

// Heatmaps are stored as 32-bit floats; rounding here keeps in-memory and
// file-based runs identical.
inline void round_to_f32(SpectralHeatmap& h) {
  for (auto& a : h.amplitude) a = static_cast<float>(a);
  for (auto& p : h.phase) p = static_cast<float>(p);
}

}  // namespace detail

inline SpectralHeatmap heatmap_from_rows(std::int64_t video_id, const std::vector<std::vector<double>>& rows,
                                         std::size_t frequencies) {
  auto h = build_heatmap(DescriptorSequence::from_rows(video_id, rows), frequencies);
  detail::round_to_f32(h);
  return h;
}

// Per-segment rows that feed the spectral transform.
inline std::vector<std::vector<double>> spectral_rows(SpectralInput input, const EncodedVideo& e) {
  switch (input) {
    case SpectralInput::Personality: return e.personality;
    case SpectralInput::DescriptorPredictions: {
      auto rows = e.descriptors;
      for (std::size_t n = 0; n < rows.size(); ++n) {
        rows[n].insert(rows[n].end(), e.segment_predictions[n].values.begin(), e.segment_predictions[n].values.end());
      }
      return rows;
    }
    default: return e.descriptors;
  }
}

inline EncodedVideo encode_video(const Models& m, const SyntheticVideo& video) {
  NoGradGuard no_grad;
  ForwardContext eval;
  EncodedVideo e;
  e.video_id = video.video_id;
  e.identity = video.identity;
  e.traits = video.traits;
  const auto clips = video.segments(m.cfg.backbone.segment_length);
  if (clips.empty()) throw std::invalid_argument("encode: video " + std::to_string(video.video_id) + " has no segments");
  auto out = m.backbone(detail::clip_batch(clips), eval);
  auto input = m.ds_input(out);
  auto pairs = m.ds.encode_all(input, eval, true);
  std::vector<Tensor<Real>> pers, noise;
  for (const auto& p : pairs) {
    pers.push_back(p.personality);
    noise.push_back(p.noise);
  }
  e.descriptors = detail::rows_of(out.descriptor);
  e.ds_inputs = detail::rows_of(input);
  e.personality = detail::rows_of(concat(pers, 1));
  e.noise = detail::rows_of(concat(noise, 1));
  e.segment_predictions = detail::to_traits(m.ds.predict(pairs));
  e.heatmap = heatmap_from_rows(video.video_id, spectral_rows(m.cfg.spectral_input, e), m.cfg.head.frequencies);
  return e;
}

inline std::vector<EncodedVideo> encode_split(const Models& m, const std::vector<SyntheticVideo>& videos) {
  std::vector<EncodedVideo> out;
  out.reserve(videos.size());
  for (const auto& v : videos) out.push_back(encode_video(m, v));
  return out;
}

inline std::vector<TraitVector> segment_average_predictions(const std::vector<EncodedVideo>& videos) {
  std::vector<TraitVector> out;
  for (const auto& v : videos) out.push_back(v.segment_average());
  return out;
}

inline std::vector<TraitVector> labels_of(const std::vector<EncodedVideo>& videos) {
  std::vector<TraitVector> out;
  for (const auto& v : videos) out.push_back(v.traits);
  return out;
}

inline double ds_monitor_orthogonality(const Models& m, const std::vector<detail::SegmentRef>& refs,
                                       const std::vector<std::size_t>& subset) {
  NoGradGuard no_grad;
  ForwardContext eval;
  double total = 0.0;
  for (std::size_t b = 0; b < subset.size(); b += 10) {
    Tensor<Real> x, y;
    detail::load_segments(refs, subset, b, std::min(subset.size(), b + 10), m.cfg.backbone.segment_length, x, y);
    auto input = m.ds_input(m.backbone(x, eval));
    total += static_cast<double>(loss_orthogonality(m.ds.encode_all(input, eval, true), m.cfg.ds.orthogonality).item());
  }
  return total / static_cast<double>(subset.size());
}

// Full backbone + DS module on the overall DS loss (the supervision term alone
// when DS is disabled). Early stopping on validation segment-average ACC; the
// best weights are restored before returning.
inline StageReport train_stage2(Models& m, const Dataset& data) {
  const auto& sc = m.cfg.train.stage2;
  const std::size_t L = m.cfg.backbone.segment_length;
  StageReport rep{"stage2", "adam", sc.lr, sc.batch_size, sc.max_epochs, 0, 0.0, {}, {}};
  const auto refs = detail::segment_refs(data.train, L);
  const auto monitor = detail::monitor_subset(refs.size(), Rng(m.cfg.seed).fork(42).next_u64());
  auto ps = m.backbone_params();
  Adam<Real> opt(ps.trainable(), sc.lr);
  Rng shuffle = Rng(m.cfg.seed).fork(22);
  Rng drop = Rng(m.cfg.seed).fork(32);
  rep.scalars["loss2_start"] = ds_monitor_orthogonality(m, refs, monitor);
  const auto val_labels = detail::labels_of(data.val);
  auto best = snapshot(ps);
  rep.best_val_acc = -1.0;
  std::size_t since_best = 0;
  auto order = detail::iota_order(refs.size());
  for (std::size_t epoch = 1; epoch <= sc.max_epochs; ++epoch) {
    shuffle.shuffle(order);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < order.size(); b += sc.batch_size, ++steps) {
      Tensor<Real> x, y;
      detail::load_segments(refs, order, b, std::min(order.size(), b + sc.batch_size), L, x, y);
      ForwardContext ctx{true, &drop};
      auto losses = m.ds.losses(m.ds_input(m.backbone(x, ctx)), y, ctx);
      auto loss = m.cfg.ds.enabled ? losses.overall : losses.supervision;
      const double lv = loss.item();
      check_finite_loss(lv, "stage2", epoch, steps);
      ps.zero_grad();
      backward(loss);
      opt.step();
      sum += lv;
    }
    const double acc = acc_metric(segment_average_predictions(encode_split(m, data.val)), val_labels).average;
    rep.epochs.push_back({epoch, sum / static_cast<double>(steps), acc});
    if (acc > rep.best_val_acc) {
      rep.best_val_acc = acc;
      rep.best_epoch = epoch;
      best = snapshot(ps);
      since_best = 0;
    } else if (++since_best >= m.cfg.train.patience) {
      break;
    }
  }
  restore(ps, best);
  rep.scalars["loss2_end"] = ds_monitor_orthogonality(m, refs, monitor);
  return rep;
}

// Stage 1 followed by stage 2.
inline std::vector<StageReport> train_backbone(Models& m, const Dataset& data) {
  std::vector<StageReport> reps;
  reps.push_back(train_stage1(m, data));
  reps.push_back(train_stage2(m, data));
  return reps;
}

struct LabeledHeatmap {
  SpectralHeatmap heatmap;
  TraitVector traits;
};

inline std::vector<LabeledHeatmap> labeled_heatmaps(const std::vector<EncodedVideo>& videos) {
  std::vector<LabeledHeatmap> out;
  for (const auto& v : videos) out.push_back({v.heatmap, v.traits});
  return out;
}

namespace detail {

inline Tensor<Real> heatmap_batch(const std::vector<LabeledHeatmap>& maps, const std::vector<std::size_t>& order,
                                  std::size_t begin, std::size_t end, Tensor<Real>* labels = nullptr) {
  if (begin >= end) throw std::invalid_argument("heatmap_batch: empty batch");
  const auto& first = maps[order[begin]].heatmap;
  const std::size_t per = 2 * first.channels * first.frequencies;
  std::vector<Real> v;
  v.reserve((end - begin) * per);
  std::vector<TraitVector> ys;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& h = maps[order[i]].heatmap;
    if (h.channels != first.channels || h.frequencies != first.frequencies) {
      throw ShapeError("heatmap_batch: heatmaps of different sizes in one batch");
    }
    for (double a : h.amplitude) v.push_back(static_cast<Real>(a));
    for (double p : h.phase) v.push_back(static_cast<Real>(p));
    ys.push_back(maps[order[i]].traits);
  }
  if (labels) *labels = label_batch(ys);
  return Tensor<Real>({end - begin, 2, first.channels, first.frequencies}, std::move(v));
}

}  // namespace detail

inline std::vector<TraitVector> head_predict(const MultiTaskHead<Real>& head, const std::vector<LabeledHeatmap>& maps) {
  NoGradGuard no_grad;
  ForwardContext eval;
  std::vector<TraitVector> out;
  const auto order = detail::iota_order(maps.size());
  for (std::size_t b = 0; b < maps.size(); b += 64) {
    auto preds = detail::to_traits(head(detail::heatmap_batch(maps, order, b, std::min(maps.size(), b + 64)), eval).reported());
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

inline std::vector<TraitVector> labels_of(const std::vector<LabeledHeatmap>& maps) {
  std::vector<TraitVector> out;
  for (const auto& m : maps) out.push_back(m.traits);
  return out;
}

// Multitask head on head_loss with SGD. The input normalizer is fitted on the
// training heatmaps first. Validation ACC is computed every epoch and the best
// weights are kept.
inline StageReport train_stage3(MultiTaskHead<Real>& head, const RunConfig& cfg, const std::vector<LabeledHeatmap>& train,
                                const std::vector<LabeledHeatmap>& val, std::uint64_t salt = 0) {
  const auto& sc = cfg.train.stage3;
  StageReport rep{"stage3", "sgd", sc.lr, sc.batch_size, sc.max_epochs, 0, 0.0, {}, {}};
  rep.scalars["momentum"] = cfg.train.sgd_momentum;
  if (train.empty() || val.empty()) throw std::invalid_argument("stage3: empty training or validation split");
  std::vector<SpectralHeatmap> fit;
  for (const auto& t : train) fit.push_back(t.heatmap);
  head.normalizer().fit(fit);
  ParameterSet<Real> ps;
  head.collect(ps, "head");
  Sgd<Real> opt(ps.trainable(), sc.lr, cfg.train.sgd_momentum);
  Rng shuffle = Rng(cfg.seed).fork(23 + 100 * salt);
  Rng drop = Rng(cfg.seed).fork(33 + 100 * salt);
  const auto val_labels = labels_of(val);
  auto best = snapshot(ps);
  rep.best_val_acc = -1.0;
  std::size_t since_best = 0;
  auto order = detail::iota_order(train.size());
  for (std::size_t epoch = 1; epoch <= sc.max_epochs; ++epoch) {
    shuffle.shuffle(order);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < order.size(); b += sc.batch_size, ++steps) {
      Tensor<Real> y;
      auto x = detail::heatmap_batch(train, order, b, std::min(order.size(), b + sc.batch_size), &y);
      ForwardContext ctx{true, &drop};
      auto loss = head_loss(head(x, ctx), y);
      const double lv = loss.item();
      check_finite_loss(lv, "stage3", epoch, steps);
      ps.zero_grad();
      backward(loss);
      opt.step();
      sum += lv;
    }
    const double acc = acc_metric(head_predict(head, val), val_labels).average;
    rep.epochs.push_back({epoch, sum / static_cast<double>(steps), acc});
    if (acc > rep.best_val_acc) {
      rep.best_val_acc = acc;
      rep.best_epoch = epoch;
      best = snapshot(ps);
      since_best = 0;
    } else if (++since_best >= cfg.train.patience) {
      break;
    }
  }
  restore(ps, best);
  return rep;
}

enum class PredictMode { SegmentAverage, SpectralHead };

inline const char* to_string(PredictMode m) {
  return m == PredictMode::SegmentAverage ? "segment_average" : "spectral_head";
}

// Video-level trait estimate from trained models.
inline TraitVector predict_video(const Models& m, const SyntheticVideo& video, PredictMode mode) {
  auto e = encode_video(m, video);
  if (mode == PredictMode::SegmentAverage) return e.segment_average();
  return head_predict(m.head, {{e.heatmap, e.traits}}).front();
}

// Descriptor file: i64 video_id | u32 N | u32 D | N*D f32, row-major.
inline std::vector<std::uint8_t> encode_descriptors(std::int64_t video_id, const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("descriptor file: no rows");
  io::Writer w;
  w.i64(video_id);
  w.u32(static_cast<std::uint32_t>(rows.size()));
  w.u32(static_cast<std::uint32_t>(rows.front().size()));
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ShapeError("descriptor file: ragged rows");
    for (double v : r) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

inline std::pair<std::int64_t, std::vector<std::vector<double>>> decode_descriptors(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  const std::int64_t id = r.i64();
  const std::size_t n = r.u32(), d = r.u32();
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& row : rows)
    for (auto& v : row) v = r.f32();
  if (!r.at_end()) throw io::FormatError("trailing bytes after descriptor payload");
  return {id, rows};
}

inline Json stage_manifest(const StageReport& rep, const RunConfig& cfg, const std::string& data_hash) {
  Json epochs = Json::array();
  for (const auto& e : rep.epochs) {
    Json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    if (e.val_acc) row["val_acc"] = *e.val_acc;
    epochs.push_back(row);
  }
  return Json{{"stage", rep.stage},
              {"config_hash", config_hash(cfg)},
              {"seed", cfg.seed},
              {"data_hash", data_hash},
              {"optimizer", rep.optimizer},
              {"lr", rep.lr},
              {"batch_size", rep.batch_size},
              {"max_epochs", rep.max_epochs},
              {"epochs_run", rep.epochs.size()},
              {"best_epoch", rep.best_epoch},
              {"best_val_acc", rep.best_val_acc},
              {"scalars", rep.scalars},
              {"epochs", epochs},
              {"config", to_json(cfg)}};
}

}  // namespace facet
