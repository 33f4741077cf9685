#pragma once

// The 2x2x2 ablation grid and the identity probe.
//
// Grid axes: DS training on/off, video-level encoding (segment average vs
// spectral head) and multi-task fusion vs five single-trait predictors.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "facet/train.hpp"

namespace facet {

// Five independent regressors (one per trait) on frozen segment features,
// averaged over the segments of a video.
class SegmentRegressors {
 public:
  SegmentRegressors(std::size_t in, std::size_t hidden, Rng& rng) {
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      fc1_.emplace_back(in, hidden, rng);
      fc2_.emplace_back(hidden, 1, rng);
    }
  }

  Tensor<Real> predict(const Tensor<Real>& x, std::size_t trait) const {
    return sigmoid(fc2_[trait](relu(fc1_[trait](x))));
  }

  void collect(ParameterSet<Real>& set, std::size_t trait) const {
    const std::string p = "regressor" + std::to_string(trait + 1);
    fc1_[trait].collect(set, p + ".fc1");
    fc2_[trait].collect(set, p + ".fc2");
  }

  std::vector<TraitVector> predict_videos(const std::vector<EncodedVideo>& videos) const {
    NoGradGuard no_grad;
    std::vector<TraitVector> out;
    for (const auto& v : videos) {
      auto x = rows_tensor(v.ds_inputs);
      TraitVector t;
      for (std::size_t i = 0; i < kTraitCount; ++i) {
        const auto p = predict(x, i);
        for (Real s : p.values()) t[i] += static_cast<double>(s);
        t[i] /= static_cast<double>(p.size());
      }
      out.push_back(t);
    }
    return out;
  }

  static Tensor<Real> rows_tensor(const std::vector<std::vector<double>>& rows) {
    std::vector<Real> v;
    for (const auto& r : rows)
      for (double x : r) v.push_back(static_cast<Real>(x));
    return Tensor<Real>({rows.size(), rows.front().size()}, std::move(v));
  }

 private:
  std::vector<Linear<Real>> fc1_, fc2_;
};

// Each regressor is trained on its own trait only, with its own optimizer,
// on segment features paired with the video label. Uses the stage-2 learning
// rate, the stage-3 batch size and epoch budget, and early stopping per trait
// on validation ACC.
inline SegmentRegressors train_segment_regressors(const RunConfig& cfg, const std::vector<EncodedVideo>& train,
                                                  const std::vector<EncodedVideo>& val) {
  Rng init = Rng(cfg.seed).fork(51);
  SegmentRegressors reg(train.front().ds_inputs.front().size(), cfg.head.regressor_hidden, init);
  std::vector<std::vector<double>> rows;
  std::vector<TraitVector> labels;
  for (const auto& v : train)
    for (const auto& r : v.ds_inputs) {
      rows.push_back(r);
      labels.push_back(v.traits);
    }
  const auto val_labels = labels_of(val);
  const std::size_t batch = cfg.train.stage3.batch_size;
  for (std::size_t trait = 0; trait < kTraitCount; ++trait) {
    ParameterSet<Real> ps;
    reg.collect(ps, trait);
    Adam<Real> opt(ps.trainable(), cfg.train.stage2.lr);
    Rng shuffle = Rng(cfg.seed).fork(61 + trait);
    auto order = detail::iota_order(rows.size());
    auto best = snapshot(ps);
    double best_acc = -1.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.train.stage3.max_epochs; ++epoch) {
      shuffle.shuffle(order);
      for (std::size_t b = 0; b < order.size(); b += batch) {
        const std::size_t e = std::min(order.size(), b + batch);
        std::vector<std::vector<double>> xb;
        std::vector<Real> yb;
        for (std::size_t k = b; k < e; ++k) {
          xb.push_back(rows[order[k]]);
          yb.push_back(static_cast<Real>(labels[order[k]][trait]));
        }
        auto loss = mse(reg.predict(SegmentRegressors::rows_tensor(xb), trait), Tensor<Real>({e - b, 1}, std::move(yb)));
        check_finite_loss(loss.item(), "segment regressor", epoch, b / batch);
        ps.zero_grad();
        backward(loss);
        opt.step();
      }
      const auto preds = reg.predict_videos(val);
      double err = 0.0;
      for (std::size_t n = 0; n < val.size(); ++n) err += std::abs(preds[n][trait] - val_labels[n][trait]);
      const double acc = 1.0 - err / static_cast<double>(val.size());
      if (acc > best_acc) {
        best_acc = acc;
        best = snapshot(ps);
        since_best = 0;
      } else if (++since_best >= cfg.train.patience) {
        break;
      }
    }
    restore(ps, best);
  }
  return reg;
}

// Multinomial logistic regression on standardized features; full-batch
// gradient descent with an L2 penalty. Returns accuracy on the test rows.
inline double logistic_probe_accuracy(const std::vector<std::vector<double>>& x_train, const std::vector<int>& y_train,
                                      const std::vector<std::vector<double>>& x_test, const std::vector<int>& y_test,
                                      int classes, std::size_t iterations = 400, double lr = 0.5, double l2 = 1e-3) {
  if (x_train.empty() || x_test.empty()) throw std::invalid_argument("identity probe: empty split");
  const std::size_t d = x_train.front().size(), n = x_train.size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& r : x_train)
    for (std::size_t j = 0; j < d; ++j) mu[j] += r[j] / static_cast<double>(n);
  for (const auto& r : x_train)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]) / static_cast<double>(n);
  for (auto& s : sd) s = std::sqrt(s) + 1e-8;
  auto standardize = [&](const std::vector<std::vector<double>>& rows) {
    auto out = rows;
    for (auto& r : out)
      for (std::size_t j = 0; j < d; ++j) r[j] = (r[j] - mu[j]) / sd[j];
    return out;
  };
  const auto xs = standardize(x_train), xt = standardize(x_test);
  const std::size_t k = static_cast<std::size_t>(classes);
  std::vector<double> w(k * (d + 1), 0.0);
  auto scores = [&](const std::vector<double>& r) {
    std::vector<double> s(k);
    for (std::size_t c = 0; c < k; ++c) {
      double z = w[c * (d + 1) + d];
      for (std::size_t j = 0; j < d; ++j) z += w[c * (d + 1) + j] * r[j];
      s[c] = z;
    }
    return s;
  };
  std::vector<double> grad(w.size());
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = scores(xs[i]);
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double g = s[c] / z - (static_cast<int>(c) == y_train[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[c * (d + 1) + j] += g * xs[i][j];
        grad[c * (d + 1) + d] += g;
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) {
      const bool bias = q % (d + 1) == d;
      w[q] -= lr * (grad[q] / static_cast<double>(n) + (bias ? 0.0 : l2 * w[q]));
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xt.size(); ++i) {
    auto s = scores(xt[i]);
    correct += static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin()) == y_test[i];
  }
  return static_cast<double>(correct) / static_cast<double>(xt.size());
}

struct ProbeResult {
  double personality = 0.0;
  double noise = 0.0;
  std::size_t identities = 0;
  std::size_t train_segments = 0;
  std::size_t test_segments = 0;

  double gap() const { return noise - personality; }
};

// Identity classification from frozen segment features of held-out
// identities. Within each identity, videos alternate between the probe's
// training and test halves, so the probe must recognise a person in a video it
// has not seen.
inline ProbeResult identity_probe(const std::vector<EncodedVideo>& videos) {
  std::map<std::int64_t, std::vector<const EncodedVideo*>> by_identity;
  for (const auto& v : videos) by_identity[v.identity].push_back(&v);
  std::map<std::int64_t, int> label;
  for (const auto& [id, vs] : by_identity) {
    if (vs.size() >= 2) label.emplace(id, static_cast<int>(label.size()));
  }
  if (label.size() < 2) throw std::invalid_argument("identity probe: need two identities with at least two videos");
  ProbeResult r;
  r.identities = label.size();
  std::vector<std::vector<double>> ptr, pte, ntr, nte;
  std::vector<int> ytr, yte;
  for (const auto& [id, vs] : by_identity) {
    if (!label.count(id)) continue;
    auto sorted = vs;
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->video_id < b->video_id; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const bool train = i % 2 == 0;
      for (std::size_t s = 0; s < sorted[i]->personality.size(); ++s) {
        (train ? ptr : pte).push_back(sorted[i]->personality[s]);
        (train ? ntr : nte).push_back(sorted[i]->noise[s]);
        (train ? ytr : yte).push_back(label[id]);
      }
    }
  }
  r.train_segments = ytr.size();
  r.test_segments = yte.size();
  const int k = static_cast<int>(label.size());
  r.personality = logistic_probe_accuracy(ptr, ytr, pte, yte, k);
  r.noise = logistic_probe_accuracy(ntr, ytr, nte, yte, k);
  return r;
}

struct AblationCell {
  bool ds = true;
  PredictMode video_level = PredictMode::SpectralHead;
  bool multi_task = true;
  AccReport val, test;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  std::vector<std::pair<bool, ProbeResult>> probes;  // (ds, result)
  AccReport baseline_test;
};

// Everything one backbone yields: the four cells sharing it and its probe.
struct BackboneCells {
  std::vector<AblationCell> cells;
  ProbeResult probe;
};

inline BackboneCells run_backbone_cells(const RunConfig& cfg, const Dataset& data) {
  BackboneCells out;
  Models m(cfg);
  train_backbone(m, data);
  const auto tr = encode_split(m, data.train), va = encode_split(m, data.val), te = encode_split(m, data.test);
  const auto yv = labels_of(va), yt = labels_of(te);

  AblationCell seg_multi{cfg.ds.enabled, PredictMode::SegmentAverage, true, {}, {}};
  seg_multi.val = acc_metric(segment_average_predictions(va), yv);
  seg_multi.test = acc_metric(segment_average_predictions(te), yt);

  const auto reg = train_segment_regressors(cfg, tr, va);
  AblationCell seg_single{cfg.ds.enabled, PredictMode::SegmentAverage, false, {}, {}};
  seg_single.val = acc_metric(reg.predict_videos(va), yv);
  seg_single.test = acc_metric(reg.predict_videos(te), yt);

  const auto htr = labeled_heatmaps(tr), hva = labeled_heatmaps(va), hte = labeled_heatmaps(te);
  train_stage3(m.head, cfg, htr, hva);
  AblationCell spec_multi{cfg.ds.enabled, PredictMode::SpectralHead, true, {}, {}};
  spec_multi.val = acc_metric(head_predict(m.head, hva), yv);
  spec_multi.test = acc_metric(head_predict(m.head, hte), yt);

  HeadConfig single_cfg = cfg.head;
  single_cfg.multi_task = false;
  Rng rh = Rng(cfg.seed).fork(15);
  MultiTaskHead<Real> single(single_cfg, rh);
  train_stage3(single, cfg, htr, hva, 1);
  AblationCell spec_single{cfg.ds.enabled, PredictMode::SpectralHead, false, {}, {}};
  spec_single.val = acc_metric(head_predict(single, hva), yv);
  spec_single.test = acc_metric(head_predict(single, hte), yt);

  out.cells = {seg_multi, seg_single, spec_multi, spec_single};
  out.probe = identity_probe(te);
  return out;
}

inline AblationReport run_ablations(const RunConfig& cfg, const Dataset& data) {
  AblationReport rep;
  for (bool ds : {true, false}) {
    RunConfig c = cfg;
    c.ds.enabled = ds;
    if (!ds && c.spectral_input == SpectralInput::Personality) c.spectral_input = SpectralInput::Descriptor;
    c.resolve();
    auto cells = run_backbone_cells(c, data);
    rep.cells.insert(rep.cells.end(), cells.cells.begin(), cells.cells.end());
    rep.probes.emplace_back(ds, cells.probe);
  }
  rep.baseline_test = constant_baseline(mean_traits(detail::labels_of(data.train)), detail::labels_of(data.test));
  return rep;
}

inline void write_ablation_csv(std::ostream& os, const AblationReport& rep, bool test_split = true) {
  os << "ds,video_level,task,";
  write_acc_header(os);
  os << '\n';
  for (const auto& c : rep.cells) {
    os << (c.ds ? "DS" : "Non-DS") << ',' << to_string(c.video_level) << ',' << (c.multi_task ? "multi" : "single")
       << ',';
    write_acc_row(os, test_split ? c.test : c.val);
    os << '\n';
  }
}

inline void write_probe_csv(std::ostream& os, const AblationReport& rep) {
  os << "ds,features,identity_accuracy,identities,train_segments,test_segments\n";
  const auto flags = os.flags();
  const auto precision = os.precision(4);
  os << std::fixed;
  for (const auto& [ds, p] : rep.probes) {
    for (int f = 0; f < 2; ++f) {
      os << (ds ? "DS" : "Non-DS") << ',' << (f == 0 ? "personality" : "noise") << ','
         << (f == 0 ? p.personality : p.noise) << ',' << p.identities << ',' << p.train_segments << ','
         << p.test_segments << '\n';
    }
  }
  os.flags(flags);
  os.precision(precision);
}

}  // namespace facet
