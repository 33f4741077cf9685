#pragma once

// Run configuration. Stored as JSON; every key has a default so a config file
// only needs the keys it changes. Unknown keys are rejected to catch typos.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "facet/binary_io.hpp"
#include "facet/c3d_transformer.hpp"
#include "facet/domain_specific.hpp"
#include "facet/multitask_head.hpp"

namespace facet {

using Json = nlohmann::json;

struct DataConfig {
  std::size_t train_videos = 300;
  std::size_t val_videos = 60;
  std::size_t test_videos = 60;
  std::size_t identities = 60;
  std::size_t frames_per_video = 90;
  // Share of each video's traits drawn from its identity; the rest is drawn
  // per video. This is what ties labels to appearance in the training data.
  double identity_trait_share = 0.5;
  double pixel_noise = 0.02;
};

struct StageConfig {
  double lr = 0.001;
  std::size_t batch_size = 3;
  std::size_t max_epochs = 10;
};

struct TrainConfig {
  StageConfig stage1{0.005, 3, 2};
  StageConfig stage2{0.001, 3, 6};
  StageConfig stage3{0.0005, 64, 60};
  double sgd_momentum = 0.9;
  std::size_t patience = 5;
};

// DescriptorPredictions appends the five per-segment trait predictions to each descriptor row.
enum class SpectralInput { Descriptor, Personality, DescriptorPredictions };

inline const char* to_string(SpectralInput s) {
  switch (s) {
    case SpectralInput::Descriptor: return "descriptor";
    case SpectralInput::Personality: return "personality";
    case SpectralInput::DescriptorPredictions: return "descriptor_predictions";
  }
  return "descriptor";
}

struct RunConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  BackboneConfig backbone;
  DSConfig ds;
  HeadConfig head;
  SpectralInput spectral_input = SpectralInput::Descriptor;
  TrainConfig train;

  std::size_t segments_per_video() const { return data.frames_per_video / backbone.segment_length; }

  // Width of the per-segment vectors that form the spectral signal.
  std::size_t spectral_channels() const {
    switch (spectral_input) {
      case SpectralInput::Personality: return kTraitCount * ds.dim;
      case SpectralInput::DescriptorPredictions: return backbone.descriptor_dim + kTraitCount;
      default: return backbone.descriptor_dim;
    }
  }

  // Fills the sizes that are implied by other settings.
  void resolve() {
    ds.input_dim = ds.per_scale ? backbone.rates.size() * backbone.scale_dim : backbone.descriptor_dim;
    head.descriptor_dim = spectral_channels();
  }

  void validate() const {
    backbone.validate();
    ds.weights.validate();
    if (head.frequencies == 0) throw std::invalid_argument("config: spectral.frequencies (M) must be at least 1");
    for (const auto* s : {&train.stage1, &train.stage2, &train.stage3}) {
      if (s->batch_size == 0) throw std::invalid_argument("config: batch sizes must be at least 1");
      if (!(s->lr > 0.0)) throw std::invalid_argument("config: learning rates must be positive");
    }
    if (data.frames_per_video < backbone.segment_length) {
      throw std::invalid_argument("config: a video must hold at least one segment");
    }
    if (!(data.identity_trait_share >= 0.0 && data.identity_trait_share <= 1.0)) {
      throw std::invalid_argument("config: data.identity_trait_share must lie in [0,1]");
    }
    if (ds.dropout < 0.0 || ds.dropout >= 1.0 || head.dropout < 0.0 || head.dropout >= 1.0) {
      throw std::invalid_argument("config: dropout must lie in [0,1)");
    }
    if (spectral_input == SpectralInput::Personality && !ds.enabled) {
      throw std::invalid_argument("config: spectral.input=personality needs ds.enabled");
    }
  }
};

inline Json to_json(const RunConfig& c) {
  const auto& b = c.backbone;
  const auto& t = c.train;
  auto stage = [](const StageConfig& s) {
    return Json{{"lr", s.lr}, {"batch_size", s.batch_size}, {"max_epochs", s.max_epochs}};
  };
  return Json{
      {"seed", c.seed},
      {"data",
       {{"train_videos", c.data.train_videos},
        {"val_videos", c.data.val_videos},
        {"test_videos", c.data.test_videos},
        {"identities", c.data.identities},
        {"frames_per_video", c.data.frames_per_video},
        {"identity_trait_share", c.data.identity_trait_share},
        {"pixel_noise", c.data.pixel_noise}}},
      {"backbone",
       {{"in_channels", b.in_channels},
        {"segment_length", b.segment_length},
        {"height", b.height},
        {"width", b.width},
        {"channels", b.channels},
        {"rates", b.rates},
        {"d_model", b.d_model},
        {"heads", b.heads},
        {"ff_dim", b.ff_dim},
        {"attention_layers", b.attention_layers},
        {"scale_dim", b.scale_dim},
        {"descriptor_dim", b.descriptor_dim},
        {"positional_encoding", b.positional_encoding},
        {"share_transformers", b.share_transformers},
        {"bn_eps", b.bn_eps},
        {"bn_momentum", b.bn_momentum}}},
      {"ds",
       {{"enabled", c.ds.enabled},
        {"alpha", c.ds.weights.alpha},
        {"beta", c.ds.weights.beta},
        {"gamma", c.ds.weights.gamma},
        {"dim", c.ds.dim},
        {"decoder_hidden", c.ds.decoder_hidden},
        {"dropout", c.ds.dropout},
        {"per_scale", c.ds.per_scale},
        {"orthogonality", c.ds.orthogonality == Orthogonality::PerSample ? "per_sample" : "batch_matrix"},
        {"decoder_combine", c.ds.decoder_combine == DecoderCombine::Concat ? "concat" : "sum"},
        {"joint_heads", c.ds.joint_heads}}},
      {"spectral",
       {{"frequencies", c.head.frequencies},
        {"input", to_string(c.spectral_input)}}},
      {"head",
       {{"branch_channels", c.head.branch_channels},
        {"kernel", c.head.kernel},
        {"dropout", c.head.dropout},
        {"regressor_hidden", c.head.regressor_hidden},
        {"residual_channels", c.head.residual_channels},
        {"fc_dims", c.head.fc_dims},
        {"multi_task", c.head.multi_task}}},
      {"train",
       {{"stage1", stage(t.stage1)},
        {"stage2", stage(t.stage2)},
        {"stage3", stage(t.stage3)},
        {"sgd_momentum", t.sgd_momentum},
        {"patience", t.patience}}},
  };
}

namespace detail {

inline void check_known_keys(const Json& given, const Json& known, const std::string& path) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!known.contains(it.key())) throw std::invalid_argument("config: unknown key '" + key + "'");
    if (it->is_object()) {
      if (!known[it.key()].is_object()) throw std::invalid_argument("config: '" + key + "' is not a section");
      check_known_keys(*it, known[it.key()], key);
    }
  }
}

template <class E>
E parse_enum(const std::string& key, const std::string& value, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, e] : options) {
    if (value == name) return e;
  }
  throw std::invalid_argument("config: invalid value '" + value + "' for " + key);
}

}  // namespace detail

// Defaults overlaid with the keys present in j.
inline RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  RunConfig c;
  Json full = to_json(c);
  detail::check_known_keys(j, full, "");
  full.merge_patch(j);
  try {
    c.seed = full["seed"].get<std::uint64_t>();
    const auto& d = full["data"];
    c.data.train_videos = d["train_videos"];
    c.data.val_videos = d["val_videos"];
    c.data.test_videos = d["test_videos"];
    c.data.identities = d["identities"];
    c.data.frames_per_video = d["frames_per_video"];
    c.data.identity_trait_share = d["identity_trait_share"];
    c.data.pixel_noise = d["pixel_noise"];

    const auto& b = full["backbone"];
    c.backbone.in_channels = b["in_channels"];
    c.backbone.segment_length = b["segment_length"];
    c.backbone.height = b["height"];
    c.backbone.width = b["width"];
    c.backbone.channels = b["channels"].get<std::vector<std::size_t>>();
    c.backbone.rates = b["rates"].get<std::vector<std::size_t>>();
    c.backbone.d_model = b["d_model"];
    c.backbone.heads = b["heads"];
    c.backbone.ff_dim = b["ff_dim"];
    c.backbone.attention_layers = b["attention_layers"];
    c.backbone.scale_dim = b["scale_dim"];
    c.backbone.descriptor_dim = b["descriptor_dim"];
    c.backbone.positional_encoding = b["positional_encoding"];
    c.backbone.share_transformers = b["share_transformers"];
    c.backbone.bn_eps = b["bn_eps"];
    c.backbone.bn_momentum = b["bn_momentum"];

    const auto& ds = full["ds"];
    c.ds.enabled = ds["enabled"];
    c.ds.weights = {ds["alpha"], ds["beta"], ds["gamma"]};
    c.ds.dim = ds["dim"];
    c.ds.decoder_hidden = ds["decoder_hidden"];
    c.ds.dropout = ds["dropout"];
    c.ds.per_scale = ds["per_scale"];
    c.ds.orthogonality = detail::parse_enum<Orthogonality>(
        "ds.orthogonality", ds["orthogonality"],
        {{"per_sample", Orthogonality::PerSample}, {"batch_matrix", Orthogonality::BatchMatrix}});
    c.ds.decoder_combine = detail::parse_enum<DecoderCombine>(
        "ds.decoder_combine", ds["decoder_combine"], {{"concat", DecoderCombine::Concat}, {"sum", DecoderCombine::Sum}});
    c.ds.joint_heads = ds["joint_heads"];

    const auto& sp = full["spectral"];
    c.head.frequencies = sp["frequencies"];
    c.spectral_input = detail::parse_enum<SpectralInput>(
        "spectral.input", sp["input"],
        {{"descriptor", SpectralInput::Descriptor},
         {"personality", SpectralInput::Personality},
         {"descriptor_predictions", SpectralInput::DescriptorPredictions}});

    const auto& h = full["head"];
    c.head.branch_channels = h["branch_channels"].get<std::vector<std::size_t>>();
    c.head.kernel = h["kernel"];
    c.head.dropout = h["dropout"];
    c.head.regressor_hidden = h["regressor_hidden"];
    c.head.residual_channels = h["residual_channels"];
    c.head.fc_dims = h["fc_dims"].get<std::vector<std::size_t>>();
    c.head.multi_task = h["multi_task"];

    const auto& t = full["train"];
    auto stage = [](const Json& s) {
      return StageConfig{s["lr"].get<double>(), s["batch_size"].get<std::size_t>(), s["max_epochs"].get<std::size_t>()};
    };
    c.train.stage1 = stage(t["stage1"]);
    c.train.stage2 = stage(t["stage2"]);
    c.train.stage3 = stage(t["stage3"]);
    c.train.sgd_momentum = t["sgd_momentum"];
    c.train.patience = t["patience"];
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.resolve();
  c.validate();
  return c;
}

// "a.b.c=value"; value is parsed as JSON when possible, otherwise taken as a
// string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key=value: " + assignment);
  std::string pointer = "/" + assignment.substr(0, eq);
  for (auto& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  j[Json::json_pointer(pointer)] = value;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("config file " + path + " is not valid JSON");
  return config_from_json(j);
}

inline std::string config_hash(const RunConfig& c) {
  const std::string canonical = to_json(c).dump();
  return io::hex64(io::fnv1a(canonical.data(), canonical.size()));
}

}  // namespace facet
