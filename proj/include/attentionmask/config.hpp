#pragma once

#include <json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "attentionmask/backbone.hpp"
#include "attentionmask/core.hpp"
#include "attentionmask/dataset.hpp"
#include "attentionmask/heads.hpp"
#include "attentionmask/model.hpp"
#include "attentionmask/soam.hpp"
#include "attentionmask/training.hpp"

namespace am {

namespace detail {

// Section reader that rejects unknown keys; every field keeps its default
// unless present.
class StrictSection {
 public:
  StrictSection(const nlohmann::json& js, std::string where)
      : js_(js), where_(std::move(where)) {
    if (!js_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void field(const char* key, T& dst) {
    seen_.insert(key);
    if (js_.contains(key)) {
      try {
        dst = js_.at(key).get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where_ + "." + key + ": " + e.what());
      }
    }
  }

  const nlohmann::json* subsection(const char* key) {
    seen_.insert(key);
    return js_.contains(key) ? &js_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = js_.begin(); it != js_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const nlohmann::json& js_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

struct EvalConfig {
  std::vector<int> ks = {10, 100, 1000};
  // recall-curve grid in centi-units: 0.50 .. 0.95 step 0.05 by default
  int curve_min_centi = 50;
  int curve_max_centi = 95;
  int curve_step_centi = 5;

  std::vector<double> thresholds() const {
    std::vector<double> out;
    for (int t = curve_min_centi; t <= curve_max_centi; t += curve_step_centi)
      out.push_back(double(t) / 100.0);
    return out;
  }
};

struct RunConfig {
  SyntheticConfig data;
  BackboneConfig backbone;
  SoamConfig soam;
  SamplerConfig sampler;
  HeadsConfig heads;
  TrainConfig training;
  EvalConfig eval;

  void validate() const {
    data.validate();
    backbone.validate();
    sampler.validate();
    heads.validate(backbone.window_size);
    training.validate();
    for (int k : eval.ks)
      if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
    if (eval.curve_step_centi < 1 || eval.curve_min_centi < 1 ||
        eval.curve_max_centi < eval.curve_min_centi || eval.curve_max_centi > 100)
      throw ConfigError("eval: bad recall-curve grid");
  }

  // Every field materialized, so artifacts carry the complete configuration.
  nlohmann::json to_json() const {
    nlohmann::json js;
    js["data"] = {{"count", data.count},       {"height", data.height},
                  {"width", data.width},       {"min_px", data.min_px},
                  {"max_px", data.max_px},     {"min_objects", data.min_objects},
                  {"max_objects", data.max_objects}, {"seed", data.seed},
                  {"split", data.split}};
    js["backbone"] = {{"variant", variant_name(backbone.variant)},
                      {"channels", backbone.channels},
                      {"common_channels", backbone.common_channels},
                      {"window_size", backbone.window_size},
                      {"blocks", backbone.blocks}};
    js["soam"] = {{"depth", soam_depth_name(soam.depth)}, {"single_map", soam.single_map}};
    js["sampler"] = {{"K", sampler.K},
                     {"threshold", sampler.threshold},
                     {"per_scale_quota", sampler.per_scale_quota}};
    js["heads"] = {{"k", heads.k},
                   {"mask_size", heads.mask_size},
                   {"bin_threshold", heads.bin_threshold},
                   {"nms", heads.nms},
                   {"nms_iou", heads.nms_iou}};
    js["training"] = {{"epochs", training.epochs},
                      {"batch_images", training.batch_images},
                      {"windows_per_image", training.windows_per_image},
                      {"pos_fraction", training.pos_fraction},
                      {"learning_rate", training.learning_rate},
                      {"momentum", training.momentum},
                      {"clip_norm", training.clip_norm},
                      {"seed", training.seed},
                      {"augment", training.augment},
                      {"flip_prob", training.flip_prob},
                      {"norm_momentum", training.norm_momentum},
                      {"weights",
                       {{"objn", training.weights.objn},
                        {"ah", training.weights.ah},
                        {"seg", training.weights.seg},
                        {"att", training.weights.att}}}};
    js["eval"] = {{"ks", eval.ks},
                  {"curve_min_centi", eval.curve_min_centi},
                  {"curve_max_centi", eval.curve_max_centi},
                  {"curve_step_centi", eval.curve_step_centi}};
    return js;
  }

  static RunConfig from_json(const nlohmann::json& js) {
    if (!js.is_object()) throw ConfigError("config: expected a JSON object");
    static const std::set<std::string> sections = {"data", "backbone", "soam", "sampler",
                                                   "heads", "training", "eval"};
    for (auto it = js.begin(); it != js.end(); ++it)
      if (!sections.count(it.key()))
        throw ConfigError("config: unknown section '" + it.key() + "'");

    RunConfig cfg;
    if (js.contains("data")) {
      detail::StrictSection s(js["data"], "data");
      s.field("count", cfg.data.count);
      s.field("height", cfg.data.height);
      s.field("width", cfg.data.width);
      s.field("min_px", cfg.data.min_px);
      s.field("max_px", cfg.data.max_px);
      s.field("min_objects", cfg.data.min_objects);
      s.field("max_objects", cfg.data.max_objects);
      s.field("seed", cfg.data.seed);
      s.field("split", cfg.data.split);
      s.finish();
    }
    if (js.contains("backbone")) {
      detail::StrictSection s(js["backbone"], "backbone");
      std::string variant = variant_name(cfg.backbone.variant);
      std::vector<int> channels(cfg.backbone.channels.begin(), cfg.backbone.channels.end());
      std::vector<int> blocks(cfg.backbone.blocks.begin(), cfg.backbone.blocks.end());
      s.field("variant", variant);
      s.field("channels", channels);
      s.field("common_channels", cfg.backbone.common_channels);
      s.field("window_size", cfg.backbone.window_size);
      s.field("blocks", blocks);
      s.finish();
      cfg.backbone.variant = variant_from_name(variant);
      if (channels.size() != 4) throw ConfigError("backbone.channels must have 4 entries");
      if (blocks.size() != 4) throw ConfigError("backbone.blocks must have 4 entries");
      std::copy(channels.begin(), channels.end(), cfg.backbone.channels.begin());
      std::copy(blocks.begin(), blocks.end(), cfg.backbone.blocks.begin());
    }
    if (js.contains("soam")) {
      detail::StrictSection s(js["soam"], "soam");
      std::string depth = soam_depth_name(cfg.soam.depth);
      s.field("depth", depth);
      s.field("single_map", cfg.soam.single_map);
      s.finish();
      cfg.soam.depth = soam_depth_from_name(depth);
    }
    if (js.contains("sampler")) {
      detail::StrictSection s(js["sampler"], "sampler");
      s.field("K", cfg.sampler.K);
      s.field("threshold", cfg.sampler.threshold);
      s.field("per_scale_quota", cfg.sampler.per_scale_quota);
      s.finish();
    }
    if (js.contains("heads")) {
      detail::StrictSection s(js["heads"], "heads");
      s.field("k", cfg.heads.k);
      s.field("mask_size", cfg.heads.mask_size);
      s.field("bin_threshold", cfg.heads.bin_threshold);
      s.field("nms", cfg.heads.nms);
      s.field("nms_iou", cfg.heads.nms_iou);
      s.finish();
    }
    if (js.contains("training")) {
      detail::StrictSection s(js["training"], "training");
      s.field("epochs", cfg.training.epochs);
      s.field("batch_images", cfg.training.batch_images);
      s.field("windows_per_image", cfg.training.windows_per_image);
      s.field("pos_fraction", cfg.training.pos_fraction);
      s.field("learning_rate", cfg.training.learning_rate);
      s.field("momentum", cfg.training.momentum);
      s.field("clip_norm", cfg.training.clip_norm);
      s.field("seed", cfg.training.seed);
      s.field("augment", cfg.training.augment);
      s.field("flip_prob", cfg.training.flip_prob);
      s.field("norm_momentum", cfg.training.norm_momentum);
      if (const nlohmann::json* wjs = s.subsection("weights")) {
        detail::StrictSection w(*wjs, "training.weights");
        w.field("objn", cfg.training.weights.objn);
        w.field("ah", cfg.training.weights.ah);
        w.field("seg", cfg.training.weights.seg);
        w.field("att", cfg.training.weights.att);
        w.finish();
      }
      s.finish();
    }
    if (js.contains("eval")) {
      detail::StrictSection s(js["eval"], "eval");
      s.field("ks", cfg.eval.ks);
      s.field("curve_min_centi", cfg.eval.curve_min_centi);
      s.field("curve_max_centi", cfg.eval.curve_max_centi);
      s.field("curve_step_centi", cfg.eval.curve_step_centi);
      s.finish();
    }
    cfg.validate();
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json js;
    try {
      in >> js;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed config JSON " + path + ": " + e.what());
    }
    return from_json(js);
  }
};

}  // namespace am
