#pragma once

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "attentionmask/backbone.hpp"
#include "attentionmask/core.hpp"
#include "attentionmask/dataset.hpp"
#include "attentionmask/heads.hpp"
#include "attentionmask/nn.hpp"
#include "attentionmask/sampler.hpp"
#include "attentionmask/soam.hpp"

namespace am {

struct SamplerConfig {
  std::int64_t K = 1000;       // joint selection budget
  double threshold = 0.0;      // absolute attention cutoff
  std::int64_t per_scale_quota = 0;  // 0 disables the per-scale cap

  void validate() const {
    if (K < 1) throw ConfigError("sampler: K must be >= 1");
    if (threshold < 0.0 || threshold > 1.0)
      throw ConfigError("sampler: threshold must be in [0,1]");
    if (per_scale_quota < 0) throw ConfigError("sampler: per_scale_quota must be >= 0");
  }
};

struct StageSeconds {
  double base_net = 0.0;
  double soams = 0.0;
  double window_sampling = 0.0;
  double heads = 0.0;
  double total = 0.0;
};

struct InferenceResult {
  std::vector<Proposal> proposals;        // score-descending
  std::vector<AttentionMap> attention;    // per active scale (empty when off)
  std::int64_t windows_scored = 0;
  StageSeconds seconds;
};

// The whole per-image network: split backbone, shared SOAM, shared heads.
struct Model {
  BackboneConfig bcfg;
  SoamConfig scfg;
  Backbone backbone;
  Soam soam;
  ObjectnessHead objn;
  AttentionalHead ah;
  SegHead seg;

  Model() = default;
  Model(const BackboneConfig& b, const SoamConfig& s)
      : bcfg(b), scfg(s), backbone(b), soam(s, b.common_channels),
        objn(b.common_channels), ah(b.common_channels), seg(b.common_channels) {}

  nn::ParamRefs params() {
    nn::ParamRefs ps;
    backbone.collect(ps);
    soam.collect(ps);
    objn.collect(ps);
    ah.collect(ps);
    seg.collect(ps);
    return ps;
  }

  struct BufferRef {
    std::string name;
    std::vector<double>* data;
  };

  std::vector<BufferRef> buffers() {
    std::vector<BufferRef> bs;
    auto add_norm = [&bs](nn::Norm& n) {
      if (n.c == 0) return;
      bs.push_back({n.gamma.name.substr(0, n.gamma.name.size() - 6) + ".mean", &n.mean});
      bs.push_back({n.gamma.name.substr(0, n.gamma.name.size() - 6) + ".var", &n.var});
    };
    auto add_block = [&](ResBlock& rb) {
      add_norm(rb.n1);
      add_norm(rb.n2);
      if (rb.proj) add_norm(rb.np);
    };
    for (auto& b : backbone.stage_a) add_block(b);
    for (auto& b : backbone.stage_b1) add_block(b);
    for (auto& b : backbone.stage_b2) add_block(b);
    return bs;
  }

  void init(std::uint64_t seed, bool randomize_all = false) {
    auto ps = params();
    nn::init_params(ps, seed, randomize_all);
  }

  void zero_grads() {
    for (nn::Param* p : params()) p->zero_grad();
  }

  int min_input_side() const { return 8 * bcfg.window_size; }

  Tensor prepare_image(const ImageU8& image) const {
    return pad_to_min_side(to_tensor(image), min_input_side());
  }

  std::vector<AttentionMap> attention_maps(const FeaturePyramid& pyr) const {
    std::vector<AttentionMap> maps;
    if (scfg.single_map) {
      Soam::Cache cc;
      const PyramidLevel& finest = pyr.levels.front();
      Tensor logits = soam.forward_logits(finest.map.data, cc);
      AttentionMap fine = attention_from_logits(logits, finest.spec);
      for (const auto& lvl : pyr.levels) {
        if (lvl.spec.stride == finest.spec.stride) {
          maps.push_back(fine);
          continue;
        }
        // Coarse levels read the single map via max over the covered block.
        AttentionMap m;
        m.scale = lvl.spec;
        m.h = lvl.map.data.h;
        m.w = lvl.map.data.w;
        m.probs.assign(std::size_t(m.h) * m.w, 0.0);
        int f = lvl.spec.stride / finest.spec.stride;
        for (int r = 0; r < m.h; ++r)
          for (int c = 0; c < m.w; ++c) {
            double best = 0.0;
            for (int rr = r * f; rr < std::min((r + 1) * f, fine.h); ++rr)
              for (int cc2 = c * f; cc2 < std::min((c + 1) * f, fine.w); ++cc2)
                best = std::max(best, fine.at(rr, cc2));
            m.probs[std::size_t(r) * m.w + c] = best;
          }
        maps.push_back(std::move(m));
      }
      return maps;
    }
    for (const auto& lvl : pyr.levels) {
      Soam::Cache cc;
      Tensor logits = soam.forward_logits(lvl.map.data, cc);
      maps.push_back(attention_from_logits(logits, lvl.spec));
    }
    return maps;
  }
};

inline RankedWindows rank_with_quota(const std::vector<AttentionMap>& maps,
                                     const SamplerConfig& cfg) {
  if (cfg.per_scale_quota <= 0) return joint_rank(maps, cfg.K, cfg.threshold);
  RankedWindows merged;
  merged.budget = cfg.K;
  for (const auto& m : maps) {
    RankedWindows per = joint_rank({m}, cfg.per_scale_quota, cfg.threshold);
    merged.windows.insert(merged.windows.end(), per.windows.begin(), per.windows.end());
  }
  std::sort(merged.windows.begin(), merged.windows.end(), detail::rank_less);
  if (std::int64_t(merged.windows.size()) > cfg.K) merged.windows.resize(std::size_t(cfg.K));
  return merged;
}

// Full inference pass over one image. `use_attention=false` is the exhaustive
// baseline arm: every cell of every scale is scored.
inline InferenceResult run_inference(const Model& model, const ImageU8& image,
                                     const SamplerConfig& scfg, const HeadsConfig& hcfg,
                                     bool use_attention = true) {
  using clock = std::chrono::steady_clock;
  auto secs = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  scfg.validate();
  hcfg.validate(model.bcfg.window_size);
  InferenceResult res;

  auto t0 = clock::now();
  Tensor input = model.prepare_image(image);
  Backbone::Cache bc;
  FeaturePyramid pyr = model.backbone.forward(input, bc);
  auto t1 = clock::now();
  res.seconds.base_net = secs(t0, t1);

  if (use_attention) res.attention = model.attention_maps(pyr);
  auto t2 = clock::now();
  res.seconds.soams = secs(t1, t2);

  RankedWindows ranked =
      use_attention ? rank_with_quota(res.attention, scfg) : exhaustive_windows(pyr);
  std::vector<Tensor> windows;
  windows.reserve(ranked.windows.size());
  for (const auto& ref : ranked.windows)
    windows.push_back(extract_window(
        pyr.levels[std::size_t(pyr.index_of_stride(ref.scale.stride))].map, ref));
  auto t3 = clock::now();
  res.seconds.window_sampling = secs(t2, t3);

  std::vector<std::pair<WindowRef, ObjectnessScore>> scored;
  scored.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i)
    scored.emplace_back(ranked.windows[i], model.objn.score(windows[i]));
  res.windows_scored = std::int64_t(windows.size());

  auto top = select_top_windows(std::move(scored), hcfg.k);
  for (const auto& [ref, score] : top) {
    const FeatureMap& fm = pyr.levels[std::size_t(pyr.index_of_stride(ref.scale.stride))].map;
    Tensor win = extract_window(fm, ref);
    AttentionalHead::Cache acc;
    Tensor weighted = model.ah.forward(win, acc);
    SegmentationOutput seg = model.seg.segment(weighted);
    res.proposals.push_back(
        assemble_proposal(seg, ref, score, image.h, image.w, hcfg.bin_threshold));
  }
  if (hcfg.nms) res.proposals = nms_proposals(std::move(res.proposals), hcfg.nms_iou, image.h,
                                              image.w);
  auto t4 = clock::now();
  res.seconds.heads = secs(t3, t4);
  res.seconds.total = secs(t0, t4);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint: one archive of float32 tensors with a JSON header.
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCkptMagic[4] = {'A', 'M', 'C', 'K'};

inline nlohmann::json backbone_config_json(const BackboneConfig& b) {
  return {{"variant", variant_name(b.variant)},
          {"channels", b.channels},
          {"common_channels", b.common_channels},
          {"window_size", b.window_size},
          {"blocks", b.blocks}};
}

inline BackboneConfig backbone_config_from_json(const nlohmann::json& js) {
  BackboneConfig b;
  b.variant = variant_from_name(js.at("variant").get<std::string>());
  auto ch = js.at("channels").get<std::vector<int>>();
  auto bl = js.at("blocks").get<std::vector<int>>();
  if (ch.size() != 4 || bl.size() != 4) throw ConfigError("checkpoint: bad channels/blocks");
  std::copy(ch.begin(), ch.end(), b.channels.begin());
  std::copy(bl.begin(), bl.end(), b.blocks.begin());
  b.common_channels = js.at("common_channels").get<int>();
  b.window_size = js.at("window_size").get<int>();
  return b;
}

inline nlohmann::json soam_config_json(const SoamConfig& s) {
  return {{"depth", soam_depth_name(s.depth)}, {"single_map", s.single_map}};
}

inline SoamConfig soam_config_from_json(const nlohmann::json& js) {
  SoamConfig s;
  s.depth = soam_depth_from_name(js.at("depth").get<std::string>());
  s.single_map = js.at("single_map").get<bool>();
  return s;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, Model& model,
                            const nlohmann::json& run_config = {}) {
  nn::ParamRefs ps = model.params();
  auto bufs = model.buffers();

  nlohmann::json header;
  header["format_version"] = 1;
  header["backbone"] = detail::backbone_config_json(model.bcfg);
  header["soam"] = detail::soam_config_json(model.scfg);
  if (!run_config.is_null() && !run_config.empty()) header["run_config"] = run_config;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (nn::Param* p : ps) {
    tensors.push_back({{"name", p->name},
                       {"kind", "param"},
                       {"shape", p->shape},
                       {"offset", offset},
                       {"count", p->size()}});
    offset += p->size();
  }
  for (auto& b : bufs) {
    tensors.push_back({{"name", b.name},
                       {"kind", "buffer"},
                       {"shape", {int(b.data->size())}},
                       {"offset", offset},
                       {"count", b.data->size()}});
    offset += b.data->size();
  }
  header["tensors"] = std::move(tensors);
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(detail::kCkptMagic, 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), std::streamsize(hs.size()));
  auto write_f32 = [&out](const std::vector<double>& src) {
    std::vector<float> tmp(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) tmp[i] = float(src[i]);
    out.write(reinterpret_cast<const char*>(tmp.data()), std::streamsize(tmp.size() * 4));
  };
  for (nn::Param* p : ps) write_f32(p->v);
  for (auto& b : bufs) write_f32(*b.data);
  if (!out) throw IoError("short write on checkpoint " + path);
}

inline Model load_checkpoint(const std::string& path, nlohmann::json* run_config_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 4) != 0 || version != 1)
    throw IoError("not an attentionmask checkpoint: " + path);
  std::string hs(hlen, '\0');
  in.read(hs.data(), std::streamsize(hlen));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }

  Model model(detail::backbone_config_from_json(header.at("backbone")),
              detail::soam_config_from_json(header.at("soam")));
  if (run_config_out && header.contains("run_config")) *run_config_out = header["run_config"];

  std::map<std::string, std::vector<double>*> slots;
  for (nn::Param* p : model.params()) slots[p->name] = &p->v;
  for (auto& b : model.buffers()) slots[b.name] = b.data;

  std::size_t seen = 0;
  for (const auto& t : header.at("tensors")) {
    std::string name = t.at("name").get<std::string>();
    std::size_t count = t.at("count").get<std::size_t>();
    auto it = slots.find(name);
    if (it == slots.end()) throw IoError("checkpoint tensor has no slot: " + name);
    if (it->second->size() != count)
      throw IoError("checkpoint tensor size mismatch for " + name);
    std::vector<float> tmp(count);
    in.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(count * 4));
    if (!in) throw IoError("truncated checkpoint payload at " + name);
    for (std::size_t i = 0; i < count; ++i) (*it->second)[i] = double(tmp[i]);
    ++seen;
  }
  if (seen != slots.size()) throw IoError("checkpoint does not cover all model tensors");
  return model;
}

}  // namespace am
