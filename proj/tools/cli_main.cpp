// attentionmask: one binary wiring data generation, training, inference,
// evaluation, pruning statistics and plotting.
//
// Exit codes: 0 ok, 2 configuration error, 3 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "attentionmask/config.hpp"
#include "attentionmask/evaluation.hpp"
#include "attentionmask/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
  std::string config_path;
  int threads = 1;
};

am::RunConfig load_run_config(const CommonOpts& opts) {
  if (opts.config_path.empty()) return am::RunConfig{};
  return am::RunConfig::load(opts.config_path);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw am::IoError("cannot write " + path.string());
  out << text;
}

void echo_config(const am::RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
}

// Deterministic per-index parallel map; one worker keeps results bitwise
// stable, more workers only change wall time (items are independent).
void parallel_for(int threads, std::size_t count, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  int n = int(std::min<std::size_t>(std::size_t(threads), count));
  for (int t = 0; t < n; ++t)
    pool.emplace_back([&]() {
      try {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= count) return;
          fn(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::pair<int, int> parse_pair(const std::string& text, const char* what) {
  auto comma = text.find(',');
  if (comma == std::string::npos)
    throw am::ConfigError(std::string(what) + ": expected 'a,b', got '" + text + "'");
  try {
    return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw am::ConfigError(std::string(what) + ": expected integers in '" + text + "'");
  }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& common, int count, int size, const std::string& size_range,
                 const std::string& objects, std::int64_t seed, const std::string& split,
                 const std::string& out_dir) {
  am::RunConfig cfg = load_run_config(common);
  if (count > 0) cfg.data.count = count;
  if (size > 0) cfg.data.height = cfg.data.width = size;
  if (!size_range.empty()) {
    auto [lo, hi] = parse_pair(size_range, "--size-range");
    cfg.data.min_px = lo;
    cfg.data.max_px = hi;
  }
  if (!objects.empty()) {
    auto [lo, hi] = parse_pair(objects, "--objects");
    cfg.data.min_objects = lo;
    cfg.data.max_objects = hi;
  }
  cfg.data.seed = seed;
  cfg.data.split = split;
  cfg.data.validate();

  am::DatasetManifest manifest = am::generate_synthetic_dataset(cfg.data);
  am::save_manifest(manifest, out_dir);
  echo_config(cfg, out_dir);
  long objects_total = 0;
  for (const auto& s : manifest.samples) objects_total += long(s.objects.size());
  std::cout << "wrote " << manifest.samples.size() << " images, " << objects_total
            << " objects to " << out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonOpts& common, const std::string& data_dir, const std::string& out_dir,
              const std::string& variant, int epochs, std::int64_t seed, double lr) {
  am::RunConfig cfg = load_run_config(common);
  if (!variant.empty()) cfg.backbone.variant = am::variant_from_name(variant);
  if (epochs > 0) cfg.training.epochs = epochs;
  if (seed >= 0) cfg.training.seed = seed;
  if (lr > 0) cfg.training.learning_rate = lr;
  cfg.validate();

  am::DatasetManifest data = am::load_manifest(data_dir);
  am::Model model(cfg.backbone, cfg.soam);
  model.init(std::uint64_t(cfg.training.seed));
  am::Trainer trainer(model, cfg.training);

  fs::create_directories(out_dir);
  echo_config(cfg, out_dir);
  std::vector<am::EpochMetrics> rows;
  try {
    trainer.run(data, {}, &rows);
  } catch (const am::TrainingDiverged& e) {
    write_text(fs::path(out_dir) / "metrics.csv", am::metrics_csv(rows));
    std::cerr << "error: " << e.what() << " (partial metrics preserved)\n";
    return kExitRuntime;
  }
  write_text(fs::path(out_dir) / "metrics.csv", am::metrics_csv(rows));
  am::save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), model, cfg.to_json());
  std::cout << "trained " << cfg.training.epochs << " epochs; final total loss "
            << (rows.empty() ? 0.0 : rows.back().total) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> attention_to_gray(const am::AttentionMap& m, int H, int W) {
  std::vector<double> grid(m.probs.begin(), m.probs.end());
  std::vector<double> resized = am::bilinear_resize(grid, m.h, m.w, H, W);
  std::vector<std::uint8_t> gray(resized.size());
  for (std::size_t i = 0; i < resized.size(); ++i)
    gray[i] = std::uint8_t(std::lround(std::clamp(resized[i], 0.0, 1.0) * 255.0));
  return gray;
}

void write_overlay(const fs::path& path, const am::ImageSample& sample,
                   const std::vector<am::Proposal>& proposals, std::size_t max_masks) {
  am::ImageU8 im = sample.image;
  const std::uint8_t palette[6][3] = {{230, 60, 60}, {60, 200, 60},  {70, 90, 230},
                                      {230, 200, 40}, {200, 60, 220}, {40, 210, 210}};
  std::size_t n = std::min(max_masks, proposals.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& color = palette[i % 6];
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x)
        if (proposals[i].mask.get(y, x))
          for (int ch = 0; ch < 3; ++ch)
            im.at(y, x, ch) = std::uint8_t((im.at(y, x, ch) + 2 * color[ch]) / 3);
  }
  am::write_png_rgb(path.string(), im);
}

int cmd_infer(const CommonOpts& common, const std::string& ckpt_path, const std::string& image,
              const std::string& data_dir, const std::string& out_dir, int k,
              std::int64_t sampler_k, double threshold, bool no_attention, bool dump_attention,
              bool overlay, bool timing) {
  am::RunConfig cfg = load_run_config(common);
  am::Model model = am::load_checkpoint(ckpt_path);
  cfg.backbone = model.bcfg;  // structural config comes from the checkpoint
  cfg.soam = model.scfg;
  cfg.heads.mask_size = 4 * model.bcfg.window_size;
  if (k > 0) cfg.heads.k = k;
  if (sampler_k > 0) cfg.sampler.K = sampler_k;
  if (threshold >= 0) cfg.sampler.threshold = threshold;
  cfg.validate();

  am::DatasetManifest data;
  if (!data_dir.empty()) {
    data = am::load_manifest(data_dir);
  } else if (!image.empty()) {
    am::ImageSample s;
    s.id = fs::path(image).stem().string();
    s.image = am::read_png_rgb(image);
    data.samples.push_back(std::move(s));
  } else {
    throw am::ConfigError("infer: --image or --data is required");
  }

  fs::create_directories(out_dir);
  echo_config(cfg, out_dir);

  std::vector<std::vector<am::ProposalRecord>> per_image(data.samples.size());
  std::vector<am::InferenceResult> results(data.samples.size());
  parallel_for(common.threads, data.samples.size(), [&](std::size_t i) {
    const am::ImageSample& s = data.samples[i];
    am::InferenceResult res =
        am::run_inference(model, s.image, cfg.sampler, cfg.heads, !no_attention);
    for (const auto& p : res.proposals)
      per_image[i].push_back({s.id, p.score.value, am::rle_encode(p.mask)});
    results[i] = std::move(res);
  });

  std::vector<am::ProposalRecord> records;
  for (auto& group : per_image)
    records.insert(records.end(), group.begin(), group.end());
  am::write_proposals((fs::path(out_dir) / "proposals.json").string(), records);

  if (dump_attention && !no_attention) {
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      const am::ImageSample& s = data.samples[i];
      for (const auto& m : results[i].attention) {
        fs::path p = fs::path(out_dir) / ("attention_" + s.id + "_" + m.scale.name + ".png");
        am::write_png_gray(p.string(), attention_to_gray(m, s.image.h, s.image.w), s.image.h,
                           s.image.w);
      }
    }
  }
  if (overlay) {
    for (std::size_t i = 0; i < data.samples.size(); ++i)
      write_overlay(fs::path(out_dir) / ("overlay_" + data.samples[i].id + ".png"),
                    data.samples[i], results[i].proposals, 20);
  }
  if (timing) {
    am::TimingReport rep = am::timing_report(model, data.samples[0].image, cfg.sampler, cfg.heads,
                                             !no_attention, 5);
    json js = {{"repetitions", rep.repetitions},
               {"seconds",
                {{"base_net", rep.median.base_net},
                 {"soams", rep.median.soams},
                 {"window_sampling", rep.median.window_sampling},
                 {"heads", rep.median.heads},
                 {"total", rep.median.total}}},
               {"config", cfg.to_json()}};
    write_text(fs::path(out_dir) / "timing.json", js.dump(2) + "\n");
  }
  std::cout << "wrote " << records.size() << " proposals for " << data.samples.size()
            << " images to " << out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

json eval_result_json(const am::EvalResult& r, const am::RunConfig& cfg) {
  auto num = [](double v) -> json { return std::isnan(v) ? json() : json(v); };
  json ar = json::object();
  for (auto [k, v] : r.ar_at) ar[std::to_string(k)] = num(v);
  json buckets = json::object();
  for (const auto& [name, v] : r.ar_bucket_at_100) buckets[name] = num(v);
  json curve = json::object();
  for (auto [t, v] : r.recall_curve) {
    char key[8];
    std::snprintf(key, sizeof(key), "%.2f", t);
    curve[key] = num(v);
  }
  json rows = json::array();
  for (const auto& row : r.per_image)
    rows.push_back({{"id", row.id},
                    {"gt", row.gt},
                    {"proposals", row.proposals},
                    {"matched_50_at_100", row.matched_50_at_100}});
  return {{"ar_at", ar},
          {"ar_bucket_at_100", buckets},
          {"recall_curve", curve},
          {"images", r.images},
          {"gt_objects", r.gt_objects},
          {"proposals", r.proposals},
          {"per_image", rows},
          {"config", cfg.to_json()}};
}

int cmd_eval(const CommonOpts& common, const std::string& proposals_path,
             const std::string& gt_dir, const std::string& ks_text, const std::string& out_dir) {
  am::RunConfig cfg = load_run_config(common);
  if (!ks_text.empty()) {
    cfg.eval.ks.clear();
    std::stringstream ss(ks_text);
    std::string tok;
    while (std::getline(ss, tok, ',')) cfg.eval.ks.push_back(std::stoi(tok));
  }
  cfg.validate();

  am::DatasetManifest gt = am::load_manifest(gt_dir);
  std::vector<am::ProposalRecord> records = am::read_proposals(proposals_path);
  am::EvalResult result =
      am::evaluate_proposals(gt, records, cfg.eval.ks, cfg.eval.thresholds());

  fs::create_directories(out_dir);
  echo_config(cfg, out_dir);
  write_text(fs::path(out_dir) / "eval.json", eval_result_json(result, cfg).dump(2) + "\n");

  std::ostringstream csv;
  csv << "metric,value\n";
  for (auto [k, v] : result.ar_at) csv << "ar@" << k << ',' << v << '\n';
  for (const auto& [name, v] : result.ar_bucket_at_100) csv << "ar_" << name << "@100," << v
                                                            << '\n';
  for (auto [t, v] : result.recall_curve) csv << "recall@100_iou" << t << ',' << v << '\n';
  write_text(fs::path(out_dir) / "eval.csv", csv.str());

  std::cout << "evaluated " << result.proposals << " proposals against " << result.gt_objects
            << " objects";
  for (auto [k, v] : result.ar_at) std::cout << "  AR@" << k << "=" << v;
  std::cout << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// prune-stats
// ---------------------------------------------------------------------------

int cmd_prune_stats(const CommonOpts& common, const std::string& ckpt_path,
                    const std::string& data_dir, std::int64_t K, double threshold,
                    const std::string& out_dir) {
  am::RunConfig cfg = load_run_config(common);
  am::Model model = am::load_checkpoint(ckpt_path);
  cfg.backbone = model.bcfg;
  cfg.soam = model.scfg;
  cfg.heads.mask_size = 4 * model.bcfg.window_size;
  if (K > 0) cfg.sampler.K = K;
  if (threshold >= 0) cfg.sampler.threshold = threshold;
  cfg.validate();

  am::DatasetManifest data = am::load_manifest(data_dir);
  std::vector<am::PruneStats> per_image(data.samples.size());
  parallel_for(common.threads, data.samples.size(), [&](std::size_t i) {
    const am::ImageSample& s = data.samples[i];
    am::Backbone::Cache cc;
    am::FeaturePyramid pyr = model.backbone.forward(model.prepare_image(s.image), cc);
    std::vector<am::AttentionMap> maps = model.attention_maps(pyr);
    std::vector<am::GtAttention> gts;
    for (const auto& lvl : pyr.levels)
      gts.push_back(am::build_gt_attention(s, lvl.spec, lvl.map.data.h, lvl.map.data.w));
    per_image[i] = am::pruning_stats(maps, gts, cfg.sampler.K, cfg.sampler.threshold);
  });
  am::PruneStats total;
  for (const auto& st : per_image) am::accumulate_prune_stats(total, st);

  fs::create_directories(out_dir);
  echo_config(cfg, out_dir);
  write_text(fs::path(out_dir) / "prune_stats.csv", am::prune_stats_csv(total));
  std::cout << "overall: pruned " << total.overall.pruned_fraction() << ", recall "
            << total.overall.recall() << " over " << data.samples.size() << " images\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

std::string svg_line_chart(const std::vector<std::pair<double, double>>& points,
                           const std::string& title, const std::string& x_label,
                           bool log_x = false) {
  if (points.empty()) throw am::IoError("nothing to plot for '" + title + "'");
  const int W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double x0 = points.front().first, x1 = points.back().first;
  auto tx = [&](double x) {
    double a = log_x ? std::log10(x) : x;
    double lo = log_x ? std::log10(x0) : x0, hi = log_x ? std::log10(x1) : x1;
    return ml + (a - lo) / std::max(1e-12, hi - lo) * (W - ml - mr);
  };
  auto ty = [&](double y) { return H - mb - y * (H - mt - mb); };
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
     << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    double y = i / 5.0;
    os << "<line x1='" << ml << "' y1='" << ty(y) << "' x2='" << W - mr << "' y2='" << ty(y)
       << "' stroke='#ddd'/>\n";
    os << "<text x='" << ml - 8 << "' y='" << ty(y) + 4 << "' text-anchor='end' font-size='11'>"
       << y << "</text>\n";
  }
  os << "<polyline fill='none' stroke='#c33' stroke-width='2' points='";
  for (auto [x, y] : points)
    if (!std::isnan(y)) os << tx(x) << ',' << ty(std::clamp(y, 0.0, 1.0)) << ' ';
  os << "'/>\n";
  for (auto [x, y] : points) {
    if (std::isnan(y)) continue;
    os << "<circle cx='" << tx(x) << "' cy='" << ty(std::clamp(y, 0.0, 1.0))
       << "' r='3' fill='#c33'/>\n";
    os << "<text x='" << tx(x) << "' y='" << H - mb + 16
       << "' text-anchor='middle' font-size='11'>" << x << "</text>\n";
  }
  os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
     << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

int cmd_plot(const CommonOpts&, const std::string& eval_path, const std::string& out_dir) {
  std::ifstream in(eval_path);
  if (!in) throw am::IoError("cannot open " + eval_path);
  json js;
  try {
    in >> js;
  } catch (const json::exception& e) {
    throw am::IoError("malformed eval JSON: " + std::string(e.what()));
  }
  std::vector<std::pair<double, double>> curve;
  for (auto it = js.at("recall_curve").begin(); it != js.at("recall_curve").end(); ++it)
    curve.emplace_back(std::stod(it.key()), it.value().is_null() ? std::nan("") : it.value().get<double>());
  std::sort(curve.begin(), curve.end());
  std::vector<std::pair<double, double>> ar;
  for (auto it = js.at("ar_at").begin(); it != js.at("ar_at").end(); ++it)
    ar.emplace_back(std::stod(it.key()), it.value().is_null() ? std::nan("") : it.value().get<double>());
  std::sort(ar.begin(), ar.end());

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "recall_curve.svg",
             svg_line_chart(curve, "Recall@100 vs IoU threshold", "IoU threshold"));
  write_text(fs::path(out_dir) / "ar_vs_k.svg",
             svg_line_chart(ar, "AR vs number of proposals", "proposals", /*log_x=*/true));
  std::cout << "wrote recall_curve.svg and ar_vs_k.svg to " << out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// import-coco
// ---------------------------------------------------------------------------

int cmd_import_coco(const std::string& ann_path, const std::string& image_dir,
                    const std::string& out_dir) {
  am::DatasetManifest manifest = am::load_coco_annotations(ann_path, image_dir);
  am::save_manifest(manifest, out_dir);
  std::cout << "imported " << manifest.samples.size() << " images to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AttentionMask-style class-agnostic object proposals"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted after the subcommand too
  CommonOpts common;
  app.add_option("--threads", common.threads, "worker threads (1 = bit-reproducible)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  int gd_count = 0, gd_size = 0;
  std::string gd_range, gd_objects, gd_split = "train", gd_out;
  std::int64_t gd_seed = 0;
  gen->add_option("--config", common.config_path, "run config JSON");
  gen->add_option("--count", gd_count, "number of images");
  gen->add_option("--size", gd_size, "square image side in px");
  gen->add_option("--size-range", gd_range, "object sizes 'min,max' in px");
  gen->add_option("--objects", gd_objects, "objects per image 'min,max'");
  gen->add_option("--seed", gd_seed, "generation seed");
  gen->add_option("--split", gd_split, "split label");
  gen->add_option("--out", gd_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_out, tr_variant;
  int tr_epochs = 0;
  std::int64_t tr_seed = -1;
  double tr_lr = 0;
  train->add_option("--config", common.config_path, "run config JSON");
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_option("--variant", tr_variant, "am8_128 | am8_192 | am16_192");
  train->add_option("--epochs", tr_epochs, "override epochs");
  train->add_option("--seed", tr_seed, "override training seed");
  train->add_option("--lr", tr_lr, "override learning rate");

  // infer
  auto* infer = app.add_subcommand("infer", "generate proposals");
  std::string in_ckpt, in_image, in_data, in_out;
  int in_k = 0;
  std::int64_t in_K = 0;
  double in_threshold = -1;
  bool in_noatt = false, in_dump = false, in_overlay = false, in_timing = false;
  infer->add_option("--config", common.config_path, "run config JSON");
  infer->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
  infer->add_option("--image", in_image, "single PNG image");
  infer->add_option("--data", in_data, "dataset directory");
  infer->add_option("--out", in_out, "output directory")->required();
  infer->add_option("--k", in_k, "proposals per image");
  infer->add_option("--K", in_K, "attention selection budget");
  infer->add_option("--threshold", in_threshold, "attention threshold");
  infer->add_flag("--no-attention", in_noatt, "exhaustive window sampling baseline");
  infer->add_flag("--dump-attention", in_dump, "write per-scale attention PNGs");
  infer->add_flag("--overlay", in_overlay, "write proposal overlay PNGs");
  infer->add_flag("--timing", in_timing, "write per-stage timing JSON");

  // eval
  auto* eval = app.add_subcommand("eval", "average-recall evaluation");
  std::string ev_props, ev_gt, ev_ks, ev_out;
  eval->add_option("--config", common.config_path, "run config JSON");
  eval->add_option("--proposals", ev_props, "proposals JSON")->required();
  eval->add_option("--gt", ev_gt, "ground-truth dataset directory")->required();
  eval->add_option("--k", ev_ks, "comma-separated proposal budgets");
  eval->add_option("--out", ev_out, "output directory")->required();

  // prune-stats
  auto* prune = app.add_subcommand("prune-stats", "attention pruning report");
  std::string pr_ckpt, pr_data, pr_out;
  std::int64_t pr_K = 0;
  double pr_threshold = -1;
  prune->add_option("--config", common.config_path, "run config JSON");
  prune->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  prune->add_option("--data", pr_data, "dataset directory")->required();
  prune->add_option("--K", pr_K, "selection budget");
  prune->add_option("--threshold", pr_threshold, "attention threshold");
  prune->add_option("--out", pr_out, "output directory")->required();

  // plot
  auto* plot = app.add_subcommand("plot", "render recall curves as SVG");
  std::string pl_eval, pl_out;
  plot->add_option("--eval", pl_eval, "eval.json path")->required();
  plot->add_option("--out", pl_out, "output directory")->required();

  // import-coco
  auto* coco = app.add_subcommand("import-coco", "convert COCO-style annotations");
  std::string co_ann, co_images, co_out;
  coco->add_option("--ann", co_ann, "annotation JSON")->required();
  coco->add_option("--images", co_images, "image directory")->required();
  coco->add_option("--out", co_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(common, gd_count, gd_size, gd_range, gd_objects, gd_seed, gd_split,
                          gd_out);
    if (train->parsed())
      return cmd_train(common, tr_data, tr_out, tr_variant, tr_epochs, tr_seed, tr_lr);
    if (infer->parsed())
      return cmd_infer(common, in_ckpt, in_image, in_data, in_out, in_k, in_K, in_threshold,
                       in_noatt, in_dump, in_overlay, in_timing);
    if (eval->parsed()) return cmd_eval(common, ev_props, ev_gt, ev_ks, ev_out);
    if (prune->parsed())
      return cmd_prune_stats(common, pr_ckpt, pr_data, pr_K, pr_threshold, pr_out);
    if (plot->parsed()) return cmd_plot(common, pl_eval, pl_out);
    if (coco->parsed()) return cmd_import_coco(co_ann, co_images, co_out);
  } catch (const am::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
