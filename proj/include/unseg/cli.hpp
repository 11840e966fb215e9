#pragma once

// Command-line front end. Kept in a header so tests can drive it in-process.
//
//   unseg segment IN --out L.png [--viz V.png] [--scribbles S.png] [hyperparameter flags]
//   unseg train-ref IMG... --out model.bin [--epochs 1]
//   unseg apply --model model.bin IN_OR_DIR --out-dir D
//   unseg baseline kmeans IN --out L.png [--k 17 --window 5]
//   unseg baseline gs IN --out L.png [--tau 500 --sigma 1.0 --min-size 0]
//   unseg eval --pred-dir P --gt-dir G [--mode all|fine|coarse] [--pr-thresholds 0.2,...]

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unseg/baselines.hpp"
#include "unseg/config.hpp"
#include "unseg/eval.hpp"
#include "unseg/io.hpp"
#include "unseg/pipeline.hpp"

namespace unseg::cli {

namespace fs = std::filesystem;

/// GT rasters mark unscored pixels with this value.
inline constexpr std::int32_t kVoidLabel = 65535;

inline bool is_raster_path(const fs::path& p) { return io::has_extension(p, {".png", ".ppm", ".pgm", ".pnm"}); }

/// Raster files directly inside `dir`, sorted by filename.
inline std::vector<fs::path> list_rasters(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_raster_path(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// `<out without extension><suffix>`, next to `out`.
inline fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_extension();
  return fs::path(p.string() + suffix);
}

/// Loads one image's ground truth: a raster file (one variant) or a
/// directory of variant rasters.
inline GtBundle load_gt_bundle(const fs::path& path) {
  std::vector<fs::path> files = fs::is_directory(path) ? list_rasters(path) : std::vector<fs::path>{path};
  if (files.empty()) throw IoError("no ground-truth rasters in '" + path.string() + "'");
  GtBundle b;
  for (const auto& f : files) {
    const LabelMap gt = io::load_labelmap(f);
    if (!b.variants.empty() && (gt.height != b.variants[0].height || gt.width != b.variants[0].width))
      throw InvalidArgument("ground-truth variants of '" + path.string() + "' differ in size");
    Mask vm(gt.height, gt.width);
    for (std::size_t n = 0; n < gt.size(); ++n) vm.data[n] = gt.data[n] == kVoidLabel ? 1 : 0;
    if (vm.count() > 0) {
      if (!b.void_mask) b.void_mask = vm;
      else
        for (std::size_t n = 0; n < vm.size(); ++n) b.void_mask->data[n] |= vm.data[n];
    }
    b.variants.push_back(segments_from_labels(gt, kVoidLabel));
  }
  return b;
}

/// Prediction for image `name`: P/name.<ext>, or the first raster of P/name/.
inline std::optional<fs::path> find_prediction(const fs::path& pred_dir, const std::string& name) {
  for (const char* ext : {".png", ".pgm", ".ppm", ".pnm"}) {
    const fs::path p = pred_dir / (name + ext);
    if (fs::is_regular_file(p)) return p;
  }
  const fs::path d = pred_dir / name;
  if (fs::is_directory(d)) {
    const auto files = list_rasters(d);
    if (!files.empty()) return files.front();
  }
  return std::nullopt;
}

inline std::string format_report(const DatasetReport& rep, const RunConfig& cfg, std::size_t images) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "metric,value\n";
  os << "images," << images << '\n';
  os << "pairs," << rep.pairs << '\n';
  os << "gt_segments," << rep.gt_segments << '\n';
  os << "est_segments," << rep.est_segments << '\n';
  os << "gt_mode," << to_string(cfg.gt_mode) << '\n';
  os << "aggregate," << (cfg.aggregate == MiouAggregate::pairs ? "pairs" : "segments") << '\n';
  os << "ap_rule,step-area-monotone-precision\n";
  os << "miou," << rep.miou << '\n';
  for (const auto& c : rep.curves) {
    std::ostringstream t;
    t << std::setprecision(2) << c.threshold;
    os << "ap@" << t.str() << ',' << c.ap << '\n';
  }
  return os.str();
}

namespace detail {

/// Maps "--flag-name" options onto RunConfig keys and remembers the values
/// given on the command line so they can be layered over a config file.
class FlagBinder {
 public:
  CLI::Option* bind(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = values_[key];
    auto* opt = app.add_option(flag, slot, help);
    opts_.emplace_back(key, opt);
    return opt;
  }

  void bind_hyper(CLI::App& app) {
    bind(app, "--layers", "layers", "number of conv components M (default 3)");
    bind(app, "--p", "p", "feature channels p (default 100)");
    bind(app, "--q", "q", "maximum number of clusters q (default 100)");
    bind(app, "--lr", "lr", "learning rate (default 0.1)");
    bind(app, "--momentum", "momentum", "SGD momentum (default 0.9)");
    bind(app, "--mu", "mu", "continuity loss weight (default 5)");
    bind(app, "--nu", "nu", "scribble loss weight (default 0.5)");
    bind(app, "--iters", "iters", "maximum iterations T (default 500)");
    bind(app, "--min-labels", "min_labels", "stop once at most this many labels remain (default 3)");
    bind(app, "--seed", "seed", "RNG seed (default 0)");
    bind(app, "--eps", "eps", "batch-norm epsilon (default 1e-5)");
    bind(app, "--tv-bounds", "tv_bounds", "continuity loss pairs: full|paper (default full)");
  }

  void apply(RunConfig& cfg) const {
    for (const auto& [key, opt] : opts_)
      if (opt->count() > 0) cfg.set(key, values_.at(key));
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> opts_;
};

}  // namespace detail

/// Runs one CLI invocation. Returns the process exit code; diagnostics go to
/// `err`, reports to `out`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised image segmentation by differentiable feature clustering", "unseg"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::vector<std::string> ref_images;

  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "key=value configuration file"); };

  // segment
  detail::FlagBinder seg_flags;
  auto* seg = app.add_subcommand("segment", "segment one image from scratch");
  seg->add_option("input", cfg.input, "input image (PNG/PPM)")->required();
  seg_flags.bind(*seg, "--out", "output", "raw 16-bit label raster")->required();
  seg_flags.bind(*seg, "--viz", "viz", "colour visualization");
  seg_flags.bind(*seg, "--scribbles", "scribbles", "scribble raster (255 = unscribbled)");
  seg_flags.bind(*seg, "--save-model", "model", "also write the trained weights");
  seg_flags.bind_hyper(*seg);
  add_config(seg);

  // train-ref
  detail::FlagBinder ref_flags;
  auto* ref = app.add_subcommand("train-ref", "train weights on reference images (one update per image)");
  ref->add_option("images", ref_images, "reference images, used in the given order")->required();
  ref_flags.bind(*ref, "--out", "model", "model file to write")->required();
  ref_flags.bind(*ref, "--epochs", "epochs", "passes over the reference list (default 1)");
  ref_flags.bind_hyper(*ref);
  add_config(ref);

  // apply
  detail::FlagBinder apply_flags;
  auto* apply = app.add_subcommand("apply", "label images or a frame directory with fixed weights");
  apply->add_option("input", cfg.input, "image file or directory of frames")->required();
  apply_flags.bind(*apply, "--model", "model", "model file")->required();
  apply_flags.bind(*apply, "--out-dir", "out_dir", "output directory")->required();
  apply_flags.bind(*apply, "--eps", "eps", "batch-norm epsilon (default 1e-5)");
  add_config(apply);

  // baseline
  auto* base = app.add_subcommand("baseline", "classical baselines");
  base->require_subcommand(1);
  detail::FlagBinder km_flags;
  auto* km = base->add_subcommand("kmeans", "k-means on windowed RGB features");
  km->add_option("input", cfg.input, "input image")->required();
  km_flags.bind(*km, "--out", "output", "raw 16-bit label raster")->required();
  km_flags.bind(*km, "--viz", "viz", "colour visualization");
  km_flags.bind(*km, "--k", "k", "number of clusters (default 17)");
  km_flags.bind(*km, "--window", "window", "odd window size (default 5)");
  km_flags.bind(*km, "--max-iter", "kmeans_max_iter", "Lloyd iteration cap (default 100)");
  km_flags.bind(*km, "--seed", "seed", "seeding RNG (default 0)");
  add_config(km);
  detail::FlagBinder gs_flags;
  auto* gs = base->add_subcommand("gs", "graph-based segmentation");
  gs->add_option("input", cfg.input, "input image")->required();
  gs_flags.bind(*gs, "--out", "output", "raw 16-bit label raster")->required();
  gs_flags.bind(*gs, "--viz", "viz", "colour visualization");
  gs_flags.bind(*gs, "--tau", "tau", "scale parameter (default 500)");
  gs_flags.bind(*gs, "--sigma", "sigma", "Gaussian pre-smoothing (default 1.0)");
  gs_flags.bind(*gs, "--min-size", "min_size", "minimum component size (default 0)");
  add_config(gs);

  // eval
  detail::FlagBinder eval_flags;
  auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
  eval_flags.bind(*ev, "--pred-dir", "pred_dir", "directory of predicted raw label rasters")->required();
  eval_flags.bind(*ev, "--gt-dir", "gt_dir", "directory of ground-truth bundles")->required();
  eval_flags.bind(*ev, "--mode", "gt_mode", "all|fine|coarse (default all)");
  eval_flags.bind(*ev, "--aggregate", "aggregate", "pairs|segments (default pairs)");
  eval_flags.bind(*ev, "--pr-thresholds", "pr_thresholds", "comma-separated IOU thresholds");
  std::string report_path;
  ev->add_option("--report", report_path, "also write the CSV report here");
  add_config(ev);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    // Positionals were parsed straight into cfg; keep them across the config
    // file layer so the file cannot silently replace them.
    const std::string positional_input = cfg.input;
    if (!config_path.empty()) cfg.load_file(config_path);
    if (!positional_input.empty()) cfg.input = positional_input;

    if (seg->parsed()) {
      seg_flags.apply(cfg);
      cfg.hp.validate();
      const Image img = io::load_image(cfg.input);
      std::optional<Scribbles> scr;
      if (!cfg.scribbles.empty()) scr = io::load_scribbles(cfg.scribbles, cfg.hp.max_clusters);
      const auto result = segment(img, cfg.hp, scr);
      io::save_labelmap(result.labels, cfg.output, cfg.viz);
      io::write_loss_csv(sibling(cfg.output, "_loss.csv"), result.loss_history);
      if (!cfg.model.empty()) io::save_model(cfg.model, result.params);
      out << "segment: " << result.unique_label_count << " labels after " << result.iterations_run
          << " iterations\n";
      return 0;
    }
    if (ref->parsed()) {
      ref_flags.apply(cfg);
      cfg.hp.validate();
      std::vector<Image> imgs;
      for (const auto& p : ref_images) imgs.push_back(io::load_image(p));
      const auto net = train_reference(imgs, cfg.hp, cfg.epochs);
      io::save_model(cfg.model, net);
      out << "train-ref: " << imgs.size() << " image(s), " << cfg.epochs << " epoch(s)\n";
      return 0;
    }
    if (apply->parsed()) {
      apply_flags.apply(cfg);
      const auto net = io::load_model(cfg.model);
      cfg.hp.layers = static_cast<int>(net.layers());
      cfg.hp.feature_dim = static_cast<int>(net.feature_dim());
      cfg.hp.max_clusters = static_cast<int>(net.clusters());
      cfg.hp.min_labels = std::min(cfg.hp.min_labels, cfg.hp.max_clusters);
      cfg.hp.validate();
      const fs::path in(cfg.input);
      const std::vector<fs::path> frames = fs::is_directory(in) ? list_rasters(in) : std::vector<fs::path>{in};
      if (frames.empty()) throw IoError("no images in '" + in.string() + "'");
      fs::create_directories(cfg.out_dir);
      for (const auto& f : frames) {
        const LabelMap labels = apply_fixed(net, io::load_image(f), cfg.hp);
        const std::string stem = f.stem().string();
        io::save_labelmap(labels, fs::path(cfg.out_dir) / (stem + ".png"),
                          fs::path(cfg.out_dir) / (stem + "_viz.png"));
      }
      out << "apply: " << frames.size() << " frame(s) written to " << cfg.out_dir << "\n";
      return 0;
    }
    if (km->parsed()) {
      km_flags.apply(cfg);
      const Image img = io::load_image(cfg.input);
      const auto feats = window_features(img, cfg.window);
      const auto res = kmeans(feats, cfg.k, cfg.hp.seed, cfg.kmeans_max_iter);
      LabelMap labels(img.dim(1), img.dim(2));
      labels.data = res.labels;
      io::save_labelmap(labels, cfg.output, cfg.viz);
      out << "kmeans: " << labels.unique_count() << " clusters, " << res.iterations << " iterations"
          << (res.converged ? "" : " (not converged)") << "\n";
      return 0;
    }
    if (gs->parsed()) {
      gs_flags.apply(cfg);
      const LabelMap labels = felzenszwalb(io::load_image(cfg.input), cfg.gs);
      io::save_labelmap(labels, cfg.output, cfg.viz);
      out << "gs: " << labels.unique_count() << " segments\n";
      return 0;
    }
    if (ev->parsed()) {
      eval_flags.apply(cfg);
      std::vector<EvalItem> items;
      std::vector<fs::path> entries;
      for (const auto& e : fs::directory_iterator(cfg.gt_dir))
        if (e.is_directory() || (e.is_regular_file() && is_raster_path(e.path()))) entries.push_back(e.path());
      std::sort(entries.begin(), entries.end());
      for (const auto& e : entries) {
        const std::string name = fs::is_directory(e) ? e.filename().string() : e.stem().string();
        const auto pred = find_prediction(cfg.pred_dir, name);
        if (!pred) throw IoError("no prediction for '" + name + "' in '" + cfg.pred_dir + "'");
        EvalItem item{name, load_gt_bundle(e), extract_segments(io::load_labelmap(*pred))};
        if (item.est.height != item.gt.variants[0].height || item.est.width != item.gt.variants[0].width)
          throw InvalidArgument("prediction for '" + name + "' does not match the ground-truth size");
        items.push_back(std::move(item));
      }
      if (items.empty()) throw IoError("no ground truth found in '" + cfg.gt_dir + "'");
      for (double t : cfg.pr_thresholds)
        if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("PR thresholds must lie in (0, 1)");
      const auto rep = evaluate_dataset(items, cfg.gt_mode, cfg.pr_thresholds, cfg.aggregate);
      const std::string text = format_report(rep, cfg, items.size());
      out << text;
      if (!report_path.empty()) {
        std::ofstream f(report_path, std::ios::trunc);
        if (!f) throw IoError("cannot open '" + report_path + "' for writing");
        f << text;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace unseg::cli
