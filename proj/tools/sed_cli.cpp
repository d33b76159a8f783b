#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sed/checkpoint.hpp"
#include "sed/config.hpp"
#include "sed/eval.hpp"
#include "sed/gradcheck.hpp"
#include "sed/losses.hpp"
#include "sed/manifest.hpp"
#include "sed/matcher.hpp"
#include "sed/trainer.hpp"

namespace {

using nlohmann::json;
using namespace sed;

std::string output_root() {
  const char* env = std::getenv("SED_OUTPUT_ROOT");
  return env && *env ? std::string(env) : std::string(".");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

RunConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = load_config(path);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void apply_mode(RunConfig& cfg, const std::string& mode) {
  if (mode == "sed") return;
  if (mode == "supervised") {
    cfg.train.lambda_scale = 0;
    cfg.train.lambda_distill = 0;
    cfg.train.burn_in_iterations = cfg.train.iterations;
  } else if (mode == "sed-no-reweight") {
    cfg.train.reweight_scale = false;
    cfg.train.reweight_distill = false;
  } else if (mode == "sed-hard") {
    cfg.train.distill_mode = DistillMode::kHard;
  } else if (mode == "scale-only") {
    cfg.train.lambda_distill = 0;
  } else if (mode == "distill-only") {
    cfg.train.lambda_scale = 0;
  } else {
    throw ConfigError("unknown --mode '" + mode +
                      "' (expected supervised|sed|sed-no-reweight|sed-hard|scale-only|distill-only)");
  }
}

void check_dataset_match(const DatasetConfig& a, const DatasetConfig& b) {
  if (a.image_size != b.image_size || a.num_train_scenes != b.num_train_scenes ||
      a.num_test_scenes != b.num_test_scenes || a.labeled_fraction != b.labeled_fraction ||
      a.max_objects != b.max_objects || a.min_object_size != b.min_object_size ||
      a.max_object_size != b.max_object_size || a.max_clutter != b.max_clutter ||
      a.noise_amplitude != b.noise_amplitude || a.master_seed != b.master_seed)
    throw ConfigError("dataset manifest was generated with a different dataset config");
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, bool export_scenes,
                 const std::vector<std::string>& sets) {
  const RunConfig cfg = load_with_overrides(config_path, sets);
  std::filesystem::create_directories(out_dir);
  const Dataset ds = generate_dataset(cfg.data);
  const DatasetManifest m = build_manifest(ds, cfg.data);
  m.save(out_dir + "/dataset_manifest.json");
  if (export_scenes) export_scene_files(out_dir + "/scenes", m);
  std::cout << "dataset written: " << out_dir << "/dataset_manifest.json (labeled "
            << m.count("labeled") << ", unlabeled " << m.count("unlabeled") << ", test "
            << m.count("test") << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& mode, bool resume,
              const std::vector<std::string>& sets) {
  RunConfig cfg = load_with_overrides(config_path, sets);
  apply_mode(cfg, mode);
  cfg.validate();
  const DatasetManifest m = DatasetManifest::load(data_dir + "/dataset_manifest.json");
  check_dataset_match(m.config, cfg.data);

  std::filesystem::create_directories(out_dir);
  json manifest = {
      {"schema_version", kConfigSchemaVersion},
      {"mode", mode},
      {"master_seed", cfg.data.master_seed},
      {"output_dir", out_dir},
      {"config", config_to_text(cfg)},
      {"artifacts",
       {{"metrics", "metrics.jsonl"},
        {"checkpoint_final", "checkpoint_final.sedckpt"},
        {"checkpoint_latest", "checkpoint_latest.sedckpt"}}},
  };
  {
    std::ofstream f(out_dir + "/manifest.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write run manifest in " + out_dir);
    f << manifest.dump(2) << "\n";
  }

  cfg.train.master_seed = cfg.data.master_seed;
  const TrainerData data = trainer_data_from_manifest(m);
  const TrainResult res = train(cfg, data, out_dir, resume);
  std::cout << "training done: " << res.checkpoint_path << "\n";
  return 0;
}

void write_eval_csv(const std::string& path, const std::vector<std::pair<std::string, APReport>>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "scale,ap50,ap75,map,ar50,ar90";
  const size_t n_cls = rows.empty() ? 0 : rows[0].second.per_class_ap50.size();
  for (size_t c = 0; c < n_cls; ++c) f << ",class" << c << "_ap50";
  f << "\n";
  for (const auto& [label, r] : rows) {
    f << label << "," << fmt(r.ap50) << "," << fmt(r.ap75) << "," << fmt(r.map5095) << ","
      << fmt(r.ar50) << "," << fmt(r.ar90);
    for (double v : r.per_class_ap50) f << "," << fmt(v);
    f << "\n";
  }
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             const std::string& out_csv, bool multiscale, double score_thr, double nms_thr,
             std::vector<double> scales) {
  const Checkpoint ck = Checkpoint::load(ckpt_path);
  const DatasetManifest m = DatasetManifest::load(data_dir + "/dataset_manifest.json");
  const std::vector<Scene> scenes = scenes_from_manifest(m, split);
  if (scenes.empty()) throw ConfigError("split '" + split + "' has no scenes");

  std::vector<std::vector<LabeledBox>> gts;
  for (const Scene& s : scenes) gts.push_back(s.boxes);

  std::vector<std::pair<std::string, APReport>> rows;
  auto eval_at_scales = [&](const std::vector<double>& fs) {
    std::vector<std::vector<Detection>> dets;
    for (const Scene& s : scenes)
      dets.push_back(multiscale_ensemble(ck.student, ck.arch, s.image, fs, score_thr, nms_thr));
    return compute_ap(dets, gts);
  };

  if (!multiscale) {
    rows.emplace_back("1", eval_at_scales({1.0}));
  } else {
    for (double f : scales) rows.emplace_back(fmt(f), eval_at_scales({f}));
    rows.emplace_back("ensemble", eval_at_scales(scales));
  }
  write_eval_csv(out_csv, rows);
  std::cout << "eval written: " << out_csv << "\n";
  for (const auto& [label, r] : rows)
    std::cout << "  scale " << label << ": AP50 " << fmt(r.ap50) << " mAP " << fmt(r.map5095) << "\n";
  return 0;
}

int cmd_analyze(const std::string& ckpt_path, const std::string& data_dir,
                const std::string& analysis, const std::string& out_dir, int s, int bins) {
  const DatasetManifest m = DatasetManifest::load(data_dir + "/dataset_manifest.json");
  std::filesystem::create_directories(out_dir);

  if (analysis == "size-cdf") {
    std::vector<Scene> scenes = scenes_from_manifest(m, "labeled");
    for (Scene& sc : scenes_from_manifest(m, "unlabeled")) scenes.push_back(std::move(sc));
    const auto cdf = size_cdf(scenes);
    std::ofstream f(out_dir + "/size_cdf.csv", std::ios::trunc);
    f << "sqrt_area,cum_fraction\n";
    for (const auto& [sz, frac] : cdf) f << fmt(sz) << "," << fmt(frac) << "\n";
    std::cout << "analysis written: " << out_dir << "/size_cdf.csv\n";
    return 0;
  }

  const Checkpoint ck = Checkpoint::load(ckpt_path);
  if (analysis == "pseudo-pr") {
    const std::vector<Scene> scenes = scenes_from_manifest(m, "unlabeled");
    std::vector<double> thresholds;
    for (double t = 0.05; t < 0.96; t += 0.05) thresholds.push_back(t);
    const auto points = pseudo_label_pr(ck.student, ck.arch, scenes, thresholds);
    std::ofstream f(out_dir + "/pseudo_label_pr.csv", std::ios::trunc);
    f << "score_threshold,iou_criterion,precision,recall,num_pseudo_labels,precision_defined\n";
    for (const auto& p : points)
      f << fmt(p.score_threshold) << "," << fmt(p.iou_criterion) << "," << fmt(p.precision) << ","
        << fmt(p.recall) << "," << p.num_pseudo_labels << "," << (p.precision_defined ? 1 : 0)
        << "\n";
    std::cout << "analysis written: " << out_dir << "/pseudo_label_pr.csv\n";
    return 0;
  }
  if (analysis == "score-distance") {
    const std::vector<Scene> scenes = scenes_from_manifest(m, "test");
    const ScoreDistanceHist h = score_distance_hist(ck.student, ck.arch, scenes, s, bins);
    std::ofstream f(out_dir + "/score_distance.csv", std::ios::trunc);
    f << "bin_lo,bin_hi,count_fg,count_bg,fg_bg_ratio\n";
    for (int b = 0; b < bins; ++b) {
      const int cf = h.count_fg[static_cast<size_t>(b)], cb = h.count_bg[static_cast<size_t>(b)];
      f << fmt(h.bin_edges[static_cast<size_t>(b)]) << "," << fmt(h.bin_edges[static_cast<size_t>(b) + 1])
        << "," << cf << "," << cb << "," << (cb > 0 ? fmt(static_cast<double>(cf) / cb) : "nan")
        << "\n";
    }
    std::ofstream g(out_dir + "/score_distance_summary.csv", std::ios::trunc);
    g << "mean_all,mean_fg,mean_bg,total\n"
      << fmt(h.mean_all) << "," << fmt(h.mean_fg) << "," << fmt(h.mean_bg) << "," << h.total << "\n";
    std::cout << "analysis written: " << out_dir << "/score_distance.csv\n";
    return 0;
  }
  if (analysis == "grad-profile") {
    // per-anchor scale-consistency terms pooled over the unlabeled split
    const std::vector<Scene> scenes = scenes_from_manifest(m, "unlabeled");
    std::vector<double> kls, gs;
    for (const Scene& sc : scenes) {
      const PyramidOutput full = forward(ck.student, sc.image, ck.arch);
      const PyramidOutput down = forward(ck.student, downsample(sc.image, s), ck.arch);
      const ConsistencyTerms t = scale_terms(full, down, s);
      kls.insert(kls.end(), t.kl.begin(), t.kl.end());
      gs.insert(gs.end(), t.g.begin(), t.g.end());
    }
    const auto vanilla = gradient_contribution_profile(kls, gs, bins, ProfileMode::kVanilla);
    const auto reweighted = gradient_contribution_profile(kls, gs, bins, ProfileMode::kReweighted);
    std::ofstream f(out_dir + "/grad_profile.csv", std::ios::trunc);
    f << "bin_lo,bin_hi,count,vanilla_contribution,reweighted_contribution,normalized_count\n";
    for (int b = 0; b < bins; ++b)
      f << fmt(vanilla[static_cast<size_t>(b)].bin_lo) << "," << fmt(vanilla[static_cast<size_t>(b)].bin_hi)
        << "," << vanilla[static_cast<size_t>(b)].count << ","
        << fmt(vanilla[static_cast<size_t>(b)].contribution) << ","
        << fmt(reweighted[static_cast<size_t>(b)].contribution) << ","
        << fmt(reweighted[static_cast<size_t>(b)].normalized_count) << "\n";
    std::cout << "analysis written: " << out_dir << "/grad_profile.csv\n";
    return 0;
  }
  throw ConfigError("unknown analysis '" + analysis +
                    "' (expected size-cdf|pseudo-pr|score-distance|grad-profile)");
}

int cmd_match_demo(const std::string& path_a, const std::string& path_b, double lambda_iou,
                   const std::string& out_csv) {
  auto load_preds = [](const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open predictions file " + path);
    json j;
    f >> j;
    std::vector<PredItem> out;
    for (const auto& e : j) {
      PredItem p;
      p.probs = e.at("probs").get<std::vector<double>>();
      const auto& b = e.at("box");
      p.box = Box(b.at(0), b.at(1), b.at(2), b.at(3));
      out.push_back(std::move(p));
    }
    return out;
  };
  const auto preds_a = load_preds(path_a);
  const auto preds_b = load_preds(path_b);
  const CostMatrix cost = pairwise_cost(preds_a, preds_b, lambda_iou);
  const auto pairs = solve_assignment(cost);
  const double total = assignment_total_cost(cost, pairs);
  std::cout << "matched " << pairs.size() << " pairs, total cost " << fmt(total) << "\n";
  for (const auto& [i, j] : pairs)
    std::cout << "  " << i << " -> " << j << "  cost " << fmt(cost.at(i, j)) << "\n";
  if (!out_csv.empty()) {
    std::ofstream f(out_csv, std::ios::trunc);
    f << "row,col,cost\n";
    for (const auto& [i, j] : pairs) f << i << "," << j << "," << fmt(cost.at(i, j)) << "\n";
  }
  return 0;
}

int cmd_grad_check(uint64_t seed, double h, int image_size, double tolerance) {
  const auto cases = run_grad_checks(seed, h, image_size);
  bool ok = true;
  std::cout << "gradient check (" << cases.front().param_count << " params, h=" << h << ")\n";
  for (const auto& c : cases) {
    const bool pass = c.max_rel_err < tolerance;
    ok = ok && pass;
    std::cout << "  " << (pass ? "PASS" : "FAIL") << "  " << c.name << "  loss=" << fmt(c.loss_value)
              << "  max_rel_err=" << fmt(c.max_rel_err) << "\n";
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sedtoy: scale-consistent semi-supervised detection on synthetic shape scenes"};
  app.require_subcommand(1);

  std::string config_path, data_dir = output_root() + "/dataset", out_dir, ckpt_path;
  std::string mode = "sed", split = "test", analysis, out_csv;
  std::vector<std::string> sets;
  bool export_scenes = false, resume = false, multiscale = false;
  double score_thr = 0.05, nms_thr = 0.5, lambda_iou = 1.0, h = 1e-5, tolerance = 1e-4;
  std::vector<double> scales = {0.5, 1.0, 1.5};
  uint64_t seed = 0;
  int s_exp = 1, bins = 10, image_size = 32;
  std::string preds_a, preds_b;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset + manifest");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_dir, "output directory");
  gen->add_flag("--export-scenes", export_scenes, "also write per-scene .npy/.json files");
  gen->add_option("--set", sets, "override config keys (key=value)");

  auto* tr = app.add_subcommand("train", "run training");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--data", data_dir, "dataset directory (gen-data output)");
  tr->add_option("--out", out_dir, "run output directory");
  tr->add_option("--mode", mode, "supervised|sed|sed-no-reweight|sed-hard|scale-only|distill-only");
  tr->add_flag("--resume", resume, "resume from checkpoint_latest in --out");
  tr->add_option("--set", sets, "override config keys (key=value)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory");
  ev->add_option("--split", split, "labeled|unlabeled|test");
  ev->add_option("--out", out_csv, "output CSV path");
  ev->add_flag("--multiscale", multiscale, "per-scale rows plus the NMS ensemble row");
  ev->add_option("--score-thr", score_thr, "detection score threshold");
  ev->add_option("--nms-thr", nms_thr, "NMS IoU threshold");
  ev->add_option("--scales", scales, "scale factors for --multiscale");

  auto* an = app.add_subcommand("analyze", "diagnostic analyses -> CSV");
  an->add_option("--analysis", analysis, "size-cdf|pseudo-pr|score-distance|grad-profile")->required();
  an->add_option("--checkpoint", ckpt_path, "checkpoint file (not needed for size-cdf)");
  an->add_option("--data", data_dir, "dataset directory");
  an->add_option("--out", out_dir, "output directory");
  an->add_option("--s", s_exp, "downsample exponent");
  an->add_option("--bins", bins, "histogram bins");

  auto* md = app.add_subcommand("match-demo", "bipartite matching of two prediction files");
  md->add_option("--preds-a", preds_a, "JSON predictions A")->required();
  md->add_option("--preds-b", preds_b, "JSON predictions B")->required();
  md->add_option("--lambda-iou", lambda_iou, "GIoU-loss weight in the matching cost");
  md->add_option("--out", out_csv, "optional CSV of matched pairs");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of all loss gradients");
  gc->add_option("--seed", seed, "scenario seed");
  gc->add_option("--step", h, "central-difference step");
  gc->add_option("--image-size", image_size, "scenario image size");
  gc->add_option("--tolerance", tolerance, "max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(config_path, out_dir.empty() ? output_root() + "/dataset" : out_dir,
                          export_scenes, sets);
    if (out_dir.empty()) out_dir = output_root() + (an->parsed() ? "/analysis" : "/run");
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir, mode, resume, sets);
    if (ev->parsed())
      return cmd_eval(ckpt_path, data_dir, split,
                      out_csv.empty() ? out_dir + "/eval.csv" : out_csv, multiscale, score_thr,
                      nms_thr, scales);
    if (an->parsed()) return cmd_analyze(ckpt_path, data_dir, analysis, out_dir, s_exp, bins);
    if (md->parsed()) return cmd_match_demo(preds_a, preds_b, lambda_iou, out_csv);
    if (gc->parsed()) return cmd_grad_check(seed, h, image_size, tolerance);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
