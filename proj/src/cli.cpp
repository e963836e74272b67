#include "bsnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "bsnet/augment.hpp"
#include "bsnet/explain.hpp"
#include "bsnet/loss.hpp"
#include "bsnet/preprocess.hpp"
#include "bsnet/synthcxr.hpp"

namespace bsnet {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t x = std::stoull(v, &used);
    contract(used == v.size(), "");
    return x;
  } catch (const std::exception&) {
    contract(false, "run config: invalid value for " + key + ": '" + v + "'");
  }
  return 0;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int x = std::stoi(v, &used);
    contract(used == v.size(), "");
    return x;
  } catch (const std::exception&) {
    contract(false, "run config: invalid value for " + key + ": '" + v + "'");
  }
  return 0;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    contract(used == v.size(), "");
    return x;
  } catch (const std::exception&) {
    contract(false, "run config: invalid value for " + key + ": '" + v + "'");
  }
  return 0;
}

TrainConfig train_config_of(const RunConfig& cfg, TrainStage stage) {
  TrainConfig tc;
  tc.stage = stage;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch;
  tc.initial_lr = cfg.lr;
  tc.plateau_patience = cfg.patience;
  tc.seed = cfg.seed;
  tc.alpha = cfg.alpha;
  tc.beta = cfg.beta;
  tc.input_size = cfg.input_size;
  tc.validate();
  return tc;
}

const std::vector<Sample>& split_of(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  contract(split == "test", "split must be train, val, or test");
  return ds.test;
}

void write_lines(const std::string& path, const std::string& header,
                 const std::vector<std::string>& rows) {
  std::ofstream f(path, std::ios::binary);
  contract(f.good(), "cannot open " + path);
  f << header << '\n';
  for (const std::string& r : rows) f << r << '\n';
  contract(f.good(), "write failed for " + path);
}

std::string stats_row(const std::string& scope, const std::string& region, const ErrorStats& st) {
  return scope + "," + region + "," + fmt(st.mer) + "," + fmt(st.mae) + "," + fmt(st.sd) + "," +
         (st.cc ? fmt(*st.cc) : "");
}

void write_stats_csv(const std::string& path, const std::vector<BrixiaScore>& preds,
                     const std::vector<BrixiaScore>& refs) {
  std::vector<std::string> rows;
  for (int r = 0; r < 6; ++r)
    rows.push_back(stats_row("region", std::string(1, kRegionNames[r]),
                             error_stats(preds, refs, StatScope::kPerRegion, r)));
  rows.push_back(stats_row("average", "", error_stats(preds, refs, StatScope::kRegionAverage)));
  rows.push_back(stats_row("global", "", error_stats(preds, refs, StatScope::kGlobalScore)));
  write_lines(path, "scope,region,MEr,MAE,SD,CC", rows);
}

void write_confusion_csv(const std::string& path, const std::vector<std::vector<int>>& m) {
  std::string header = "ref";
  for (size_t p = 0; p < m.size(); ++p) header += "," + std::to_string(p);
  std::vector<std::string> rows;
  for (size_t r = 0; r < m.size(); ++r) {
    std::string row = std::to_string(r);
    for (int v : m[r]) row += "," + std::to_string(v);
    rows.push_back(row);
  }
  write_lines(path, header, rows);
}

void draw_line(std::vector<uint8_t>& rgb, int h, int w, int x0, int y0, int x1, int y1,
               const std::array<uint8_t, 3>& color) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && x0 < w && y0 >= 0 && y0 < h)
      for (int ch = 0; ch < 3; ++ch)
        rgb[(static_cast<size_t>(y0) * w + x0) * 3 + ch] = color[static_cast<size_t>(ch)];
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void write_line_plot(const std::string& path, const std::vector<double>& xs,
                     const std::vector<std::vector<double>>& series,
                     const std::vector<std::array<uint8_t, 3>>& colors) {
  contract(!xs.empty() && !series.empty() && series.size() == colors.size(),
           "line plot: malformed series");
  const int h = 360, w = 480, ml = 48, mr = 16, mt = 16, mb = 40;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& s : series) {
    contract(s.size() == xs.size(), "line plot: series length mismatch");
    for (double v : s) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  } else {
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
  }
  double xmin = xs.front(), xmax = xs.back();
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }

  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3, 255);
  const std::array<uint8_t, 3> black = {0, 0, 0};
  auto px = [&](double x) {
    return ml + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (w - ml - mr - 1)));
  };
  auto py = [&](double y) {
    return h - mb - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (h - mt - mb - 1)));
  };
  draw_line(rgb, h, w, ml, mt, ml, h - mb, black);
  draw_line(rgb, h, w, ml, h - mb, w - mr, h - mb, black);
  for (size_t s = 0; s < series.size(); ++s)
    for (size_t i = 0; i + 1 < xs.size(); ++i)
      draw_line(rgb, h, w, px(xs[i]), py(series[s][i]), px(xs[i + 1]), py(series[s][i + 1]),
                colors[s]);
  write_png_rgb(path, h, w, rgb);
}

// Predictions for a reporting variant: a single best checkpoint for
// "ha"/"sa", the four-member mean for "ens".
std::vector<BrixiaScore> predict_for_variant(const RunConfig& cfg,
                                             const std::vector<Sample>& items,
                                             const std::string& variant) {
  if (variant != "ens") {
    const AttentionMode mode = parse_attention(variant);
    const Model<float> m = load_model(checkpoint_dir(cfg, variant + "_best"));
    return predict_scores(m, items, mode, cfg.batch);
  }
  static constexpr std::array<const char*, 4> kTags = {"ha_best", "ha_last", "sa_best", "sa_last"};
  std::vector<std::vector<ScoreDistribution>> members;
  for (const char* tag : kTags) {
    const AttentionMode mode = parse_attention(std::string(tag, 2));
    const Model<float> m = load_model(checkpoint_dir(cfg, tag));
    members.push_back(predict_dists(m, items, mode, cfg.batch));
  }
  std::vector<BrixiaScore> out;
  out.reserve(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    std::vector<ScoreDistribution> at;
    for (const auto& m : members) at.push_back(m[i]);
    out.push_back(predict_score(ensemble(at)));
  }
  return out;
}

std::vector<BrixiaScore> scores_of(const std::vector<Sample>& items) {
  std::vector<BrixiaScore> refs;
  refs.reserve(items.size());
  for (const Sample& it : items) refs.push_back(it.score);
  return refs;
}

}  // namespace

void RunConfig::validate() const {
  contract(input_size >= 16 && input_size % 16 == 0,
           "run config: input_size must be a multiple of 16 and at least 16");
  contract(alpha >= 0.0 && alpha <= 1.0, "run config: alpha must lie in [0,1]");
  contract(beta > 0.0, "run config: beta must be positive");
  contract(lr > 0.0, "run config: lr must be positive");
  contract(batch > 0, "run config: batch must be positive");
  contract(epochs > 0, "run config: epochs must be positive");
  contract(patience > 0, "run config: patience must be positive");
  contract(n_superpixels >= 1, "run config: n_superpixels must be positive");
  contract(attention_mode == "ha" || attention_mode == "sa" || attention_mode == "ens",
           "run config: attention_mode must be ha, sa, or ens");
  contract(!data_dir.empty() && !out_dir.empty(),
           "run config: data_dir and out_dir must be set");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  contract(f.good(), "run config: cannot open " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    contract(eq != std::string::npos,
             "run config: line " + std::to_string(lineno) + " is not key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    contract(!key.empty(), "run config: empty key on line " + std::to_string(lineno));
    if (key == "seed")
      cfg.seed = parse_u64(key, val);
    else if (key == "input_size")
      cfg.input_size = parse_int(key, val);
    else if (key == "alpha")
      cfg.alpha = parse_double(key, val);
    else if (key == "beta")
      cfg.beta = parse_double(key, val);
    else if (key == "lr")
      cfg.lr = parse_double(key, val);
    else if (key == "batch")
      cfg.batch = parse_int(key, val);
    else if (key == "epochs")
      cfg.epochs = parse_int(key, val);
    else if (key == "patience")
      cfg.patience = parse_int(key, val);
    else if (key == "n_superpixels")
      cfg.n_superpixels = parse_int(key, val);
    else if (key == "attention_mode")
      cfg.attention_mode = val;
    else if (key == "data_dir")
      cfg.data_dir = val;
    else if (key == "out_dir")
      cfg.out_dir = val;
    else
      contract(false, "run config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string checkpoint_dir(const RunConfig& cfg, const std::string& tag) {
  return (fs::path(cfg.out_dir) / ("ckpt_" + tag)).string();
}

Model<float> load_model(const std::string& dir) {
  const Checkpoint ck = load_checkpoint(dir);
  Model<float> m(model_config_of(ck), 0);
  apply_checkpoint(ck, m);
  return m;
}

std::vector<ScoreDistribution> predict_dists(const Model<float>& m,
                                             const std::vector<Sample>& items, AttentionMode mode,
                                             int batch, bool identity_theta) {
  contract(batch > 0, "predict: batch must be positive");
  const int size = m.config().input_size;
  std::vector<ScoreDistribution> out;
  out.reserve(items.size());
  for (size_t at = 0; at < items.size(); at += static_cast<size_t>(batch)) {
    const int b = static_cast<int>(std::min<size_t>(batch, items.size() - at));
    Tensor<float> img = Tensor<float>::zeros({b, 1, size, size});
    const size_t plane = static_cast<size_t>(size) * size;
    for (int i = 0; i < b; ++i) {
      const GrayImage& im = items[at + static_cast<size_t>(i)].image;
      contract(im.height == size && im.width == size,
               "predict: sample does not match the model input size");
      std::memcpy(img.data().data() + static_cast<size_t>(i) * plane, im.pixels.data(),
                  plane * sizeof(float));
    }
    Tape<float> tape(false);
    Tensor<float> dist;
    if (!identity_theta) {
      dist = m.forward_full(tape, img, mode).dist;
    } else {
      const auto feats = m.backbone(tape, img);
      const Tensor<float> mask = m.decode_mask(tape, feats);
      std::vector<float> th(static_cast<size_t>(b) * 6, 0.0f);
      for (int i = 0; i < b; ++i) {
        th[static_cast<size_t>(i) * 6 + 0] = 1.0f;
        th[static_cast<size_t>(i) * 6 + 4] = 1.0f;
      }
      const Tensor<float> theta = Tensor<float>::from(th, {b, 6});
      const auto aligned = m.align_features(tape, feats, mask, theta, mode);
      dist = m.score_forward(tape, m.roi_pool(tape, aligned.levels));
    }
    for (int i = 0; i < b; ++i) out.push_back(dist_from_tensor(dist, i));
  }
  return out;
}

std::vector<BrixiaScore> predict_scores(const Model<float>& m, const std::vector<Sample>& items,
                                        AttentionMode mode, int batch, bool identity_theta) {
  std::vector<BrixiaScore> out;
  out.reserve(items.size());
  for (const ScoreDistribution& d : predict_dists(m, items, mode, batch, identity_theta))
    out.push_back(predict_score(d));
  return out;
}

std::vector<std::string> cmd_gen_data(const RunConfig& cfg, int n) {
  contract(n > 0, "gen-data: n must be positive");
  gen_dataset(n, cfg.seed, cfg.data_dir, SplitFractions{}, cfg.input_size, cfg.input_size);
  std::vector<std::string> outs;
  for (const char* name : {"scores.csv", "train.txt", "val.txt", "test.txt"})
    outs.push_back((fs::path(cfg.data_dir) / name).string());
  return outs;
}

std::vector<std::string> cmd_train(const RunConfig& cfg, const std::string& stage) {
  contract(stage == "seg" || stage == "align" || stage == "score" || stage == "full",
           "train: stage must be seg, align, score, or full");
  fs::create_directories(cfg.out_dir);
  const Dataset ds = load_dataset(cfg.data_dir, true, cfg.input_size);

  std::vector<std::string> outs;
  auto commit = [&](const Checkpoint& ck, const std::string& tag) {
    const std::string dir = checkpoint_dir(cfg, tag);
    save_checkpoint(ck, dir);
    outs.push_back((fs::path(dir) / "manifest.json").string());
    outs.push_back((fs::path(dir) / "params.bin").string());
  };
  auto log_to = [&](const TrainResult& r, const std::string& tag) {
    const std::string path = (fs::path(cfg.out_dir) / ("log_" + tag + ".csv")).string();
    write_train_log(r.log, path);
    outs.push_back(path);
  };

  if (stage == "seg" || stage == "full") {
    ModelConfig mc;
    mc.input_size = cfg.input_size;
    const TrainResult r = train_segmentation(ds, train_config_of(cfg, TrainStage::Segmentation), mc);
    commit(r.best, "seg");
    log_to(r, "seg");
  }
  if (stage == "align" || stage == "full") {
    const Checkpoint seg = load_checkpoint(checkpoint_dir(cfg, "seg"));
    const TrainResult r = train_alignment(ds, train_config_of(cfg, TrainStage::Alignment), seg);
    commit(r.best, "align");
    log_to(r, "align");
  }
  if (stage == "score" || stage == "full") {
    const Checkpoint align = load_checkpoint(checkpoint_dir(cfg, "align"));
    std::vector<AttentionMode> modes;
    if (cfg.attention_mode == "ens")
      modes = {AttentionMode::HardAttention, AttentionMode::SoftAttention};
    else
      modes = {parse_attention(cfg.attention_mode)};
    for (AttentionMode mode : modes) {
      const std::string name = attention_name(mode);
      const TrainResult r3 = train_scoring(ds, train_config_of(cfg, TrainStage::Scoring), align, mode);
      commit(r3.best, name + "_score");
      log_to(r3, name + "_score");
      const TrainResult r4 = finetune_all(ds, train_config_of(cfg, TrainStage::Finetune), r3.best);
      commit(r4.best, name + "_best");
      commit(r4.last, name + "_last");
      log_to(r4, name + "_finetune");
    }
  }
  return outs;
}

std::vector<std::string> cmd_predict(const RunConfig& cfg, const std::string& split) {
  const Dataset ds = load_dataset(cfg.data_dir, true, cfg.input_size);
  const std::vector<Sample>& items = split_of(ds, split);
  const std::vector<BrixiaScore> preds = predict_for_variant(cfg, items, cfg.attention_mode);

  fs::create_directories(cfg.out_dir);
  const std::string path =
      (fs::path(cfg.out_dir) / ("predictions_" + cfg.attention_mode + "_" + split + ".csv"))
          .string();
  std::vector<std::string> rows;
  for (size_t i = 0; i < items.size(); ++i) {
    std::string row = items[i].id;
    for (int r = 0; r < 6; ++r) row += "," + std::to_string(preds[i][r]);
    row += "," + std::to_string(global_score(preds[i]));
    rows.push_back(row);
  }
  write_lines(path, "id,A,B,C,D,E,F,global", rows);
  return {path};
}

std::vector<std::string> cmd_evaluate(const RunConfig& cfg, const std::string& split) {
  const Dataset ds = load_dataset(cfg.data_dir, true, cfg.input_size);
  const std::vector<Sample>& items = split_of(ds, split);
  contract(!items.empty(), "evaluate: empty split");
  const std::vector<BrixiaScore> refs = scores_of(items);

  std::vector<std::string> variants;
  if (cfg.attention_mode == "ens")
    variants = {"ha", "sa", "ens"};
  else
    variants = {cfg.attention_mode};

  fs::create_directories(cfg.out_dir);
  std::vector<std::string> outs;
  for (const std::string& v : variants) {
    const std::vector<BrixiaScore> preds = predict_for_variant(cfg, items, v);
    const std::string base =
        (fs::path(cfg.out_dir) / ("eval_" + v + "_" + split)).string();

    write_stats_csv(base + "_stats.csv", preds, refs);
    outs.push_back(base + "_stats.csv");

    std::vector<int> pr, rr;
    for (size_t i = 0; i < preds.size(); ++i)
      for (int r = 0; r < 6; ++r) {
        pr.push_back(preds[i][r]);
        rr.push_back(refs[i][r]);
      }
    write_confusion_csv(base + "_confusion_regions.csv", confusion_matrix(pr, rr, 4));
    outs.push_back(base + "_confusion_regions.csv");

    std::vector<int> pg, rg;
    for (size_t i = 0; i < preds.size(); ++i) {
      pg.push_back(global_score(preds[i]));
      rg.push_back(global_score(refs[i]));
    }
    write_confusion_csv(base + "_confusion_global.csv", confusion_matrix(pg, rg, 19));
    outs.push_back(base + "_confusion_global.csv");
  }
  return outs;
}

std::vector<std::string> cmd_explain(const RunConfig& cfg, const std::string& id) {
  contract(cfg.attention_mode != "ens",
           "explain: attention_mode must be ha or sa (one model explains one prediction)");
  const AttentionMode mode = parse_attention(cfg.attention_mode);
  const Model<float> m = load_model(checkpoint_dir(cfg, cfg.attention_mode + "_best"));

  GrayImage img = read_pgm((fs::path(cfg.data_dir) / "images" / (id + ".pgm")).string());
  if (img.height != cfg.input_size || img.width != cfg.input_size)
    img = resize_bilinear(img, cfg.input_size, cfg.input_size);
  img = normalize_cxr(img);

  const ExplanationMap e = explanation_map(m, img, cfg.n_superpixels, mode);
  fs::create_directories(cfg.out_dir);
  const std::string png = (fs::path(cfg.out_dir) / ("explain_" + id + ".png")).string();
  const std::string csv = (fs::path(cfg.out_dir) / ("explain_" + id + ".csv")).string();
  render_explanation(e, predict_score(e.baseline), png);
  write_explanation_csv(e, csv);
  return {png, csv};
}

std::vector<std::string> cmd_agreement(const RunConfig& cfg, const std::string& rater_csv) {
  const std::map<std::string, RaterPanel> panels = load_rater_csv(rater_csv);
  contract(!panels.empty(), "agreement: no rated images in " + rater_csv);

  std::set<std::string> names;
  for (const auto& [id, panel] : panels)
    for (const RaterEntry& e : panel) names.insert(e.rater);
  const std::vector<std::string> raters(names.begin(), names.end());

  auto entry_of = [](const RaterPanel& panel, const std::string& rater) -> const RaterEntry* {
    for (const RaterEntry& e : panel)
      if (e.rater == rater) return &e;
    return nullptr;
  };

  std::vector<std::string> rows;
  for (size_t i = 0; i < raters.size(); ++i)
    for (size_t j = i + 1; j < raters.size(); ++j) {
      std::vector<BrixiaScore> a, b;
      for (const auto& [id, panel] : panels) {
        const RaterEntry* ea = entry_of(panel, raters[i]);
        const RaterEntry* eb = entry_of(panel, raters[j]);
        if (ea && eb) {
          a.push_back(ea->score);
          b.push_back(eb->score);
        }
      }
      if (a.empty()) continue;
      const ErrorStats st = error_stats(b, a, StatScope::kRegionAverage);
      rows.push_back(raters[i] + "," + raters[j] + "," + fmt(st.mae) + "," + fmt(st.sd));
    }

  std::map<std::string, BrixiaScore> gold;
  for (const auto& [id, panel] : panels) gold[id] = consensus(panel);
  for (const std::string& rater : raters) {
    std::vector<BrixiaScore> a, b;
    for (const auto& [id, panel] : panels)
      if (const RaterEntry* e = entry_of(panel, rater)) {
        a.push_back(e->score);
        b.push_back(gold.at(id));
      }
    const ErrorStats st = error_stats(a, b, StatScope::kRegionAverage);
    rows.push_back(rater + ",consensus," + fmt(st.mae) + "," + fmt(st.sd));
  }

  fs::create_directories(cfg.out_dir);
  const std::string path = (fs::path(cfg.out_dir) / "agreement.csv").string();
  write_lines(path, "rater_i,rater_j,MAE,SD", rows);
  return {path};
}

std::vector<std::string> cmd_rotation_sweep(const RunConfig& cfg, const std::string& split) {
  contract(cfg.attention_mode != "ens", "sweep-rotation: attention_mode must be ha or sa");
  const AttentionMode mode = parse_attention(cfg.attention_mode);
  const Model<float> m = load_model(checkpoint_dir(cfg, cfg.attention_mode + "_best"));

  const Dataset ds = load_dataset(cfg.data_dir, true, cfg.input_size);
  const std::vector<Sample>& items = split_of(ds, split);
  contract(!items.empty(), "sweep-rotation: empty split");
  const std::vector<BrixiaScore> refs = scores_of(items);

  std::vector<double> angles, with_align, without_align;
  std::vector<std::string> rows;
  for (int angle = -30; angle <= 30; angle += 5) {
    std::vector<Sample> rotated = items;
    if (angle != 0)
      for (Sample& s : rotated)
        s.image = warp_affine(
            s.image, make_affine(static_cast<float>(angle), 1.0f, 0.0f, 0.0f, s.image.height,
                                 s.image.width));
    const double mw =
        error_stats(predict_scores(m, rotated, mode, cfg.batch, false), refs,
                    StatScope::kRegionAverage)
            .mae;
    const double mo =
        error_stats(predict_scores(m, rotated, mode, cfg.batch, true), refs,
                    StatScope::kRegionAverage)
            .mae;
    angles.push_back(angle);
    with_align.push_back(mw);
    without_align.push_back(mo);
    rows.push_back(std::to_string(angle) + "," + fmt(mw) + "," + fmt(mo));
  }

  fs::create_directories(cfg.out_dir);
  const std::string csv = (fs::path(cfg.out_dir) / "rotation_sweep.csv").string();
  const std::string png = (fs::path(cfg.out_dir) / "rotation_sweep.png").string();
  write_lines(csv, "angle,mae_with,mae_without", rows);
  write_line_plot(png, angles, {with_align, without_align},
                  {{{31, 119, 180}}, {{214, 39, 40}}});
  return {csv, png};
}

std::vector<std::string> cmd_ablate_augment(const RunConfig& cfg) {
  contract(cfg.attention_mode != "ens", "ablate-augment: attention_mode must be ha or sa");
  const AttentionMode mode = parse_attention(cfg.attention_mode);
  const Checkpoint align = load_checkpoint(checkpoint_dir(cfg, "align"));

  static constexpr std::array<std::pair<const char*, bool>, 5> kRuns = {{
      {"none", true},
      {"photometric", true},
      {"geometric", true},
      {"all", true},
      {"all", false},
  }};

  std::vector<std::string> rows;
  for (const auto& [policy, preprocess] : kRuns) {
    const Dataset ds = load_dataset(cfg.data_dir, preprocess, cfg.input_size);
    TrainConfig tc3 = train_config_of(cfg, TrainStage::Scoring);
    tc3.augment = parse_augment_policy(policy);
    const TrainResult r3 = train_scoring(ds, tc3, align, mode);
    TrainConfig tc4 = train_config_of(cfg, TrainStage::Finetune);
    tc4.augment = tc3.augment;
    const TrainResult r4 = finetune_all(ds, tc4, r3.best);
    rows.push_back(std::string(policy) + "," + (preprocess ? "1" : "0") + "," +
                   fmt(r4.log.back().train_metric) + "," + fmt(r4.best_val));
  }

  fs::create_directories(cfg.out_dir);
  const std::string path = (fs::path(cfg.out_dir) / "ablation.csv").string();
  write_lines(path, "policy,preprocessing,train_mae,val_mae", rows);
  return {path};
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"bsnet: multi-region severity scoring on phantom chest images"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "key=value run configuration file");

  RunConfig flags;
  auto* o_seed = app.add_option("--seed", flags.seed, "RNG seed");
  auto* o_input = app.add_option("--input-size", flags.input_size, "square input resolution");
  auto* o_alpha = app.add_option("--alpha", flags.alpha, "composite loss mix");
  auto* o_beta = app.add_option("--beta", flags.beta, "differentiable MAE sharpness");
  auto* o_lr = app.add_option("--lr", flags.lr, "pre-scale learning rate");
  auto* o_batch = app.add_option("--batch", flags.batch, "batch size");
  auto* o_epochs = app.add_option("--epochs", flags.epochs, "epochs per stage");
  auto* o_patience = app.add_option("--patience", flags.patience, "plateau patience");
  auto* o_nsp = app.add_option("--n-superpixels", flags.n_superpixels, "superpixel target");
  auto* o_mode = app.add_option("--attention", flags.attention_mode, "ha, sa, or ens");
  auto* o_data = app.add_option("--data-dir", flags.data_dir, "dataset directory");
  auto* o_out = app.add_option("--out-dir", flags.out_dir, "output directory");

  auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset");
  int n = 2000;
  gen->add_option("--n", n, "sample count");

  auto* train = app.add_subcommand("train", "run the staged training schedule");
  std::string stage = "full";
  train->add_option("--stage", stage, "seg, align, score, or full")
      ->check(CLI::IsMember({"seg", "align", "score", "full"}));

  auto* predict = app.add_subcommand("predict", "write a predictions CSV");
  std::string predict_split = "test";
  predict->add_option("--split", predict_split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* explain = app.add_subcommand("explain", "superpixel explanation for one image");
  std::string image_id;
  explain->add_option("--id", image_id, "image id within the dataset")->required();

  auto* evaluate = app.add_subcommand("evaluate", "error statistics and confusion matrices");
  std::string eval_split = "test";
  evaluate->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* agreement = app.add_subcommand("agreement", "inter-rater agreement report");
  std::string rater_csv;
  agreement->add_option("--raters", rater_csv, "rater CSV path")->required();

  auto* sweep = app.add_subcommand("sweep-rotation", "aligner robustness to rotation");
  std::string sweep_split = "test";
  sweep->add_option("--split", sweep_split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* ablate = app.add_subcommand("ablate-augment", "augmentation policy ablation");

  for (CLI::App* sub : {gen, train, predict, explain, evaluate, agreement, sweep, ablate})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (o_seed->count()) cfg.seed = flags.seed;
    if (o_input->count()) cfg.input_size = flags.input_size;
    if (o_alpha->count()) cfg.alpha = flags.alpha;
    if (o_beta->count()) cfg.beta = flags.beta;
    if (o_lr->count()) cfg.lr = flags.lr;
    if (o_batch->count()) cfg.batch = flags.batch;
    if (o_epochs->count()) cfg.epochs = flags.epochs;
    if (o_patience->count()) cfg.patience = flags.patience;
    if (o_nsp->count()) cfg.n_superpixels = flags.n_superpixels;
    if (o_mode->count()) cfg.attention_mode = flags.attention_mode;
    if (o_data->count()) cfg.data_dir = flags.data_dir;
    if (o_out->count()) cfg.out_dir = flags.out_dir;
    cfg.validate();

    std::vector<std::string> outs;
    if (gen->parsed())
      outs = cmd_gen_data(cfg, n);
    else if (train->parsed())
      outs = cmd_train(cfg, stage);
    else if (predict->parsed())
      outs = cmd_predict(cfg, predict_split);
    else if (explain->parsed())
      outs = cmd_explain(cfg, image_id);
    else if (evaluate->parsed())
      outs = cmd_evaluate(cfg, eval_split);
    else if (agreement->parsed())
      outs = cmd_agreement(cfg, rater_csv);
    else if (sweep->parsed())
      outs = cmd_rotation_sweep(cfg, sweep_split);
    else if (ablate->parsed())
      outs = cmd_ablate_augment(cfg);

    bool ok = !outs.empty();
    for (const std::string& p : outs)
      if (!fs::exists(p)) {
        std::fprintf(stderr, "bsnet: missing declared output: %s\n", p.c_str());
        ok = false;
      }
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bsnet: %s\n", e.what());
    return 1;
  }
}

}  // namespace bsnet
