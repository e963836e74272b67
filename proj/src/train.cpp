#include "bsnet/train.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "bsnet/augment.hpp"
#include "bsnet/loss.hpp"
#include "bsnet/ops.hpp"
#include "bsnet/optim.hpp"
#include "bsnet/preprocess.hpp"
#include "bsnet/rng.hpp"
#include "bsnet/synthcxr.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace bsnet {

namespace {

// RNG stream keys under the run seed: augmentation draws, fixed validation
// pairs, per-epoch shuffles.
constexpr uint64_t kAugmentStream = 1;
constexpr uint64_t kValStream = 2;
constexpr uint64_t kShuffleStream = 3;

uint64_t item_seed(const Rng& root, uint64_t stream, uint64_t a, uint64_t b) {
  Rng r = root.derive(stream).derive(a).derive(b);
  return r.next_u64();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

AugmentConfig policy_config(AugmentPolicy p) {
  AugmentConfig c;
  switch (p) {
    case AugmentPolicy::None:
      c.hflip_prob = 0.0f;
      c.p_geometric = 0.0f;
      c.p_elastic_family = 0.0f;
      c.p_photometric = 0.0f;
      break;
    case AugmentPolicy::Photometric:
      c.hflip_prob = 0.0f;
      c.p_geometric = 0.0f;
      c.p_elastic_family = 0.0f;
      break;
    case AugmentPolicy::Geometric:
      c.p_photometric = 0.0f;
      break;
    case AugmentPolicy::All:
      break;
  }
  return c;
}

Tensor<float> image_batch(const std::vector<const GrayImage*>& imgs) {
  contract(!imgs.empty(), "image_batch: empty batch");
  const int H = imgs[0]->height, W = imgs[0]->width;
  Tensor<float> t = Tensor<float>::zeros({static_cast<int>(imgs.size()), 1, H, W});
  float* d = t.data().data();
  for (size_t b = 0; b < imgs.size(); ++b) {
    contract(imgs[b]->height == H && imgs[b]->width == W, "image_batch: mixed sizes");
    std::memcpy(d + b * static_cast<size_t>(H) * W, imgs[b]->pixels.data(),
                static_cast<size_t>(H) * W * sizeof(float));
  }
  return t;
}

void copy_into(Tensor<float>& dst, size_t row, const Tensor<float>& src) {
  const size_t plane = src.numel() / static_cast<size_t>(src.dim(0));
  std::memcpy(dst.data().data() + row * plane, src.data().data(), src.numel() * sizeof(float));
}

std::map<std::string, std::string> config_snapshot(const ModelConfig& m, const TrainConfig& c,
                                                   const char* attention) {
  std::map<std::string, std::string> out;
  out["input_size"] = std::to_string(m.input_size);
  out["widths"] = std::to_string(m.widths[0]) + "," + std::to_string(m.widths[1]) + "," +
                  std::to_string(m.widths[2]) + "," + std::to_string(m.widths[3]);
  out["fpn_channels"] = std::to_string(m.fpn_channels);
  out["epochs"] = std::to_string(c.epochs);
  out["batch_size"] = std::to_string(c.batch_size);
  out["lr"] = fmt_double(c.lr());
  out["plateau_patience"] = std::to_string(c.plateau_patience);
  out["lr_halving"] = fmt_double(c.lr_halving);
  out["seed"] = std::to_string(c.seed);
  out["alpha"] = fmt_double(c.alpha);
  out["beta"] = fmt_double(c.beta);
  switch (c.augment) {
    case AugmentPolicy::None: out["augment"] = "none"; break;
    case AugmentPolicy::Photometric: out["augment"] = "photometric"; break;
    case AugmentPolicy::Geometric: out["augment"] = "geometric"; break;
    case AugmentPolicy::All: out["augment"] = "all"; break;
  }
  if (attention) out["attention"] = attention;
  return out;
}

// Bytewise record of every frozen parameter, checked after a stage to prove
// the freeze contract held.
struct FrozenSnapshot {
  std::vector<std::pair<std::string, std::vector<float>>> arrays;

  static FrozenSnapshot capture(const Model<float>& m) {
    FrozenSnapshot s;
    for (const std::string& n : m.param_names()) {
      const Tensor<float>& t = m.param(n);
      if (!t.requires_grad())
        s.arrays.emplace_back(n, std::vector<float>(t.data().begin(), t.data().end()));
    }
    return s;
  }

  void verify(const Model<float>& m) const {
    for (const auto& [name, vals] : arrays) {
      const Tensor<float>& t = m.param(name);
      contract(t.numel() == vals.size() &&
                   std::memcmp(t.data().data(), vals.data(), vals.size() * sizeof(float)) == 0,
               "freeze contract violated for " + name);
    }
  }
};

double eval_segmentation_iou(const Model<float>& model, const std::vector<Sample>& items,
                             int batch) {
  const int S = items[0].image.height;
  const int N = static_cast<int>(items.size());
  Tensor<float> preds = Tensor<float>::zeros({N, 1, S, S});
  Tensor<float> targs = Tensor<float>::zeros({N, 1, S, S});
  for (size_t s = 0; s < items.size(); s += static_cast<size_t>(batch)) {
    const size_t e = std::min(items.size(), s + static_cast<size_t>(batch));
    std::vector<const GrayImage*> imgs;
    for (size_t i = s; i < e; ++i) {
      imgs.push_back(&items[i].image);
      copy_into(targs, i, to_tensor(items[i].mask));
    }
    Tape<float> tape(false);
    copy_into(preds, s, model.predict_mask(tape, image_batch(imgs)));
  }
  return overlap_metrics(preds, targs).iou;
}

// Fixed per-item seeds keep the validation pairs identical across epochs.
double eval_alignment_iou(const Model<float>& model, const std::vector<Sample>& items, int batch,
                          const Rng& root) {
  const int S = items[0].image.height;
  const int N = static_cast<int>(items.size());
  Tensor<float> realigned = Tensor<float>::zeros({N, 1, S, S});
  Tensor<float> originals = Tensor<float>::zeros({N, 1, S, S});
  for (size_t s = 0; s < items.size(); s += static_cast<size_t>(batch)) {
    const size_t e = std::min(items.size(), s + static_cast<size_t>(batch));
    std::vector<MisalignedPair> pairs;
    std::vector<const GrayImage*> imgs;
    for (size_t i = s; i < e; ++i) {
      const Sample& it = items[i];
      pairs.push_back(gen_misaligned_pair({it.image, it.mask, it.score, it.id},
                                          item_seed(root, kValStream, 0, i)));
      copy_into(originals, i, to_tensor(pairs.back().original_mask));
    }
    for (const auto& p : pairs) imgs.push_back(&p.warped_image);
    Tape<float> tape(false);
    Tensor<float> mask = model.predict_mask(tape, image_batch(imgs));
    Tensor<float> raw = model.estimate_affine(tape, mask);
    Tensor<float> theta = ops::theta_fixup(tape, raw, mask, 1e-3f, 1e-3f, nullptr);
    Tensor<float> grid = ops::affine_grid(tape, theta, S, S);
    copy_into(realigned, s, ops::grid_sample(tape, mask, grid));
  }
  return overlap_metrics(realigned, originals).iou;
}

double eval_scoring_mae(const Model<float>& model, const std::vector<Sample>& items, int batch,
                        AttentionMode mode) {
  std::vector<BrixiaScore> preds, refs;
  for (size_t s = 0; s < items.size(); s += static_cast<size_t>(batch)) {
    const size_t e = std::min(items.size(), s + static_cast<size_t>(batch));
    std::vector<const GrayImage*> imgs;
    for (size_t i = s; i < e; ++i) imgs.push_back(&items[i].image);
    Tape<float> tape(false);
    ForwardResult<float> r = model.forward_full(tape, image_batch(imgs), mode);
    for (size_t i = s; i < e; ++i) {
      preds.push_back(predict_score(dist_from_tensor(r.dist, static_cast<int>(i - s))));
      refs.push_back(items[i].score);
    }
  }
  return error_stats(preds, refs, StatScope::kRegionAverage).mae;
}

struct Hooks {
  std::function<std::pair<double, double>(int, Adam<float>&)> train_epoch;  // loss, metric
  std::function<double()> evaluate;
  bool higher_better = true;
};

TrainResult run_stage(Model<float>& model, TrainStage stage, const TrainConfig& cfg,
                      const std::map<std::string, std::string>& snapshot_cfg, const Hooks& hooks) {
  Adam<float> opt(static_cast<float>(cfg.lr()));
  ParamList<float> params;
  for (const std::string& n : model.param_names()) params.push_back({n, model.param(n)});
  opt.attach(params);
  contract(opt.attached() > 0, "training: no trainable parameters");

  TrainResult res;
  res.initial_val = hooks.evaluate();
  res.best_val = res.initial_val;
  res.best_epoch = 0;
  res.best = snapshot_model(model, stage, snapshot_cfg);
  PlateauSchedule sched(cfg.lr(), cfg.plateau_patience, cfg.lr_halving, hooks.higher_better);
  sched.observe(res.initial_val);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.set_lr(static_cast<float>(sched.lr()));
    const double lr_used = sched.lr();
    const auto [loss, train_metric] = hooks.train_epoch(epoch, opt);
    const double v = hooks.evaluate();
    sched.observe(v);
    const bool better = hooks.higher_better ? v > res.best_val : v < res.best_val;
    if (better) {
      res.best_val = v;
      res.best_epoch = epoch;
      res.best = snapshot_model(model, stage, snapshot_cfg);
    }
    res.log.push_back({epoch, lr_used, loss, train_metric, v});
  }
  res.last = snapshot_model(model, stage, snapshot_cfg);
  return res;
}

std::vector<size_t> epoch_order(size_t n, const Rng& root, int epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng r = root.derive(kShuffleStream).derive(static_cast<uint64_t>(epoch));
  r.shuffle(order);
  return order;
}

void check_dataset(const Dataset& ds, int input_size, const char* who) {
  contract(!ds.train.empty() && !ds.val.empty(), std::string(who) + ": empty dataset split");
  for (const auto* split : {&ds.train, &ds.val})
    for (const Sample& s : *split)
      contract(s.image.height == input_size && s.image.width == input_size &&
                   s.mask.height == input_size && s.mask.width == input_size,
               std::string(who) + ": sample size differs from the configured input size");
}

// Shared by the scoring and fine-tuning stages; only the trainable set and
// the stage tag differ.
Hooks scoring_hooks(Model<float>& model, const Dataset& ds, const TrainConfig& cfg,
                    AttentionMode mode, const Rng& root) {
  const AugmentConfig acfg = policy_config(cfg.augment);
  const LossConfig lcfg{cfg.alpha, cfg.beta};
  Hooks hooks;
  hooks.higher_better = false;
  hooks.evaluate = [&model, &ds, &cfg, mode]() {
    return eval_scoring_mae(model, ds.val, cfg.batch_size, mode);
  };
  hooks.train_epoch = [&model, &ds, &cfg, mode, acfg, lcfg, root](int epoch, Adam<float>& opt) {
    const std::vector<size_t> order = epoch_order(ds.train.size(), root, epoch);
    double loss_sum = 0.0;
    std::vector<BrixiaScore> preds, refs;
    for (size_t s = 0; s < order.size(); s += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch_size));
      std::vector<AugmentResult> aug;
      std::vector<const GrayImage*> imgs;
      std::vector<BrixiaScore> ys;
      for (size_t i = s; i < e; ++i) {
        const Sample& it = ds.train[order[i]];
        aug.push_back(augment(it.image, nullptr, &it.score, acfg,
                              item_seed(root, kAugmentStream, static_cast<uint64_t>(epoch),
                                        order[i])));
        ys.push_back(*aug.back().score);
      }
      for (const auto& a : aug) imgs.push_back(&a.image);
      Tape<float> tape(true);
      ForwardResult<float> r = model.forward_full(tape, image_batch(imgs), mode);
      Tensor<float> loss = composite_loss(tape, r.dist, ys, lcfg);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.value()) * static_cast<double>(e - s);
      for (size_t i = s; i < e; ++i) {
        preds.push_back(predict_score(dist_from_tensor(r.dist, static_cast<int>(i - s))));
        refs.push_back(ys[i - s]);
      }
    }
    const double mae = error_stats(preds, refs, StatScope::kRegionAverage).mae;
    return std::make_pair(loss_sum / static_cast<double>(order.size()), mae);
  };
  return hooks;
}

}  // namespace

const char* stage_name(TrainStage stage) {
  switch (stage) {
    case TrainStage::Segmentation: return "segmentation";
    case TrainStage::Alignment: return "alignment";
    case TrainStage::Scoring: return "scoring";
    case TrainStage::Finetune: return "finetune";
  }
  contract_fail("stage_name: bad stage");
}

const char* attention_name(AttentionMode mode) {
  return mode == AttentionMode::HardAttention ? "ha" : "sa";
}

AttentionMode parse_attention(const std::string& name) {
  if (name == "ha") return AttentionMode::HardAttention;
  if (name == "sa") return AttentionMode::SoftAttention;
  contract_fail("parse_attention: expected ha or sa, got '" + name + "'");
}

AugmentPolicy parse_augment_policy(const std::string& name) {
  if (name == "none") return AugmentPolicy::None;
  if (name == "photometric") return AugmentPolicy::Photometric;
  if (name == "geometric") return AugmentPolicy::Geometric;
  if (name == "all") return AugmentPolicy::All;
  contract_fail("parse_augment_policy: unknown policy '" + name + "'");
}

void TrainConfig::validate() const {
  contract(epochs > 0, "TrainConfig: epochs must be positive");
  contract(batch_size > 0, "TrainConfig: batch_size must be positive");
  contract(initial_lr > 0 && lr_scale > 0, "TrainConfig: learning rate must be positive");
  contract(plateau_patience > 0, "TrainConfig: plateau_patience must be positive");
  contract(lr_halving > 0 && lr_halving <= 1, "TrainConfig: lr_halving must be in (0,1]");
  contract(alpha >= 0 && alpha <= 1, "TrainConfig: alpha must be in [0,1]");
  contract(beta > 0, "TrainConfig: beta must be positive");
  contract(input_size >= 16 && input_size % 16 == 0,
           "TrainConfig: input_size must be a multiple of 16 and at least 16");
}

PlateauSchedule::PlateauSchedule(double lr0, int patience, double factor, bool higher_better,
                                 double min_delta)
    : lr_(lr0), factor_(factor), min_delta_(min_delta), best_(0.0), patience_(patience),
      higher_better_(higher_better) {
  contract(lr0 > 0 && patience > 0 && factor > 0 && factor <= 1 && min_delta >= 0,
           "PlateauSchedule: bad configuration");
}

bool PlateauSchedule::observe(double metric) {
  const bool improved =
      !seen_ || (higher_better_ ? metric > best_ + min_delta_ : metric < best_ - min_delta_);
  if (improved) {
    best_ = metric;
    seen_ = true;
    bad_ = 0;
    return true;
  }
  if (++bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
  }
  return false;
}

Dataset load_dataset(const std::string& dir, bool normalize, int input_size) {
  contract(fs::is_directory(dir), "load_dataset: no such directory " + dir);
  std::ifstream scores(fs::path(dir) / "scores.csv");
  contract(scores.good(), "load_dataset: cannot open scores.csv in " + dir);
  std::string line;
  contract(std::getline(scores, line) && line == "id,A,B,C,D,E,F",
           "load_dataset: bad scores.csv header");
  std::map<std::string, BrixiaScore> by_id;
  while (std::getline(scores, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, cell;
    contract(static_cast<bool>(std::getline(ss, id, ',')), "load_dataset: bad scores.csv row");
    BrixiaScore sc;
    for (int reg = 0; reg < 6; ++reg) {
      contract(static_cast<bool>(std::getline(ss, cell, ',')),
               "load_dataset: bad scores.csv row for " + id);
      sc.v[static_cast<size_t>(reg)] = std::stoi(cell);
    }
    contract(sc.valid(), "load_dataset: score out of range for " + id);
    by_id[id] = sc;
  }

  auto read_split = [&](const char* name) {
    std::ifstream f(fs::path(dir) / name);
    contract(f.good(), std::string("load_dataset: cannot open ") + name);
    std::vector<Sample> out;
    std::string id;
    while (std::getline(f, id)) {
      if (id.empty()) continue;
      auto it = by_id.find(id);
      contract(it != by_id.end(), "load_dataset: id " + id + " missing from scores.csv");
      Sample s;
      s.id = id;
      s.image = read_pgm((fs::path(dir) / "images" / (id + ".pgm")).string());
      s.mask = read_pgm((fs::path(dir) / "masks" / (id + ".pgm")).string());
      s.score = it->second;
      if (input_size > 0 &&
          (s.image.height != input_size || s.image.width != input_size)) {
        s.image = resize_bilinear(s.image, input_size, input_size);
        s.mask = resize_bilinear(s.mask, input_size, input_size);
        for (float& v : s.mask.pixels) v = v >= 0.5f ? 1.0f : 0.0f;
      }
      if (normalize) s.image = normalize_cxr(s.image);
      out.push_back(std::move(s));
    }
    return out;
  };

  Dataset ds;
  ds.train = read_split("train.txt");
  ds.val = read_split("val.txt");
  ds.test = read_split("test.txt");
  return ds;
}

Checkpoint snapshot_model(const Model<float>& model, TrainStage stage,
                          const std::map<std::string, std::string>& config) {
  Checkpoint c;
  c.stage = stage_name(stage);
  c.config = config;
  for (const std::string& n : model.param_names()) {
    const Tensor<float>& t = model.param(n);
    c.entries.push_back({n, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  return c;
}

void apply_checkpoint(const Checkpoint& ckpt, Model<float>& model) {
  contract(ckpt.entries.size() == model.param_names().size(),
           "apply_checkpoint: parameter count mismatch");
  for (const CheckpointEntry& e : ckpt.entries) {
    Tensor<float>& t = model.param(e.name);
    contract(t.shape() == e.shape, "apply_checkpoint: shape mismatch for " + e.name);
    std::copy(e.values.begin(), e.values.end(), t.data().begin());
  }
}

ModelConfig model_config_of(const Checkpoint& ckpt) {
  auto get = [&](const char* key) {
    auto it = ckpt.config.find(key);
    contract(it != ckpt.config.end(),
             std::string("checkpoint: config is missing key '") + key + "'");
    return it->second;
  };
  ModelConfig m;
  m.input_size = std::stoi(get("input_size"));
  std::stringstream ws(get("widths"));
  std::string cell;
  for (int i = 0; i < 4; ++i) {
    contract(static_cast<bool>(std::getline(ws, cell, ',')), "checkpoint: bad widths entry");
    m.widths[static_cast<size_t>(i)] = std::stoi(cell);
  }
  m.fpn_channels = std::stoi(get("fpn_channels"));
  m.validate();
  return m;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  contract(blob.good(), "save_checkpoint: cannot write params.bin in " + dir);
  json params = json::array();
  uint64_t offset = 0;
  for (const CheckpointEntry& e : ckpt.entries) {
    size_t n = 1;
    for (int d : e.shape) n *= static_cast<size_t>(d);
    contract(n == e.values.size(), "save_checkpoint: shape/value mismatch for " + e.name);
    for (float v : e.values) {
      uint32_t u;
      std::memcpy(&u, &v, 4);
      const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                             static_cast<char>((u >> 16) & 0xff),
                             static_cast<char>((u >> 24) & 0xff)};
      blob.write(bytes, 4);
    }
    params.push_back({{"name", e.name},
                      {"shape", e.shape},
                      {"dtype", "f32"},
                      {"offset", offset},
                      {"bytes", e.values.size() * 4}});
    offset += e.values.size() * 4;
  }
  blob.close();

  json manifest = {{"format", "bsnet-checkpoint"}, {"version", 1},   {"stage", ckpt.stage},
                   {"dtype", "f32"},               {"blob", "params.bin"},
                   {"blob_bytes", offset},         {"config", ckpt.config},
                   {"params", params}};
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  contract(mf.good(), "save_checkpoint: cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf.good()) throw std::runtime_error("checkpoint: cannot open " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: manifest is not valid JSON: " + std::string(e.what()));
  }
  auto fail = [](const std::string& msg) -> void { throw std::runtime_error("checkpoint: " + msg); };
  if (manifest.value("format", "") != "bsnet-checkpoint") fail("unknown manifest format");
  if (manifest.value("dtype", "") != "f32") fail("unsupported dtype");
  Checkpoint c;
  c.stage = manifest.value("stage", "");
  if (c.stage.empty()) fail("manifest has no stage tag");
  for (auto& [k, v] : manifest.at("config").items()) c.config[k] = v.get<std::string>();

  const fs::path bpath = fs::path(dir) / manifest.value("blob", "params.bin");
  std::ifstream blob(bpath, std::ios::binary);
  if (!blob.good()) fail("cannot open " + bpath.string());
  uint64_t offset = 0;
  std::map<std::string, bool> seen;
  for (const json& p : manifest.at("params")) {
    CheckpointEntry e;
    e.name = p.value("name", "");
    if (e.name.empty()) fail("entry with empty name");
    if (seen.count(e.name)) fail("entry '" + e.name + "' listed twice");
    seen[e.name] = true;
    if (p.value("dtype", "") != "f32") fail("entry '" + e.name + "' has unsupported dtype");
    size_t n = 1;
    for (const json& d : p.at("shape")) {
      e.shape.push_back(d.get<int>());
      if (e.shape.back() <= 0) fail("entry '" + e.name + "' has a non-positive dimension");
      n *= static_cast<size_t>(e.shape.back());
    }
    if (p.value("offset", uint64_t(0)) != offset)
      fail("entry '" + e.name + "' has inconsistent offset");
    if (p.value("bytes", uint64_t(0)) != n * 4)
      fail("entry '" + e.name + "' has inconsistent byte length");
    e.values.resize(n);
    for (size_t i = 0; i < n; ++i) {
      unsigned char bytes[4];
      if (!blob.read(reinterpret_cast<char*>(bytes), 4))
        fail("blob truncated reading entry '" + e.name + "'");
      uint32_t u = static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
                   (static_cast<uint32_t>(bytes[2]) << 16) |
                   (static_cast<uint32_t>(bytes[3]) << 24);
      std::memcpy(&e.values[i], &u, 4);
    }
    offset += n * 4;
    c.entries.push_back(std::move(e));
  }
  if (manifest.value("blob_bytes", uint64_t(0)) != offset) fail("blob byte count mismatch");
  char extra;
  if (blob.read(&extra, 1)) fail("blob has trailing bytes");
  return c;
}

void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  contract(f.good(), "write_train_log: cannot write " + path);
  f << "epoch,lr,train_loss,train_metric,val_metric\n";
  for (const EpochLog& e : log) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.lr, e.train_loss,
                  e.train_metric, e.val_metric);
    f << buf;
  }
}

TrainResult train_segmentation(const Dataset& ds, const TrainConfig& cfg,
                               const ModelConfig& mcfg) {
  cfg.validate();
  mcfg.validate();
  contract(mcfg.input_size == cfg.input_size, "train_segmentation: input_size mismatch");
  check_dataset(ds, cfg.input_size, "train_segmentation");

  Model<float> model(mcfg, cfg.seed);
  model.set_trainable([](const std::string& n) {
    return n.rfind("backbone.", 0) == 0 || n.rfind("decoder.", 0) == 0;
  });
  const FrozenSnapshot frozen = FrozenSnapshot::capture(model);
  const Rng root(cfg.seed);
  const AugmentConfig acfg = policy_config(cfg.augment);

  Hooks hooks;
  hooks.higher_better = true;
  hooks.evaluate = [&]() { return eval_segmentation_iou(model, ds.val, cfg.batch_size); };
  hooks.train_epoch = [&](int epoch, Adam<float>& opt) {
    const std::vector<size_t> order = epoch_order(ds.train.size(), root, epoch);
    double loss_sum = 0.0, iou_sum = 0.0;
    for (size_t s = 0; s < order.size(); s += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch_size));
      std::vector<AugmentResult> aug;
      std::vector<const GrayImage*> imgs;
      for (size_t i = s; i < e; ++i) {
        const Sample& it = ds.train[order[i]];
        aug.push_back(augment(it.image, &it.mask, nullptr, acfg,
                              item_seed(root, kAugmentStream, static_cast<uint64_t>(epoch),
                                        order[i])));
      }
      const size_t bs = e - s;
      Tensor<float> targ = Tensor<float>::zeros({static_cast<int>(bs), 1, cfg.input_size,
                                                 cfg.input_size});
      for (size_t i = 0; i < bs; ++i) {
        imgs.push_back(&aug[i].image);
        copy_into(targ, i, to_tensor(*aug[i].mask));
      }
      Tape<float> tape(true);
      Tensor<float> pred = model.predict_mask(tape, image_batch(imgs));
      Tensor<float> loss = dice_loss(tape, pred, targ);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.value()) * static_cast<double>(bs);
      iou_sum += overlap_metrics(pred, targ).iou * static_cast<double>(bs);
    }
    const double n = static_cast<double>(order.size());
    return std::make_pair(loss_sum / n, iou_sum / n);
  };

  TrainResult res = run_stage(model, TrainStage::Segmentation, cfg,
                              config_snapshot(mcfg, cfg, nullptr), hooks);
  frozen.verify(model);
  return res;
}

TrainResult train_alignment(const Dataset& ds, const TrainConfig& cfg, const Checkpoint& seg) {
  cfg.validate();
  contract(seg.stage == "segmentation",
           "train_alignment: prerequisite checkpoint must be stage 'segmentation', got '" +
               seg.stage + "'");
  const ModelConfig mcfg = model_config_of(seg);
  contract(mcfg.input_size == cfg.input_size, "train_alignment: input_size mismatch");
  check_dataset(ds, cfg.input_size, "train_alignment");

  Model<float> model(mcfg, cfg.seed);
  apply_checkpoint(seg, model);
  model.set_trainable([](const std::string& n) { return n.rfind("align.", 0) == 0; });
  const FrozenSnapshot frozen = FrozenSnapshot::capture(model);
  const Rng root(cfg.seed);
  const int S = cfg.input_size;

  Hooks hooks;
  hooks.higher_better = true;
  hooks.evaluate = [&]() { return eval_alignment_iou(model, ds.val, cfg.batch_size, root); };
  hooks.train_epoch = [&](int epoch, Adam<float>& opt) {
    const std::vector<size_t> order = epoch_order(ds.train.size(), root, epoch);
    double loss_sum = 0.0, iou_sum = 0.0;
    for (size_t s = 0; s < order.size(); s += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(order.size(), s + static_cast<size_t>(cfg.batch_size));
      const size_t bs = e - s;
      std::vector<MisalignedPair> pairs;
      std::vector<const GrayImage*> imgs;
      Tensor<float> targ = Tensor<float>::zeros({static_cast<int>(bs), 1, S, S});
      for (size_t i = s; i < e; ++i) {
        const Sample& it = ds.train[order[i]];
        pairs.push_back(gen_misaligned_pair(
            {it.image, it.mask, it.score, it.id},
            item_seed(root, kAugmentStream, static_cast<uint64_t>(epoch), order[i])));
        copy_into(targ, i - s, to_tensor(pairs.back().original_mask));
      }
      for (const auto& p : pairs) imgs.push_back(&p.warped_image);
      Tape<float> tape(true);
      Tensor<float> mask = model.predict_mask(tape, image_batch(imgs));
      Tensor<float> raw = model.estimate_affine(tape, mask);
      Tensor<float> theta = ops::theta_fixup(tape, raw, mask, 1e-3f, 1e-3f, nullptr);
      Tensor<float> grid = ops::affine_grid(tape, theta, S, S);
      Tensor<float> realigned = ops::grid_sample(tape, mask, grid);
      Tensor<float> loss = dice_loss(tape, realigned, targ);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.value()) * static_cast<double>(bs);
      iou_sum += overlap_metrics(realigned, targ).iou * static_cast<double>(bs);
    }
    const double n = static_cast<double>(order.size());
    return std::make_pair(loss_sum / n, iou_sum / n);
  };

  TrainResult res =
      run_stage(model, TrainStage::Alignment, cfg, config_snapshot(mcfg, cfg, nullptr), hooks);
  frozen.verify(model);
  return res;
}

TrainResult train_scoring(const Dataset& ds, const TrainConfig& cfg, const Checkpoint& align,
                          AttentionMode mode) {
  cfg.validate();
  contract(align.stage == "alignment",
           "train_scoring: prerequisite checkpoint must be stage 'alignment', got '" +
               align.stage + "'");
  const ModelConfig mcfg = model_config_of(align);
  contract(mcfg.input_size == cfg.input_size, "train_scoring: input_size mismatch");
  check_dataset(ds, cfg.input_size, "train_scoring");

  Model<float> model(mcfg, cfg.seed);
  apply_checkpoint(align, model);
  model.set_trainable([](const std::string& n) {
    return n.rfind("fpn.", 0) == 0 || n.rfind("score.", 0) == 0;
  });
  const FrozenSnapshot frozen = FrozenSnapshot::capture(model);
  const Rng root(cfg.seed);

  TrainResult res = run_stage(model, TrainStage::Scoring, cfg,
                              config_snapshot(mcfg, cfg, attention_name(mode)),
                              scoring_hooks(model, ds, cfg, mode, root));
  frozen.verify(model);
  return res;
}

TrainResult finetune_all(const Dataset& ds, const TrainConfig& cfg, const Checkpoint& scoring) {
  cfg.validate();
  contract(scoring.stage == "scoring",
           "finetune_all: prerequisite checkpoint must be stage 'scoring', got '" +
               scoring.stage + "'");
  auto att = scoring.config.find("attention");
  contract(att != scoring.config.end(), "finetune_all: checkpoint lacks an attention mode");
  const AttentionMode mode = parse_attention(att->second);
  const ModelConfig mcfg = model_config_of(scoring);
  contract(mcfg.input_size == cfg.input_size, "finetune_all: input_size mismatch");
  check_dataset(ds, cfg.input_size, "finetune_all");

  Model<float> model(mcfg, cfg.seed);
  apply_checkpoint(scoring, model);
  model.set_trainable([](const std::string&) { return true; });
  const Rng root(cfg.seed);

  return run_stage(model, TrainStage::Finetune, cfg,
                   config_snapshot(mcfg, cfg, attention_name(mode)),
                   scoring_hooks(model, ds, cfg, mode, root));
}

}  // namespace bsnet
