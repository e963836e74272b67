#pragma once

#include <map>
#include <string>
#include <vector>

#include "bsnet/image.hpp"
#include "bsnet/model.hpp"
#include "bsnet/score.hpp"

namespace bsnet {

struct Sample {
  std::string id;
  GrayImage image;
  GrayImage mask;
  BrixiaScore score;
};

struct Dataset {
  std::vector<Sample> train, val, test;
};

// Reads the directory layout written by gen_dataset. With normalize set the
// images are normalized once at load time (training-time augmentation then
// operates on the normalized pixels). input_size 0 keeps the stored
// resolution; otherwise images are resampled and masks re-thresholded.
Dataset load_dataset(const std::string& dir, bool normalize = true, int input_size = 0);

enum class TrainStage { Segmentation, Alignment, Scoring, Finetune };
enum class AugmentPolicy { None, Photometric, Geometric, All };

const char* stage_name(TrainStage stage);
const char* attention_name(AttentionMode mode);
AttentionMode parse_attention(const std::string& name);
AugmentPolicy parse_augment_policy(const std::string& name);

struct TrainConfig {
  TrainStage stage = TrainStage::Segmentation;
  int epochs = 40;
  int batch_size = 8;
  double initial_lr = 3e-2;
  double lr_scale = 0.1;  // desk-scale factor on the base rate
  int plateau_patience = 5;
  double lr_halving = 0.5;
  uint64_t seed = 0;
  double alpha = 0.7;
  double beta = 10.0;
  int input_size = 128;
  AugmentPolicy augment = AugmentPolicy::All;

  double lr() const { return initial_lr * lr_scale; }
  void validate() const;
};

// Reduce-on-plateau: a metric improvement must beat the incumbent by at
// least min_delta; after `patience` consecutive non-improving observations
// the rate is multiplied by `factor` and the counter restarts.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr0, int patience, double factor, bool higher_better,
                  double min_delta = 1e-4);
  bool observe(double metric);
  double lr() const { return lr_; }

 private:
  double lr_, factor_, min_delta_, best_;
  int patience_, bad_ = 0;
  bool higher_better_, seen_ = false;
};

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string stage;  // tag of the training stage that produced it
  std::map<std::string, std::string> config;
  std::vector<CheckpointEntry> entries;
};

Checkpoint snapshot_model(const Model<float>& model, TrainStage stage,
                          const std::map<std::string, std::string>& config);
void apply_checkpoint(const Checkpoint& ckpt, Model<float>& model);
ModelConfig model_config_of(const Checkpoint& ckpt);

// On disk: <dir>/manifest.json (name, shape, dtype "f32", offset, byte
// length per entry) plus <dir>/params.bin, one little-endian IEEE-754 blob.
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_metric = 0.0;
  double val_metric = 0.0;
};

struct TrainResult {
  Checkpoint best;  // best validation metric, untrained incumbent included
  Checkpoint last;  // state after the final epoch
  std::vector<EpochLog> log;
  double initial_val = 0.0;
  double best_val = 0.0;
  int best_epoch = 0;  // 0 when no epoch beat the incumbent
};

void write_train_log(const std::vector<EpochLog>& log, const std::string& path);

// Staged schedule. Each stage checks its prerequisite's stage tag, freezes
// everything outside its trainable unit (verified bytewise), and tracks the
// stage metric on the validation split: IoU for the first two stages,
// region-averaged MAE for the scoring stages.
TrainResult train_segmentation(const Dataset& ds, const TrainConfig& cfg,
                               const ModelConfig& mcfg);
TrainResult train_alignment(const Dataset& ds, const TrainConfig& cfg, const Checkpoint& seg);
TrainResult train_scoring(const Dataset& ds, const TrainConfig& cfg, const Checkpoint& align,
                          AttentionMode mode);
TrainResult finetune_all(const Dataset& ds, const TrainConfig& cfg, const Checkpoint& scoring);

}  // namespace bsnet
