#pragma once

#include <string>
#include <vector>

#include "bsnet/model.hpp"
#include "bsnet/train.hpp"

namespace bsnet {

// Key=value run configuration. '#' starts a comment, blank lines are
// skipped, unknown keys are rejected. The defaults below are the documented
// defaults for every key.
struct RunConfig {
  uint64_t seed = 0;
  int input_size = 128;
  double alpha = 0.7;   // composite loss mix
  double beta = 10.0;   // differentiable MAE sharpness
  double lr = 3e-2;     // pre-scale learning rate
  int batch = 8;
  int epochs = 40;
  int patience = 5;
  int n_superpixels = 200;
  std::string attention_mode = "ha";  // ha | sa | ens
  std::string data_dir = "data";
  std::string out_dir = "out";

  void validate() const;
};

RunConfig load_run_config(const std::string& path);

// Checkpoint directory committed by cmd_train for a stage or ensemble
// member tag: "seg", "align", "<mode>_score", "<mode>_best", "<mode>_last".
std::string checkpoint_dir(const RunConfig& cfg, const std::string& tag);

// Model restored from a checkpoint directory.
Model<float> load_model(const std::string& dir);

// Batched forward over a dataset split; identity_theta bypasses the
// estimated transform so the aligner's effect can be measured.
std::vector<ScoreDistribution> predict_dists(const Model<float>& m,
                                             const std::vector<Sample>& items, AttentionMode mode,
                                             int batch, bool identity_theta = false);
std::vector<BrixiaScore> predict_scores(const Model<float>& m, const std::vector<Sample>& items,
                                        AttentionMode mode, int batch,
                                        bool identity_theta = false);

// Commands. Each returns the paths it promises to have written; run_cli
// exits 0 only when every one of them exists afterwards.
std::vector<std::string> cmd_gen_data(const RunConfig& cfg, int n);
std::vector<std::string> cmd_train(const RunConfig& cfg, const std::string& stage);
std::vector<std::string> cmd_predict(const RunConfig& cfg, const std::string& split);
std::vector<std::string> cmd_explain(const RunConfig& cfg, const std::string& id);
std::vector<std::string> cmd_evaluate(const RunConfig& cfg, const std::string& split);
std::vector<std::string> cmd_agreement(const RunConfig& cfg, const std::string& rater_csv);
std::vector<std::string> cmd_rotation_sweep(const RunConfig& cfg, const std::string& split);
std::vector<std::string> cmd_ablate_augment(const RunConfig& cfg);

int run_cli(int argc, const char* const* argv);

}  // namespace bsnet
