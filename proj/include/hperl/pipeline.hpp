#pragma once

// Training loop, checkpoint plumbing and dataset-level evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hperl/checkpoint.hpp"
#include "hperl/dataset.hpp"
#include "hperl/eval.hpp"
#include "hperl/model.hpp"
#include "hperl/nn/optim.hpp"

namespace hperl {

// Training stopped because the loss blew up (above the divergence threshold,
// or a NaN/Inf anywhere in the graph).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, std::int64_t step)
      : Error(what), epoch_(epoch), step_(step) {}
  int epoch() const { return epoch_; }
  std::int64_t step() const { return step_; }

 private:
  int epoch_;
  std::int64_t step_;
};

// splitmix64 of a ^ golden-ratio-scaled b.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Mean size of the training split's 3D boxes (the RGB model's metric prior).
Eigen::Vector3d mean_box_size(const Dataset& data);

// Model weights (plus the box prior) under their parameter names.
std::vector<CheckpointTensor> model_tensors(const ToyNet& model);
// Copies tensors into the model; names and shapes must match exactly.
void load_model_tensors(ToyNet& model, const std::vector<CheckpointTensor>& tensors);
// Rebuilds the model stored in a checkpoint (configuration included).
ToyNet model_from_checkpoint(const Checkpoint& c, const AnchorPoseSet& poses);

inline constexpr const char* kLossLogHeader = "epoch,step,lr,l_rpn_obj,l_rpn_reg,l_cls,l_2d,l_3d,l_total";

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  std::filesystem::path resume;   // empty: start fresh
  std::string config_text;        // stored in checkpoints
  std::function<void(const std::string&)> log;
};

class Trainer {
 public:
  Trainer(const ModelConfig& cfg, const Dataset& data, const AnchorPoseSet& poses);

  ToyNet& model() { return model_; }
  const ToyNet& model() const { return model_; }
  nn::Optimizer& optimizer() { return optimizer_; }

  double learning_rate(int epoch) const;

  // Forward + backward on one scene; gradients accumulate into the
  // parameters. Returns the scene's loss report.
  LossReport accumulate(const Scene& scene, bool flip, std::uint64_t sample_seed);
  // One optimizer update from the accumulated gradients of `batch` scenes.
  void apply_update(double lr, int batch);
  // accumulate + apply_update on a single scene (batch of one).
  LossReport train_step(const Scene& scene, double lr, bool flip = false);

  // Epoch loop. Writes loss_log.csv, last.ckpt and best.ckpt into out_dir.
  void run(const TrainOptions& options);

  const std::string& loss_log() const { return log_; }
  int epochs_done() const { return epochs_done_; }
  Checkpoint checkpoint(const std::string& config_text) const;
  void restore(const Checkpoint& c);

 private:
  void check_divergence(const LossReport& r, int epoch) const;

  ModelConfig cfg_;
  const Dataset& data_;
  ToyNet model_;
  nn::Optimizer optimizer_;
  std::int32_t epochs_done_ = 0;
  std::int64_t global_step_ = 0;
  double best_loss_ = 0;
  std::int32_t best_epoch_ = -1;
  std::string log_;
};

struct EvalResult {
  MetricReport report;
  std::vector<std::string> records;  // pose_record lines, in scene order
};

// Scenes of a split by name ("train" or "eval").
const std::vector<int>& split_indices(const Dataset& data, const std::string& split);

EvalResult evaluate_model(const ToyNet& model, const Dataset& data, const std::vector<int>& scenes);
// Ground truth fed back as predictions (confidence 1).
EvalResult evaluate_oracle(const Dataset& data, const std::vector<int>& scenes, double match_iou = 0.3);

void write_predictions(const std::filesystem::path& path, const EvalResult& r);

}  // namespace hperl
