#include "hperl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "hperl/config.hpp"

namespace hperl {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Eigen::Vector3d mean_box_size(const Dataset& data) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  int n = 0;
  for (int i : data.manifest.train) {
    for (const auto& p : data.scenes.at(static_cast<std::size_t>(i)).gt) {
      sum += p.box.size;
      ++n;
    }
  }
  return n ? Eigen::Vector3d(sum / n) : kAnchorTemplateSize;
}

namespace {
constexpr const char* kPriorName = "prior.box_size";
}

std::vector<CheckpointTensor> model_tensors(const ToyNet& model) {
  std::vector<CheckpointTensor> out;
  for (const auto& p : model.parameters()) out.push_back({p.name, p.tensor.shape(), p.tensor.value()});
  const auto& b = model.box_prior();
  out.push_back({kPriorName, {3}, {b.x(), b.y(), b.z()}});
  return out;
}

void load_model_tensors(ToyNet& model, const std::vector<CheckpointTensor>& tensors) {
  auto& params = model.parameters();
  if (tensors.size() != params.size() + 1) {
    throw InvalidArgument("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size() + 1));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    auto& p = params[i];
    if (t.name != p.name || t.shape != p.tensor.shape()) {
      throw InvalidArgument("checkpoint tensor '" + t.name + "' " + nn::shape_str(t.shape) +
                            " does not match parameter '" + p.name + "' " + nn::shape_str(p.tensor.shape()));
    }
    p.tensor.value() = t.values;
  }
  const auto& prior = tensors.back();
  if (prior.name != kPriorName || prior.values.size() != 3) throw InvalidArgument("checkpoint lacks the box prior");
  model.set_box_prior({prior.values[0], prior.values[1], prior.values[2]});
}

ToyNet model_from_checkpoint(const Checkpoint& c, const AnchorPoseSet& poses) {
  const RunConfig cfg = config_from_text(c.config);
  ToyNet model(cfg.model, poses);
  load_model_tensors(model, c.tensors);
  return model;
}

Trainer::Trainer(const ModelConfig& cfg, const Dataset& data, const AnchorPoseSet& poses)
    : cfg_(cfg), data_(data), model_(cfg, poses), optimizer_(cfg.optimizer, model_.parameters()) {
  model_.set_box_prior(mean_box_size(data));
}

double Trainer::learning_rate(int epoch) const {
  if (cfg_.lr_decay_every <= 0) return cfg_.learning_rate;
  return cfg_.learning_rate * std::pow(cfg_.lr_decay, epoch / cfg_.lr_decay_every);
}

LossReport Trainer::accumulate(const Scene& scene, bool flip, std::uint64_t sample_seed) {
  const Scene flipped = flip ? flip_scene(scene, data_.manifest.joints, cfg_.swap_lr_on_flip) : Scene{};
  const Scene& s = flip ? flipped : scene;
  const SceneInput in = prepare_input(s, cfg_, data_.manifest.extents);
  const SceneTargets t = prepare_targets(s, in);
  const Features f = model_.extract(in);
  const StepPlan plan = model_.plan_step(f, in, t, sample_seed);
  const StepLoss loss = model_.step_loss(f, in, t, plan);
  nn::backward(loss.total);
  return loss.report;
}

void Trainer::apply_update(double lr, int batch) {
  optimizer_.step(lr, 1.0 / batch);
  optimizer_.zero_grad();
  ++global_step_;
}

LossReport Trainer::train_step(const Scene& scene, double lr, bool flip) {
  const LossReport r = accumulate(scene, flip, mix_seed(cfg_.seed, static_cast<std::uint64_t>(global_step_)));
  check_divergence(r, epochs_done_);
  apply_update(lr, 1);
  return r;
}

void Trainer::check_divergence(const LossReport& r, int epoch) const {
  if (std::isfinite(r.l_total) && r.l_total <= cfg_.divergence_threshold) return;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "training diverged at epoch %d, step %lld: l_total=%g (l_rpn_obj=%g l_rpn_reg=%g l_cls=%g "
                "l_2d=%g l_3d=%g)",
                epoch, static_cast<long long>(global_step_), r.l_total, r.l_rpn_obj, r.l_rpn_reg, r.l_cls, r.l_2d,
                r.l_3d);
  throw DivergenceError(buf, epoch, global_step_);
}

Checkpoint Trainer::checkpoint(const std::string& config_text) const {
  Checkpoint c;
  c.config = config_text;
  c.tensors = model_tensors(model_);
  auto& opt = const_cast<nn::Optimizer&>(optimizer_);
  c.first_moment = opt.first_moment();
  c.second_moment = opt.second_moment();
  c.optimizer_steps = optimizer_.steps();
  c.epochs_done = epochs_done_;
  c.global_step = global_step_;
  c.best_loss = best_loss_;
  c.best_epoch = best_epoch_;
  c.loss_log = log_;
  return c;
}

void Trainer::restore(const Checkpoint& c) {
  load_model_tensors(model_, c.tensors);
  if (!c.first_moment.empty() && c.first_moment.size() != model_.parameters().size()) {
    throw InvalidArgument("checkpoint optimizer state does not match the model");
  }
  optimizer_.first_moment() = c.first_moment;
  optimizer_.second_moment() = c.second_moment;
  optimizer_.set_steps(c.optimizer_steps);
  epochs_done_ = c.epochs_done;
  global_step_ = c.global_step;
  best_loss_ = c.best_loss;
  best_epoch_ = c.best_epoch;
  log_ = c.loss_log;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

void Trainer::run(const TrainOptions& opt) {
  if (!opt.resume.empty()) restore(load_checkpoint(opt.resume));
  if (log_.empty()) log_ = std::string(kLossLogHeader) + "\n";
  const bool write = !opt.out_dir.empty();
  if (write) {
    std::filesystem::create_directories(opt.out_dir);
    if (epochs_done_ == 0) save_checkpoint(checkpoint(opt.config_text), opt.out_dir / "last.ckpt");
    write_text(opt.out_dir / "loss_log.csv", log_);
  }

  const auto& train = data_.manifest.train;
  const int batch = cfg_.batch_size;
  for (int epoch = epochs_done_; epoch < cfg_.epochs; ++epoch) {
    const double lr = learning_rate(epoch);
    std::vector<int> order = train;
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0x10000u + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> flips(order.size(), false);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < order.size(); ++i) flips[i] = cfg_.flip_augment && coin(rng);

    LossReport sum;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(batch)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(batch));
      for (std::size_t i = b0; i < b1; ++i) {
        const std::uint64_t seed = mix_seed(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch)), i);
        LossReport r;
        try {
          r = accumulate(data_.scenes.at(static_cast<std::size_t>(order[i])), flips[i], seed);
        } catch (const nn::NonFiniteError& e) {
          throw DivergenceError(std::string("training diverged: ") + e.what() + " at epoch " +
                                    std::to_string(epoch) + ", step " + std::to_string(global_step_),
                                epoch, global_step_);
        } catch (const BehindCameraError& e) {
          // Regressed joints only leave the view frustum once the weights blow up.
          throw DivergenceError(std::string("training diverged: ") + e.what() + " at epoch " +
                                    std::to_string(epoch) + ", step " + std::to_string(global_step_),
                                epoch, global_step_);
        }
        check_divergence(r, epoch);
        sum += r;
      }
      apply_update(lr, static_cast<int>(b1 - b0));
    }
    const LossReport mean = order.empty() ? LossReport{} : sum.scaled(1.0 / static_cast<double>(order.size()));
    char row[512];
    std::snprintf(row, sizeof row, "%d,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", epoch,
                  static_cast<long long>(global_step_), lr, mean.l_rpn_obj, mean.l_rpn_reg, mean.l_cls, mean.l_2d,
                  mean.l_3d, mean.l_total);
    log_ += row;
    epochs_done_ = epoch + 1;
    const bool best = best_epoch_ < 0 || mean.l_total < best_loss_;
    if (best) {
      best_loss_ = mean.l_total;
      best_epoch_ = epoch;
    }
    if (write) {
      const Checkpoint c = checkpoint(opt.config_text);
      if (best) save_checkpoint(c, opt.out_dir / "best.ckpt");
      save_checkpoint(c, opt.out_dir / "last.ckpt");
      write_text(opt.out_dir / "loss_log.csv", log_);
    }
    if (opt.log) {
      std::string line(row);
      line.pop_back();
      opt.log(line);
    }
  }
}

const std::vector<int>& split_indices(const Dataset& data, const std::string& split) {
  if (split == "train") return data.manifest.train;
  if (split == "eval") return data.manifest.eval;
  throw InvalidArgument("unknown split '" + split + "'");
}

namespace {

std::vector<GtPose> gt_poses(const Scene& s) {
  std::vector<GtPose> g;
  for (const auto& p : s.gt) g.push_back({p.pose2d, p.box});
  return g;
}

}  // namespace

EvalResult evaluate_model(const ToyNet& model, const Dataset& data, const std::vector<int>& scenes) {
  EvalResult r;
  const auto& cfg = model.config();
  for (int i : scenes) {
    const Scene& s = data.scenes.at(static_cast<std::size_t>(i));
    const SceneInput in = prepare_input(s, cfg, data.manifest.extents);
    const auto preds = model.predict(in);
    const auto gts = gt_poses(s);
    r.report.add_scene(preds, gts, s.camera, cfg.eval_match_iou, 0.5, data.manifest.joints);
    for (const auto& p : preds) r.records.push_back(pose_record(i, p.confidence, p.pose2d, p.pose3d));
  }
  return r;
}

EvalResult evaluate_oracle(const Dataset& data, const std::vector<int>& scenes, double match_iou) {
  EvalResult r;
  for (int i : scenes) {
    const Scene& s = data.scenes.at(static_cast<std::size_t>(i));
    std::vector<FinalPose> preds;
    for (const auto& p : s.gt) preds.push_back({p.pose2d, p.pose3d, 1.0});
    const auto gts = gt_poses(s);
    r.report.add_scene(preds, gts, s.camera, match_iou, 0.5, data.manifest.joints);
    for (const auto& p : preds) r.records.push_back(pose_record(i, p.confidence, p.pose2d, p.pose3d));
  }
  return r;
}

void write_predictions(const std::filesystem::path& path, const EvalResult& r) {
  std::string text = pose_record_header() + "\n";
  for (const auto& line : r.records) text += line + "\n";
  write_text(path, text);
}

}  // namespace hperl
