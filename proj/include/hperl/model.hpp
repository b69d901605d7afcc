#pragma once

// The two-stage pose network at desk scale.
//
// Stage 1 scores anchors (3D boxes on the ground plane for RGB+LiDAR input,
// image boxes for RGB input) from small per-view crops reduced to one channel,
// and regresses box offsets. The best boxes after NMS become RoIs. Stage 2
// crops both views per RoI, fuses them and predicts K+1 class logits and
// 5 x J x (K+1) pose deltas relative to the anchor poses fitted into the RoI.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hperl/anchors.hpp"
#include "hperl/bev.hpp"
#include "hperl/eval.hpp"
#include "hperl/geometry.hpp"
#include "hperl/losses.hpp"
#include "hperl/nn/optim.hpp"
#include "hperl/nn/tensor.hpp"
#include "hperl/synth.hpp"

namespace hperl {

enum class InputMode { rgb, fusion };
enum class FusionOp { concat, mean };
enum class RoiOp { align, pool };

struct ModelConfig {
  InputMode mode = InputMode::fusion;
  FusionOp fusion = FusionOp::concat;
  RoiOp roi_op = RoiOp::align;
  int channels = 32;
  int num_poses = kNumAnchorPoses;
  int joints = kNumJoints;
  int gn_groups = 4;
  int stage1_channels = 1;  // per-view reduction before the stage-1 MLP
  int stage1_crop = 3, stage2_crop = 5;
  int stage1_hidden = 32, stage2_hidden = 128;
  double bev_resolution = 0.2;

  int rpn_batch = 64;
  double rpn_pos_iou = 0.5, rpn_neg_iou = 0.3;
  int pre_nms_top = 256;
  double nms_iou = 0.7;
  int top_n = 32;
  double image_anchor_stride = 4.0;
  std::vector<double> image_anchor_heights{6, 9, 13, 19, 28, 42, 62};
  double image_anchor_aspect = 0.45;

  double fg_iou = 0.3;
  double smooth_l1_beta = 1.0;
  LossWeights weights;

  double det_score = 0.5;
  IntegrationOptions integration;
  double eval_match_iou = 0.3;

  int ransac_iterations = 100;
  double ransac_threshold = 0.05;

  nn::Optimizer::Kind optimizer = nn::Optimizer::Kind::adam;
  double learning_rate = 5e-5;
  double lr_decay = 1.0;
  int lr_decay_every = 0;  // epochs; 0 disables decay
  int epochs = 50;
  int batch_size = 1;
  bool flip_augment = true;
  bool swap_lr_on_flip = true;
  std::uint64_t seed = 1;
  double divergence_threshold = 1e6;

  // Throws InvalidArgument on inconsistent values.
  void validate() const;
  int box_dim() const { return mode == InputMode::fusion ? 6 : 4; }
  int num_classes() const { return num_poses + 1; }
  int delta_width() const { return 5 * joints * num_classes(); }
};

// Everything the network consumes for one scene.
struct SceneInput {
  CameraIntrinsics camera;
  nn::Tensor image;  // [3, H, W]
  nn::Tensor bev;    // [6, rows, cols]; fusion only
  AreaExtents extents;  // BEV extents with this scene's vertical slab
  Plane ground;         // fitted ground
  std::vector<RoiBox> anchors;
};

// Ground truth restricted to what training may use: 2D poses and 3D boxes.
struct SceneTargets {
  std::vector<GroundTruth> gts;
};

// x extents made symmetric so flipped scenes stay covered.
AreaExtents symmetric_extents(const AreaExtents& e);

// Image normalization, ground fit, BEV encoding and anchor generation. The
// dataset extents provide x/z; the vertical slab hangs off the fitted ground.
SceneInput prepare_input(const Scene& scene, const ModelConfig& cfg, const AreaExtents& extents);
SceneTargets prepare_targets(const Scene& scene, const SceneInput& input);

struct Features {
  nn::Tensor rgb;
  nn::Tensor bev;
};

struct HeadOutput {
  nn::Tensor logits;  // [N, K+1]
  nn::Tensor deltas;  // [N, 5 J (K+1)]
};

struct Detection {
  RoiBox roi;
  std::vector<double> logits;
  std::vector<double> deltas;
  std::vector<Skeleton2D> poses2d;  // index k-1 for anchor class k
  std::vector<Skeleton3D> poses3d;
  double score = 0;  // 1 - p(background)
  int best_class = 0;
};

// Decisions for one training step that do not depend on gradients: sampled
// anchors with their targets, the RoI set and its assignment.
struct StepPlan {
  std::vector<std::size_t> rpn_anchors;
  RpnTargets rpn;
  std::vector<RoiBox> rois;
  int num_proposals = 0;
  AssignmentResult assignment;
};

struct StepLoss {
  nn::Tensor total;
  LossReport report;
};

class ToyNet {
 public:
  ToyNet(const ModelConfig& cfg, const AnchorPoseSet& poses);

  const ModelConfig& config() const { return cfg_; }
  const AnchorPoseSet& anchor_poses() const { return poses_; }
  std::vector<nn::NamedTensor>& parameters() { return params_; }
  const std::vector<nn::NamedTensor>& parameters() const { return params_; }
  nn::Tensor& parameter(const std::string& name);

  // Metric size of RGB-mode 3D boxes (set from training boxes).
  const Eigen::Vector3d& box_prior() const { return box_prior_; }
  void set_box_prior(const Eigen::Vector3d& size) { box_prior_ = size; }

  Features extract(const SceneInput& in) const;
  // Objectness logit and box deltas for the given anchors: [N, 1 + box_dim].
  nn::Tensor stage1(const Features& f, const SceneInput& in, std::span<const std::size_t> anchors) const;
  // Fused per-RoI crops fed to the stage-2 MLP: [N, C', crop, crop].
  nn::Tensor stage2_input(const Features& f, const SceneInput& in, std::span<const RoiBox> rois) const;
  HeadOutput stage2(const Features& f, const SceneInput& in, std::span<const RoiBox> rois) const;

  // NMS over decoded anchors given stage-1 outputs for every anchor.
  std::vector<RoiBox> propose(const std::vector<double>& stage1_all, const SceneInput& in) const;

  // Fitted anchor pose plus the deltas of class k (1..K).
  Skeleton2D decode_pose_2d(std::span<const double> deltas, int k, const RoiBox& roi) const;
  Skeleton3D decode_pose_3d(std::span<const double> deltas, int k, const RoiBox& roi) const;
  // Inverse of decode_pose_2d/3d for class k, writing into `deltas`.
  void encode_pose_2d(const Skeleton2D& target, int k, const RoiBox& roi, std::span<double> deltas) const;
  void encode_pose_3d(const Skeleton3D& target, int k, const RoiBox& roi, std::span<double> deltas) const;
  static std::size_t delta_index(int k, int j, int c) {
    return (static_cast<std::size_t>(k) * kNumJoints + j) * 5 + c;
  }

  StepPlan plan_step(const Features& f, const SceneInput& in, const SceneTargets& t,
                     std::uint64_t sample_seed) const;
  StepLoss step_loss(const Features& f, const SceneInput& in, const SceneTargets& t,
                     const StepPlan& plan) const;

  // Full inference: every surviving proposal, decoded (no score filter).
  std::vector<Detection> detect(const SceneInput& in) const;
  // Score filter + pose-proposal integration.
  std::vector<FinalPose> predict(const SceneInput& in) const;

 private:
  nn::Tensor backbone(const nn::Tensor& x, const std::string& prefix) const;
  nn::Tensor crop(const nn::Tensor& features, std::span<const Box2D> boxes, double scale, int size,
                  const std::string& name) const;
  std::vector<Box2D> image_boxes(const SceneInput& in, std::span<const RoiBox> rois) const;
  std::vector<Box2D> bev_boxes(const SceneInput& in, std::span<const RoiBox> rois) const;
  RoiBox roi_from_box3d(const CameraIntrinsics& cam, const Box3D& b) const;
  RoiBox roi_from_image(const CameraIntrinsics& cam, const Box2D& b) const;
  const nn::Tensor& p(const std::string& name) const;

  ModelConfig cfg_;
  AnchorPoseSet poses_;
  std::vector<nn::NamedTensor> params_;
  Eigen::Vector3d box_prior_ = kAnchorTemplateSize;
};

inline constexpr int kFeatureStride = 4;

}  // namespace hperl
