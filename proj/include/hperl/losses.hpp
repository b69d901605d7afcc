#pragma once

// IoU, RoI-to-ground-truth assignment and the training losses, each returning
// its value together with the analytic gradient w.r.t. its inputs.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hperl/anchors.hpp"
#include "hperl/bev.hpp"
#include "hperl/geometry.hpp"
#include "hperl/types.hpp"

namespace hperl {

double iou_2d(const Box2D& a, const Box2D& b);

// IoU of the boxes' BEV footprints (vertical axis dropped).
double iou_bev(const AnchorBox3D& a, const AnchorBox3D& b, const AreaExtents& extents,
               double resolution);

enum class IouMode { image, bev };

// A region of interest as seen by the second stage: its image box and, for
// LiDAR input, the 3D box it came from.
struct RoiBox {
  Box2D image;
  std::optional<Box3D> box3d;
};

struct GroundTruth {
  Box2D image;                 // image box of the pedestrian
  std::optional<Box3D> box3d;  // 3D box (required for IouMode::bev)
  Skeleton2D pose;             // 2D pose label
};

struct AssignOptions {
  IouMode mode = IouMode::image;
  AreaExtents extents;      // used by IouMode::bev
  double resolution = 0.2;  // used by IouMode::bev
  double fg_iou = 0.3;
};

struct AssignmentResult {
  std::vector<int> matched_gt;  // -1 for background
  std::vector<int> k_target;    // 0 for background, anchor pose id otherwise
  std::vector<bool> foreground;

  int num_foreground() const;
};

// Anchor pose id whose fit into `box` is closest to `pose`, by summed
// Euclidean joint distance over the visible joints (ties to the lowest id).
int closest_anchor_pose(const AnchorPoseSet& poses, const Box2D& box, const Skeleton2D& pose);

// A RoI is background when its best IoU is below fg_iou; otherwise it takes
// the ground truth with the highest IoU (lowest index on ties) and that
// ground truth's closest anchor pose as its class target.
AssignmentResult assign_targets(std::span<const RoiBox> rois, std::span<const GroundTruth> gts,
                                const AnchorPoseSet& poses, const AssignOptions& options);

double smooth_l1(double x, double beta = 1.0);
double smooth_l1_grad(double x, double beta = 1.0);

using PoseGrad2D = std::array<Eigen::Vector2d, kNumJoints>;
using PoseGrad3D = std::array<Eigen::Vector3d, kNumJoints>;

struct PoseLoss2D {
  double value = 0;
  std::vector<PoseGrad2D> grad;  // one per RoI, zero for background
};

struct PoseLoss3D {
  double value = 0;
  std::vector<PoseGrad3D> grad;
};

// 1/N_fg * sum over foreground RoIs of the mean smooth L1 over the visible
// target coordinates. Zero (with zero gradient) when there is no foreground.
PoseLoss2D loss_2d(std::span<const Skeleton2D> pred, std::span<const Skeleton2D> targets,
                   const std::vector<bool>& foreground, double beta = 1.0);

// Same reduction on the projections of the predicted 3D joints. Throws
// BehindCameraError if a foreground joint has z <= 0.
PoseLoss3D loss_3d(std::span<const Skeleton3D> pred, std::span<const Skeleton2D> targets,
                   const CameraIntrinsics& cam, const std::vector<bool>& foreground,
                   double beta = 1.0);

struct ClassLoss {
  double value = 0;
  std::vector<double> grad;  // same layout as the logits
};

// Mean softmax cross-entropy; logits are row-major [N, num_classes].
ClassLoss loss_cls(std::span<const double> logits, int num_classes, std::span<const int> targets);

// Anchor labels for the proposal stage: 1 positive, 0 negative, -1 ignored.
struct RpnTargets {
  int dim = 0;                  // regression width (4 image, 6 bev)
  std::vector<int> labels;
  std::vector<int> matched_gt;  // -1 if none
  std::vector<double> deltas;   // [N, dim]; meaningful for positives
};

// IoU matrix is row-major [num_anchors, num_gt]. Besides the thresholds, the
// best anchor of each ground truth is positive (when its IoU is > 0).
std::vector<int> label_anchors(std::span<const double> iou, std::size_t num_anchors,
                               std::size_t num_gt, double pos_iou, double neg_iou,
                               std::vector<int>* matched_gt = nullptr);

// Keeps at most `batch` labels, at most half of them positive, chosen
// uniformly at random; everything else becomes -1.
std::vector<int> sample_anchor_labels(std::span<const int> labels, int batch, std::uint64_t seed);

struct RpnLoss {
  double objectness = 0;
  double regression = 0;
  std::vector<double> grad_objectness;
  std::vector<double> grad_deltas;
};

// Binary cross-entropy on the logits of labelled anchors (mean over them) plus
// smooth L1 summed over the regression coordinates of positives and averaged
// over the positives.
RpnLoss loss_rpn(std::span<const double> objectness, std::span<const double> deltas,
                 const RpnTargets& targets, double beta = 1.0);

struct LossWeights {
  double rpn_obj = 1, rpn_reg = 1, cls = 1, pose_2d = 1, pose_3d = 1;
};

struct LossReport {
  double l_total = 0;
  double l_rpn_obj = 0, l_rpn_reg = 0, l_cls = 0, l_2d = 0, l_3d = 0;

  static LossReport combine(double rpn_obj, double rpn_reg, double cls, double l2d, double l3d,
                            const LossWeights& w = {});
  LossReport& operator+=(const LossReport& o);
  LossReport scaled(double s) const;
};

}  // namespace hperl
