#pragma once

// Pose-proposal integration and the evaluation metrics.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hperl/geometry.hpp"
#include "hperl/types.hpp"

namespace hperl {

// One scored, decoded pose hypothesis (a detection reduced to what the
// integration step needs).
struct PoseCandidate {
  Box2D roi;
  double score = 0;
  Skeleton2D pose2d;
  Skeleton3D pose3d;
};

struct FinalPose {
  Skeleton2D pose2d;
  Skeleton3D pose3d;
  double confidence = 0;
};

struct IntegrationOptions {
  double iou_threshold = 0.5;
  double score_floor = 0.1;
};

// Greedy grouping by descending score: each still-unassigned candidate starts
// a group and absorbs every unassigned candidate whose RoI IoU with it is at
// least iou_threshold. A group's pose is the score-weighted mean of its
// members and its confidence min(1, sum of scores); groups whose score mass
// is below score_floor are dropped. Visibility of a grouped joint is the OR
// over members.
std::vector<FinalPose> integrate_proposals(std::span<const PoseCandidate> candidates,
                                           const IntegrationOptions& options = {});

struct GtPose {
  Skeleton2D pose2d;
  Box3D box;
};

// Greedy matching by descending confidence on the IoU of the pose bounding
// boxes. match[i] is the gt index of prediction i, or -1.
std::vector<int> match_predictions(std::span<const FinalPose> preds, std::span<const GtPose> gts,
                                   double iou_threshold = 0.3);

// Neck is the midpoint of the shoulders.
double head_segment_length(const Skeleton2D& s, const JointLayout& layout = JointLayout::standard());

// Axis-aligned box around all joints of a 3D pose.
Eigen::Vector3d pose_box_center(const Skeleton3D& s);

double cde(const Skeleton3D& pred, const Box3D& gt);
double xye(const Skeleton3D& pred, const Box3D& gt);

// Running sums over scenes. Metrics are means over matched pairs (visible
// joints for the 2D metrics); unmatched ground truth counts against PCKh and
// recall only.
struct MetricReport {
  double mpjpe_2d_sum = 0;
  long long mpjpe_2d_joints = 0;
  double mpjpe_proj_sum = 0;  // same, for the projected 3D poses
  long long pckh_correct = 0, pckh_total = 0;
  long long pckh_proj_correct = 0;
  long long pckh_skipped = 0;  // gt with zero head segment
  double cde_sum = 0, xye_sum = 0;
  long long matched = 0, gt_count = 0, pred_count = 0;

  void add_scene(std::span<const FinalPose> preds, std::span<const GtPose> gts,
                 const CameraIntrinsics& cam, double match_iou = 0.3, double alpha = 0.5,
                 const JointLayout& layout = JointLayout::standard());

  double mpjpe_2d() const;
  double mpjpe_proj() const;
  double pckh() const;
  double pckh_proj() const;
  double cde() const;
  double xye() const;
  double recall() const;
  long long false_positives() const { return pred_count - matched; }
};

// Metric-level helpers over explicit matchings (also used by add_scene).
double mpjpe_2d(std::span<const FinalPose> preds, std::span<const GtPose> gts,
                std::span<const int> match);
double pckh(std::span<const FinalPose> preds, std::span<const GtPose> gts, std::span<const int> match,
            double alpha = 0.5, const JointLayout& layout = JointLayout::standard());

// Comma-separated pose records: scene_id, confidence, u/v of every joint,
// x/y/z of every joint. Six decimals.
std::string pose_record_header();
std::string pose_record(std::int64_t scene_id, double confidence, const Skeleton2D& p2,
                        const Skeleton3D& p3);

// Aggregate report: one "metric,value,count" row per metric.
void write_report(std::ostream& out, const MetricReport& r);
void write_report(const std::filesystem::path& path, const MetricReport& r);

// Table-style one-line summary (MPJPE, PCKh, CDE, XYE).
std::string report_row(const std::string& label, const MetricReport& r);

}  // namespace hperl
