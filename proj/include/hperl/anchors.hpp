#pragma once

// Anchor boxes for the region proposal stage and the K canonical anchor poses.
//
// Anchor pose ids run 1..K and double as classification labels; 0 is the
// background class.

#include <array>
#include <filesystem>
#include <istream>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hperl/bev.hpp"
#include "hperl/geometry.hpp"
#include "hperl/types.hpp"

namespace hperl {

inline const Eigen::Vector3d kAnchorTemplateSize{0.8, 1.8, 0.8};
inline constexpr double kAnchorStride = 0.2;

class AnchorPoseSet {
 public:
  // Canonical 3D pose: unit height, joint box centered on the origin, y down.
  const Skeleton3D& pose3d(int id) const { return pose3d_.at(index(id)); }
  // Canonical 2D pose in the unit box: u right, v down, feet at v = 1.
  const Skeleton2D& unit2d(int id) const { return unit2d_.at(index(id)); }
  int size() const { return kNumAnchorPoses; }

  // Parses comma-separated records (pose_id, joint_id, x, y, z, u, v). Blank
  // lines, '#' comments and a header line are skipped. Throws InvalidArgument
  // unless exactly K poses of J joints are present.
  static AnchorPoseSet parse(std::istream& in);
  static AnchorPoseSet load(const std::filesystem::path& path);
  // data/anchor_poses.csv of the source tree, or $HPERL_ANCHOR_POSES.
  static std::filesystem::path default_path();
  static AnchorPoseSet load_default() { return load(default_path()); }

 private:
  static std::size_t index(int id);
  std::array<Skeleton3D, kNumAnchorPoses> pose3d_;
  std::array<Skeleton2D, kNumAnchorPoses> unit2d_;
};

// Lattice of anchors over the x/z extents with the given stride; each anchor
// center's y lies on `plane`. Count is (floor(dx/stride)+1) * (floor(dz/stride)+1),
// ordered row-major with z outermost.
std::vector<AnchorBox3D> generate_anchor_grid(const Plane& plane, const AreaExtents& extents,
                                              double stride,
                                              const Eigen::Vector3d& template_size = kAnchorTemplateSize);

std::size_t anchor_grid_count(const AreaExtents& extents, double stride);

// Indices of anchors whose BEV footprint touches at least one occupied cell.
std::vector<std::size_t> non_empty_anchors(std::span<const AnchorBox3D> anchors,
                                           const BevGrid& bev);

// Pedestrian-shaped 2D anchors centered on a pixel lattice.
std::vector<Box2D> generate_image_anchors(int width, int height, double stride,
                                          std::span<const double> heights, double aspect);

// Canonical 2D pose `id` scaled by the RoI size and anchored at its bottom-left
// corner, so the feet land on the bottom edge.
Skeleton2D fit_anchor_pose_to_roi(const AnchorPoseSet& poses, int id, const Box2D& roi);

// Canonical 3D pose `id` placed in `box`: lateral and vertical layout follow the
// 2D unit pose scaled by the box width and height (feet on the bottom face),
// depth offsets come from the 3D pose scaled by the box height. Projecting the
// result agrees with fit_anchor_pose_to_roi on image_roi(box) up to the depth
// spread of the pose.
Skeleton3D fit_anchor_pose_3d(const AnchorPoseSet& poses, int id, const AnchorBox3D& box);

// Area extents from ground-truth box centers, grown by one stride on every side.
AreaExtents extents_from_locations(std::span<const Box3D> boxes, double stride, double y_min,
                                   double y_max);

// Box regression parametrization (Faster R-CNN for 2D, AVOD-style for 3D).
std::array<double, 4> encode_box_2d(const Box2D& anchor, const Box2D& target);
Box2D decode_box_2d(const Box2D& anchor, std::span<const double> deltas);
std::array<double, 6> encode_box_3d(const Box3D& anchor, const Box3D& target);
Box3D decode_box_3d(const Box3D& anchor, std::span<const double> deltas);

}  // namespace hperl
