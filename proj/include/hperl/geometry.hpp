#pragma once

// Camera model, ground plane and left/right flip transforms.
//
// Coordinates are camera-frame throughout: x right, y down, z forward, origin
// at the camera center. "Up" is therefore -y.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hperl/types.hpp"

namespace hperl {

struct LidarPoint {
  float x = 0, y = 0, z = 0;
  float intensity = 0;
  bool operator==(const LidarPoint&) const = default;
};

using PointCloud = std::vector<LidarPoint>;

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  // Throws InvalidArgument unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

// Point-normal plane n . (r - r0) = 0.
struct Plane {
  Eigen::Vector3d n{0.0, -1.0, 0.0};
  Eigen::Vector3d r0 = Eigen::Vector3d::Zero();

  // y on the plane above/below (x, z); requires n.y() != 0.
  double y_at(double x, double z) const;
  double signed_distance(const Eigen::Vector3d& r) const { return n.dot(r - r0); }
  // Same plane moved by dy along the y axis.
  Plane shifted_y(double dy) const;
};

Eigen::Vector2d project_point(const CameraIntrinsics& cam, const Eigen::Vector3d& p);

// d(u, v) / d(x, y, z) at p.
Eigen::Matrix<double, 2, 3> project_jacobian(const CameraIntrinsics& cam,
                                             const Eigen::Vector3d& p);

// Throws BehindCameraError naming the first joint with z <= 0.
Skeleton2D project_skeleton(const CameraIntrinsics& cam, const Skeleton3D& s);

// Image box spanned by the box's center cross-section (the x/y face at the
// center depth). This is the RoI a 3D box occupies in the image.
Box2D image_roi(const CameraIntrinsics& cam, const Box3D& box);

// Inverse of image_roi for a box of known metric height and depth extent.
Box3D box_from_image_roi(const CameraIntrinsics& cam, const Box2D& roi, double height,
                         double length);

inline constexpr double kGroundOffset = 1.8;

// RANSAC over a single degree of freedom: the normal is fixed to (0, -1, 0) and
// only the plane height is searched. Candidate heights are drawn from the y of
// randomly sampled points; the best candidate (most inliers within
// inlier_threshold, earliest on ties) is refined to the median height of its
// inliers and shifted by `offset` toward the ground (+y). Deterministic for a
// given seed.
Plane fit_ground_plane(const PointCloud& cloud, std::uint64_t seed, int iterations,
                       double inlier_threshold, double offset = kGroundOffset);

int count_plane_inliers(const PointCloud& cloud, double height, double inlier_threshold);

// f(x) = w - x for every joint. With swap_left_right the L/R joint labels are
// exchanged as well so the result stays anatomically consistent.
Skeleton2D flip_pose_2d(const Skeleton2D& s, double image_width,
                        const JointLayout& layout = JointLayout::standard(),
                        bool swap_left_right = true);

Skeleton3D flip_pose_3d(const Skeleton3D& s,
                        const JointLayout& layout = JointLayout::standard(),
                        bool swap_left_right = true);

PointCloud flip_cloud(const PointCloud& cloud);

Box2D flip_box_2d(const Box2D& b, double image_width);
Box3D flip_box_3d(const Box3D& b);

}  // namespace hperl
