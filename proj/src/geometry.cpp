#include "hperl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace hperl {

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw InvalidArgument("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("camera image size must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height)) {
    throw InvalidArgument("camera principal point outside the image");
  }
}

double Plane::y_at(double x, double z) const {
  if (n.y() == 0.0) throw InvalidArgument("plane is vertical; y is not a function of x, z");
  return r0.y() - (n.x() * (x - r0.x()) + n.z() * (z - r0.z())) / n.y();
}

Plane Plane::shifted_y(double dy) const {
  Plane p = *this;
  p.r0.y() += dy;
  return p;
}

Eigen::Vector2d project_point(const CameraIntrinsics& cam, const Eigen::Vector3d& p) {
  if (!(p.z() > 0)) throw BehindCameraError("point behind camera (z=" + std::to_string(p.z()) + ")");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Eigen::Matrix<double, 2, 3> project_jacobian(const CameraIntrinsics& cam,
                                             const Eigen::Vector3d& p) {
  if (!(p.z() > 0)) throw BehindCameraError("point behind camera (z=" + std::to_string(p.z()) + ")");
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
       0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
  return j;
}

Skeleton2D project_skeleton(const CameraIntrinsics& cam, const Skeleton3D& s) {
  Skeleton2D out;
  for (int j = 0; j < kNumJoints; ++j) {
    if (!(s.joints[j].z() > 0)) {
      throw BehindCameraError("joint " + std::to_string(j) + " is behind the camera", j);
    }
    out.joints[j] = project_point(cam, s.joints[j]);
    out.visible[j] = s.visible[j];
  }
  return out;
}

Box2D image_roi(const CameraIntrinsics& cam, const Box3D& box) {
  const Eigen::Vector3d half = 0.5 * box.size;
  Eigen::Vector2d a = project_point(cam, {box.center.x() - half.x(), box.center.y() - half.y(),
                                          box.center.z()});
  Eigen::Vector2d b = project_point(cam, {box.center.x() + half.x(), box.center.y() + half.y(),
                                          box.center.z()});
  return {a.x(), a.y(), b.x(), b.y()};
}

Box3D box_from_image_roi(const CameraIntrinsics& cam, const Box2D& roi, double height,
                         double length) {
  if (!(roi.height() > 0) || !(roi.width() > 0)) throw InvalidArgument("degenerate image roi");
  const double z = cam.fy * height / roi.height();
  Box3D b;
  b.center = {(roi.cx() - cam.cx) * z / cam.fx, (roi.cy() - cam.cy) * z / cam.fy, z};
  b.size = {roi.width() * z / cam.fx, height, length};
  return b;
}

int count_plane_inliers(const PointCloud& cloud, double height, double inlier_threshold) {
  int n = 0;
  for (const auto& p : cloud) {
    if (std::abs(static_cast<double>(p.y) - height) <= inlier_threshold) ++n;
  }
  return n;
}

Plane fit_ground_plane(const PointCloud& cloud, std::uint64_t seed, int iterations,
                       double inlier_threshold, double offset) {
  if (cloud.size() < 3) throw InvalidArgument("ground plane fit needs at least 3 points");
  if (iterations < 1) throw InvalidArgument("ground plane fit needs at least one iteration");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  double best_height = 0.0;
  int best_count = -1;
  for (int it = 0; it < iterations; ++it) {
    const double h = cloud[pick(rng)].y;
    const int c = count_plane_inliers(cloud, h, inlier_threshold);
    if (c > best_count) {
      best_count = c;
      best_height = h;
    }
  }
  // Refine to the median height of the consensus set (lower median).
  std::vector<double> ys;
  for (const auto& p : cloud) {
    if (std::abs(static_cast<double>(p.y) - best_height) <= inlier_threshold) ys.push_back(p.y);
  }
  const auto mid = ys.begin() + static_cast<std::ptrdiff_t>((ys.size() - 1) / 2);
  std::nth_element(ys.begin(), mid, ys.end());
  Plane plane;
  plane.n = {0.0, -1.0, 0.0};
  plane.r0 = {0.0, *mid + offset, 0.0};
  return plane;
}

Skeleton2D flip_pose_2d(const Skeleton2D& s, double image_width, const JointLayout& layout,
                        bool swap_left_right) {
  Skeleton2D out;
  for (int j = 0; j < kNumJoints; ++j) {
    const int dst = swap_left_right ? layout.mirror[j] : j;
    out.joints[dst] = {image_width - s.joints[j].x(), s.joints[j].y()};
    out.visible[dst] = s.visible[j];
  }
  return out;
}

Skeleton3D flip_pose_3d(const Skeleton3D& s, const JointLayout& layout, bool swap_left_right) {
  Skeleton3D out;
  for (int j = 0; j < kNumJoints; ++j) {
    const int dst = swap_left_right ? layout.mirror[j] : j;
    out.joints[dst] = {-s.joints[j].x(), s.joints[j].y(), s.joints[j].z()};
    out.visible[dst] = s.visible[j];
  }
  return out;
}

PointCloud flip_cloud(const PointCloud& cloud) {
  PointCloud out = cloud;
  for (auto& p : out) p.x = -p.x;
  return out;
}

Box2D flip_box_2d(const Box2D& b, double image_width) {
  return {image_width - b.x1, b.y0, image_width - b.x0, b.y1};
}

Box3D flip_box_3d(const Box3D& b) {
  Box3D out = b;
  out.center.x() = -b.center.x();
  return out;
}

}  // namespace hperl
