#pragma once

// Synthetic street scenes with exact labels: posed pedestrians built from the
// anchor poses, a rendered RGB image, a simulated LiDAR sweep and 3D boxes.

#include <cstdint>
#include <vector>

#include "hperl/anchors.hpp"
#include "hperl/geometry.hpp"
#include "hperl/types.hpp"

namespace hperl {

struct Pedestrian {
  Skeleton3D pose3d;
  Skeleton2D pose2d;  // project_skeleton(camera, pose3d)
  Box3D box;          // joint box padded by (0.15, 0.1, 0.15) m per side
  int source_pose = 0;  // anchor pose the skeleton was sampled from
  double height = 0;    // metric joint span
  int lidar_points = 0;  // returns whose closest hit is this pedestrian
  bool occluded = false;  // an occluder was placed in front of it
  bool operator==(const Pedestrian& o) const;
};

struct Scene {
  std::uint64_t seed = 0;
  CameraIntrinsics camera;
  std::vector<std::uint8_t> image;  // height x width x 3, row-major RGB
  PointCloud cloud;
  std::vector<Pedestrian> gt;
  bool operator==(const Scene& o) const;
};

CameraIntrinsics default_camera();

struct SceneParams {
  CameraIntrinsics camera = default_camera();
  double camera_height = 1.7;  // ground plane at y = camera_height
  double depth_min = 5.0, depth_max = 50.0;
  double occlusion_rate = 0.0;
  int clutter = 0;
  int min_points = 10;
  double joint_noise = 0.03;   // uniform, fraction of body height
  double max_yaw = 0.5;        // radians
  double height_min = 1.5, height_max = 2.0;
  double azimuth_step_deg = 0.2;
  double elevation_min_deg = -20.0, elevation_max_deg = 5.0, elevation_step_deg = 0.25;
  double max_range = 80.0;
  double image_noise = 4.0;

  void validate() const;
};

// Deterministic in (params, seed, n_pedestrians). Placement is retried until
// every pedestrian without an occluder has at least params.min_points returns.
Scene generate_scene(const SceneParams& params, std::uint64_t seed, int n_pedestrians,
                     const AnchorPoseSet& poses);

// Mirror image, x-flipped cloud and flipped labels. With cx = width / 2 the
// result satisfies the projection invariant up to rounding.
Scene flip_scene(const Scene& scene, const JointLayout& layout = JointLayout::standard(),
                 bool swap_left_right = true);

}  // namespace hperl
