#include <doctest.h>

#include <cstring>

#include "hperl/geometry.hpp"
#include "test_util.hpp"

using namespace hperl;
using testutil::Rng;

namespace {

CameraIntrinsics cam100() {
  CameraIntrinsics c;
  c.fx = c.fy = 100;
  c.cx = c.cy = 50;
  c.width = c.height = 100;
  return c;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("project_point evaluates the pinhole model") {
  const auto cam = cam100();
  const auto a = project_point(cam, {0, 0, 5});
  CHECK(a.x() == 50.0);
  CHECK(a.y() == 50.0);
  const auto b = project_point(cam, {1, 2, 10});
  CHECK(b.x() == doctest::Approx(60.0).epsilon(1e-15));
  CHECK(b.y() == doctest::Approx(70.0).epsilon(1e-15));
}

TEST_CASE("project_point rejects points at or behind the camera") {
  const auto cam = cam100();
  CHECK_THROWS_AS(project_point(cam, {0, 0, 0}), BehindCameraError);
  CHECK_THROWS_AS(project_point(cam, {1, 1, -2}), BehindCameraError);
}

TEST_CASE("projection Jacobian on the optical axis") {
  const auto J = project_jacobian(cam100(), {0, 0, 5});
  CHECK(J(0, 0) == doctest::Approx(20));
  CHECK(J(1, 1) == doctest::Approx(20));
  CHECK(J(0, 1) == 0.0);
  CHECK(J(1, 0) == 0.0);
  CHECK(J(0, 2) == doctest::Approx(0).epsilon(1e-15));
  CHECK(J(1, 2) == doctest::Approx(0).epsilon(1e-15));
}

TEST_CASE("projection Jacobian matches central differences on 100 random points") {
  Rng r(11);
  const auto cam = testutil::test_camera();
  const double h = 1e-4;
  for (int n = 0; n < 100; ++n) {
    const Eigen::Vector3d p{r.uniform(-20, 20), r.uniform(-5, 5), r.uniform(1, 50)};
    const auto J = project_jacobian(cam, p);
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector3d dp = Eigen::Vector3d::Zero();
      dp[c] = h;
      const Eigen::Vector2d num = (project_point(cam, p + dp) - project_point(cam, p - dp)) / (2 * h);
      for (int row = 0; row < 2; ++row) CHECK(testutil::rel_err(J(row, c), num[row], 1e-8) < 1e-4);
    }
  }
}

TEST_CASE("project_skeleton equals per-joint projection and copies visibility") {
  Rng r(3);
  const auto cam = testutil::test_camera();
  for (int n = 0; n < 50; ++n) {
    const auto s = testutil::random_skeleton_3d(r);
    const auto p = project_skeleton(cam, s);
    for (int j = 0; j < kNumJoints; ++j) {
      const double u = cam.fx * s.joints[j].x() / s.joints[j].z() + cam.cx;
      const double v = cam.fy * s.joints[j].y() / s.joints[j].z() + cam.cy;
      CHECK(p.joints[j].x() == doctest::Approx(u).epsilon(1e-14));
      CHECK(p.joints[j].y() == doctest::Approx(v).epsilon(1e-14));
      CHECK(p.joints[j] == project_point(cam, s.joints[j]));
      CHECK(p.visible[j] == s.visible[j]);
    }
  }
  Skeleton3D s;
  for (auto& j : s.joints) j = {0, 0, 5};
  const auto c = project_skeleton(cam100(), s);
  for (const auto& j : c.joints) CHECK(j == Eigen::Vector2d(50, 50));
}

TEST_CASE("project_skeleton names the joint behind the camera") {
  Rng r(5);
  auto s = testutil::random_skeleton_3d(r);
  s.joints[7].z() = -1;
  try {
    project_skeleton(testutil::test_camera(), s);
    FAIL("expected BehindCameraError");
  } catch (const BehindCameraError& e) {
    CHECK(e.joint() == 7);
  }
}

TEST_CASE("flip of the projection equals projection of the flip for a centered camera") {
  Rng r(8);
  const auto cam = testutil::test_camera();
  REQUIRE(cam.cx * 2 == cam.width);
  for (int n = 0; n < 50; ++n) {
    const auto s = testutil::random_skeleton_3d(r);
    for (bool swap : {true, false}) {
      const auto a = flip_pose_2d(project_skeleton(cam, s), cam.width, JointLayout::standard(), swap);
      const auto b = project_skeleton(cam, flip_pose_3d(s, JointLayout::standard(), swap));
      for (int j = 0; j < kNumJoints; ++j) {
        CHECK(a.joints[j].x() == doctest::Approx(b.joints[j].x()).epsilon(1e-12));
        CHECK(a.joints[j].y() == b.joints[j].y());
        CHECK(a.visible[j] == b.visible[j]);
      }
    }
  }
}

TEST_CASE("image_roi and box_from_image_roi are inverse for the box's own size") {
  Rng r(21);
  const auto cam = testutil::test_camera();
  for (int n = 0; n < 50; ++n) {
    const auto b = testutil::random_box3d(r);
    const auto roi = image_roi(cam, b);
    const auto back = box_from_image_roi(cam, roi, b.h(), b.l());
    for (int c = 0; c < 3; ++c) {
      CHECK(back.center[c] == doctest::Approx(b.center[c]).epsilon(1e-9));
      CHECK(back.size[c] == doctest::Approx(b.size[c]).epsilon(1e-9));
    }
  }
}

TEST_CASE("fit_ground_plane on exact consensus") {
  PointCloud cloud;
  Rng r(1);
  for (int i = 0; i < 200; ++i) cloud.push_back({float(r.uniform(-10, 10)), 1.0f, float(r.uniform(2, 40)), 0.5f});
  const auto p = fit_ground_plane(cloud, 42, 20, 0.05, 0.0);
  CHECK(p.y_at(3.0, 7.0) == 1.0);
  CHECK(p.n == Eigen::Vector3d(0, -1, 0));
  CHECK(p.signed_distance(p.r0) == 0.0);
  CHECK(count_plane_inliers(cloud, p.y_at(0, 0), 0.05) >= count_plane_inliers(cloud, 1.0, 0.05));

  PointCloud flat;
  for (int i = 0; i < 50; ++i) flat.push_back({float(i), 0.0f, 10.0f, 0.0f});
  CHECK(fit_ground_plane(flat, 1, 10, 0.05).y_at(0, 0) == doctest::Approx(1.8).epsilon(1e-15));
  CHECK(fit_ground_plane(flat, 1, 10, 0.05, kGroundOffset).y_at(5, 5) == doctest::Approx(1.8));
}

TEST_CASE("fit_ground_plane recovers the height under 30% outliers") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng r(100 + seed);
    PointCloud cloud;
    for (int i = 0; i < 700; ++i) cloud.push_back({float(r.uniform(-10, 10)), 1.0f, float(r.uniform(2, 40)), 0});
    for (int i = 0; i < 300; ++i) {
      cloud.push_back({float(r.uniform(-10, 10)), float(r.uniform(-3, 3)), float(r.uniform(2, 40)), 0});
    }
    const auto p = fit_ground_plane(cloud, seed, 50, 0.05, 0.0);
    // Brute-force sweep over every candidate height.
    int best = -1;
    double best_h = 0;
    for (const auto& q : cloud) {
      const int c = count_plane_inliers(cloud, q.y, 0.05);
      if (c > best) {
        best = c;
        best_h = q.y;
      }
    }
    std::vector<double> ys;
    for (const auto& q : cloud) {
      if (std::abs(double(q.y) - best_h) <= 0.05) ys.push_back(q.y);
    }
    std::sort(ys.begin(), ys.end());
    const double oracle = ys[(ys.size() - 1) / 2];
    CHECK(std::abs(p.y_at(0, 0) - 1.0) <= 0.02);
    CHECK(std::abs(oracle - 1.0) <= 0.02);
    CHECK(count_plane_inliers(cloud, p.y_at(0, 0), 0.05) >= 700);
    CHECK(fit_ground_plane(cloud, seed, 50, 0.05, 0.0).y_at(0, 0) == p.y_at(0, 0));
  }
}

TEST_CASE("fit_ground_plane input checks") {
  PointCloud two{{0, 1, 2, 0}, {1, 1, 2, 0}};
  CHECK_THROWS_AS(fit_ground_plane(two, 1, 10, 0.05), InvalidArgument);
}

TEST_CASE("flip_pose_2d applies w - x") {
  Skeleton2D s;
  s.joints[0] = {0, 5};
  s.joints[1] = {30, 7};
  const auto f = flip_pose_2d(s, 100, JointLayout::standard(), false);
  CHECK(f.joints[0].x() == 100.0);
  CHECK(f.joints[1].x() == 70.0);
  CHECK(f.joints[1].y() == 7.0);
}

TEST_CASE("flip_pose_2d swaps left/right labels when asked") {
  const auto& L = JointLayout::standard();
  Rng r(4);
  const auto s = testutil::random_skeleton_2d(r);
  const auto f = flip_pose_2d(s, 160, L, true);
  for (int j = 0; j < kNumJoints; ++j) {
    CHECK(f.joints[L.mirror[j]].x() == 160 - s.joints[j].x());
    CHECK(f.visible[L.mirror[j]] == s.visible[j]);
  }
  CHECK(L.mirror[L.head] == L.head);
  CHECK(L.mirror[L.left_shoulder] == L.right_shoulder);
}

TEST_CASE("flips are involutions") {
  Rng r(9);
  // Integer-valued pixel coordinates (what an annotator writes) are exact
  // under w - x; arbitrary doubles round-trip to within one ulp of w.
  for (int n = 0; n < 100; ++n) {
    Skeleton2D s;
    for (int j = 0; j < kNumJoints; ++j) s.joints[j] = {double(r.integer(0, 160)), r.uniform(0, 128)};
    for (bool swap : {true, false}) {
      const auto back = flip_pose_2d(flip_pose_2d(s, 160, JointLayout::standard(), swap), 160,
                                     JointLayout::standard(), swap);
      for (int j = 0; j < kNumJoints; ++j) {
        CHECK(same_bits(back.joints[j].x(), s.joints[j].x()));
        CHECK(same_bits(back.joints[j].y(), s.joints[j].y()));
        CHECK(back.visible[j] == s.visible[j]);
      }
    }
    const auto s2 = testutil::random_skeleton_2d(r);
    const auto b2 = flip_pose_2d(flip_pose_2d(s2, 160), 160);
    for (int j = 0; j < kNumJoints; ++j) {
      CHECK(std::abs(b2.joints[j].x() - s2.joints[j].x()) <= 160 * 1e-15);
    }
    const auto s3 = testutil::random_skeleton_3d(r);
    const auto b3 = flip_pose_3d(flip_pose_3d(s3));
    for (int j = 0; j < kNumJoints; ++j) CHECK(b3.joints[j] == s3.joints[j]);
  }
  PointCloud cloud;
  for (int i = 0; i < 1000; ++i) {
    cloud.push_back({float(r.uniform(-30, 30)), float(r.uniform(-2, 2)), float(r.uniform(0, 60)), float(r.uniform(0, 1))});
  }
  const auto once = flip_cloud(cloud);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(once[i].x == -cloud[i].x);
    CHECK(once[i].y == cloud[i].y);
    CHECK(once[i].z == cloud[i].z);
    CHECK(once[i].intensity == cloud[i].intensity);
  }
  CHECK(flip_cloud(once) == cloud);
  const auto one = flip_cloud({{1, 2, 3, 0.25f}});
  CHECK(one[0] == LidarPoint{-1, 2, 3, 0.25f});

  const Box2D b{10, 20, 50, 90};
  CHECK(flip_box_2d(flip_box_2d(b, 160), 160) == b);
  const auto b3 = testutil::random_box3d(r);
  CHECK(flip_box_3d(flip_box_3d(b3)).center == b3.center);
}

TEST_CASE("camera validation") {
  auto cam = cam100();
  CHECK_NOTHROW(cam.validate());
  cam.cx = 100;
  CHECK_THROWS_AS(cam.validate(), InvalidArgument);
  cam = cam100();
  cam.fy = 0;
  CHECK_THROWS_AS(cam.validate(), InvalidArgument);
}
