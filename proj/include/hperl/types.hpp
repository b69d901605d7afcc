#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace hperl {

inline constexpr int kNumJoints = 13;
inline constexpr int kNumAnchorPoses = 8;

// Errors. Everything the library throws derives from Error so callers can
// separate our failures from std::bad_alloc and friends.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A 3D point was at or behind the image plane.
class BehindCameraError : public Error {
 public:
  BehindCameraError(const std::string& what, int joint = -1)
      : Error(what), joint_(joint) {}
  int joint() const { return joint_; }

 private:
  int joint_;
};

// Axis-aligned image-plane box, (x0, y0) top-left, (x1, y1) bottom-right.
struct Box2D {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool operator==(const Box2D&) const = default;
};

// Axis-aligned 3D box in camera coordinates. size = (w, h, l) along (x, y, z).
struct Box3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();

  double w() const { return size.x(); }
  double h() const { return size.y(); }
  double l() const { return size.z(); }
  bool valid() const { return size.x() > 0 && size.y() > 0 && size.z() > 0; }
  bool contains(const Eigen::Vector3d& p) const {
    return ((p - center).cwiseAbs().array() <= 0.5 * size.array()).all();
  }
};

using AnchorBox3D = Box3D;

struct Skeleton3D {
  std::array<Eigen::Vector3d, kNumJoints> joints;
  std::array<bool, kNumJoints> visible;

  Skeleton3D() {
    joints.fill(Eigen::Vector3d::Zero());
    visible.fill(true);
  }
};

struct Skeleton2D {
  std::array<Eigen::Vector2d, kNumJoints> joints;
  std::array<bool, kNumJoints> visible;

  Skeleton2D() {
    joints.fill(Eigen::Vector2d::Zero());
    visible.fill(true);
  }
};

bool all_finite(const Skeleton2D& s);
bool all_finite(const Skeleton3D& s);

// Joint naming and left/right pairing. The order is data, carried in the
// dataset manifest; the default matches the shipped anchor poses.
struct JointLayout {
  std::array<std::string, kNumJoints> names;
  std::array<int, kNumJoints> mirror;  // mirror[j] = index of j's L/R twin (or j)
  int head = 0;
  int left_shoulder = 1;
  int right_shoulder = 2;

  static const JointLayout& standard();
  static JointLayout from_names(const std::vector<std::string>& names);
  std::string joined() const;
};

// Axis-aligned box around a skeleton's visible joints.
Box2D bounding_box(const Skeleton2D& s);
// Center and extent of the joints' axis-aligned box (all joints).
Box3D bounding_box(const Skeleton3D& s);

}  // namespace hperl
