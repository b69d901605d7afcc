#include "hperl/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hperl {

bool all_finite(const Skeleton2D& s) {
  return std::all_of(s.joints.begin(), s.joints.end(),
                     [](const Eigen::Vector2d& p) { return p.allFinite(); });
}

bool all_finite(const Skeleton3D& s) {
  return std::all_of(s.joints.begin(), s.joints.end(),
                     [](const Eigen::Vector3d& p) { return p.allFinite(); });
}

const JointLayout& JointLayout::standard() {
  static const JointLayout layout = from_names(
      {"head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
       "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle"});
  return layout;
}

JointLayout JointLayout::from_names(const std::vector<std::string>& names) {
  if (names.size() != static_cast<std::size_t>(kNumJoints)) {
    throw InvalidArgument("joint layout needs " + std::to_string(kNumJoints) +
                          " names, got " + std::to_string(names.size()));
  }
  JointLayout out;
  auto find = [&](const std::string& n) -> int {
    auto it = std::find(names.begin(), names.end(), n);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
  };
  for (int j = 0; j < kNumJoints; ++j) {
    out.names[j] = names[j];
    out.mirror[j] = j;
    const std::string& n = names[j];
    if (n.size() > 2 && (n.rfind("l_", 0) == 0 || n.rfind("r_", 0) == 0)) {
      std::string twin = (n[0] == 'l' ? "r_" : "l_") + n.substr(2);
      int t = find(twin);
      if (t < 0) throw InvalidArgument("joint '" + n + "' has no mirror twin");
      out.mirror[j] = t;
    }
  }
  out.head = find("head");
  out.left_shoulder = find("l_shoulder");
  out.right_shoulder = find("r_shoulder");
  if (out.head < 0 || out.left_shoulder < 0 || out.right_shoulder < 0) {
    throw InvalidArgument("joint layout must name head, l_shoulder and r_shoulder");
  }
  return out;
}

std::string JointLayout::joined() const {
  std::string s;
  for (int j = 0; j < kNumJoints; ++j) {
    if (j) s += ' ';
    s += names[j];
  }
  return s;
}

Box2D bounding_box(const Skeleton2D& s) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Box2D b{inf, inf, -inf, -inf};
  bool any = false;
  for (int j = 0; j < kNumJoints; ++j) {
    if (!s.visible[j]) continue;
    any = true;
    b.x0 = std::min(b.x0, s.joints[j].x());
    b.y0 = std::min(b.y0, s.joints[j].y());
    b.x1 = std::max(b.x1, s.joints[j].x());
    b.y1 = std::max(b.y1, s.joints[j].y());
  }
  return any ? b : Box2D{};
}

Box3D bounding_box(const Skeleton3D& s) {
  Eigen::Vector3d lo = s.joints[0], hi = s.joints[0];
  for (const auto& p : s.joints) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Box3D b;
  b.center = 0.5 * (lo + hi);
  b.size = hi - lo;
  return b;
}

}  // namespace hperl
