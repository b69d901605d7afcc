#include "hperl/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#ifndef HPERL_DATA_DIR
#define HPERL_DATA_DIR "data"
#endif

namespace hperl {

std::size_t AnchorPoseSet::index(int id) {
  if (id < 1 || id > kNumAnchorPoses) {
    throw InvalidArgument("anchor pose id " + std::to_string(id) + " out of range 1.." +
                          std::to_string(kNumAnchorPoses));
  }
  return static_cast<std::size_t>(id - 1);
}

AnchorPoseSet AnchorPoseSet::parse(std::istream& in) {
  AnchorPoseSet set;
  std::array<std::array<bool, kNumJoints>, kNumAnchorPoses> seen{};
  std::string line;
  int records = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("pose_id", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    int pid = 0, jid = 0;
    double x, y, z, u, v;
    if (!(ls >> pid >> jid >> x >> y >> z >> u >> v)) {
      throw InvalidArgument("anchor poses: malformed record on line " + std::to_string(line_no));
    }
    if (pid < 1 || pid > kNumAnchorPoses || jid < 0 || jid >= kNumJoints) {
      throw InvalidArgument("anchor poses: pose/joint id out of range on line " +
                            std::to_string(line_no));
    }
    if (seen[pid - 1][jid]) {
      throw InvalidArgument("anchor poses: duplicate record on line " + std::to_string(line_no));
    }
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !(u >= 0 && u <= 1) ||
        !(v >= 0 && v <= 1)) {
      throw InvalidArgument("anchor poses: invalid coordinates on line " + std::to_string(line_no));
    }
    seen[pid - 1][jid] = true;
    set.pose3d_[pid - 1].joints[jid] = {x, y, z};
    set.unit2d_[pid - 1].joints[jid] = {u, v};
    ++records;
  }
  if (records != kNumAnchorPoses * kNumJoints) {
    throw InvalidArgument("anchor poses: expected " + std::to_string(kNumAnchorPoses) + " poses of " +
                          std::to_string(kNumJoints) + " joints, got " + std::to_string(records) +
                          " records");
  }
  return set;
}

AnchorPoseSet AnchorPoseSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open anchor pose file " + path.string());
  return parse(in);
}

std::filesystem::path AnchorPoseSet::default_path() {
  if (const char* env = std::getenv("HPERL_ANCHOR_POSES"); env && *env) return env;
  return std::filesystem::path(HPERL_DATA_DIR) / "anchor_poses.csv";
}

std::size_t anchor_grid_count(const AreaExtents& extents, double stride) {
  const auto steps = [&](double span) {
    return static_cast<std::size_t>(std::floor(span / stride + 1e-9)) + 1;
  };
  return steps(extents.x_max - extents.x_min) * steps(extents.z_max - extents.z_min);
}

std::vector<AnchorBox3D> generate_anchor_grid(const Plane& plane, const AreaExtents& extents,
                                              double stride, const Eigen::Vector3d& template_size) {
  if (!(stride > 0)) throw InvalidArgument("anchor stride must be positive");
  const int nx = static_cast<int>(std::floor((extents.x_max - extents.x_min) / stride + 1e-9)) + 1;
  const int nz = static_cast<int>(std::floor((extents.z_max - extents.z_min) / stride + 1e-9)) + 1;
  std::vector<AnchorBox3D> out;
  out.reserve(static_cast<std::size_t>(nx) * nz);
  for (int iz = 0; iz < nz; ++iz) {
    const double z = extents.z_min + iz * stride;
    for (int ix = 0; ix < nx; ++ix) {
      const double x = extents.x_min + ix * stride;
      AnchorBox3D a;
      a.center = {x, plane.y_at(x, z), z};
      a.size = template_size;
      out.push_back(a);
    }
  }
  return out;
}

std::vector<std::size_t> non_empty_anchors(std::span<const AnchorBox3D> anchors,
                                           const BevGrid& bev) {
  // Summed-area table over occupied cells.
  const int R = bev.rows, C = bev.cols;
  std::vector<int> sat(static_cast<std::size_t>(R + 1) * (C + 1), 0);
  auto S = [&](int r, int c) -> int& { return sat[static_cast<std::size_t>(r) * (C + 1) + c]; };
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      const int occ = bev.at(kBevDensityChannel, r, c) > 0 ? 1 : 0;
      S(r + 1, c + 1) = occ + S(r, c + 1) + S(r + 1, c) - S(r, c);
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto& a = anchors[i];
    const double res = bev.resolution;
    const auto& e = bev.extents;
    int c0 = static_cast<int>(std::floor((a.center.x() - 0.5 * a.w() - e.x_min) / res));
    int c1 = static_cast<int>(std::ceil((a.center.x() + 0.5 * a.w() - e.x_min) / res));
    int r0 = static_cast<int>(std::floor((a.center.z() - 0.5 * a.l() - e.z_min) / res));
    int r1 = static_cast<int>(std::ceil((a.center.z() + 0.5 * a.l() - e.z_min) / res));
    c0 = std::clamp(c0, 0, C);
    c1 = std::clamp(c1, 0, C);
    r0 = std::clamp(r0, 0, R);
    r1 = std::clamp(r1, 0, R);
    if (c1 <= c0 || r1 <= r0) continue;
    if (S(r1, c1) - S(r0, c1) - S(r1, c0) + S(r0, c0) > 0) keep.push_back(i);
  }
  return keep;
}

std::vector<Box2D> generate_image_anchors(int width, int height, double stride,
                                          std::span<const double> heights, double aspect) {
  if (!(stride > 0) || !(aspect > 0)) throw InvalidArgument("image anchors need positive stride/aspect");
  std::vector<Box2D> out;
  for (double cy = 0.5 * stride; cy < height; cy += stride) {
    for (double cx = 0.5 * stride; cx < width; cx += stride) {
      for (double h : heights) {
        const double w = h * aspect;
        out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
  }
  return out;
}

Skeleton2D fit_anchor_pose_to_roi(const AnchorPoseSet& poses, int id, const Box2D& roi) {
  if (!(roi.width() > 0) || !(roi.height() > 0)) throw InvalidArgument("degenerate roi");
  const Skeleton2D& unit = poses.unit2d(id);
  Skeleton2D out;
  const double w = roi.width(), h = roi.height();
  for (int j = 0; j < kNumJoints; ++j) {
    out.joints[j] = {roi.x0 + unit.joints[j].x() * w, roi.y1 - (1.0 - unit.joints[j].y()) * h};
  }
  return out;
}

Skeleton3D fit_anchor_pose_3d(const AnchorPoseSet& poses, int id, const AnchorBox3D& box) {
  if (!box.valid()) throw InvalidArgument("anchor box must have positive size");
  const Skeleton2D& unit = poses.unit2d(id);
  const Skeleton3D& canon = poses.pose3d(id);
  const double bottom = box.center.y() + 0.5 * box.h();
  Skeleton3D out;
  for (int j = 0; j < kNumJoints; ++j) {
    out.joints[j] = {box.center.x() + (unit.joints[j].x() - 0.5) * box.w(),
                     bottom - (1.0 - unit.joints[j].y()) * box.h(),
                     box.center.z() + canon.joints[j].z() * box.h()};
  }
  return out;
}

AreaExtents extents_from_locations(std::span<const Box3D> boxes, double stride, double y_min,
                                   double y_max) {
  if (boxes.empty()) throw InvalidArgument("area extents need at least one ground-truth location");
  AreaExtents e{boxes[0].center.x(), boxes[0].center.x(), y_min, y_max, boxes[0].center.z(),
                boxes[0].center.z()};
  for (const auto& b : boxes) {
    e.x_min = std::min(e.x_min, b.center.x());
    e.x_max = std::max(e.x_max, b.center.x());
    e.z_min = std::min(e.z_min, b.center.z());
    e.z_max = std::max(e.z_max, b.center.z());
  }
  e.x_min -= stride;
  e.x_max += stride;
  e.z_min -= stride;
  e.z_max += stride;
  return e;
}

std::array<double, 4> encode_box_2d(const Box2D& a, const Box2D& t) {
  return {(t.cx() - a.cx()) / a.width(), (t.cy() - a.cy()) / a.height(),
          std::log(t.width() / a.width()), std::log(t.height() / a.height())};
}

Box2D decode_box_2d(const Box2D& a, std::span<const double> d) {
  // Clamp log-size deltas so a bad step cannot overflow exp().
  const double lim = 4.0;
  const double cx = a.cx() + d[0] * a.width(), cy = a.cy() + d[1] * a.height();
  const double w = a.width() * std::exp(std::clamp(d[2], -lim, lim));
  const double h = a.height() * std::exp(std::clamp(d[3], -lim, lim));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::array<double, 6> encode_box_3d(const Box3D& a, const Box3D& t) {
  return {(t.center.x() - a.center.x()) / a.w(), (t.center.y() - a.center.y()) / a.h(),
          (t.center.z() - a.center.z()) / a.l(), std::log(t.w() / a.w()),
          std::log(t.h() / a.h()), std::log(t.l() / a.l())};
}

Box3D decode_box_3d(const Box3D& a, std::span<const double> d) {
  const double lim = 4.0;
  Box3D b;
  b.center = {a.center.x() + d[0] * a.w(), a.center.y() + d[1] * a.h(), a.center.z() + d[2] * a.l()};
  b.size = {a.w() * std::exp(std::clamp(d[3], -lim, lim)), a.h() * std::exp(std::clamp(d[4], -lim, lim)),
            a.l() * std::exp(std::clamp(d[5], -lim, lim))};
  return b;
}

}  // namespace hperl
