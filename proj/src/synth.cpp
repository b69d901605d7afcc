#include "hperl/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace hperl {

bool Pedestrian::operator==(const Pedestrian& o) const {
  for (int j = 0; j < kNumJoints; ++j) {
    if (pose3d.joints[j] != o.pose3d.joints[j] || pose2d.joints[j] != o.pose2d.joints[j] ||
        pose3d.visible[j] != o.pose3d.visible[j] || pose2d.visible[j] != o.pose2d.visible[j]) {
      return false;
    }
  }
  return box.center == o.box.center && box.size == o.box.size && source_pose == o.source_pose &&
         height == o.height && lidar_points == o.lidar_points && occluded == o.occluded;
}

bool Scene::operator==(const Scene& o) const {
  return seed == o.seed && camera == o.camera && image == o.image && cloud == o.cloud && gt == o.gt;
}

CameraIntrinsics default_camera() { return {160.0, 160.0, 80.0, 64.0, 160, 128}; }

void SceneParams::validate() const {
  camera.validate();
  if (!(depth_min > 0) || !(depth_max > depth_min)) throw InvalidArgument("depth range must satisfy 0 < min < max");
  if (!(occlusion_rate >= 0 && occlusion_rate <= 1)) throw InvalidArgument("occlusion_rate must be in [0, 1]");
  if (clutter < 0 || min_points < 0) throw InvalidArgument("clutter and min_points must be non-negative");
  if (!(height_min > 0) || !(height_max >= height_min)) throw InvalidArgument("bad pedestrian height range");
  if (!(camera_height > 0)) throw InvalidArgument("camera_height must be positive");
  if (!(azimuth_step_deg > 0) || !(elevation_step_deg > 0) || !(elevation_max_deg > elevation_min_deg)) {
    throw InvalidArgument("bad lidar ray grid");
  }
}

namespace {

using Vec3 = Eigen::Vector3d;
using Rgb = std::array<double, 3>;

struct Capsule {
  Vec3 a, b;
  double r;
  int part;  // 0 skin, 1 upper body, 2 legs
};

struct Body {
  std::vector<Capsule> caps;
  Vec3 center;
  double radius = 0;  // bounding sphere
  Rgb colors[3];
  double depth = 0;
};

struct Block {
  Vec3 lo, hi;
  Rgb color;
  double intensity = 0.7;
};

// Segment set of the standard 13-joint skeleton with radii for a 1.75 m body.
Body make_body(const Skeleton3D& s, double height, std::mt19937_64& rng) {
  const auto& J = s.joints;
  const Vec3 neck = 0.5 * (J[1] + J[2]);
  const Vec3 pelvis = 0.5 * (J[7] + J[8]);
  const double k = height / 1.75;
  Body b;
  auto add = [&](const Vec3& p, const Vec3& q, double r, int part) { b.caps.push_back({p, q, r * k, part}); };
  add(J[9], J[11], 0.055, 2);
  add(J[10], J[12], 0.055, 2);
  add(J[7], J[9], 0.07, 2);
  add(J[8], J[10], 0.07, 2);
  add(J[7], J[8], 0.09, 2);
  add(neck, pelvis, 0.13, 1);
  add(J[1], J[7], 0.08, 1);
  add(J[2], J[8], 0.08, 1);
  add(J[1], J[2], 0.07, 1);
  add(J[1], J[3], 0.045, 1);
  add(J[2], J[4], 0.045, 1);
  add(J[3], J[5], 0.04, 0);
  add(J[4], J[6], 0.04, 0);
  add(neck, J[0], 0.05, 0);
  add(J[0], J[0], 0.1, 0);
  Vec3 lo = J[0], hi = J[0];
  for (const auto& p : J) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  b.center = 0.5 * (lo + hi);
  b.radius = 0.5 * (hi - lo).norm() + 0.15 * k;
  b.depth = b.center.z();
  static const Rgb shirts[] = {{200, 40, 40}, {40, 90, 200}, {230, 200, 50}, {40, 160, 70},
                               {240, 240, 240}, {150, 60, 170}};
  static const Rgb pants[] = {{40, 40, 60}, {90, 70, 50}, {30, 30, 30}, {70, 90, 130}};
  static const Rgb skins[] = {{230, 190, 160}, {190, 140, 100}, {120, 80, 60}};
  std::uniform_int_distribution<int> ps(0, 5), pp(0, 3), pk(0, 2);
  b.colors[0] = skins[pk(rng)];
  b.colors[1] = shirts[ps(rng)];
  b.colors[2] = pants[pp(rng)];
  return b;
}

// Ray (origin 0, unit direction d) against a capsule; -1 on miss.
double ray_capsule(const Vec3& d, const Capsule& c) {
  const Vec3 ba = c.b - c.a;
  const Vec3 oa = -c.a;
  const double baba = ba.dot(ba);
  const double bard = ba.dot(d);
  const double baoa = ba.dot(oa);
  const double rdoa = d.dot(oa);
  const double oaoa = oa.dot(oa);
  const double a = baba - bard * bard;
  if (baba > 1e-12 && a > 1e-12) {
    const double b = baba * rdoa - baoa * bard;
    const double cc = baba * oaoa - baoa * baoa - c.r * c.r * baba;
    const double h = b * b - a * cc;
    if (h < 0) return -1;
    const double t = (-b - std::sqrt(h)) / a;
    const double y = baoa + t * bard;
    if (y > 0 && y < baba) return t;
  }
  // End caps (or a degenerate segment).
  double best = -1;
  for (const Vec3* p : {&c.a, &c.b}) {
    const Vec3 oc = -*p;
    const double b = d.dot(oc);
    const double cc = oc.dot(oc) - c.r * c.r;
    const double h = b * b - cc;
    if (h <= 0) continue;
    const double t = -b - std::sqrt(h);
    if (t > 0 && (best < 0 || t < best)) best = t;
  }
  return best;
}

bool ray_hits_sphere(const Vec3& d, const Vec3& c, double r) {
  const double b = d.dot(c);
  return b > 0 && c.squaredNorm() - b * b <= r * r;
}

// Slab test for origin-based rays; returns entry distance or -1.
double ray_block(const Vec3& d, const Block& blk) {
  double t0 = 0, t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (0 < blk.lo[i] || 0 > blk.hi[i]) return -1;
      continue;
    }
    double a = blk.lo[i] / d[i], b = blk.hi[i] / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return -1;
  }
  return t0 > 0 ? t0 : -1;
}

bool segment_blocked(const Vec3& p, const Block& blk) {
  const double n = p.norm();
  const double t = ray_block(p / n, blk);
  return t > 0 && t < n;
}

Skeleton3D sample_skeleton(const AnchorPoseSet& poses, int id, const SceneParams& prm,
                           double height, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> noise(-prm.joint_noise, prm.joint_noise);
  std::uniform_real_distribution<double> yaw_d(-prm.max_yaw, prm.max_yaw);
  const double yaw = yaw_d(rng);
  const double c = std::cos(yaw), s = std::sin(yaw);
  Skeleton3D out;
  for (int j = 0; j < kNumJoints; ++j) {
    Vec3 p = poses.pose3d(id).joints[j];
    p += Vec3(noise(rng), noise(rng), noise(rng));
    out.joints[j] = height * Vec3(c * p.x() + s * p.z(), p.y(), -s * p.x() + c * p.z());
  }
  return out;
}

void place(Skeleton3D& s, double x, double z, double ground_y) {
  Vec3 lo = s.joints[0], hi = s.joints[0];
  for (const auto& p : s.joints) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 shift(x - 0.5 * (lo.x() + hi.x()), ground_y - 0.05 - hi.y(), z - 0.5 * (lo.z() + hi.z()));
  for (auto& p : s.joints) p += shift;
}

Box3D padded_box(const Skeleton3D& s) {
  Box3D b = bounding_box(s);
  b.size += Vec3(0.3, 0.2, 0.3);
  return b;
}

// Lateral half-range at depth z that keeps an object of half-width hw in view.
double lateral_limit(const CameraIntrinsics& cam, double z, double hw) {
  const double margin_px = 3.0;
  const double left = (cam.cx - margin_px) * z / cam.fx;
  const double right = (cam.width - cam.cx - margin_px) * z / cam.fx;
  return std::max(0.0, std::min(left, right) - hw);
}

struct Layout {
  std::vector<Pedestrian> peds;
  std::vector<Body> bodies;
  std::vector<Block> blocks;
};

Layout sample_layout(const SceneParams& prm, int n, const AnchorPoseSet& poses,
                     std::mt19937_64& rng) {
  Layout L;
  const double ground = prm.camera_height;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::uniform_int_distribution<int> pick_pose(1, poses.size());
  for (int i = 0; i < n; ++i) {
    Pedestrian ped;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int id = pick_pose(rng);
      const double h = prm.height_min + (prm.height_max - prm.height_min) * U(rng);
      Skeleton3D s = sample_skeleton(poses, id, prm, h, rng);
      const double z = prm.depth_min + (prm.depth_max - prm.depth_min) * U(rng);
      const Box3D probe = padded_box(s);
      const double lim = lateral_limit(prm.camera, z, 0.5 * probe.w());
      const double x = (2.0 * U(rng) - 1.0) * lim;
      place(s, x, z, ground);
      const Box3D box = padded_box(s);
      bool clash = false;
      for (const auto& o : L.peds) {
        const double dx = o.box.center.x() - box.center.x(), dz = o.box.center.z() - box.center.z();
        clash = clash || std::hypot(dx, dz) < 1.2;
      }
      if (clash && attempt < 99) continue;
      ped.pose3d = s;
      ped.box = box;
      ped.source_pose = id;
      double lo = s.joints[0].y(), hi = lo;
      for (const auto& p : s.joints) {
        lo = std::min(lo, p.y());
        hi = std::max(hi, p.y());
      }
      ped.height = hi - lo;
      break;
    }
    L.peds.push_back(ped);
  }
  for (auto& ped : L.peds) {
    L.bodies.push_back(make_body(ped.pose3d, ped.height, rng));
    ped.occluded = U(rng) < prm.occlusion_rate;
    if (!ped.occluded) continue;
    const double zo = ped.box.center.z() - (1.5 + 1.5 * U(rng));
    if (zo < 3.0) {
      ped.occluded = false;
      continue;
    }
    const double xo = ped.box.center.x() * zo / ped.box.center.z() + 0.6 * (U(rng) - 0.5);
    const double w = 1.0 + 0.6 * U(rng), h = 0.8 + 0.5 * U(rng), l = 0.3;
    L.blocks.push_back({Vec3(xo - w / 2, ground - h, zo - l / 2), Vec3(xo + w / 2, ground, zo + l / 2),
                        Rgb{120, 120, 130}, 0.8});
  }
  for (int i = 0; i < prm.clutter; ++i) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double w = 0.3 + 1.2 * U(rng), h = 0.5 + 2.0 * U(rng), l = 0.3 + 1.2 * U(rng);
      const double z = prm.depth_min + (prm.depth_max - prm.depth_min) * U(rng);
      const double x = (2.0 * U(rng) - 1.0) * lateral_limit(prm.camera, z, 0.5 * w);
      bool clash = false;
      for (const auto& p : L.peds) {
        clash = clash || (std::abs(p.box.center.x() - x) < 0.5 * (w + p.box.w()) + 0.5 &&
                          std::abs(p.box.center.z() - z) < 0.5 * (l + p.box.l()) + 0.5);
      }
      if (clash) continue;
      const Rgb col{60 + 120 * U(rng), 60 + 120 * U(rng), 60 + 120 * U(rng)};
      L.blocks.push_back({Vec3(x - w / 2, ground - h, z - l / 2), Vec3(x + w / 2, ground, z + l / 2), col,
                          0.6 + 0.3 * U(rng)});
      break;
    }
  }
  return L;
}

PointCloud cast_lidar(const SceneParams& prm, Layout& L, std::mt19937_64& rng) {
  PointCloud cloud;
  const double deg = std::numbers::pi / 180.0;
  const auto& cam = prm.camera;
  const double half_fov =
      std::max(std::atan(cam.cx / cam.fx), std::atan((cam.width - cam.cx) / cam.fx)) / deg + 1.0;
  const int na = static_cast<int>(std::floor(2 * half_fov / prm.azimuth_step_deg)) + 1;
  const int ne = static_cast<int>(std::floor((prm.elevation_max_deg - prm.elevation_min_deg) /
                                             prm.elevation_step_deg)) + 1;
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (auto& p : L.peds) p.lidar_points = 0;
  for (int ie = 0; ie < ne; ++ie) {
    const double el = (prm.elevation_min_deg + ie * prm.elevation_step_deg) * deg;
    for (int ia = 0; ia < na; ++ia) {
      const double az = (-half_fov + ia * prm.azimuth_step_deg) * deg;
      // Elevation is measured upward, i.e. toward -y.
      const Vec3 d(std::cos(el) * std::sin(az), -std::sin(el), std::cos(el) * std::cos(az));
      double best = prm.max_range;
      int hit = -1;  // -1 none, -2 ground, -3 block, >= 0 pedestrian
      double inten = 0;
      if (d.y() > 1e-9) {
        const double t = prm.camera_height / d.y();
        if (t < best) {
          best = t;
          hit = -2;
          inten = 0.1;
        }
      }
      for (const auto& blk : L.blocks) {
        const double t = ray_block(d, blk);
        if (t > 0 && t < best) {
          best = t;
          hit = -3;
          inten = blk.intensity;
        }
      }
      for (std::size_t i = 0; i < L.bodies.size(); ++i) {
        const auto& body = L.bodies[i];
        if (!ray_hits_sphere(d, body.center, body.radius)) continue;
        for (const auto& c : body.caps) {
          const double t = ray_capsule(d, c);
          if (t > 0 && t < best) {
            best = t;
            hit = static_cast<int>(i);
            inten = 0.35;
          }
        }
      }
      if (hit == -1) continue;
      const double t = best + jitter(rng);
      const Vec3 p = t * d;
      if (hit >= 0) ++L.peds[hit].lidar_points;
      cloud.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()),
                       static_cast<float>(std::clamp(inten + 0.1 * U(rng), 0.0, 1.0))});
    }
  }
  return cloud;
}

void shade(std::vector<double>& img, int W, int x, int y, const Rgb& c) {
  double* px = img.data() + (static_cast<std::size_t>(y) * W + x) * 3;
  px[0] = c[0];
  px[1] = c[1];
  px[2] = c[2];
}

std::vector<std::uint8_t> render(const SceneParams& prm, const Layout& L, std::mt19937_64& rng) {
  const auto& cam = prm.camera;
  const int W = cam.width, H = cam.height;
  std::vector<double> img(static_cast<std::size_t>(W) * H * 3);
  for (int y = 0; y < H; ++y) {
    const double v = y + 0.5;
    Rgb c;
    if (v < cam.cy) {
      const double t = v / cam.cy;
      c = {150 + 60 * t, 190 + 40 * t, 235};
    } else {
      const double t = (v - cam.cy) / std::max(1.0, H - cam.cy);
      c = {95 + 40 * t, 95 + 40 * t, 90 + 35 * t};
    }
    for (int x = 0; x < W; ++x) shade(img, W, x, y, c);
  }
  // Painter's order, far to near.
  struct Item {
    double depth;
    int kind;  // 0 block, 1 body
    std::size_t index;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < L.blocks.size(); ++i) {
    items.push_back({0.5 * (L.blocks[i].lo.z() + L.blocks[i].hi.z()), 0, i});
  }
  for (std::size_t i = 0; i < L.bodies.size(); ++i) items.push_back({L.bodies[i].depth, 1, i});
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.depth > b.depth; });
  for (const auto& it : items) {
    if (it.kind == 0) {
      const auto& blk = L.blocks[it.index];
      const double z = blk.lo.z();
      if (z < 0.5) continue;
      const Eigen::Vector2d a = project_point(cam, {blk.lo.x(), blk.lo.y(), z});
      const Eigen::Vector2d b = project_point(cam, {blk.hi.x(), blk.hi.y(), z});
      const int x0 = std::max(0, static_cast<int>(std::floor(a.x()))), x1 = std::min(W - 1, static_cast<int>(std::ceil(b.x())));
      const int y0 = std::max(0, static_cast<int>(std::floor(a.y()))), y1 = std::min(H - 1, static_cast<int>(std::ceil(b.y())));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (x + 0.5 >= a.x() && x + 0.5 <= b.x() && y + 0.5 >= a.y() && y + 0.5 <= b.y()) shade(img, W, x, y, blk.color);
        }
      }
      continue;
    }
    const auto& body = L.bodies[it.index];
    for (const auto& c : body.caps) {
      const Eigen::Vector2d p = project_point(cam, c.a), q = project_point(cam, c.b);
      const double r = std::max(0.6, cam.fx * c.r / (0.5 * (c.a.z() + c.b.z())));
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(p.x(), q.x()) - r)));
      const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(p.x(), q.x()) + r)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(p.y(), q.y()) - r)));
      const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(p.y(), q.y()) + r)));
      const Eigen::Vector2d pq = q - p;
      const double len2 = pq.squaredNorm();
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const Eigen::Vector2d m(x + 0.5, y + 0.5);
          const double t = len2 > 0 ? std::clamp((m - p).dot(pq) / len2, 0.0, 1.0) : 0.0;
          if ((m - (p + t * pq)).squaredNorm() <= r * r) shade(img, W, x, y, body.colors[c.part]);
        }
      }
    }
  }
  std::normal_distribution<double> noise(0.0, prm.image_noise);
  std::vector<std::uint8_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::clamp(std::round(img[i] + noise(rng)), 0.0, 255.0));
  }
  return out;
}

}  // namespace

Scene generate_scene(const SceneParams& prm, std::uint64_t seed, int n_pedestrians,
                     const AnchorPoseSet& poses) {
  prm.validate();
  if (n_pedestrians < 0) throw InvalidArgument("n_pedestrians must be non-negative");
  std::mt19937_64 rng(seed);
  Layout L;
  PointCloud cloud;
  for (int attempt = 0; attempt < 50; ++attempt) {
    L = sample_layout(prm, n_pedestrians, poses, rng);
    cloud = cast_lidar(prm, L, rng);
    bool ok = true;
    for (const auto& p : L.peds) ok = ok && (p.occluded || p.lidar_points >= prm.min_points);
    if (ok) break;
  }
  for (auto& ped : L.peds) {
    for (int j = 0; j < kNumJoints; ++j) {
      bool vis = true;
      for (const auto& blk : L.blocks) vis = vis && !segment_blocked(ped.pose3d.joints[j], blk);
      ped.pose3d.visible[j] = vis;
    }
    ped.pose2d = project_skeleton(prm.camera, ped.pose3d);
  }
  Scene s;
  s.seed = seed;
  s.camera = prm.camera;
  s.image = render(prm, L, rng);
  s.cloud = std::move(cloud);
  s.gt = std::move(L.peds);
  return s;
}

Scene flip_scene(const Scene& scene, const JointLayout& layout, bool swap_left_right) {
  Scene out = scene;
  const int W = scene.camera.width, H = scene.camera.height;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
            scene.image[(static_cast<std::size_t>(y) * W + (W - 1 - x)) * 3 + c];
      }
    }
  }
  out.cloud = flip_cloud(scene.cloud);
  for (auto& p : out.gt) {
    p.pose3d = flip_pose_3d(p.pose3d, layout, swap_left_right);
    p.pose2d = flip_pose_2d(p.pose2d, W, layout, swap_left_right);
    p.box = flip_box_3d(p.box);
  }
  return out;
}

}  // namespace hperl
