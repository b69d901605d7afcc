#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hperl/losses.hpp"
#include "test_util.hpp"

using namespace hperl;
using testutil::central_diff;
using testutil::rel_err;
using testutil::Rng;

namespace {

const AnchorPoseSet& poses() {
  static const AnchorPoseSet p = AnchorPoseSet::load_default();
  return p;
}

// IoU of integer-cornered boxes by counting unit cells.
double cell_iou(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1, int by1) {
  long inter = 0, uni = 0;
  for (int x = std::min(ax0, bx0); x < std::max(ax1, bx1); ++x) {
    for (int y = std::min(ay0, by0); y < std::max(ay1, by1); ++y) {
      const bool in_a = x >= ax0 && x < ax1 && y >= ay0 && y < ay1;
      const bool in_b = x >= bx0 && x < bx1 && y >= by0 && y < by1;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double sl1(double x) { return std::abs(x) < 1 ? 0.5 * x * x : std::abs(x) - 0.5; }

}  // namespace

TEST_CASE("iou_2d examples") {
  CHECK(iou_2d({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(iou_2d({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
  CHECK(iou_2d({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
  CHECK(iou_2d({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0);
  CHECK(iou_2d({0, 0, 0, 1}, {0, 0, 0, 1}) == 0.0);
}

TEST_CASE("iou_2d matches cell counting and is symmetric") {
  Rng r(1);
  for (int n = 0; n < 500; ++n) {
    int c[8];
    for (int i = 0; i < 2; ++i) {
      c[4 * i] = r.integer(0, 20);
      c[4 * i + 1] = r.integer(0, 20);
      c[4 * i + 2] = c[4 * i] + r.integer(1, 12);
      c[4 * i + 3] = c[4 * i + 1] + r.integer(1, 12);
    }
    const Box2D a{double(c[0]), double(c[1]), double(c[2]), double(c[3])};
    const Box2D b{double(c[4]), double(c[5]), double(c[6]), double(c[7])};
    const double v = iou_2d(a, b);
    CHECK(v == doctest::Approx(cell_iou(c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7])).epsilon(1e-12));
    CHECK(v == iou_2d(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("iou_bev is the metric footprint IoU and ignores height") {
  const AreaExtents e{-20, 20, -3, 1, 0, 50};
  Rng r(2);
  for (int n = 0; n < 300; ++n) {
    auto a = testutil::random_box3d(r), b = a;
    b.center += Eigen::Vector3d(r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1));
    b.size = {r.uniform(0.3, 1.5), r.uniform(1, 2), r.uniform(0.3, 1.5)};
    const Box2D fa{a.center.x() - a.w() / 2, a.center.z() - a.l() / 2, a.center.x() + a.w() / 2,
                   a.center.z() + a.l() / 2};
    const Box2D fb{b.center.x() - b.w() / 2, b.center.z() - b.l() / 2, b.center.x() + b.w() / 2,
                   b.center.z() + b.l() / 2};
    const double v = iou_bev(a, b, e, 0.2);
    CHECK(v == doctest::Approx(iou_2d(fa, fb)).epsilon(1e-9));
    CHECK(v == doctest::Approx(iou_bev(a, b, e, 0.37)).epsilon(1e-9));
    auto c = b;
    c.center.y() += r.uniform(-5, 5);
    c.size.y() = r.uniform(0.1, 4);
    CHECK(iou_bev(a, c, e, 0.2) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("smooth L1 examples") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(0.5) == 0.125);
  CHECK(smooth_l1(-2.0) == 1.5);
  CHECK(smooth_l1(1.0) == 0.5);
  CHECK(smooth_l1_grad(0.5) == 0.5);
  CHECK(smooth_l1_grad(-3.0) == -1.0);
  CHECK(smooth_l1(0.1, 0.5) == doctest::Approx(0.01));
  CHECK(smooth_l1(2.0, 0.5) == doctest::Approx(1.75));
}

TEST_CASE("closest_anchor_pose recovers each fitted anchor") {
  const Box2D box{10, 5, 50, 100};
  for (int k = 1; k <= kNumAnchorPoses; ++k) {
    CHECK(closest_anchor_pose(poses(), box, fit_anchor_pose_to_roi(poses(), k, box)) == k);
  }
  Skeleton2D hidden;
  hidden.visible.fill(false);
  CHECK(closest_anchor_pose(poses(), box, hidden) == 1);
}

TEST_CASE("assign_targets examples") {
  const Box2D gt_box{0, 0, 10, 10};
  GroundTruth gt;
  gt.image = gt_box;
  gt.pose = fit_anchor_pose_to_roi(poses(), 3, gt_box);
  std::vector<GroundTruth> gts{gt};
  // IoU 0.29 with the ground truth: 29 / 100 with a box inside it.
  std::vector<RoiBox> rois{{Box2D{0, 0, 2.9, 10}, {}}, {Box2D{0, 0, 10, 10}, {}}, {Box2D{50, 50, 60, 60}, {}}};
  const auto a = assign_targets(rois, gts, poses(), {});
  CHECK(a.foreground == std::vector<bool>{false, true, false});
  CHECK(a.matched_gt == std::vector<int>{-1, 0, -1});
  CHECK(a.k_target == std::vector<int>{0, 3, 0});
  CHECK(a.num_foreground() == 1);

  rois = {{Box2D{0, 0, 3.0, 10}, {}}};
  CHECK(assign_targets(rois, gts, poses(), {}).foreground[0]);
}

TEST_CASE("assign_targets matches a brute-force oracle") {
  Rng r(3);
  for (int scene = 0; scene < 200; ++scene) {
    std::vector<GroundTruth> gts(r.integer(0, 4));
    for (auto& g : gts) {
      g.image = testutil::random_box(r, 0, 60, 10, 50);
      g.pose = testutil::random_skeleton_2d(r);
    }
    std::vector<RoiBox> rois;
    for (int i = 0; i < 30; ++i) {
      if (!gts.empty() && r.coin(0.6)) {
        const auto& g = gts[r.integer(0, int(gts.size()) - 1)].image;
        const double s = 0.3 * g.width();
        rois.push_back({Box2D{g.x0 + r.uniform(-s, s), g.y0 + r.uniform(-s, s), g.x1 + r.uniform(-s, s),
                              g.y1 + r.uniform(-s, s)},
                        {}});
      } else {
        rois.push_back({testutil::random_box(r, 0, 60, 10, 50), {}});
      }
    }
    const auto a = assign_targets(rois, gts, poses(), {});
    REQUIRE(a.matched_gt.size() == rois.size());
    for (std::size_t i = 0; i < rois.size(); ++i) {
      std::vector<double> ious;
      for (const auto& g : gts) ious.push_back(iou_2d(rois[i].image, g.image));
      const auto best = std::max_element(ious.begin(), ious.end());
      const bool fg = best != ious.end() && *best >= 0.3;
      CHECK(a.foreground[i] == fg);
      if (!fg) {
        CHECK(a.matched_gt[i] == -1);
        CHECK(a.k_target[i] == 0);
        continue;
      }
      const int g = int(best - ious.begin());
      CHECK(a.matched_gt[i] == g);
      // Class: argmin of summed joint distance, first minimum wins.
      std::vector<double> d;
      for (int k = 1; k <= kNumAnchorPoses; ++k) {
        const auto f = fit_anchor_pose_to_roi(poses(), k, gts[g].image);
        double s = 0;
        for (int j = 0; j < kNumJoints; ++j) {
          if (gts[g].pose.visible[j]) s += (f.joints[j] - gts[g].pose.joints[j]).norm();
        }
        d.push_back(s);
      }
      CHECK(a.k_target[i] == 1 + int(std::min_element(d.begin(), d.end()) - d.begin()));
    }
  }
}

TEST_CASE("assign_targets in BEV mode uses the 3D boxes") {
  GroundTruth gt;
  Box3D b;
  b.center = {0, 1, 10};
  b.size = {0.8, 1.8, 0.8};
  gt.box3d = b;
  gt.image = {0, 0, 1, 1};
  std::vector<GroundTruth> gts{gt};
  Box3D near = b, far = b;
  near.center.x() += 0.1;
  far.center.x() += 3;
  std::vector<RoiBox> rois{{Box2D{100, 100, 101, 101}, near}, {Box2D{0, 0, 1, 1}, far}};
  AssignOptions o;
  o.mode = IouMode::bev;
  o.extents = {-5, 5, -1, 2, 0, 20};
  const auto a = assign_targets(rois, gts, poses(), o);
  CHECK(a.foreground == std::vector<bool>{true, false});
}

TEST_CASE("loss_2d value and gradient") {
  Skeleton2D target, pred;
  for (int j = 0; j < kNumJoints; ++j) {
    target.joints[j] = {10.0 * j, 5.0};
    pred.joints[j] = target.joints[j];
  }
  pred.joints[0].x() += 0.5;  // 0.125
  pred.joints[1].y() -= 3.0;  // 2.5
  target.visible[2] = false;
  pred.joints[2].x() += 100;  // ignored
  std::vector<Skeleton2D> p{pred, pred}, t{target, target};
  const auto l = loss_2d(p, t, {true, false});
  CHECK(l.value == doctest::Approx(2.625 / 24.0));
  CHECK(l.grad[0][0].x() == doctest::Approx(0.5 / 24.0));
  CHECK(l.grad[0][1].y() == doctest::Approx(-1.0 / 24.0));
  CHECK(l.grad[0][2].x() == 0.0);
  for (const auto& g : l.grad[1]) CHECK(g.isZero());
  const auto none = loss_2d(p, t, {false, false});
  CHECK(none.value == 0.0);
  CHECK_THROWS_AS(loss_2d(p, t, {true}), InvalidArgument);
}

TEST_CASE("loss_2d gradient matches finite differences") {
  Rng r(4);
  for (int n = 0; n < 20; ++n) {
    const int rois = r.integer(1, 4);
    std::vector<Skeleton2D> t(rois);
    std::vector<bool> fg(rois);
    std::vector<double> x;
    for (int i = 0; i < rois; ++i) {
      t[i] = testutil::random_skeleton_2d(r, 0, 20);
      fg[i] = r.coin(0.7);
      for (int j = 0; j < kNumJoints; ++j) {
        x.push_back(r.uniform(0, 20));
        x.push_back(r.uniform(0, 20));
      }
    }
    auto unpack = [&](const std::vector<double>& v) {
      std::vector<Skeleton2D> p(rois);
      for (int i = 0; i < rois; ++i) {
        for (int j = 0; j < kNumJoints; ++j) p[i].joints[j] = {v[(i * kNumJoints + j) * 2], v[(i * kNumJoints + j) * 2 + 1]};
      }
      return p;
    };
    const auto l = loss_2d(unpack(x), t, fg);
    for (std::size_t c = 0; c < x.size(); ++c) {
      const double fd = central_diff([&](std::vector<double>& v) { return loss_2d(unpack(v), t, fg).value; }, x, c, 1e-6);
      const auto& g = l.grad[c / (2 * kNumJoints)][(c / 2) % kNumJoints];
      CHECK(rel_err(g[int(c % 2)], fd, 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("loss_3d is invariant to sliding joints along their rays") {
  const auto cam = testutil::test_camera();
  Rng r(5);
  for (int n = 0; n < 50; ++n) {
    const auto pred = testutil::random_skeleton_3d(r);
    auto slid = pred;
    for (auto& j : slid.joints) j *= r.uniform(0.5, 2.0);
    const auto target = project_skeleton(cam, testutil::random_skeleton_3d(r));
    std::vector<Skeleton2D> t{target};
    std::vector<Skeleton3D> a{pred}, b{slid};
    CHECK(loss_3d(a, t, cam, {true}).value == doctest::Approx(loss_3d(b, t, cam, {true}).value).epsilon(1e-10));
    // Equal to the 2D loss on the projections.
    std::vector<Skeleton2D> proj{project_skeleton(cam, pred)};
    CHECK(loss_3d(a, t, cam, {true}).value == doctest::Approx(loss_2d(proj, t, {true}).value).epsilon(1e-12));
  }
}

TEST_CASE("loss_3d gradient matches finite differences") {
  const auto cam = testutil::test_camera();
  Rng r(6);
  for (int n = 0; n < 20; ++n) {
    const auto pred = testutil::random_skeleton_3d(r, 4, 15);
    std::vector<Skeleton2D> t{project_skeleton(cam, testutil::random_skeleton_3d(r, 4, 15))};
    t[0].visible = testutil::random_skeleton_2d(r).visible;
    std::vector<double> x;
    for (const auto& j : pred.joints) x.insert(x.end(), {j.x(), j.y(), j.z()});
    auto f = [&](std::vector<double>& v) {
      std::vector<Skeleton3D> p(1);
      for (int j = 0; j < kNumJoints; ++j) p[0].joints[j] = {v[3 * j], v[3 * j + 1], v[3 * j + 2]};
      return loss_3d(p, t, cam, {true}).value;
    };
    std::vector<Skeleton3D> p{pred};
    const auto l = loss_3d(p, t, cam, {true});
    for (std::size_t c = 0; c < x.size(); ++c) {
      CHECK(rel_err(l.grad[0][c / 3][int(c % 3)], central_diff(f, x, c, 1e-6), 1e-3) < 1e-4);
    }
  }
}

TEST_CASE("loss_3d rejects foreground joints behind the camera") {
  const auto cam = testutil::test_camera();
  Skeleton3D s;
  for (auto& j : s.joints) j = {0, 0, 5};
  s.joints[4].z() = -1;
  std::vector<Skeleton3D> p{s};
  std::vector<Skeleton2D> t(1);
  CHECK_THROWS_AS(loss_3d(p, t, cam, {true}), BehindCameraError);
  CHECK_NOTHROW(loss_3d(p, t, cam, {false}));
}

TEST_CASE("loss_cls") {
  std::vector<double> logits(2 * 9, 0.0);
  std::vector<int> targets{0, 4};
  const auto l = loss_cls(logits, 9, targets);
  CHECK(l.value == doctest::Approx(std::log(9.0)).epsilon(1e-14));

  Rng r(7);
  for (int n = 0; n < 50; ++n) {
    const int rows = r.integer(1, 6), c = r.integer(2, 9);
    std::vector<double> x(rows * c);
    for (auto& v : x) v = r.uniform(-5, 5);
    std::vector<int> t(rows);
    for (auto& v : t) v = r.integer(0, c - 1);
    double oracle = 0;
    for (int i = 0; i < rows; ++i) {
      double z = 0;
      for (int k = 0; k < c; ++k) z += std::exp(x[i * c + k]);
      oracle += std::log(z) - x[i * c + t[i]];
    }
    const auto got = loss_cls(x, c, t);
    CHECK(got.value == doctest::Approx(oracle / rows).epsilon(1e-12));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fd = central_diff([&](std::vector<double>& v) { return loss_cls(v, c, t).value; }, x, i, 1e-6);
      CHECK(rel_err(got.grad[i], fd, 1e-4) < 1e-5);
    }
  }
  // Large logits stay finite.
  std::vector<double> big{1000, -1000, 0};
  std::vector<int> one{1};
  CHECK(std::isfinite(loss_cls(big, 3, one).value));
}

TEST_CASE("label_anchors against an oracle") {
  // Two anchors, one gt: 0.2 and 0.4 -> the best one is forced positive.
  std::vector<double> iou{0.2, 0.4};
  std::vector<int> matched;
  CHECK(label_anchors(iou, 2, 1, 0.5, 0.3, &matched) == std::vector<int>{0, 1});
  CHECK(matched[1] == 0);

  Rng r(8);
  for (int n = 0; n < 200; ++n) {
    const std::size_t na = r.integer(1, 40), ng = r.integer(0, 4);
    std::vector<double> m(na * ng);
    for (auto& v : m) v = r.coin(0.3) ? 0.0 : r.uniform(0, 1);
    const auto labels = label_anchors(m, na, ng, 0.5, 0.3);
    std::set<std::size_t> forced;
    for (std::size_t g = 0; g < ng; ++g) {
      double best = 0;
      std::size_t arg = na;
      for (std::size_t a = 0; a < na; ++a) {
        if (m[a * ng + g] > best) {
          best = m[a * ng + g];
          arg = a;
        }
      }
      if (arg < na) forced.insert(arg);
    }
    for (std::size_t a = 0; a < na; ++a) {
      double best = 0;
      for (std::size_t g = 0; g < ng; ++g) best = std::max(best, m[a * ng + g]);
      int expect = best >= 0.5 ? 1 : (best < 0.3 ? 0 : -1);
      if (forced.count(a)) expect = 1;
      CHECK(labels[a] == expect);
    }
  }
}

TEST_CASE("sample_anchor_labels caps positives and the batch") {
  Rng r(9);
  for (int n = 0; n < 200; ++n) {
    std::vector<int> labels(r.integer(0, 300));
    for (auto& l : labels) l = r.integer(-1, 1);
    const int batch = r.integer(1, 128);
    const auto s = sample_anchor_labels(labels, batch, n);
    const auto count = [](const std::vector<int>& v, int x) { return int(std::count(v.begin(), v.end(), x)); };
    const int pos = count(labels, 1), neg = count(labels, 0);
    const int kept_pos = std::min(pos, batch / 2);
    CHECK(count(s, 1) == kept_pos);
    CHECK(count(s, 0) == std::min(neg, batch - kept_pos));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (s[i] != -1) CHECK(s[i] == labels[i]);
    }
    CHECK(s == sample_anchor_labels(labels, batch, n));
  }
}

TEST_CASE("loss_rpn value and gradients") {
  RpnTargets t;
  t.dim = 4;
  t.labels = {1, 0, -1};
  t.deltas = {0, 0, 0, 0, 9, 9, 9, 9, 9, 9, 9, 9};
  std::vector<double> obj{0.0, 0.0, 100.0};
  std::vector<double> d{0.5, 0, 0, 2, 5, 5, 5, 5, 5, 5, 5, 5};
  const auto l = loss_rpn(obj, d, t);
  CHECK(l.objectness == doctest::Approx(std::log(2.0)));
  CHECK(l.regression == doctest::Approx(0.125 + 1.5));
  CHECK(l.grad_objectness[0] == doctest::Approx(-0.25));
  CHECK(l.grad_objectness[1] == doctest::Approx(0.25));
  CHECK(l.grad_objectness[2] == 0.0);
  CHECK(l.grad_deltas[0] == doctest::Approx(0.5));
  CHECK(l.grad_deltas[3] == doctest::Approx(1.0));
  CHECK(l.grad_deltas[4] == 0.0);

  Rng r(10);
  for (int n = 0; n < 30; ++n) {
    const int na = r.integer(1, 12);
    RpnTargets rt;
    rt.dim = 6;
    for (int i = 0; i < na; ++i) rt.labels.push_back(r.integer(-1, 1));
    for (int i = 0; i < na * 6; ++i) rt.deltas.push_back(r.uniform(-2, 2));
    std::vector<double> x;
    for (int i = 0; i < na; ++i) x.push_back(r.uniform(-4, 4));
    for (int i = 0; i < na * 6; ++i) x.push_back(r.uniform(-2, 2));
    auto f = [&](std::vector<double>& v) {
      const auto o = loss_rpn(std::span(v).first(na), std::span(v).subspan(na), rt);
      return o.objectness + o.regression;
    };
    const auto o = loss_rpn(std::span(x).first(na), std::span(x).subspan(na), rt);
    // Oracle for the value.
    double bce = 0, reg = 0;
    int lab = 0, pos = 0;
    for (int i = 0; i < na; ++i) {
      if (rt.labels[i] < 0) continue;
      ++lab;
      const double p = 1 / (1 + std::exp(-x[i]));
      bce -= rt.labels[i] ? std::log(p) : std::log(1 - p);
      if (rt.labels[i] == 1) {
        ++pos;
        for (int c = 0; c < 6; ++c) reg += sl1(x[na + i * 6 + c] - rt.deltas[i * 6 + c]);
      }
    }
    CHECK(o.objectness == doctest::Approx(lab ? bce / lab : 0.0).epsilon(1e-10));
    CHECK(o.regression == doctest::Approx(pos ? reg / pos : 0.0).epsilon(1e-10));
    for (std::size_t c = 0; c < x.size(); ++c) {
      const double g = c < std::size_t(na) ? o.grad_objectness[c] : o.grad_deltas[c - na];
      CHECK(rel_err(g, central_diff(f, x, c, 1e-6)) < 1e-5);
    }
  }
}

TEST_CASE("LossReport combine, accumulate and scale") {
  LossWeights w;
  w.cls = 2;
  w.pose_3d = 0.5;
  const auto a = LossReport::combine(1, 2, 3, 4, 5, w);
  CHECK(a.l_total == 1 + 2 + 6 + 4 + 2.5);
  auto b = LossReport::combine(1, 1, 1, 1, 1);
  CHECK(b.l_total == 5);
  b += a;
  CHECK(b.l_total == 20.5);
  CHECK(b.l_cls == 4);
  const auto c = b.scaled(0.5);
  CHECK(c.l_total == 10.25);
  CHECK(c.l_3d == 3);
}
