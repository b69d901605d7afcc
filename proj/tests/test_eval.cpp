#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hperl/eval.hpp"
#include "hperl/losses.hpp"
#include "test_util.hpp"

using namespace hperl;
using testutil::Rng;

namespace {

PoseCandidate candidate(Rng& r, const Box2D& roi, double score) {
  PoseCandidate c;
  c.roi = roi;
  c.score = score;
  c.pose2d = testutil::random_skeleton_2d(r);
  c.pose3d = testutil::random_skeleton_3d(r);
  return c;
}

Skeleton3D skeleton_filling(const Box3D& b) {
  Skeleton3D s;
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Vector3d sign{j % 2 ? 1.0 : -1.0, (j / 2) % 2 ? 1.0 : -1.0, (j / 4) % 2 ? 1.0 : -1.0};
    s.joints[j] = b.center + 0.5 * sign.cwiseProduct(b.size);
  }
  return s;
}

GtPose random_gt(Rng& r) {
  GtPose g;
  g.pose2d = testutil::random_skeleton_2d(r, 0, 60);
  for (auto& j : g.pose2d.joints) j += Eigen::Vector2d(r.uniform(0, 80), r.uniform(0, 60));
  g.box = testutil::random_box3d(r);
  return g;
}

FinalPose noisy_prediction(Rng& r, const GtPose& g, double px) {
  FinalPose p;
  p.pose2d = g.pose2d;
  for (auto& j : p.pose2d.joints) j += Eigen::Vector2d(r.normal(px), r.normal(px));
  p.pose2d.visible.fill(true);
  p.pose3d = skeleton_filling(g.box);
  for (auto& j : p.pose3d.joints) j += Eigen::Vector3d(r.normal(0.3), r.normal(0.3), r.normal(1.0));
  p.confidence = r.uniform(0, 1);
  return p;
}

}  // namespace

TEST_CASE("integration examples") {
  Rng r(1);
  const auto a = candidate(r, {0, 0, 10, 20}, 0.7);
  std::vector<PoseCandidate> one{a};
  const auto single = integrate_proposals(one);
  REQUIRE(single.size() == 1);
  CHECK(single[0].confidence == 0.7);
  for (int j = 0; j < kNumJoints; ++j) CHECK(single[0].pose2d.joints[j] == a.pose2d.joints[j]);

  auto b = a;
  b.score = 0.2;
  std::vector<PoseCandidate> twins{a, b};
  const auto merged = integrate_proposals(twins);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].confidence == doctest::Approx(0.9));
  for (int j = 0; j < kNumJoints; ++j) {
    CHECK((merged[0].pose2d.joints[j] - a.pose2d.joints[j]).norm() < 1e-12);
    CHECK((merged[0].pose3d.joints[j] - a.pose3d.joints[j]).norm() < 1e-12);
  }

  // Three overlapping, one disjoint.
  std::vector<PoseCandidate> four{candidate(r, {0, 0, 10, 20}, 0.6), candidate(r, {1, 0, 11, 20}, 0.3),
                                  candidate(r, {0, 1, 10, 21}, 0.5), candidate(r, {50, 50, 60, 70}, 0.4)};
  const auto groups = integrate_proposals(four);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].confidence == 1.0);  // 0.6 + 0.5 + 0.3, capped
  CHECK(groups[1].confidence == 0.4);
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Vector2d mean =
        (0.6 * four[0].pose2d.joints[j] + 0.3 * four[1].pose2d.joints[j] + 0.5 * four[2].pose2d.joints[j]) / 1.4;
    CHECK((groups[0].pose2d.joints[j] - mean).norm() < 1e-12);
    CHECK(groups[1].pose2d.joints[j] == four[3].pose2d.joints[j]);
  }

  std::vector<PoseCandidate> faint{candidate(r, {0, 0, 10, 20}, 0.05)};
  CHECK(integrate_proposals(faint).empty());
  CHECK(integrate_proposals({}).empty());
}

TEST_CASE("integration matches a brute-force oracle") {
  Rng r(2);
  for (int n = 0; n < 150; ++n) {
    std::vector<PoseCandidate> c;
    const int m = r.integer(0, 12);
    for (int i = 0; i < m; ++i) {
      c.push_back(candidate(r, testutil::random_box(r, 0, 40, 8, 30), r.coin(0.2) ? 0.5 : r.uniform(0, 0.6)));
    }
    IntegrationOptions opt;
    opt.iou_threshold = r.uniform(0.2, 0.7);
    opt.score_floor = r.uniform(0, 0.3);
    const auto got = integrate_proposals(c, opt);
    CHECK(got.size() <= c.size());

    std::vector<bool> left(c.size(), true);
    std::vector<FinalPose> expect;
    std::size_t assigned = 0;
    while (true) {
      int lead = -1;
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (left[i] && (lead < 0 || c[i].score > c[lead].score)) lead = int(i);
      }
      if (lead < 0) break;
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (left[i] && (int(i) == lead || iou_2d(c[lead].roi, c[i].roi) >= opt.iou_threshold)) {
          members.push_back(i);
          left[i] = false;
        }
      }
      assigned += members.size();
      double mass = 0;
      for (auto i : members) mass += c[i].score;
      if (mass < opt.score_floor || mass <= 0) continue;
      FinalPose f;
      f.confidence = std::min(1.0, mass);
      for (int j = 0; j < kNumJoints; ++j) {
        Eigen::Vector2d s2 = Eigen::Vector2d::Zero();
        Eigen::Vector3d s3 = Eigen::Vector3d::Zero();
        bool vis = false;
        for (auto i : members) {
          s2 += c[i].score * c[i].pose2d.joints[j];
          s3 += c[i].score * c[i].pose3d.joints[j];
          vis = vis || c[i].pose2d.visible[j];
        }
        f.pose2d.joints[j] = s2 / mass;
        f.pose3d.joints[j] = s3 / mass;
        f.pose2d.visible[j] = vis;
      }
      expect.push_back(f);
    }
    CHECK(assigned == c.size());
    REQUIRE(got.size() == expect.size());
    for (std::size_t g = 0; g < got.size(); ++g) {
      CHECK(got[g].confidence == doctest::Approx(expect[g].confidence).epsilon(1e-12));
      for (int j = 0; j < kNumJoints; ++j) {
        CHECK((got[g].pose2d.joints[j] - expect[g].pose2d.joints[j]).norm() < 1e-12 * 200);
        CHECK((got[g].pose3d.joints[j] - expect[g].pose3d.joints[j]).norm() < 1e-12 * 50);
        CHECK(got[g].pose2d.visible[j] == expect[g].pose2d.visible[j]);
      }
    }
  }
}

TEST_CASE("MPJPE and PCKh examples") {
  Rng r(3);
  std::vector<GtPose> gts{random_gt(r), random_gt(r)};
  for (auto& g : gts) g.pose2d.visible.fill(true);
  std::vector<FinalPose> perfect(2);
  for (int i = 0; i < 2; ++i) {
    perfect[i].pose2d = gts[i].pose2d;
    perfect[i].confidence = 0.9;
  }
  const std::vector<int> match{0, 1};
  CHECK(mpjpe_2d(perfect, gts, match) == 0.0);
  CHECK(pckh(perfect, gts, match) == 1.0);

  auto shifted = perfect;
  for (auto& p : shifted) {
    for (auto& j : p.pose2d.joints) j.x() += 5.0;
  }
  CHECK(mpjpe_2d(shifted, gts, match) == doctest::Approx(5.0).epsilon(1e-14));

  auto far = perfect;
  for (auto& p : far) {
    for (auto& j : p.pose2d.joints) j.y() += 1e4;
  }
  CHECK(pckh(far, gts, match) == 0.0);

  // Half correct: exact first prediction, far second one.
  std::vector<FinalPose> half{perfect[0], far[1]};
  CHECK(pckh(half, gts, match) == 0.5);

  // Unmatched ground truth counts against PCKh but not MPJPE.
  const std::vector<int> only_first{0, -1};
  CHECK(mpjpe_2d(shifted, gts, only_first) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(pckh(perfect, gts, only_first) == 0.5);
}

TEST_CASE("CDE and XYE examples and identities") {
  Box3D b;
  b.center = {1, 0.5, 20};
  b.size = {0.8, 1.8, 0.6};
  const auto fill = skeleton_filling(b);
  CHECK(cde(fill, b) < 1e-12);
  CHECK(xye(fill, b) < 1e-12);
  auto moved = fill;
  for (auto& j : moved.joints) j.z() += 2.0;
  CHECK(cde(moved, b) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(xye(moved, b) < 1e-12);
  auto lateral = fill;
  for (auto& j : lateral.joints) j.x() += 3.0;
  CHECK(xye(lateral, b) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(cde(lateral, b) < 1e-12);

  Rng r(4);
  for (int n = 0; n < 200; ++n) {
    const auto s = testutil::random_skeleton_3d(r);
    const auto g = testutil::random_box3d(r);
    // Min/max oracle for the box center.
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = -lo;
    for (const auto& j : s.joints) {
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], j[c]);
        hi[c] = std::max(hi[c], j[c]);
      }
    }
    const Eigen::Vector3d d = 0.5 * (lo + hi) - g.center;
    CHECK(cde(s, g) == doctest::Approx(std::abs(d.z())).epsilon(1e-12));
    CHECK(xye(s, g) == doctest::Approx(std::sqrt(d.x() * d.x() + d.y() * d.y())).epsilon(1e-12));
    const double c = cde(s, g), x = xye(s, g);
    CHECK(std::abs(c * c + x * x - d.squaredNorm()) <= 1e-12 * std::max(1.0, d.squaredNorm()));
    // Joint order does not matter.
    auto perm = s;
    std::shuffle(perm.joints.begin(), perm.joints.end(), r.engine());
    CHECK(cde(perm, g) == c);
    CHECK(xye(perm, g) == x);
  }
}

TEST_CASE("matching and MetricReport match double-loop oracles") {
  Rng r(5);
  const auto cam = testutil::test_camera();
  for (int scene = 0; scene < 120; ++scene) {
    std::vector<GtPose> gts;
    for (int i = r.integer(0, 4); i > 0; --i) gts.push_back(random_gt(r));
    if (scene % 7 == 0 && !gts.empty()) {
      // Degenerate head segment.
      auto& p = gts[0].pose2d;
      p.joints[1] = p.joints[0] + Eigen::Vector2d(1, 0);
      p.joints[2] = p.joints[0] - Eigen::Vector2d(1, 0);
    }
    std::vector<FinalPose> preds;
    for (const auto& g : gts) {
      if (r.coin(0.8)) preds.push_back(noisy_prediction(r, g, r.uniform(0.5, 6)));
    }
    for (int i = r.integer(0, 2); i > 0; --i) preds.push_back(noisy_prediction(r, random_gt(r), 1));

    const auto match = match_predictions(preds, gts, 0.3);
    // Matching oracle: visit predictions by confidence, take the best free gt.
    std::vector<int> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return preds[a].confidence > preds[b].confidence; });
    std::vector<int> expect(preds.size(), -1);
    std::vector<bool> taken(gts.size(), false);
    for (int i : order) {
      int best = -1;
      double best_iou = 0.3;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g]) continue;
        const double v = iou_2d(bounding_box(preds[i].pose2d), bounding_box(gts[g].pose2d));
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best = int(g);
          best_iou = v;
        }
      }
      if (best >= 0) {
        expect[i] = best;
        taken[best] = true;
      }
    }
    CHECK(match == expect);

    MetricReport rep;
    rep.add_scene(preds, gts, cam);
    double err = 0, cde_s = 0, xye_s = 0;
    long long joints = 0, correct = 0, total = 0, matched = 0, skipped = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (expect[i] < 0) continue;
      ++matched;
      const auto& g = gts[expect[i]];
      for (int j = 0; j < kNumJoints; ++j) {
        if (!g.pose2d.visible[j]) continue;
        err += std::hypot(preds[i].pose2d.joints[j].x() - g.pose2d.joints[j].x(),
                          preds[i].pose2d.joints[j].y() - g.pose2d.joints[j].y());
        ++joints;
      }
      cde_s += cde(preds[i].pose3d, g.box);
      xye_s += xye(preds[i].pose3d, g.box);
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const auto& p = gts[g].pose2d;
      const double seg = (p.joints[0] - 0.5 * (p.joints[1] + p.joints[2])).norm();
      if (seg == 0) {
        ++skipped;
        continue;
      }
      const auto it = std::find(expect.begin(), expect.end(), int(g));
      for (int j = 0; j < kNumJoints; ++j) {
        if (!p.visible[j]) continue;
        ++total;
        if (it != expect.end() && (preds[it - expect.begin()].pose2d.joints[j] - p.joints[j]).norm() < 0.5 * seg) {
          ++correct;
        }
      }
    }
    CHECK(rep.matched == matched);
    CHECK(rep.mpjpe_2d_joints == joints);
    CHECK(rep.mpjpe_2d_sum == doctest::Approx(err).epsilon(1e-12));
    CHECK(rep.pckh_correct == correct);
    CHECK(rep.pckh_total == total);
    CHECK(rep.pckh_skipped == skipped);
    CHECK(rep.cde_sum == doctest::Approx(cde_s).epsilon(1e-12));
    CHECK(rep.xye_sum == doctest::Approx(xye_s).epsilon(1e-12));
    CHECK(rep.gt_count == (long long)gts.size());
    CHECK(rep.false_positives() == (long long)preds.size() - matched);
    if (joints) CHECK(mpjpe_2d(preds, gts, match) == doctest::Approx(err / joints).epsilon(1e-12));
    if (total) CHECK(pckh(preds, gts, match) == doctest::Approx(double(correct) / total).epsilon(1e-12));
  }
}

TEST_CASE("record and report formatting") {
  Skeleton2D p2;
  Skeleton3D p3;
  for (int j = 0; j < kNumJoints; ++j) {
    p2.joints[j] = {j + 0.25, -j - 0.5};
    p3.joints[j] = {0.1 * j, 1.0 / 3.0, 10};
  }
  const auto rec = pose_record(7, 0.5, p2, p3);
  CHECK(rec.rfind("7,0.500000,0.250000,-0.500000,1.250000,-1.500000,", 0) == 0);
  CHECK(rec.find(",0.333333,10.000000") != std::string::npos);
  std::size_t commas = std::count(rec.begin(), rec.end(), ',');
  CHECK(commas == 1 + 2 * kNumJoints + 3 * kNumJoints);
  const auto header = pose_record_header();
  CHECK(std::count(header.begin(), header.end(), ',') == (long)commas);
  CHECK(header.rfind("scene_id,confidence,u0,v0,", 0) == 0);

  MetricReport m;
  m.mpjpe_2d_sum = 10;
  m.mpjpe_2d_joints = 4;
  m.pckh_correct = 3;
  m.pckh_total = 4;
  m.cde_sum = 1;
  m.xye_sum = 0.5;
  m.matched = 2;
  m.gt_count = 4;
  m.pred_count = 3;
  std::ostringstream out;
  write_report(out, m);
  const std::string text = out.str();
  CHECK(text.rfind("metric,value,count\nmpjpe_2d,2.500000,4\npckh,0.750000,4\ncde,0.500000,2\nxye,0.250000,2\n", 0) == 0);
  CHECK(text.find("recall,0.500000,4\n") != std::string::npos);
  CHECK(text.find("false_positives,1.000000,3\n") != std::string::npos);
  CHECK(report_row("fusion", m).find("CDE   0.500 m") != std::string::npos);
}
