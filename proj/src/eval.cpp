#include "hperl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>

#include "hperl/losses.hpp"

namespace hperl {

std::vector<FinalPose> integrate_proposals(std::span<const PoseCandidate> candidates,
                                           const IntegrationOptions& options) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].score > candidates[b].score;
  });
  std::vector<bool> used(candidates.size(), false);
  std::vector<FinalPose> out;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t lead = order[oi];
    if (used[lead]) continue;
    std::vector<std::size_t> members;
    for (std::size_t oj = oi; oj < order.size(); ++oj) {
      const std::size_t c = order[oj];
      if (used[c]) continue;
      if (c == lead || iou_2d(candidates[lead].roi, candidates[c].roi) >= options.iou_threshold) {
        used[c] = true;
        members.push_back(c);
      }
    }
    double mass = 0;
    for (auto m : members) mass += candidates[m].score;
    if (mass < options.score_floor || !(mass > 0)) continue;
    FinalPose fp;
    for (int j = 0; j < kNumJoints; ++j) {
      Eigen::Vector2d p2 = Eigen::Vector2d::Zero();
      Eigen::Vector3d p3 = Eigen::Vector3d::Zero();
      bool v2 = false, v3 = false;
      for (auto m : members) {
        const double w = candidates[m].score / mass;
        p2 += w * candidates[m].pose2d.joints[j];
        p3 += w * candidates[m].pose3d.joints[j];
        v2 = v2 || candidates[m].pose2d.visible[j];
        v3 = v3 || candidates[m].pose3d.visible[j];
      }
      fp.pose2d.joints[j] = p2;
      fp.pose3d.joints[j] = p3;
      fp.pose2d.visible[j] = v2;
      fp.pose3d.visible[j] = v3;
    }
    fp.confidence = std::min(1.0, mass);
    out.push_back(fp);
  }
  return out;
}

std::vector<int> match_predictions(std::span<const FinalPose> preds, std::span<const GtPose> gts,
                                   double iou_threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].confidence > preds[b].confidence;
  });
  std::vector<Box2D> gt_boxes;
  for (const auto& g : gts) gt_boxes.push_back(bounding_box(g.pose2d));
  std::vector<int> match(preds.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (auto i : order) {
    const Box2D pb = bounding_box(preds[i].pose2d);
    double best = -1;
    int best_g = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double iou = iou_2d(pb, gt_boxes[g]);
      if (iou > best) {
        best = iou;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= iou_threshold) {
      match[i] = best_g;
      taken[best_g] = true;
    }
  }
  return match;
}

double head_segment_length(const Skeleton2D& s, const JointLayout& layout) {
  const Eigen::Vector2d neck = 0.5 * (s.joints[layout.left_shoulder] + s.joints[layout.right_shoulder]);
  return (s.joints[layout.head] - neck).norm();
}

Eigen::Vector3d pose_box_center(const Skeleton3D& s) {
  Eigen::Vector3d lo = s.joints[0], hi = s.joints[0];
  for (const auto& p : s.joints) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return 0.5 * (lo + hi);
}

double cde(const Skeleton3D& pred, const Box3D& gt) {
  return std::abs(pose_box_center(pred).z() - gt.center.z());
}

double xye(const Skeleton3D& pred, const Box3D& gt) {
  const Eigen::Vector3d d = pose_box_center(pred) - gt.center;
  return std::hypot(d.x(), d.y());
}

double mpjpe_2d(std::span<const FinalPose> preds, std::span<const GtPose> gts,
                std::span<const int> match) {
  double sum = 0;
  long long n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (match[i] < 0) continue;
    const auto& g = gts[match[i]].pose2d;
    for (int j = 0; j < kNumJoints; ++j) {
      if (!g.visible[j]) continue;
      sum += (preds[i].pose2d.joints[j] - g.joints[j]).norm();
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

namespace {

struct PckCount {
  long long correct = 0, total = 0, skipped = 0;
};

// Joint-level PCKh counts; `pred_joint` maps (pred index, joint) to a 2D point
// or nullopt when it cannot be evaluated.
template <typename PredJoint>
PckCount pckh_counts(std::size_t n_preds, std::span<const GtPose> gts, std::span<const int> match,
                     double alpha, const JointLayout& layout, PredJoint pred_joint) {
  std::vector<int> pred_of(gts.size(), -1);
  for (std::size_t i = 0; i < n_preds; ++i) {
    if (match[i] >= 0) pred_of[match[i]] = static_cast<int>(i);
  }
  PckCount c;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto& gp = gts[g].pose2d;
    const double seg = head_segment_length(gp, layout);
    if (!(seg > 0)) {
      ++c.skipped;
      continue;
    }
    for (int j = 0; j < kNumJoints; ++j) {
      if (!gp.visible[j]) continue;
      ++c.total;
      if (pred_of[g] < 0) continue;
      const auto p = pred_joint(static_cast<std::size_t>(pred_of[g]), j);
      if (p && (*p - gp.joints[j]).norm() < alpha * seg) ++c.correct;
    }
  }
  return c;
}

}  // namespace

double pckh(std::span<const FinalPose> preds, std::span<const GtPose> gts, std::span<const int> match,
            double alpha, const JointLayout& layout) {
  const auto c = pckh_counts(preds.size(), gts, match, alpha, layout,
                             [&](std::size_t i, int j) -> std::optional<Eigen::Vector2d> {
                               return preds[i].pose2d.joints[j];
                             });
  return c.total ? static_cast<double>(c.correct) / c.total : std::numeric_limits<double>::quiet_NaN();
}

void MetricReport::add_scene(std::span<const FinalPose> preds, std::span<const GtPose> gts,
                             const CameraIntrinsics& cam, double match_iou, double alpha,
                             const JointLayout& layout) {
  const auto match = match_predictions(preds, gts, match_iou);
  gt_count += static_cast<long long>(gts.size());
  pred_count += static_cast<long long>(preds.size());
  auto projected = [&](std::size_t i, int j) -> std::optional<Eigen::Vector2d> {
    const auto& p = preds[i].pose3d.joints[j];
    if (!(p.z() > 0)) return std::nullopt;
    return project_point(cam, p);
  };
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (match[i] < 0) continue;
    ++matched;
    const auto& g = gts[match[i]];
    for (int j = 0; j < kNumJoints; ++j) {
      if (!g.pose2d.visible[j]) continue;
      mpjpe_2d_sum += (preds[i].pose2d.joints[j] - g.pose2d.joints[j]).norm();
      ++mpjpe_2d_joints;
      const auto pj = projected(i, j);
      // A joint behind the camera has no projection; charge it the image diagonal.
      mpjpe_proj_sum += pj ? (*pj - g.pose2d.joints[j]).norm() : std::hypot(cam.width, cam.height);
    }
    cde_sum += hperl::cde(preds[i].pose3d, g.box);
    xye_sum += hperl::xye(preds[i].pose3d, g.box);
  }
  const auto c2 = pckh_counts(preds.size(), gts, match, alpha, layout,
                              [&](std::size_t i, int j) -> std::optional<Eigen::Vector2d> {
                                return preds[i].pose2d.joints[j];
                              });
  const auto c3 = pckh_counts(preds.size(), gts, match, alpha, layout, projected);
  pckh_correct += c2.correct;
  pckh_total += c2.total;
  pckh_skipped += c2.skipped;
  pckh_proj_correct += c3.correct;
}

namespace {
double ratio(double num, long long den) {
  return den ? num / static_cast<double>(den) : std::numeric_limits<double>::quiet_NaN();
}
}  // namespace

double MetricReport::mpjpe_2d() const { return ratio(mpjpe_2d_sum, mpjpe_2d_joints); }
double MetricReport::mpjpe_proj() const { return ratio(mpjpe_proj_sum, mpjpe_2d_joints); }
double MetricReport::pckh() const { return ratio(static_cast<double>(pckh_correct), pckh_total); }
double MetricReport::pckh_proj() const { return ratio(static_cast<double>(pckh_proj_correct), pckh_total); }
double MetricReport::cde() const { return ratio(cde_sum, matched); }
double MetricReport::xye() const { return ratio(xye_sum, matched); }
double MetricReport::recall() const { return ratio(static_cast<double>(matched), gt_count); }

namespace {
std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string pose_record_header() {
  std::string h = "scene_id,confidence";
  for (int j = 0; j < kNumJoints; ++j) h += ",u" + std::to_string(j) + ",v" + std::to_string(j);
  for (int j = 0; j < kNumJoints; ++j) {
    h += ",x" + std::to_string(j) + ",y" + std::to_string(j) + ",z" + std::to_string(j);
  }
  return h;
}

std::string pose_record(std::int64_t scene_id, double confidence, const Skeleton2D& p2,
                        const Skeleton3D& p3) {
  std::string r = std::to_string(scene_id) + "," + fmt6(confidence);
  for (int j = 0; j < kNumJoints; ++j) r += "," + fmt6(p2.joints[j].x()) + "," + fmt6(p2.joints[j].y());
  for (int j = 0; j < kNumJoints; ++j) {
    r += "," + fmt6(p3.joints[j].x()) + "," + fmt6(p3.joints[j].y()) + "," + fmt6(p3.joints[j].z());
  }
  return r;
}

void write_report(std::ostream& out, const MetricReport& r) {
  out << "metric,value,count\n";
  auto row = [&](const char* name, double v, long long n) { out << name << ',' << fmt6(v) << ',' << n << '\n'; };
  row("mpjpe_2d", r.mpjpe_2d(), r.mpjpe_2d_joints);
  row("pckh", r.pckh(), r.pckh_total);
  row("cde", r.cde(), r.matched);
  row("xye", r.xye(), r.matched);
  row("mpjpe_2d_projected", r.mpjpe_proj(), r.mpjpe_2d_joints);
  row("pckh_projected", r.pckh_proj(), r.pckh_total);
  row("recall", r.recall(), r.gt_count);
  row("false_positives", static_cast<double>(r.false_positives()), r.pred_count);
  row("pckh_skipped", static_cast<double>(r.pckh_skipped), r.gt_count);
}

void write_report(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path.string());
  write_report(out, r);
}

std::string report_row(const std::string& label, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s  MPJPE %8.3f px  PCKh %6.4f  CDE %7.3f m  XYE %7.3f m  recall %5.3f",
                label.c_str(), r.mpjpe_2d(), r.pckh(), r.cde(), r.xye(), r.recall());
  return buf;
}

}  // namespace hperl
