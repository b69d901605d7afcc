#include "hperl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hperl {

double iou_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double iou_bev(const AnchorBox3D& a, const AnchorBox3D& b, const AreaExtents& extents,
               double resolution) {
  // IoU is invariant to the raster's offset and scale, so footprints outside
  // the extents are compared in the same raster frame without clipping.
  const auto footprint = [&](const AnchorBox3D& box) {
    return Box2D{(box.center.x() - 0.5 * box.w() - extents.x_min) / resolution,
                 (box.center.z() - 0.5 * box.l() - extents.z_min) / resolution,
                 (box.center.x() + 0.5 * box.w() - extents.x_min) / resolution,
                 (box.center.z() + 0.5 * box.l() - extents.z_min) / resolution};
  };
  return iou_2d(footprint(a), footprint(b));
}

int AssignmentResult::num_foreground() const {
  return static_cast<int>(std::count(foreground.begin(), foreground.end(), true));
}

int closest_anchor_pose(const AnchorPoseSet& poses, const Box2D& box, const Skeleton2D& pose) {
  int best = 1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= poses.size(); ++k) {
    const Skeleton2D fitted = fit_anchor_pose_to_roi(poses, k, box);
    double d = 0;
    for (int j = 0; j < kNumJoints; ++j) {
      if (pose.visible[j]) d += (fitted.joints[j] - pose.joints[j]).norm();
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

AssignmentResult assign_targets(std::span<const RoiBox> rois, std::span<const GroundTruth> gts,
                                const AnchorPoseSet& poses, const AssignOptions& options) {
  AssignmentResult out;
  out.matched_gt.assign(rois.size(), -1);
  out.k_target.assign(rois.size(), 0);
  out.foreground.assign(rois.size(), false);

  std::vector<int> gt_class(gts.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    gt_class[g] = closest_anchor_pose(poses, gts[g].image, gts[g].pose);
  }
  for (std::size_t r = 0; r < rois.size(); ++r) {
    double best = -1.0;
    int best_g = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      double iou = 0;
      if (options.mode == IouMode::bev) {
        if (!rois[r].box3d || !gts[g].box3d) throw InvalidArgument("bev assignment needs 3D boxes");
        iou = iou_bev(*rois[r].box3d, *gts[g].box3d, options.extents, options.resolution);
      } else {
        iou = iou_2d(rois[r].image, gts[g].image);
      }
      if (iou > best) {
        best = iou;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= options.fg_iou) {
      out.matched_gt[r] = best_g;
      out.k_target[r] = gt_class[best_g];
      out.foreground[r] = true;
    }
  }
  return out;
}

double smooth_l1(double x, double beta) {
  const double ax = std::abs(x);
  return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0 ? 1.0 : -1.0;
}

namespace {

int count_fg(const std::vector<bool>& fg) {
  return static_cast<int>(std::count(fg.begin(), fg.end(), true));
}

int visible_count(const Skeleton2D& t) {
  return static_cast<int>(std::count(t.visible.begin(), t.visible.end(), true));
}

}  // namespace

PoseLoss2D loss_2d(std::span<const Skeleton2D> pred, std::span<const Skeleton2D> targets,
                   const std::vector<bool>& foreground, double beta) {
  if (pred.size() != targets.size() || pred.size() != foreground.size()) {
    throw InvalidArgument("loss_2d: prediction, target and mask sizes differ");
  }
  PoseLoss2D out;
  out.grad.assign(pred.size(), PoseGrad2D{});
  for (auto& g : out.grad) g.fill(Eigen::Vector2d::Zero());
  const int n_fg = count_fg(foreground);
  if (n_fg == 0) return out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!foreground[i]) continue;
    const int m = 2 * visible_count(targets[i]);
    if (m == 0) continue;
    const double scale = 1.0 / (static_cast<double>(m) * n_fg);
    double sum = 0;
    for (int j = 0; j < kNumJoints; ++j) {
      if (!targets[i].visible[j]) continue;
      const Eigen::Vector2d r = pred[i].joints[j] - targets[i].joints[j];
      sum += smooth_l1(r.x(), beta) + smooth_l1(r.y(), beta);
      out.grad[i][j] = scale * Eigen::Vector2d(smooth_l1_grad(r.x(), beta), smooth_l1_grad(r.y(), beta));
    }
    out.value += sum / m;
  }
  out.value /= n_fg;
  return out;
}

PoseLoss3D loss_3d(std::span<const Skeleton3D> pred, std::span<const Skeleton2D> targets,
                   const CameraIntrinsics& cam, const std::vector<bool>& foreground, double beta) {
  if (pred.size() != targets.size() || pred.size() != foreground.size()) {
    throw InvalidArgument("loss_3d: prediction, target and mask sizes differ");
  }
  PoseLoss3D out;
  out.grad.assign(pred.size(), PoseGrad3D{});
  for (auto& g : out.grad) g.fill(Eigen::Vector3d::Zero());
  const int n_fg = count_fg(foreground);
  if (n_fg == 0) return out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!foreground[i]) continue;
    const int m = 2 * visible_count(targets[i]);
    if (m == 0) continue;
    const double scale = 1.0 / (static_cast<double>(m) * n_fg);
    double sum = 0;
    for (int j = 0; j < kNumJoints; ++j) {
      if (!targets[i].visible[j]) continue;
      const Eigen::Vector3d& p = pred[i].joints[j];
      if (!(p.z() > 0)) {
        throw BehindCameraError("loss_3d: foreground joint " + std::to_string(j) + " of roi " +
                                    std::to_string(i) + " is behind the camera",
                                j);
      }
      const Eigen::Vector2d r = project_point(cam, p) - targets[i].joints[j];
      sum += smooth_l1(r.x(), beta) + smooth_l1(r.y(), beta);
      const Eigen::Vector2d dr(smooth_l1_grad(r.x(), beta), smooth_l1_grad(r.y(), beta));
      out.grad[i][j] = scale * (project_jacobian(cam, p).transpose() * dr);
    }
    out.value += sum / m;
  }
  out.value /= n_fg;
  return out;
}

ClassLoss loss_cls(std::span<const double> logits, int num_classes, std::span<const int> targets) {
  if (num_classes <= 0 || logits.size() != targets.size() * static_cast<std::size_t>(num_classes)) {
    throw InvalidArgument("loss_cls: logits do not match [N, num_classes]");
  }
  ClassLoss out;
  out.grad.assign(logits.size(), 0.0);
  const std::size_t n = targets.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * num_classes;
    const int t = targets[i];
    if (t < 0 || t >= num_classes) throw InvalidArgument("loss_cls: target class out of range");
    const double mx = *std::max_element(row, row + num_classes);
    double z = 0;
    for (int c = 0; c < num_classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    out.value += log_z - row[t];
    for (int c = 0; c < num_classes; ++c) {
      const double p = std::exp(row[c] - log_z);
      out.grad[i * num_classes + c] = (p - (c == t ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  out.value /= static_cast<double>(n);
  return out;
}

std::vector<int> label_anchors(std::span<const double> iou, std::size_t num_anchors,
                               std::size_t num_gt, double pos_iou, double neg_iou,
                               std::vector<int>* matched_gt) {
  std::vector<int> labels(num_anchors, -1);
  std::vector<int> match(num_anchors, -1);
  for (std::size_t a = 0; a < num_anchors; ++a) {
    double best = 0;
    int best_g = -1;
    for (std::size_t g = 0; g < num_gt; ++g) {
      const double v = iou[a * num_gt + g];
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    match[a] = best_g;
    if (best >= pos_iou) {
      labels[a] = 1;
    } else if (best < neg_iou) {
      labels[a] = 0;
    }
  }
  for (std::size_t g = 0; g < num_gt; ++g) {
    double best = 0;
    std::size_t best_a = num_anchors;
    for (std::size_t a = 0; a < num_anchors; ++a) {
      if (iou[a * num_gt + g] > best) {
        best = iou[a * num_gt + g];
        best_a = a;
      }
    }
    if (best_a < num_anchors) {
      labels[best_a] = 1;
      match[best_a] = static_cast<int>(g);
    }
  }
  if (matched_gt) *matched_gt = std::move(match);
  return labels;
}

std::vector<int> sample_anchor_labels(std::span<const int> labels, int batch, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos.push_back(i);
    if (labels[i] == 0) neg.push_back(i);
  }
  std::mt19937_64 rng(seed);
  auto take = [&](std::vector<std::size_t>& v, std::size_t n) {
    // Partial Fisher-Yates: the first n entries become the sample.
    n = std::min(n, v.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, v.size() - 1);
      std::swap(v[i], v[d(rng)]);
    }
    v.resize(n);
  };
  take(pos, static_cast<std::size_t>(batch / 2));
  take(neg, static_cast<std::size_t>(batch) - pos.size());
  std::vector<int> out(labels.size(), -1);
  for (auto i : pos) out[i] = 1;
  for (auto i : neg) out[i] = 0;
  return out;
}

RpnLoss loss_rpn(std::span<const double> objectness, std::span<const double> deltas,
                 const RpnTargets& targets, double beta) {
  const std::size_t n = objectness.size();
  const auto dim = static_cast<std::size_t>(targets.dim);
  if (targets.labels.size() != n || deltas.size() != n * dim || targets.deltas.size() != n * dim) {
    throw InvalidArgument("loss_rpn: inconsistent sizes");
  }
  RpnLoss out;
  out.grad_objectness.assign(n, 0.0);
  out.grad_deltas.assign(n * dim, 0.0);
  std::size_t n_lab = 0, n_pos = 0;
  for (int l : targets.labels) {
    n_lab += l >= 0;
    n_pos += l == 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int l = targets.labels[i];
    if (l < 0) continue;
    const double x = objectness[i];
    // log(1 + exp(-|x|)) + max(x, 0) - x * y
    out.objectness += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * l;
    const double p = 1.0 / (1.0 + std::exp(-x));
    out.grad_objectness[i] = (p - l) / static_cast<double>(n_lab);
  }
  if (n_lab > 0) out.objectness /= static_cast<double>(n_lab);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets.labels[i] != 1) continue;
    for (std::size_t d = 0; d < dim; ++d) {
      const double r = deltas[i * dim + d] - targets.deltas[i * dim + d];
      out.regression += smooth_l1(r, beta);
      out.grad_deltas[i * dim + d] = smooth_l1_grad(r, beta) / static_cast<double>(n_pos);
    }
  }
  if (n_pos > 0) out.regression /= static_cast<double>(n_pos);
  return out;
}

LossReport LossReport::combine(double rpn_obj, double rpn_reg, double cls, double l2d, double l3d,
                               const LossWeights& w) {
  LossReport r;
  r.l_rpn_obj = rpn_obj;
  r.l_rpn_reg = rpn_reg;
  r.l_cls = cls;
  r.l_2d = l2d;
  r.l_3d = l3d;
  r.l_total = w.rpn_obj * rpn_obj + w.rpn_reg * rpn_reg + w.cls * cls + w.pose_2d * l2d +
              w.pose_3d * l3d;
  return r;
}

LossReport& LossReport::operator+=(const LossReport& o) {
  l_total += o.l_total;
  l_rpn_obj += o.l_rpn_obj;
  l_rpn_reg += o.l_rpn_reg;
  l_cls += o.l_cls;
  l_2d += o.l_2d;
  l_3d += o.l_3d;
  return *this;
}

LossReport LossReport::scaled(double s) const {
  LossReport r = *this;
  r.l_total *= s;
  r.l_rpn_obj *= s;
  r.l_rpn_reg *= s;
  r.l_cls *= s;
  r.l_2d *= s;
  r.l_3d *= s;
  return r;
}

}  // namespace hperl
