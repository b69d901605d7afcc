#include "hperl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hperl/nn/ops.hpp"

namespace hperl {

using nn::Tensor;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("model config: " + m); };
  if (joints != kNumJoints) fail("joints must be " + std::to_string(kNumJoints));
  if (num_poses != kNumAnchorPoses) fail("num_poses must match the anchor pose set (" +
                                         std::to_string(kNumAnchorPoses) + ")");
  if (channels < 1 || gn_groups < 1 || channels % gn_groups != 0 || 8 % gn_groups != 0) {
    fail("channels and 8 must be divisible by gn_groups");
  }
  if (stage1_channels < 1 || stage1_crop < 1 || stage2_crop < 1 || stage1_hidden < 1 ||
      stage2_hidden < 1) {
    fail("layer sizes must be positive");
  }
  if (!(bev_resolution > 0)) fail("bev_resolution must be > 0");
  if (rpn_batch < 2) fail("rpn_batch must be >= 2");
  if (!(rpn_neg_iou <= rpn_pos_iou) || rpn_neg_iou < 0 || rpn_pos_iou > 1) fail("rpn IoU thresholds");
  if (pre_nms_top < 1 || top_n < 1) fail("pre_nms_top and top_n must be >= 1");
  if (!(nms_iou > 0 && nms_iou <= 1)) fail("nms_iou must be in (0, 1]");
  if (!(image_anchor_stride > 0) || !(image_anchor_aspect > 0) || image_anchor_heights.empty()) {
    fail("image anchors need positive stride, aspect and at least one height");
  }
  for (double h : image_anchor_heights) {
    if (!(h > 0)) fail("image anchor heights must be > 0");
  }
  if (!(fg_iou > 0 && fg_iou <= 1)) fail("fg_iou must be in (0, 1]");
  if (!(smooth_l1_beta > 0)) fail("smooth_l1_beta must be > 0");
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (!(lr_decay > 0) || lr_decay_every < 0) fail("lr decay");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (ransac_iterations < 1 || !(ransac_threshold > 0)) fail("ransac settings");
  if (!(det_score >= 0 && det_score <= 1)) fail("det_score must be in [0, 1]");
  if (!(divergence_threshold > 0)) fail("divergence_threshold must be > 0");
}

AreaExtents symmetric_extents(const AreaExtents& e) {
  AreaExtents s = e;
  const double r = std::max(std::abs(e.x_min), std::abs(e.x_max));
  s.x_min = -r;
  s.x_max = r;
  return s;
}

namespace {

Box2D clip_box(const Box2D& b, double w, double h) {
  return {std::clamp(b.x0, 0.0, w), std::clamp(b.y0, 0.0, h), std::clamp(b.x1, 0.0, w),
          std::clamp(b.y1, 0.0, h)};
}

Box2D bev_footprint(const Box3D& b, const AreaExtents& e, double res) {
  return {(b.center.x() - 0.5 * b.w() - e.x_min) / res, (b.center.z() - 0.5 * b.l() - e.z_min) / res,
          (b.center.x() + 0.5 * b.w() - e.x_min) / res, (b.center.z() + 0.5 * b.l() - e.z_min) / res};
}

// Columns [c0, c0 + n) of a row-major [rows, width] matrix, copied out.
std::vector<double> columns(const std::vector<double>& m, std::size_t width, std::size_t c0,
                            std::size_t n) {
  const std::size_t rows = width ? m.size() / width : 0;
  std::vector<double> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = m[r * width + c0 + c];
  }
  return out;
}

}  // namespace

SceneInput prepare_input(const Scene& scene, const ModelConfig& cfg, const AreaExtents& extents) {
  SceneInput in;
  in.camera = scene.camera;
  const int W = scene.camera.width, H = scene.camera.height;
  if (scene.image.size() != static_cast<std::size_t>(W) * H * 3) {
    throw InvalidArgument("scene image does not match the camera size");
  }
  std::vector<double> img(static_cast<std::size_t>(3) * W * H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        img[(static_cast<std::size_t>(c) * H + y) * W + x] =
            scene.image[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0 - 0.5;
      }
    }
  }
  in.image = Tensor::from({3, H, W}, std::move(img));

  in.ground = fit_ground_plane(scene.cloud, scene.seed, cfg.ransac_iterations, cfg.ransac_threshold, 0.0);
  const double g = in.ground.y_at(0.0, 0.0);
  in.extents = symmetric_extents(extents);
  in.extents.y_min = g - 2.5;
  in.extents.y_max = g - 0.1;

  if (cfg.mode == InputMode::fusion) {
    const BevGrid bev = encode_bev(scene.cloud, in.extents, cfg.bev_resolution);
    in.bev = Tensor::from({kBevChannels, bev.rows, bev.cols}, bev.data);
    const Plane anchor_plane = in.ground.shifted_y(-0.5 * kAnchorTemplateSize.y());
    const auto grid = generate_anchor_grid(anchor_plane, in.extents, kAnchorStride);
    for (std::size_t i : non_empty_anchors(grid, bev)) {
      const Box3D& b = grid[i];
      if (b.center.z() - 0.5 * b.l() < 0.5) continue;
      in.anchors.push_back({image_roi(in.camera, b), b});
    }
  } else {
    for (const Box2D& b : generate_image_anchors(W, H, cfg.image_anchor_stride, cfg.image_anchor_heights,
                                                 cfg.image_anchor_aspect)) {
      in.anchors.push_back({b, std::nullopt});
    }
  }
  return in;
}

SceneTargets prepare_targets(const Scene& scene, const SceneInput& input) {
  SceneTargets t;
  for (const auto& p : scene.gt) {
    t.gts.push_back({image_roi(input.camera, p.box), p.box, p.pose2d});
  }
  return t;
}

ToyNet::ToyNet(const ModelConfig& cfg, const AnchorPoseSet& poses) : cfg_(cfg), poses_(poses) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  auto normal = [&](const std::string& name, nn::Shape shape, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(nn::numel(shape));
    for (auto& x : v) x = stddev > 0 ? d(rng) : 0.0;
    params_.push_back({name, Tensor::from(shape, std::move(v), true, name)});
  };
  auto constant = [&](const std::string& name, nn::Shape shape, double c) {
    params_.push_back({name, Tensor::from(shape, std::vector<double>(nn::numel(shape), c), true, name)});
  };
  auto backbone_params = [&](const std::string& prefix, int in_ch) {
    const int ch[4] = {in_ch, 8, 16, cfg_.channels};
    for (int l = 1; l <= 3; ++l) {
      const std::string n = prefix + ".conv" + std::to_string(l);
      normal(n + ".w", {ch[l], ch[l - 1], 3, 3}, std::sqrt(2.0 / (ch[l - 1] * 9)));
      constant(n + ".b", {ch[l]}, 0.0);
      const std::string gn = prefix + ".gn" + std::to_string(l);
      constant(gn + ".gamma", {ch[l]}, 1.0);
      constant(gn + ".beta", {ch[l]}, 0.0);
    }
  };
  const bool fusion = cfg_.mode == InputMode::fusion;
  backbone_params("rgb", 3);
  if (fusion) backbone_params("bev", kBevChannels);

  const int C = cfg_.channels, R1 = cfg_.stage1_channels;
  normal("s1.proj_rgb.w", {R1, C}, std::sqrt(1.0 / C));
  constant("s1.proj_rgb.b", {R1}, 0.0);
  if (fusion) {
    normal("s1.proj_bev.w", {R1, C}, std::sqrt(1.0 / C));
    constant("s1.proj_bev.b", {R1}, 0.0);
  }
  const int s1_in = R1 * cfg_.stage1_crop * cfg_.stage1_crop;
  normal("s1.fc1.w", {cfg_.stage1_hidden, s1_in}, std::sqrt(2.0 / s1_in));
  constant("s1.fc1.b", {cfg_.stage1_hidden}, 0.0);
  normal("s1.fc2.w", {1 + cfg_.box_dim(), cfg_.stage1_hidden}, 0.01);
  constant("s1.fc2.b", {1 + cfg_.box_dim()}, 0.0);

  const int fused = (fusion && cfg_.fusion == FusionOp::concat) ? 2 * C : C;
  const int s2_in = fused * cfg_.stage2_crop * cfg_.stage2_crop;
  normal("s2.fc.w", {cfg_.stage2_hidden, s2_in}, std::sqrt(2.0 / s2_in));
  constant("s2.fc.b", {cfg_.stage2_hidden}, 0.0);
  normal("s2.cls.w", {cfg_.num_classes(), cfg_.stage2_hidden}, 0.01);
  constant("s2.cls.b", {cfg_.num_classes()}, 0.0);
  normal("s2.reg.w", {cfg_.delta_width(), cfg_.stage2_hidden}, 0.001);
  constant("s2.reg.b", {cfg_.delta_width()}, 0.0);
}

nn::Tensor& ToyNet::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw InvalidArgument("no parameter named '" + name + "'");
}

const nn::Tensor& ToyNet::p(const std::string& name) const {
  return const_cast<ToyNet*>(this)->parameter(name);
}

Tensor ToyNet::backbone(const Tensor& x, const std::string& prefix) const {
  Tensor h = x;
  const int strides[3] = {2, 2, 1};
  for (int l = 1; l <= 3; ++l) {
    const std::string n = prefix + ".conv" + std::to_string(l);
    const std::string gn = prefix + ".gn" + std::to_string(l);
    h = nn::conv2d(h, p(n + ".w"), p(n + ".b"), strides[l - 1], 1, n);
    h = nn::group_norm(h, cfg_.gn_groups, p(gn + ".gamma"), p(gn + ".beta"), gn);
    h = nn::relu(h, prefix + ".relu" + std::to_string(l));
  }
  return h;
}

Features ToyNet::extract(const SceneInput& in) const {
  const bool fusion = cfg_.mode == InputMode::fusion;
  if (fusion != in.bev.defined()) {
    throw InvalidArgument(fusion ? "fusion model needs a BEV input" : "RGB model must not get a BEV input");
  }
  Features f;
  f.rgb = backbone(in.image, "rgb");
  if (fusion) f.bev = backbone(in.bev, "bev");
  return f;
}

Tensor ToyNet::crop(const Tensor& features, std::span<const Box2D> boxes, double scale, int size,
                    const std::string& name) const {
  if (cfg_.roi_op == RoiOp::align) return nn::roi_align(features, boxes, scale, size, size, name);
  return nn::roi_pool(features, boxes, scale, size, size, name);
}

std::vector<Box2D> ToyNet::image_boxes(const SceneInput& in, std::span<const RoiBox> rois) const {
  std::vector<Box2D> out;
  out.reserve(rois.size());
  for (const auto& r : rois) out.push_back(clip_box(r.image, in.camera.width, in.camera.height));
  return out;
}

std::vector<Box2D> ToyNet::bev_boxes(const SceneInput& in, std::span<const RoiBox> rois) const {
  std::vector<Box2D> out;
  out.reserve(rois.size());
  for (const auto& r : rois) {
    if (!r.box3d) throw InvalidArgument("fusion RoI without a 3D box");
    out.push_back(bev_footprint(*r.box3d, in.extents, cfg_.bev_resolution));
  }
  return out;
}

Tensor ToyNet::stage1(const Features& f, const SceneInput& in, std::span<const std::size_t> anchors) const {
  std::vector<RoiBox> rois;
  rois.reserve(anchors.size());
  for (auto i : anchors) rois.push_back(in.anchors.at(i));
  const double scale = 1.0 / kFeatureStride;
  const int S = cfg_.stage1_crop;
  const int n = static_cast<int>(rois.size());
  Tensor x = nn::conv1x1(crop(f.rgb, image_boxes(in, rois), scale, S, "s1.crop_rgb"), p("s1.proj_rgb.w"),
                         p("s1.proj_rgb.b"), "s1.proj_rgb");
  if (cfg_.mode == InputMode::fusion) {
    Tensor b = nn::conv1x1(crop(f.bev, bev_boxes(in, rois), scale, S, "s1.crop_bev"), p("s1.proj_bev.w"),
                           p("s1.proj_bev.b"), "s1.proj_bev");
    x = nn::mean_fuse(x, b, "s1.fuse");
  }
  x = nn::reshape(x, {n, cfg_.stage1_channels * S * S}, "s1.flatten");
  x = nn::relu(nn::linear(x, p("s1.fc1.w"), p("s1.fc1.b"), "s1.fc1"), "s1.relu");
  return nn::linear(x, p("s1.fc2.w"), p("s1.fc2.b"), "s1.fc2");
}

Tensor ToyNet::stage2_input(const Features& f, const SceneInput& in, std::span<const RoiBox> rois) const {
  const double scale = 1.0 / kFeatureStride;
  const int S = cfg_.stage2_crop;
  Tensor x = crop(f.rgb, image_boxes(in, rois), scale, S, "s2.crop_rgb");
  if (cfg_.mode == InputMode::fusion) {
    Tensor b = crop(f.bev, bev_boxes(in, rois), scale, S, "s2.crop_bev");
    x = cfg_.fusion == FusionOp::concat ? nn::concat_channels(x, b, "s2.fuse") : nn::mean_fuse(x, b, "s2.fuse");
  }
  return x;
}

HeadOutput ToyNet::stage2(const Features& f, const SceneInput& in, std::span<const RoiBox> rois) const {
  Tensor x = stage2_input(f, in, rois);
  const int n = static_cast<int>(rois.size());
  x = nn::reshape(x, {n, static_cast<int>(x.size() / std::max(n, 1))}, "s2.flatten");
  x = nn::relu(nn::linear(x, p("s2.fc.w"), p("s2.fc.b"), "s2.fc"), "s2.relu");
  return {nn::linear(x, p("s2.cls.w"), p("s2.cls.b"), "s2.cls"),
          nn::linear(x, p("s2.reg.w"), p("s2.reg.b"), "s2.reg")};
}

RoiBox ToyNet::roi_from_box3d(const CameraIntrinsics& cam, const Box3D& b) const {
  return {image_roi(cam, b), b};
}

RoiBox ToyNet::roi_from_image(const CameraIntrinsics& cam, const Box2D& b) const {
  return {b, box_from_image_roi(cam, b, box_prior_.y(), box_prior_.z())};
}

std::vector<RoiBox> ToyNet::propose(const std::vector<double>& s1, const SceneInput& in) const {
  const std::size_t width = 1 + cfg_.box_dim();
  const std::size_t n = in.anchors.size();
  if (s1.size() != n * width) throw InvalidArgument("stage-1 output does not match the anchor count");
  const double W = in.camera.width, H = in.camera.height;
  const bool fusion = cfg_.mode == InputMode::fusion;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s1[a * width] > s1[b * width];
  });

  std::vector<RoiBox> cands;
  for (std::size_t oi = 0; oi < n && static_cast<int>(cands.size()) < cfg_.pre_nms_top; ++oi) {
    const std::size_t i = order[oi];
    std::span<const double> d(s1.data() + i * width + 1, width - 1);
    if (fusion) {
      const Box3D b = decode_box_3d(*in.anchors[i].box3d, d);
      if (!b.valid() || b.center.z() - 0.5 * b.l() < 0.5) continue;
      const RoiBox r = roi_from_box3d(in.camera, b);
      if (clip_box(r.image, W, H).area() < 1.0) continue;
      cands.push_back(r);
    } else {
      const Box2D b = clip_box(decode_box_2d(in.anchors[i].image, d), W, H);
      if (b.width() < 2.0 || b.height() < 2.0) continue;
      cands.push_back(roi_from_image(in.camera, b));
    }
  }

  std::vector<RoiBox> keep;
  for (const auto& c : cands) {
    if (static_cast<int>(keep.size()) >= cfg_.top_n) break;
    bool suppressed = false;
    for (const auto& k : keep) {
      const double iou = fusion ? iou_bev(*c.box3d, *k.box3d, in.extents, cfg_.bev_resolution)
                                : iou_2d(c.image, k.image);
      if (iou > cfg_.nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(c);
  }
  return keep;
}

Skeleton2D ToyNet::decode_pose_2d(std::span<const double> deltas, int k, const RoiBox& roi) const {
  Skeleton2D s = fit_anchor_pose_to_roi(poses_, k, roi.image);
  const double w = roi.image.width(), h = roi.image.height();
  for (int j = 0; j < kNumJoints; ++j) {
    s.joints[j].x() += deltas[delta_index(k, j, 0)] * w;
    s.joints[j].y() += deltas[delta_index(k, j, 1)] * h;
  }
  return s;
}

Skeleton3D ToyNet::decode_pose_3d(std::span<const double> deltas, int k, const RoiBox& roi) const {
  if (!roi.box3d) throw InvalidArgument("3D decoding needs the RoI's 3D box");
  Skeleton3D s = fit_anchor_pose_3d(poses_, k, *roi.box3d);
  for (int j = 0; j < kNumJoints; ++j) {
    for (int c = 0; c < 3; ++c) s.joints[j][c] += deltas[delta_index(k, j, 2 + c)];
  }
  return s;
}

void ToyNet::encode_pose_2d(const Skeleton2D& target, int k, const RoiBox& roi, std::span<double> deltas) const {
  const Skeleton2D base = fit_anchor_pose_to_roi(poses_, k, roi.image);
  const double w = roi.image.width(), h = roi.image.height();
  for (int j = 0; j < kNumJoints; ++j) {
    deltas[delta_index(k, j, 0)] = (target.joints[j].x() - base.joints[j].x()) / w;
    deltas[delta_index(k, j, 1)] = (target.joints[j].y() - base.joints[j].y()) / h;
  }
}

void ToyNet::encode_pose_3d(const Skeleton3D& target, int k, const RoiBox& roi, std::span<double> deltas) const {
  if (!roi.box3d) throw InvalidArgument("3D encoding needs the RoI's 3D box");
  const Skeleton3D base = fit_anchor_pose_3d(poses_, k, *roi.box3d);
  for (int j = 0; j < kNumJoints; ++j) {
    for (int c = 0; c < 3; ++c) deltas[delta_index(k, j, 2 + c)] = target.joints[j][c] - base.joints[j][c];
  }
}

StepPlan ToyNet::plan_step(const Features& f, const SceneInput& in, const SceneTargets& t,
                           std::uint64_t sample_seed) const {
  nn::NoGradGuard guard;
  const bool fusion = cfg_.mode == InputMode::fusion;
  const std::size_t na = in.anchors.size(), ng = t.gts.size();
  StepPlan plan;

  std::vector<double> iou(na * ng);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t g = 0; g < ng; ++g) {
      iou[a * ng + g] = fusion ? iou_bev(*in.anchors[a].box3d, *t.gts[g].box3d, in.extents, cfg_.bev_resolution)
                               : iou_2d(in.anchors[a].image, t.gts[g].image);
    }
  }
  std::vector<int> matched;
  const auto labels = label_anchors(iou, na, ng, cfg_.rpn_pos_iou, cfg_.rpn_neg_iou, &matched);
  const auto sampled = sample_anchor_labels(labels, cfg_.rpn_batch, sample_seed);
  const int dim = cfg_.box_dim();
  plan.rpn.dim = dim;
  for (std::size_t a = 0; a < na; ++a) {
    if (sampled[a] < 0) continue;
    plan.rpn_anchors.push_back(a);
    plan.rpn.labels.push_back(sampled[a]);
    plan.rpn.matched_gt.push_back(sampled[a] == 1 ? matched[a] : -1);
    if (sampled[a] == 1) {
      const auto& gt = t.gts[static_cast<std::size_t>(matched[a])];
      if (fusion) {
        const auto d = encode_box_3d(*in.anchors[a].box3d, *gt.box3d);
        plan.rpn.deltas.insert(plan.rpn.deltas.end(), d.begin(), d.end());
      } else {
        const auto d = encode_box_2d(in.anchors[a].image, gt.image);
        plan.rpn.deltas.insert(plan.rpn.deltas.end(), d.begin(), d.end());
      }
    } else {
      plan.rpn.deltas.insert(plan.rpn.deltas.end(), static_cast<std::size_t>(dim), 0.0);
    }
  }

  std::vector<std::size_t> all(na);
  std::iota(all.begin(), all.end(), 0);
  const Tensor s1 = na ? stage1(f, in, all) : Tensor();
  plan.rois = na ? propose(s1.value(), in) : std::vector<RoiBox>{};
  plan.num_proposals = static_cast<int>(plan.rois.size());
  for (const auto& gt : t.gts) {
    plan.rois.push_back(fusion ? roi_from_box3d(in.camera, *gt.box3d) : roi_from_image(in.camera, gt.image));
  }

  AssignOptions opt;
  opt.mode = fusion ? IouMode::bev : IouMode::image;
  opt.extents = in.extents;
  opt.resolution = cfg_.bev_resolution;
  opt.fg_iou = cfg_.fg_iou;
  plan.assignment = assign_targets(plan.rois, t.gts, poses_, opt);
  return plan;
}

StepLoss ToyNet::step_loss(const Features& f, const SceneInput& in, const SceneTargets& t,
                           const StepPlan& plan) const {
  const std::size_t width = 1 + cfg_.box_dim();
  const double beta = cfg_.smooth_l1_beta;
  std::vector<Tensor> terms;

  // Region proposal losses on the sampled anchors.
  double l_obj = 0, l_reg = 0;
  if (!plan.rpn_anchors.empty()) {
    Tensor s1 = stage1(f, in, plan.rpn_anchors);
    const auto obj = columns(s1.value(), width, 0, 1);
    const auto deltas = columns(s1.value(), width, 1, width - 1);
    const RpnLoss rl = loss_rpn(obj, deltas, plan.rpn, beta);
    l_obj = rl.objectness;
    l_reg = rl.regression;
    std::vector<double> g_obj(s1.size(), 0.0), g_reg(s1.size(), 0.0);
    for (std::size_t i = 0; i < plan.rpn_anchors.size(); ++i) {
      g_obj[i * width] = rl.grad_objectness[i];
      for (std::size_t c = 0; c + 1 < width; ++c) g_reg[i * width + 1 + c] = rl.grad_deltas[i * (width - 1) + c];
    }
    terms.push_back(nn::external_loss(l_obj, std::span<const Tensor>(&s1, 1), {std::move(g_obj)}, "l_rpn_obj"));
    terms.push_back(nn::external_loss(l_reg, std::span<const Tensor>(&s1, 1), {std::move(g_reg)}, "l_rpn_reg"));
  } else {
    terms.push_back(Tensor::scalar(0.0));
    terms.push_back(Tensor::scalar(0.0));
  }

  // Second stage: classification and the two pose losses.
  double l_cls = 0, l_2d = 0, l_3d = 0;
  const std::size_t R = plan.rois.size();
  if (R > 0) {
    HeadOutput head = stage2(f, in, plan.rois);
    const auto& a = plan.assignment;
    const ClassLoss cl = loss_cls(head.logits.value(), cfg_.num_classes(), a.k_target);
    l_cls = cl.value;
    terms.push_back(nn::external_loss(l_cls, std::span<const Tensor>(&head.logits, 1), {cl.grad}, "l_cls"));

    const std::size_t D = static_cast<std::size_t>(cfg_.delta_width());
    const auto& dv = head.deltas.value();
    std::vector<Skeleton2D> pred2d(R), target(R);
    std::vector<Skeleton3D> pred3d(R);
    for (std::size_t r = 0; r < R; ++r) {
      if (!a.foreground[r]) continue;
      std::span<const double> row(dv.data() + r * D, D);
      const int k = a.k_target[r];
      pred2d[r] = decode_pose_2d(row, k, plan.rois[r]);
      pred3d[r] = decode_pose_3d(row, k, plan.rois[r]);
      target[r] = t.gts[static_cast<std::size_t>(a.matched_gt[r])].pose;
    }
    const PoseLoss2D p2 = loss_2d(pred2d, target, a.foreground, beta);
    const PoseLoss3D p3 = loss_3d(pred3d, target, in.camera, a.foreground, beta);
    l_2d = p2.value;
    l_3d = p3.value;
    std::vector<double> g2(dv.size(), 0.0), g3(dv.size(), 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      if (!a.foreground[r]) continue;
      const int k = a.k_target[r];
      const double w = plan.rois[r].image.width(), h = plan.rois[r].image.height();
      for (int j = 0; j < kNumJoints; ++j) {
        g2[r * D + delta_index(k, j, 0)] = p2.grad[r][j].x() * w;
        g2[r * D + delta_index(k, j, 1)] = p2.grad[r][j].y() * h;
        for (int c = 0; c < 3; ++c) g3[r * D + delta_index(k, j, 2 + c)] = p3.grad[r][j][c];
      }
    }
    terms.push_back(nn::external_loss(l_2d, std::span<const Tensor>(&head.deltas, 1), {std::move(g2)}, "l_2d"));
    terms.push_back(nn::external_loss(l_3d, std::span<const Tensor>(&head.deltas, 1), {std::move(g3)}, "l_3d"));
  } else {
    for (int i = 0; i < 3; ++i) terms.push_back(Tensor::scalar(0.0));
  }

  const auto& w = cfg_.weights;
  const double weights[5] = {w.rpn_obj, w.rpn_reg, w.cls, w.pose_2d, w.pose_3d};
  StepLoss out;
  out.total = nn::weighted_sum(terms, weights, "l_total");
  out.report = LossReport::combine(l_obj, l_reg, l_cls, l_2d, l_3d, w);
  return out;
}

std::vector<Detection> ToyNet::detect(const SceneInput& in) const {
  nn::NoGradGuard guard;
  const Features f = extract(in);
  if (in.anchors.empty()) return {};
  std::vector<std::size_t> all(in.anchors.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor s1 = stage1(f, in, all);
  const auto rois = propose(s1.value(), in);
  if (rois.empty()) return {};
  const HeadOutput head = stage2(f, in, rois);
  const std::size_t C = static_cast<std::size_t>(cfg_.num_classes());
  const std::size_t D = static_cast<std::size_t>(cfg_.delta_width());
  std::vector<Detection> out;
  out.reserve(rois.size());
  for (std::size_t r = 0; r < rois.size(); ++r) {
    Detection d;
    d.roi = rois[r];
    d.logits.assign(head.logits.value().begin() + static_cast<std::ptrdiff_t>(r * C),
                    head.logits.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * C));
    d.deltas.assign(head.deltas.value().begin() + static_cast<std::ptrdiff_t>(r * D),
                    head.deltas.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * D));
    const double mx = *std::max_element(d.logits.begin(), d.logits.end());
    double z = 0;
    for (double l : d.logits) z += std::exp(l - mx);
    d.score = 1.0 - std::exp(d.logits[0] - mx) / z;
    d.best_class = 1;
    for (int k = 2; k < static_cast<int>(C); ++k) {
      if (d.logits[static_cast<std::size_t>(k)] > d.logits[static_cast<std::size_t>(d.best_class)]) d.best_class = k;
    }
    for (int k = 1; k < static_cast<int>(C); ++k) {
      d.poses2d.push_back(decode_pose_2d(d.deltas, k, d.roi));
      d.poses3d.push_back(decode_pose_3d(d.deltas, k, d.roi));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<FinalPose> ToyNet::predict(const SceneInput& in) const {
  std::vector<PoseCandidate> cands;
  for (const auto& d : detect(in)) {
    if (d.score < cfg_.det_score) continue;
    const auto k = static_cast<std::size_t>(d.best_class - 1);
    cands.push_back({d.roi.image, d.score, d.poses2d[k], d.poses3d[k]});
  }
  return integrate_proposals(cands, cfg_.integration);
}

}  // namespace hperl
