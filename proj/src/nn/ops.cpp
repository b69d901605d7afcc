#include "hperl/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace hperl::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& name, const std::string& what) {
  if (!ok) throw InvalidArgument(name + ": " + what);
}

// Gradient buffer of parent i, or nullptr when that input needs none.
double* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              const std::string& name) {
  require(x.rank() == 3 && w.rank() == 4 && b.rank() == 1, name, "conv2d expects x[C,H,W], w[O,C,k,k], b[O]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), k = w.dim(2);
  require(w.dim(1) == C && w.dim(3) == k && b.dim(0) == O, name, "conv2d weight shape mismatch");
  require(stride > 0 && pad >= 0, name, "bad stride/padding");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, name, "input smaller than kernel");
  const int K = C * k * k, P = Ho * Wo;

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * P, 0.0);
  const double* xv = x.value().data();
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols->data() + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const double* src = xv + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) row[oy * Wo + ox] = src[ix];
          }
        }
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(O) * P);
  MapMat om(out.data(), O, P);
  om.noalias() = CMapMat(w.value().data(), O, K) * CMapMat(cols->data(), K, P);
  for (int o = 0; o < O; ++o) om.row(o).array() += b.value()[o];

  return make_result({O, Ho, Wo}, std::move(out), name, {x, w, b},
                     [=](Node& self) {
                       CMapMat g(self.grad.data(), O, P);
                       if (double* gw = pgrad(self, 1)) {
                         MapMat(gw, O, K).noalias() += g * CMapMat(cols->data(), K, P).transpose();
                       }
                       if (double* gb = pgrad(self, 2)) {
                         for (int o = 0; o < O; ++o) gb[o] += g.row(o).sum();
                       }
                       if (double* gx = pgrad(self, 0)) {
                         RowMat dcols = CMapMat(self.parents[1]->value.data(), O, K).transpose() * g;
                         for (int c = 0; c < C; ++c) {
                           for (int ky = 0; ky < k; ++ky) {
                             for (int kx = 0; kx < k; ++kx) {
                               const double* row = dcols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
                               for (int oy = 0; oy < Ho; ++oy) {
                                 const int iy = oy * stride - pad + ky;
                                 if (iy < 0 || iy >= H) continue;
                                 double* dst = gx + (static_cast<std::size_t>(c) * H + iy) * W;
                                 for (int ox = 0; ox < Wo; ++ox) {
                                   const int ix = ox * stride - pad + kx;
                                   if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
                                 }
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  const std::string& name, double eps) {
  require(x.rank() == 3, name, "group_norm expects [C,H,W]");
  const int C = x.dim(0);
  require(groups > 0 && C % groups == 0, name, "channels not divisible by groups");
  require(gamma.size() == static_cast<std::size_t>(C) && beta.size() == static_cast<std::size_t>(C),
          name, "affine parameter size mismatch");
  const std::size_t HW = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  const int cpg = C / groups;
  const std::size_t M = HW * cpg;
  const auto& xv = x.value();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  std::vector<double> out(xv.size());
  for (int g = 0; g < groups; ++g) {
    const std::size_t off = static_cast<std::size_t>(g) * M;
    double mean = 0;
    for (std::size_t i = 0; i < M; ++i) mean += xv[off + i];
    mean /= static_cast<double>(M);
    double var = 0;
    for (std::size_t i = 0; i < M; ++i) var += (xv[off + i] - mean) * (xv[off + i] - mean);
    var /= static_cast<double>(M);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[g] = is;
    for (std::size_t i = 0; i < M; ++i) {
      const int c = g * cpg + static_cast<int>(i / HW);
      const double h = (xv[off + i] - mean) * is;
      (*xhat)[off + i] = h;
      out[off + i] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_result(x.shape(), std::move(out), name, {x, gamma, beta},
                     [=](Node& self) {
                       const auto& gy = self.grad;
                       const auto& gam = self.parents[1]->value;
                       double* gx = pgrad(self, 0);
                       double* gg = pgrad(self, 1);
                       double* gbeta = pgrad(self, 2);
                       for (int g = 0; g < groups; ++g) {
                         const std::size_t off = static_cast<std::size_t>(g) * M;
                         double mean_d = 0, mean_dx = 0;
                         for (std::size_t i = 0; i < M; ++i) {
                           const int c = g * cpg + static_cast<int>(i / HW);
                           const double d = gy[off + i] * gam[c];
                           mean_d += d;
                           mean_dx += d * (*xhat)[off + i];
                           if (gg) gg[c] += gy[off + i] * (*xhat)[off + i];
                           if (gbeta) gbeta[c] += gy[off + i];
                         }
                         if (!gx) continue;
                         mean_d /= static_cast<double>(M);
                         mean_dx /= static_cast<double>(M);
                         for (std::size_t i = 0; i < M; ++i) {
                           const int c = g * cpg + static_cast<int>(i / HW);
                           const double d = gy[off + i] * gam[c];
                           gx[off + i] += (*inv_std)[g] * (d - mean_d - (*xhat)[off + i] * mean_dx);
                         }
                       }
                     });
}

Tensor relu(const Tensor& x, const std::string& name) {
  std::vector<double> out(x.value());
  for (double& v : out) v = v > 0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), name, {x}, [](Node& self) {
    double* gx = pgrad(self, 0);
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0) gx[i] += self.grad[i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, const std::string& name) {
  require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, name, "linear expects x[N,In], w[Out,In], b[Out]");
  const int N = x.dim(0), In = x.dim(1), Out = w.dim(0);
  require(w.dim(1) == In && b.dim(0) == Out, name,
          "linear shape mismatch: x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
  std::vector<double> out(static_cast<std::size_t>(N) * Out);
  MapMat om(out.data(), N, Out);
  om.noalias() = CMapMat(x.value().data(), N, In) * CMapMat(w.value().data(), Out, In).transpose();
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < Out; ++o) om(n, o) += b.value()[o];
  }
  return make_result({N, Out}, std::move(out), name, {x, w, b}, [=](Node& self) {
    CMapMat g(self.grad.data(), N, Out);
    if (double* gx = pgrad(self, 0)) {
      MapMat(gx, N, In).noalias() += g * CMapMat(self.parents[1]->value.data(), Out, In);
    }
    if (double* gw = pgrad(self, 1)) {
      MapMat(gw, Out, In).noalias() += g.transpose() * CMapMat(self.parents[0]->value.data(), N, In);
    }
    if (double* gb = pgrad(self, 2)) {
      for (int o = 0; o < Out; ++o) gb[o] += g.col(o).sum();
    }
  });
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b, const std::string& name) {
  require(x.rank() == 4 && w.rank() == 2 && b.rank() == 1, name, "conv1x1 expects x[N,C,P,Q], w[O,C], b[O]");
  const int N = x.dim(0), C = x.dim(1), O = w.dim(0);
  const int S = x.dim(2) * x.dim(3);
  require(w.dim(1) == C && b.dim(0) == O, name, "conv1x1 shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(N) * O * S);
  const CMapMat wm(w.value().data(), O, C);
  for (int n = 0; n < N; ++n) {
    MapMat om(out.data() + static_cast<std::size_t>(n) * O * S, O, S);
    om.noalias() = wm * CMapMat(x.value().data() + static_cast<std::size_t>(n) * C * S, C, S);
    for (int o = 0; o < O; ++o) om.row(o).array() += b.value()[o];
  }
  return make_result({N, O, x.dim(2), x.dim(3)}, std::move(out), name, {x, w, b}, [=](Node& self) {
    const CMapMat wv(self.parents[1]->value.data(), O, C);
    double* gx = pgrad(self, 0);
    double* gw = pgrad(self, 1);
    double* gb = pgrad(self, 2);
    for (int n = 0; n < N; ++n) {
      CMapMat g(self.grad.data() + static_cast<std::size_t>(n) * O * S, O, S);
      if (gx) MapMat(gx + static_cast<std::size_t>(n) * C * S, C, S).noalias() += wv.transpose() * g;
      if (gw) {
        MapMat(gw, O, C).noalias() +=
            g * CMapMat(self.parents[0]->value.data() + static_cast<std::size_t>(n) * C * S, C, S).transpose();
      }
      if (gb) {
        for (int o = 0; o < O; ++o) gb[o] += g.row(o).sum();
      }
    }
  });
}

namespace {

struct Tap {
  int index;  // offset into one channel plane
  double weight;
};

// Sampling taps for every (roi, bin): taps[bin_begin[i] .. bin_begin[i+1]).
struct AlignTaps {
  std::vector<Tap> taps;
  std::vector<std::size_t> begin;
};

AlignTaps align_taps(std::span<const Box2D> boxes, double scale, int H, int W, int oh, int ow,
                     int sr) {
  AlignTaps t;
  t.begin.reserve(boxes.size() * oh * ow + 1);
  const double norm = 1.0 / (sr * sr);
  for (const auto& b : boxes) {
    const double x0 = b.x0 * scale - 0.5, y0 = b.y0 * scale - 0.5;
    const double bin_w = (b.x1 * scale - 0.5 - x0) / ow;
    const double bin_h = (b.y1 * scale - 0.5 - y0) / oh;
    for (int ph = 0; ph < oh; ++ph) {
      for (int pw = 0; pw < ow; ++pw) {
        t.begin.push_back(t.taps.size());
        for (int iy = 0; iy < sr; ++iy) {
          const double y = y0 + ph * bin_h + (iy + 0.5) * bin_h / sr;
          const double fy = std::floor(y);
          const double ly = y - fy;
          const int yl = static_cast<int>(fy);
          for (int ix = 0; ix < sr; ++ix) {
            const double x = x0 + pw * bin_w + (ix + 0.5) * bin_w / sr;
            const double fx = std::floor(x);
            const double lx = x - fx;
            const int xl = static_cast<int>(fx);
            const int ys[2] = {yl, yl + 1};
            const int xs[2] = {xl, xl + 1};
            const double wy[2] = {1.0 - ly, ly};
            const double wx[2] = {1.0 - lx, lx};
            for (int a = 0; a < 2; ++a) {
              if (ys[a] < 0 || ys[a] >= H) continue;
              for (int c = 0; c < 2; ++c) {
                if (xs[c] < 0 || xs[c] >= W) continue;
                t.taps.push_back({ys[a] * W + xs[c], wy[a] * wx[c] * norm});
              }
            }
          }
        }
      }
    }
  }
  t.begin.push_back(t.taps.size());
  return t;
}

}  // namespace

Tensor roi_align(const Tensor& features, std::span<const Box2D> boxes, double spatial_scale,
                 int out_h, int out_w, const std::string& name, int sampling_ratio) {
  require(features.rank() == 3, name, "roi_align expects features [C,H,W]");
  require(out_h > 0 && out_w > 0 && sampling_ratio > 0, name, "bad output size");
  const int C = features.dim(0), H = features.dim(1), W = features.dim(2);
  const int N = static_cast<int>(boxes.size());
  auto taps = std::make_shared<AlignTaps>(
      align_taps(boxes, spatial_scale, H, W, out_h, out_w, sampling_ratio));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const int bins = out_h * out_w;
  std::vector<double> out(static_cast<std::size_t>(N) * C * bins, 0.0);
  const double* f = features.value().data();
  for (int n = 0; n < N; ++n) {
    for (int bi = 0; bi < bins; ++bi) {
      const std::size_t t0 = taps->begin[static_cast<std::size_t>(n) * bins + bi];
      const std::size_t t1 = taps->begin[static_cast<std::size_t>(n) * bins + bi + 1];
      for (int c = 0; c < C; ++c) {
        const double* fc = f + c * plane;
        double acc = 0;
        for (std::size_t t = t0; t < t1; ++t) acc += taps->taps[t].weight * fc[taps->taps[t].index];
        out[(static_cast<std::size_t>(n) * C + c) * bins + bi] = acc;
      }
    }
  }
  return make_result({N, C, out_h, out_w}, std::move(out), name, {features}, [=](Node& self) {
    double* gf = pgrad(self, 0);
    for (int n = 0; n < N; ++n) {
      for (int bi = 0; bi < bins; ++bi) {
        const std::size_t t0 = taps->begin[static_cast<std::size_t>(n) * bins + bi];
        const std::size_t t1 = taps->begin[static_cast<std::size_t>(n) * bins + bi + 1];
        for (int c = 0; c < C; ++c) {
          const double g = self.grad[(static_cast<std::size_t>(n) * C + c) * bins + bi];
          if (g == 0) continue;
          double* gc = gf + c * plane;
          for (std::size_t t = t0; t < t1; ++t) gc[taps->taps[t].index] += taps->taps[t].weight * g;
        }
      }
    }
  });
}

Tensor roi_pool(const Tensor& features, std::span<const Box2D> boxes, double spatial_scale,
                int out_h, int out_w, const std::string& name) {
  require(features.rank() == 3, name, "roi_pool expects features [C,H,W]");
  require(out_h > 0 && out_w > 0, name, "bad output size");
  const int C = features.dim(0), H = features.dim(1), W = features.dim(2);
  const int N = static_cast<int>(boxes.size());
  const int bins = out_h * out_w;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> out(static_cast<std::size_t>(N) * C * bins, 0.0);
  auto argmax = std::make_shared<std::vector<int>>(out.size(), -1);
  const double* f = features.value().data();
  for (int n = 0; n < N; ++n) {
    const auto& b = boxes[n];
    const int sw = static_cast<int>(std::round(b.x0 * spatial_scale));
    const int sh = static_cast<int>(std::round(b.y0 * spatial_scale));
    const int ew = static_cast<int>(std::round(b.x1 * spatial_scale));
    const int eh = static_cast<int>(std::round(b.y1 * spatial_scale));
    const double bin_w = static_cast<double>(std::max(ew - sw + 1, 1)) / out_w;
    const double bin_h = static_cast<double>(std::max(eh - sh + 1, 1)) / out_h;
    for (int ph = 0; ph < out_h; ++ph) {
      const int hs = std::clamp(static_cast<int>(std::floor(ph * bin_h)) + sh, 0, H);
      const int he = std::clamp(static_cast<int>(std::ceil((ph + 1) * bin_h)) + sh, 0, H);
      for (int pw = 0; pw < out_w; ++pw) {
        const int ws = std::clamp(static_cast<int>(std::floor(pw * bin_w)) + sw, 0, W);
        const int we = std::clamp(static_cast<int>(std::ceil((pw + 1) * bin_w)) + sw, 0, W);
        if (he <= hs || we <= ws) continue;
        for (int c = 0; c < C; ++c) {
          const double* fc = f + c * plane;
          double best = -std::numeric_limits<double>::infinity();
          int arg = -1;
          for (int y = hs; y < he; ++y) {
            for (int x = ws; x < we; ++x) {
              if (fc[y * W + x] > best) {
                best = fc[y * W + x];
                arg = y * W + x;
              }
            }
          }
          const std::size_t o = (static_cast<std::size_t>(n) * C + c) * bins + ph * out_w + pw;
          out[o] = best;
          (*argmax)[o] = arg;
        }
      }
    }
  }
  return make_result({N, C, out_h, out_w}, std::move(out), name, {features}, [=](Node& self) {
    double* gf = pgrad(self, 0);
    for (std::size_t o = 0; o < argmax->size(); ++o) {
      const int a = (*argmax)[o];
      if (a < 0) continue;
      const std::size_t c = (o / bins) % C;
      gf[c * plane + a] += self.grad[o];
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b, const std::string& name) {
  require(a.rank() >= 2 && a.rank() == b.rank() && a.dim(0) == b.dim(0), name,
          "concat shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (int d = 2; d < a.rank(); ++d) {
    require(a.dim(d) == b.dim(d), name, "concat shape mismatch " + shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  }
  const int N = a.dim(0);
  const std::size_t sa = a.size() / N, sb = b.size() / N;
  std::vector<double> out(a.size() + b.size());
  for (int n = 0; n < N; ++n) {
    std::copy_n(a.value().begin() + n * sa, sa, out.begin() + n * (sa + sb));
    std::copy_n(b.value().begin() + n * sb, sb, out.begin() + n * (sa + sb) + sa);
  }
  Shape shape = a.shape();
  shape[1] += b.dim(1);
  return make_result(shape, std::move(out), name, {a, b}, [=](Node& self) {
    double* ga = pgrad(self, 0);
    double* gb = pgrad(self, 1);
    for (int n = 0; n < N; ++n) {
      const double* g = self.grad.data() + n * (sa + sb);
      if (ga) {
        for (std::size_t i = 0; i < sa; ++i) ga[n * sa + i] += g[i];
      }
      if (gb) {
        for (std::size_t i = 0; i < sb; ++i) gb[n * sb + i] += g[sa + i];
      }
    }
  });
}

Tensor mean_fuse(const Tensor& a, const Tensor& b, const std::string& name) {
  require(a.shape() == b.shape(), name,
          "mean fusion needs equal shapes, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (a.value()[i] + b.value()[i]);
  return make_result(a.shape(), std::move(out), name, {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = pgrad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += 0.5 * self.grad[i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, const Shape& shape, const std::string& name) {
  require(numel(shape) == x.size(), name,
          "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return make_result(shape, x.value(), name, {x}, [](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b, const std::string& name) {
  require(a.shape() == b.shape(), name, "add shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(a.shape(), std::move(out), name, {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = pgrad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights,
                    const std::string& name) {
  require(terms.size() == weights.size(), name, "one weight per term");
  double v = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].size() == 1, name, "terms must be scalars");
    v += weights[i] * terms[i].item();
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({1}, {v}, name, std::vector<Tensor>(terms.begin(), terms.end()),
                     [w](Node& self) {
                       for (std::size_t i = 0; i < w.size(); ++i) {
                         if (double* g = pgrad(self, i)) g[0] += w[i] * self.grad[0];
                       }
                     });
}

Tensor external_loss(double value, std::span<const Tensor> inputs,
                     std::vector<std::vector<double>> grads, const std::string& name) {
  require(inputs.size() == grads.size(), name, "one gradient per input");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    require(grads[i].size() == inputs[i].size(), name, "gradient size mismatch");
  }
  auto g = std::make_shared<std::vector<std::vector<double>>>(std::move(grads));
  return make_result({1}, {value}, name, std::vector<Tensor>(inputs.begin(), inputs.end()),
                     [g](Node& self) {
                       const double up = self.grad[0];
                       for (std::size_t i = 0; i < g->size(); ++i) {
                         double* gi = pgrad(self, i);
                         if (!gi) continue;
                         const auto& src = (*g)[i];
                         for (std::size_t j = 0; j < src.size(); ++j) gi[j] += up * src[j];
                       }
                     });
}

}  // namespace hperl::nn
