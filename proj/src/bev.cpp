#include "hperl/bev.hpp"

#include <algorithm>
#include <cmath>

namespace hperl {

void AreaExtents::validate() const {
  if (!(x_min < x_max) || !(y_min < y_max) || !(z_min < z_max)) {
    throw InvalidArgument("area extents must satisfy min < max on every axis");
  }
}

namespace {

int cell_count(double lo, double hi, double resolution) {
  return std::max(1, static_cast<int>(std::ceil((hi - lo) / resolution - 1e-9)));
}

}  // namespace

int bev_rows(const AreaExtents& e, double resolution) {
  return cell_count(e.z_min, e.z_max, resolution);
}

int bev_cols(const AreaExtents& e, double resolution) {
  return cell_count(e.x_min, e.x_max, resolution);
}

BevGrid BevGrid::mirrored() const {
  BevGrid out = *this;
  for (int c = 0; c < kBevChannels; ++c) {
    for (int r = 0; r < rows; ++r) {
      for (int col = 0; col < cols; ++col) out.at(c, r, col) = at(c, r, cols - 1 - col);
    }
  }
  return out;
}

BevGrid encode_bev(const PointCloud& cloud, const AreaExtents& extents, double resolution) {
  if (!(resolution > 0)) throw InvalidArgument("bev resolution must be positive");
  extents.validate();
  BevGrid g;
  g.rows = bev_rows(extents, resolution);
  g.cols = bev_cols(extents, resolution);
  g.resolution = resolution;
  g.extents = extents;
  g.data.assign(g.channel_size() * kBevChannels, 0.0);

  std::vector<int> counts(g.channel_size(), 0);
  const double slab = extents.y_max - extents.y_min;
  for (const auto& p : cloud) {
    const double x = p.x, y = p.y, z = p.z;
    if (x < extents.x_min || x > extents.x_max || z < extents.z_min || z > extents.z_max ||
        y < extents.y_min || y > extents.y_max) {
      continue;
    }
    const int col = std::min(g.cols - 1, static_cast<int>(std::floor((x - extents.x_min) / resolution)));
    const int row = std::min(g.rows - 1, static_cast<int>(std::floor((z - extents.z_min) / resolution)));
    // Up is -y, so the top of the slab (y_min) has height 1.
    const double height = (extents.y_max - y) / slab;
    const int slice = std::min(kBevHeightSlices - 1, static_cast<int>(height * kBevHeightSlices));
    double& h = g.at(slice, row, col);
    h = std::max(h, height);
    double& in = g.at(kBevIntensityChannel, row, col);
    in = std::max(in, std::clamp(static_cast<double>(p.intensity), 0.0, 1.0));
    ++counts[static_cast<std::size_t>(row) * g.cols + col];
  }
  const double norm = std::log(16.0);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const int n = counts[static_cast<std::size_t>(r) * g.cols + c];
      if (n > 0) g.at(kBevDensityChannel, r, c) = std::min(1.0, std::log(n + 1.0) / norm);
    }
  }
  return g;
}

Box2D project_box_to_bev(const Box3D& box, const AreaExtents& extents, double resolution) {
  if (!(resolution > 0)) throw InvalidArgument("bev resolution must be positive");
  const double x0 = box.center.x() - 0.5 * box.w(), x1 = box.center.x() + 0.5 * box.w();
  const double z0 = box.center.z() - 0.5 * box.l(), z1 = box.center.z() + 0.5 * box.l();
  if (x1 <= extents.x_min || x0 >= extents.x_max || z1 <= extents.z_min || z0 >= extents.z_max) {
    throw InvalidArgument("box footprint lies outside the area extents");
  }
  return {(x0 - extents.x_min) / resolution, (z0 - extents.z_min) / resolution,
          (x1 - extents.x_min) / resolution, (z1 - extents.z_min) / resolution};
}

}  // namespace hperl
