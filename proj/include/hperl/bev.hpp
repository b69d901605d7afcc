#pragma once

// Six-channel bird's-eye-view raster of a point cloud.
//
// Channels 0-3 hold the max normalized height of the points falling into each
// quarter of the vertical slab (0 = lowest quarter), channel 4 the point
// density min(1, log(N+1)/log(16)) and channel 5 the max intensity. Rows grow
// with z and columns with x.

#include <array>
#include <vector>

#include "hperl/geometry.hpp"
#include "hperl/types.hpp"

namespace hperl {

struct AreaExtents {
  double x_min = 0, x_max = 0;
  double y_min = 0, y_max = 0;  // vertical slab (camera y, so y_min is the top)
  double z_min = 0, z_max = 0;

  void validate() const;
  bool x_symmetric() const { return x_min == -x_max; }
  bool operator==(const AreaExtents&) const = default;
};

inline constexpr int kBevChannels = 6;
inline constexpr int kBevHeightSlices = 4;
inline constexpr int kBevDensityChannel = 4;
inline constexpr int kBevIntensityChannel = 5;

int bev_rows(const AreaExtents& e, double resolution);
int bev_cols(const AreaExtents& e, double resolution);

struct BevGrid {
  int rows = 0, cols = 0;
  double resolution = 0;
  AreaExtents extents;
  std::vector<double> data;  // channel-major: [channel][row][col]

  double& at(int channel, int row, int col) {
    return data[(static_cast<std::size_t>(channel) * rows + row) * cols + col];
  }
  double at(int channel, int row, int col) const {
    return data[(static_cast<std::size_t>(channel) * rows + row) * cols + col];
  }
  std::size_t channel_size() const { return static_cast<std::size_t>(rows) * cols; }
  // Columns reversed (x -> -x for x-symmetric extents).
  BevGrid mirrored() const;
};

// Cells are half-open [lo, lo + resolution) except the last one, which is
// closed. Points outside the extents (including the slab) are dropped.
BevGrid encode_bev(const PointCloud& cloud, const AreaExtents& extents, double resolution);

// Footprint of a 3D box in raster coordinates (x0 = column, y0 = row). The
// vertical axis is dropped and the result is not clipped. Throws
// InvalidArgument when the footprint does not overlap the extents.
Box2D project_box_to_bev(const Box3D& box, const AreaExtents& extents, double resolution);

}  // namespace hperl
