#pragma once

// Synthetic datasets on disk.
//
// Layout of a dataset directory:
//   manifest.txt         key=value lines (see DatasetManifest)
//   scene_NNNNN.bin      versioned, CRC-checked blob: camera, image, cloud, labels
//   scene_NNNNN.csv      labels as pose records (scene_id, confidence, u/v, x/y/z)
//
// Scene blobs: 8-byte magic "HPRLSCN\0", u32 format version, u64 payload
// length, payload, u32 CRC-32 of the payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hperl/anchors.hpp"
#include "hperl/bev.hpp"
#include "hperl/synth.hpp"

namespace hperl {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

class DatasetError : public Error {
 public:
  enum class Kind { missing, format, version, truncated, checksum };
  DatasetError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct DatasetConfig {
  int scenes = 200;
  std::uint64_t seed = 7;
  int min_pedestrians = 1, max_pedestrians = 4;
  double eval_fraction = 0.2;
  SceneParams scene;

  DatasetConfig() { scene.clutter = 2; scene.occlusion_rate = 0.1; }
  void validate() const;
};

struct DatasetManifest {
  std::uint32_t format_version = kDatasetFormatVersion;
  DatasetConfig config;
  std::vector<int> train, eval;  // disjoint scene indices
  JointLayout joints = JointLayout::standard();
  AreaExtents extents;  // x/z from ground-truth locations, y slab from the generator
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Scene> scenes;
};

// Per-scene seed derived from the dataset seed (splitmix64).
std::uint64_t scene_seed(std::uint64_t dataset_seed, int index);

Dataset generate_dataset(const DatasetConfig& config, const AnchorPoseSet& poses);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Reads everything before returning; any failure throws DatasetError and
// nothing is returned.
Dataset read_dataset(const std::filesystem::path& dir);

std::vector<std::uint8_t> encode_scene(const Scene& scene);
Scene decode_scene(const std::vector<std::uint8_t>& bytes, const std::string& what = "scene");

std::string manifest_text(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text);

}  // namespace hperl
