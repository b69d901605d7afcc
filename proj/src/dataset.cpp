#include "hperl/dataset.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "binio.hpp"
#include "hperl/eval.hpp"

namespace hperl {

namespace fs = std::filesystem;

namespace {

constexpr char kSceneMagic[8] = {'H', 'P', 'R', 'L', 'S', 'C', 'N', '\0'};

std::string scene_stem(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05d", i);
  return buf;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

void DatasetConfig::validate() const {
  if (scenes < 0) throw InvalidArgument("scene count must be non-negative");
  if (min_pedestrians < 0 || max_pedestrians < min_pedestrians) {
    throw InvalidArgument("pedestrian count range must satisfy 0 <= min <= max");
  }
  if (!(eval_fraction >= 0 && eval_fraction <= 1)) throw InvalidArgument("eval_fraction must be in [0, 1]");
  scene.validate();
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, int index) {
  std::uint64_t z = dataset_seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Dataset generate_dataset(const DatasetConfig& config, const AnchorPoseSet& poses) {
  config.validate();
  Dataset d;
  d.manifest.config = config;
  for (int i = 0; i < config.scenes; ++i) {
    const std::uint64_t s = scene_seed(config.seed, i);
    std::mt19937_64 rng(s ^ 0x5DEECE66Dull);
    std::uniform_int_distribution<int> count(config.min_pedestrians, config.max_pedestrians);
    d.scenes.push_back(generate_scene(config.scene, s, count(rng), poses));
  }
  // Split assignment: a seeded permutation, eval takes the first share.
  std::vector<int> idx(config.scenes);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(scene_seed(config.seed, -1));
  for (int i = config.scenes - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  const int n_eval = static_cast<int>(std::lround(config.eval_fraction * config.scenes));
  d.manifest.eval.assign(idx.begin(), idx.begin() + n_eval);
  d.manifest.train.assign(idx.begin() + n_eval, idx.end());
  std::sort(d.manifest.eval.begin(), d.manifest.eval.end());
  std::sort(d.manifest.train.begin(), d.manifest.train.end());

  std::vector<Box3D> boxes;
  for (const auto& sc : d.scenes) {
    for (const auto& p : sc.gt) boxes.push_back(p.box);
  }
  const double ground = config.scene.camera_height;
  if (boxes.empty()) {
    const auto& cam = config.scene.camera;
    const double half = config.scene.depth_max * std::max(cam.cx, cam.width - cam.cx) / cam.fx;
    d.manifest.extents = {-half - kAnchorStride, half + kAnchorStride, ground - 2.5, ground - 0.1,
                          config.scene.depth_min - kAnchorStride, config.scene.depth_max + kAnchorStride};
  } else {
    d.manifest.extents = extents_from_locations(boxes, kAnchorStride, ground - 2.5, ground - 0.1);
  }
  return d;
}

std::vector<std::uint8_t> encode_scene(const Scene& s) {
  binio::Writer w;
  w.put(s.seed);
  w.put(s.camera.fx);
  w.put(s.camera.fy);
  w.put(s.camera.cx);
  w.put(s.camera.cy);
  w.put<std::int32_t>(s.camera.width);
  w.put<std::int32_t>(s.camera.height);
  w.put<std::uint64_t>(s.image.size());
  w.put_bytes(s.image.data(), s.image.size());
  w.put<std::uint64_t>(s.cloud.size());
  for (const auto& p : s.cloud) {
    w.put(p.x);
    w.put(p.y);
    w.put(p.z);
    w.put(p.intensity);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.gt.size()));
  for (const auto& g : s.gt) {
    for (int j = 0; j < kNumJoints; ++j) {
      for (int k = 0; k < 3; ++k) w.put(g.pose3d.joints[j][k]);
      w.put<std::uint8_t>(g.pose3d.visible[j]);
      for (int k = 0; k < 2; ++k) w.put(g.pose2d.joints[j][k]);
      w.put<std::uint8_t>(g.pose2d.visible[j]);
    }
    for (int k = 0; k < 3; ++k) w.put(g.box.center[k]);
    for (int k = 0; k < 3; ++k) w.put(g.box.size[k]);
    w.put<std::int32_t>(g.source_pose);
    w.put(g.height);
    w.put<std::int32_t>(g.lidar_points);
    w.put<std::uint8_t>(g.occluded);
  }

  binio::Writer out;
  out.put_bytes(kSceneMagic, sizeof kSceneMagic);
  out.put(kDatasetFormatVersion);
  out.put<std::uint64_t>(w.bytes.size());
  out.put_bytes(w.bytes.data(), w.bytes.size());
  out.put(binio::crc32_of(w.bytes.data(), w.bytes.size()));
  return std::move(out.bytes);
}

Scene decode_scene(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  auto truncated = [&] { throw DatasetError(DatasetError::Kind::truncated, what + ": truncated"); };
  binio::Reader head(bytes.data(), bytes.size(), truncated);
  char magic[8];
  head.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kSceneMagic, sizeof magic) != 0) {
    throw DatasetError(DatasetError::Kind::format, what + ": not a scene blob");
  }
  const auto version = head.get<std::uint32_t>();
  if (version != kDatasetFormatVersion) {
    throw DatasetError(DatasetError::Kind::version, what + ": format version " + std::to_string(version) +
                                                        ", expected " + std::to_string(kDatasetFormatVersion));
  }
  const auto len = head.get<std::uint64_t>();
  if (head.remaining() < len + sizeof(std::uint32_t)) truncated();
  const std::uint8_t* payload = bytes.data() + (bytes.size() - head.remaining());
  std::uint32_t stored;
  std::memcpy(&stored, payload + len, sizeof stored);
  if (binio::crc32_of(payload, len) != stored) {
    throw DatasetError(DatasetError::Kind::checksum, what + ": checksum mismatch");
  }
  if (head.remaining() != len + sizeof(std::uint32_t)) {
    throw DatasetError(DatasetError::Kind::format, what + ": trailing bytes after checksum");
  }
  binio::Reader r(payload, len, truncated);
  Scene s;
  s.seed = r.get<std::uint64_t>();
  s.camera.fx = r.get<double>();
  s.camera.fy = r.get<double>();
  s.camera.cx = r.get<double>();
  s.camera.cy = r.get<double>();
  s.camera.width = r.get<std::int32_t>();
  s.camera.height = r.get<std::int32_t>();
  const auto n_img = r.get<std::uint64_t>();
  if (n_img > r.remaining()) truncated();
  s.image.resize(n_img);
  r.get_bytes(s.image.data(), n_img);
  const auto n_pts = r.get<std::uint64_t>();
  if (n_pts > r.remaining() / (4 * sizeof(float))) truncated();
  s.cloud.resize(n_pts);
  for (auto& p : s.cloud) {
    p.x = r.get<float>();
    p.y = r.get<float>();
    p.z = r.get<float>();
    p.intensity = r.get<float>();
  }
  const auto n_gt = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_gt; ++i) {
    Pedestrian g;
    for (int j = 0; j < kNumJoints; ++j) {
      for (int k = 0; k < 3; ++k) g.pose3d.joints[j][k] = r.get<double>();
      g.pose3d.visible[j] = r.get<std::uint8_t>() != 0;
      for (int k = 0; k < 2; ++k) g.pose2d.joints[j][k] = r.get<double>();
      g.pose2d.visible[j] = r.get<std::uint8_t>() != 0;
    }
    for (int k = 0; k < 3; ++k) g.box.center[k] = r.get<double>();
    for (int k = 0; k < 3; ++k) g.box.size[k] = r.get<double>();
    g.source_pose = r.get<std::int32_t>();
    g.height = r.get<double>();
    g.lidar_points = r.get<std::int32_t>();
    g.occluded = r.get<std::uint8_t>() != 0;
    s.gt.push_back(g);
  }
  if (r.remaining() != 0) throw DatasetError(DatasetError::Kind::format, what + ": unexpected payload size");
  if (s.image.size() != static_cast<std::size_t>(s.camera.width) * s.camera.height * 3) {
    throw DatasetError(DatasetError::Kind::format, what + ": image size does not match camera");
  }
  return s;
}

std::string manifest_text(const DatasetManifest& m) {
  const auto& c = m.config;
  const auto& p = c.scene;
  std::ostringstream o;
  o << "format_version=" << m.format_version << "\n"
    << "scenes=" << c.scenes << "\n"
    << "seed=" << c.seed << "\n"
    << "min_pedestrians=" << c.min_pedestrians << "\n"
    << "max_pedestrians=" << c.max_pedestrians << "\n"
    << "eval_fraction=" << num(c.eval_fraction) << "\n"
    << "camera=" << num(p.camera.fx) << "," << num(p.camera.fy) << "," << num(p.camera.cx) << ","
    << num(p.camera.cy) << "," << p.camera.width << "," << p.camera.height << "\n"
    << "camera_height=" << num(p.camera_height) << "\n"
    << "depth_min=" << num(p.depth_min) << "\n"
    << "depth_max=" << num(p.depth_max) << "\n"
    << "occlusion_rate=" << num(p.occlusion_rate) << "\n"
    << "clutter=" << p.clutter << "\n"
    << "min_points=" << p.min_points << "\n"
    << "joint_noise=" << num(p.joint_noise) << "\n"
    << "max_yaw=" << num(p.max_yaw) << "\n"
    << "height_min=" << num(p.height_min) << "\n"
    << "height_max=" << num(p.height_max) << "\n"
    << "lidar_grid=" << num(p.azimuth_step_deg) << "," << num(p.elevation_min_deg) << ","
    << num(p.elevation_max_deg) << "," << num(p.elevation_step_deg) << "," << num(p.max_range) << "\n"
    << "image_noise=" << num(p.image_noise) << "\n";
  std::string names;
  for (int j = 0; j < kNumJoints; ++j) names += (j ? "," : "") + m.joints.names[j];
  o << "joint_order=" << names << "\n"
    << "extents=" << num(m.extents.x_min) << "," << num(m.extents.x_max) << "," << num(m.extents.y_min)
    << "," << num(m.extents.y_max) << "," << num(m.extents.z_min) << "," << num(m.extents.z_max) << "\n"
    << "train=" << join_ints(m.train) << "\n"
    << "eval=" << join_ints(m.eval) << "\n";
  return o.str();
}

DatasetManifest parse_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DatasetError(DatasetError::Kind::format, "manifest: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw DatasetError(DatasetError::Kind::format, "manifest: missing key '" + k + "'");
    return it->second;
  };
  auto doubles = [&](const std::string& k, std::size_t n) {
    std::vector<double> v;
    for (const auto& s : split(get(k), ',')) v.push_back(std::stod(s));
    if (v.size() != n) throw DatasetError(DatasetError::Kind::format, "manifest: bad value for '" + k + "'");
    return v;
  };
  DatasetManifest m;
  try {
    m.format_version = static_cast<std::uint32_t>(std::stoul(get("format_version")));
    if (m.format_version != kDatasetFormatVersion) {
      throw DatasetError(DatasetError::Kind::version,
                         "manifest: format version " + std::to_string(m.format_version) + ", expected " +
                             std::to_string(kDatasetFormatVersion));
    }
    auto& c = m.config;
    auto& p = c.scene;
    c.scenes = std::stoi(get("scenes"));
    c.seed = std::stoull(get("seed"));
    c.min_pedestrians = std::stoi(get("min_pedestrians"));
    c.max_pedestrians = std::stoi(get("max_pedestrians"));
    c.eval_fraction = std::stod(get("eval_fraction"));
    const auto cam = doubles("camera", 6);
    p.camera = {cam[0], cam[1], cam[2], cam[3], static_cast<int>(cam[4]), static_cast<int>(cam[5])};
    p.camera_height = std::stod(get("camera_height"));
    p.depth_min = std::stod(get("depth_min"));
    p.depth_max = std::stod(get("depth_max"));
    p.occlusion_rate = std::stod(get("occlusion_rate"));
    p.clutter = std::stoi(get("clutter"));
    p.min_points = std::stoi(get("min_points"));
    p.joint_noise = std::stod(get("joint_noise"));
    p.max_yaw = std::stod(get("max_yaw"));
    p.height_min = std::stod(get("height_min"));
    p.height_max = std::stod(get("height_max"));
    const auto grid = doubles("lidar_grid", 5);
    p.azimuth_step_deg = grid[0];
    p.elevation_min_deg = grid[1];
    p.elevation_max_deg = grid[2];
    p.elevation_step_deg = grid[3];
    p.max_range = grid[4];
    p.image_noise = std::stod(get("image_noise"));
    m.joints = JointLayout::from_names(split(get("joint_order"), ','));
    const auto e = doubles("extents", 6);
    m.extents = {e[0], e[1], e[2], e[3], e[4], e[5]};
    for (const auto& s : split(get("train"), ',')) m.train.push_back(std::stoi(s));
    for (const auto& s : split(get("eval"), ',')) m.eval.push_back(std::stoi(s));
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& ex) {
    throw DatasetError(DatasetError::Kind::format, std::string("manifest: ") + ex.what());
  }
  std::vector<int> all = m.train;
  all.insert(all.end(), m.eval.begin(), m.eval.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] != static_cast<int>(i)) {
      throw DatasetError(DatasetError::Kind::format, "manifest: splits must partition the scene indices");
    }
  }
  if (static_cast<int>(all.size()) != m.config.scenes) {
    throw DatasetError(DatasetError::Kind::format, "manifest: splits do not cover every scene");
  }
  return m;
}

void write_dataset(const Dataset& d, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create dataset directory " + dir.string() + ": " + ec.message());
  auto write_file = [&](const fs::path& p, const void* data, std::size_t n) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw Error("cannot write " + p.string());
  };
  for (std::size_t i = 0; i < d.scenes.size(); ++i) {
    const auto bytes = encode_scene(d.scenes[i]);
    const std::string stem = scene_stem(static_cast<int>(i));
    write_file(dir / (stem + ".bin"), bytes.data(), bytes.size());
    std::string csv = pose_record_header() + "\n";
    for (const auto& g : d.scenes[i].gt) csv += pose_record(static_cast<std::int64_t>(i), 1.0, g.pose2d, g.pose3d) + "\n";
    write_file(dir / (stem + ".csv"), csv.data(), csv.size());
  }
  // The manifest goes last so a partially written directory never looks complete.
  const std::string text = manifest_text(d.manifest);
  write_file(dir / "manifest.txt", text.data(), text.size());
}

Dataset read_dataset(const fs::path& dir) {
  auto read_file = [&](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DatasetError(DatasetError::Kind::missing, "missing dataset file " + p.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
  };
  const auto mbytes = read_file(dir / "manifest.txt");
  Dataset d;
  d.manifest = parse_manifest(std::string(mbytes.begin(), mbytes.end()));
  d.scenes.reserve(static_cast<std::size_t>(d.manifest.config.scenes));
  for (int i = 0; i < d.manifest.config.scenes; ++i) {
    const std::string name = scene_stem(i) + ".bin";
    d.scenes.push_back(decode_scene(read_file(dir / name), name));
  }
  return d;
}

}  // namespace hperl
