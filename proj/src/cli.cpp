#include "hperl/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "hperl/config.hpp"
#include "hperl/dataset.hpp"
#include "hperl/pipeline.hpp"

namespace hperl {

namespace fs = std::filesystem;

int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HPERL_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = cap;
  }
  return n;
}

namespace {

void write_run_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "run_config.txt");
  if (!out) throw Error("cannot write " + (fs::path(cfg.out_dir) / "run_config.txt").string());
  out << config_text(cfg);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  const auto poses = AnchorPoseSet::load_default();
  const Dataset d = generate_dataset(cfg.data, poses);
  write_dataset(d, cfg.out_dir);
  long long peds = 0, points = 0;
  for (const auto& s : d.scenes) {
    for (const auto& p : s.gt) {
      ++peds;
      points += p.lidar_points;
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "scenes %zu  pedestrians %lld  mean points/pedestrian %.1f\n", d.scenes.size(),
                peds, peds ? static_cast<double>(points) / static_cast<double>(peds) : 0.0);
  out << buf;
  return kExitOk;
}

std::string row_label(const ModelConfig& m) {
  return m.mode == InputMode::fusion ? "fusion(" + to_string(m.fusion) + "," + to_string(m.roi_op) + ")"
                                     : "rgb(" + to_string(m.roi_op) + ")";
}

void train_into(const RunConfig& cfg, const Dataset& data, const AnchorPoseSet& poses, std::ostream* log) {
  Trainer trainer(cfg.model, data, poses);
  TrainOptions opt;
  opt.out_dir = cfg.out_dir;
  opt.resume = cfg.resume;
  opt.config_text = config_text(cfg);
  if (log) opt.log = [log](const std::string& line) { *log << line << '\n' << std::flush; };
  trainer.run(opt);
}

EvalResult eval_into(const RunConfig& cfg, const Dataset& data, const AnchorPoseSet& poses,
                     const fs::path& checkpoint, std::string* label = nullptr) {
  const auto& scenes = split_indices(data, cfg.split);
  EvalResult r;
  if (cfg.predictor == "oracle") {
    r = evaluate_oracle(data, scenes, cfg.model.eval_match_iou);
    if (label) *label = "oracle";
  } else {
    const ToyNet model = model_from_checkpoint(load_checkpoint(checkpoint), poses);
    r = evaluate_model(model, data, scenes);
    if (label) *label = row_label(model.config());
  }
  write_predictions(fs::path(cfg.out_dir) / "predictions.csv", r);
  write_report(fs::path(cfg.out_dir) / "report.csv", r.report);
  return r;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto poses = AnchorPoseSet::load_default();
  const Dataset data = read_dataset(cfg.dataset_dir);
  out << kLossLogHeader << '\n';
  train_into(cfg, data, poses, &out);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  if (cfg.predictor == "model" && cfg.checkpoint.empty()) {
    throw ConfigError("eval needs --checkpoint (or predictor=oracle)");
  }
  const auto poses = AnchorPoseSet::load_default();
  const Dataset data = read_dataset(cfg.dataset_dir);
  std::string label;
  const EvalResult r = eval_into(cfg, data, poses, cfg.checkpoint, &label);
  out << report_row(label, r.report) << '\n';
  return kExitOk;
}

int cmd_ablate(const RunConfig& base, std::ostream& out, std::ostream& err) {
  struct Cell {
    RunConfig cfg;
    std::string flip;
    std::string row;
  };
  std::vector<Cell> cells;
  const auto modes = split_list(base.ablate_modes), fusions = split_list(base.ablate_fusion),
             rois = split_list(base.ablate_roi), flips = split_list(base.ablate_flip);
  for (const auto& m : modes) {
    for (const auto& f : fusions) {
      for (const auto& r : rois) {
        for (const auto& fl : flips) {
          KeyValues kv{{"mode", m}, {"fusion", f}, {"roi_op", r}, {"flip_augment", fl}};
          RunConfig c = base;
          apply_key_values(c, kv);
          c.model.validate();
          c.out_dir = (fs::path(base.out_dir) / (m + "_" + f + "_" + r + "_flip" + fl)).string();
          c.resume.clear();
          cells.push_back({c, fl, {}});
        }
      }
    }
  }
  if (cells.empty()) throw ConfigError("ablation grid is empty");

  const auto poses = AnchorPoseSet::load_default();
  const Dataset data = read_dataset(base.dataset_dir);
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      Cell& cell = cells[i];
      const auto& m = cell.cfg.model;
      std::string prefix = to_string(m.mode) + "," + to_string(m.fusion) + "," + to_string(m.roi_op) + "," +
                           cell.flip + ",";
      try {
        write_run_config(cell.cfg);
        train_into(cell.cfg, data, poses, nullptr);
        const EvalResult r = eval_into(cell.cfg, data, poses, fs::path(cell.cfg.out_dir) / "best.ckpt");
        char buf[256];
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,ok", r.report.mpjpe_2d(), r.report.pckh(),
                      r.report.cde(), r.report.xye(), r.report.recall());
        cell.row = prefix + buf;
      } catch (const std::exception& e) {
        cell.row = prefix + "nan,nan,nan,nan,nan,failed";
        std::lock_guard<std::mutex> lock(io);
        err << "ablation cell " << cell.cfg.out_dir << " failed: " << e.what() << '\n';
      }
    }
  };
  const int n = std::min<int>(worker_threads(), static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string table = "mode,fusion,roi_op,flip,mpjpe_2d,pckh,cde,xye,recall,status\n";
  for (const auto& c : cells) table += c.row + "\n";
  std::ofstream f(fs::path(base.out_dir) / "ablation.csv");
  if (!f) throw Error("cannot write ablation table");
  f << table;
  out << table;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Human pose estimation from RGB + LiDAR (desk-scale toolkit)", "hperl"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "key=value config file");
  std::map<std::string, std::string> flag_values;
  for (const auto& k : config_keys()) {
    app.add_option("--" + k.name, flag_values[k.name], k.help);
  }
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset into --out");
  auto* train = app.add_subcommand("train", "train on --dataset, writing checkpoints and the loss log to --out");
  auto* eval = app.add_subcommand("eval", "evaluate --checkpoint on --dataset, writing reports to --out");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate every cell of the ablation grid");

  std::vector<std::string> argv_store = args;
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  RunConfig cfg;
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    KeyValues overrides;
    for (const auto& k : config_keys()) {
      if (app.count("--" + k.name) > 0) overrides[k.name] = flag_values[k.name];
    }
    cfg = resolve_config(config_path.empty() ? KeyValues{} : load_key_values(config_path), overrides);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*gen) {
      int rc = cmd_generate(cfg, out);
      write_run_config(cfg);
      return rc;
    }
    write_run_config(cfg);
    if (*train) return cmd_train(cfg, out);
    if (*eval) return cmd_eval(cfg, out);
    if (*ablate) return cmd_ablate(cfg, out, err);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace hperl
