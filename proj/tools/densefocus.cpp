// densefocus: focal-loss family and dense-detection training toolkit CLI.
//
// Exit codes: 0 success, 1 usage/config error, 2 recorded training divergence.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "densefocus/experiments.hpp"
#include "densefocus/io.hpp"
#include "densefocus/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace densefocus;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

void apply_jobs(const CommonOpts& opts) {
  int jobs = 0;
  if (opts.jobs) {
    jobs = *opts.jobs;
  } else if (const char* env = std::getenv("DENSEFOCUS_JOBS")) {
    jobs = std::atoi(env);
  }
  if (jobs > 0) omp_set_num_threads(jobs);
}

// Written into the output directory before any experiment artifact.
void write_manifest(const CommonOpts& opts, const std::string& command) {
  fs::create_directories(opts.out_dir);
  json j;
  j["command"] = command;
  j["config"] = opts.config_path;
  j["seed"] = opts.seed ? json(*opts.seed) : json(nullptr);
  j["out_dir"] = opts.out_dir;
  j["tool_version"] = kToolVersion;
  const auto now = std::chrono::system_clock::now();
  j["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  std::ofstream out(fs::path(opts.out_dir) / "manifest.json", std::ios::binary);
  out << j.dump(2) << '\n';
}

void write_json_artifact(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

// ---- losses command ----

struct CurveSpec {
  loss::LossConfig cfg;
  std::string label;
};

CurveSpec parse_curve(const std::string& text) {
  // "kind,gamma=2,alpha=0.25,beta=1"
  std::stringstream ss(text);
  std::string tok;
  if (!std::getline(ss, tok, ',')) throw io::ConfigError("empty curve spec");
  json j;
  j["kind"] = tok;
  while (std::getline(ss, tok, ',')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw io::ConfigError("bad curve field: " + tok);
    const std::string key = tok.substr(0, eq);
    try {
      j[key] = std::stod(tok.substr(eq + 1));
    } catch (const std::exception&) {
      throw io::ConfigError("bad curve value in: " + tok);
    }
  }
  return {io::parse_loss_config(j), text};
}

int cmd_losses(const CommonOpts& opts, double xmin, double xmax, double step,
               const std::vector<std::string>& curve_specs) {
  if (!(step > 0.0) || xmax < xmin) throw io::ConfigError("losses: bad grid");
  std::vector<CurveSpec> curves;
  if (curve_specs.empty()) {
    curves.push_back({loss::LossConfig::ce(), "ce"});
    for (double g : {0.5, 1.0, 2.0, 5.0}) {
      curves.push_back({loss::LossConfig::focal(g), "fl,gamma=" + io::format_double(g)});
    }
  } else {
    for (const auto& s : curve_specs) curves.push_back(parse_curve(s));
  }

  write_manifest(opts, "losses");
  std::vector<std::vector<std::string>> rows;
  const int steps = static_cast<int>(std::floor((xmax - xmin) / step + 1e-9));
  for (const auto& c : curves) {
    const char* kind = "?";
    switch (c.cfg.kind) {
      case loss::LossKind::CE: kind = "ce"; break;
      case loss::LossKind::AlphaCE: kind = "alpha_ce"; break;
      case loss::LossKind::FL: kind = "fl"; break;
      case loss::LossKind::FLStar: kind = "fl_star"; break;
      case loss::LossKind::Hinge: kind = "hinge"; break;
    }
    for (int i = 0; i <= steps; ++i) {
      const double xt = xmin + i * step;
      const double v = loss::loss_value(xt, loss::BinaryLabel::Positive, c.cfg);
      const double g = loss::loss_grad(xt, loss::BinaryLabel::Positive, c.cfg);
      rows.push_back({io::format_double(xt), kind, io::format_double(c.cfg.gamma),
                      c.cfg.alpha ? io::format_double(*c.cfg.alpha) : "unbalanced",
                      io::format_double(c.cfg.beta), io::format_double(v), io::format_double(g)});
    }
  }
  io::write_csv(fs::path(opts.out_dir) / "losses.csv",
                {"x_t", "kind", "gamma", "alpha", "beta", "loss", "dloss_dx"}, rows);
  return 0;
}

// ---- train command ----

int cmd_train(const CommonOpts& opts) {
  io::TrainDocument doc = io::parse_train_document(io::load_json_file(opts.config_path));
  if (opts.seed) {
    doc.task.seed = *opts.seed;
    doc.train.seed = *opts.seed;
  }
  write_manifest(opts, "train");

  const experiments::RunOutcome outcome = experiments::run_experiment(doc.task, doc.train);
  const fs::path out(opts.out_dir);
  io::save_head(out / "model.json", outcome.result.head);
  io::write_history_csv(out / "history.csv", outcome.result.history);

  json report;
  report["format"] = "densefocus-train-report";
  report["version"] = io::kConfigVersion;
  report["task"] = io::task_to_json(doc.task);
  report["train"] = io::train_to_json(doc.train);
  report["diverged"] = outcome.result.diverged;
  report["divergence_iteration"] = outcome.result.divergence_iteration;
  report["metrics"] = io::metrics_to_json(outcome.metrics);
  write_json_artifact(out / "report.json", report);

  if (outcome.result.diverged) {
    std::cerr << "training diverged at iteration " << outcome.result.divergence_iteration << "\n";
    return 2;
  }
  std::cout << "ap=" << io::format_double(outcome.metrics.ap) << "\n";
  return 0;
}

// ---- sweep command ----

int cmd_sweep(const CommonOpts& opts) {
  io::SweepDocument doc = io::parse_sweep_document(io::load_json_file(opts.config_path));
  if (opts.seed) {
    doc.task.seed = *opts.seed;
    doc.train.seed = *opts.seed;
  }
  write_manifest(opts, "sweep");

  const experiments::ExperimentReport report =
      experiments::sweep(doc.task, doc.train, doc.settings, doc.trials);
  const fs::path out(opts.out_dir);
  write_json_artifact(out / "report.json", io::report_to_json(report));

  std::vector<std::vector<std::string>> rows;
  for (const auto& c : report.cells) {
    rows.push_back({c.setting, std::to_string(c.trial), std::to_string(c.seed),
                    c.diverged ? "1" : "0", io::format_double(c.metrics.precision),
                    io::format_double(c.metrics.recall), io::format_double(c.metrics.f1),
                    io::format_double(c.metrics.ap)});
  }
  io::write_csv(out / "cells.csv",
                {"setting", "trial", "seed", "diverged", "precision", "recall", "f1", "ap"}, rows);
  for (const auto& s : report.summaries) {
    std::cout << s.setting << " mean_ap=" << io::format_double(s.mean.ap)
              << " diverged=" << s.diverged_trials << "/" << report.trials << "\n";
  }
  return 0;
}

// ---- cdf command ----

int cmd_cdf(const CommonOpts& opts, const std::string& model_path,
            const std::vector<double>& gammas) {
  const json j = io::load_json_file(opts.config_path);
  const experiments::SyntheticTaskConfig task = io::parse_task_config(j.value("task", json::object()));
  if (j.contains("version")) {
    // tolerate a full train document as the data config
  }
  model::DenseHead head = io::load_head(model_path);
  write_manifest(opts, "cdf");

  experiments::SyntheticTaskConfig data_cfg = task;
  if (opts.seed) data_cfg.seed = *opts.seed;
  if (data_cfg.mode != experiments::SyntheticTaskConfig::Mode::Classification) {
    throw io::ConfigError("cdf: only classification-mode data configs are supported");
  }
  const model::TrainingSet data = experiments::gen_classification(data_cfg);
  const std::vector<experiments::CdfCurve> curves = experiments::loss_cdf(head, data, gammas);

  const fs::path out(opts.out_dir);
  for (const auto& c : curves) {
    std::ostringstream name;
    name << "cdf_" << (c.positive_polarity ? "pos" : "neg") << "_gamma"
         << io::format_double(c.gamma) << ".csv";
    io::write_cdf_csv(out / name.str(), c);
    std::cout << name.str()
              << " top10_share=" << io::format_double(experiments::top_fraction_share(c, 0.10))
              << "\n";
  }
  return 0;
}

// ---- anchors command ----

int cmd_anchors(const CommonOpts& opts, int width, int height, std::vector<int> levels) {
  anchors::AnchorConfig cfg;
  if (!levels.empty()) cfg.levels = std::move(levels);
  write_manifest(opts, "anchors");
  const anchors::AnchorSet set = anchors::generate_anchors(cfg, width, height);
  io::write_anchor_csv(fs::path(opts.out_dir) / "anchors.csv", set);
  std::cout << set.size() << " anchors\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"focal-loss family and dense-detection training toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOpts opts;
  app.add_option("--out", opts.out_dir, "output directory")->capture_default_str();
  app.add_option("--seed", opts.seed, "seed override");
  app.add_option("--jobs", opts.jobs, "worker thread count (fallback: DENSEFOCUS_JOBS)");

  auto* losses = app.add_subcommand("losses", "emit loss/derivative curves as CSV");
  double xmin = -5.0, xmax = 5.0, step = 0.01;
  std::vector<std::string> curve_specs;
  losses->add_option("--xmin", xmin, "grid start")->capture_default_str();
  losses->add_option("--xmax", xmax, "grid end")->capture_default_str();
  losses->add_option("--step", step, "grid step")->capture_default_str();
  losses->add_option("--curve", curve_specs,
                     "curve spec, e.g. fl,gamma=2,alpha=0.25 (repeatable)");

  auto* train = app.add_subcommand("train", "train one model from a JSON config");
  train->add_option("--config", opts.config_path, "config file")->required();

  auto* sweep = app.add_subcommand("sweep", "run a sweep grid from a JSON config");
  sweep->add_option("--config", opts.config_path, "config file")->required();

  auto* cdf = app.add_subcommand("cdf", "loss CDF curves for a frozen model");
  std::string model_path;
  std::vector<double> gammas = {0.0, 0.5, 1.0, 2.0};
  cdf->add_option("--model", model_path, "model JSON")->required();
  cdf->add_option("--config", opts.config_path, "data config file")->required();
  cdf->add_option("--gammas", gammas, "gamma list")->delimiter(',');

  auto* anchors_cmd = app.add_subcommand("anchors", "dump an anchor grid as CSV");
  int width = 640, height = 640;
  std::vector<int> levels;
  anchors_cmd->add_option("--width", width, "image width")->capture_default_str();
  anchors_cmd->add_option("--height", height, "image height")->capture_default_str();
  anchors_cmd->add_option("--levels", levels, "pyramid levels")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    apply_jobs(opts);
    if (losses->parsed()) return cmd_losses(opts, xmin, xmax, step, curve_specs);
    if (train->parsed()) return cmd_train(opts);
    if (sweep->parsed()) return cmd_sweep(opts);
    if (cdf->parsed()) return cmd_cdf(opts, model_path, gammas);
    if (anchors_cmd->parsed()) return cmd_anchors(opts, width, height, levels);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
