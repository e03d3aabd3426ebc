#include "densefocus/io.hpp"

#include <charconv>
#include <fstream>
#include <set>

namespace densefocus::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out << ',';
    out << header[i];
  }
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
}

namespace {

const char* arch_name(model::Arch a) {
  return a == model::Arch::Linear ? "linear" : "one_hidden";
}

model::Arch arch_from_name(const std::string& s) {
  if (s == "linear") return model::Arch::Linear;
  if (s == "one_hidden") return model::Arch::OneHidden;
  throw ConfigError("unknown architecture: " + s);
}

const char* loss_kind_name(loss::LossKind k) {
  switch (k) {
    case loss::LossKind::CE: return "ce";
    case loss::LossKind::AlphaCE: return "alpha_ce";
    case loss::LossKind::FL: return "fl";
    case loss::LossKind::FLStar: return "fl_star";
    case loss::LossKind::Hinge: return "hinge";
  }
  return "?";
}

loss::LossKind loss_kind_from_name(const std::string& s) {
  if (s == "ce") return loss::LossKind::CE;
  if (s == "alpha_ce") return loss::LossKind::AlphaCE;
  if (s == "fl") return loss::LossKind::FL;
  if (s == "fl_star") return loss::LossKind::FLStar;
  if (s == "hinge") return loss::LossKind::Hinge;
  throw ConfigError("unknown loss kind: " + s);
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace

json head_to_json(const model::DenseHead& head) {
  json j;
  j["format"] = "densefocus-head";
  j["version"] = kConfigVersion;
  j["arch"] = arch_name(head.arch);
  j["feature_dim"] = head.feature_dim;
  j["num_classes"] = head.num_classes;
  j["hidden_width"] = head.hidden_width;
  j["cls_w1"] = head.cls_w1;
  j["cls_b1"] = head.cls_b1;
  j["reg_w1"] = head.reg_w1;
  j["reg_b1"] = head.reg_b1;
  j["cls_w2"] = head.cls_w2;
  j["cls_b2"] = head.cls_b2;
  j["reg_w2"] = head.reg_w2;
  j["reg_b2"] = head.reg_b2;
  return j;
}

model::DenseHead head_from_json(const json& j) {
  if (get_or<std::string>(j, "format", "") != "densefocus-head") {
    throw ConfigError("not a densefocus head document");
  }
  model::DenseHead h;
  h.arch = arch_from_name(j.at("arch").get<std::string>());
  h.feature_dim = j.at("feature_dim").get<int>();
  h.num_classes = j.at("num_classes").get<int>();
  h.hidden_width = j.at("hidden_width").get<int>();
  h.cls_w1 = j.at("cls_w1").get<std::vector<double>>();
  h.cls_b1 = j.at("cls_b1").get<std::vector<double>>();
  h.reg_w1 = j.at("reg_w1").get<std::vector<double>>();
  h.reg_b1 = j.at("reg_b1").get<std::vector<double>>();
  h.cls_w2 = j.at("cls_w2").get<std::vector<double>>();
  h.cls_b2 = j.at("cls_b2").get<std::vector<double>>();
  h.reg_w2 = j.at("reg_w2").get<std::vector<double>>();
  h.reg_b2 = j.at("reg_b2").get<std::vector<double>>();
  return h;
}

void save_head(const std::filesystem::path& path, const model::DenseHead& head) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << head_to_json(head).dump(2) << '\n';
}

model::DenseHead load_head(const std::filesystem::path& path) {
  return head_from_json(load_json_file(path));
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<model::HistoryRow>& history) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(history.size());
  for (const auto& h : history) {
    rows.push_back({std::to_string(h.iteration), format_double(h.loss), format_double(h.lr)});
  }
  write_csv(path, {"iteration", "loss", "lr"}, rows);
}

void write_anchor_csv(const std::filesystem::path& path, const anchors::AnchorSet& set) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const geometry::Box& b = set.boxes[i];
    rows.push_back({std::to_string(set.level_of(i)), format_double(b.cx()), format_double(b.cy()),
                    format_double(b.width()), format_double(b.height())});
  }
  write_csv(path, {"level", "cx", "cy", "w", "h"}, rows);
}

void write_cdf_csv(const std::filesystem::path& path, const experiments::CdfCurve& curve) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(curve.normalized_losses.size());
  for (std::size_t i = 0; i < curve.normalized_losses.size(); ++i) {
    rows.push_back({std::to_string(i), format_double(curve.normalized_losses[i]),
                    format_double(curve.cumulative[i])});
  }
  write_csv(path, {"rank", "normalized_loss", "cumulative"}, rows);
}

json metrics_to_json(const experiments::Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"ap", m.ap}};
}

json task_to_json(const experiments::SyntheticTaskConfig& cfg) {
  json j;
  j["mode"] = cfg.mode == experiments::SyntheticTaskConfig::Mode::Classification
                  ? "classification"
                  : "toy_detection";
  j["imbalance_ratio"] = cfg.imbalance_ratio;
  j["num_positives"] = cfg.num_positives;
  j["feature_noise"] = cfg.feature_noise;
  j["overlap_hardness"] = cfg.overlap_hardness;
  j["image_size"] = cfg.image_size;
  j["num_images"] = cfg.num_images;
  j["min_objects"] = cfg.min_objects;
  j["max_objects"] = cfg.max_objects;
  j["seed"] = cfg.seed;
  return j;
}

static json loss_to_json(const loss::LossConfig& cfg) {
  json j;
  j["kind"] = loss_kind_name(cfg.kind);
  j["gamma"] = cfg.gamma;
  if (cfg.alpha) j["alpha"] = *cfg.alpha;
  j["beta"] = cfg.beta;
  return j;
}

static json sampler_to_json(const model::SamplerConfig& cfg) {
  json j;
  switch (cfg.kind) {
    case model::SamplerConfig::Kind::AllAnchors: j["kind"] = "all"; break;
    case model::SamplerConfig::Kind::Ohem: j["kind"] = "ohem"; break;
    case model::SamplerConfig::Kind::Ohem1to3: j["kind"] = "ohem_1to3"; break;
  }
  j["batch_size"] = cfg.batch_size;
  if (cfg.nms_threshold) j["nms_threshold"] = *cfg.nms_threshold;
  return j;
}

json train_to_json(const model::TrainConfig& cfg) {
  json j;
  j["learning_rate"] = cfg.learning_rate;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["iterations"] = cfg.iterations;
  j["lr_drop_points"] = cfg.lr_drop_points;
  j["seed"] = cfg.seed;
  j["pi"] = cfg.pi;
  j["loss"] = loss_to_json(cfg.loss);
  j["sampler"] = sampler_to_json(cfg.sampler);
  j["arch"] = arch_name(cfg.arch);
  j["hidden_width"] = cfg.hidden_width;
  return j;
}

json report_to_json(const experiments::ExperimentReport& report) {
  json j;
  j["format"] = "densefocus-report";
  j["version"] = kConfigVersion;
  j["task"] = task_to_json(report.task);
  j["train"] = train_to_json(report.base_train);
  j["trials"] = report.trials;
  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"setting", c.setting},
                     {"trial", c.trial},
                     {"seed", c.seed},
                     {"diverged", c.diverged},
                     {"divergence_iteration", c.divergence_iteration},
                     {"metrics", metrics_to_json(c.metrics)}});
  }
  j["cells"] = cells;
  json sums = json::array();
  for (const auto& s : report.summaries) {
    sums.push_back({{"setting", s.setting},
                    {"diverged_trials", s.diverged_trials},
                    {"mean", metrics_to_json(s.mean)}});
  }
  j["summaries"] = sums;
  return j;
}

experiments::SyntheticTaskConfig parse_task_config(const json& j) {
  reject_unknown_keys(j,
                      {"mode", "imbalance_ratio", "num_positives", "feature_noise",
                       "overlap_hardness", "image_size", "num_images", "min_objects",
                       "max_objects", "seed"},
                      "task");
  experiments::SyntheticTaskConfig cfg;
  const std::string mode = get_or<std::string>(j, "mode", "classification");
  if (mode == "classification") {
    cfg.mode = experiments::SyntheticTaskConfig::Mode::Classification;
  } else if (mode == "toy_detection") {
    cfg.mode = experiments::SyntheticTaskConfig::Mode::ToyDetection;
  } else {
    throw ConfigError("task: unknown mode '" + mode + "'");
  }
  cfg.imbalance_ratio = get_or<double>(j, "imbalance_ratio", cfg.imbalance_ratio);
  cfg.num_positives = get_or<int>(j, "num_positives", cfg.num_positives);
  cfg.feature_noise = get_or<double>(j, "feature_noise", cfg.feature_noise);
  cfg.overlap_hardness = get_or<double>(j, "overlap_hardness", cfg.overlap_hardness);
  cfg.image_size = get_or<int>(j, "image_size", cfg.image_size);
  cfg.num_images = get_or<int>(j, "num_images", cfg.num_images);
  cfg.min_objects = get_or<int>(j, "min_objects", cfg.min_objects);
  cfg.max_objects = get_or<int>(j, "max_objects", cfg.max_objects);
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

loss::LossConfig parse_loss_config(const json& j) {
  reject_unknown_keys(j, {"kind", "gamma", "alpha", "beta"}, "loss");
  loss::LossConfig cfg;
  cfg.kind = loss_kind_from_name(j.at("kind").get<std::string>());
  cfg.gamma = get_or<double>(j, "gamma", 0.0);
  if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
  cfg.beta = get_or<double>(j, "beta", 0.0);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

model::SamplerConfig parse_sampler_config(const json& j) {
  reject_unknown_keys(j, {"kind", "batch_size", "nms_threshold"}, "sampler");
  model::SamplerConfig cfg;
  const std::string kind = get_or<std::string>(j, "kind", "all");
  if (kind == "all") {
    cfg.kind = model::SamplerConfig::Kind::AllAnchors;
  } else if (kind == "ohem") {
    cfg.kind = model::SamplerConfig::Kind::Ohem;
  } else if (kind == "ohem_1to3") {
    cfg.kind = model::SamplerConfig::Kind::Ohem1to3;
  } else {
    throw ConfigError("sampler: unknown kind '" + kind + "'");
  }
  cfg.batch_size = get_or<int>(j, "batch_size", cfg.batch_size);
  if (j.contains("nms_threshold")) cfg.nms_threshold = j.at("nms_threshold").get<double>();
  return cfg;
}

model::TrainConfig parse_train_config(const json& j) {
  reject_unknown_keys(j,
                      {"learning_rate", "momentum", "weight_decay", "iterations",
                       "lr_drop_points", "seed", "pi", "loss", "sampler", "arch", "hidden_width"},
                      "train");
  model::TrainConfig cfg;
  cfg.learning_rate = get_or<double>(j, "learning_rate", cfg.learning_rate);
  cfg.momentum = get_or<double>(j, "momentum", cfg.momentum);
  cfg.weight_decay = get_or<double>(j, "weight_decay", cfg.weight_decay);
  cfg.iterations = get_or<int>(j, "iterations", cfg.iterations);
  if (j.contains("lr_drop_points")) {
    cfg.lr_drop_points = j.at("lr_drop_points").get<std::vector<double>>();
  }
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.pi = get_or<double>(j, "pi", cfg.pi);
  if (j.contains("loss")) cfg.loss = parse_loss_config(j.at("loss"));
  if (j.contains("sampler")) cfg.sampler = parse_sampler_config(j.at("sampler"));
  if (j.contains("arch")) cfg.arch = arch_from_name(j.at("arch").get<std::string>());
  cfg.hidden_width = get_or<int>(j, "hidden_width", cfg.hidden_width);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

std::vector<experiments::SweepSetting> parse_sweep_settings(const json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("settings: expected a non-empty array");
  std::vector<experiments::SweepSetting> out;
  for (const auto& sj : j) {
    reject_unknown_keys(sj, {"name", "loss", "sampler"}, "setting");
    experiments::SweepSetting s;
    s.name = sj.at("name").get<std::string>();
    s.loss = parse_loss_config(sj.at("loss"));
    if (sj.contains("sampler")) s.sampler = parse_sampler_config(sj.at("sampler"));
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

void check_version(const json& j, const char* where) {
  if (!j.contains("version")) throw ConfigError(std::string(where) + ": missing 'version'");
  if (j.at("version").get<int>() != kConfigVersion) {
    throw ConfigError(std::string(where) + ": unsupported config version");
  }
}

}  // namespace

TrainDocument parse_train_document(const json& j) {
  reject_unknown_keys(j, {"version", "task", "train"}, "config");
  check_version(j, "config");
  TrainDocument doc;
  doc.task = parse_task_config(j.value("task", json::object()));
  doc.train = parse_train_config(j.value("train", json::object()));
  return doc;
}

SweepDocument parse_sweep_document(const json& j) {
  reject_unknown_keys(j, {"version", "task", "train", "settings", "trials"}, "config");
  check_version(j, "config");
  SweepDocument doc;
  doc.task = parse_task_config(j.value("task", json::object()));
  doc.train = parse_train_config(j.value("train", json::object()));
  doc.settings = parse_sweep_settings(j.at("settings"));
  doc.trials = get_or<int>(j, "trials", 1);
  if (doc.trials < 1) throw ConfigError("config: trials must be >= 1");
  return doc;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace densefocus::io
