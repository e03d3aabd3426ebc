#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "densefocus/experiments.hpp"
#include "densefocus/model.hpp"

namespace densefocus::io {

// shortest round-trip decimal representation; '.' decimal, no locale
std::string format_double(double v);

// rows of already-formatted fields; LF line endings, header mandatory
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

nlohmann::json head_to_json(const model::DenseHead& head);
model::DenseHead head_from_json(const nlohmann::json& j);
void save_head(const std::filesystem::path& path, const model::DenseHead& head);
model::DenseHead load_head(const std::filesystem::path& path);

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<model::HistoryRow>& history);
void write_anchor_csv(const std::filesystem::path& path, const anchors::AnchorSet& set);
void write_cdf_csv(const std::filesystem::path& path, const experiments::CdfCurve& curve);

nlohmann::json report_to_json(const experiments::ExperimentReport& report);
nlohmann::json metrics_to_json(const experiments::Metrics& m);
nlohmann::json task_to_json(const experiments::SyntheticTaskConfig& cfg);
nlohmann::json train_to_json(const model::TrainConfig& cfg);

// ---- config parsing (versioned schema; unknown keys rejected) ----

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

experiments::SyntheticTaskConfig parse_task_config(const nlohmann::json& j);
model::TrainConfig parse_train_config(const nlohmann::json& j);
loss::LossConfig parse_loss_config(const nlohmann::json& j);
model::SamplerConfig parse_sampler_config(const nlohmann::json& j);
std::vector<experiments::SweepSetting> parse_sweep_settings(const nlohmann::json& j);

// top-level documents for the train / sweep commands
struct TrainDocument {
  experiments::SyntheticTaskConfig task;
  model::TrainConfig train;
};
struct SweepDocument {
  experiments::SyntheticTaskConfig task;
  model::TrainConfig train;
  std::vector<experiments::SweepSetting> settings;
  int trials = 1;
};

TrainDocument parse_train_document(const nlohmann::json& j);
SweepDocument parse_sweep_document(const nlohmann::json& j);

nlohmann::json load_json_file(const std::filesystem::path& path);  // throws ConfigError

inline constexpr int kConfigVersion = 1;

}  // namespace densefocus::io
