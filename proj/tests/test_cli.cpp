#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "densefocus/io.hpp"
#include "densefocus/model.hpp"

namespace fs = std::filesystem;
using namespace densefocus;

namespace {

const fs::path kWorkRoot = fs::temp_directory_path() / "densefocus_cli_test";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DENSEFOCUS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = kWorkRoot / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kTrainConfig = R"({
  "version": 1,
  "task": {"mode": "classification", "num_positives": 60, "imbalance_ratio": 40,
           "feature_noise": 1.0, "seed": 5},
  "train": {"iterations": 40, "learning_rate": 0.05, "pi": 0.1,
            "loss": {"kind": "fl", "gamma": 2.0, "alpha": 0.25}}
})";

}  // namespace

TEST_CASE("losses: single-point cross entropy oracle") {
  const fs::path out = fresh_dir("losses_point");
  const int rc = run_cli("--out " + out.string() +
                         " losses --xmin 0 --xmax 0 --step 1 --curve ce");
  CHECK(rc == 0);
  const auto lines = read_lines(out / "losses.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "x_t,kind,gamma,alpha,beta,loss,dloss_dx");
  CHECK(lines[1] == "0,ce,0,unbalanced,0,0.6931471805599453,-0.5");
  CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("losses: default curve set on a coarse grid") {
  const fs::path out = fresh_dir("losses_grid");
  CHECK(run_cli("--out " + out.string() + " losses --xmin -1 --xmax 1 --step 0.5") == 0);
  const auto lines = read_lines(out / "losses.csv");
  CHECK(lines.size() == 1 + 5 * 5);  // header + 5 curves x 5 grid points
  // one ce curve and four focal gammas
  int ce = 0, fl = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].find(",ce,") != std::string::npos) ++ce;
    if (lines[i].find(",fl,") != std::string::npos) ++fl;
  }
  CHECK(ce == 5);
  CHECK(fl == 20);

  CHECK(run_cli("--out " + out.string() + " losses --step 0") == 1);
  CHECK(run_cli("--out " + out.string() + " losses --curve fl,gamma=-1") == 1);
}

TEST_CASE("train: artifacts, reloadable model, exit code 0") {
  const fs::path out = fresh_dir("train_ok");
  const fs::path cfg = kWorkRoot / "train_ok.json";
  write_text(cfg, kTrainConfig);
  CHECK(run_cli("--out " + out.string() + " train --config " + cfg.string()) == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "report.json"));

  const model::DenseHead head = io::load_head(out / "model.json");
  CHECK(head.feature_dim == 3);
  CHECK(head.num_classes == 1);

  const auto history = read_lines(out / "history.csv");
  CHECK(history.size() == 1 + 40);
  CHECK(history[0] == "iteration,loss,lr");

  const auto report = io::load_json_file(out / "report.json");
  CHECK(report.at("diverged").get<bool>() == false);
  CHECK(report.at("metrics").at("ap").get<double>() > 0.0);
}

TEST_CASE("train: reruns are byte-identical except the manifest") {
  const fs::path a = fresh_dir("train_rep_a");
  const fs::path b = fresh_dir("train_rep_b");
  const fs::path cfg = kWorkRoot / "train_rep.json";
  write_text(cfg, kTrainConfig);
  REQUIRE(run_cli("--out " + a.string() + " train --config " + cfg.string()) == 0);
  REQUIRE(run_cli("--out " + b.string() + " train --config " + cfg.string()) == 0);
  for (const char* name : {"model.json", "history.csv", "report.json"}) {
    CHECK(read_bytes(a / name) == read_bytes(b / name));
  }
}

TEST_CASE("train: divergence exits with code 2 and is recorded") {
  const fs::path out = fresh_dir("train_div");
  const fs::path cfg = kWorkRoot / "train_div.json";
  write_text(cfg, R"({
    "version": 1,
    "task": {"num_positives": 30, "imbalance_ratio": 20},
    "train": {"iterations": 50, "learning_rate": 1000000.0, "loss": {"kind": "ce"}}
  })");
  CHECK(run_cli("--out " + out.string() + " train --config " + cfg.string()) == 2);
  const auto report = io::load_json_file(out / "report.json");
  CHECK(report.at("diverged").get<bool>());
  CHECK(report.at("divergence_iteration").get<int>() >= 0);
}

TEST_CASE("config errors exit with code 1") {
  const fs::path out = fresh_dir("train_bad");
  CHECK(run_cli("--out " + out.string() + " train --config /nonexistent.json") == 1);

  const fs::path unknown = kWorkRoot / "unknown_key.json";
  write_text(unknown, R"({"version": 1, "task": {"bogus": 1}})");
  CHECK(run_cli("--out " + out.string() + " train --config " + unknown.string()) == 1);

  const fs::path nover = kWorkRoot / "no_version.json";
  write_text(nover, R"({"task": {}})");
  CHECK(run_cli("--out " + out.string() + " train --config " + nover.string()) == 1);

  const fs::path badjson = kWorkRoot / "bad.json";
  write_text(badjson, "{not json");
  CHECK(run_cli("--out " + out.string() + " train --config " + badjson.string()) == 1);

  CHECK(run_cli("") == 1);           // missing subcommand
  CHECK(run_cli("train") == 1);      // missing --config
  CHECK(run_cli("bogus-cmd") == 1);  // unknown subcommand
}

TEST_CASE("cdf: one csv per polarity and gamma") {
  const fs::path train_out = fresh_dir("cdf_train");
  const fs::path cfg = kWorkRoot / "cdf_cfg.json";
  write_text(cfg, kTrainConfig);
  REQUIRE(run_cli("--out " + train_out.string() + " train --config " + cfg.string()) == 0);

  const fs::path out = fresh_dir("cdf_out");
  CHECK(run_cli("--out " + out.string() + " cdf --model " + (train_out / "model.json").string() +
                " --config " + cfg.string() + " --gammas 0,2") == 0);
  for (const char* name :
       {"cdf_pos_gamma0.csv", "cdf_neg_gamma0.csv", "cdf_pos_gamma2.csv", "cdf_neg_gamma2.csv"}) {
    const auto lines = read_lines(out / name);
    CHECK(lines.size() >= 2);
    CHECK(lines[0] == "rank,normalized_loss,cumulative");
  }
}

TEST_CASE("anchors: grid dump") {
  const fs::path out = fresh_dir("anchors_out");
  CHECK(run_cli("--out " + out.string() + " anchors --width 64 --height 64 --levels 3") == 0);
  const auto lines = read_lines(out / "anchors.csv");
  CHECK(lines.size() == 1 + 8 * 8 * 9);
  CHECK(lines[0] == "level,cx,cy,w,h");
  CHECK(lines[1].rfind("3,4,4,", 0) == 0);  // first anchor centered at (4,4)

  // image smaller than the coarsest stride is a usage error
  CHECK(run_cli("--out " + out.string() + " anchors --width 4 --height 4 --levels 3") == 1);
}

TEST_CASE("sweep: report and cells artifacts") {
  const fs::path out = fresh_dir("sweep_out");
  const fs::path cfg = kWorkRoot / "sweep_cfg.json";
  write_text(cfg, R"({
    "version": 1,
    "task": {"num_positives": 40, "imbalance_ratio": 25, "seed": 3},
    "train": {"iterations": 30, "pi": 0.1},
    "trials": 2,
    "settings": [
      {"name": "fl", "loss": {"kind": "fl", "gamma": 2.0, "alpha": 0.25}},
      {"name": "ce", "loss": {"kind": "ce"}}
    ]
  })");
  CHECK(run_cli("--out " + out.string() + " sweep --config " + cfg.string()) == 0);
  const auto cells = read_lines(out / "cells.csv");
  CHECK(cells.size() == 1 + 4);  // 2 settings x 2 trials
  CHECK(cells[0] == "setting,trial,seed,diverged,precision,recall,f1,ap");
  const auto report = io::load_json_file(out / "report.json");
  CHECK(report.at("format").get<std::string>() == "densefocus-report");
  CHECK(report.at("cells").size() == 4);
  CHECK(report.at("summaries").size() == 2);
}

TEST_CASE("io: format_double uses shortest round-trip form") {
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(io::format_double(1.0) == "1");
  CHECK(io::format_double(-2.5) == "-2.5");
  CHECK(io::format_double(0.6931471805599453) == "0.6931471805599453");
}

TEST_CASE("io: head serialization round-trips exactly") {
  model::DenseHead head = model::init_head(3, 2, model::Arch::OneHidden, 5, 0.01, 77);
  const auto j = io::head_to_json(head);
  const model::DenseHead back = io::head_from_json(j);
  CHECK(back.arch == head.arch);
  CHECK(back.hidden_width == head.hidden_width);
  REQUIRE(back.cls_w1.size() == head.cls_w1.size());
  for (std::size_t i = 0; i < head.cls_w1.size(); ++i) CHECK(back.cls_w1[i] == head.cls_w1[i]);
  for (std::size_t i = 0; i < head.cls_b2.size(); ++i) CHECK(back.cls_b2[i] == head.cls_b2[i]);
  for (std::size_t i = 0; i < head.reg_w2.size(); ++i) CHECK(back.reg_w2[i] == head.reg_w2[i]);

  nlohmann::json bad = j;
  bad["format"] = "something-else";
  CHECK_THROWS_AS(io::head_from_json(bad), io::ConfigError);
}
