#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "brainenc/checkpoint.hpp"
#include "brainenc/config.hpp"
#include "brainenc/ensemble.hpp"
#include "brainenc/trainer.hpp"
#include "brainenc/dataset.hpp"
#include "brainenc/evaluation.hpp"
#include "brainenc/prediction.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace brainenc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI with stdout and stderr captured to files under `dir`.
Run cli(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = env + " " + std::string(BRAINENC_BIN) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const std::string kConfigs = BRAINENC_CONFIGS;

}  // namespace

TEST_CASE("gen-data, pretrain, finetune, predict, evaluate and ensemble run end to end") {
  testutil::TempDir dir("cli_e2e");
  const auto root = dir.path();
  const std::string env = "BRAINENC_RUN_ROOT=" + root.string();
  const std::string data = (root / "data").string(), cfg = kConfigs + "/tiny_train.json";

  auto r = cli(root, "gen-data --spec " + kConfigs + "/tiny_data.json --out data", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(root / "data" / "manifest.json"));
  CHECK(fs::exists(root / "data" / "ground_truth.json"));
  CHECK(fs::exists(root / "data" / "synth_spec.json"));

  r = cli(root, "pretrain --config " + cfg + " --data " + data + " --out pre", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"config.json", "seed", "run.json", "train_log.jsonl", "checkpoint.nckp", "summary.json"})
    CHECK_MESSAGE(fs::exists(root / "pre" / f), f);
  CHECK(slurp(root / "pre" / "seed") == "5\n");
  const auto log = slurp(root / "pre" / "train_log.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);  // epoch 0 plus three training epochs

  const std::string init = (root / "pre" / "checkpoint.nckp").string();
  for (int s : {0, 1}) {
    r = cli(root, "finetune --config " + cfg + " --data " + data + " --subject " + std::to_string(s) + " --init " + init +
                      " --out ft" + std::to_string(s),
            env);
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  CHECK(data::read_json(root / "ft1" / "run.json")["subject"] == 1);

  const std::string ft0 = (root / "ft0" / "checkpoint.nckp").string(), ft1 = (root / "ft1" / "checkpoint.nckp").string();
  r = cli(root, "predict --ckpt " + ft0 + " --ckpt " + ft1 + " --data " + data + " --split val --out p_ft --workers 2", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = cli(root, "predict --ckpt " + init + " --data " + data + " --split val --out p_pre", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto ds = data::load_dataset(root / "data");
  const auto p_ft = load_predictions(root / "p_ft");
  CHECK(p_ft.subjects.size() == 2);
  CHECK_NOTHROW(validate_predictions(p_ft, ds));

  r = cli(root, "evaluate --pred p_ft --data " + data + " --split val --out r_ft.json", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("overall m") != std::string::npos);
  r = cli(root, "evaluate --pred p_pre --data " + data + " --split val --out r_pre.json", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto report = eval::report_from_json(data::read_json(root / "r_ft.json"));
  CHECK(report.overall_m == doctest::Approx(eval::score_report(p_ft, ds).overall_m).epsilon(1e-12));

  data::write_json(root / "ens.json", {{"mode", "score"},
                                       {"members", {{{"predictions", "p_ft"}, {"report", "r_ft.json"}},
                                                    {{"predictions", "p_pre"}, {"report", "r_pre.json"}}}}});
  r = cli(root, "ensemble --spec " + (root / "ens.json").string() + " --data " + data + " --out p_ens", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = cli(root, "evaluate --pred p_ens --data " + data + " --out r_ens.json", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = cli(root, "report --in " + (root / "r_ens.json").string(), env);
  CHECK(r.code == 0);
  CHECK(r.out.find("subject") != std::string::npos);

  // The echoed config reproduces the pretraining checkpoint byte for byte.
  r = cli(root, "pretrain --config " + (root / "pre" / "config.json").string() + " --out pre_again", env);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(root / "pre" / "checkpoint.nckp") == slurp(root / "pre_again" / "checkpoint.nckp"));
  CHECK_NOTHROW(config::load_run_config(root / "pre" / "config.json"));
}

TEST_CASE("exit codes") {
  testutil::TempDir dir("cli_codes");
  const auto root = dir.path();

  data::write_json(root / "typo.json", {{"train", {{"lr0", 0.01}, {"pateince", 2}}}});
  auto r = cli(root, "pretrain --config " + (root / "typo.json").string() + " --data x --out " + (root / "o").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("train.pateince") != std::string::npos);

  data::write_json(root / "typo2.json", {{"loss", {{"pc", 1.0}, {"mnnpc_weight", 1.0}}}});
  r = cli(root, "pretrain --config " + (root / "typo2.json").string() + " --data x --out " + (root / "o").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("mnnpc_weight") != std::string::npos);

  data::write_json(root / "spec.json", {{"n_subjects", 2}, {"vertices", 10}});
  r = cli(root, "gen-data --spec " + (root / "spec.json").string() + " --out " + (root / "d").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("vertices") != std::string::npos);

  r = cli(root, "pretrain --config " + kConfigs + "/tiny_train.json --data " + (root / "missing").string() + " --out " +
                    (root / "o").string());
  CHECK(r.code == 3);

  r = cli(root, "report --in " + (root / "missing.json").string());
  CHECK(r.code == 3);

  CHECK(cli(root, "").code == 1);
  CHECK(cli(root, "frobnicate").code == 1);
  CHECK(cli(root, "predict --data x --out y").code == 1);
  CHECK(cli(root, "predict --ckpt a --data x --split train --out y").code == 1);
  CHECK(cli(root, "--help").code == 0);
}

TEST_CASE("selftest passes") {
  testutil::TempDir dir("cli_selftest");
  const auto r = cli(dir.path(), "selftest");
  CHECK_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("all suites passed") != std::string::npos);
}

TEST_CASE("run config parsing") {
  const auto defaults = config::run_config_from_json(json::object());
  CHECK(defaults.model.embedding_dim == 512);
  CHECK(defaults.model.extractor.feature_dim == 256);
  CHECK(defaults.train.lr0 == 1e-4);
  CHECK(defaults.ensemble_mode == ens::WeightMode::score);

  const json j = {{"data", {{"root", "d"}}},
                  {"model", {{"extractor", {{"kind", "conv"}, {"widths", {4, 8}}, {"activation", "tanh"}}}, {"embedding_dim", 6}}},
                  {"train", {{"batch_size", 4}, {"transfer", "extractor"}}},
                  {"loss", {{"pc", 0.5}, {"use_noise_ceiling", true}}},
                  {"ensemble", {{"mode", "uniform"}}}};
  const auto c = config::run_config_from_json(j);
  CHECK(c.data_root == "d");
  CHECK(c.model.extractor.kind == model::ExtractorKind::conv);
  CHECK(c.model.extractor.widths == std::vector<std::size_t>{4, 8});
  CHECK(c.model.embedding_dim == 6);
  CHECK(c.train.batch_size == 4);
  CHECK(c.train.transfer == train::Transfer::extractor);
  CHECK(c.train.loss.pc == 0.5);
  CHECK(c.train.loss.use_noise_ceiling == true);
  CHECK(c.ensemble_mode == ens::WeightMode::uniform);
  // The resolved echo parses back to the same document.
  CHECK(config::to_json(config::run_config_from_json(config::to_json(c))) == config::to_json(c));

  auto rejects = [](const json& bad, const std::string& path) {
    CHECK_THROWS_WITH_AS(config::run_config_from_json(bad), doctest::Contains(path.c_str()), ConfigError);
  };
  rejects({{"modle", json::object()}}, "modle");
  rejects({{"data", {{"path", "x"}}}}, "data.path");
  rejects({{"model", {{"extractor", {{"depth", 3}}}}}}, "model.extractor.depth");
  rejects({{"model", {{"extractor", {{"kind", "vit"}}}}}}, "model.extractor.kind");
  rejects({{"model", {{"extractor", {{"widths", {0}}}}}}}, "model.extractor.widths");
  rejects({{"ensemble", {{"weights", 1}}}}, "ensemble.weights");
  rejects({{"ensemble", {{"members", {{{"predictions", "a"}, {"scroes", 1}}}}}}}, "ensemble.members[0].scroes");
  CHECK_THROWS_AS(config::run_config_from_json({{"train", {{"loss", {{"pc", 1.0}}}}}, {"loss", {{"pc", 1.0}}}}),
                  ConfigError);
  CHECK_THROWS_AS(config::run_config_from_json({{"train", {{"batch_size", 0}}}}), ConfigError);
  CHECK_THROWS_AS(config::run_config_from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(config::load_run_config("/nonexistent/config.json"), ConfigError);
}
