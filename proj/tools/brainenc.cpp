#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "brainenc/checkpoint.hpp"
#include "brainenc/config.hpp"
#include "brainenc/dataset.hpp"
#include "brainenc/ensemble.hpp"
#include "brainenc/errors.hpp"
#include "brainenc/evaluation.hpp"
#include "brainenc/selftest.hpp"
#include "brainenc/synthgen.hpp"
#include "brainenc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace brainenc;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Relative run-artifact paths (outputs, checkpoints, predictions, reports)
// resolve under $BRAINENC_RUN_ROOT when it is set.
fs::path run_path(const std::string& p) {
  const fs::path path(p);
  const char* root = std::getenv("BRAINENC_RUN_ROOT");
  if (path.is_absolute() || !root || !*root) return path;
  return fs::path(root) / path;
}

json read_config_json(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("file not found: " + path.string());
  try {
    return data::read_json(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

struct Options {
  std::string spec, out, config, data, init, pred, in, split;
  std::vector<std::string> ckpts;
  std::size_t subject = 0, workers = 0, batch = 64;
  bool workers_given() const { return workers > 0; }
};

std::string data_root(const Options& o, const config::RunConfig& cfg) {
  if (!o.data.empty()) return o.data;
  if (!cfg.data_root.empty()) return cfg.data_root;
  throw UsageError("no dataset given: pass --data or set data.root in the config");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// Writes the run directory skeleton and returns the open log stream.
std::ofstream start_run(const fs::path& dir, const config::RunConfig& cfg, const json& run) {
  fs::create_directories(dir);
  data::write_json(dir / "config.json", config::to_json(cfg));
  write_text(dir / "seed", std::to_string(cfg.train.seed) + "\n");
  data::write_json(dir / "run.json", run);
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot open " + (dir / "train_log.jsonl").string());
  return log;
}

train::LogSink log_sink(std::ofstream& log) {
  return [&log](const json& line) {
    log << line.dump() << "\n";
    log.flush();
    std::cerr << line.value("stage", "") << " epoch " << line.value("epoch", 0) << "  val_m "
              << line.value("val_m", 0.0) << "\n";
  };
}

void finish_run(const fs::path& dir, const train::TrainResult& result) {
  model::save_checkpoint(result.checkpoint, dir / "checkpoint.nckp");
  const json summary = {{"stage", result.checkpoint.stage},
                        {"best_epoch", result.checkpoint.epoch},
                        {"val_m", result.checkpoint.val_m},
                        {"epochs_run", result.epochs_run},
                        {"subjects", result.checkpoint.subjects},
                        {"checkpoint", "checkpoint.nckp"}};
  data::write_json(dir / "summary.json", summary);
  std::cout << "best epoch " << result.checkpoint.epoch << ", validation m " << result.checkpoint.val_m << "\n"
            << "checkpoint written to " << (dir / "checkpoint.nckp").string() << "\n";
}

config::RunConfig load_config(const Options& o) {
  auto cfg = config::load_run_config(o.config);
  if (o.workers_given()) cfg.train.workers = o.workers;
  cfg.train.validate();
  return cfg;
}

int cmd_gen_data(const Options& o) {
  synth::SynthSpec spec;
  if (!o.spec.empty()) spec = synth::synth_spec_from_json(read_config_json(o.spec));
  const auto out = run_path(o.out);
  const auto syn = synth::generate(spec);
  synth::save_synthetic(syn, out);
  data::write_json(out / "synth_spec.json", synth::to_json(spec));
  std::cout << "wrote " << spec.n_subjects << " subjects to " << out.string() << "\n";
  return 0;
}

int cmd_pretrain(const Options& o) {
  auto cfg = load_config(o);
  cfg.data_root = data_root(o, cfg);
  const auto dataset = data::load_dataset(cfg.data_root);
  const auto dir = run_path(o.out);
  auto log = start_run(dir, cfg, {{"command", "pretrain"}, {"data", cfg.data_root}});
  const auto result = train::pretrain(dataset, cfg.model, cfg.train, log_sink(log));
  finish_run(dir, result);
  return 0;
}

int cmd_finetune(const Options& o) {
  auto cfg = load_config(o);
  cfg.data_root = data_root(o, cfg);
  const auto dataset = data::load_dataset(cfg.data_root);
  std::optional<model::Checkpoint> source;
  if (!o.init.empty()) source = model::load_checkpoint(run_path(o.init));
  const auto dir = run_path(o.out);
  json run = {{"command", "finetune"}, {"data", cfg.data_root}, {"subject", o.subject}};
  run["init"] = o.init.empty() ? json(nullptr) : json(fs::absolute(run_path(o.init)).string());
  auto log = start_run(dir, cfg, run);
  const auto result =
      train::finetune(dataset, o.subject, cfg.model, cfg.train, source ? &*source : nullptr, log_sink(log));
  finish_run(dir, result);
  return 0;
}

int cmd_predict(const Options& o) {
  const auto dataset = data::load_dataset(o.data);
  const auto split = data::parse_split(o.split.empty() ? "val" : o.split);
  PredictionSet merged;
  std::set<std::size_t> covered;
  json parts = json::array();
  for (std::size_t i = 0; i < o.ckpts.size(); ++i) {
    const auto ckpt = model::load_checkpoint(run_path(o.ckpts[i]));
    std::vector<std::size_t> wanted;
    for (auto s : ckpt.subjects)
      if (s < dataset.subjects.size() && !covered.count(s)) wanted.push_back(s);
    if (wanted.empty()) throw ValidationError(o.ckpts[i] + " adds no new subject of this dataset");
    auto set = train::predict(ckpt, dataset, split, ckpt.folds, o.workers_given() ? o.workers : 1, o.batch, wanted);
    if (i == 0) {
      merged.split = set.split;
      merged.folds = set.folds;
      merged.model_id = set.model_id;
    } else {
      if (set.folds.n_folds != merged.folds.n_folds || set.folds.fold != merged.folds.fold ||
          set.folds.seed != merged.folds.seed)
        throw ValidationError(o.ckpts[i] + " was trained with a different fold assignment than " + o.ckpts[0]);
      merged.model_id += "+" + set.model_id;
    }
    parts.push_back({{"checkpoint", fs::absolute(run_path(o.ckpts[i])).string()}, {"subjects", wanted}, {"info", set.provenance}});
    for (auto& sp : set.subjects) {
      covered.insert(sp.subject);
      merged.subjects.push_back(std::move(sp));
    }
  }
  std::sort(merged.subjects.begin(), merged.subjects.end(),
            [](const auto& a, const auto& b) { return a.subject < b.subject; });
  merged.provenance = {{"parts", parts}};
  validate_predictions(merged, dataset);
  const auto out = run_path(o.out);
  save_predictions(merged, out);
  std::cout << "predicted " << merged.subjects.size() << " subjects on " << data::to_string(split) << ", written to " << out.string()
            << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  const auto dataset = data::load_dataset(o.data);
  const auto preds = load_predictions(run_path(o.pred));
  if (!o.split.empty() && data::parse_split(o.split) != preds.split)
    throw ValidationError("predictions are on split " + data::to_string(preds.split) + ", --split asked for " + o.split);
  const auto report = eval::score_report(preds, dataset);
  const auto out = run_path(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  data::write_json(out, eval::report_to_json(report));
  std::cout << eval::report_table(report);
  return 0;
}

int cmd_ensemble(const Options& o) {
  ens::EnsembleSpec spec;
  if (!o.spec.empty()) {
    spec = ens::ensemble_spec_from_json(read_config_json(o.spec), fs::path(o.spec).parent_path());
  } else if (!o.config.empty()) {
    const auto cfg = config::load_run_config(o.config);
    spec = ens::ensemble_spec_from_json({{"mode", ens::to_string(cfg.ensemble_mode)}, {"members", cfg.ensemble_members}},
                                        fs::path(o.config).parent_path());
  } else {
    throw UsageError("ensemble needs --spec or --config");
  }
  const auto blended = ens::run_ensemble(spec);
  if (!o.data.empty()) validate_predictions(blended, data::load_dataset(o.data));
  const auto out = run_path(o.out);
  save_predictions(blended, out);
  std::cout << "blended " << spec.members.size() << " members (" << ens::to_string(spec.mode) << " weights), written to "
            << out.string() << "\n";
  return 0;
}

int cmd_report(const Options& o) {
  std::cout << eval::report_table(eval::report_from_json(data::read_json(run_path(o.in))));
  return 0;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& r : selftest::run_all()) {
    std::cout << selftest::format(r) << "\n";
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all suites passed" : "some suites failed") << "\n";
  return ok ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subject-conditioned image-to-fMRI encoder pipeline on synthetic data"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with known ground truth");
  gen->add_option("--spec", o.spec, "Synthetic data spec (JSON); defaults when omitted");
  gen->add_option("--out", o.out, "Output dataset directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Train on all subjects jointly");
  pre->add_option("--config", o.config, "Run config (JSON)")->required();
  pre->add_option("--data", o.data, "Dataset directory (overrides data.root)");
  pre->add_option("--out", o.out, "Run directory")->required();
  pre->add_option("--workers", o.workers, "Inference worker threads")->check(CLI::PositiveNumber);

  auto* fin = app.add_subcommand("finetune", "Train one subject with ROI heads");
  fin->add_option("--config", o.config, "Run config (JSON)")->required();
  fin->add_option("--data", o.data, "Dataset directory (overrides data.root)");
  fin->add_option("--subject", o.subject, "Subject index (0-based)")->required();
  fin->add_option("--init", o.init, "Pretrained checkpoint; random init when omitted");
  fin->add_option("--out", o.out, "Run directory")->required();
  fin->add_option("--workers", o.workers, "Inference worker threads")->check(CLI::PositiveNumber);

  auto* pred = app.add_subcommand("predict", "Write predictions for a split");
  pred->add_option("--ckpt", o.ckpts, "Checkpoint; repeat to merge subjects (first wins)")->required();
  pred->add_option("--data", o.data, "Dataset directory")->required();
  pred->add_option("--split", o.split, "val or test")->check(CLI::IsMember({"val", "test"}));
  pred->add_option("--out", o.out, "Prediction directory")->required();
  pred->add_option("--workers", o.workers, "Worker threads (default 1)")->check(CLI::PositiveNumber);
  pred->add_option("--batch", o.batch, "Inference batch size")->check(CLI::PositiveNumber);

  auto* evl = app.add_subcommand("evaluate", "Score predictions against the dataset");
  evl->add_option("--pred", o.pred, "Prediction directory")->required();
  evl->add_option("--data", o.data, "Dataset directory")->required();
  evl->add_option("--split", o.split, "Expected split of the predictions")->check(CLI::IsMember({"val", "test"}));
  evl->add_option("--out", o.out, "Report JSON path")->required();

  auto* ens_cmd = app.add_subcommand("ensemble", "Blend prediction sets");
  auto* spec_opt = ens_cmd->add_option("--spec", o.spec, "Ensemble spec (JSON)");
  ens_cmd->add_option("--config", o.config, "Run config whose ensemble section is used")->excludes(spec_opt);
  ens_cmd->add_option("--data", o.data, "Dataset to validate the blend against");
  ens_cmd->add_option("--out", o.out, "Prediction directory")->required();

  auto* rep = app.add_subcommand("report", "Print a score report as a table");
  rep->add_option("--in", o.in, "Report JSON")->required();

  auto* self = app.add_subcommand("selftest", "Run the gradient-check and oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*pre) return cmd_pretrain(o);
    if (*fin) return cmd_finetune(o);
    if (*pred) return cmd_predict(o);
    if (*evl) return cmd_evaluate(o);
    if (*ens_cmd) return cmd_ensemble(o);
    if (*rep) return cmd_report(o);
    if (*self) return cmd_selftest();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
