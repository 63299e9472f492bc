#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "brainenc/checkpoint.hpp"
#include "brainenc/dataset.hpp"
#include "brainenc/objectives.hpp"
#include "brainenc/prediction.hpp"
#include "json.hpp"

namespace brainenc::train {

/// What fine-tuning copies from the source checkpoint. Anything not copied
/// is freshly initialized from the run seed.
enum class Transfer { all, extractor_embedding, extractor };

std::string to_string(Transfer t);
Transfer parse_transfer(const std::string& s);

struct TrainConfig {
  double lr0 = 1e-4;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 12;
  std::size_t patience = 3;
  data::FoldSpec folds;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  obj::LossSpec loss;
  /// Fine-tuning: add one loss term per ROI head (weight 1 / #ROIs).
  bool roi_loss = true;
  Transfer transfer = Transfer::all;
  bool freeze_extractor = false;
  /// Caps the training records per subject (0 keeps all). The kept subset is
  /// a seeded sample of the training folds.
  std::size_t max_train_samples = 0;
  /// Threads used for validation inference.
  std::size_t workers = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Strict parse of the "train" section with the "loss" section alongside.
TrainConfig train_config_from_json(const nlohmann::json& train, const nlohmann::json& loss = nlohmann::json::object());
nlohmann::json to_json(const obj::LossSpec& s);
obj::LossSpec loss_spec_from_json(const nlohmann::json& j);

/// lr0 * 0.5 * (1 + cos(pi * step / total)); exactly 0 at step == total.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// Decoupled weight-decay Adam with state keyed by parameter name.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay);
  explicit AdamW(const TrainConfig& c) : AdamW(c.beta1, c.beta2, c.eps, c.weight_decay) {}

  /// One update of every trainable parameter from its accumulated gradient.
  /// A non-finite gradient raises NumericalError before anything changes.
  void step(const std::vector<nd::Parameter<float>*>& params, double lr);
  std::size_t steps() const { return step_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double beta1_, beta2_, eps_, wd_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Monitors validation m; the first score (epoch 0 allowed) sets the best.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Records the score of `epoch`; returns true when it is a new best.
  bool update(std::size_t epoch, double score);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
  bool seen_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_m = 0.0;
  std::size_t steps = 0;
};

struct TrainResult {
  model::Checkpoint checkpoint;  // best epoch
  std::vector<EpochRecord> history;
  std::size_t epochs_run = 0;
};

/// Receives one JSON object per epoch (the line-oriented training log).
using LogSink = std::function<void(const nlohmann::json&)>;

/// Trains extractor, embedding and shared masked heads on all subjects.
/// `model` supplies extractor settings and embedding size; head widths,
/// subject count and image size come from the dataset.
TrainResult pretrain(const data::Dataset& dataset, const model::EncoderConfig& model, const TrainConfig& config,
                     const LogSink& log = {});

/// Pretraining objective of one mixed-subject batch of (subject, record)
/// pairs: a masked composite term per subject, weighted by its batch share.
nd::Var<float> pretrain_batch_loss(model::Encoder<float>& enc, nd::Tape<float>& tape, const data::Dataset& dataset,
                                   std::span<const std::pair<std::size_t, std::size_t>> batch, const obj::LossSpec& loss);

/// Per-subject training with ROI heads. Without a source checkpoint the
/// encoder starts from `model` with random weights.
TrainResult finetune(const data::Dataset& dataset, std::size_t subject, const model::EncoderConfig& model,
                     const TrainConfig& config, const model::Checkpoint* source, const LogSink& log = {});

/// Aggregated inference-mode predictions for every checkpoint subject found
/// in the dataset (or only `subjects` when given).
PredictionSet predict(const model::Checkpoint& ckpt, const data::Dataset& dataset, data::Split split,
                      const data::FoldSpec& folds, std::size_t workers = 1, std::size_t batch = 64,
                      const std::vector<std::size_t>& subjects = {});

/// Mean over subjects of the vertex-weighted validation m.
double validation_m(const PredictionSet& set, const data::Dataset& dataset);

/// Training records of a subject after the max_train_samples cap.
std::vector<std::size_t> training_records(const data::Dataset& dataset, std::size_t subject, const TrainConfig& config);

}  // namespace brainenc::train
