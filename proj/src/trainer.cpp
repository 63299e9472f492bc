#include "brainenc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <thread>

#include "brainenc/evaluation.hpp"
#include "brainenc/json_util.hpp"

namespace brainenc::train {

using data::Hemisphere;
using model::Checkpoint;
using model::Encoder;
using nlohmann::json;
using Var = nd::Var<float>;

namespace {

enum Tag : std::uint32_t { kShuffle = 1, kSubsample, kReinit };

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

struct Item {
  std::size_t subject;
  std::size_t record;
  bool operator<(const Item& o) const { return subject != o.subject ? subject < o.subject : record < o.record; }
};

/// Response rows of `records`, zero-padded on the right to `width` columns.
nd::Tensor<float> padded_rows(const nd::Tensor<float>& m, std::span<const std::size_t> records, std::size_t width) {
  const std::size_t cols = m.cols();
  nd::Tensor<float> out({records.size(), width});
  for (std::size_t i = 0; i < records.size(); ++i)
    std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(records[i] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  return out;
}

std::vector<float> padded_nc(const std::vector<float>& nc, std::size_t width) {
  std::vector<float> out(width, 1.0f);
  std::copy(nc.begin(), nc.end(), out.begin());
  return out;
}

nd::Tensor<float> batch_images(const data::Dataset& ds, std::span<const Item> items) {
  const auto& d = ds.manifest.image;
  const std::size_t px = d.pixels();
  nd::Tensor<float> out({items.size(), d.channels, d.height, d.width});
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& subj = ds.subjects[items[i].subject];
    auto img = data::normalize_image(subj.images.data().subspan(items[i].record * px, px), ds.manifest);
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * px));
  }
  return out;
}

json train_echo(const TrainConfig& c) {
  json j = to_json(c);
  j.erase("workers");  // does not affect the result
  return j;
}

/// Inference over the given subjects, writing aggregated predictions cut to
/// each subject's vertex counts.
PredictionSet infer(Encoder<float>& enc, const data::Dataset& ds, const std::vector<std::size_t>& subjects, data::Split split,
                    const data::FoldSpec& folds, std::size_t workers, std::size_t batch, const std::string& model_id) {
  PredictionSet set;
  set.model_id = model_id;
  set.split = split;
  set.folds = folds;
  struct Job {
    std::size_t slot, begin, end;
  };
  std::vector<Job> jobs;
  for (std::size_t s : subjects) {
    SubjectPrediction sp;
    sp.subject = s;
    sp.records = ds.split_indices(s, split, folds);
    const auto& spec = ds.subjects[s].spec;
    sp.lh = nd::Tensor<float>({sp.records.size(), spec.lh_vertices});
    sp.rh = nd::Tensor<float>({sp.records.size(), spec.rh_vertices});
    for (std::size_t b = 0; b < sp.records.size(); b += batch)
      jobs.push_back({set.subjects.size(), b, std::min(sp.records.size(), b + batch)});
    set.subjects.push_back(std::move(sp));
  }
  auto run = [&](const Job& job) {
    auto& sp = set.subjects[job.slot];
    std::vector<Item> items;
    for (std::size_t i = job.begin; i < job.end; ++i) items.push_back({sp.subject, sp.records[i]});
    const std::vector<std::size_t> subj(items.size(), sp.subject);
    nd::Tape<float> tape;
    const auto out = enc.forward(tape, batch_images(ds, items), subj, nd::Mode::infer);
    for (auto h : {Hemisphere::lh, Hemisphere::rh}) {
      const auto& y = enc.aggregate(out, h).value();
      auto& dst = h == Hemisphere::lh ? sp.lh : sp.rh;
      const std::size_t want = dst.cols(), have = y.cols();
      if (have < want)
        throw ValidationError("model emits " + std::to_string(have) + " " + data::to_string(h) + " outputs, subject " +
                              std::to_string(sp.subject) + " needs " + std::to_string(want));
      for (std::size_t r = 0; r < items.size(); ++r)
        std::copy_n(y.data().begin() + static_cast<std::ptrdiff_t>(r * have), want,
                    dst.data().begin() + static_cast<std::ptrdiff_t>((job.begin + r) * want));
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (workers == 1) {
    for (const auto& j : jobs) run(j);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < jobs.size(); j += workers) run(jobs[j]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return set;
}

using LossFn = std::function<Var(nd::Tape<float>&, std::span<const Item>)>;
using ValFn = std::function<double()>;

struct LoopResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_m = 0.0;
  std::size_t epochs_run = 0;
};

/// Shared epoch loop: shuffled batches, AdamW under the cosine schedule,
/// validation after every epoch, best weights restored at the end.
LoopResult run_epochs(Encoder<float>& enc, const std::vector<Item>& items, const std::set<Item>& held_out, const TrainConfig& c,
                      const std::string& stage, const LossFn& loss_fn, const ValFn& val_fn, const LogSink& log) {
  const std::size_t b = c.batch_size;
  const std::size_t steps_per_epoch = items.size() / b + (items.size() % b >= 2 ? 1 : 0);
  if (steps_per_epoch == 0) throw ArgumentError(stage + ": training split has fewer than 2 records");
  const std::size_t total = c.max_epochs * steps_per_epoch;

  for (const auto& it : items)
    if (held_out.count(it))
      throw ValidationError(stage + ": validation record " + std::to_string(it.record) + " of subject " +
                            std::to_string(it.subject) + " is in the training set");

  AdamW opt(c);
  EarlyStopping stopper(c.patience);
  LoopResult res;
  auto params = enc.parameters();

  auto emit = [&](const EpochRecord& r, bool has_loss) {
    res.history.push_back(r);
    if (!log) return;
    json line = {{"stage", stage}, {"epoch", r.epoch}, {"lr", r.lr}, {"val_m", r.val_m}, {"steps", r.steps}};
    line["train_loss"] = has_loss ? json(r.train_loss) : json(nullptr);
    line["best_epoch"] = stopper.best_epoch();
    log(line);
  };

  const double m0 = val_fn();
  stopper.update(0, m0);
  auto best_state = enc.state();
  emit({0, cosine_lr(0, std::max<std::size_t>(total, 1), c.lr0), 0.0, m0, 0}, false);

  std::vector<Item> order = items;
  for (std::size_t epoch = 1; epoch <= c.max_epochs; ++epoch) {
    auto rng = stream(c.seed, kShuffle, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, lr = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += b) {
      const std::size_t end = std::min(order.size(), start + b);
      if (end - start < 2) break;
      const std::span<const Item> batch(order.data() + start, end - start);
      for (const auto& it : batch)
        if (held_out.count(it)) throw ValidationError(stage + ": held-out record in a training batch");
      nd::Tape<float> tape;
      const Var loss = loss_fn(tape, batch);
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        throw NumericalError(stage + ": non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(opt.steps()));
      for (auto* p : params) p->zero_grad();
      tape.backward(loss);
      lr = cosine_lr(opt.steps(), total, c.lr0);
      opt.step(params, lr);
      loss_sum += value;
      ++batches;
    }
    const double m = val_fn();
    const bool improved = stopper.update(epoch, m);
    if (improved) best_state = enc.state();
    res.epochs_run = epoch;
    emit({epoch, lr, loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)), m, opt.steps()}, true);
    if (stopper.should_stop()) break;
  }
  enc.load_state(best_state);
  res.best_epoch = stopper.best_epoch();
  res.best_m = stopper.best();
  return res;
}

std::set<Item> held_out_items(const data::Dataset& ds, const std::vector<std::size_t>& subjects, const data::FoldSpec& folds) {
  std::set<Item> out;
  for (auto s : subjects) {
    for (auto r : ds.split_indices(s, data::Split::val, folds)) out.insert({s, r});
    for (auto r : ds.split_indices(s, data::Split::test, folds)) out.insert({s, r});
  }
  return out;
}

const char* kLossKeys[] = {"smooth_l1", "pc", "mnnpc", "use_noise_ceiling", "smooth_l1_beta"};

}  // namespace

std::string to_string(Transfer t) {
  switch (t) {
    case Transfer::all: return "all";
    case Transfer::extractor_embedding: return "extractor_embedding";
    case Transfer::extractor: return "extractor";
  }
  return "all";
}

Transfer parse_transfer(const std::string& s) {
  if (s == "all") return Transfer::all;
  if (s == "extractor_embedding") return Transfer::extractor_embedding;
  if (s == "extractor") return Transfer::extractor;
  throw ConfigError("unknown transfer mode '" + s + "' (expected all, extractor_embedding or extractor)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) fail("lr0 must be finite and non-negative");
  if (batch_size < 2) fail("batch_size must be at least 2");
  if (patience < 1) fail("patience must be at least 1");
  if (folds.n_folds < 2) fail("n_folds must be at least 2");
  if (folds.fold >= folds.n_folds) fail("fold must be below n_folds");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0,1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (workers < 1) fail("workers must be at least 1");
  if (max_train_samples == 1) fail("max_train_samples must be 0 (all) or at least 2");
  loss.validate();
}

json to_json(const obj::LossSpec& s) {
  json j = {{"smooth_l1", s.smooth_l1}, {"pc", s.pc}, {"mnnpc", s.mnnpc}, {"smooth_l1_beta", s.smooth_l1_beta}};
  j["use_noise_ceiling"] = s.use_noise_ceiling ? json(*s.use_noise_ceiling) : json(nullptr);
  return j;
}

obj::LossSpec loss_spec_from_json(const json& j) {
  StrictObject o(j, "loss", {kLossKeys[0], kLossKeys[1], kLossKeys[2], kLossKeys[3], kLossKeys[4]});
  obj::LossSpec s;
  s.smooth_l1 = o.get("smooth_l1", s.smooth_l1);
  s.pc = o.get("pc", s.pc);
  s.mnnpc = o.get("mnnpc", s.mnnpc);
  s.smooth_l1_beta = o.get("smooth_l1_beta", s.smooth_l1_beta);
  if (o.has("use_noise_ceiling") && !o.raw("use_noise_ceiling").is_null())
    s.use_noise_ceiling = o.get("use_noise_ceiling", false);
  try {
    s.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("loss: ") + e.what());
  }
  return s;
}

json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"n_folds", c.folds.n_folds},
          {"fold", c.folds.fold},
          {"fold_seed", c.folds.seed},
          {"seed", c.seed},
          {"betas", {c.beta1, c.beta2}},
          {"eps", c.eps},
          {"weight_decay", c.weight_decay},
          {"roi_loss", c.roi_loss},
          {"transfer", to_string(c.transfer)},
          {"freeze_extractor", c.freeze_extractor},
          {"max_train_samples", c.max_train_samples},
          {"workers", c.workers},
          {"loss", to_json(c.loss)}};
}

TrainConfig train_config_from_json(const json& train, const json& loss) {
  StrictObject o(train, "train",
                 {"lr0", "batch_size", "max_epochs", "patience", "n_folds", "fold", "fold_seed", "seed", "betas", "eps",
                  "weight_decay", "roi_loss", "transfer", "freeze_extractor", "max_train_samples", "workers", "loss"});
  TrainConfig c;
  c.lr0 = o.get("lr0", c.lr0);
  c.batch_size = o.get("batch_size", c.batch_size);
  c.max_epochs = o.get("max_epochs", c.max_epochs);
  c.patience = o.get("patience", c.patience);
  c.folds.n_folds = o.get("n_folds", c.folds.n_folds);
  c.folds.fold = o.get("fold", c.folds.fold);
  c.folds.seed = o.get("fold_seed", c.folds.seed);
  c.seed = o.get("seed", c.seed);
  if (o.has("betas")) {
    const auto& b = o.raw("betas");
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
      throw ConfigError("'train.betas' must be a pair of numbers");
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  }
  c.eps = o.get("eps", c.eps);
  c.weight_decay = o.get("weight_decay", c.weight_decay);
  c.roi_loss = o.get("roi_loss", c.roi_loss);
  if (o.has("transfer")) c.transfer = parse_transfer(o.get<std::string>("transfer", "all"));
  c.freeze_extractor = o.get("freeze_extractor", c.freeze_extractor);
  c.max_train_samples = o.get("max_train_samples", c.max_train_samples);
  c.workers = o.get("workers", c.workers);
  // The loss may be nested (checkpoint echo) or given as a sibling section.
  if (o.has("loss")) c.loss = loss_spec_from_json(o.raw("loss"));
  if (!loss.empty()) c.loss = loss_spec_from_json(loss);
  c.validate();
  return c;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw ArgumentError("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw ArgumentError("cosine_lr: step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
  if (step == total_steps) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

void AdamW::step(const std::vector<nd::Parameter<float>*>& params, double lr) {
  for (const auto* p : params) {
    if (!p->trainable || p->grad.empty()) continue;
    if (p->grad.shape() != p->value.shape())
      throw ShapeError("AdamW: gradient of '" + p->name + "' has shape " + nd::shape_str(p->grad.shape()));
    for (float g : p->grad.data())
      if (!std::isfinite(g))
        throw NumericalError("non-finite gradient in '" + p->name + "' at optimizer step " + std::to_string(step_));
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (auto* p : params) {
    if (!p->trainable || p->grad.empty()) continue;
    auto& mom = moments_[p->name];
    const std::size_t n = p->value.size();
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    auto theta = p->value.data();
    auto grad = p->grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad[i];
      mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g;
      mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = mom.m[i] / c1, vhat = mom.v[i] / c2;
      const double t = theta[i];
      theta[i] = static_cast<float>(t - lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * t));
    }
  }
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ArgumentError("early stopping patience must be at least 1");
}

bool EarlyStopping::update(std::size_t epoch, double score) {
  if (!seen_ || score > best_) {
    seen_ = true;
    best_ = score;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

double validation_m(const PredictionSet& set, const data::Dataset& dataset) {
  const auto report = eval::score_report(set, dataset);
  if (report.subjects.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : report.subjects) sum += s.combined_m();
  return sum / static_cast<double>(report.subjects.size());
}

std::vector<std::size_t> training_records(const data::Dataset& dataset, std::size_t subject, const TrainConfig& config) {
  auto records = dataset.split_indices(subject, data::Split::train, config.folds);
  if (config.max_train_samples > 0 && records.size() > config.max_train_samples) {
    auto rng = stream(config.seed, kSubsample, subject);
    std::shuffle(records.begin(), records.end(), rng);
    records.resize(config.max_train_samples);
    std::sort(records.begin(), records.end());
  }
  return records;
}

PredictionSet predict(const Checkpoint& ckpt, const data::Dataset& dataset, data::Split split, const data::FoldSpec& folds,
                      std::size_t workers, std::size_t batch, const std::vector<std::size_t>& subjects) {
  if (batch == 0) throw ArgumentError("predict: batch size must be positive");
  const auto& d = dataset.manifest.image;
  const auto& e = ckpt.encoder.image;
  if (d.channels != e.channels || d.height != e.height || d.width != e.width)
    throw ValidationError("checkpoint expects images of " + std::to_string(e.channels) + "x" + std::to_string(e.height) + "x" +
                          std::to_string(e.width) + ", dataset has " + std::to_string(d.channels) + "x" +
                          std::to_string(d.height) + "x" + std::to_string(d.width));
  std::vector<std::size_t> which;
  if (subjects.empty()) {
    for (auto s : ckpt.subjects)
      if (s < dataset.subjects.size()) which.push_back(s);
  } else {
    for (auto s : subjects) {
      if (!ckpt.covers(s)) throw ValidationError("checkpoint does not cover subject " + std::to_string(s));
      if (s >= dataset.subjects.size()) throw ValidationError("dataset has no subject " + std::to_string(s));
      which.push_back(s);
    }
  }
  if (which.empty()) throw ValidationError("checkpoint covers none of the dataset's subjects");
  for (auto s : which) {
    const auto [l, r] = ckpt.vertices_of(s);
    const auto& spec = dataset.subjects[s].spec;
    if (l != spec.lh_vertices || r != spec.rh_vertices)
      throw ValidationError("subject " + std::to_string(s) + " has " + std::to_string(spec.lh_vertices) + "/" +
                            std::to_string(spec.rh_vertices) + " vertices, checkpoint was trained on " + std::to_string(l) +
                            "/" + std::to_string(r));
  }
  auto enc = model::build_encoder(ckpt);
  auto set = infer(enc, dataset, which, split, folds, workers, batch, ckpt.stage);
  set.provenance = {{"stage", ckpt.stage}, {"epoch", ckpt.epoch}, {"val_m", ckpt.val_m}};
  return set;
}

Var pretrain_batch_loss(Encoder<float>& enc, nd::Tape<float>& tape, const data::Dataset& dataset,
                        std::span<const std::pair<std::size_t, std::size_t>> batch, const obj::LossSpec& loss) {
  const auto& cfg = enc.config();
  const bool use_nc = loss.use_noise_ceiling.value_or(false);
  std::vector<Item> items;
  std::vector<std::size_t> subj;
  for (const auto& [s, r] : batch) {
    if (s >= dataset.subjects.size()) throw ArgumentError("pretrain batch: unknown subject " + std::to_string(s));
    items.push_back({s, r});
    subj.push_back(s);
  }
  const auto out = enc.forward(tape, batch_images(dataset, items), subj, nd::Mode::train);
  // One composite term per subject present, weighted by its share of the batch.
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].subject].push_back(i);
  std::optional<Var> total;
  for (const auto& [s, rows] : groups) {
    const auto& sd = dataset.subjects[s];
    std::vector<std::size_t> records;
    for (auto i : rows) records.push_back(items[i].record);
    std::vector<std::uint8_t> mask_l(cfg.lh_outputs, 0), mask_r(cfg.rh_outputs, 0);
    std::fill_n(mask_l.begin(), sd.spec.lh_vertices, 1);
    std::fill_n(mask_r.begin(), sd.spec.rh_vertices, 1);
    std::vector<float> nc_l, nc_r;
    if (use_nc) {
      nc_l = padded_nc(sd.spec.noise_ceiling_lh, cfg.lh_outputs);
      nc_r = padded_nc(sd.spec.noise_ceiling_rh, cfg.rh_outputs);
    }
    obj::LossSpec spec = loss;
    if (rows.size() < 2) spec.mnnpc = 0.0;  // a column correlation needs two samples
    const Var term = obj::composite_loss<float>(
        nd::gather_rows(out.lh, rows), nd::gather_rows(out.rh, rows),
        tape.constant(padded_rows(sd.lh, records, cfg.lh_outputs)), tape.constant(padded_rows(sd.rh, records, cfg.rh_outputs)),
        spec, nc_l, nc_r, mask_l, mask_r);
    const Var weighted = nd::mul_scalar(term, static_cast<float>(rows.size()) / static_cast<float>(items.size()));
    total = total ? nd::add(*total, weighted) : weighted;
  }
  if (!total) throw ArgumentError("pretrain batch: empty batch");
  return *total;
}

TrainResult pretrain(const data::Dataset& dataset, const model::EncoderConfig& model, const TrainConfig& config,
                     const LogSink& log) {
  config.validate();
  const std::size_t n = dataset.subjects.size();
  if (n < 2) throw ArgumentError("pretrain: needs at least 2 subjects, dataset has " + std::to_string(n));

  model::EncoderConfig cfg = model;
  cfg.image = dataset.manifest.image;
  cfg.n_subjects = n;
  cfg.lh_outputs = cfg.rh_outputs = 0;
  std::vector<std::size_t> subjects(n);
  std::vector<std::pair<std::size_t, std::size_t>> widths;
  for (std::size_t s = 0; s < n; ++s) {
    subjects[s] = s;
    const auto& spec = dataset.subjects[s].spec;
    widths.emplace_back(spec.lh_vertices, spec.rh_vertices);
    cfg.lh_outputs = std::max(cfg.lh_outputs, spec.lh_vertices);
    cfg.rh_outputs = std::max(cfg.rh_outputs, spec.rh_vertices);
  }
  Encoder<float> enc(cfg, config.seed);

  std::vector<Item> items;
  for (auto s : subjects)
    for (auto r : training_records(dataset, s, config)) items.push_back({s, r});
  if (items.empty()) throw ArgumentError("pretrain: empty training split");

  const LossFn loss_fn = [&](nd::Tape<float>& tape, std::span<const Item> batch) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& it : batch) pairs.emplace_back(it.subject, it.record);
    return pretrain_batch_loss(enc, tape, dataset, pairs, config.loss);
  };

  const ValFn val_fn = [&] {
    return validation_m(infer(enc, dataset, subjects, data::Split::val, config.folds, config.workers, 64, "pretrain"), dataset);
  };

  const auto loop = run_epochs(enc, items, held_out_items(dataset, subjects, config.folds), config, "pretrain", loss_fn, val_fn, log);

  TrainResult result;
  auto& ck = result.checkpoint;
  ck.encoder = enc.config();
  ck.stage = "pretrain";
  ck.epoch = loop.best_epoch;
  ck.val_m = loop.best_m;
  ck.subjects = subjects;
  ck.vertices = widths;
  ck.folds = config.folds;
  ck.train = train_echo(config);
  ck.state = enc.state();
  result.history = loop.history;
  result.epochs_run = loop.epochs_run;
  return result;
}

TrainResult finetune(const data::Dataset& dataset, std::size_t subject, const model::EncoderConfig& model,
                     const TrainConfig& config, const Checkpoint* source, const LogSink& log) {
  config.validate();
  if (subject >= dataset.subjects.size())
    throw ArgumentError("finetune: subject " + std::to_string(subject) + " not in dataset of " +
                        std::to_string(dataset.subjects.size()));
  const auto& sd = dataset.subjects[subject];
  const auto& spec = sd.spec;
  if (spec.rois.empty()) throw ValidationError("finetune: subject " + std::to_string(subject) + " has no ROI table");

  std::optional<Encoder<float>> enc;
  if (source) {
    const auto& sc = source->encoder;
    const auto& d = dataset.manifest.image;
    if (sc.image.channels != d.channels || sc.image.height != d.height || sc.image.width != d.width)
      throw ValidationError("finetune: source checkpoint image size does not match the dataset");
    if (subject >= sc.n_subjects)
      throw ValidationError("finetune: source checkpoint embeds " + std::to_string(sc.n_subjects) + " subjects, no row for " +
                            std::to_string(subject));
    if (sc.lh_outputs < spec.lh_vertices || sc.rh_outputs < spec.rh_vertices)
      throw ValidationError("finetune: source heads are narrower than subject " + std::to_string(subject) + "'s vertex counts");
    enc.emplace(sc, config.seed);
    enc->load_state(source->state);  // ROI heads of a fine-tuned source are not transferred
    enc->slice_heads(spec.lh_vertices, spec.rh_vertices);
    auto rng = stream(config.seed, kReinit, subject);
    if (config.transfer != Transfer::all) enc->reinit_heads(rng());
    if (config.transfer == Transfer::extractor) enc->reinit_embedding(rng());
  } else {
    model::EncoderConfig cfg = model;
    cfg.image = dataset.manifest.image;
    cfg.n_subjects = dataset.subjects.size();
    cfg.lh_outputs = spec.lh_vertices;
    cfg.rh_outputs = spec.rh_vertices;
    enc.emplace(cfg, config.seed);
  }
  enc->add_roi_heads(spec.rois);
  if (config.freeze_extractor) enc->set_extractor_trainable(false);

  std::vector<Item> items;
  for (auto r : training_records(dataset, subject, config)) items.push_back({subject, r});
  if (items.empty()) throw ArgumentError("finetune: empty training split");

  const bool use_nc = config.loss.use_noise_ceiling.value_or(true);
  const std::vector<float> empty;
  const auto& nc_l = use_nc ? spec.noise_ceiling_lh : empty;
  const auto& nc_r = use_nc ? spec.noise_ceiling_rh : empty;
  const auto heads = enc->roi_heads();
  std::vector<std::vector<float>> roi_nc;
  for (const auto& h : heads) {
    roi_nc.emplace_back();
    if (!use_nc) continue;
    const auto& nc = spec.noise_ceiling(h.hemisphere);
    for (auto v : h.indices) roi_nc.back().push_back(nc[v]);
  }

  const LossFn loss_fn = [&](nd::Tape<float>& tape, std::span<const Item> batch) {
    std::vector<std::size_t> records, subj(batch.size(), subject);
    for (const auto& it : batch) records.push_back(it.record);
    const auto out = enc->forward(tape, batch_images(dataset, batch), subj, nd::Mode::train);
    const Var gt_l = tape.constant(data::gather_rows(sd.lh, records));
    const Var gt_r = tape.constant(data::gather_rows(sd.rh, records));
    Var loss = obj::composite_loss<float>(enc->aggregate(out, Hemisphere::lh), enc->aggregate(out, Hemisphere::rh), gt_l, gt_r,
                                          config.loss, nc_l, nc_r);
    if (config.roi_loss && !heads.empty()) {
      std::optional<Var> sum;
      for (std::size_t k = 0; k < heads.size(); ++k) {
        const Var gt = nd::gather_cols(heads[k].hemisphere == Hemisphere::lh ? gt_l : gt_r, heads[k].indices);
        const Var term = obj::block_loss<float>(out.rois.at(heads[k].name), gt, config.loss, roi_nc[k]);
        sum = sum ? nd::add(*sum, term) : term;
      }
      loss = nd::add(loss, nd::mul_scalar(*sum, 1.0f / static_cast<float>(heads.size())));
    }
    return loss;
  };

  const std::vector<std::size_t> subjects{subject};
  const ValFn val_fn = [&] {
    return validation_m(infer(*enc, dataset, subjects, data::Split::val, config.folds, config.workers, 64, "finetune"), dataset);
  };

  const auto loop = run_epochs(*enc, items, held_out_items(dataset, subjects, config.folds), config, "finetune", loss_fn, val_fn, log);

  TrainResult result;
  auto& ck = result.checkpoint;
  ck.encoder = enc->config();
  ck.stage = "finetune";
  ck.epoch = loop.best_epoch;
  ck.val_m = loop.best_m;
  ck.subjects = subjects;
  ck.vertices = {{spec.lh_vertices, spec.rh_vertices}};
  ck.rois = enc->roi_table();
  ck.folds = config.folds;
  ck.train = train_echo(config);
  if (source) ck.train["source"] = {{"stage", source->stage}, {"epoch", source->epoch}, {"val_m", source->val_m}};
  ck.state = enc->state();
  result.history = loop.history;
  result.epochs_run = loop.epochs_run;
  return result;
}

}  // namespace brainenc::train
