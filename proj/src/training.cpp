#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmmie/training.hpp"

namespace mmmie {
namespace {

// Modality pairs of the DV terms, in mine_loss order.
constexpr std::array<std::pair<std::size_t, std::size_t>, 3> kPairs = {{{kText, kVideo}, {kText, kAudio}, {kVideo, kAudio}}};

struct BatchPass {
  std::array<Var, kModalities> inputs;
  std::array<Var, kModalities> features;
  Var logits;
  std::vector<std::size_t> labels;
};

BatchPass run_batch(const BoundParams& params, const ModelSpec& spec, std::span<const ConversationBatch* const> batch,
                    const ForwardOptions& options) {
  std::array<std::vector<Var>, kModalities> inputs, features;
  std::vector<Var> logits;
  BatchPass pass;
  for (const ConversationBatch* conv : batch) {
    ModelOutput out = forward(params, spec, *conv, options);
    for (std::size_t m = 0; m < kModalities; ++m) {
      inputs[m].push_back(out.inputs[m]);
      features[m].push_back(out.features[m]);
    }
    logits.push_back(out.logits);
    pass.labels.insert(pass.labels.end(), conv->labels.begin(), conv->labels.end());
  }
  for (std::size_t m = 0; m < kModalities; ++m) {
    pass.inputs[m] = concat_rows(inputs[m]);
    pass.features[m] = concat_rows(features[m]);
  }
  pass.logits = concat_rows(logits);
  return pass;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    out[i] = best;
  }
  return out;
}

// Runs `fn`, converting numerical failures into a TrainingAbort that names the term.
template <class Fn>
auto guarded(std::size_t step, const char* component, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw TrainingAbort(step, component, e.what());
  } catch (const DomainError& e) {
    throw TrainingAbort(step, component, e.what());
  }
}

bool pair_active(const RunConfig& c, std::size_t k) {
  return c.modalities[kPairs[k].first] && c.modalities[kPairs[k].second];
}

struct EpochTotals {
  double task = 0.0, mi = 0.0, msi = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> preds, truth;

  void add(const LossBundle& b) {
    task += b.task;
    mi += b.mi;
    msi += b.msi;
    ++batches;
  }
  MetricRecord record(std::size_t epoch, Split split, double alpha, double beta, std::size_t classes) const {
    MetricRecord r;
    r.epoch = epoch;
    r.split = split;
    r.accuracy = accuracy(preds, truth);
    r.weighted_f1 = weighted_f1(preds, truth, classes);
    const double n = static_cast<double>(batches);
    r.losses = total_loss(task / n, mi / n, msi / n, alpha, beta);
    return r;
  }
};

// The trained estimators and their optimizer state.
struct EstimatorBank {
  std::array<StatisticNet, 3> statistic;
  std::array<VariationalNet, kModalities> variational;
  std::array<AdamState, 3> statistic_state;
  std::array<AdamState, kModalities> variational_state;
};

struct Measured {
  std::array<double, 3> dv{};
  std::array<double, kModalities> vclub{};
};

// One model with its estimators. The main run is a branch; curve logging adds
// two twins, each trained without one MI objective.
struct Branch {
  ParamSet model;
  AdamState model_state;
  EstimatorBank bank;
  bool mmax = true;
  bool mmin = true;
  /// Train the statistic networks on detached features when mmax is off.
  bool probe_dv = false;
};

struct StepOutcome {
  Measured measured;
  LossBundle losses;
  std::vector<std::size_t> preds;
  std::vector<std::size_t> labels;
};

class Trainer {
 public:
  Trainer(const RunConfig& config, const Dataset& data)
      : config_(config), data_(data), spec_(config.model_spec(data.train.front().dims())), rng_(config.seed) {
    main_.model = init_model(spec_, rng_());
    const std::size_t h = spec_.lstm_hidden;
    const std::size_t stat_hidden[] = {config.statistic_hidden};
    const std::size_t q_hidden[] = {config.variational_hidden};
    for (std::size_t k = 0; k < 3; ++k) main_.bank.statistic[k] = StatisticNet::create(h, h, stat_hidden, rng_());
    for (std::size_t m = 0; m < kModalities; ++m) {
      main_.bank.variational[m] = VariationalNet::create(spec_.input_dims[m], h, q_hidden, rng_());
    }
    main_.mmax = config.mmax_on;
    main_.mmin = config.mmin_on;
    options_.identity_on = config.ie_on;
    options_.modalities = config.modalities;
    hyper_.lr = config.learning_rate;
    warm_up_q();
    without_mmax_ = main_;
    without_mmax_.mmax = false;
    without_mmax_.probe_dv = true;
    without_mmin_ = main_;
    without_mmin_.mmin = false;
  }

  TrainResult run(const ProgressCallback& progress) {
    TrainResult result;
    result.spec = spec_;
    result.initial_params = main_.model;
    result.best_params = main_.model;
    result.final_params = main_.model;
    std::size_t step = 0;
    bool have_best = false;
    for (std::size_t epoch = 0; epoch < config_.max_epochs; ++epoch) {
      const auto perm = shuffle_permutation(data_.train.size(), rng_);
      EpochTotals totals;
      for (std::size_t start = 0; start < perm.size(); start += config_.batch_size) {
        std::vector<const ConversationBatch*> batch;
        for (std::size_t i = start; i < std::min(perm.size(), start + config_.batch_size); ++i) {
          batch.push_back(&data_.train[perm[i]]);
        }
        std::array<std::vector<std::size_t>, 3> perms;
        const std::size_t rows = std::accumulate(batch.begin(), batch.end(), std::size_t{0},
                                                 [](std::size_t n, const ConversationBatch* c) { return n + c->length(); });
        if (rows < 2) throw std::invalid_argument("train: a batch needs at least two utterances");
        for (auto& p : perms) p = shuffle_permutation(rows, rng_);

        StepOutcome out = train_step(step, main_, batch, perms);
        result.steps.push_back(StepRecord{step, epoch, out.losses});
        totals.add(out.losses);
        totals.preds.insert(totals.preds.end(), out.preds.begin(), out.preds.end());
        totals.truth.insert(totals.truth.end(), out.labels.begin(), out.labels.end());
        if (config_.log_curves) {
          const Measured no_max = train_step(step, without_mmax_, batch, perms).measured;
          const Measured no_min = train_step(step, without_mmin_, batch, perms).measured;
          for (std::size_t k = 0; k < 3; ++k) {
            log_curve(result, step, CurveKind::dv_optimized, k, out.measured.dv[k]);
            log_curve(result, step, CurveKind::dv_frozen, k, no_max.dv[k]);
          }
          for (std::size_t m = 0; m < kModalities; ++m) {
            log_curve(result, step, CurveKind::vclub_optimized, m, out.measured.vclub[m]);
            log_curve(result, step, CurveKind::vclub_frozen, m, no_min.vclub[m]);
          }
        }
        ++step;
      }
      const MetricRecord train_record =
          totals.record(epoch, Split::train, effective_alpha(), effective_beta(), spec_.num_classes);
      const MetricRecord eval_record = evaluate(epoch);
      result.metrics.push_back(train_record);
      result.metrics.push_back(eval_record);
      if (progress) {
        progress(train_record);
        progress(eval_record);
      }
      if (!have_best || eval_record.accuracy > result.best_eval_accuracy) {
        have_best = true;
        result.best_epoch = epoch;
        result.best_eval_accuracy = eval_record.accuracy;
        result.best_eval_f1 = eval_record.weighted_f1;
        result.best_params = main_.model;
      }
      result.final_eval_accuracy = eval_record.accuracy;
      result.final_eval_f1 = eval_record.weighted_f1;
    }
    result.final_params = main_.model;
    return result;
  }

 private:
  double effective_alpha() const { return config_.mmax_on && any_pair() ? config_.alpha : 0.0; }
  double effective_beta() const { return config_.mmin_on ? config_.beta : 0.0; }
  bool any_pair() const { return pair_active(config_, 0) || pair_active(config_, 1) || pair_active(config_, 2); }

  // Cycles through the training conversations in stored order; the model is read only.
  void warm_up_q() {
    const std::size_t n = data_.train.size();
    for (std::size_t step = 0; step < config_.q_warmup_steps; ++step) {
      std::vector<const ConversationBatch*> batch;
      for (std::size_t i = 0; i < config_.batch_size; ++i) batch.push_back(&data_.train[(step * config_.batch_size + i) % n]);
      Tape tape;
      BoundParams params(tape, main_.model, false);
      const BatchPass pass = guarded(0, "q warm-up", [&] { return run_batch(params, spec_, batch, options_); });
      guarded(0, "q warm-up", [&] {
        for (std::size_t m = 0; m < kModalities; ++m) {
          q_fit_step(main_.bank.variational[m], pass.inputs[m].value(), pass.features[m].value(),
                     main_.bank.variational_state[m], hyper_);
        }
      });
    }
  }

  void log_curve(TrainResult& result, std::size_t step, CurveKind kind, std::size_t index, double value) {
    const bool pair = kind == CurveKind::dv_optimized || kind == CurveKind::dv_frozen;
    double& avg = curve_avg_[static_cast<std::size_t>(kind)][index];
    const double d = config_.curve_smoothing;
    avg = d * avg + (1.0 - d) * value;
    const double smoothed = avg / (1.0 - std::pow(d, static_cast<double>(step + 1)));
    result.curves.add(step, kind, pair ? kPairTags[index] : kChannelTags[index], smoothed);
  }

  // Forward, q-fit on detached features, loss assembly per the branch toggles,
  // backward, Adam. With mmax off the statistic networks either stay frozen or,
  // for a probing twin, train on detached features with the estimate kept out
  // of the loss.
  StepOutcome train_step(std::size_t step, Branch& branch, std::span<const ConversationBatch* const> batch,
                         const std::array<std::vector<std::size_t>, 3>& perms) {
    Tape tape;
    BoundParams params(tape, branch.model, true);
    BatchPass pass = guarded(step, "forward", [&] { return run_batch(params, spec_, batch, options_); });
    Var task = guarded(step, "task", [&] { return task_loss(pass.logits, pass.labels); });

    StepOutcome out;
    std::array<BoundStatisticNet, 3> stat;
    std::optional<Var> mi, probe;
    double mi_value = 0.0;
    const bool stat_trains = branch.mmax || branch.probe_dv;
    guarded(step, "mi", [&] {
      std::array<Var, kModalities> f = pass.features;
      if (!branch.mmax) {
        for (std::size_t m = 0; m < kModalities; ++m) f[m] = tape.constant(pass.features[m].value());
      }
      for (std::size_t k = 0; k < 3; ++k) {
        stat[k] = bind(tape, branch.bank.statistic[k], stat_trains);
        TapedEstimate e = dv_lower_bound(stat[k], f[kPairs[k].first], f[kPairs[k].second], perms[k]);
        out.measured.dv[k] = e.stats.value;
        if (!branch.mmax) {
          if (branch.probe_dv) probe = probe ? sub(*probe, e.value) : neg(e.value);
          continue;
        }
        if (!pair_active(config_, k)) continue;
        mi_value -= e.stats.value;
        mi = mi ? sub(*mi, e.value) : neg(e.value);
      }
    });

    guarded(step, "q_fit", [&] {
      for (std::size_t m = 0; m < kModalities; ++m) {
        q_fit_step(branch.bank.variational[m], pass.inputs[m].value(), pass.features[m].value(),
                   branch.bank.variational_state[m], hyper_);
      }
    });
    std::optional<Var> msi;
    double msi_value = 0.0;
    guarded(step, "msi", [&] {
      for (std::size_t m = 0; m < kModalities; ++m) {
        TapedEstimate e =
            vclub_estimate(bind(tape, branch.bank.variational[m], false), pass.inputs[m], pass.features[m]);
        out.measured.vclub[m] = e.stats.value;
        if (!config_.modalities[m]) continue;
        msi_value += e.stats.value;
        msi = msi ? add(*msi, e.value) : e.value;
      }
    });
    if (!branch.mmin) msi.reset();

    TapedLoss loss = guarded(step, "total", [&] {
      return total_loss(task, mi, msi, config_.alpha, config_.beta, mi_value, msi_value);
    });
    guarded(step, "backward", [&] {
      tape.backward(probe ? add(loss.total, *probe) : loss.total);
      adam_step(branch.model, params.gradients(), branch.model_state, hyper_);
      if (!stat_trains) return;
      for (std::size_t k = 0; k < 3; ++k) {
        adam_step(branch.bank.statistic[k].params, stat[k].params.gradients(), branch.bank.statistic_state[k], hyper_);
      }
    });

    out.losses = loss.bundle;
    out.preds = argmax_rows(pass.logits.value());
    out.labels = std::move(pass.labels);
    return out;
  }

  MetricRecord evaluate(std::size_t epoch) {
    EpochTotals totals;
    // Fixed permutations so every epoch is scored the same way.
    Rng rng(config_.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t start = 0; start < data_.eval.size(); start += config_.batch_size) {
      std::vector<const ConversationBatch*> batch;
      for (std::size_t i = start; i < std::min(data_.eval.size(), start + config_.batch_size); ++i) {
        batch.push_back(&data_.eval[i]);
      }
      Tape tape;
      BoundParams params(tape, main_.model, false);
      BatchPass pass = run_batch(params, spec_, batch, options_);
      const double task = task_loss(pass.logits, pass.labels).value().item();
      double mi = 0.0, msi = 0.0;
      const std::size_t rows = pass.labels.size();
      if (rows >= 2) {
        for (std::size_t k = 0; k < 3; ++k) {
          const auto perm = shuffle_permutation(rows, rng);
          if (!pair_active(config_, k)) continue;
          mi -= dv_lower_bound(bind(tape, main_.bank.statistic[k], false), pass.features[kPairs[k].first],
                               pass.features[kPairs[k].second], perm)
                    .stats.value;
        }
        for (std::size_t m = 0; m < kModalities; ++m) {
          if (!config_.modalities[m]) continue;
          msi += vclub_estimate(bind(tape, main_.bank.variational[m], false), pass.inputs[m], pass.features[m])
                     .stats.value;
        }
      }
      totals.add(LossBundle{task, mi, msi, 0.0, 0.0, 0.0});
      const auto preds = argmax_rows(pass.logits.value());
      totals.preds.insert(totals.preds.end(), preds.begin(), preds.end());
      totals.truth.insert(totals.truth.end(), pass.labels.begin(), pass.labels.end());
    }
    return totals.record(epoch, Split::eval, effective_alpha(), effective_beta(), spec_.num_classes);
  }

  const RunConfig& config_;
  const Dataset& data_;
  ModelSpec spec_;
  Rng rng_;
  ForwardOptions options_;
  AdamHyper hyper_;

  Branch main_;
  Branch without_mmax_;
  Branch without_mmin_;
  std::array<std::array<double, 3>, 4> curve_avg_{};
};

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

TrainingAbort::TrainingAbort(std::size_t step, std::string component, const std::string& detail)
    : std::runtime_error("training aborted at step " + std::to_string(step) + " in the " + component +
                         " term: " + detail),
      step_(step),
      component_(std::move(component)) {}

Dataset make_dataset(const RunConfig& config) {
  config.validate();
  std::vector<ConversationBatch> all;
  if (config.data_csv.empty()) {
    SynthWorldSpec world = config.synth;
    world.num_classes = config.num_classes;
    world.num_speakers = config.num_speakers;
    all = generate_conversations(world, config.conversations, config.data_seed);
  } else {
    all = load_feature_csv(config.data_csv, CsvLimits{config.num_speakers, config.num_classes});
  }
  if (all.size() < 2) throw std::invalid_argument("make_dataset: need at least two conversations");
  for (const auto& c : all) {
    if (c.dims() != all.front().dims()) throw std::invalid_argument("make_dataset: feature widths differ across conversations");
  }
  const auto perm = shuffle_permutation(all.size(), config.data_seed);
  const std::size_t n_eval = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(config.eval_fraction * static_cast<double>(all.size()))), 1, all.size() - 1);
  Dataset d;
  for (std::size_t i = 0; i < all.size(); ++i) {
    (i < all.size() - n_eval ? d.train : d.eval).push_back(std::move(all[perm[i]]));
  }
  return d;
}

TrainResult train(const RunConfig& config, const Dataset& data, const ProgressCallback& progress) {
  config.validate();
  if (data.train.empty() || data.eval.empty()) throw std::invalid_argument("train: train and eval splits must be non-empty");
  Trainer trainer(config, data);
  return trainer.run(progress);
}

std::vector<std::string> component_combinations() {
  return {"None", "Mmax", "Mmin", "IE", "Mmax+Mmin", "Mmax+IE", "Mmin+IE", "Mmax+Mmin+IE"};
}

std::vector<std::string> modality_subsets() { return {"T", "A", "V", "A+V", "T+A", "T+V", "T+A+V"}; }

void apply_combination(RunConfig& config, std::string_view name) {
  const auto names = component_combinations();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw std::invalid_argument("unknown component combination '" + std::string(name) + "'");
  }
  auto has = [&](std::string_view part) {
    std::size_t start = 0;
    while (start <= name.size()) {
      const std::size_t plus = name.find('+', start);
      if (name.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start) == part) return true;
      if (plus == std::string_view::npos) break;
      start = plus + 1;
    }
    return false;
  };
  config.mmax_on = has("Mmax");
  config.mmin_on = has("Mmin");
  config.ie_on = has("IE");
}

void apply_modality_subset(RunConfig& config, std::string_view name) {
  const auto names = modality_subsets();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw std::invalid_argument("unknown modality subset '" + std::string(name) + "'");
  }
  config.modalities[kText] = name.find('T') != std::string_view::npos;
  config.modalities[kVideo] = name.find('V') != std::string_view::npos;
  config.modalities[kAudio] = name.find('A') != std::string_view::npos;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, std::span<const std::uint64_t> seeds,
                                      const std::function<void(const std::string&)>& log) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: need at least one seed");
  RunConfig quiet = base;
  quiet.log_curves = false;
  const Dataset data = make_dataset(quiet);

  auto run_cell = [&](const std::string& kind, const std::string& name, const RunConfig& cfg) {
    AblationRow row;
    row.row_kind = kind;
    row.name = name;
    for (std::uint64_t seed : seeds) {
      RunConfig c = cfg;
      c.seed = seed;
      TrainResult r;
      try {
        r = train(c, data);
      } catch (const std::exception& e) {
        throw std::runtime_error(kind + " " + name + ", seed " + std::to_string(seed) + ": " + e.what());
      }
      row.seeds.push_back(seed);
      row.accuracies.push_back(r.best_eval_accuracy);
      row.f1s.push_back(r.best_eval_f1);
      row.final_accuracies.push_back(r.final_eval_accuracy);
      if (log) {
        log(kind + " " + name + " seed " + std::to_string(seed) + ": best eval accuracy " +
            format_double(r.best_eval_accuracy) + " (epoch " + std::to_string(r.best_epoch) + ")");
      }
    }
    row.acc_mean = mean_of(row.accuracies);
    row.acc_std = std_of(row.accuracies);
    row.f1_mean = mean_of(row.f1s);
    row.f1_std = std_of(row.f1s);
    row.final_acc_mean = mean_of(row.final_accuracies);
    row.final_acc_std = std_of(row.final_accuracies);
    return row;
  };

  std::vector<AblationRow> rows;
  for (const auto& name : component_combinations()) {
    RunConfig c = quiet;
    c.modalities = {true, true, true};
    apply_combination(c, name);
    rows.push_back(run_cell("component", name, c));
  }
  const AblationRow full = rows.back();
  for (const auto& name : modality_subsets()) {
    if (name == "T+A+V") {
      AblationRow alias = full;
      alias.row_kind = "modality";
      alias.name = name;
      rows.push_back(alias);
      continue;
    }
    RunConfig c = quiet;
    apply_combination(c, "Mmax+Mmin+IE");
    apply_modality_subset(c, name);
    rows.push_back(run_cell("modality", name, c));
  }
  return rows;
}

}  // namespace mmmie
