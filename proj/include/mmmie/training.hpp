#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmmie/data.hpp"
#include "mmmie/estimators.hpp"
#include "mmmie/model.hpp"

namespace mmmie {

/// Every hyperparameter of a run. Key names in the config text equal the field
/// names; synthetic-world fields use the `synth.` prefix.
struct RunConfig {
  double alpha = 0.3;
  double beta = 0.0002;
  double learning_rate = 2e-3;
  std::size_t batch_size = 2;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 100;
  /// Fixes the synthetic world, its conversations and the train/eval split.
  std::uint64_t data_seed = 7;

  std::size_t embed_dim = 16;
  std::size_t lstm_hidden = 16;
  std::size_t fusion_hidden = 32;
  std::size_t statistic_hidden = 32;
  std::size_t variational_hidden = 16;
  std::size_t num_speakers = 2;
  std::size_t num_classes = 4;
  std::size_t max_length = 64;

  bool mmax_on = true;
  bool mmin_on = true;
  bool ie_on = true;
  std::array<bool, kModalities> modalities{true, true, true};

  /// Empty means synthetic data.
  std::string data_csv;
  std::size_t conversations = 250;
  double eval_fraction = 0.2;
  SynthWorldSpec synth;

  /// q-network fitting steps on the initial model's features before training starts,
  /// so the first vCLUB estimates come from a fitted conditional.
  std::size_t q_warmup_steps = 200;

  /// Train the twin models whose probes produce the frozen curve series.
  bool log_curves = true;
  /// Decay of the bias-corrected moving average applied to logged curve values; 0 logs raw per-batch estimates.
  double curve_smoothing = 0.95;

  void validate() const;
  ModelSpec model_spec(const std::array<std::size_t, kModalities>& input_dims) const;
};

/// Config parse failure; `line` is 0 for command-line overrides.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::size_t line, std::string key, const std::string& message);
  std::size_t line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

/// key=value lines; blank lines and `#` comments are ignored. Unset keys keep `base` values.
RunConfig parse_config(const std::string& text, const RunConfig& base = {});
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {});
/// Applies one `key=value` override.
void apply_override(RunConfig& config, const std::string& assignment);
/// Every key in a fixed order; parse_config(config_to_text(c)) == c.
std::string config_to_text(const RunConfig& config);
std::vector<std::string> config_keys();

struct Dataset {
  std::vector<ConversationBatch> train;
  std::vector<ConversationBatch> eval;
};

/// Synthetic or CSV data, split at conversation level by data_seed.
Dataset make_dataset(const RunConfig& config);

enum class Split { train, eval };

struct MetricRecord {
  std::size_t epoch = 0;
  Split split = Split::train;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  LossBundle losses;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBundle losses;
};

enum class CurveKind { dv_optimized, dv_frozen, vclub_optimized, vclub_frozen };
const char* curve_kind_name(CurveKind kind);
/// Tags of the pairwise DV series, ordered like mine_loss pairs: (t,v), (t,a), (v,a).
inline constexpr std::array<const char*, 3> kPairTags = {"text_video", "text_audio", "audio_video"};
/// Tags of the per-modality vCLUB series, ordered text, video, audio.
inline constexpr std::array<const char*, 3> kChannelTags = {"text_channel", "video_channel", "audio_channel"};

struct CurveRow {
  std::size_t step = 0;
  CurveKind kind = CurveKind::dv_optimized;
  std::string tag;
  double value = 0.0;
  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

struct CurveLog {
  std::vector<CurveRow> rows;

  void add(std::size_t step, CurveKind kind, std::string tag, double value);
  /// Values of one series in step order.
  std::vector<CurveRow> series(CurveKind kind, std::string_view tag) const;
};

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth);
/// Support-weighted mean of per-class F1; a class with P + R = 0 scores 0.
double weighted_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth, std::size_t num_classes);

/// Non-finite value during training; carries the step and the loss term involved.
class TrainingAbort : public std::runtime_error {
 public:
  TrainingAbort(std::size_t step, std::string component, const std::string& detail);
  std::size_t step() const noexcept { return step_; }
  const std::string& component() const noexcept { return component_; }

 private:
  std::size_t step_;
  std::string component_;
};

struct TrainResult {
  ModelSpec spec;
  ParamSet initial_params;
  ParamSet final_params;
  /// Parameters after the epoch with the highest eval accuracy (earliest on ties).
  ParamSet best_params;
  std::size_t best_epoch = 0;
  double best_eval_accuracy = 0.0;
  double best_eval_f1 = 0.0;
  double final_eval_accuracy = 0.0;
  double final_eval_f1 = 0.0;
  std::vector<MetricRecord> metrics;
  std::vector<StepRecord> steps;
  CurveLog curves;
};

using ProgressCallback = std::function<void(const MetricRecord&)>;

TrainResult train(const RunConfig& config, const Dataset& data, const ProgressCallback& progress = {});

struct AblationRow {
  std::string row_kind;  // "component" or "modality"
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // best-checkpoint eval accuracy per seed
  std::vector<double> f1s;
  std::vector<double> final_accuracies;
  double acc_mean = 0.0, acc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  double final_acc_mean = 0.0, final_acc_std = 0.0;
};

/// The eight {Mmax, Mmin, IE} combinations, then the seven modality subsets
/// (all components on). Subset T+A+V reuses the Mmax+Mmin+IE runs.
std::vector<AblationRow> run_ablation(const RunConfig& base, std::span<const std::uint64_t> seeds,
                                      const std::function<void(const std::string&)>& log = {});

/// Names in table order.
std::vector<std::string> component_combinations();
std::vector<std::string> modality_subsets();
/// Applies a combination ("None", "Mmax+IE", ...) or subset ("T+A", ...) to `config`.
void apply_combination(RunConfig& config, std::string_view name);
void apply_modality_subset(RunConfig& config, std::string_view name);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& metrics);
void write_steps_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps);
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

/// Writes `path` (step,kind,tag,value) and a sibling `<stem>_summary.csv` with
/// the first and last value of every series.
void export_curves(const CurveLog& log, const std::filesystem::path& path);
CurveLog read_curves_csv(const std::filesystem::path& path);
std::filesystem::path curves_summary_path(const std::filesystem::path& curves_path);

}  // namespace mmmie
