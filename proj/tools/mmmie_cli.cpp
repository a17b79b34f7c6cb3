#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>

#include "mmmie/gradcheck.hpp"
#include "mmmie/mi_bench.hpp"
#include "mmmie/training.hpp"

namespace fs = std::filesystem;
using namespace mmmie;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kBreach = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", flags.overrides, "override one key (repeatable), e.g. --set alpha=0")
      ->allow_extra_args(false);
  cmd->add_option("--seed", flags.seed, "training seed (same as --set seed=N)");
}

// Resolved before any output is written, so a bad key leaves nothing behind.
RunConfig resolve_config(const ConfigFlags& flags) {
  RunConfig config = flags.config_path.empty() ? RunConfig{} : load_config(flags.config_path);
  for (const auto& o : flags.overrides) apply_override(config, o);
  if (flags.seed) config.seed = *flags.seed;
  config.validate();
  return config;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &utc);
  return buf;
}

fs::path fresh_run_dir(const fs::path& parent) {
  const std::string stem = "run-" + timestamp();
  fs::path dir = parent / stem;
  for (int k = 1; fs::exists(dir); ++k) dir = parent / (stem + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<double> parse_rho_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string cell = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      out.push_back(parse_double(cell));
    } catch (const std::exception&) {
      throw UsageError("--rho: '" + cell + "' is not a number");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

int cmd_mi_bench(const std::string& rho_text, std::size_t dim, std::size_t steps, std::uint64_t seed,
                 double tolerance, const fs::path& out_dir) {
  const std::vector<double> rhos = parse_rho_list(rho_text);
  for (double r : rhos) {
    try {
      GaussianPairSpec{r, dim}.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  MiBenchOptions options;
  options.steps = steps;
  options.seed = seed;
  std::vector<MiBenchRow> rows;
  std::vector<double> failing;
  for (double r : rhos) {
    const auto t0 = std::chrono::steady_clock::now();
    const MiBenchRow row = run_mi_bench(GaussianPairSpec{r, dim}, options);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const MiBenchVerdict v = judge_mi_bench(row, tolerance);
    std::printf("rho=%-5g analytic=%.4f  dv=%.4f (err %+.4f)  vclub=%.4f (err %+.4f)  %s  [%.1fs]\n", r,
                row.analytic_mi, row.dv_estimate, row.dv_err(), row.vclub_estimate, row.vclub_err(),
                v.passed() ? "ok" : "BREACH", secs);
    if (!v.passed()) failing.push_back(r);
    rows.push_back(row);
  }
  fs::create_directories(out_dir);
  std::string csv = "rho,dim,analytic_mi,dv_estimate,vclub_estimate,dv_err,vclub_err,dv_eps_stat,passed\n";
  for (const auto& r : rows) {
    csv += format_double(r.rho) + ',' + std::to_string(r.dim) + ',' + format_double(r.analytic_mi) + ',' +
           format_double(r.dv_estimate) + ',' + format_double(r.vclub_estimate) + ',' + format_double(r.dv_err()) +
           ',' + format_double(r.vclub_err()) + ',' + format_double(r.dv_eps_stat()) + ',' +
           (judge_mi_bench(r, tolerance).passed() ? "true" : "false") + '\n';
  }
  write_text(out_dir / "mi_bench.csv", csv);
  std::printf("wrote %s\n", (out_dir / "mi_bench.csv").c_str());
  if (!failing.empty()) {
    std::string list;
    for (double r : failing) list += (list.empty() ? "" : ", ") + format_double(r);
    std::fprintf(stderr, "tolerance %g breached at rho = %s\n", tolerance, list.c_str());
    return kBreach;
  }
  return kOk;
}

int cmd_train(const ConfigFlags& flags, const fs::path& out_parent) {
  const RunConfig config = resolve_config(flags);
  const Dataset data = make_dataset(config);
  const fs::path dir = fresh_run_dir(out_parent);
  const std::string config_text = config_to_text(config);
  write_text(dir / "config.txt", config_text);
  std::printf("run directory %s\n", dir.c_str());
  std::printf("train %zu conversations, eval %zu\n", data.train.size(), data.eval.size());
  const TrainResult r = train(config, data, [](const MetricRecord& m) {
    if (m.split == Split::eval) {
      std::printf("epoch %3zu  eval acc %.4f  f1 %.4f  task %.4f  mi %+.4f  msi %.4f\n", m.epoch, m.accuracy,
                  m.weighted_f1, m.losses.task, m.losses.mi, m.losses.msi);
      std::fflush(stdout);
    }
  });
  write_metrics_csv(dir / "metrics.csv", r.metrics);
  write_steps_csv(dir / "steps.csv", r.steps);
  if (!r.curves.rows.empty()) export_curves(r.curves, dir / "curves.csv");
  save_checkpoint(dir / "best.ckpt", Checkpoint{r.best_params, config_text});
  save_checkpoint(dir / "final.ckpt", Checkpoint{r.final_params, config_text});
  std::printf("best eval accuracy %.4f (epoch %zu), final %.4f\n", r.best_eval_accuracy, r.best_epoch,
              r.final_eval_accuracy);
  return kOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string cell = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw UsageError("--seeds: '" + cell + "' is not a seed");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string ranking(const std::vector<AblationRow>& rows, const std::string& kind) {
  std::vector<const AblationRow*> sel;
  for (const auto& r : rows)
    if (r.row_kind == kind) sel.push_back(&r);
  std::stable_sort(sel.begin(), sel.end(), [](const AblationRow* a, const AblationRow* b) { return a->acc_mean > b->acc_mean; });
  std::string out;
  char line[160];
  for (std::size_t i = 0; i < sel.size(); ++i) {
    std::snprintf(line, sizeof line, "%2zu. %-14s acc %.4f +- %.4f   f1 %.4f +- %.4f   final acc %.4f +- %.4f\n", i + 1,
                  sel[i]->name.c_str(), sel[i]->acc_mean, sel[i]->acc_std, sel[i]->f1_mean, sel[i]->f1_std,
                  sel[i]->final_acc_mean, sel[i]->final_acc_std);
    out += line;
  }
  return out;
}

int cmd_ablate(const ConfigFlags& flags, const std::string& seeds_text, const fs::path& out_dir) {
  const RunConfig config = resolve_config(flags);
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
  fs::create_directories(out_dir);
  const auto rows = run_ablation(config, seeds, [](const std::string& msg) {
    std::printf("%s\n", msg.c_str());
    std::fflush(stdout);
  });
  write_ablation_csv(out_dir / "ablation.csv", rows);
  std::string summary = "Components (all modalities), ranked by mean best-checkpoint eval accuracy over " +
                        std::to_string(seeds.size()) + " seeds\n" + ranking(rows, "component") +
                        "\nModality subsets (all components), ranked\n" + ranking(rows, "modality");
  write_text(out_dir / "ablation_summary.txt", summary);
  std::printf("\n%s", summary.c_str());
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::optional<std::string>& corrupt) {
  GradcheckOptions options;
  options.seed = seed;
  options.corrupt_block = corrupt;
  bool ok = true;
  double worst = 0.0;
  for (const auto& e : run_gradcheck(options)) {
    std::printf("%-32s %.3e  %s\n", e.block.c_str(), e.worst_relative_error, e.passed ? "pass" : "FAIL");
    ok = ok && e.passed;
    worst = std::max(worst, e.worst_relative_error);
  }
  std::printf("worst relative error %.3e (tolerance %.0e): %s\n", worst, options.tolerance, ok ? "pass" : "FAIL");
  return ok ? kOk : kBreach;
}

int cmd_export_curves(const fs::path& in, const fs::path& out, const std::string& kind, const std::string& tag) {
  const CurveLog log = read_curves_csv(in);
  CurveLog kept;
  for (const auto& r : log.rows) {
    if ((kind.empty() || kind == curve_kind_name(r.kind)) && (tag.empty() || tag == r.tag)) kept.rows.push_back(r);
  }
  if (kept.rows.empty()) throw UsageError("no curve rows match the requested kind/tag");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  export_curves(kept, out);
  std::printf("wrote %s and %s (%zu rows)\n", out.c_str(), curves_summary_path(out).c_str(), kept.rows.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fusion with mutual-information bounds: benchmarks, training, ablation, diagnostics"};
  app.require_subcommand(1);

  std::string rho_text = "0,0.5,0.9";
  std::size_t dim = 1, steps = 2000;
  std::uint64_t bench_seed = 100;
  double tolerance = 0.1;
  fs::path bench_out = "mi_bench_out";
  auto* bench = app.add_subcommand("mi-bench", "estimate MI of correlated Gaussians against the closed form");
  bench->add_option("--rho", rho_text, "comma-separated correlations")->capture_default_str();
  bench->add_option("--dim", dim, "dimension of x and y")->capture_default_str();
  bench->add_option("--steps", steps, "training steps per estimator")->capture_default_str();
  bench->add_option("--seed", bench_seed, "random seed")->capture_default_str();
  bench->add_option("--tolerance", tolerance, "allowed error in nats")->capture_default_str();
  bench->add_option("--out", bench_out, "output directory")->capture_default_str();

  ConfigFlags train_flags;
  fs::path train_out = "runs";
  auto* train_cmd = app.add_subcommand("train", "train one model; writes a timestamped run directory");
  add_config_flags(train_cmd, train_flags);
  train_cmd->add_option("--out", train_out, "parent of the run directory")->capture_default_str();

  ConfigFlags ablate_flags;
  std::string seeds_text = "100,101,102,103,104";
  fs::path ablate_out = "ablation_out";
  auto* ablate = app.add_subcommand("ablate", "component and modality ablation over several seeds");
  add_config_flags(ablate, ablate_flags);
  ablate->add_option("--seeds", seeds_text, "comma-separated seeds")->capture_default_str();
  ablate->add_option("--out", ablate_out, "output directory")->capture_default_str();

  std::uint64_t gc_seed = 100;
  std::optional<std::string> corrupt;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op, block and the full model");
  gc->add_option("--seed", gc_seed, "random seed")->capture_default_str();
  gc->add_option("--corrupt", corrupt, "perturb one block's analytic gradient")->group("");

  fs::path curves_in, curves_out;
  std::string kind_filter, tag_filter;
  auto* ex = app.add_subcommand("export-curves", "re-export a curves CSV (optionally filtered) with its summary");
  ex->add_option("--in", curves_in, "curves CSV from a run directory")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", curves_out, "output CSV path")->required();
  ex->add_option("--kind", kind_filter, "keep one kind, e.g. dv_optimized");
  ex->add_option("--tag", tag_filter, "keep one tag, e.g. text_audio");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*bench) return cmd_mi_bench(rho_text, dim, steps, bench_seed, tolerance, bench_out);
    if (*train_cmd) return cmd_train(train_flags, train_out);
    if (*ablate) return cmd_ablate(ablate_flags, seeds_text, ablate_out);
    if (*gc) return cmd_gradcheck(gc_seed, corrupt);
    if (*ex) return cmd_export_curves(curves_in, curves_out, kind_filter, tag_filter);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n\n%s", e.what(), app.help().c_str());
    return kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const TrainingAbort& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kNumerical;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
