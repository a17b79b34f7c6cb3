// End-to-end acceptance run: drives the command-line tool and checks each
// criterion against its output files. One PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmmie/gradcheck.hpp"
#include "mmmie/training.hpp"

namespace fs = std::filesystem;

namespace {

using Table = std::vector<std::map<std::string, std::string>>;

struct Outcome {
  int number;
  bool passed;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(int number, bool passed, const std::string& detail) {
  outcomes.push_back({number, passed, detail});
  std::printf("%s criterion %d: %s\n", passed ? "PASS" : "FAIL", number, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

struct Timed {
  int exit_code;
  double seconds;
};

Timed run(const std::string& command, const fs::path& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const int status = std::system((command + " > \"" + log.string() + "\" 2>&1").c_str());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, secs};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

Table read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  std::string line;
  std::getline(in, line);
  const auto header = split(line, ',');
  Table rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double num(const std::map<std::string, std::string>& row, const std::string& key) {
  return std::strtod(row.at(key).c_str(), nullptr);
}

fs::path only_run_dir(const fs::path& parent) {
  for (const auto& e : fs::directory_iterator(parent))
    if (e.is_directory()) return e.path();
  throw std::runtime_error("no run directory under " + parent.string());
}

void mi_bench(const std::string& cli, const fs::path& work) {
  const fs::path out = work / "mi_bench";
  const Timed t = run(cli + " mi-bench --rho 0,0.5,0.9 --dim 1 --steps 2000 --tolerance 0.1 --out " + out.string(),
                      work / "mi_bench.log");
  Table rows;
  try {
    rows = read_csv(out / "mi_bench.csv");
  } catch (const std::exception& e) {
    report(1, false, e.what());
    report(2, false, e.what());
    return;
  }
  bool lower_ok = rows.size() == 3, upper_ok = rows.size() == 3;
  std::string lower_detail, upper_detail;
  for (const auto& r : rows) {
    const double truth = num(r, "analytic_mi"), dv = num(r, "dv_estimate"), vclub = num(r, "vclub_estimate");
    const double eps = num(r, "dv_eps_stat");
    lower_ok = lower_ok && std::abs(dv - truth) <= 0.1;
    upper_ok = upper_ok && vclub >= truth - 0.1 && vclub >= dv - 2.0 * eps;
    lower_detail += fmt(" rho=%g: dv %.4f vs %.4f;", num(r, "rho"), dv, truth);
    upper_detail += fmt(" rho=%g: vclub %.4f >= %.4f and >= dv-2eps %.4f;", num(r, "rho"), vclub, truth - 0.1,
                        dv - 2.0 * eps);
  }
  const bool fast = t.seconds < 300.0;
  report(1, lower_ok && fast, "DV within 0.1 nats of closed form, runtime " + fmt("%.0fs", t.seconds) + " (<300s);" +
                                  lower_detail);
  report(2, upper_ok && fast, "vCLUB above closed form - 0.1 and above DV - 2 eps_stat;" + upper_detail);
}

void gradcheck(const std::string& cli, const fs::path& work) {
  const Timed clean = run(cli + " gradcheck", work / "gradcheck.log");
  const std::string log = slurp(work / "gradcheck.log");
  std::size_t listed = 0;
  double worst = 0.0;
  bool all_pass = true;
  std::istringstream lines(log);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("worst", 0) == 0) continue;
    std::istringstream cells(line);
    std::string block, verdict;
    double err = 0.0;
    if (cells >> block >> err >> verdict) {
      ++listed;
      worst = std::max(worst, err);
      all_pass = all_pass && verdict == "pass";
    }
  }
  const bool complete = listed == mmmie::gradcheck_blocks().size();
  const Timed corrupted = run(cli + " gradcheck --corrupt model/full", work / "gradcheck_corrupt.log");
  report(3, clean.exit_code == 0 && all_pass && complete && worst < 1e-4 && corrupted.exit_code == 2,
         fmt("%.0f blocks, worst relative error %.2e (<1e-4); corrupted-gradient control exits %.0f", listed, worst,
             corrupted.exit_code));
}

struct Series {
  double first = 0.0, last = 0.0;
};

void train_runs(const std::string& cli, const fs::path& work) {
  const fs::path a = work / "train_a", b = work / "train_b";
  const Timed ta = run(cli + " train --out " + a.string(), work / "train_a.log");
  const Timed tb = run(cli + " train --out " + b.string(), work / "train_b.log");
  fs::path run_a, run_b;
  try {
    run_a = only_run_dir(a);
    run_b = only_run_dir(b);
  } catch (const std::exception& e) {
    for (int c : {4, 8, 9}) report(c, false, e.what());
    return;
  }

  // Curve directionality, from the summary written next to the curves.
  std::map<std::string, Series> s;
  for (const auto& r : read_csv(mmmie::curves_summary_path(run_a / "curves.csv"))) {
    s[r.at("kind") + "/" + r.at("tag")] = {num(r, "first_value"), num(r, "last_value")};
  }
  bool dv_up = true, vclub_below = true, frozen_up = true;
  std::string detail;
  for (const char* tag : mmmie::kPairTags) {
    const Series& v = s["dv_optimized/" + std::string(tag)];
    dv_up = dv_up && v.last > v.first;
    detail += std::string(" dv ") + tag + fmt(" %.3f->%.3f;", v.first, v.last);
  }
  for (const char* tag : mmmie::kChannelTags) {
    const Series& opt = s["vclub_optimized/" + std::string(tag)];
    const Series& frozen = s["vclub_frozen/" + std::string(tag)];
    vclub_below = vclub_below && opt.last < frozen.last;
    detail += std::string(" vclub ") + tag + fmt(" optimized %.3f vs frozen %.3f;", opt.last, frozen.last);
  }
  for (const char* tag : {"audio_channel", "video_channel"}) {
    const Series& frozen = s["vclub_frozen/" + std::string(tag)];
    frozen_up = frozen_up && frozen.last >= frozen.first;
    detail += std::string(" frozen ") + tag + fmt(" %.3f->%.3f;", frozen.first, frozen.last);
  }
  const bool fast = ta.exit_code == 0 && ta.seconds < 900.0;
  report(4, dv_up && vclub_below && frozen_up && fast,
         std::string("dv rises: ") + (dv_up ? "yes" : "NO") + ", vclub optimized below frozen: " +
             (vclub_below ? "yes" : "NO") + ", frozen audio/video rise: " + (frozen_up ? "yes" : "NO") +
             fmt(", runtime %.0fs;", ta.seconds) + detail);

  bool same = tb.exit_code == 0;
  for (const char* f : {"metrics.csv", "curves.csv", "curves_summary.csv", "steps.csv"}) {
    same = same && fs::exists(run_a / f) && slurp(run_a / f) == slurp(run_b / f);
  }
  report(8, same, "two train invocations, identical config and seed: metrics, steps and curves CSVs byte-identical");

  const Table steps = read_csv(run_a / "steps.csv");
  double worst = 0.0;
  bool defaults = !steps.empty();
  for (const auto& r : steps) {
    const double residual =
        num(r, "loss_total") - (num(r, "loss_task") + 0.3 * num(r, "loss_mi") + 0.0002 * num(r, "loss_msi"));
    worst = std::max(worst, std::abs(residual));
    defaults = defaults && num(r, "alpha") == 0.3 && num(r, "beta") == 0.0002;
  }
  report(9, defaults && worst <= 1e-12,
         fmt("%.0f logged steps, max |total - (task + 0.3 mi + 0.0002 msi)| = %.2e", static_cast<double>(steps.size()),
             worst));
}

void ablation(const std::string& cli, const fs::path& work) {
  const fs::path out = work / "ablation";
  const Timed t = run(cli + " ablate --seeds 100,101,102,103,104 --out " + out.string(), work / "ablation.log");
  std::map<std::string, std::pair<double, double>> comp, mod;
  try {
    for (const auto& r : read_csv(out / "ablation.csv")) {
      (r.at("row_kind") == "component" ? comp : mod)[r.at("name")] = {num(r, "acc_mean"), num(r, "acc_std")};
    }
  } catch (const std::exception& e) {
    report(5, false, e.what());
    report(6, false, e.what());
    return;
  }
  auto show = [](const std::string& name, std::pair<double, double> v) {
    return " " + name + fmt(" %.4f+-%.4f;", v.first, v.second);
  };
  const bool fast = t.exit_code == 0 && t.seconds < 7200.0;
  const auto none = comp["None"], mmax = comp["Mmax"], full = comp["Mmax+Mmin+IE"];
  report(5, fast && full.first > none.first && mmax.first > none.first,
         "5 seeds, mean best-checkpoint eval accuracy:" + show("None", none) + show("Mmax", mmax) +
             show("Mmax+Mmin+IE", full) + fmt(" runtime %.0fs", t.seconds));

  double best_single = 0.0, worst_bimodal = 1.0, best_bimodal = 0.0;
  std::string detail;
  for (const char* m : {"T", "A", "V"}) {
    best_single = std::max(best_single, mod[m].first);
    detail += show(m, mod[m]);
  }
  for (const char* m : {"A+V", "T+A", "T+V"}) {
    worst_bimodal = std::min(worst_bimodal, mod[m].first);
    best_bimodal = std::max(best_bimodal, mod[m].first);
    detail += show(m, mod[m]);
  }
  const double all = mod["T+A+V"].first;
  detail += show("T+A+V", mod["T+A+V"]);
  report(6, fast && all >= best_bimodal && worst_bimodal >= best_single,
         "T+A+V >= every bimodal >= best single:" + detail);
}

// Independent oracle: confusion matrix, then support-weighted per-class F1.
double oracle_f1(const std::vector<std::size_t>& p, const std::vector<std::size_t>& t, std::size_t classes) {
  std::vector<std::vector<double>> cm(classes, std::vector<double>(classes, 0.0));
  for (std::size_t i = 0; i < p.size(); ++i) cm[t[i]][p[i]] += 1.0;
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    const double prec = col > 0 ? cm[c][c] / col : 0.0, rec = row > 0 ? cm[c][c] / row : 0.0;
    total += row * (prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
  }
  return total / static_cast<double>(p.size());
}

void metric_oracle() {
  const double hand = mmmie::weighted_f1(std::vector<std::size_t>{0, 0, 0, 0}, std::vector<std::size_t>{0, 0, 1, 1}, 2);
  bool ok = std::abs(hand - 1.0 / 3.0) <= 1e-12;
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + rng() % 7, n = 1 + rng() % 80;
    std::vector<std::size_t> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng() % classes;
      p[i] = rng() % 2 ? t[i] : rng() % classes;
    }
    worst = std::max(worst, std::abs(mmmie::weighted_f1(p, t, classes) - oracle_f1(p, t, classes)));
  }
  ok = ok && worst <= 1e-12;
  report(7, ok, fmt("hand case %.15f (1/3), max deviation from confusion-matrix oracle over 100 cases %.2e", hand, worst));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s PATH_TO_CLI [WORK_DIR]\n", argv[0]);
    return 1;
  }
  const std::string cli = "\"" + fs::absolute(argv[1]).string() + "\"";
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "mmmie_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  std::printf("acceptance work directory: %s\n", work.c_str());

  mi_bench(cli, work);
  gradcheck(cli, work);
  metric_oracle();
  train_runs(cli, work);
  ablation(cli, work);

  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.number < b.number; });
  std::printf("\nsummary\n");
  int failed = 0;
  for (const auto& o : outcomes) {
    std::printf("  %s criterion %d\n", o.passed ? "PASS" : "FAIL", o.number);
    failed += o.passed ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(outcomes.size()) - failed, outcomes.size());
  return failed == 0 ? 0 : 1;
}
