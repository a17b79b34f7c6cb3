#include <fstream>
#include <map>
#include <sstream>

#include "mmmie/training.hpp"

namespace mmmie {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void check_labels(std::span<const std::size_t> preds, std::span<const std::size_t> truth) {
  if (preds.size() != truth.size()) throw std::invalid_argument("metrics: prediction and truth lengths differ");
  if (preds.empty()) throw std::invalid_argument("metrics: empty input");
}

}  // namespace

const char* curve_kind_name(CurveKind kind) {
  switch (kind) {
    case CurveKind::dv_optimized: return "dv_optimized";
    case CurveKind::dv_frozen: return "dv_frozen";
    case CurveKind::vclub_optimized: return "vclub_optimized";
    case CurveKind::vclub_frozen: return "vclub_frozen";
  }
  return "unknown";
}

void CurveLog::add(std::size_t step, CurveKind kind, std::string tag, double value) {
  rows.push_back(CurveRow{step, kind, std::move(tag), value});
}

std::vector<CurveRow> CurveLog::series(CurveKind kind, std::string_view tag) const {
  std::vector<CurveRow> out;
  for (const auto& r : rows)
    if (r.kind == kind && r.tag == tag) out.push_back(r);
  return out;
}

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth) {
  check_labels(preds, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double weighted_f1(std::span<const std::size_t> preds, std::span<const std::size_t> truth, std::size_t num_classes) {
  check_labels(preds, truth);
  std::vector<double> tp(num_classes), predicted(num_classes), support(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || truth[i] >= num_classes) throw std::out_of_range("weighted_f1: label out of range");
    predicted[preds[i]] += 1.0;
    support[truth[i]] += 1.0;
    if (preds[i] == truth[i]) tp[truth[i]] += 1.0;
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double p = predicted[c] > 0.0 ? tp[c] / predicted[c] : 0.0;
    const double r = support[c] > 0.0 ? tp[c] / support[c] : 0.0;
    const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    total += support[c] * f1;
  }
  return total / static_cast<double>(preds.size());
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& metrics) {
  auto out = open_out(path);
  out << "epoch,split,accuracy,weighted_f1,loss_task,loss_mi,loss_msi,loss_total\n";
  for (const auto& m : metrics) {
    out << m.epoch << ',' << (m.split == Split::train ? "train" : "eval") << ',' << format_double(m.accuracy) << ','
        << format_double(m.weighted_f1) << ',' << format_double(m.losses.task) << ',' << format_double(m.losses.mi)
        << ',' << format_double(m.losses.msi) << ',' << format_double(m.losses.total) << '\n';
  }
}

void write_steps_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps) {
  auto out = open_out(path);
  out << "step,epoch,loss_task,loss_mi,loss_msi,loss_total,alpha,beta\n";
  for (const auto& s : steps) {
    out << s.step << ',' << s.epoch << ',' << format_double(s.losses.task) << ',' << format_double(s.losses.mi) << ','
        << format_double(s.losses.msi) << ',' << format_double(s.losses.total) << ',' << format_double(s.losses.alpha)
        << ',' << format_double(s.losses.beta) << '\n';
  }
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  auto out = open_out(path);
  out << "row_kind,name,seeds,acc_mean,acc_std,f1_mean,f1_std,final_acc_mean,final_acc_std\n";
  for (const auto& r : rows) {
    std::string seeds;
    for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? " " : "") + std::to_string(r.seeds[i]);
    out << r.row_kind << ',' << r.name << ',' << seeds << ',' << format_double(r.acc_mean) << ','
        << format_double(r.acc_std) << ',' << format_double(r.f1_mean) << ',' << format_double(r.f1_std) << ','
        << format_double(r.final_acc_mean) << ',' << format_double(r.final_acc_std) << '\n';
  }
}

std::filesystem::path curves_summary_path(const std::filesystem::path& curves_path) {
  std::filesystem::path p = curves_path;
  p.replace_filename(curves_path.stem().string() + "_summary.csv");
  return p;
}

void export_curves(const CurveLog& log, const std::filesystem::path& path) {
  if (log.rows.empty()) throw std::invalid_argument("export_curves: empty curve log");
  {
    auto out = open_out(path);
    out << "step,kind,tag,value\n";
    for (const auto& r : log.rows) out << r.step << ',' << curve_kind_name(r.kind) << ',' << r.tag << ',' << format_double(r.value) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::vector<std::pair<CurveKind, std::string>> order;
  std::map<std::pair<CurveKind, std::string>, std::pair<CurveRow, CurveRow>> ends;
  for (const auto& r : log.rows) {
    const auto key = std::make_pair(r.kind, r.tag);
    auto it = ends.find(key);
    if (it == ends.end()) {
      ends.emplace(key, std::make_pair(r, r));
      order.push_back(key);
    } else {
      it->second.second = r;
    }
  }
  auto out = open_out(curves_summary_path(path));
  out << "kind,tag,first_step,first_value,last_step,last_value\n";
  for (const auto& key : order) {
    const auto& [first, last] = ends.at(key);
    out << curve_kind_name(key.first) << ',' << key.second << ',' << first.step << ',' << format_double(first.value)
        << ',' << last.step << ',' << format_double(last.value) << '\n';
  }
}

CurveLog read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,kind,tag,value") {
    throw std::invalid_argument(path.string() + ": not a curves CSV");
  }
  CurveLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string step, kind, tag, value;
    std::getline(cells, step, ',');
    std::getline(cells, kind, ',');
    std::getline(cells, tag, ',');
    std::getline(cells, value);
    CurveRow row;
    try {
      row.step = static_cast<std::size_t>(std::stoull(step));
      row.value = parse_double(value);
    } catch (const std::exception&) {
      throw std::invalid_argument(path.string() + " line " + std::to_string(line_no) + ": malformed row");
    }
    bool known = false;
    for (CurveKind k : {CurveKind::dv_optimized, CurveKind::dv_frozen, CurveKind::vclub_optimized, CurveKind::vclub_frozen}) {
      if (kind == curve_kind_name(k)) {
        row.kind = k;
        known = true;
      }
    }
    if (!known) throw std::invalid_argument(path.string() + " line " + std::to_string(line_no) + ": unknown kind");
    row.tag = tag;
    log.rows.push_back(std::move(row));
  }
  return log;
}

}  // namespace mmmie
