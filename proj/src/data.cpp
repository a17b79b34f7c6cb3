#include "mmmie/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mmmie {
namespace {

using Rng = std::mt19937_64;

Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = d(rng);
  return t;
}

constexpr std::array<char, kModalities> kCsvPrefix = {'t', 'v', 'a'};

std::string line_error(std::size_t line, const std::string& what) {
  return "feature CSV line " + std::to_string(line) + ": " + what;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::size_t parse_index(std::string_view text, std::size_t line, const char* column) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument(line_error(line, std::string(column) + " '" + std::string(text) +
                                                     "' is not a non-negative integer"));
  }
  return value;
}

}  // namespace

void GaussianPairSpec::validate() const {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("GaussianPairSpec: |rho| must be below 1");
  if (dim == 0) throw std::invalid_argument("GaussianPairSpec: dim must be positive");
}

double GaussianPairSpec::analytic_mi() const {
  validate();
  return -0.5 * static_cast<double>(dim) * std::log1p(-rho * rho);
}

GaussianPairs sample_gaussian_pairs(const GaussianPairSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("sample_gaussian_pairs: n must be positive");
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const double orth = std::sqrt(1.0 - spec.rho * spec.rho);
  GaussianPairs out{Tensor({n, spec.dim}), Tensor({n, spec.dim})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < spec.dim; ++k) {
      const double a = z(rng);
      const double b = z(rng);
      out.x.at(i, k) = a;
      out.y.at(i, k) = spec.rho * a + orth * b;
    }
  }
  return out;
}

std::array<std::size_t, kModalities> ConversationBatch::dims() const {
  std::array<std::size_t, kModalities> d{};
  for (std::size_t m = 0; m < kModalities; ++m) d[m] = features[m].cols();
  return d;
}

void ConversationBatch::validate() const {
  const std::size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("conversation '" + id + "' is empty");
  if (speaker_ids.size() != n) throw std::invalid_argument("conversation '" + id + "': speaker/label length mismatch");
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (features[m].rank() != 2 || features[m].rows() != n) {
      throw std::invalid_argument("conversation '" + id + "': " + kModalityNames[m] + " features have " +
                                  shape_to_string(features[m].shape()) + " for " + std::to_string(n) +
                                  " utterances");
    }
  }
}

void SynthWorldSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("SynthWorldSpec: num_classes must be at least 2");
  if (num_speakers == 0) throw std::invalid_argument("SynthWorldSpec: num_speakers must be positive");
  if (!(emotion_persistence >= 0.0 && emotion_persistence <= 1.0)) {
    throw std::invalid_argument("SynthWorldSpec: emotion_persistence must lie in [0, 1]");
  }
  if (shared_signal_dim == 0) throw std::invalid_argument("SynthWorldSpec: shared_signal_dim must be positive");
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (nuisance_dims[m] >= modality_dims[m]) {
      throw std::invalid_argument(std::string("SynthWorldSpec: ") + kModalityNames[m] +
                                  " needs at least one signal dimension");
    }
    if (noise_scales[m] < 0.0) throw std::invalid_argument("SynthWorldSpec: noise scales must be non-negative");
  }
  if (shared_noise < 0.0 || nuisance_scale < 0.0 || speaker_coupling < 0.0) {
    throw std::invalid_argument("SynthWorldSpec: scales must be non-negative");
  }
  if (min_length == 0 || min_length > max_length) {
    throw std::invalid_argument("SynthWorldSpec: need 0 < min_length <= max_length");
  }
}

std::vector<ConversationBatch> generate_conversations(const SynthWorldSpec& spec, std::size_t count,
                                                      std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const std::size_t C = spec.num_classes;
  const std::size_t S = spec.num_speakers;
  const std::size_t G = spec.shared_signal_dim;

  const Tensor shared_centres = normal_matrix(G, C, 1.0, rng);
  std::array<Tensor, kModalities> emotion, speaker, mixing;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const std::size_t sig = spec.modality_dims[m] - spec.nuisance_dims[m];
    emotion[m] = normal_matrix(sig, C, 1.0, rng);
    speaker[m] = normal_matrix(sig, S * C, 1.0, rng);
    mixing[m] = normal_matrix(sig, G, 1.0 / std::sqrt(static_cast<double>(G)), rng);
  }

  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> class_dist(0, C - 1);
  std::uniform_int_distribution<std::size_t> other_dist(0, C - 2);
  std::uniform_int_distribution<std::size_t> speaker_dist(0, S - 1);

  std::vector<ConversationBatch> out;
  out.reserve(count);
  std::vector<double> g(G);
  for (std::size_t k = 0; k < count; ++k) {
    ConversationBatch conv;
    conv.id = "synth_" + std::to_string(k);
    const std::size_t len = length_dist(rng);
    for (std::size_t m = 0; m < kModalities; ++m) conv.features[m] = Tensor({len, spec.modality_dims[m]});
    std::size_t emo = class_dist(rng);
    for (std::size_t t = 0; t < len; ++t) {
      if (t > 0 && u(rng) >= spec.emotion_persistence) {
        const std::size_t pick = other_dist(rng);
        emo = pick >= emo ? pick + 1 : pick;
      }
      const std::size_t spk = spec.speaker_pattern == SpeakerPattern::alternating ? t % S : speaker_dist(rng);
      conv.labels.push_back(emo);
      conv.speaker_ids.push_back(spk);
      for (std::size_t j = 0; j < G; ++j) g[j] = shared_centres.at(j, emo) + spec.shared_noise * z(rng);
      for (std::size_t m = 0; m < kModalities; ++m) {
        Tensor& f = conv.features[m];
        const std::size_t sig = spec.modality_dims[m] - spec.nuisance_dims[m];
        for (std::size_t d = 0; d < sig; ++d) {
          double v = emotion[m].at(d, emo) + spec.speaker_coupling * speaker[m].at(d, spk * C + emo);
          for (std::size_t j = 0; j < G; ++j) v += mixing[m].at(d, j) * g[j];
          f.at(t, d) = v + spec.noise_scales[m] * z(rng);
        }
        for (std::size_t d = sig; d < spec.modality_dims[m]; ++d) f.at(t, d) = spec.nuisance_scale * z(rng);
      }
    }
    out.push_back(std::move(conv));
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("'" + std::string(text) + "' is not a decimal number");
  }
  return value;
}

void save_feature_csv(const std::filesystem::path& path, const std::vector<ConversationBatch>& conversations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto dims = conversations.empty() ? std::array<std::size_t, kModalities>{} : conversations.front().dims();
  out << "conversation_id,utterance_index,speaker_id,label";
  for (std::size_t m = 0; m < kModalities; ++m)
    for (std::size_t d = 0; d < dims[m]; ++d) out << ',' << kCsvPrefix[m] << '_' << d;
  out << '\n';
  for (const auto& conv : conversations) {
    conv.validate();
    if (conv.dims() != dims) throw std::invalid_argument("save_feature_csv: conversations disagree on feature widths");
    if (conv.id.find_first_of(",\n\r") != std::string::npos || conv.id.empty()) {
      throw std::invalid_argument("save_feature_csv: conversation id '" + conv.id + "' is not CSV-safe");
    }
    for (std::size_t t = 0; t < conv.length(); ++t) {
      out << conv.id << ',' << t << ',' << conv.speaker_ids[t] << ',' << conv.labels[t];
      for (std::size_t m = 0; m < kModalities; ++m)
        for (std::size_t d = 0; d < dims[m]; ++d) out << ',' << format_double(conv.features[m].at(t, d));
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<ConversationBatch> load_feature_csv(const std::filesystem::path& path, const CsvLimits& limits) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<ConversationBatch> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_commas(line);
  const char* fixed[] = {"conversation_id", "utterance_index", "speaker_id", "label"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (header.size() <= i || header[i] != fixed[i]) {
      throw std::invalid_argument(line_error(1, std::string("missing column '") + fixed[i] + "'"));
    }
  }
  std::array<std::size_t, kModalities> dims{};
  std::size_t col = 4;
  for (std::size_t m = 0; m < kModalities; ++m) {
    while (col < header.size() && header[col] == std::string(1, kCsvPrefix[m]) + '_' + std::to_string(dims[m])) {
      ++dims[m];
      ++col;
    }
    if (dims[m] == 0) {
      throw std::invalid_argument(line_error(1, std::string("missing column '") + kCsvPrefix[m] + "_0'"));
    }
  }
  if (col != header.size()) {
    throw std::invalid_argument(line_error(1, "unexpected column '" + std::string(header[col]) + "'"));
  }

  std::vector<std::array<std::vector<double>, kModalities>> pending;
  auto finish = [&]() {
    if (out.empty() || pending.empty()) return;
    ConversationBatch& conv = out.back();
    const std::size_t n = pending.size();
    for (std::size_t m = 0; m < kModalities; ++m) {
      std::vector<double> flat;
      flat.reserve(n * dims[m]);
      for (const auto& row : pending) flat.insert(flat.end(), row[m].begin(), row[m].end());
      conv.features[m] = Tensor({n, dims[m]}, std::move(flat));
    }
    pending.clear();
  };

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument(line_error(line_no, "expected " + std::to_string(header.size()) +
                                                          " columns, found " + std::to_string(cells.size())));
    }
    const std::string id(cells[0]);
    if (id.empty()) throw std::invalid_argument(line_error(line_no, "empty conversation_id"));
    const std::size_t index = parse_index(cells[1], line_no, "utterance_index");
    const std::size_t speaker = parse_index(cells[2], line_no, "speaker_id");
    const std::size_t label = parse_index(cells[3], line_no, "label");
    if (speaker >= limits.num_speakers) {
      throw std::invalid_argument(line_error(line_no, "unknown speaker id " + std::to_string(speaker)));
    }
    if (label >= limits.num_classes) {
      throw std::invalid_argument(line_error(line_no, "label " + std::to_string(label) + " out of range"));
    }
    if (out.empty() || out.back().id != id) {
      finish();
      for (const auto& conv : out) {
        if (conv.id == id) throw std::invalid_argument(line_error(line_no, "conversation '" + id + "' is not contiguous"));
      }
      out.push_back(ConversationBatch{});
      out.back().id = id;
    }
    ConversationBatch& conv = out.back();
    if (index != conv.labels.size()) {
      throw std::invalid_argument(line_error(line_no, "utterance_index " + std::to_string(index) + ", expected " +
                                                          std::to_string(conv.labels.size())));
    }
    conv.speaker_ids.push_back(speaker);
    conv.labels.push_back(label);
    std::array<std::vector<double>, kModalities> row;
    std::size_t c = 4;
    for (std::size_t m = 0; m < kModalities; ++m) {
      row[m].reserve(dims[m]);
      for (std::size_t d = 0; d < dims[m]; ++d, ++c) {
        try {
          row[m].push_back(parse_double(cells[c]));
        } catch (const std::invalid_argument& e) {
          throw std::invalid_argument(line_error(line_no, "column " + std::string(header[c]) + ": " + e.what()));
        }
        if (!std::isfinite(row[m].back())) {
          throw std::invalid_argument(line_error(line_no, "column " + std::string(header[c]) + " is not finite"));
        }
      }
    }
    pending.push_back(std::move(row));
  }
  finish();
  return out;
}

}  // namespace mmmie
