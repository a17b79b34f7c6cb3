#include <charconv>
#include <type_traits>
#include <fstream>
#include <sstream>

#include "mmmie/training.hpp"

namespace mmmie {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format(double v) { return format_double(v); }
std::string format(std::size_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(SpeakerPattern p) { return p == SpeakerPattern::alternating ? "alternating" : "random"; }

void parse_into(std::string_view text, double& out) { out = parse_double(text); }

template <class Int>
  requires std::is_unsigned_v<Int>
void parse_into(std::string_view text, Int& out) {
  Int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(text) + "'");
  }
  out = value;
}

void parse_into(std::string_view text, bool& out) {
  if (text == "true" || text == "1" || text == "on") {
    out = true;
  } else if (text == "false" || text == "0" || text == "off") {
    out = false;
  } else {
    throw std::invalid_argument("expected true or false, got '" + std::string(text) + "'");
  }
}

void parse_into(std::string_view text, std::string& out) { out = std::string(text); }

void parse_into(std::string_view text, SpeakerPattern& out) {
  if (text == "alternating") {
    out = SpeakerPattern::alternating;
  } else if (text == "random") {
    out = SpeakerPattern::random;
  } else {
    throw std::invalid_argument("expected alternating or random, got '" + std::string(text) + "'");
  }
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <class Access>
Field field(std::string key, Access access) {
  return Field{std::move(key),
               [access](const RunConfig& c) { return format(access(const_cast<RunConfig&>(c))); },
               [access](RunConfig& c, std::string_view v) { parse_into(v, access(c)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(field("alpha", [](RunConfig& c) -> auto& { return c.alpha; }));
    f.push_back(field("beta", [](RunConfig& c) -> auto& { return c.beta; }));
    f.push_back(field("learning_rate", [](RunConfig& c) -> auto& { return c.learning_rate; }));
    f.push_back(field("batch_size", [](RunConfig& c) -> auto& { return c.batch_size; }));
    f.push_back(field("max_epochs", [](RunConfig& c) -> auto& { return c.max_epochs; }));
    f.push_back(field("seed", [](RunConfig& c) -> auto& { return c.seed; }));
    f.push_back(field("data_seed", [](RunConfig& c) -> auto& { return c.data_seed; }));
    f.push_back(field("embed_dim", [](RunConfig& c) -> auto& { return c.embed_dim; }));
    f.push_back(field("lstm_hidden", [](RunConfig& c) -> auto& { return c.lstm_hidden; }));
    f.push_back(field("fusion_hidden", [](RunConfig& c) -> auto& { return c.fusion_hidden; }));
    f.push_back(field("statistic_hidden", [](RunConfig& c) -> auto& { return c.statistic_hidden; }));
    f.push_back(field("variational_hidden", [](RunConfig& c) -> auto& { return c.variational_hidden; }));
    f.push_back(field("num_speakers", [](RunConfig& c) -> auto& { return c.num_speakers; }));
    f.push_back(field("num_classes", [](RunConfig& c) -> auto& { return c.num_classes; }));
    f.push_back(field("max_length", [](RunConfig& c) -> auto& { return c.max_length; }));
    f.push_back(field("mmax_on", [](RunConfig& c) -> auto& { return c.mmax_on; }));
    f.push_back(field("mmin_on", [](RunConfig& c) -> auto& { return c.mmin_on; }));
    f.push_back(field("ie_on", [](RunConfig& c) -> auto& { return c.ie_on; }));
    f.push_back(field("text_on", [](RunConfig& c) -> auto& { return c.modalities[kText]; }));
    f.push_back(field("video_on", [](RunConfig& c) -> auto& { return c.modalities[kVideo]; }));
    f.push_back(field("audio_on", [](RunConfig& c) -> auto& { return c.modalities[kAudio]; }));
    f.push_back(field("data_csv", [](RunConfig& c) -> auto& { return c.data_csv; }));
    f.push_back(field("conversations", [](RunConfig& c) -> auto& { return c.conversations; }));
    f.push_back(field("eval_fraction", [](RunConfig& c) -> auto& { return c.eval_fraction; }));
    f.push_back(field("q_warmup_steps", [](RunConfig& c) -> auto& { return c.q_warmup_steps; }));
    f.push_back(field("log_curves", [](RunConfig& c) -> auto& { return c.log_curves; }));
    f.push_back(field("curve_smoothing", [](RunConfig& c) -> auto& { return c.curve_smoothing; }));
    f.push_back(field("synth.emotion_persistence", [](RunConfig& c) -> auto& { return c.synth.emotion_persistence; }));
    f.push_back(field("synth.shared_signal_dim", [](RunConfig& c) -> auto& { return c.synth.shared_signal_dim; }));
    f.push_back(field("synth.shared_noise", [](RunConfig& c) -> auto& { return c.synth.shared_noise; }));
    f.push_back(field("synth.speaker_coupling", [](RunConfig& c) -> auto& { return c.synth.speaker_coupling; }));
    f.push_back(field("synth.speaker_pattern", [](RunConfig& c) -> auto& { return c.synth.speaker_pattern; }));
    f.push_back(field("synth.nuisance_scale", [](RunConfig& c) -> auto& { return c.synth.nuisance_scale; }));
    f.push_back(field("synth.min_length", [](RunConfig& c) -> auto& { return c.synth.min_length; }));
    f.push_back(field("synth.max_length", [](RunConfig& c) -> auto& { return c.synth.max_length; }));
    for (std::size_t m = 0; m < kModalities; ++m) {
      const std::string name = kModalityNames[m];
      f.push_back(field("synth.dim_" + name, [m](RunConfig& c) -> auto& { return c.synth.modality_dims[m]; }));
      f.push_back(field("synth.nuisance_" + name, [m](RunConfig& c) -> auto& { return c.synth.nuisance_dims[m]; }));
      f.push_back(field("synth.noise_" + name, [m](RunConfig& c) -> auto& { return c.synth.noise_scales[m]; }));
    }
    return f;
  }();
  return all;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void assign(RunConfig& config, std::string_view key, std::string_view value, std::size_t line) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError(line, std::string(key), "unknown key");
  try {
    f->set(config, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(line, std::string(key), e.what());
  }
}

}  // namespace

ConfigError::ConfigError(std::size_t line, std::string key, const std::string& message)
    : std::invalid_argument((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
                            (key.empty() ? std::string() : "key '" + key + "': ") + message),
      line_(line),
      key_(std::move(key)) {}

void RunConfig::validate() const {
  auto fail = [](const char* key, const char* msg) { throw ConfigError(0, key, msg); };
  if (!(alpha >= 0.0)) fail("alpha", "must be non-negative");
  if (!(beta >= 0.0)) fail("beta", "must be non-negative");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (embed_dim == 0 || lstm_hidden == 0 || fusion_hidden == 0 || statistic_hidden == 0 || variational_hidden == 0 ||
      max_length == 0) {
    fail("", "architecture sizes must be positive");
  }
  if (num_speakers == 0) fail("num_speakers", "must be positive");
  if (num_classes < 2) fail("num_classes", "must be at least 2");
  if (!(modalities[0] || modalities[1] || modalities[2])) fail("text_on", "at least one modality must be on");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) fail("eval_fraction", "must lie in (0, 1)");
  if (!(curve_smoothing >= 0.0 && curve_smoothing < 1.0)) fail("curve_smoothing", "must lie in [0, 1)");
  if (data_csv.empty() && conversations < 2) fail("conversations", "need at least two conversations");
}

ModelSpec RunConfig::model_spec(const std::array<std::size_t, kModalities>& input_dims) const {
  ModelSpec s;
  s.input_dims = input_dims;
  s.embed_dim = embed_dim;
  s.lstm_hidden = lstm_hidden;
  s.fusion_hidden = fusion_hidden;
  s.num_classes = num_classes;
  s.num_speakers = num_speakers;
  s.max_length = max_length;
  return s;
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  RunConfig config = base;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view body(raw);
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line, std::string(body), "expected key=value");
    assign(config, trim(body.substr(0, eq)), trim(body.substr(eq + 1)), line);
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), base);
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(0, assignment, "expected key=value");
  assign(config, trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)), 0);
}

std::string config_to_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace mmmie
