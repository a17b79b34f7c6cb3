#include "mmmie/params.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mmmie {

void ParamSet::add(std::string name, Tensor value, std::string initializer) {
  if (entries_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  entries_.emplace(std::move(name), Entry{std::move(value), std::move(initializer)});
}

bool ParamSet::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

const ParamSet::Entry& ParamSet::entry(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

const Tensor& ParamSet::get(std::string_view name) const { return entry(name).value; }

const std::string& ParamSet::initializer(std::string_view name) const { return entry(name).initializer; }

void ParamSet::set(std::string_view name, Tensor value) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  if (it->second.value.shape() != value.shape()) {
    throw ShapeError("parameter " + std::string(name) + " has shape " + shape_to_string(it->second.value.shape()) +
                     ", cannot assign " + shape_to_string(value.shape()));
  }
  it->second.value = std::move(value);
}

std::span<double> ParamSet::values(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second.value.data();
}

void ParamSet::merge(std::string_view prefix, const ParamSet& other) {
  for (const auto& [name, e] : other.entries_) add(std::string(prefix) + name, e.value, e.initializer);
}

ParamSet ParamSet::subset(std::string_view prefix) const {
  ParamSet out;
  for (const auto& [name, e] : entries_) {
    if (name.starts_with(prefix)) out.add(name.substr(prefix.size()), e.value, e.initializer);
  }
  return out;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params, bool trainable) : tape_(&tape), trainable_(trainable) {
  for (const auto& name : params.names()) {
    const Tensor& v = params.get(name);
    vars_.emplace(name, trainable ? tape.variable(v) : tape.constant(v));
  }
}

BoundParams::BoundParams(Tape& tape, std::map<std::string, Var, std::less<>> vars, bool trainable)
    : tape_(&tape), trainable_(trainable), vars_(std::move(vars)) {}

Var BoundParams::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + std::string(name));
  return it->second;
}

Gradients BoundParams::gradients() const {
  Gradients out;
  for (const auto& [name, v] : vars_) {
    out.emplace(name, trainable_ && tape_->has_grad(v) ? tape_->grad(v) : Tensor(v.shape()));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'M', 'M', 'M', 'I', 'E', 'C', 'K', 'P'};

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_le<std::uint64_t>(in);
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint string length implausible");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_string(out, checkpoint.config_text);
  const auto names = checkpoint.params.names();
  write_le<std::uint64_t>(out, names.size());
  for (const auto& name : names) {
    const Tensor& t = checkpoint.params.get(name);
    write_string(out, name);
    write_string(out, checkpoint.params.initializer(name));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) write_le<std::uint64_t>(out, d);
    for (double v : t.data()) write_le<double>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.config_text = read_string(in);
  const auto count = read_le<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    std::string init = read_string(in);
    const auto rank = read_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = read_le<std::uint64_t>(in);
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = read_le<double>(in);
    cp.params.add(std::move(name), Tensor(std::move(shape), std::move(data)), std::move(init));
  }
  return cp;
}

}  // namespace mmmie
