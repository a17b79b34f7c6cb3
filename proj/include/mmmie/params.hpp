#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mmmie/tape.hpp"

namespace mmmie {

/// Named trainable tensors. Names are unique and shapes are fixed at insertion.
class ParamSet {
 public:
  void add(std::string name, Tensor value, std::string initializer = "explicit");
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  /// Replaces values; the shape must match the registered one.
  void set(std::string_view name, Tensor value);
  /// Mutable view of the values; the shape cannot change through it.
  std::span<double> values(std::string_view name);
  const std::string& initializer(std::string_view name) const;

  /// Adds every entry of `other` under `prefix`.
  void merge(std::string_view prefix, const ParamSet& other);
  /// Entries whose names start with `prefix`, with the prefix removed.
  ParamSet subset(std::string_view prefix) const;

  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;
  bool empty() const noexcept { return entries_.empty(); }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  struct Entry {
    Tensor value;
    std::string initializer;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  const Entry& entry(std::string_view name) const;
  std::map<std::string, Entry, std::less<>> entries_;
};

/// Gradient tensors keyed by parameter name.
using Gradients = std::map<std::string, Tensor, std::less<>>;

/// A ParamSet recorded on a tape, either as gradient-carrying leaves or as constants.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape& tape, const ParamSet& params, bool trainable = true);
  /// Wraps already-recorded tensors, e.g. leaves created by a gradient checker.
  BoundParams(Tape& tape, std::map<std::string, Var, std::less<>> vars, bool trainable);

  Var operator[](std::string_view name) const;
  bool contains(std::string_view name) const { return vars_.find(name) != vars_.end(); }
  bool trainable() const noexcept { return trainable_; }
  Tape& tape() const { return *tape_; }

  /// Gradient of every bound parameter after tape.backward(); unreached ones are zero.
  Gradients gradients() const;

 private:
  Tape* tape_ = nullptr;
  bool trainable_ = true;
  std::map<std::string, Var, std::less<>> vars_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamSet params;
  /// Serialized run configuration stored alongside the weights.
  std::string config_text;
};

/// Binary container: magic, format version, config snapshot, then
/// (name, shape, little-endian float64 values) triples.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mmmie
