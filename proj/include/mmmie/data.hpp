#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmmie/tensor.hpp"

namespace mmmie {

/// Modality slots, in the order used throughout: text, video, audio.
enum Modality : std::size_t { kText = 0, kVideo = 1, kAudio = 2 };
inline constexpr std::size_t kModalities = 3;
inline constexpr std::array<const char*, kModalities> kModalityNames = {"text", "video", "audio"};

struct GaussianPairSpec {
  double rho = 0.0;
  std::size_t dim = 1;

  void validate() const;
  /// -(dim / 2) ln(1 - rho^2), in nats.
  double analytic_mi() const;
};

struct GaussianPairs {
  Tensor x;  // [n x dim]
  Tensor y;  // [n x dim]
};

/// Coordinate k of (x, y) is a standard bivariate normal with correlation rho;
/// coordinates are independent of each other.
GaussianPairs sample_gaussian_pairs(const GaussianPairSpec& spec, std::size_t n, std::uint64_t seed);

/// One conversation: per-utterance features for every modality, speakers and labels.
/// Positions are implicit (0..length-1).
struct ConversationBatch {
  std::string id;
  std::array<Tensor, kModalities> features;  // [length x dim_m]
  std::vector<std::size_t> speaker_ids;
  std::vector<std::size_t> labels;

  std::size_t length() const { return labels.size(); }
  std::array<std::size_t, kModalities> dims() const;
  /// Throws std::invalid_argument when the four sequences disagree in length.
  void validate() const;
};

enum class SpeakerPattern { alternating, random };

struct SynthWorldSpec {
  std::size_t num_classes = 4;
  std::size_t num_speakers = 2;
  /// Probability that the latent emotion repeats; otherwise a different class is drawn uniformly.
  double emotion_persistence = 0.75;
  /// Total width per modality, nuisance dimensions included.
  std::array<std::size_t, kModalities> modality_dims{16, 16, 16};
  /// Trailing dimensions per modality that carry label-independent noise only.
  std::array<std::size_t, kModalities> nuisance_dims{8, 8, 8};
  double nuisance_scale = 3.0;
  /// Width of the emotion-dependent signal shared by all three modalities.
  std::size_t shared_signal_dim = 4;
  /// Spread of the shared signal around its class centre (one draw per utterance, seen by every modality).
  double shared_noise = 0.6;
  /// Modality-specific Gaussian noise on the signal dimensions.
  std::array<double, kModalities> noise_scales{2.6, 3.2, 3.0};
  /// Weight of the speaker-conditional emission offsets.
  double speaker_coupling = 1.5;
  SpeakerPattern speaker_pattern = SpeakerPattern::random;
  std::size_t min_length = 6;
  std::size_t max_length = 12;

  void validate() const;
};

/// Synthetic conversations. The emission matrices are drawn from `seed` first,
/// so conversations generated in one call share the same world.
std::vector<ConversationBatch> generate_conversations(const SynthWorldSpec& spec, std::size_t count,
                                                      std::uint64_t seed);

struct CsvLimits {
  std::size_t num_speakers = 2;
  std::size_t num_classes = 4;
};

/// Feature CSV: conversation_id, utterance_index, speaker_id, label, t_*, v_*, a_*.
/// Errors name the 1-based line number of the offending row.
std::vector<ConversationBatch> load_feature_csv(const std::filesystem::path& path, const CsvLimits& limits);
void save_feature_csv(const std::filesystem::path& path, const std::vector<ConversationBatch>& conversations);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
/// Strict parse of the whole string; throws std::invalid_argument otherwise.
double parse_double(std::string_view text);

}  // namespace mmmie
