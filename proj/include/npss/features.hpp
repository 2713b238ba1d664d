#pragma once

// Acoustic and linguistic data types, the linguistic encoder, the synthetic
// corpus generator and the on-disk feature/corpus formats.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace npss {

inline constexpr double kDefaultHopSeconds = 0.005;
inline constexpr std::string_view kSilence = "sil";

enum class StreamId : std::uint8_t { harmonic = 0, aperiodic = 1, vuv = 2 };
inline constexpr std::array<StreamId, 3> kAllStreams = {StreamId::harmonic, StreamId::aperiodic,
                                                        StreamId::vuv};

std::string_view stream_name(StreamId id);
/// Throws LookupError for unknown names.
StreamId stream_from_name(std::string_view name);
/// Channel count of a stream: 60 harmonic, 4 aperiodic, 1 V/UV.
std::size_t stream_dim(StreamId id);

/// Row-major sequence of fixed-width frames. One row is one FrameVector.
class FrameSeq {
 public:
  FrameSeq() = default;
  FrameSeq(std::size_t frames, std::size_t dim, float fill = 0.0f)
      : dim_(dim), values_(frames * dim, fill) {}
  FrameSeq(std::size_t dim, std::vector<float> values);

  std::size_t frames() const noexcept { return dim_ == 0 ? 0 : values_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<float> frame(std::size_t t) { return {values_.data() + t * dim_, dim_}; }
  std::span<const float> frame(std::size_t t) const { return {values_.data() + t * dim_, dim_}; }
  float& at(std::size_t t, std::size_t c) { return values_[t * dim_ + c]; }
  float at(std::size_t t, std::size_t c) const { return values_[t * dim_ + c]; }
  void push_back(std::span<const float> frame);

  std::vector<float>& values() noexcept { return values_; }
  const std::vector<float>& values() const noexcept { return values_; }

  bool operator==(const FrameSeq&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

class PhonemeAlphabet {
 public:
  PhonemeAlphabet() = default;
  explicit PhonemeAlphabet(std::vector<std::string> symbols);

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::string& symbol(std::size_t id) const { return symbols_.at(id); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  /// Throws LookupError naming the symbol.
  std::size_t index(std::string_view symbol) const;
  bool contains(std::string_view symbol) const;

  bool operator==(const PhonemeAlphabet&) const = default;

 private:
  std::vector<std::string> symbols_;
};

/// Triangular (linear B-spline) bases centered at 0, 0.5 and 1 with
/// half-width 0.5; outputs are a partition of unity.
std::array<float, 3> coarse_code_position(double p);

/// Width of an encoded control vector: three one-hot blocks plus position.
inline constexpr std::size_t control_dim(std::size_t alphabet_size) { return 3 * alphabet_size + 3; }

/// [prev one-hot | cur one-hot | next one-hot | coarse-coded position].
std::vector<float> encode_control(std::string_view prev, std::string_view cur, std::string_view next,
                                  double position, const PhonemeAlphabet& alphabet);

struct ControlTrack {
  std::size_t alphabet_size = 0;
  FrameSeq rows;  // dim == control_dim(alphabet_size)

  std::size_t frames() const noexcept { return rows.frames(); }
  bool operator==(const ControlTrack&) const = default;
};

struct StreamTrack {
  std::string name;
  FrameSeq frames;
  bool operator==(const StreamTrack&) const = default;
};

struct Utterance {
  double hop_seconds = kDefaultHopSeconds;
  std::vector<StreamTrack> streams;
  ControlTrack control;
  std::vector<std::uint16_t> labels;

  std::size_t length() const noexcept { return labels.size(); }
  bool has_stream(std::string_view name) const;
  const FrameSeq& stream(std::string_view name) const;
  const FrameSeq& stream(StreamId id) const { return stream(stream_name(id)); }
  /// Throws DimensionError if lengths disagree, DomainError on bad values.
  void validate() const;

  bool operator==(const Utterance&) const = default;
};

/// One phoneme of a score: symbol held for a number of frames.
struct PhoneSegment {
  std::string symbol;
  std::size_t frames = 0;
};

/// Control track plus per-frame label ids for a phone sequence. The frame
/// position inside a phone of n frames is (j + 0.5) / n; neighbours outside
/// the sequence are silence.
struct EncodedScore {
  ControlTrack control;
  std::vector<std::uint16_t> labels;
};
EncodedScore encode_score(std::span<const PhoneSegment> phones, const PhonemeAlphabet& alphabet);

/// Parses one `symbol duration_ms` pair per line; '#' starts a comment.
/// Durations are rounded to whole frames of `hop_seconds`.
std::vector<PhoneSegment> parse_phoneme_script(std::string_view text, double hop_seconds = kDefaultHopSeconds);

enum class Split : std::uint8_t { train, validation };
std::string_view split_name(Split s);

struct PhonemeTemplate {
  std::string symbol;
  bool voiced = false;
  std::vector<float> harmonic;
  std::vector<float> aperiodic;
  bool operator==(const PhonemeTemplate&) const = default;
};

struct Corpus {
  PhonemeAlphabet alphabet;
  std::vector<std::string> names;
  std::vector<Utterance> utterances;
  std::vector<Split> split;
  std::optional<std::vector<PhonemeTemplate>> generator_truth;

  std::vector<std::size_t> indices(Split s) const;
  /// Throws DimensionError / ConfigError when the invariants do not hold.
  void validate() const;
  bool operator==(const Corpus&) const = default;
};

struct SynthSpec {
  std::size_t num_phonemes = 10;  // including "sil"
  std::size_t num_utterances = 50;
  std::size_t min_phones = 6;  // per utterance, excluding the framing silences
  std::size_t max_phones = 12;
  std::size_t min_phone_frames = 16;
  std::size_t max_phone_frames = 48;
  std::size_t min_sil_frames = 12;
  std::size_t max_sil_frames = 30;
  std::size_t crossfade_frames = 4;
  std::size_t template_cutoff = 6;  // number of cosine components kept
  double noise_level = 0.5;         // harmonic AR noise std (dB); aperiodic uses half
  double noise_ar = 0.9;
  double validation_fraction = 0.1;
  double hop_seconds = kDefaultHopSeconds;

  bool operator==(const SynthSpec&) const = default;
};

/// Every symbol after "sil" alternates voiced/unvoiced starting with voiced.
bool synthetic_symbol_voiced(std::size_t symbol_id);

Corpus gen_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed);

// Feature file (one utterance).
std::vector<std::uint8_t> encode_features(const Utterance& u);
Utterance decode_features(std::span<const std::uint8_t> bytes);
void write_features(const Utterance& u, const std::filesystem::path& path);
Utterance read_features(const std::filesystem::path& path);

// Corpus directory: manifest.txt, alphabet.txt, optional generator_truth.txt.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Index of the template nearest (Euclidean) to a harmonic frame.
std::size_t nearest_template(std::span<const PhonemeTemplate> templates, std::span<const float> harmonic);

}  // namespace npss
