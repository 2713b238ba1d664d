#pragma once

// Autoregressive synthesis: the naive reference decoder, the cached decoder
// and the lock-step three-stream pipeline.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npss/cgm.hpp"
#include "npss/features.hpp"
#include "npss/netcore.hpp"
#include "npss/training.hpp"

namespace npss {

/// Incremental decoder state. Holds the last `initial_taps` input rows and,
/// per layer, the last `dilation` layer inputs. Layer rings start out filled
/// with the activations the network produces for an all-zero past. The
/// referenced params must outlive the state.
class GenState {
 public:
  GenState(const NetParams& params, const NetConfig& config);

  /// Consumes the input and control rows of the next position and returns
  /// its raw outputs (valid until the next call).
  std::span<const float> step(std::span<const float> input_row, std::span<const float> control_row);

  std::size_t frames() const noexcept { return frames_; }
  std::size_t input_capacity() const noexcept { return config_->initial_taps; }
  std::size_t input_occupancy() const noexcept { return std::min(frames_, input_capacity()); }
  std::size_t layer_capacity(std::size_t l) const { return config_->dilations.at(l); }
  std::size_t layer_occupancy(std::size_t l) const { return std::min(frames_, layer_capacity(l)); }

  /// When enabled, accumulates seconds per stage: input conv, each layer,
  /// output stage.
  void enable_timing(bool on);
  const std::vector<double>& stage_seconds() const noexcept { return stage_seconds_; }

 private:
  const NetParams* params_;
  const NetConfig* config_;
  std::size_t frames_ = 0;
  std::vector<float> input_ring_;  // taps x row_width
  std::vector<const float*> row_ptrs_;
  std::vector<std::vector<float>> layer_ring_;  // per layer, d x C
  std::vector<float> x_, x_next_, skip_, hidden_, raw_;
  bool timing_ = false;
  std::vector<double> stage_seconds_;
};

enum class DecodeMode { naive, cached };

/// Random choices of one frame. Mixture streams store one Draw per channel;
/// V/UV stores the decision in `value` and the probability in `uniform`.
struct FrameTrace {
  std::vector<cgm::Draw> draws;
};

struct StreamOutput {
  FrameSeq frames;  // de-standardized
  std::vector<FrameTrace> trace;
};

/// Seed of the generator used for stream `s` at frame t.
std::uint64_t frame_seed(std::uint64_t seed, StreamId s, std::size_t t);

/// Generates one stream. `aux` holds the upstream streams' frames (raw
/// units, concatenated in upstream order); it must be empty for harmonic.
StreamOutput generate_stream(const StreamModel& model, const ControlTrack& control, const FrameSeq& aux, double tau,
                             std::uint64_t seed, DecodeMode mode);

/// Rebuilds the full window each frame and runs the whole network.
StreamOutput generate_naive(const StreamModel& model, const ControlTrack& control, double tau, std::uint64_t seed,
                            const FrameSeq& aux = {});
StreamOutput generate_cached(const StreamModel& model, const ControlTrack& control, double tau, std::uint64_t seed,
                             const FrameSeq& aux = {});

struct Temperatures {
  double harmonic = 0.5;
  double aperiodic = 0.5;
  double vuv = 0.0;
  double of(StreamId s) const;
  bool operator==(const Temperatures&) const = default;
};

/// Harmonic, V/UV and aperiodic decoders advance together frame by frame;
/// downstream nets consume the sampled upstream frames. `models` is indexed
/// by StreamId.
Utterance generate_multistream(const std::array<StreamModel, 3>& models, const ControlTrack& control,
                               const Temperatures& tau, std::uint64_t seed, DecodeMode mode = DecodeMode::cached,
                               std::array<std::vector<FrameTrace>, 3>* traces = nullptr);

/// Per-frame label ids read back from the current-phoneme block of a control track.
std::vector<std::uint16_t> labels_from_control(const ControlTrack& control);

struct BenchResult {
  DecodeMode mode = DecodeMode::cached;
  std::size_t frames = 0;
  std::size_t repeats = 0;
  double median_seconds = 0.0;
  double frames_per_second = 0.0;
  double realtime_factor = 0.0;           // frames_per_second * hop
  std::vector<double> stage_seconds;      // cached only: per-frame seconds per stage
};

/// Times generation of n_frames (>= 100) over `repeats` runs; reports the median.
BenchResult bench_generation(const StreamModel& model, std::size_t n_frames, DecodeMode mode, std::size_t repeats,
                             std::uint64_t seed = 1);

}  // namespace npss
