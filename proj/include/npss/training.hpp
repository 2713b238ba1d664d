#pragma once

// Denoising teacher-forced training of the per-stream networks.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npss/features.hpp"
#include "npss/netcore.hpp"
#include "npss/rng.hpp"

namespace npss {

/// Per-channel standardization. V/UV channels keep mean 0, std 1.
struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;

  std::size_t size() const noexcept { return mean.size(); }
  float normalize(std::size_t c, float v) const { return (v - mean[c]) / stddev[c]; }
  float denormalize(std::size_t c, float v) const { return v * stddev[c] + mean[c]; }
  bool operator==(const ChannelStats&) const = default;
};

ChannelStats compute_stats(const Corpus& corpus, StreamId stream, std::span<const std::size_t> utterances);

/// A trained (or initialized) network together with its input statistics.
/// input_stats covers the full input row: own channels, then aux channels
/// in upstream order.
struct StreamModel {
  StreamId stream = StreamId::harmonic;
  NetConfig config;
  NetParams params;
  ChannelStats input_stats;

  bool is_mixture() const noexcept { return stream != StreamId::vuv; }
  bool operator==(const StreamModel&) const = default;
};

Checkpoint to_checkpoint(const StreamModel& model);
StreamModel from_checkpoint(const Checkpoint& ckpt);

struct TrainConfig {
  double lambda = 0.05;  // corruption variance in standardized units
  double learning_rate = 5e-4;
  std::size_t batch_sequences = 16;
  std::size_t output_length = 210;
  std::size_t epochs = 1000;
  std::size_t patience = 50;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::array<NetConfig, 3> nets;  // indexed by StreamId

  NetConfig& net(StreamId s) { return nets[static_cast<std::size_t>(s)]; }
  const NetConfig& net(StreamId s) const { return nets[static_cast<std::size_t>(s)]; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// The full-size configuration for an alphabet of the given size.
TrainConfig default_train_config(std::size_t alphabet_size);

struct OptState {
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  NetParams m;
  NetParams v;
  bool operator==(const OptState&) const = default;
};

OptState make_opt_state(const NetConfig& config);

/// Bias-corrected Adam update of params in place.
void adam_step(OptState& state, NetParams& params, const NetParams& grads, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double seconds = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  double initial_val_nll = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  /// Equality ignoring wall-clock seconds.
  bool same_trajectory(const TrainHistory& other) const;
};

/// Adds i.i.d. N(0, lambda) noise to every value.
void corrupt_context(std::span<float> values, double lambda, Rng& rng);

/// Per-utterance training material for one stream, already standardized.
struct StreamSequences {
  std::size_t row_width = 0;
  std::size_t control_dim = 0;
  std::size_t target_dim = 0;
  std::size_t own_dim = 0;
  // Each utterance: rows[p] = [own[p-1] | aux[p]], zeros where p-1 < 0.
  std::vector<std::vector<float>> rows;
  std::vector<std::vector<float>> controls;
  std::vector<std::vector<float>> targets;  // standardized own frames (raw 0/1 for V/UV)
  std::vector<std::size_t> utterance_ids;

  std::size_t frames(std::size_t i) const { return targets[i].size() / target_dim; }
};

StreamSequences prepare_sequences(const Corpus& corpus, StreamId stream, std::span<const std::size_t> utterances,
                                  const ChannelStats& input_stats);

/// A run of output frames [start, start + length) of one prepared sequence.
struct TrainWindow {
  std::size_t sequence = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Cuts every sequence into consecutive windows of at most output_length.
std::vector<TrainWindow> make_windows(const StreamSequences& data, std::size_t output_length);

/// Network inputs for a window: receptive_field - 2 positions of left
/// context (zero before the sequence start) followed by the window. When
/// lambda > 0, noise is added to every value that comes from a real frame.
struct WindowInputs {
  std::vector<float> inputs;
  std::vector<float> controls;
  std::size_t first_output = 0;
};
WindowInputs build_window(const StreamSequences& data, const NetConfig& config, const TrainWindow& w, double lambda,
                          Rng& rng);

template <typename T>
struct BatchResultT {
  double loss = 0.0;      // mean NLL over frames x channels
  std::size_t items = 0;  // frames x channels
  NetParamsT<T> grads;
};
using BatchResult = BatchResultT<float>;

/// Teacher-forced NLL of the batch and its gradient. Sequence k of the batch
/// corrupts its context with Rng(derive_seed(noise_seed, k)). Throws
/// NumericError naming the utterance and frame of a non-finite loss.
BatchResult batch_loss(const NetParams& params, const NetConfig& config, bool mixture, const StreamSequences& data,
                       std::span<const TrainWindow> batch, double lambda, std::uint64_t noise_seed,
                       std::size_t threads = 1);
/// 64-bit variant for gradient checks.
BatchResultT<double> batch_loss(const NetParams64& params, const NetConfig& config, bool mixture,
                                const StreamSequences& data, std::span<const TrainWindow> batch, double lambda,
                                std::uint64_t noise_seed, std::size_t threads = 1);

/// Summed NLL over (frame, channel) heads of raw outputs. Mixture channel c
/// reads raw[4c .. 4c+3]. grad_raw (same layout as raw), when non-empty,
/// receives d(sum)/d raw.
template <typename T>
double head_nll(bool mixture, std::span<const T> raw, std::span<const float> targets, std::size_t channels,
                std::span<T> grad_raw);

/// Clean-context mean NLL over whole sequences.
double evaluate_nll(const NetParams& params, const NetConfig& config, bool mixture, const StreamSequences& data,
                    std::size_t threads = 1);

/// Everything needed to continue an interrupted training run.
struct TrainState {
  StreamModel model;  // current parameters
  OptState opt;
  TrainHistory history;
  NetParams best_params;
  std::size_t next_epoch = 0;
  std::size_t epochs_since_best = 0;
  bool finished = false;
};

std::vector<std::uint8_t> encode_train_state(const TrainState& state, const TrainConfig& config);
TrainState decode_train_state(std::span<const std::uint8_t> bytes);

struct TrainOptions {
  /// Stop after this many epochs in this call (simulated interruption).
  std::optional<std::size_t> stop_after;
  std::function<void(StreamId, const EpochRecord&)> on_epoch;
};

struct TrainResult {
  StreamModel best;
  TrainHistory history;
  TrainState state;
};

/// Trains one stream; `resume` continues a previous state.
TrainResult train_stream(const Corpus& corpus, StreamId stream, const TrainConfig& config,
                         const TrainOptions& options = {}, std::optional<TrainState> resume = std::nullopt);

/// Harmonic, then V/UV (aux harmonic), then aperiodic (aux harmonic + V/UV).
std::array<TrainResult, 3> train_all(const Corpus& corpus, const TrainConfig& config,
                                     const TrainOptions& options = {});

/// Key=value text of a TrainConfig (without per-stream nets).
std::string train_config_text(const TrainConfig& config);

}  // namespace npss
