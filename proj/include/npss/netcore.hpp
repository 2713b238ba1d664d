#pragma once

// Conditional dilated-convolution network over vocoder frames.
//
// The network runs over a sequence of *positions*. The input row at
// position p is [own frame p-1 | aux frames p] (aux streams are the
// upstream streams of the same frame), and the control row at p is the
// encoded linguistic context of frame p. Pre-sequence positions hold zero
// inputs and zero controls. Output at position p parameterizes frame p:
//
//   a0[p]   = b + sum_{j<taps} W_j in[p-j]                 (initial causal conv)
//   per layer with dilation d:
//     f     = Wf0 x[p] + Wf1 x[p-d] + Vf h[p] + bf
//     g     = Wg0 x[p] + Wg1 x[p-d] + Vg h[p] + bg
//     z     = tanh(f) * sigmoid(g)
//     x'[p] = x[p] + Wr z + br,    skip[p] += Ws z + bs
//   raw[p]  = Wo tanh(Wp skip[p] + Vo h[p] + bp) + bo
//
// Own frames therefore reach back receptive_field - 1 frames.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npss/features.hpp"

namespace npss {

struct NetConfig {
  std::size_t input_channels = 60;     // N, the stream's own channels
  std::size_t aux_input_channels = 0;  // upstream stream channels
  std::size_t initial_taps = 10;
  std::vector<std::size_t> dilations{1, 2, 4, 1, 2};
  std::size_t conv_channels = 100;
  std::size_t skip_channels = 240;
  std::size_t control_dim = 33;
  std::size_t output_channels = 240;  // 4N for mixture streams, 1 for V/UV

  std::size_t row_width() const noexcept { return input_channels + aux_input_channels; }
  std::size_t dilation_sum() const noexcept;
  /// Number of positions the network reads: receptive_field - 1.
  std::size_t window() const noexcept { return initial_taps + dilation_sum(); }
  /// Throws ConfigError.
  void validate() const;

  bool operator==(const NetConfig&) const = default;
};

/// 1 + initial_taps + sum(dilations): the predicted frame plus its context.
std::size_t receptive_field(const NetConfig& config);
std::size_t param_count(const NetConfig& config);

/// Per-stream architectures used for the full-size model.
NetConfig default_stream_config(StreamId stream, std::size_t control_dim);
/// Aux channels a stream consumes: none, harmonic, or harmonic + V/UV.
std::vector<StreamId> upstream_streams(StreamId stream);

/// Dense row-major matrix; weights are stored (in x out).
template <typename T>
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}
  bool empty() const noexcept { return data.empty(); }
  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  bool operator==(const Mat&) const = default;
};

template <typename T>
struct LayerParams {
  Mat<T> filter_w;  // (2C x C): rows [0,C) current tap, [C,2C) lag-d tap
  Mat<T> filter_b;
  Mat<T> gate_w;
  Mat<T> gate_b;
  Mat<T> filter_cond_w;  // (D x C)
  Mat<T> gate_cond_w;
  Mat<T> residual_w;  // (C x C)
  Mat<T> residual_b;
  Mat<T> skip_w;  // (C x S)
  Mat<T> skip_b;
  bool operator==(const LayerParams&) const = default;
};

template <typename T>
struct NetParamsT {
  Mat<T> input_w;      // (taps*N x C), block j multiplies own[p-1-j]
  Mat<T> input_aux_w;  // (taps*aux x C), absent when aux = 0
  Mat<T> input_b;
  std::vector<LayerParams<T>> layers;
  Mat<T> post_w;  // (S x S)
  Mat<T> post_b;
  Mat<T> out_cond_w;  // (D x S)
  Mat<T> final_w;     // (S x out)
  Mat<T> final_b;

  /// Visits every present tensor in canonical order with its name.
  void visit(const std::function<void(const std::string&, Mat<T>&)>& f);
  void visit(const std::function<void(const std::string&, const Mat<T>&)>& f) const;
  std::size_t scalar_count() const;
  void set_zero();
  bool all_finite() const;
  bool operator==(const NetParamsT&) const = default;
};

using NetParams = NetParamsT<float>;
using NetParams64 = NetParamsT<double>;

/// Zero tensors shaped for `config`.
template <typename T>
NetParamsT<T> zero_params(const NetConfig& config);

/// Uniform(-a, a) with a = sqrt(3 / fan_in) so Var = 1 / fan_in; biases zero.
NetParams init_params(const NetConfig& config, std::uint64_t seed);

template <typename To, typename From>
NetParamsT<To> convert_params(const NetParamsT<From>& p);

/// Throws DimensionError naming the first tensor whose shape disagrees.
template <typename T>
void check_shapes(const NetParamsT<T>& params, const NetConfig& config);

/// Cached values of a training-mode forward pass.
template <typename T>
struct Activations {
  std::size_t positions = 0;
  std::size_t first_output = 0;
  std::vector<T> inputs;    // P x row_width
  std::vector<T> controls;  // P x D
  std::vector<std::vector<T>> x;      // L+1 entries, P x C
  std::vector<std::vector<T>> tanh_f; // L entries, P x C
  std::vector<std::vector<T>> gate;   // L entries, P x C
  std::vector<std::vector<T>> z;      // L entries, P x C
  std::vector<T> skip;    // (P - first_output) x S
  std::vector<T> hidden;  // (P - first_output) x S, tanh output stage
};

/// Runs the network over `positions` rows of inputs/controls and returns raw
/// outputs for positions [first_output, positions), row-major. When `acts`
/// is non-null the intermediate values needed by backward() are kept.
template <typename T>
std::vector<T> forward_batch(const NetParamsT<T>& params, const NetConfig& config, std::span<const T> inputs,
                             std::span<const T> controls, std::size_t first_output,
                             Activations<T>* acts = nullptr);

/// Output for the last row of a window of receptive_field - 1 rows. Rows
/// before the start of the sequence must be zero (inputs and controls).
template <typename T>
std::vector<T> forward(const NetParamsT<T>& params, const NetConfig& config, std::span<const T> window_inputs,
                       std::span<const T> window_controls);

/// Accumulates d loss / d params into `grads` given d loss / d raw outputs
/// for positions [first_output, positions).
template <typename T>
void backward(const NetParamsT<T>& params, const NetConfig& config, const Activations<T>& acts,
              std::span<const T> grad_raw, NetParamsT<T>& grads);

// Per-position kernels shared by the batch and the incremental decoders.
// Each call computes one position of one stage with a fixed summation order.
namespace kernel {

/// out = b + sum_j W_j row_j over the taps (rows newest first; null = zero row).
template <typename T>
void input_conv(const NetParamsT<T>& p, const NetConfig& c, std::span<const T* const> rows, T* out);

/// One gated layer; writes the layer output into x_out and adds its skip
/// contribution into skip (when non-null). Optional buffers receive the
/// intermediates.
template <typename T>
void gated_layer(const LayerParams<T>& p, const NetConfig& c, const T* x_cur, const T* x_lag, const T* control,
                 T* x_out, T* skip, T* tanh_f = nullptr, T* gate = nullptr, T* z = nullptr);

/// Output stage; hidden (S) receives the tanh activations.
template <typename T>
void output_stage(const NetParamsT<T>& p, const NetConfig& c, const T* skip, const T* control, T* hidden, T* raw);

}  // namespace kernel

// Checkpoint container: magic "NPSW", version, stream name, tagged config,
// tensor table, optional extension sections and a trailing CRC32.
struct CheckpointSection {
  std::string tag;  // 4 characters
  std::vector<std::uint8_t> payload;
  bool operator==(const CheckpointSection&) const = default;
};

struct Checkpoint {
  std::string stream;
  NetConfig config;
  NetParams params;
  std::vector<CheckpointSection> sections;

  const CheckpointSection* find(std::string_view tag) const;
  void put(std::string tag, std::vector<std::uint8_t> payload);
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace npss
