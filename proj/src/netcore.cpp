#include "npss/netcore.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "npss/binio.hpp"
#include "npss/errors.hpp"
#include "npss/rng.hpp"

namespace npss {

std::size_t NetConfig::dilation_sum() const noexcept {
  return std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
}

void NetConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("NetConfig.") + name + " must be positive");
  };
  positive(input_channels, "input_channels");
  positive(initial_taps, "initial_taps");
  positive(conv_channels, "conv_channels");
  positive(skip_channels, "skip_channels");
  positive(control_dim, "control_dim");
  positive(output_channels, "output_channels");
  if (dilations.empty()) throw ConfigError("NetConfig.dilations must be non-empty");
  for (auto d : dilations) positive(d, "dilations[]");
}

std::size_t receptive_field(const NetConfig& config) { return 1 + config.initial_taps + config.dilation_sum(); }

std::size_t param_count(const NetConfig& c) {
  const std::size_t C = c.conv_channels, S = c.skip_channels, D = c.control_dim;
  std::size_t n = c.initial_taps * c.row_width() * C + C;
  const std::size_t per_layer = 2 * (2 * C * C + C)  // filter, gate
                                + 2 * D * C          // conditioning
                                + (C * C + C)        // residual
                                + (C * S + S);       // skip
  n += per_layer * c.dilations.size();
  n += S * S + S + D * S + S * c.output_channels + c.output_channels;
  return n;
}

NetConfig default_stream_config(StreamId stream, std::size_t control_dim) {
  NetConfig c;
  c.control_dim = control_dim;
  c.input_channels = stream_dim(stream);
  for (StreamId up : upstream_streams(stream)) c.aux_input_channels += stream_dim(up);
  switch (stream) {
    case StreamId::harmonic:
      c.conv_channels = 100, c.skip_channels = 240;
      break;
    case StreamId::aperiodic:
      c.conv_channels = 20, c.skip_channels = 20;
      break;
    case StreamId::vuv:
      c.conv_channels = 20, c.skip_channels = 4;
      break;
  }
  c.output_channels = stream == StreamId::vuv ? 1 : 4 * c.input_channels;
  return c;
}

std::vector<StreamId> upstream_streams(StreamId stream) {
  switch (stream) {
    case StreamId::harmonic: return {};
    case StreamId::vuv: return {StreamId::harmonic};
    case StreamId::aperiodic: return {StreamId::harmonic, StreamId::vuv};
  }
  return {};
}

template <typename T>
void NetParamsT<T>::visit(const std::function<void(const std::string&, Mat<T>&)>& f) {
  f("input.w", input_w);
  if (!input_aux_w.empty()) f("input_aux.w", input_aux_w);
  f("input.b", input_b);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    f(p + "filter.w", l.filter_w);
    f(p + "filter.b", l.filter_b);
    f(p + "gate.w", l.gate_w);
    f(p + "gate.b", l.gate_b);
    f(p + "filter_cond.w", l.filter_cond_w);
    f(p + "gate_cond.w", l.gate_cond_w);
    f(p + "residual.w", l.residual_w);
    f(p + "residual.b", l.residual_b);
    f(p + "skip.w", l.skip_w);
    f(p + "skip.b", l.skip_b);
  }
  f("post.w", post_w);
  f("post.b", post_b);
  f("out_cond.w", out_cond_w);
  f("final.w", final_w);
  f("final.b", final_b);
}

template <typename T>
void NetParamsT<T>::visit(const std::function<void(const std::string&, const Mat<T>&)>& f) const {
  const_cast<NetParamsT<T>*>(this)->visit([&](const std::string& name, Mat<T>& m) { f(name, m); });
}

template <typename T>
std::size_t NetParamsT<T>::scalar_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Mat<T>& m) { n += m.data.size(); });
  return n;
}

template <typename T>
void NetParamsT<T>::set_zero() {
  visit([](const std::string&, Mat<T>& m) { std::fill(m.data.begin(), m.data.end(), T(0)); });
}

template <typename T>
bool NetParamsT<T>::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Mat<T>& m) {
    ok = ok && std::all_of(m.data.begin(), m.data.end(), [](T v) { return std::isfinite(v); });
  });
  return ok;
}

template <typename T>
NetParamsT<T> zero_params(const NetConfig& c) {
  c.validate();
  const std::size_t C = c.conv_channels, S = c.skip_channels, D = c.control_dim;
  NetParamsT<T> p;
  p.input_w = Mat<T>(c.initial_taps * c.input_channels, C);
  if (c.aux_input_channels > 0) p.input_aux_w = Mat<T>(c.initial_taps * c.aux_input_channels, C);
  p.input_b = Mat<T>(1, C);
  p.layers.resize(c.dilations.size());
  for (auto& l : p.layers) {
    l.filter_w = Mat<T>(2 * C, C);
    l.filter_b = Mat<T>(1, C);
    l.gate_w = Mat<T>(2 * C, C);
    l.gate_b = Mat<T>(1, C);
    l.filter_cond_w = Mat<T>(D, C);
    l.gate_cond_w = Mat<T>(D, C);
    l.residual_w = Mat<T>(C, C);
    l.residual_b = Mat<T>(1, C);
    l.skip_w = Mat<T>(C, S);
    l.skip_b = Mat<T>(1, S);
  }
  p.post_w = Mat<T>(S, S);
  p.post_b = Mat<T>(1, S);
  p.out_cond_w = Mat<T>(D, S);
  p.final_w = Mat<T>(S, c.output_channels);
  p.final_b = Mat<T>(1, c.output_channels);
  return p;
}

namespace {

std::size_t fan_in(const std::string& name, const NetConfig& c) {
  auto ends = [&](std::string_view suffix) { return name.ends_with(suffix); };
  if (name == "input.w" || name == "input_aux.w") return c.initial_taps * c.row_width();
  if (ends("filter.w") || ends("gate.w")) return 2 * c.conv_channels;
  if (ends("_cond.w")) return c.control_dim;
  if (ends("residual.w") || ends("skip.w")) return c.conv_channels;
  if (name == "post.w" || name == "final.w") return c.skip_channels;
  return 0;
}

}  // namespace

NetParams init_params(const NetConfig& config, std::uint64_t seed) {
  auto p = zero_params<float>(config);
  std::size_t index = 0;
  p.visit([&](const std::string& name, Mat<float>& m) {
    const std::size_t fan = fan_in(name, config);
    ++index;
    if (fan == 0) return;  // bias
    Rng rng(derive_seed(seed, index));
    const double a = std::sqrt(3.0 / static_cast<double>(fan));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : m.data) v = static_cast<float>(dist(rng));
  });
  return p;
}

template <typename To, typename From>
NetParamsT<To> convert_params(const NetParamsT<From>& p) {
  auto conv = [](const Mat<From>& m) {
    Mat<To> out;
    out.rows = m.rows, out.cols = m.cols;
    out.data.assign(m.data.begin(), m.data.end());
    return out;
  };
  NetParamsT<To> out;
  out.input_w = conv(p.input_w);
  out.input_aux_w = conv(p.input_aux_w);
  out.input_b = conv(p.input_b);
  for (const auto& l : p.layers) {
    out.layers.push_back({conv(l.filter_w), conv(l.filter_b), conv(l.gate_w), conv(l.gate_b), conv(l.filter_cond_w),
                          conv(l.gate_cond_w), conv(l.residual_w), conv(l.residual_b), conv(l.skip_w),
                          conv(l.skip_b)});
  }
  out.post_w = conv(p.post_w);
  out.post_b = conv(p.post_b);
  out.out_cond_w = conv(p.out_cond_w);
  out.final_w = conv(p.final_w);
  out.final_b = conv(p.final_b);
  return out;
}

template <typename T>
void check_shapes(const NetParamsT<T>& params, const NetConfig& config) {
  auto expected = zero_params<T>(config);
  if (params.layers.size() != expected.layers.size())
    throw DimensionError("params have " + std::to_string(params.layers.size()) + " layers, config expects " +
                         std::to_string(expected.layers.size()));
  if (params.input_aux_w.empty() != expected.input_aux_w.empty())
    throw DimensionError("tensor input_aux.w presence disagrees with aux_input_channels");
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  expected.visit([&](const std::string&, const Mat<T>& m) { shapes.emplace_back(m.rows, m.cols); });
  std::size_t i = 0;
  params.visit([&](const std::string& name, const Mat<T>& m) {
    const auto [r, c] = shapes.at(i++);
    if (m.rows != r || m.cols != c || m.data.size() != r * c)
      throw DimensionError("tensor " + name + " has shape " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                           ", expected " + std::to_string(r) + "x" + std::to_string(c));
  });
}

// ---------------------------------------------------------------------------
// Per-position kernels.

namespace kernel {
namespace {

// out[o] += sum_k x[k] * W[row_offset + k][o], k ascending. Zero inputs are
// skipped (one-hot controls, padding rows).
template <typename T>
void accumulate(T* __restrict out, const Mat<T>& W, std::size_t row_offset, const T* __restrict x, std::size_t n) {
  const std::size_t cols = W.cols;
  for (std::size_t k = 0; k < n; ++k) {
    const T xk = x[k];
    if (xk == T(0)) continue;
    const T* __restrict w = W.row(row_offset + k);
    for (std::size_t o = 0; o < cols; ++o) out[o] += xk * w[o];
  }
}

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
std::vector<T>& scratch(std::size_t slot, std::size_t n) {
  thread_local std::vector<T> buffers[4];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b;
}

}  // namespace

template <typename T>
void input_conv(const NetParamsT<T>& p, const NetConfig& c, std::span<const T* const> rows, T* out) {
  const std::size_t C = c.conv_channels, N = c.input_channels, A = c.aux_input_channels;
  std::copy_n(p.input_b.data.data(), C, out);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const T* row = rows[j];
    if (row == nullptr) continue;
    accumulate(out, p.input_w, j * N, row, N);
    if (A > 0) accumulate(out, p.input_aux_w, j * A, row + N, A);
  }
}

template <typename T>
void gated_layer(const LayerParams<T>& p, const NetConfig& c, const T* x_cur, const T* x_lag, const T* control,
                 T* x_out, T* skip, T* tanh_f, T* gate, T* z_out) {
  const std::size_t C = c.conv_channels, S = c.skip_channels, D = c.control_dim;
  auto& f = scratch<T>(0, C);
  auto& g = scratch<T>(1, C);
  auto& z = scratch<T>(2, C);
  auto& tmp = scratch<T>(3, std::max(C, S));
  std::copy_n(p.filter_b.data.data(), C, f.data());
  std::copy_n(p.gate_b.data.data(), C, g.data());
  accumulate(f.data(), p.filter_w, 0, x_cur, C);
  accumulate(g.data(), p.gate_w, 0, x_cur, C);
  if (x_lag != nullptr) {
    accumulate(f.data(), p.filter_w, C, x_lag, C);
    accumulate(g.data(), p.gate_w, C, x_lag, C);
  }
  accumulate(f.data(), p.filter_cond_w, 0, control, D);
  accumulate(g.data(), p.gate_cond_w, 0, control, D);
  for (std::size_t o = 0; o < C; ++o) {
    const T t = std::tanh(f[o]);
    const T s = sigmoid(g[o]);
    z[o] = t * s;
    if (tanh_f) tanh_f[o] = t;
    if (gate) gate[o] = s;
  }
  if (z_out) std::copy_n(z.data(), C, z_out);

  std::copy_n(p.residual_b.data.data(), C, tmp.data());
  accumulate(tmp.data(), p.residual_w, 0, z.data(), C);
  for (std::size_t o = 0; o < C; ++o) x_out[o] = x_cur[o] + tmp[o];

  if (skip != nullptr) {
    std::copy_n(p.skip_b.data.data(), S, tmp.data());
    accumulate(tmp.data(), p.skip_w, 0, z.data(), C);
    for (std::size_t o = 0; o < S; ++o) skip[o] += tmp[o];
  }
}

template <typename T>
void output_stage(const NetParamsT<T>& p, const NetConfig& c, const T* skip, const T* control, T* hidden, T* raw) {
  const std::size_t S = c.skip_channels, D = c.control_dim, O = c.output_channels;
  std::copy_n(p.post_b.data.data(), S, hidden);
  accumulate(hidden, p.post_w, 0, skip, S);
  accumulate(hidden, p.out_cond_w, 0, control, D);
  for (std::size_t o = 0; o < S; ++o) hidden[o] = std::tanh(hidden[o]);
  std::copy_n(p.final_b.data.data(), O, raw);
  accumulate(raw, p.final_w, 0, hidden, S);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Batch forward / backward.

template <typename T>
std::vector<T> forward_batch(const NetParamsT<T>& params, const NetConfig& c, std::span<const T> inputs,
                             std::span<const T> controls, std::size_t first_output, Activations<T>* acts) {
  const std::size_t W = c.row_width(), D = c.control_dim, C = c.conv_channels, S = c.skip_channels,
                    O = c.output_channels;
  if (inputs.size() % W != 0)
    throw DimensionError("inputs: size " + std::to_string(inputs.size()) + " not a multiple of row width " +
                         std::to_string(W));
  const std::size_t P = inputs.size() / W;
  if (controls.size() != P * D)
    throw DimensionError("controls: expected " + std::to_string(P * D) + " values, got " +
                         std::to_string(controls.size()));
  if (first_output > P) throw DimensionError("first_output beyond sequence length");
  const std::size_t taps = c.initial_taps, L = c.dilations.size(), PO = P - first_output;

  std::vector<std::vector<T>> xs;
  xs.reserve(acts ? L + 1 : 2);
  xs.emplace_back(P * C);
  {
    std::vector<const T*> rows(taps);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t j = 0; j < taps; ++j) rows[j] = p >= j ? inputs.data() + (p - j) * W : nullptr;
      kernel::input_conv<T>(params, c, rows, xs[0].data() + p * C);
    }
  }

  std::vector<T> skip(PO * S, T(0));
  if (acts) {
    acts->positions = P;
    acts->first_output = first_output;
    acts->tanh_f.assign(L, std::vector<T>(P * C));
    acts->gate.assign(L, std::vector<T>(P * C));
    acts->z.assign(L, std::vector<T>(P * C));
  }
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t d = c.dilations[l];
    std::vector<T> next(P * C);
    const auto& cur = xs.back();
    for (std::size_t p = 0; p < P; ++p) {
      const T* lag = p >= d ? cur.data() + (p - d) * C : nullptr;
      T* sk = p >= first_output ? skip.data() + (p - first_output) * S : nullptr;
      kernel::gated_layer<T>(params.layers[l], c, cur.data() + p * C, lag, controls.data() + p * D,
                             next.data() + p * C, sk, acts ? acts->tanh_f[l].data() + p * C : nullptr,
                             acts ? acts->gate[l].data() + p * C : nullptr, acts ? acts->z[l].data() + p * C : nullptr);
    }
    if (acts) {
      xs.push_back(std::move(next));
    } else {
      xs.back() = std::move(next);
    }
  }

  std::vector<T> raw(PO * O);
  std::vector<T> hidden(PO * S);
  for (std::size_t q = 0; q < PO; ++q) {
    kernel::output_stage<T>(params, c, skip.data() + q * S, controls.data() + (first_output + q) * D,
                            hidden.data() + q * S, raw.data() + q * O);
  }
  if (acts) {
    acts->inputs.assign(inputs.begin(), inputs.end());
    acts->controls.assign(controls.begin(), controls.end());
    acts->x = std::move(xs);
    acts->skip = std::move(skip);
    acts->hidden = std::move(hidden);
  }
  return raw;
}

template <typename T>
std::vector<T> forward(const NetParamsT<T>& params, const NetConfig& c, std::span<const T> window_inputs,
                       std::span<const T> window_controls) {
  const std::size_t rows = c.window();
  if (window_inputs.size() != rows * c.row_width())
    throw DimensionError("context window: expected " + std::to_string(rows) + " rows of " +
                         std::to_string(c.row_width()) + " values");
  if (window_controls.size() != rows * c.control_dim)
    throw DimensionError("control window: expected " + std::to_string(rows) + " rows of " +
                         std::to_string(c.control_dim) + " values");
  // The naive evaluation: the whole network over the full window, keeping
  // only the newest output.
  auto raw = forward_batch<T>(params, c, window_inputs, window_controls, 0);
  return {raw.end() - static_cast<std::ptrdiff_t>(c.output_channels), raw.end()};
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
MapM<T> as_map(Mat<T>& m) {
  return MapM<T>(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}
template <typename T>
MapC<T> as_map(const Mat<T>& m) {
  return MapC<T>(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}
template <typename T>
MapC<T> as_map(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MapC<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
void add_colsum(Mat<T>& bias, const RowMat<T>& g) {
  as_map(bias).row(0) += g.colwise().sum();
}

}  // namespace

template <typename T>
void backward(const NetParamsT<T>& params, const NetConfig& c, const Activations<T>& acts, std::span<const T> grad_raw,
              NetParamsT<T>& grads) {
  if (acts.x.empty() || acts.positions == 0)
    throw StateError("backward needs activations from a training-mode forward pass");
  using Eigen::Index;
  const std::size_t P = acts.positions, F = acts.first_output, PO = P - F;
  const std::size_t C = c.conv_channels, S = c.skip_channels, D = c.control_dim, O = c.output_channels,
                    N = c.input_channels, A = c.aux_input_channels, W = c.row_width();
  if (grad_raw.size() != PO * O)
    throw DimensionError("grad_raw: expected " + std::to_string(PO * O) + " values, got " +
                         std::to_string(grad_raw.size()));
  const Index iP = Index(P), iPO = Index(PO);

  MapC<T> dRaw(grad_raw.data(), iPO, Index(O));
  auto H = as_map(acts.controls, P, D);
  auto Hout = H.bottomRows(iPO);
  auto hidden = as_map(acts.hidden, PO, S);
  auto skip = as_map(acts.skip, PO, S);

  // Output stage.
  as_map(grads.final_w).noalias() += hidden.transpose() * dRaw;
  add_colsum(grads.final_b, RowMat<T>(dRaw));
  RowMat<T> dQ = dRaw * as_map(params.final_w).transpose();
  dQ.array() *= (T(1) - hidden.array().square());
  as_map(grads.post_w).noalias() += skip.transpose() * dQ;
  as_map(grads.out_cond_w).noalias() += Hout.transpose() * dQ;
  add_colsum(grads.post_b, dQ);
  const RowMat<T> dSkip = dQ * as_map(params.post_w).transpose();

  // Gated layers, last to first. dX holds d loss / d x_{l+1}.
  RowMat<T> dX = RowMat<T>::Zero(iP, Index(C));
  for (std::size_t li = c.dilations.size(); li-- > 0;) {
    const auto& lp = params.layers[li];
    auto& lg = grads.layers[li];
    const Index d = Index(c.dilations[li]);
    auto X = as_map(acts.x[li], P, C);
    auto Tf = as_map(acts.tanh_f[li], P, C);
    auto G = as_map(acts.gate[li], P, C);
    auto Z = as_map(acts.z[li], P, C);

    RowMat<T> dZ = dX * as_map(lp.residual_w).transpose();
    dZ.bottomRows(iPO).noalias() += dSkip * as_map(lp.skip_w).transpose();
    as_map(lg.residual_w).noalias() += Z.transpose() * dX;
    add_colsum(lg.residual_b, dX);
    as_map(lg.skip_w).noalias() += Z.bottomRows(iPO).transpose() * dSkip;
    add_colsum(lg.skip_b, dSkip);

    RowMat<T> dF = (dZ.array() * G.array() * (T(1) - Tf.array().square())).matrix();
    RowMat<T> dG = (dZ.array() * Tf.array() * G.array() * (T(1) - G.array())).matrix();

    auto Wf = as_map(lp.filter_w);
    auto Wg = as_map(lp.gate_w);
    auto dWf = as_map(lg.filter_w);
    auto dWg = as_map(lg.gate_w);
    const Index iC = Index(C);
    dWf.topRows(iC).noalias() += X.transpose() * dF;
    dWg.topRows(iC).noalias() += X.transpose() * dG;
    if (iP > d) {
      dWf.bottomRows(iC).noalias() += X.topRows(iP - d).transpose() * dF.bottomRows(iP - d);
      dWg.bottomRows(iC).noalias() += X.topRows(iP - d).transpose() * dG.bottomRows(iP - d);
    }
    as_map(lg.filter_cond_w).noalias() += H.transpose() * dF;
    as_map(lg.gate_cond_w).noalias() += H.transpose() * dG;
    add_colsum(lg.filter_b, dF);
    add_colsum(lg.gate_b, dG);

    // Residual identity plus both taps.
    dX.noalias() += dF * Wf.topRows(iC).transpose();
    dX.noalias() += dG * Wg.topRows(iC).transpose();
    if (iP > d) {
      dX.topRows(iP - d).noalias() += dF.bottomRows(iP - d) * Wf.bottomRows(iC).transpose();
      dX.topRows(iP - d).noalias() += dG.bottomRows(iP - d) * Wg.bottomRows(iC).transpose();
    }
  }

  // Initial causal convolution.
  add_colsum(grads.input_b, dX);
  auto U = as_map(acts.inputs, P, W);
  auto dWin = as_map(grads.input_w);
  for (std::size_t j = 0; j < c.initial_taps && j < P; ++j) {
    const Index n = iP - Index(j);
    dWin.middleRows(Index(j * N), Index(N)).noalias() +=
        U.topRows(n).leftCols(Index(N)).transpose() * dX.bottomRows(n);
    if (A > 0) {
      as_map(grads.input_aux_w).middleRows(Index(j * A), Index(A)).noalias() +=
          U.topRows(n).rightCols(Index(A)).transpose() * dX.bottomRows(n);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container.

namespace {

constexpr std::string_view kCheckpointMagic = "NPSW";
constexpr std::uint32_t kCheckpointVersion = 1;

void write_config(binio::ByteWriter& w, const NetConfig& c) {
  const std::pair<const char*, std::size_t> scalars[] = {
      {"input_channels", c.input_channels}, {"aux_input_channels", c.aux_input_channels},
      {"initial_taps", c.initial_taps},     {"conv_channels", c.conv_channels},
      {"skip_channels", c.skip_channels},   {"control_dim", c.control_dim},
      {"output_channels", c.output_channels}};
  w.u32(static_cast<std::uint32_t>(std::size(scalars) + 1));
  for (const auto& [key, value] : scalars) {
    w.short_string(key);
    w.u8(0);
    w.u64(value);
  }
  w.short_string("dilations");
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(c.dilations.size()));
  for (auto d : c.dilations) w.u64(d);
}

NetConfig read_config(binio::ByteReader& r) {
  NetConfig c;
  c.dilations.clear();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    const std::string key = r.short_string();
    const std::uint8_t type = r.u8();
    if (type == 0) {
      const std::size_t v = r.u64();
      if (key == "input_channels") c.input_channels = v;
      else if (key == "aux_input_channels") c.aux_input_channels = v;
      else if (key == "initial_taps") c.initial_taps = v;
      else if (key == "conv_channels") c.conv_channels = v;
      else if (key == "skip_channels") c.skip_channels = v;
      else if (key == "control_dim") c.control_dim = v;
      else if (key == "output_channels") c.output_channels = v;
      else throw FormatError("unknown config field '" + key + "'", at);
    } else if (type == 1 && key == "dilations") {
      const std::uint32_t m = r.u32();
      for (std::uint32_t k = 0; k < m; ++k) c.dilations.push_back(r.u64());
    } else {
      throw FormatError("bad config field '" + key + "'", at);
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid stored config: ") + e.what());
  }
  return c;
}

}  // namespace

const CheckpointSection* Checkpoint::find(std::string_view tag) const {
  for (const auto& s : sections)
    if (s.tag == tag) return &s;
  return nullptr;
}

void Checkpoint::put(std::string tag, std::vector<std::uint8_t> payload) {
  if (tag.size() != 4) throw ConfigError("checkpoint section tags are 4 characters");
  for (auto& s : sections) {
    if (s.tag == tag) {
      s.payload = std::move(payload);
      return;
    }
  }
  sections.push_back({std::move(tag), std::move(payload)});
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  check_shapes(ckpt.params, ckpt.config);
  binio::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.short_string(ckpt.stream);
  write_config(w, ckpt.config);
  std::uint32_t count = 0;
  ckpt.params.visit([&](const std::string&, const Mat<float>&) { ++count; });
  w.u32(count);
  ckpt.params.visit([&](const std::string& name, const Mat<float>& m) {
    w.short_string(name);
    w.u8(2);
    w.u32(static_cast<std::uint32_t>(m.rows));
    w.u32(static_cast<std::uint32_t>(m.cols));
    w.f32_span(m.data);
  });
  w.u32(static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& s : ckpt.sections) {
    if (s.tag.size() != 4) throw ConfigError("checkpoint section tags are 4 characters");
    w.raw(s.tag);
    w.u32(static_cast<std::uint32_t>(s.payload.size()));
    w.raw(std::string_view(reinterpret_cast<const char*>(s.payload.data()), s.payload.size()));
  }
  w.u32(binio::crc32(w.bytes()));
  return std::move(w).take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  {
    binio::ByteReader head(bytes);
    head.expect_magic(kCheckpointMagic);
  }
  if (bytes.size() < 8) throw FormatError("truncated checkpoint", bytes.size());
  const auto body = bytes.first(bytes.size() - 4);
  binio::ByteReader tail(bytes.last(4), body.size());
  if (tail.u32() != binio::crc32(body)) throw FormatError("checkpoint CRC32 mismatch", body.size());

  binio::ByteReader r(body);
  r.expect_magic(kCheckpointMagic);
  const auto vat = r.offset();
  if (auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v), vat);
  Checkpoint ckpt;
  ckpt.stream = r.short_string();
  ckpt.config = read_config(r);
  ckpt.params = zero_params<float>(ckpt.config);
  std::vector<std::pair<std::string, Mat<float>*>> slots;
  ckpt.params.visit([&](const std::string& name, Mat<float>& m) { slots.emplace_back(name, &m); });
  const std::uint32_t count = r.u32();
  if (count != slots.size()) r.fail("tensor count " + std::to_string(count) + " does not match config");
  for (const auto& [name, mat] : slots) {
    const auto at = r.offset();
    const std::string stored = r.short_string();
    if (stored != name) throw FormatError("expected tensor '" + name + "', found '" + stored + "'", at);
    if (r.u8() != 2) throw FormatError("tensor '" + name + "' must have rank 2", at);
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != mat->rows || cols != mat->cols) throw FormatError("tensor '" + name + "' has wrong shape", at);
    r.f32_into(mat->data);
  }
  const std::uint32_t n_sections = r.u32();
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    CheckpointSection s;
    auto tag = r.bytes(4);
    s.tag.assign(tag.begin(), tag.end());
    const std::uint32_t len = r.u32();
    auto payload = r.bytes(len);
    s.payload.assign(payload.begin(), payload.end());
    ckpt.sections.push_back(std::move(s));
  }
  if (!r.at_end()) r.fail("trailing bytes before checksum");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  binio::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(binio::read_file(path)); }

// ---------------------------------------------------------------------------

#define NPSS_INSTANTIATE(T)                                                                                          \
  template struct NetParamsT<T>;                                                                                     \
  template NetParamsT<T> zero_params<T>(const NetConfig&);                                                           \
  template void check_shapes<T>(const NetParamsT<T>&, const NetConfig&);                                             \
  template std::vector<T> forward_batch<T>(const NetParamsT<T>&, const NetConfig&, std::span<const T>,               \
                                           std::span<const T>, std::size_t, Activations<T>*);                        \
  template std::vector<T> forward<T>(const NetParamsT<T>&, const NetConfig&, std::span<const T>, std::span<const T>); \
  template void backward<T>(const NetParamsT<T>&, const NetConfig&, const Activations<T>&, std::span<const T>,       \
                            NetParamsT<T>&);                                                                         \
  template void kernel::input_conv<T>(const NetParamsT<T>&, const NetConfig&, std::span<const T* const>, T*);       \
  template void kernel::gated_layer<T>(const LayerParams<T>&, const NetConfig&, const T*, const T*, const T*, T*,    \
                                       T*, T*, T*, T*);                                                              \
  template void kernel::output_stage<T>(const NetParamsT<T>&, const NetConfig&, const T*, const T*, T*, T*);

NPSS_INSTANTIATE(float)
NPSS_INSTANTIATE(double)
#undef NPSS_INSTANTIATE

template NetParamsT<double> convert_params<double, float>(const NetParamsT<float>&);
template NetParamsT<float> convert_params<float, double>(const NetParamsT<double>&);

}  // namespace npss
