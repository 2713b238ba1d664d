#include "npss/generation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

#include "npss/errors.hpp"

namespace npss {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

// ---------------------------------------------------------------------------
// GenState

GenState::GenState(const NetParams& params, const NetConfig& config) : params_(&params), config_(&config) {
  config.validate();
  check_shapes(params, config);
  const std::size_t C = config.conv_channels, L = config.dilations.size();
  input_ring_.assign(config.initial_taps * config.row_width(), 0.0f);
  row_ptrs_.assign(config.initial_taps, nullptr);
  x_.assign(C, 0.0f);
  x_next_.assign(C, 0.0f);
  skip_.assign(config.skip_channels, 0.0f);
  hidden_.assign(config.skip_channels, 0.0f);
  raw_.assign(config.output_channels, 0.0f);
  stage_seconds_.assign(L + 2, 0.0);

  // Activations of a position whose inputs, controls and past are all zero.
  const std::vector<float> zero_control(config.control_dim, 0.0f);
  std::vector<float> rest(params.input_b.data.begin(), params.input_b.data.end());
  std::vector<float> next(C);
  layer_ring_.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t d = config.dilations[l];
    layer_ring_[l].resize(d * C);
    for (std::size_t k = 0; k < d; ++k) std::copy(rest.begin(), rest.end(), layer_ring_[l].begin() + k * C);
    kernel::gated_layer<float>(params.layers[l], config, rest.data(), rest.data(), zero_control.data(), next.data(),
                               nullptr);
    rest.swap(next);
  }
}

void GenState::enable_timing(bool on) {
  timing_ = on;
  std::fill(stage_seconds_.begin(), stage_seconds_.end(), 0.0);
}

std::span<const float> GenState::step(std::span<const float> input_row, std::span<const float> control_row) {
  const NetConfig& c = *config_;
  const std::size_t W = c.row_width(), C = c.conv_channels, taps = c.initial_taps;
  if (input_row.size() != W) throw DimensionError("input row width mismatch");
  if (control_row.size() != c.control_dim) throw DimensionError("control row width mismatch");

  Clock::time_point t0;
  if (timing_) t0 = Clock::now();
  std::copy(input_row.begin(), input_row.end(), input_ring_.begin() + (frames_ % taps) * W);
  const std::size_t have = std::min(frames_ + 1, taps);
  for (std::size_t j = 0; j < taps; ++j)
    row_ptrs_[j] = j < have ? input_ring_.data() + ((frames_ - j) % taps) * W : nullptr;
  kernel::input_conv<float>(*params_, c, row_ptrs_, x_.data());
  if (timing_) stage_seconds_[0] += since(t0);

  std::fill(skip_.begin(), skip_.end(), 0.0f);
  for (std::size_t l = 0; l < c.dilations.size(); ++l) {
    if (timing_) t0 = Clock::now();
    float* slot = layer_ring_[l].data() + (frames_ % c.dilations[l]) * C;
    kernel::gated_layer<float>(params_->layers[l], c, x_.data(), slot, control_row.data(), x_next_.data(),
                               skip_.data());
    std::copy(x_.begin(), x_.end(), slot);
    x_.swap(x_next_);
    if (timing_) stage_seconds_[l + 1] += since(t0);
  }

  if (timing_) t0 = Clock::now();
  kernel::output_stage<float>(*params_, c, skip_.data(), control_row.data(), hidden_.data(), raw_.data());
  if (timing_) stage_seconds_.back() += since(t0);
  ++frames_;
  return raw_;
}

// ---------------------------------------------------------------------------
// Decoders

namespace {

class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual std::span<const float> step(std::span<const float> row, std::span<const float> control) = 0;
};

class CachedDecoder final : public Decoder {
 public:
  CachedDecoder(const NetParams& p, const NetConfig& c) : state_(p, c) {}
  std::span<const float> step(std::span<const float> row, std::span<const float> control) override {
    return state_.step(row, control);
  }

 private:
  GenState state_;
};

// Keeps the whole history and re-runs the network over the last
// receptive_field - 1 positions for every frame.
class NaiveDecoder final : public Decoder {
 public:
  NaiveDecoder(const NetParams& p, const NetConfig& c) : params_(p), config_(c) {
    c.validate();
    check_shapes(p, c);
  }
  std::span<const float> step(std::span<const float> row, std::span<const float> control) override {
    const std::size_t W = config_.row_width(), D = config_.control_dim, R1 = config_.window();
    if (row.size() != W || control.size() != D) throw DimensionError("row width mismatch");
    rows_.insert(rows_.end(), row.begin(), row.end());
    controls_.insert(controls_.end(), control.begin(), control.end());
    const std::size_t t = rows_.size() / W;
    std::vector<float> win(R1 * W, 0.0f), ctl(R1 * D, 0.0f);
    for (std::size_t i = 0; i < R1; ++i) {
      const std::ptrdiff_t q = std::ptrdiff_t(t) - std::ptrdiff_t(R1) + std::ptrdiff_t(i);
      if (q < 0) continue;
      std::copy_n(rows_.begin() + q * W, W, win.begin() + i * W);
      std::copy_n(controls_.begin() + q * D, D, ctl.begin() + i * D);
    }
    raw_ = forward<float>(params_, config_, win, ctl);
    return raw_;
  }

 private:
  const NetParams& params_;
  const NetConfig& config_;
  std::vector<float> rows_, controls_, raw_;
};

std::unique_ptr<Decoder> make_decoder(const StreamModel& m, DecodeMode mode) {
  if (mode == DecodeMode::cached) return std::make_unique<CachedDecoder>(m.params, m.config);
  return std::make_unique<NaiveDecoder>(m.params, m.config);
}

void check_model(const StreamModel& m, std::size_t control_width) {
  const NetConfig& c = m.config;
  std::size_t aux = 0;
  for (StreamId s : upstream_streams(m.stream)) aux += stream_dim(s);
  const std::string name(stream_name(m.stream));
  if (c.input_channels != stream_dim(m.stream) || c.aux_input_channels != aux)
    throw ConfigError(name + " checkpoint has " + std::to_string(c.input_channels) + "+" +
                      std::to_string(c.aux_input_channels) + " input channels, expected " +
                      std::to_string(stream_dim(m.stream)) + "+" + std::to_string(aux));
  if (c.output_channels != (m.is_mixture() ? 4 * c.input_channels : 1))
    throw ConfigError(name + " checkpoint has the wrong output width");
  if (c.control_dim != control_width)
    throw ConfigError(name + " checkpoint expects control width " + std::to_string(c.control_dim) + ", got " +
                      std::to_string(control_width));
  if (m.input_stats.size() != c.row_width()) throw ConfigError(name + " checkpoint statistics have the wrong width");
}

// Drives one stream: builds input rows, samples, and keeps the previous frame.
class StreamRunner {
 public:
  StreamRunner(const StreamModel& m, DecodeMode mode, std::size_t frames)
      : model_(m), decoder_(make_decoder(m, mode)), row_(m.config.row_width(), 0.0f),
        prev_(m.config.input_channels, 0.0f), out_(frames, m.config.input_channels) {}

  /// aux_raw: upstream frame values in raw units.
  void step(std::size_t t, std::span<const float> aux_raw, std::span<const float> control, double tau,
            std::uint64_t seed) {
    const std::size_t N = model_.config.input_channels;
    const ChannelStats& st = model_.input_stats;
    std::copy(prev_.begin(), prev_.end(), row_.begin());
    for (std::size_t c = 0; c < aux_raw.size(); ++c) row_[N + c] = st.normalize(N + c, aux_raw[c]);
    std::span<const float> raw = decoder_->step(row_, control);

    Rng rng(frame_seed(seed, model_.stream, t));
    FrameTrace tr;
    tr.draws.resize(N);
    for (float v : raw)
      if (!std::isfinite(v)) throw GenerationError(std::string(stream_name(model_.stream)) + ": non-finite network output", t);
    if (model_.is_mixture()) {
      for (std::size_t c = 0; c < N; ++c) {
        cgm::CgmParams p = cgm::squash_raw(raw[4 * c], raw[4 * c + 1], raw[4 * c + 2], raw[4 * c + 3]);
        tr.draws[c] = cgm::sample(p, tau, rng);
        if (!std::isfinite(tr.draws[c].value))
          throw GenerationError(std::string(stream_name(model_.stream)) + ": non-finite sample", t);
        prev_[c] = float(tr.draws[c].value);
      }
    } else {
      const double p = cgm::vuv_prob(raw[0]);
      const int v = cgm::vuv_sample(p, tau, rng);
      tr.draws[0].uniform = p;
      tr.draws[0].value = v;
      prev_[0] = float(v);
    }
    for (std::size_t c = 0; c < N; ++c) out_.at(t, c) = st.denormalize(c, prev_[c]);
    if (model_.stream == StreamId::vuv) out_.at(t, 0) = prev_[0];
    trace_.push_back(std::move(tr));
  }

  std::span<const float> frame(std::size_t t) const { return out_.frame(t); }
  StreamOutput finish() && { return {std::move(out_), std::move(trace_)}; }

 private:
  const StreamModel& model_;
  std::unique_ptr<Decoder> decoder_;
  std::vector<float> row_, prev_;
  FrameSeq out_;
  std::vector<FrameTrace> trace_;
};

}  // namespace

std::uint64_t frame_seed(std::uint64_t seed, StreamId s, std::size_t t) {
  return derive_seed(seed, 0x47454eULL + static_cast<std::uint64_t>(s), t);
}

double Temperatures::of(StreamId s) const {
  switch (s) {
    case StreamId::harmonic: return harmonic;
    case StreamId::aperiodic: return aperiodic;
    case StreamId::vuv: return vuv;
  }
  return 0.0;
}

StreamOutput generate_stream(const StreamModel& model, const ControlTrack& control, const FrameSeq& aux, double tau,
                             std::uint64_t seed, DecodeMode mode) {
  check_model(model, control.rows.dim());
  const std::size_t T = control.frames();
  if (T == 0) throw DomainError("control track is empty");
  const std::size_t A = model.config.aux_input_channels;
  if (A > 0 && (aux.dim() != A || aux.frames() < T))
    throw DimensionError(std::string(stream_name(model.stream)) + " needs " + std::to_string(A) +
                         " aux channels for " + std::to_string(T) + " frames");
  if (A == 0 && aux.frames() > 0) throw DimensionError("harmonic stream takes no aux input");
  StreamRunner run(model, mode, T);
  for (std::size_t t = 0; t < T; ++t)
    run.step(t, A > 0 ? aux.frame(t) : std::span<const float>{}, control.rows.frame(t), tau, seed);
  return std::move(run).finish();
}

StreamOutput generate_naive(const StreamModel& model, const ControlTrack& control, double tau, std::uint64_t seed,
                            const FrameSeq& aux) {
  return generate_stream(model, control, aux, tau, seed, DecodeMode::naive);
}

StreamOutput generate_cached(const StreamModel& model, const ControlTrack& control, double tau, std::uint64_t seed,
                             const FrameSeq& aux) {
  return generate_stream(model, control, aux, tau, seed, DecodeMode::cached);
}

std::vector<std::uint16_t> labels_from_control(const ControlTrack& control) {
  const std::size_t P = control.alphabet_size;
  std::vector<std::uint16_t> out(control.frames(), 0);
  for (std::size_t t = 0; t < control.frames(); ++t) {
    auto row = control.rows.frame(t);
    auto cur = row.subspan(P, P);
    out[t] = static_cast<std::uint16_t>(std::max_element(cur.begin(), cur.end()) - cur.begin());
  }
  return out;
}

Utterance generate_multistream(const std::array<StreamModel, 3>& models, const ControlTrack& control,
                               const Temperatures& tau, std::uint64_t seed, DecodeMode mode,
                               std::array<std::vector<FrameTrace>, 3>* traces) {
  for (StreamId s : kAllStreams) {
    const StreamModel& m = models[static_cast<std::size_t>(s)];
    if (m.stream != s) throw ConfigError("checkpoint for " + std::string(stream_name(s)) + " holds stream " +
                                         std::string(stream_name(m.stream)));
    check_model(m, control.rows.dim());
  }
  const std::size_t T = control.frames();
  if (T == 0) throw DomainError("control track is empty");
  const StreamModel& hm = models[static_cast<std::size_t>(StreamId::harmonic)];
  const StreamModel& vm = models[static_cast<std::size_t>(StreamId::vuv)];
  const StreamModel& am = models[static_cast<std::size_t>(StreamId::aperiodic)];
  StreamRunner h(hm, mode, T), v(vm, mode, T), a(am, mode, T);
  const std::size_t H = stream_dim(StreamId::harmonic);
  std::vector<float> aux_a(H + 1);
  for (std::size_t t = 0; t < T; ++t) {
    auto ctl = control.rows.frame(t);
    h.step(t, {}, ctl, tau.harmonic, seed);
    v.step(t, h.frame(t), ctl, tau.vuv, seed);
    std::copy_n(h.frame(t).begin(), H, aux_a.begin());
    aux_a[H] = v.frame(t)[0];
    a.step(t, aux_a, ctl, tau.aperiodic, seed);
  }
  StreamOutput ho = std::move(h).finish(), vo = std::move(v).finish(), ao = std::move(a).finish();
  Utterance u;
  u.control = control;
  u.labels = labels_from_control(control);
  u.streams.push_back({std::string(stream_name(StreamId::harmonic)), std::move(ho.frames)});
  u.streams.push_back({std::string(stream_name(StreamId::aperiodic)), std::move(ao.frames)});
  u.streams.push_back({std::string(stream_name(StreamId::vuv)), std::move(vo.frames)});
  if (traces) {
    (*traces)[static_cast<std::size_t>(StreamId::harmonic)] = std::move(ho.trace);
    (*traces)[static_cast<std::size_t>(StreamId::aperiodic)] = std::move(ao.trace);
    (*traces)[static_cast<std::size_t>(StreamId::vuv)] = std::move(vo.trace);
  }
  return u;
}

// ---------------------------------------------------------------------------
// Benchmark

BenchResult bench_generation(const StreamModel& model, std::size_t n_frames, DecodeMode mode, std::size_t repeats,
                             std::uint64_t seed) {
  if (n_frames < 100) throw ConfigError("benchmark needs at least 100 frames");
  if (repeats == 0) throw ConfigError("benchmark needs at least one repeat");
  const NetConfig& c = model.config;
  const std::size_t P = (c.control_dim - 3) / 3;
  if (control_dim(P) != c.control_dim) throw ConfigError("control_dim is not 3P+3");

  // A phone every 30 frames cycling through the alphabet.
  std::vector<std::string> symbols{std::string(kSilence)};
  for (std::size_t i = 1; i < P; ++i) symbols.push_back("p" + std::to_string(i));
  PhonemeAlphabet alphabet(symbols);
  std::vector<PhoneSegment> phones;
  for (std::size_t t = 0, i = 0; t < n_frames; t += 30, ++i)
    phones.push_back({symbols[i % P], std::min<std::size_t>(30, n_frames - t)});
  EncodedScore score = encode_score(phones, alphabet);
  FrameSeq aux = c.aux_input_channels > 0 ? FrameSeq(n_frames, c.aux_input_channels, 0.0f) : FrameSeq();

  BenchResult r;
  r.mode = mode;
  r.frames = n_frames;
  r.repeats = repeats;
  std::vector<double> times;
  std::vector<double> stages(c.dilations.size() + 2, 0.0);
  for (std::size_t k = 0; k < repeats; ++k) {
    if (mode == DecodeMode::cached) {
      GenState st(model.params, c);
      std::vector<float> row(c.row_width(), 0.0f);
      const auto t0 = Clock::now();
      StreamOutput o = generate_stream(model, score.control, aux, 1.0, seed, mode);
      times.push_back(since(t0));
      // Separate pass for the per-stage breakdown so the clock reads do not
      // perturb the headline number.
      st.enable_timing(true);
      for (std::size_t t = 0; t < n_frames; ++t) st.step(row, score.control.rows.frame(t));
      for (std::size_t s = 0; s < stages.size(); ++s) stages[s] += st.stage_seconds()[s];
    } else {
      const auto t0 = Clock::now();
      StreamOutput o = generate_stream(model, score.control, aux, 1.0, seed, mode);
      times.push_back(since(t0));
    }
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  r.median_seconds = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
  r.frames_per_second = double(n_frames) / r.median_seconds;
  r.realtime_factor = r.frames_per_second * kDefaultHopSeconds;
  if (mode == DecodeMode::cached)
    for (double s : stages) r.stage_seconds.push_back(s / double(repeats * n_frames));
  return r;
}

}  // namespace npss
