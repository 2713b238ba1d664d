#include "npss/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "npss/binio.hpp"
#include "npss/cgm.hpp"
#include "npss/errors.hpp"
#include "npss/parallel.hpp"

namespace npss {

namespace {

constexpr float kStdFloor = 1e-3f;

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("bad number '" + std::string(s) + "'", 0);
  return v;
}

template <typename T>
std::vector<Mat<T>*> tensors(NetParamsT<T>& p) {
  std::vector<Mat<T>*> out;
  p.visit([&](const std::string&, Mat<T>& m) { out.push_back(&m); });
  return out;
}

template <typename T>
std::vector<const Mat<T>*> tensors(const NetParamsT<T>& p) {
  std::vector<const Mat<T>*> out;
  p.visit([&](const std::string&, const Mat<T>& m) { out.push_back(&m); });
  return out;
}

std::uint64_t stream_tag(StreamId s) { return 0x5354ULL + static_cast<std::uint64_t>(s); }

void write_params_blob(binio::ByteWriter& w, const NetParams& p) {
  for (const Mat<float>* m : tensors(p)) w.f32_span(m->data);
}

void read_params_blob(binio::ByteReader& r, NetParams& p) {
  for (Mat<float>* m : tensors(p)) r.f32_into(m->data);
}

}  // namespace

// ---------------------------------------------------------------------------
// Statistics and model container

ChannelStats compute_stats(const Corpus& corpus, StreamId stream, std::span<const std::size_t> utterances) {
  const std::size_t dim = stream_dim(stream);
  ChannelStats st{std::vector<float>(dim, 0.0f), std::vector<float>(dim, 1.0f)};
  if (stream == StreamId::vuv) return st;
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  std::size_t n = 0;
  for (std::size_t u : utterances) {
    const FrameSeq& f = corpus.utterances.at(u).stream(stream);
    for (std::size_t t = 0; t < f.frames(); ++t)
      for (std::size_t c = 0; c < dim; ++c) {
        double v = f.at(t, c);
        sum[c] += v;
        sq[c] += v * v;
      }
    n += f.frames();
  }
  if (n == 0) return st;
  for (std::size_t c = 0; c < dim; ++c) {
    double mean = sum[c] / double(n);
    double var = std::max(0.0, sq[c] / double(n) - mean * mean);
    st.mean[c] = float(mean);
    st.stddev[c] = std::max(kStdFloor, float(std::sqrt(var)));
  }
  return st;
}

Checkpoint to_checkpoint(const StreamModel& model) {
  Checkpoint ck;
  ck.stream = std::string(stream_name(model.stream));
  ck.config = model.config;
  ck.params = model.params;
  binio::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(model.input_stats.size()));
  w.f32_span(model.input_stats.mean);
  w.f32_span(model.input_stats.stddev);
  ck.put("STAT", std::move(w).take());
  return ck;
}

StreamModel from_checkpoint(const Checkpoint& ck) {
  StreamModel m;
  m.stream = stream_from_name(ck.stream);
  m.config = ck.config;
  m.params = ck.params;
  const std::size_t width = m.config.row_width();
  if (const CheckpointSection* s = ck.find("STAT")) {
    binio::ByteReader r(s->payload);
    std::size_t n = r.u32();
    if (n != width) throw DimensionError("checkpoint statistics cover " + std::to_string(n) + " channels, expected " +
                                         std::to_string(width));
    m.input_stats.mean.resize(n);
    m.input_stats.stddev.resize(n);
    r.f32_into(m.input_stats.mean);
    r.f32_into(m.input_stats.stddev);
  } else {
    m.input_stats = {std::vector<float>(width, 0.0f), std::vector<float>(width, 1.0f)};
  }
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train.lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (batch_sequences == 0) throw ConfigError("train.batch_sequences must be positive");
  if (output_length == 0) throw ConfigError("train.output_length must be positive");
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (patience == 0) throw ConfigError("train.patience must be positive");
  for (const NetConfig& n : nets) n.validate();
}

TrainConfig default_train_config(std::size_t alphabet_size) {
  TrainConfig c;
  for (StreamId s : kAllStreams) c.net(s) = default_stream_config(s, control_dim(alphabet_size));
  return c;
}

std::string train_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "lambda=" << fmt_double(c.lambda) << '\n'
     << "learning_rate=" << fmt_double(c.learning_rate) << '\n'
     << "batch_sequences=" << c.batch_sequences << '\n'
     << "output_length=" << c.output_length << '\n'
     << "epochs=" << c.epochs << '\n'
     << "patience=" << c.patience << '\n'
     << "seed=" << c.seed << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Optimizer

OptState make_opt_state(const NetConfig& config) {
  OptState s;
  s.m = zero_params<float>(config);
  s.v = zero_params<float>(config);
  return s;
}

void adam_step(OptState& state, NetParams& params, const NetParams& grads, double lr) {
  auto p = tensors(params);
  auto g = tensors(grads);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw DimensionError("adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::size_t n = p[i]->data.size();
    if (g[i]->data.size() != n || m[i]->data.size() != n || v[i]->data.size() != n)
      throw DimensionError("adam_step: shape mismatch in tensor " + std::to_string(i));
  }
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    float* pp = p[i]->data.data();
    const float* gg = g[i]->data.data();
    float* mm = m[i]->data.data();
    float* vv = v[i]->data.data();
    for (std::size_t k = 0, n = p[i]->data.size(); k < n; ++k) {
      double gk = gg[k];
      double mk = b1 * mm[k] + (1.0 - b1) * gk;
      double vk = b2 * vv[k] + (1.0 - b2) * gk * gk;
      mm[k] = float(mk);
      vv[k] = float(vk);
      double mhat = mk / c1, vhat = vk / c2;
      pp[k] = float(pp[k] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

bool TrainHistory::same_trajectory(const TrainHistory& o) const {
  if (initial_val_nll != o.initial_val_nll || best_epoch != o.best_epoch || epochs.size() != o.epochs.size())
    return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const EpochRecord &a = epochs[i], &b = o.epochs[i];
    if (a.epoch != b.epoch || a.train_nll != b.train_nll || a.val_nll != b.val_nll) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Data preparation

void corrupt_context(std::span<float> values, double lambda, Rng& rng) {
  if (!(lambda >= 0.0)) throw DomainError("corruption variance must be >= 0");
  if (lambda == 0.0) return;
  std::normal_distribution<double> noise(0.0, std::sqrt(lambda));
  for (float& v : values) v = float(v + noise(rng));
}

StreamSequences prepare_sequences(const Corpus& corpus, StreamId stream, std::span<const std::size_t> utterances,
                                  const ChannelStats& stats) {
  const std::size_t own = stream_dim(stream);
  const std::vector<StreamId> ups = upstream_streams(stream);
  std::size_t width = own;
  for (StreamId s : ups) width += stream_dim(s);
  if (stats.size() != width) throw DimensionError("statistics width does not match the stream input row");

  StreamSequences d;
  d.row_width = width;
  d.own_dim = own;
  d.target_dim = own;
  d.control_dim = control_dim(corpus.alphabet.size());
  for (std::size_t u : utterances) {
    const Utterance& utt = corpus.utterances.at(u);
    const FrameSeq& self = utt.stream(stream);
    const std::size_t T = self.frames();
    if (utt.control.rows.dim() != d.control_dim) throw DimensionError("control width mismatch in utterance " + corpus.names.at(u));
    std::vector<float> rows(T * width, 0.0f), targets(T * own);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < own; ++c) {
        float z = stats.normalize(c, self.at(t, c));
        targets[t * own + c] = z;
        if (t + 1 < T) rows[(t + 1) * width + c] = z;
      }
      std::size_t off = own;
      for (StreamId s : ups) {
        const FrameSeq& aux = utt.stream(s);
        for (std::size_t c = 0; c < aux.dim(); ++c) rows[t * width + off + c] = stats.normalize(off + c, aux.at(t, c));
        off += aux.dim();
      }
    }
    d.rows.push_back(std::move(rows));
    d.targets.push_back(std::move(targets));
    d.controls.push_back(utt.control.rows.values());
    d.utterance_ids.push_back(u);
  }
  return d;
}

std::vector<TrainWindow> make_windows(const StreamSequences& data, std::size_t output_length) {
  if (output_length == 0) throw ConfigError("output length must be positive");
  std::vector<TrainWindow> out;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    const std::size_t T = data.frames(i);
    for (std::size_t s = 0; s < T; s += output_length) out.push_back({i, s, std::min(output_length, T - s)});
  }
  return out;
}

WindowInputs build_window(const StreamSequences& data, const NetConfig& config, const TrainWindow& w, double lambda,
                          Rng& rng) {
  if (!(lambda >= 0.0)) throw DomainError("corruption variance must be >= 0");
  const std::size_t W = data.row_width, D = data.control_dim, own = data.own_dim;
  if (W != config.row_width() || D != config.control_dim) throw DimensionError("window data does not match network");
  const std::size_t pre = config.window() - 1;
  const std::size_t P = pre + w.length;
  WindowInputs out;
  out.first_output = pre;
  out.inputs.assign(P * W, 0.0f);
  out.controls.assign(P * D, 0.0f);
  const std::vector<float>& rows = data.rows[w.sequence];
  const std::vector<float>& ctrl = data.controls[w.sequence];
  for (std::size_t i = 0; i < P; ++i) {
    const std::ptrdiff_t q = std::ptrdiff_t(w.start) - std::ptrdiff_t(pre) + std::ptrdiff_t(i);
    if (q < 0) continue;
    std::copy_n(rows.begin() + q * W, W, out.inputs.begin() + i * W);
    std::copy_n(ctrl.begin() + q * D, D, out.controls.begin() + i * D);
    if (lambda > 0.0) {
      float* row = out.inputs.data() + i * W;
      if (q >= 1) corrupt_context({row, own}, lambda, rng);
      corrupt_context({row + own, W - own}, lambda, rng);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
double head_nll(bool mixture, std::span<const T> raw, std::span<const float> targets, std::size_t channels,
                std::span<T> grad_raw) {
  const std::size_t per = mixture ? cgm::kRawPerChannel : 1;
  const std::size_t frames = channels == 0 ? 0 : targets.size() / channels;
  if (raw.size() != frames * channels * per) throw DimensionError("raw output size does not match targets");
  const bool want_grad = !grad_raw.empty();
  if (want_grad && grad_raw.size() != raw.size()) throw DimensionError("gradient buffer size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < frames * channels; ++i) {
    const double x = targets[i];
    if (mixture) {
      std::array<double, 4> r = {double(raw[4 * i]), double(raw[4 * i + 1]), double(raw[4 * i + 2]),
                                 double(raw[4 * i + 3])};
      cgm::Nll n = cgm::nll_raw(r, x);
      total += n.value;
      if (want_grad)
        for (std::size_t k = 0; k < 4; ++k) grad_raw[4 * i + k] = T(n.grad[k]);
    } else {
      cgm::VuvNll n = cgm::vuv_nll_raw(double(raw[i]), x);
      total += n.value;
      if (want_grad) grad_raw[i] = T(n.grad_raw);
    }
  }
  return total;
}

template double head_nll<float>(bool, std::span<const float>, std::span<const float>, std::size_t, std::span<float>);
template double head_nll<double>(bool, std::span<const double>, std::span<const float>, std::size_t,
                                 std::span<double>);

namespace {

template <typename T>
[[noreturn]] void report_non_finite(bool mixture, std::span<const T> raw, const StreamSequences& data,
                                    const TrainWindow& w) {
  const std::size_t N = data.target_dim, per = mixture ? 4 : 1;
  const float* tg = data.targets[w.sequence].data() + w.start * N;
  for (std::size_t f = 0; f < w.length; ++f) {
    double v;
    try {
      v = head_nll<T>(mixture, raw.subspan(f * N * per, N * per), {tg + f * N, N}, N, {});
    } catch (const NumericError&) {
      v = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(v))
      throw NumericError("non-finite loss in utterance " + std::to_string(data.utterance_ids[w.sequence]) +
                         " frame " + std::to_string(w.start + f));
  }
  throw NumericError("non-finite loss in utterance " + std::to_string(data.utterance_ids[w.sequence]));
}

template <typename T>
BatchResultT<T> batch_loss_impl(const NetParamsT<T>& params, const NetConfig& config, bool mixture,
                                const StreamSequences& data, std::span<const TrainWindow> batch, double lambda,
                                std::uint64_t noise_seed, std::size_t threads) {
  if (!(lambda >= 0.0)) throw DomainError("corruption variance must be >= 0");
  const std::size_t N = data.target_dim;
  const std::size_t per = mixture ? cgm::kRawPerChannel : 1;
  if (config.output_channels != N * per) throw DimensionError("network output width does not match stream");
  std::size_t items = 0;
  for (const TrainWindow& w : batch) items += w.length * N;
  BatchResultT<T> res;
  res.items = items;
  res.grads = zero_params<T>(config);
  if (items == 0) return res;

  std::vector<double> losses(batch.size(), 0.0);
  std::vector<NetParamsT<T>> grads(batch.size());
  const T scale = T(1.0 / double(items));
  parallel_for(batch.size(), threads, [&](std::size_t k) {
    const TrainWindow& w = batch[k];
    Rng rng(derive_seed(noise_seed, k));
    WindowInputs win = build_window(data, config, w, lambda, rng);
    std::vector<T> in(win.inputs.begin(), win.inputs.end());
    std::vector<T> ctl(win.controls.begin(), win.controls.end());
    Activations<T> acts;
    std::vector<T> raw = forward_batch<T>(params, config, in, ctl, win.first_output, &acts);
    std::vector<T> g(raw.size());
    std::span<const float> tg(data.targets[w.sequence].data() + w.start * N, w.length * N);
    double loss;
    try {
      loss = head_nll<T>(mixture, raw, tg, N, g);
    } catch (const NumericError&) {
      report_non_finite<T>(mixture, raw, data, w);
    }
    if (!std::isfinite(loss)) report_non_finite<T>(mixture, raw, data, w);
    for (T& v : g) v *= scale;
    grads[k] = zero_params<T>(config);
    backward<T>(params, config, acts, g, grads[k]);
    losses[k] = loss;
  });

  double total = 0.0;
  auto dst = tensors(res.grads);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    total += losses[k];
    auto src = tensors(std::as_const(grads[k]));
    for (std::size_t i = 0; i < dst.size(); ++i) {
      T* d = dst[i]->data.data();
      const T* s = src[i]->data.data();
      for (std::size_t j = 0, n = dst[i]->data.size(); j < n; ++j) d[j] += s[j];
    }
  }
  res.loss = total / double(items);
  return res;
}

}  // namespace

BatchResult batch_loss(const NetParams& params, const NetConfig& config, bool mixture, const StreamSequences& data,
                       std::span<const TrainWindow> batch, double lambda, std::uint64_t noise_seed,
                       std::size_t threads) {
  return batch_loss_impl<float>(params, config, mixture, data, batch, lambda, noise_seed, threads);
}

BatchResultT<double> batch_loss(const NetParams64& params, const NetConfig& config, bool mixture,
                                const StreamSequences& data, std::span<const TrainWindow> batch, double lambda,
                                std::uint64_t noise_seed, std::size_t threads) {
  return batch_loss_impl<double>(params, config, mixture, data, batch, lambda, noise_seed, threads);
}

double evaluate_nll(const NetParams& params, const NetConfig& config, bool mixture, const StreamSequences& data,
                    std::size_t threads) {
  const std::size_t n = data.rows.size();
  std::vector<double> sums(n, 0.0);
  std::size_t items = 0;
  for (std::size_t i = 0; i < n; ++i) items += data.frames(i) * data.target_dim;
  if (items == 0) throw EvaluationError("no frames to evaluate");
  parallel_for(n, threads, [&](std::size_t i) {
    TrainWindow w{i, 0, data.frames(i)};
    Rng unused(0);
    WindowInputs win = build_window(data, config, w, 0.0, unused);
    std::vector<float> raw = forward_batch<float>(params, config, win.inputs, win.controls, win.first_output);
    sums[i] = head_nll<float>(mixture, raw, data.targets[i], data.target_dim, {});
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / double(items);
}

// ---------------------------------------------------------------------------
// Resume state

std::vector<std::uint8_t> encode_train_state(const TrainState& st, const TrainConfig& config) {
  Checkpoint ck = to_checkpoint(st.model);
  ck.put("TCFG", [&] {
    std::string t = train_config_text(config);
    return std::vector<std::uint8_t>(t.begin(), t.end());
  }());
  {
    binio::ByteWriter w;
    w.u64(st.opt.step);
    w.f64(st.opt.beta1);
    w.f64(st.opt.beta2);
    w.f64(st.opt.eps);
    write_params_blob(w, st.opt.m);
    write_params_blob(w, st.opt.v);
    ck.put("OPTS", std::move(w).take());
  }
  {
    std::ostringstream os;
    os << "initial_val_nll " << fmt_double(st.history.initial_val_nll) << '\n'
       << "best_epoch " << st.history.best_epoch << '\n'
       << "next_epoch " << st.next_epoch << '\n'
       << "epochs_since_best " << st.epochs_since_best << '\n'
       << "finished " << (st.finished ? 1 : 0) << '\n';
    for (const EpochRecord& e : st.history.epochs)
      os << "epoch " << e.epoch << ' ' << fmt_double(e.train_nll) << ' ' << fmt_double(e.val_nll) << ' '
         << fmt_double(e.seconds) << '\n';
    std::string t = os.str();
    ck.put("HIST", std::vector<std::uint8_t>(t.begin(), t.end()));
  }
  {
    binio::ByteWriter w;
    write_params_blob(w, st.best_params);
    ck.put("BEST", std::move(w).take());
  }
  return encode_checkpoint(ck);
}

TrainState decode_train_state(std::span<const std::uint8_t> bytes) {
  Checkpoint ck = decode_checkpoint(bytes);
  TrainState st;
  st.model = from_checkpoint(ck);
  const CheckpointSection* opts = ck.find("OPTS");
  const CheckpointSection* hist = ck.find("HIST");
  const CheckpointSection* best = ck.find("BEST");
  if (!opts || !hist || !best) throw StateError("checkpoint is not a training state (missing OPTS/HIST/BEST)");

  st.opt = make_opt_state(st.model.config);
  {
    binio::ByteReader r(opts->payload);
    st.opt.step = r.u64();
    st.opt.beta1 = r.f64();
    st.opt.beta2 = r.f64();
    st.opt.eps = r.f64();
    read_params_blob(r, st.opt.m);
    read_params_blob(r, st.opt.v);
    if (!r.at_end()) r.fail("trailing bytes in OPTS section");
  }
  st.best_params = zero_params<float>(st.model.config);
  {
    binio::ByteReader r(best->payload);
    read_params_blob(r, st.best_params);
    if (!r.at_end()) r.fail("trailing bytes in BEST section");
  }
  std::istringstream is(std::string(hist->payload.begin(), hist->payload.end()));
  for (std::string line; std::getline(is, line);) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "epoch") {
      EpochRecord e;
      std::string a, b, c;
      ls >> e.epoch >> a >> b >> c;
      e.train_nll = parse_double(a);
      e.val_nll = parse_double(b);
      e.seconds = parse_double(c);
      st.history.epochs.push_back(e);
    } else {
      std::string v;
      ls >> v;
      if (key == "initial_val_nll") st.history.initial_val_nll = parse_double(v);
      else if (key == "best_epoch") st.history.best_epoch = std::stoul(v);
      else if (key == "next_epoch") st.next_epoch = std::stoul(v);
      else if (key == "epochs_since_best") st.epochs_since_best = std::stoul(v);
      else if (key == "finished") st.finished = v == "1";
    }
  }
  if (st.history.epochs.size() != st.next_epoch) throw StateError("training history length disagrees with epoch counter");
  return st;
}

// ---------------------------------------------------------------------------
// Trainer

TrainResult train_stream(const Corpus& corpus, StreamId stream, const TrainConfig& config,
                         const TrainOptions& options, std::optional<TrainState> resume) {
  config.validate();
  const NetConfig& net = config.net(stream);
  const bool mixture = stream != StreamId::vuv;
  const std::vector<StreamId> ups = upstream_streams(stream);

  std::size_t aux = 0;
  for (StreamId s : ups) aux += stream_dim(s);
  if (net.input_channels != stream_dim(stream) || net.aux_input_channels != aux)
    throw ConfigError(std::string(stream_name(stream)) + " network expects " + std::to_string(stream_dim(stream)) +
                      " own and " + std::to_string(aux) + " aux channels");
  if (net.output_channels != (mixture ? 4 * stream_dim(stream) : 1))
    throw ConfigError(std::string(stream_name(stream)) + " network has the wrong output width");
  if (net.control_dim != control_dim(corpus.alphabet.size()))
    throw ConfigError("network control_dim " + std::to_string(net.control_dim) + " does not match alphabet (" +
                      std::to_string(control_dim(corpus.alphabet.size())) + ")");

  const std::vector<std::size_t> train_ids = corpus.indices(Split::train);
  const std::vector<std::size_t> val_ids = corpus.indices(Split::validation);
  if (train_ids.empty()) throw ConfigError("training split is empty");
  for (std::size_t u : train_ids) {
    if (!corpus.utterances[u].has_stream(stream_name(stream))) throw ConfigError("corpus lacks stream " + std::string(stream_name(stream)));
    for (StreamId s : ups)
      if (!corpus.utterances[u].has_stream(stream_name(s))) throw ConfigError("corpus lacks stream " + std::string(stream_name(s)));
  }

  ChannelStats stats = compute_stats(corpus, stream, train_ids);
  for (StreamId s : ups) {
    ChannelStats a = compute_stats(corpus, s, train_ids);
    stats.mean.insert(stats.mean.end(), a.mean.begin(), a.mean.end());
    stats.stddev.insert(stats.stddev.end(), a.stddev.begin(), a.stddev.end());
  }
  const StreamSequences train_data = prepare_sequences(corpus, stream, train_ids, stats);
  const StreamSequences val_data = prepare_sequences(corpus, stream, val_ids, stats);
  const bool have_val = !val_ids.empty();
  const std::uint64_t tag = stream_tag(stream);

  TrainState st;
  if (resume) {
    st = std::move(*resume);
    if (st.model.stream != stream || st.model.config != net || st.model.input_stats != stats)
      throw StateError("resume state does not match the stream, network or data statistics");
  } else {
    st.model = {stream, net, init_params(net, derive_seed(config.seed, tag)), stats};
    st.opt = make_opt_state(net);
    st.best_params = st.model.params;
    st.history.initial_val_nll = evaluate_nll(st.model.params, net, mixture, have_val ? val_data : train_data,
                                              config.threads);
  }

  const std::vector<TrainWindow> windows = make_windows(train_data, config.output_length);
  std::size_t run = 0;
  while (!st.finished) {
    if (st.next_epoch >= config.epochs) {
      st.finished = true;
      break;
    }
    if (options.stop_after && run >= *options.stop_after) break;
    const std::size_t epoch = st.next_epoch;
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, tag, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t items = 0;
    std::vector<TrainWindow> batch;
    for (std::size_t b = 0, start = 0; start < order.size(); ++b, start += config.batch_sequences) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_sequences); ++i)
        batch.push_back(windows[order[i]]);
      BatchResult r = batch_loss(st.model.params, net, mixture, train_data, batch, config.lambda,
                                 derive_seed(config.seed, tag, epoch, b), config.threads);
      adam_step(st.opt, st.model.params, r.grads, config.learning_rate);
      loss_sum += r.loss * double(r.items);
      items += r.items;
    }
    if (!st.model.params.all_finite())
      throw NumericError(std::string(stream_name(stream)) + ": parameters diverged in epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = loss_sum / double(items);
    rec.val_nll = have_val ? evaluate_nll(st.model.params, net, mixture, val_data, config.threads) : rec.train_nll;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool improved = st.history.epochs.empty() || rec.val_nll < st.history.epochs[st.history.best_epoch].val_nll;
    st.history.epochs.push_back(rec);
    if (improved) {
      st.history.best_epoch = epoch;
      st.best_params = st.model.params;
      st.epochs_since_best = 0;
    } else if (++st.epochs_since_best >= config.patience) {
      st.finished = true;
    }
    ++st.next_epoch;
    ++run;
    if (options.on_epoch) options.on_epoch(stream, rec);
  }

  TrainResult out;
  out.best = st.model;
  out.best.params = st.best_params;
  out.history = st.history;
  out.state = std::move(st);
  return out;
}

std::array<TrainResult, 3> train_all(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options) {
  std::array<TrainResult, 3> out;
  for (StreamId s : {StreamId::harmonic, StreamId::vuv, StreamId::aperiodic})
    out[static_cast<std::size_t>(s)] = train_stream(corpus, s, config, options);
  return out;
}

}  // namespace npss
