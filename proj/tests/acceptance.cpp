// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Set NPSS_ACCEPTANCE_KEEP=1 to reuse a
// previous training in the scratch directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "npss/binio.hpp"
#include "npss/cgm.hpp"
#include "npss/commands.hpp"
#include "npss/evalkit.hpp"
#include "npss/generation.hpp"
#include "npss/run_config.hpp"

namespace fs = std::filesystem;
using namespace npss;

namespace {

const fs::path kRoot = NPSS_TEST_TMP;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  failures += !o.pass;
  std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << title << ":" << o.detail.str()
            << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> machine_section(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text.substr(text.find("[machine]")));
  std::string line;
  while (std::getline(in, line))
    if (auto eq = line.find('='); eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  return kv;
}

void run_or_throw(const std::string& cmd, const RunConfig& c) {
  std::ostringstream log, err;
  if (run_command(cmd, c, log, err) != 0) throw std::runtime_error(cmd + ": " + err.str());
}

StreamModel identity_model(const NetConfig& c, StreamId s, std::uint64_t seed) {
  StreamModel m;
  m.stream = s;
  m.config = c;
  m.params = init_params(c, seed);
  m.input_stats = {std::vector<float>(c.row_width(), 0.0f), std::vector<float>(c.row_width(), 1.0f)};
  return m;
}

ControlTrack random_script(const PhonemeAlphabet& a, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PhoneSegment> phones;
  std::size_t total = 0;
  while (total < frames) {
    PhoneSegment p{a.symbol(1 + rng() % (a.size() - 1)), 16 + rng() % 33};
    if (rng() % 4 == 0) p.symbol = a.symbol(0);
    p.frames = std::min(p.frames, frames - total);
    total += p.frames;
    phones.push_back(p);
  }
  return encode_score(phones, a).control;
}

// Relative error with a floor so that near-zero derivatives compare absolutely.
double rel_err(double an, double fd, double floor) {
  return std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
}

// Fourth-order central difference of f at 0.
double five_point(double h, const std::function<double(double)>& f) {
  return (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h);
}

// ---------------------------------------------------------------------------

void receptive_field_check(Outcome& o) {
  const NetConfig c = default_stream_config(StreamId::harmonic, control_dim(10));
  const std::size_t r = receptive_field(c);
  const double ms = double(r) * kDefaultHopSeconds * 1000.0;
  o.detail << " " << r << " frames = " << ms << " ms (taps " << c.initial_taps << ", dilations 1,2,4,1,2)";
  o.require(r == 21, "receptive field 21");
  o.require(std::abs(ms - 105.0) < 1e-9, "105 ms");
}

void oracle_check(Outcome& o) {
  const NetConfig c = default_stream_config(StreamId::harmonic, control_dim(10));
  StreamModel m = identity_model(c, StreamId::harmonic, 11);
  Rng srng(5);
  for (std::size_t k = 0; k < c.input_channels; ++k) {
    m.input_stats.mean[k] = float(srng() % 100) / 10.0f;
    m.input_stats.stddev[k] = 0.5f + float(srng() % 100) / 100.0f;
  }
  const PhonemeAlphabet a = gen_synthetic_corpus(SynthSpec{}, 1).alphabet;
  const ControlTrack ctl = random_script(a, 500, 3);
  double worst = 0;
  std::size_t runs = 0, trace_mismatch = 0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u})
    for (double tau : {0.0, 1.0}) {
      const StreamOutput n = generate_naive(m, ctl, tau, seed);
      const StreamOutput f = generate_cached(m, ctl, tau, seed);
      for (std::size_t i = 0; i < n.frames.values().size(); ++i)
        worst = std::max(worst, double(std::abs(n.frames.values()[i] - f.frames.values()[i])));
      bool same = n.trace.size() == f.trace.size() && n.frames.frames() == 500;
      for (std::size_t t = 0; same && t < n.trace.size(); ++t)
        for (std::size_t k = 0; k < n.trace[t].draws.size(); ++k) {
          const cgm::Draw &x = n.trace[t].draws[k], &y = f.trace[t].draws[k];
          same &= x.component == y.component && x.uniform == y.uniform && x.normal == y.normal;
        }
      trace_mismatch += !same;
      ++runs;
    }
  o.detail << " " << runs << " runs of 500 frames, max abs diff " << worst << ", sampling decisions "
           << (trace_mismatch ? "differ" : "identical");
  o.require(trace_mismatch == 0, "identical sampling decisions");
  o.require(worst <= 1e-5, "max abs diff <= 1e-5");
}

void speedup_and_params(Outcome& speed, Outcome& params) {
  RunConfig c;
  c.out = (kRoot / "bench").string();
  c.threads = 1;
  run_or_throw("bench", c);
  auto kv = machine_section(slurp(fs::path(c.out) / "bench.txt"));
  const double s = std::stod(kv.at("harmonic.speedup"));
  speed.detail << " harmonic cached/naive " << std::fixed << std::setprecision(1) << s << "x; cached RTF "
               << std::stod(kv.at("harmonic.cached.realtime_factor")) << "x harmonic, "
               << std::stod(kv.at("all_streams.cached.realtime_factor"))
               << "x all streams (reference 20-35x real time, hardware dependent)";
  speed.require(s >= 10.0, "speedup >= 10");

  const double total = std::stod(kv.at("params.total"));
  const double ratio = total / double(kReferenceParamCount);
  params.detail << " harmonic " << kv.at("harmonic.params") << ", aperiodic " << kv.at("aperiodic.params")
                << ", vuv " << kv.at("vuv.params") << ", total " << kv.at("params.total") << " vs ~"
                << kReferenceParamCount << " (ratio " << std::fixed << std::setprecision(4) << ratio << ")";
  params.require(std::abs(ratio - 1.0) <= 0.25, "within 25%");
}

void gradient_check(Outcome& o) {
  // Tiny nets, 64-bit, the real training loss.
  double net_worst = 0;
  std::size_t net_coords = 0;
  for (StreamId s : {StreamId::harmonic, StreamId::vuv, StreamId::aperiodic}) {
    NetConfig c;
    c.input_channels = s == StreamId::vuv ? 1 : 3;
    c.aux_input_channels = s == StreamId::harmonic ? 0 : 2;
    c.initial_taps = 3;
    c.dilations = {1, 2};
    c.conv_channels = 4;
    c.skip_channels = 5;
    c.control_dim = control_dim(3);
    c.output_channels = s == StreamId::vuv ? 1 : 4 * c.input_channels;
    const bool mixture = s != StreamId::vuv;

    StreamSequences data;
    data.row_width = c.row_width();
    data.control_dim = c.control_dim;
    data.own_dim = c.input_channels;
    data.target_dim = c.input_channels;
    Rng rng(derive_seed(41, static_cast<std::uint64_t>(s)));
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t u = 0; u < 2; ++u) {
      const std::size_t T = 14;
      std::vector<float> tg(T * c.input_channels), rows(T * c.row_width(), 0.0f), ctl(T * c.control_dim, 0.0f);
      for (float& v : tg) v = mixture ? float(g(rng)) : float(rng() % 2);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < c.input_channels && t > 0; ++k)
          rows[t * c.row_width() + k] = tg[(t - 1) * c.input_channels + k];
        for (std::size_t k = c.input_channels; k < c.row_width(); ++k) rows[t * c.row_width() + k] = float(g(rng));
        ctl[t * c.control_dim + rng() % (c.control_dim - 1)] = 1.0f;
        ctl[t * c.control_dim + c.control_dim - 1] = float(rng() % 100) / 100.0f;
      }
      data.rows.push_back(rows);
      data.controls.push_back(ctl);
      data.targets.push_back(tg);
      data.utterance_ids.push_back(u);
    }
    const auto windows = make_windows(data, 8);

    NetParams64 p = convert_params<double, float>(init_params(c, 17));
    p.visit([&](const std::string&, Mat<double>& m) {
      for (double& v : m.data) v += 0.3 * g(rng);  // move away from the zero-initialized tensors
    });
    // lambda > 0: the noise is reseeded identically for every evaluation.
    auto loss = [&](const NetParams64& q) { return batch_loss(q, c, mixture, data, windows, 0.05, 9, 1).loss; };
    const auto grads = batch_loss(p, c, mixture, data, windows, 0.05, 9, 1).grads;

    std::vector<Mat<double>*> pt;
    std::vector<const Mat<double>*> gt;
    p.visit([&](const std::string&, Mat<double>& m) { pt.push_back(&m); });
    grads.visit([&](const std::string&, const Mat<double>& m) { gt.push_back(&m); });
    std::size_t done = 0;
    while (done < 120) {
      const std::size_t k = rng() % pt.size();
      if (pt[k]->data.empty()) continue;
      const std::size_t i = rng() % pt[k]->data.size();
      double& x = pt[k]->data[i];
      const double keep = x, h = 1e-5;
      x = keep + h;
      const double up = loss(p);
      x = keep - h;
      const double down = loss(p);
      x = keep;
      net_worst = std::max(net_worst, rel_err(gt[k]->data[i], (up - down) / (2 * h), 1e-4));
      ++done;
    }
    net_coords += done;
  }

  // Heads, directly on raw parameters.
  Rng rng(77);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double head_worst = 0;
  std::size_t head_coords = 0;
  for (int i = 0; i < 60; ++i) {
    std::array<double, 4> raw{u(rng), u(rng), u(rng), u(rng)};
    const double x = raw[0] + 1.5 * u(rng);
    const auto an = cgm::nll_raw(raw, x);
    for (std::size_t j = 0; j < 4; ++j) {
      const double keep = raw[j];
      const double fd = five_point(1e-3, [&](double d) {
        raw[j] = keep + d;
        const double v = cgm::nll_raw(raw, x).value;
        raw[j] = keep;
        return v;
      });
      head_worst = std::max(head_worst, rel_err(an.grad[j], fd, 1e-3));
      ++head_coords;
    }
  }
  for (int i = 0; i < 100; ++i) {
    const double r = 3 * u(rng), target = double(i % 2);
    const double fd = five_point(1e-3, [&](double d) { return cgm::vuv_nll_raw(r + d, target).value; });
    head_worst = std::max(head_worst, rel_err(cgm::vuv_nll_raw(r, target).grad_raw, fd, 1e-3));
    ++head_coords;
  }
  o.detail << " net: " << net_coords << " coordinates, max rel err " << std::scientific << std::setprecision(2)
           << net_worst << "; heads: " << head_coords << " coordinates, max rel err " << head_worst;
  o.require(net_worst <= 1e-4, "net <= 1e-4");
  o.require(head_worst <= 1e-6, "heads <= 1e-6");
}

// Composite Simpson nodes over [mu - 12 sigma, mu + 12 sigma].
struct Quadrature {
  std::vector<double> x, f;
  double h = 0;
  Quadrature(const cgm::CgmParams& p, std::size_t n) {
    const double lo = p.mu - 12 * p.sigma;
    h = 24 * p.sigma / double(n);
    for (std::size_t i = 0; i <= n; ++i) {
      x.push_back(lo + h * double(i));
      f.push_back(cgm::pdf(p, x.back()));
    }
  }
  double integrate(const std::function<double(double)>& g) const {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = i == 0 || i + 1 == x.size() ? 1 : (i % 2 ? 4 : 2);
      s += w * f[i] * g(x[i]);
    }
    return s * h / 3;
  }
};

void cgm_suite(Outcome& o) {
  const double sigma = std::sqrt(3.6e-3);
  double worst_norm = 0, worst_mean = 0, worst_var = 0;
  std::size_t multi = 0;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j) {
      // The open domain (-1, 1) sampled up to +-0.99.
      const cgm::CgmParams p{0.0, sigma, -0.99 + 0.099 * i, -0.99 + 0.099 * j};
      const Quadrature q(p, 40000);
      const double mass = q.integrate([](double) { return 1.0; });
      const double mean = q.integrate([](double x) { return x; });
      const double var = q.integrate([&](double x) { return (x - mean) * (x - mean); });
      worst_norm = std::max(worst_norm, std::abs(mass - 1));
      worst_mean = std::max(worst_mean, std::abs(mean - p.mu) / p.sigma);  // relative to the scale
      worst_var = std::max(worst_var, std::abs(var - sigma * sigma) / (sigma * sigma));
      std::size_t peaks = 0;
      for (std::size_t k = 1; k + 1 < q.f.size(); ++k) peaks += q.f[k] > q.f[k - 1] && q.f[k] >= q.f[k + 1];
      multi += peaks != 1;
    }

  // KS between 1e5 samples and the quadrature CDF.
  double worst_ks = 0;
  Rng rng(2024);
  for (const cgm::CgmParams& p : {cgm::CgmParams{0, sigma, 0.8, -0.6}, cgm::CgmParams{0.4, 1.3, -0.5, 0.9},
                                  cgm::CgmParams{0, sigma, 0, 0}}) {
    std::vector<double> s(100000);
    for (double& v : s) v = cgm::sample(p, 1.0, rng).value;
    std::sort(s.begin(), s.end());
    const Quadrature q(p, 200000);
    std::vector<double> cdf(q.x.size(), 0.0);
    for (std::size_t k = 1; k < q.x.size(); ++k) cdf[k] = cdf[k - 1] + 0.5 * q.h * (q.f[k] + q.f[k - 1]);
    double d = 0;
    for (std::size_t n = 0; n < s.size(); ++n) {
      const double pos = (s[n] - q.x.front()) / q.h;
      const std::size_t k = std::min<std::size_t>(std::size_t(std::max(pos, 0.0)), q.x.size() - 2);
      const double frac = std::clamp(pos - double(k), 0.0, 1.0);
      const double F = cdf[k] + frac * (cdf[k + 1] - cdf[k]);
      d = std::max({d, std::abs(F - double(n) / s.size()), std::abs(F - double(n + 1) / s.size())});
    }
    worst_ks = std::max(worst_ks, d);
  }
  o.detail << std::scientific << std::setprecision(2) << " 441 grid points: |mass-1| " << worst_norm
           << ", mean err " << worst_mean << ", rel var err " << worst_var << ", non-unimodal " << multi
           << "; KS " << worst_ks;
  o.require(worst_norm <= 1e-6, "normalization");
  o.require(worst_mean <= 1e-7 && worst_var <= 1e-7, "moments");
  o.require(multi == 0, "one local maximum");
  o.require(worst_ks <= 0.01, "KS <= 0.01");
}

struct Trained {
  RunConfig config;
  Corpus corpus;
  std::array<StreamModel, 3> models;
};

Trained train_reference(std::ostream& log) {
  Trained t;
  RunConfig& c = t.config;
  c.out = (kRoot / "main").string();
  for (StreamId s : kAllStreams) {
    const std::string n(stream_name(s));
    set_option(c, "stream." + n + ".conv_channels", "32");
    set_option(c, "stream." + n + ".skip_channels", "64");
  }
  c.train.epochs = 200;
  if (!std::getenv("NPSS_ACCEPTANCE_KEEP")) fs::remove_all(c.out);
  run_or_throw("synth-data", c);
  const auto t0 = std::chrono::steady_clock::now();
  run_or_throw("train", c);
  log << "  (training " << std::fixed << std::setprecision(0)
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)" << std::endl;
  t.corpus = read_corpus(c.corpus_path());
  for (StreamId s : kAllStreams)
    t.models[static_cast<std::size_t>(s)] =
        from_checkpoint(load_checkpoint(c.model_path() / (std::string(stream_name(s)) + ".npsw")));
  return t;
}

void denoising_check(Outcome& o, const Trained* t) {
  std::vector<float> v(1000000);
  Rng rng(8);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i % 97) / 7.0f;
  const std::vector<float> orig = v;
  corrupt_context(v, 0.0, rng);
  o.require(v == orig, "lambda 0 is the identity");
  corrupt_context(v, 0.01, rng);
  double m = 0, s2 = 0;
  for (std::size_t i = 0; i < v.size(); ++i) m += double(v[i]) - orig[i];
  m /= double(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) s2 += std::pow(double(v[i]) - orig[i] - m, 2);
  const double var = s2 / double(v.size() - 1);
  o.detail << " lambda 0 leaves inputs unchanged; lambda 0.01 noise variance " << std::setprecision(6)
           << var;
  o.require(std::abs(var - 0.01) <= 1e-4, "variance within 1%");

  if (!t) throw std::runtime_error("no trained model");
  const ControlTrack ctl = random_script(t->corpus.alphabet, 1000, 12);
  const Utterance g = generate_multistream(t->models, ctl, t->config.tau, t->config.seed);
  std::size_t outside = 0, checked = 0;
  for (StreamId s : {StreamId::harmonic, StreamId::aperiodic}) {
    const std::size_t N = g.stream(s).dim();
    std::vector<double> lo(N, 1e300), hi(N, -1e300), sum(N, 0), sq(N, 0);
    std::size_t n = 0;
    for (std::size_t u : t->corpus.indices(Split::train)) {
      const FrameSeq& f = t->corpus.utterances[u].stream(s);
      for (std::size_t r = 0; r < f.frames(); ++r, ++n)
        for (std::size_t k = 0; k < N; ++k) {
          const double x = f.at(r, k);
          lo[k] = std::min(lo[k], x);
          hi[k] = std::max(hi[k], x);
          sum[k] += x;
          sq[k] += x * x;
        }
    }
    for (std::size_t k = 0; k < N; ++k) {
      const double mean = sum[k] / double(n), sd = std::sqrt(std::max(0.0, sq[k] / double(n) - mean * mean));
      for (std::size_t r = 0; r < g.length(); ++r, ++checked) {
        const double x = g.stream(s).at(r, k);
        outside += !(x >= lo[k] - 3 * sd && x <= hi[k] + 3 * sd);
      }
    }
  }
  o.detail << "; free-running " << g.length() << " frames (lambda " << t->config.train.lambda << "): " << outside
           << " of " << checked << " values outside [min-3sd, max+3sd]";
  o.require(g.length() == 1000, "1000 frames");
  o.require(outside == 0, "generation stays in range");
}

// Generated utterances for the validation split with their commanded labels.
std::vector<std::pair<Utterance, std::vector<std::uint16_t>>> generate_validation(const Trained& t) {
  std::vector<std::pair<Utterance, std::vector<std::uint16_t>>> out;
  for (std::size_t u : t.corpus.indices(Split::validation)) {
    const Utterance& ref = t.corpus.utterances[u];
    out.emplace_back(generate_multistream(t.models, ref.control, t.config.tau, derive_seed(t.config.seed, u)),
                     ref.labels);
  }
  return out;
}

void learning_check(Outcome& o, const Trained& t) {
  const EvalRow row = eval_model(t.corpus, t.models, "synthetic", 0);
  o.detail << std::fixed << std::setprecision(3) << " (a) val NLL vs constant baseline:";
  for (StreamId id : kAllStreams) {
    const std::size_t s = static_cast<std::size_t>(id);
    const std::string name(stream_name(id));
    o.detail << " " << name << " " << row.nll[s] << " vs " << row.baseline_nll[s];
    o.require(row.nll[s] < row.baseline_nll[s], "NLL below baseline for " + name);
  }
  o.detail << "; (b) harmonic MCD " << row.harmonic_mcd << " dB vs mean predictor " << row.baseline_harmonic_mcd;
  o.require(row.harmonic_mcd < row.baseline_harmonic_mcd, "MCD below baseline");
  o.detail << "; (c) V/UV accuracy " << row.vuv_accuracy << "%";
  o.require(row.vuv_accuracy >= 95.0, "V/UV >= 95%");

  const auto& tpl = *t.corpus.generator_truth;
  std::size_t hits = 0, total = 0;
  for (const auto& [g, labels] : generate_validation(t)) {
    const auto mask = mid_phone_mask(labels, 0);
    const std::size_t n = std::count(mask.begin(), mask.end(), 1);
    if (n == 0) continue;
    hits += std::size_t(std::llround(phoneme_accuracy(g.stream(StreamId::harmonic), labels, tpl, mask) * n / 100.0));
    total += n;
  }
  const double acc = total ? 100.0 * double(hits) / double(total) : 0.0;
  o.detail << "; (d) commanded phoneme recognized in " << acc << "% of " << total << " mid-phone frames";
  o.require(acc >= 80.0, "phoneme following >= 80%");
}

void coherence_check(Outcome& o, const Trained& t) {
  const auto& tpl = *t.corpus.generator_truth;
  double consistent = 0;
  std::size_t frames = 0;
  for (const auto& [g, labels] : generate_validation(t)) {
    consistent += vuv_consistency(g.stream(StreamId::vuv).values(), labels, tpl) * double(labels.size()) / 100.0;
    frames += labels.size();
  }
  const double pct = 100.0 * consistent / double(frames);
  o.detail << std::fixed << std::setprecision(2) << " V/UV matches the commanded class in " << pct << "% of "
           << frames << " generated frames";
  o.require(pct >= 90.0, "consistency >= 90%");

  // Ablation: with the aux projection zeroed, the V/UV stream no longer
  // depends on the harmonic frames it is given.
  const StreamModel& v = t.models[static_cast<std::size_t>(StreamId::vuv)];
  const std::size_t u = t.corpus.indices(Split::validation).front();
  const Utterance& ref = t.corpus.utterances[u];
  const FrameSeq& h = ref.stream(StreamId::harmonic);
  FrameSeq other = h;
  for (std::size_t r = 0; r < other.frames(); ++r)
    for (float& x : other.frame(r)) x = -x + 3.0f;
  auto vuv_with = [&](const StreamModel& m, const FrameSeq& aux) {
    return generate_stream(m, ref.control, aux, 1.0, 5, DecodeMode::cached).frames;
  };
  auto probs = [&](const StreamModel& m, const FrameSeq& aux) {
    StreamOutput out = generate_stream(m, ref.control, aux, 1.0, 5, DecodeMode::cached);
    std::vector<double> p;
    for (const FrameTrace& f : out.trace) p.push_back(f.draws.at(0).uniform);
    return p;
  };
  const bool coupled = probs(v, h) != probs(v, other);
  StreamModel cut = v;
  for (float& x : cut.params.input_aux_w.data) x = 0.0f;
  const bool decoupled = probs(cut, h) == probs(cut, other) && vuv_with(cut, h) == vuv_with(cut, other);
  o.detail << "; trained V/UV responds to harmonic input: " << (coupled ? "yes" : "no")
           << ", with aux projection zeroed: " << (decoupled ? "independent" : "still coupled");
  o.require(coupled && decoupled, "ablation");
}

void determinism_check(Outcome& o) {
  const char* smoke[] = {"synth.num_phonemes=6",
                         "synth.num_utterances=12",
                         "synth.min_phones=3",
                         "synth.max_phones=5",
                         "synth.validation_fraction=0.2",
                         "train.batch_sequences=4",
                         "train.output_length=40",
                         "train.epochs=5",
                         "bench.frames=100",
                         "bench.repeats=1"};
  auto config_for = [&](const std::string& dir) {
    RunConfig c;
    c.out = (kRoot / "det" / dir).string();
    c.threads = 2;
    for (const char* s : smoke) apply_override(c, s);
    for (StreamId s : kAllStreams) {
      const std::string n = "stream." + std::string(stream_name(s));
      set_option(c, n + ".conv_channels", "8");
      set_option(c, n + ".skip_channels", "16");
      set_option(c, n + ".dilations", "1,2");
      set_option(c, n + ".initial_taps", "3");
    }
    c.generate_input = (fs::path(c.out) / "corpus" / "utt_0001.npsf").string();
    return c;
  };
  fs::remove_all(kRoot / "det");
  for (const char* d : {"a", "b"})
    for (const char* cmd : {"synth-data", "train", "generate", "eval", "bench"}) run_or_throw(cmd, config_for(d));

  auto sans_timing = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line))
      if (line.find("frames_per_second") == std::string::npos && line.find("realtime_factor") == std::string::npos &&
          line.find("speedup") == std::string::npos && line.find("_us") == std::string::npos)
        out += line + '\n';
    return out;
  };
  std::size_t compared = 0, differ = 0;
  const fs::path a = kRoot / "det" / "a", b = kRoot / "det" / "b";
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    const std::string name = rel.filename().string();
    if (name == "effective.cfg") continue;  // differs by output directory
    std::string x = slurp(e.path()), y = slurp(b / rel);
    if (name == "bench.txt") x = sans_timing(x), y = sans_timing(y);
    if (name.ends_with(".history.txt")) {
      auto strip = [](const std::string& s) {  // drop the seconds column
        std::istringstream in(s);
        std::string line, out;
        while (std::getline(in, line)) out += (line[0] == '#' ? line : line.substr(0, line.rfind(' '))) + '\n';
        return out;
      };
      x = strip(x), y = strip(y);
    }
    if (name.ends_with(".state.npsw")) continue;  // embeds per-epoch wall-clock seconds
    ++compared;
    differ += x != y;
  }
  bool complete = true;
  for (const char* f : {"model/harmonic.npsw", "model/vuv.npsw", "model/aperiodic.npsw", "generated.npsf", "eval.txt",
                        "bench.txt", "corpus/manifest.txt"})
    complete &= fs::exists(a / f) && fs::exists(b / f);
  o.detail << " reran synth-data, train, generate, eval and bench: " << compared << " files compared, " << differ
           << " differ";
  o.require(complete, "all outputs written");
  o.require(differ == 0, "bit-identical outputs");
}

}  // namespace

int main() {
  fs::create_directories(kRoot);
  std::cout << std::unitbuf;

  report(1, "receptive field", receptive_field_check);
  report(2, "cached decoder equals naive decoder", oracle_check);
  Outcome speed, params;
  try {
    speedup_and_params(speed, params);
  } catch (const std::exception& e) {
    speed.pass = params.pass = false;
    speed.detail << " [exception: " << e.what() << "]";
  }
  report(3, "cached speedup", [&](Outcome& o) {
    o.pass = speed.pass;
    o.detail << speed.detail.str();
  });
  report(4, "gradient correctness", gradient_check);
  report(5, "mixture distribution suite", cgm_suite);

  std::optional<Trained> trained;
  try {
    trained = train_reference(std::cout);
  } catch (const std::exception& e) {
    std::cout << "  training failed: " << e.what() << std::endl;
  }
  report(6, "denoising objective", [&](Outcome& o) { denoising_check(o, trained ? &*trained : nullptr); });
  report(7, "end-to-end learning", [&](Outcome& o) {
    if (!trained) throw std::runtime_error("no trained model");
    learning_check(o, *trained);
  });
  report(8, "parameter accounting", [&](Outcome& o) {
    o.pass = params.pass;
    o.detail << params.detail.str();
  });
  report(9, "multi-stream coherence", [&](Outcome& o) {
    if (!trained) throw std::runtime_error("no trained model");
    coherence_check(o, *trained);
  });
  report(10, "determinism", determinism_check);

  std::cout << (failures ? "FAILED " : "ALL PASSED ") << 10 - failures << "/10" << std::endl;
  return failures ? 1 : 0;
}
