// Randomized checks of invariants that should hold for every input.

#include <chrono>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "npss/cgm.hpp"
#include "npss/evalkit.hpp"
#include "npss/generation.hpp"
#include "npss/run_config.hpp"

using namespace npss;

namespace {

NetConfig random_config(Rng& rng, std::size_t aux_max = 3) {
  NetConfig c;
  c.input_channels = 1 + rng() % 3;
  c.aux_input_channels = rng() % (aux_max + 1);
  c.initial_taps = 1 + rng() % 4;
  c.dilations.resize(1 + rng() % 3);
  for (auto& d : c.dilations) d = 1 + rng() % 4;
  c.conv_channels = 2 + rng() % 4;
  c.skip_channels = 2 + rng() % 4;
  c.control_dim = 3 * (2 + rng() % 3) + 3;
  c.output_channels = 4 * c.input_channels;
  return c;
}

NetParams random_params(const NetConfig& c, std::uint64_t seed) {
  NetParams p = zero_params<float>(c);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 0.6);
  p.visit([&](const std::string&, Mat<float>& m) {
    for (float& v : m.data) v = float(g(rng));
  });
  return p;
}

StreamModel model_for(const NetConfig& c, std::uint64_t seed) {
  StreamModel m;
  m.config = c;
  m.params = random_params(c, seed);
  m.input_stats = {std::vector<float>(c.row_width(), 0.0f), std::vector<float>(c.row_width(), 1.0f)};
  return m;
}

ControlTrack random_track(std::size_t T, std::size_t P, std::uint64_t seed) {
  ControlTrack t;
  t.alphabet_size = P;
  t.rows = FrameSeq(control_dim(P), testing::random_controls(T, control_dim(P), seed));
  return t;
}

}  // namespace

TEST_CASE("coarse coding is a partition of unity") {
  for (int i = 0; i <= 1000; ++i) {
    const auto c = coarse_code_position(i / 1000.0);
    CHECK(c[0] >= 0.0f);
    CHECK(c[1] >= 0.0f);
    CHECK(c[2] >= 0.0f);
    CHECK(double(c[0]) + c[1] + c[2] == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("control vectors have width 3P + 3") {
  Rng rng(1);
  for (std::size_t P = 1; P <= 12; ++P) {
    std::vector<std::string> sym{"sil"};
    for (std::size_t i = 1; i < P; ++i) sym.push_back("p" + std::to_string(i));
    const PhonemeAlphabet a(sym);
    for (int k = 0; k < 5; ++k) {
      const auto v = encode_control(sym[rng() % P], sym[rng() % P], sym[rng() % P], double(rng() % 101) / 100.0, a);
      CHECK(v.size() == 3 * P + 3);
    }
  }
}

TEST_CASE("corpus splits are disjoint and serialization is deterministic") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    SynthSpec s = testing::small_spec();
    s.num_utterances = 6 + seed * 3;
    s.validation_fraction = 0.1 * double(seed);
    const Corpus c = gen_synthetic_corpus(s, seed);
    const auto tr = c.indices(Split::train), va = c.indices(Split::validation);
    CHECK(tr.size() + va.size() == c.utterances.size());
    for (std::size_t v : va) CHECK(std::find(tr.begin(), tr.end(), v) == tr.end());
    for (std::size_t i = 0; i < c.utterances.size(); ++i) {
      const auto bytes = encode_features(c.utterances[i]);
      CHECK(bytes == encode_features(gen_synthetic_corpus(s, seed).utterances[i]));
      CHECK(decode_features(bytes) == c.utterances[i]);
    }
  }
}

TEST_CASE("network causality and empirical receptive field") {
  Rng rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    const NetConfig c = random_config(rng);
    const NetParams p = random_params(c, trial);
    const std::size_t R = receptive_field(c), W = c.row_width(), D = c.control_dim, O = c.output_channels;
    const std::size_t P = R + 12, t = P - 1;
    const auto in = testing::random_values(P * W, 100 + trial);
    const auto ctl = testing::random_controls(P, D, 200 + trial);
    const auto base = forward_batch<float>(p, c, in, ctl, 0);
    CHECK(forward_batch<float>(p, c, in, ctl, 0) == base);  // pure
    std::size_t oldest = 0;
    for (std::size_t lag = 1; lag <= t; ++lag) {
      auto pert = in;
      for (std::size_t k = 0; k < c.input_channels; ++k) pert[(t - lag + 1) * W + k] += 1.0f;
      const auto out = forward_batch<float>(p, c, pert, ctl, 0);
      if (!std::equal(base.end() - O, base.end(), out.end() - O)) oldest = lag;
    }
    INFO("taps ", c.initial_taps, " layers ", c.dilations.size());
    CHECK(oldest == R - 1);
  }
}

TEST_CASE("cached and naive decoders agree across configurations") {
  Rng rng(3);
  for (int trial = 0; trial < 9; ++trial) {
    const StreamId s = kAllStreams[trial % 3];
    NetConfig c = default_stream_config(s, control_dim(4));
    c.initial_taps = 1 + rng() % 4;
    c.dilations.resize(1 + rng() % 3);
    for (auto& d : c.dilations) d = 1 + rng() % 4;
    c.conv_channels = 2 + rng() % 6;
    c.skip_channels = 2 + rng() % 6;
    StreamModel m = model_for(c, trial);
    m.stream = s;
    m.params = init_params(c, trial);
    const ControlTrack ctl = random_track(60, 4, trial);
    for (double tau : {0.0, 0.5, 1.0}) {
      const std::size_t A = c.aux_input_channels;
      const std::vector<float> aux_vals = testing::random_values(60 * A, trial + 20);
      const FrameSeq aux = A ? FrameSeq(A, aux_vals) : FrameSeq();
      const StreamOutput a = generate_naive(m, ctl, tau, trial + 10, aux);
      const StreamOutput b = generate_cached(m, ctl, tau, trial + 10, aux);
      CHECK(testing::max_abs_diff(a.frames.values(), b.frames.values()) <= 1e-5);
      bool same = a.trace.size() == b.trace.size();
      for (std::size_t t = 0; same && t < a.trace.size(); ++t)
        for (std::size_t k = 0; k < a.trace[t].draws.size(); ++k)
          same &= a.trace[t].draws[k].component == b.trace[t].draws[k].component &&
                  a.trace[t].draws[k].uniform == b.trace[t].draws[k].uniform;
      CHECK(same);
    }
  }
}

TEST_CASE("cached cost does not grow with the receptive field") {
  NetConfig narrow = default_stream_config(StreamId::harmonic, 33);
  NetConfig wide = narrow;
  for (auto& d : wide.dilations) d *= 16;  // receptive field 21 -> 251
  StreamModel a = model_for(narrow, 1), b = model_for(wide, 1);
  a.params = init_params(narrow, 1);
  b.params = init_params(wide, 1);
  // Best of several runs to damp scheduler noise.
  auto best = [](const StreamModel& m) {
    double s = 1e9;
    for (int i = 0; i < 3; ++i) s = std::min(s, bench_generation(m, 300, DecodeMode::cached, 1).median_seconds);
    return s;
  };
  const double ta = best(a), tb = best(b);
  CHECK(tb < 1.5 * ta);
}

TEST_CASE("mixture moments hold for random parameters") {
  Rng rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const cgm::CgmParams p{3 * u(rng), 0.01 + 2 * std::abs(u(rng)), 0.999 * u(rng), 0.999 * u(rng)};
    const cgm::Mixture m = cgm::expand(p);
    double w = 0, mean = 0, second = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      w += m.weight[k];
      mean += m.weight[k] * m.mean[k];
    }
    for (std::size_t k = 0; k < 4; ++k)
      second += m.weight[k] * ((m.mean[k] - p.mu) * (m.mean[k] - p.mu) + m.stddev * m.stddev);
    CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(mean - p.mu) <= 1e-12 * (1 + std::abs(p.mu)));
    CHECK(second == doctest::Approx(p.sigma * p.sigma).epsilon(1e-10));
    CHECK(cgm::cdf(p, p.mu + 40 * p.sigma) == doctest::Approx(1.0));
  }
}

TEST_CASE("frame NLL is a sum over channels and permutes with them") {
  Rng rng(4);
  const std::size_t N = 6;
  for (int trial = 0; trial < 10; ++trial) {
    const auto raw = testing::random_values(4 * N, 50 + trial);
    const auto tg = testing::random_values(N, 70 + trial);
    std::vector<double> rawd(raw.begin(), raw.end());
    std::vector<double> grad(4 * N);
    const double total = head_nll<double>(true, rawd, tg, N, grad);
    double sum = 0;
    for (std::size_t c = 0; c < N; ++c)
      sum += cgm::nll(cgm::squash_raw(rawd[4 * c], rawd[4 * c + 1], rawd[4 * c + 2], rawd[4 * c + 3]), tg[c]).value;
    CHECK(total == doctest::Approx(sum).epsilon(1e-12));

    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> praw(4 * N), pgrad(4 * N);
    std::vector<float> ptg(N);
    for (std::size_t c = 0; c < N; ++c) {
      std::copy_n(rawd.begin() + 4 * perm[c], 4, praw.begin() + 4 * c);
      ptg[c] = tg[perm[c]];
    }
    CHECK(head_nll<double>(true, praw, ptg, N, pgrad) == doctest::Approx(total).epsilon(1e-12));
    for (std::size_t c = 0; c < N; ++c)
      for (std::size_t k = 0; k < 4; ++k) CHECK(pgrad[4 * c + k] == grad[4 * perm[c] + k]);
  }
}

TEST_CASE("distortion behaves as a metric") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::size_t T = 5 + s, N = 8;
    const FrameSeq a(N, testing::random_values(T * N, 3 * s)), b(N, testing::random_values(T * N, 3 * s + 1)),
        c(N, testing::random_values(T * N, 3 * s + 2));
    CHECK(mcd(a, b) >= 0.0);
    CHECK(mcd(a, a) == 0.0);
    CHECK(mcd(a, b) > 0.0);
    CHECK(mcd(a, b) == mcd(b, a));
    CHECK(mcd(a, c) <= mcd(a, b) + mcd(b, c) + 1e-12);
    const std::vector<std::uint8_t> all(T, 1);
    CHECK(mcd(a, b, all) == mcd(a, b));
    const auto per = mcd_frames(a, b);
    std::vector<std::uint8_t> some(T, 0);
    some[0] = some[T - 1] = 1;
    CHECK(mcd(a, b, some) == doctest::Approx((per[0] + per[T - 1]) / 2));
  }
}

TEST_CASE("run configuration text round trips") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    RunConfig c;
    c.seed = rng();
    c.threads = rng() % 8;
    c.out = "runs/t" + std::to_string(trial);
    c.synth.num_utterances = 1 + rng() % 100;
    c.synth.noise_level = double(rng() % 1000) / 997.0;
    c.train.lambda = double(rng() % 1000) / 3333.0;
    c.train.learning_rate = 1e-4 * double(1 + rng() % 50);
    c.train.net(StreamId::aperiodic).dilations = {1 + rng() % 5, 1 + rng() % 9};
    c.train.net(StreamId::vuv).conv_channels = 1 + rng() % 64;
    c.train_streams = {StreamId::vuv};
    c.tau.harmonic = double(rng() % 100) / 99.0;
    c.generate_mode = trial % 2 ? DecodeMode::naive : DecodeMode::cached;
    c.train_resume = trial % 3 != 0;
    CHECK(config_from_text(config_to_text(c)) == c);
  }
}

TEST_CASE("checkpoints round trip for random configurations") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Checkpoint ck;
    ck.stream = std::string(stream_name(kAllStreams[trial % 3]));
    ck.config = random_config(rng);
    ck.params = random_params(ck.config, trial);
    if (trial % 2) ck.put("XTRA", std::vector<std::uint8_t>(trial * 7, std::uint8_t(trial)));
    const auto bytes = encode_checkpoint(ck);
    CHECK(decode_checkpoint(bytes) == ck);
    CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
  }
}
