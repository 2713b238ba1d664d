#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "npss/errors.hpp"
#include "npss/generation.hpp"

using namespace npss;

namespace {

constexpr std::size_t kAlphabet = 6;

StreamModel make_model(StreamId s, std::uint64_t seed, double weight_scale = 1.0) {
  StreamModel m;
  m.stream = s;
  m.config = testing::small_train_config(kAlphabet).net(s);
  m.params = init_params(m.config, seed);
  if (weight_scale != 1.0)
    m.params.visit([&](const std::string&, Mat<float>& t) {
      for (float& v : t.data) v = float(v * weight_scale);
    });
  const std::size_t W = m.config.row_width();
  m.input_stats = {std::vector<float>(W, 0.0f), std::vector<float>(W, 1.0f)};
  // Non-trivial statistics on the own channels.
  for (std::size_t c = 0; c < m.config.input_channels && s != StreamId::vuv; ++c) {
    m.input_stats.mean[c] = 0.1f * float(c % 7);
    m.input_stats.stddev[c] = 0.5f + 0.1f * float(c % 3);
  }
  return m;
}

ControlTrack controls(std::size_t T, std::uint64_t seed) {
  ControlTrack c;
  c.alphabet_size = kAlphabet;
  c.rows = FrameSeq(control_dim(kAlphabet), testing::random_controls(T, control_dim(kAlphabet), seed));
  return c;
}

bool same_trace(const std::vector<FrameTrace>& a, const std::vector<FrameTrace>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].draws.size() != b[t].draws.size()) return false;
    for (std::size_t k = 0; k < a[t].draws.size(); ++k) {
      const cgm::Draw &x = a[t].draws[k], &y = b[t].draws[k];
      if (x.component != y.component || x.uniform != y.uniform || x.normal != y.normal) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("cached decoder reproduces the naive decoder") {
  const StreamModel h = make_model(StreamId::harmonic, 3);
  const StreamModel v = make_model(StreamId::vuv, 4);
  const ControlTrack ctl = controls(500, 5);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (double tau : {0.0, 1.0}) {
      const StreamOutput n = generate_naive(h, ctl, tau, seed);
      const StreamOutput c = generate_cached(h, ctl, tau, seed);
      REQUIRE(n.frames.frames() == 500);
      CHECK(same_trace(n.trace, c.trace));
      CHECK(testing::max_abs_diff(n.frames.values(), c.frames.values()) <= 1e-5);

      const StreamOutput vn = generate_naive(v, ctl, tau, seed, n.frames);
      const StreamOutput vc = generate_cached(v, ctl, tau, seed, n.frames);
      CHECK(same_trace(vn.trace, vc.trace));
      CHECK(vn.frames == vc.frames);
    }
  }
}

TEST_CASE("decoder ring occupancy") {
  const StreamModel m = make_model(StreamId::harmonic, 1);
  GenState st(m.params, m.config);
  std::vector<float> row(m.config.row_width(), 0.1f), ctl(m.config.control_dim, 0.0f);
  CHECK(st.input_capacity() == 3);
  for (std::size_t t = 1; t <= 6; ++t) {
    st.step(row, ctl);
    CHECK(st.frames() == t);
    CHECK(st.input_occupancy() == std::min<std::size_t>(t, 3));
    CHECK(st.layer_occupancy(0) == std::min<std::size_t>(t, 1));
    CHECK(st.layer_occupancy(1) == std::min<std::size_t>(t, 2));
  }
  CHECK_THROWS_AS(st.step(std::vector<float>(2), ctl), DimensionError);
}

TEST_CASE("incremental steps equal the windowed forward pass") {
  const StreamModel m = make_model(StreamId::aperiodic, 2);
  const NetConfig& c = m.config;
  const std::size_t T = 30, W = c.row_width(), D = c.control_dim, R = c.window();
  const auto in = testing::random_values(T * W, 6);
  const auto ctl = testing::random_controls(T, D, 7);
  GenState st(m.params, c);
  double worst = 0;
  for (std::size_t t = 0; t < T; ++t) {
    auto raw = st.step(std::span(in).subspan(t * W, W), std::span(ctl).subspan(t * D, D));
    std::vector<float> wi(R * W, 0.0f), wc(R * D, 0.0f);
    for (std::size_t j = 0; j < R; ++j) {
      const std::ptrdiff_t q = std::ptrdiff_t(t) - std::ptrdiff_t(R - 1 - j);
      if (q < 0) continue;
      std::copy_n(in.begin() + q * W, W, wi.begin() + j * W);
      std::copy_n(ctl.begin() + q * D, D, wc.begin() + j * D);
    }
    worst = std::max(worst, testing::max_abs_diff(raw, forward<float>(m.params, c, wi, wc)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("temperature zero ignores the seed") {
  const StreamModel m = make_model(StreamId::harmonic, 3);
  const ControlTrack ctl = controls(80, 1);
  const StreamOutput a = generate_cached(m, ctl, 0.0, 1);
  const StreamOutput b = generate_cached(m, ctl, 0.0, 99);
  CHECK(a.frames == b.frames);
  CHECK(generate_cached(m, ctl, 1.0, 1).frames == generate_cached(m, ctl, 1.0, 1).frames);
  CHECK_FALSE(generate_cached(m, ctl, 1.0, 1).frames == generate_cached(m, ctl, 1.0, 2).frames);
}

TEST_CASE("generation is causal in the control track") {
  const StreamModel m = make_model(StreamId::harmonic, 3);
  const ControlTrack ctl = controls(60, 1);
  const StreamOutput base = generate_cached(m, ctl, 1.0, 4);
  for (std::size_t k : {0u, 1u, 25u, 59u}) {
    ControlTrack other = ctl;
    for (float& v : other.rows.frame(k)) v = 1.0f - v;
    const StreamOutput o = generate_cached(m, other, 1.0, 4);
    const std::size_t N = base.frames.dim();
    CHECK(std::equal(base.frames.values().begin(), base.frames.values().begin() + k * N, o.frames.values().begin()));
    CHECK_FALSE(std::equal(base.frames.values().begin() + k * N, base.frames.values().begin() + (k + 1) * N,
                           o.frames.values().begin() + k * N));
  }
}

TEST_CASE("first frame depends only on its control") {
  // With an all-zero past, frame 0 is the mode of the network output for a
  // window holding only zero rows and the first control row.
  const StreamModel m = make_model(StreamId::harmonic, 8);
  const ControlTrack ctl = controls(5, 3);
  const NetConfig& c = m.config;
  std::vector<float> wi(c.window() * c.row_width(), 0.0f), wc(c.window() * c.control_dim, 0.0f);
  std::copy_n(ctl.rows.frame(0).begin(), c.control_dim, wc.end() - std::ptrdiff_t(c.control_dim));
  const auto raw = forward<float>(m.params, c, wi, wc);
  const StreamOutput out = generate_cached(m, ctl, 0.0, 1);
  for (std::size_t ch = 0; ch < 60; ++ch) {
    const double mode = cgm::mode(cgm::squash_raw(raw[4 * ch], raw[4 * ch + 1], raw[4 * ch + 2], raw[4 * ch + 3]));
    CHECK(out.frames.at(0, ch) == doctest::Approx(m.input_stats.denormalize(ch, float(mode))).epsilon(1e-5));
  }
}

TEST_CASE("multistream output and structural ablation") {
  std::array<StreamModel, 3> models{make_model(StreamId::harmonic, 1), make_model(StreamId::aperiodic, 2),
                                    make_model(StreamId::vuv, 3)};
  const ControlTrack ctl = controls(120, 9);
  std::array<std::vector<FrameTrace>, 3> traces;
  const Utterance u = generate_multistream(models, ctl, Temperatures{}, 5, DecodeMode::cached, &traces);
  CHECK(u.streams.size() == 3);
  CHECK(u.length() == 120);
  CHECK(u.stream(StreamId::harmonic).frames() == 120);
  CHECK(u.stream(StreamId::aperiodic).frames() == 120);
  CHECK(u.stream(StreamId::vuv).frames() == 120);
  for (float v : u.stream(StreamId::vuv).values()) CHECK((v == 0.0f || v == 1.0f));
  CHECK(traces[0].size() == 120);
  CHECK(u == generate_multistream(models, ctl, Temperatures{}, 5, DecodeMode::naive));

  // The downstream streams consume the upstream frames as sampled.
  const StreamOutput v = generate_stream(models[2], ctl, u.stream(StreamId::harmonic), 0.0, 5, DecodeMode::cached);
  CHECK(v.frames == u.stream(StreamId::vuv));

  // Zeroing the aux projection decouples V/UV from the harmonic stream.
  FrameSeq h1 = u.stream(StreamId::harmonic), h2 = h1;
  for (float& x : h2.values()) x = -3.0f * x + 1.0f;
  StreamModel coupled = make_model(StreamId::vuv, 3, 4.0);
  const auto a = generate_stream(coupled, ctl, h1, 1.0, 7, DecodeMode::cached);
  const auto b = generate_stream(coupled, ctl, h2, 1.0, 7, DecodeMode::cached);
  bool differs = false;
  for (std::size_t t = 0; t < 120; ++t) differs |= a.trace[t].draws[0].uniform != b.trace[t].draws[0].uniform;
  CHECK(differs);
  StreamModel ablated = coupled;
  std::fill(ablated.params.input_aux_w.data.begin(), ablated.params.input_aux_w.data.end(), 0.0f);
  const auto c = generate_stream(ablated, ctl, h1, 1.0, 7, DecodeMode::cached);
  const auto d = generate_stream(ablated, ctl, h2, 1.0, 7, DecodeMode::cached);
  CHECK(c.frames == d.frames);
  for (std::size_t t = 0; t < 120; ++t) CHECK(c.trace[t].draws[0].uniform == d.trace[t].draws[0].uniform);
}

TEST_CASE("mismatched checkpoints and inputs are rejected") {
  std::array<StreamModel, 3> models{make_model(StreamId::harmonic, 1), make_model(StreamId::aperiodic, 2),
                                    make_model(StreamId::vuv, 3)};
  const ControlTrack ctl = controls(10, 1);
  auto swapped = models;
  std::swap(swapped[1], swapped[2]);
  CHECK_THROWS_AS(generate_multistream(swapped, ctl, {}, 1), ConfigError);
  auto narrow = models;
  narrow[0].input_stats.mean.pop_back();
  narrow[0].input_stats.stddev.pop_back();
  CHECK_THROWS_AS(generate_multistream(narrow, ctl, {}, 1), ConfigError);
  ControlTrack wrong;
  wrong.alphabet_size = 7;
  wrong.rows = FrameSeq(10, control_dim(7));
  CHECK_THROWS_AS(generate_multistream(models, wrong, {}, 1), ConfigError);
  CHECK_THROWS_AS(generate_stream(models[2], ctl, FrameSeq(10, 4), 0.0, 1, DecodeMode::cached), DimensionError);

  StreamModel broken = models[0];
  broken.params.final_b.data[0] = std::nanf("");
  try {
    generate_cached(broken, ctl, 1.0, 1);
    FAIL("expected a generation error");
  } catch (const GenerationError& e) {
    CHECK(e.frame() == 0);
  }
}

TEST_CASE("labels read back from controls") {
  const PhonemeAlphabet alpha({"sil", "a", "b", "c", "d", "e"});
  const EncodedScore s = encode_score(std::vector<PhoneSegment>{{"sil", 3}, {"a", 4}, {"c", 2}, {"sil", 3}}, alpha);
  CHECK(labels_from_control(s.control) == s.labels);
}

TEST_CASE("benchmark timing grows with the frame count") {
  const StreamModel m = make_model(StreamId::harmonic, 1);
  for (DecodeMode mode : {DecodeMode::naive, DecodeMode::cached}) {
    const BenchResult small = bench_generation(m, 100, mode, 3);
    const BenchResult large = bench_generation(m, 800, mode, 3);
    CHECK(large.median_seconds > small.median_seconds);
    CHECK(small.frames_per_second > 0);
    CHECK(small.realtime_factor == doctest::Approx(small.frames_per_second * kDefaultHopSeconds));
    if (mode == DecodeMode::cached) CHECK(small.stage_seconds.size() == 2 + m.config.dilations.size());
  }
  CHECK_THROWS_AS(bench_generation(m, 50, DecodeMode::cached, 1), ConfigError);
}
