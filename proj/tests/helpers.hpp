#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>

#include "npss/features.hpp"
#include "npss/netcore.hpp"
#include "npss/rng.hpp"
#include "npss/training.hpp"

namespace testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
  std::filesystem::path p = std::filesystem::path(NPSS_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// N=2, C=3, S=3, taps=2, dilations [1], control_dim=4.
inline npss::NetConfig tiny_config(std::size_t aux = 0, bool mixture = true) {
  npss::NetConfig c;
  c.input_channels = 2;
  c.aux_input_channels = aux;
  c.initial_taps = 2;
  c.dilations = {1};
  c.conv_channels = 3;
  c.skip_channels = 3;
  c.control_dim = 4;
  c.output_channels = mixture ? 8 : 1;
  return c;
}

inline npss::SynthSpec small_spec() {
  npss::SynthSpec s;
  s.num_phonemes = 6;
  s.num_utterances = 10;
  s.min_phones = 3;
  s.max_phones = 5;
  s.min_phone_frames = 8;
  s.max_phone_frames = 16;
  s.min_sil_frames = 6;
  s.max_sil_frames = 10;
  return s;
}

// Small nets for quick training runs: C=8, S=16, taps 3, dilations [1,2].
inline npss::TrainConfig small_train_config(std::size_t alphabet_size, std::size_t epochs = 20) {
  npss::TrainConfig t = npss::default_train_config(alphabet_size);
  for (npss::NetConfig& n : t.nets) {
    n.initial_taps = 3;
    n.dilations = {1, 2};
    n.conv_channels = 8;
    n.skip_channels = 16;
  }
  t.batch_sequences = 4;
  t.output_length = 40;
  t.learning_rate = 3e-3;
  t.epochs = epochs;
  t.patience = epochs;
  t.threads = 1;
  return t;
}

inline std::vector<float> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  npss::Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<float> v(n);
  for (float& x : v) x = float(g(rng));
  return v;
}

// Random one-hot-ish control rows: one active entry plus a position value.
inline std::vector<float> random_controls(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  npss::Rng rng(seed);
  std::vector<float> v(rows * dim, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    v[r * dim + rng() % (dim - 1)] = 1.0f;
    v[r * dim + dim - 1] = float((rng() % 100) / 100.0);
  }
  return v;
}

}  // namespace testing
