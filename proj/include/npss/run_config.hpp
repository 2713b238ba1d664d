#pragma once

// Flat key=value run configuration shared by every command.
//
//   out=runs/demo
//   seed=7
//   synth.num_utterances=50
//   stream.harmonic.conv_channels=100
//   stream.harmonic.dilations=1,2,4,1,2
//   train.lambda=0.05
//   generate.tau.harmonic=0.5

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "npss/features.hpp"
#include "npss/generation.hpp"
#include "npss/training.hpp"

namespace npss {

struct RunConfig {
  std::string out = "out";
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::string corpus_dir;  // empty: <out>/corpus
  std::string model_dir;   // empty: <out>/model

  SynthSpec synth;
  TrainConfig train;  // per-stream nets: only taps, dilations and widths are read
  std::vector<StreamId> train_streams{StreamId::harmonic, StreamId::vuv, StreamId::aperiodic};
  bool train_resume = true;
  std::size_t train_stop_after = 0;  // 0: run to completion

  Temperatures tau;
  std::string generate_input;   // .npsf utterance or phoneme script
  std::string generate_output;  // empty: <out>/generated.npsf
  DecodeMode generate_mode = DecodeMode::cached;

  std::size_t bench_frames = 500;
  std::size_t bench_repeats = 3;

  std::string voice = "synthetic";

  RunConfig();

  std::filesystem::path corpus_path() const;
  std::filesystem::path model_path() const;
  std::filesystem::path generate_output_path() const;

  /// Per-stream network for a corpus with this many phonemes.
  NetConfig net_for(StreamId s, std::size_t alphabet_size) const;
  /// TrainConfig with nets sized for the alphabet and seed/threads filled in.
  TrainConfig train_config_for(std::size_t alphabet_size) const;

  bool operator==(const RunConfig&) const = default;
};

/// Applies one assignment. Throws LookupError for unknown keys and
/// ConfigError for malformed values.
void set_option(RunConfig& config, std::string_view key, std::string_view value);
/// Parses "key=value" and applies it.
void apply_override(RunConfig& config, std::string_view assignment);

/// Every key in canonical order, one per line.
std::string config_to_text(const RunConfig& config);
/// Applies the lines of `text` on top of `base` ('#' comments, blank lines ok).
RunConfig config_from_text(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace npss
