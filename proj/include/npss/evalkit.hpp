#pragma once

// Objective scores: cepstral distortion, V/UV accuracy, frame masks and
// teacher-forced evaluation of trained models.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "npss/features.hpp"
#include "npss/training.hpp"

namespace npss {

/// (10 / ln 10) * sqrt(2 * sum_i (c_i - c'_i)^2), averaged over frames with
/// mask[t] set (all frames when the mask is empty).
double mcd(const FrameSeq& ref, const FrameSeq& pred, std::span<const std::uint8_t> mask = {});

/// Per-frame distortion values (no averaging).
std::vector<double> mcd_frames(const FrameSeq& ref, const FrameSeq& pred);

/// 100 * matching / total.
double vuv_accuracy(std::span<const float> ref, std::span<const float> pred);

/// 1 for frames to score: not silence and ref_vuv == pred_vuv.
std::vector<std::uint8_t> build_mask(std::span<const std::uint16_t> labels, std::size_t silence_id,
                                     std::span<const float> ref_vuv, std::span<const float> pred_vuv);

/// Frames in the middle half of each non-silence phone run.
std::vector<std::uint8_t> mid_phone_mask(std::span<const std::uint16_t> labels, std::size_t silence_id);

/// Percent of masked frames whose nearest template is the commanded phoneme.
double phoneme_accuracy(const FrameSeq& harmonic, std::span<const std::uint16_t> labels,
                        std::span<const PhonemeTemplate> templates, std::span<const std::uint8_t> mask);

/// Percent of frames whose V/UV value equals the commanded phoneme's class.
double vuv_consistency(std::span<const float> vuv, std::span<const std::uint16_t> labels,
                       std::span<const PhonemeTemplate> templates);

struct EvalRow {
  std::string voice;
  double harmonic_mcd = 0.0;   // dB
  double aperiodic_mcd = 0.0;  // dB
  double vuv_accuracy = 0.0;   // percent
  std::size_t frames_counted = 0;
  std::size_t frames_excluded = 0;
  // Teacher-forced validation NLL per stream (standardized units) and the
  // matching constant-distribution baselines.
  std::array<double, 3> nll{};
  std::array<double, 3> baseline_nll{};
  double baseline_harmonic_mcd = 0.0;  // predicting the training mean
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

/// Teacher-forced outputs for one utterance: the mixture mean (de-standardized)
/// per channel, or the V/UV decision p >= 0.5.
FrameSeq teacher_forced_prediction(const StreamModel& model, const Corpus& corpus, std::size_t utterance);

/// Scores models (indexed by StreamId) on the validation split.
EvalRow eval_model(const Corpus& corpus, const std::array<StreamModel, 3>& models, const std::string& voice,
                   std::size_t threads = 0);

/// Mean NLL of a per-channel Gaussian (or Bernoulli for V/UV) fitted to the
/// training split, scored on the validation split in standardized units.
double constant_baseline_nll(const Corpus& corpus, StreamId stream);

std::string format_table(const EvalReport& report);
std::string format_keyvalue(const EvalReport& report);

}  // namespace npss
