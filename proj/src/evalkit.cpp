#include "npss/evalkit.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "npss/cgm.hpp"
#include "npss/errors.hpp"
#include "npss/parallel.hpp"

namespace npss {

namespace {

const double kMcdScale = 10.0 / std::numbers::ln10;

std::string fmt(double v, int digits) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::vector<double> mcd_frames(const FrameSeq& ref, const FrameSeq& pred) {
  if (ref.frames() != pred.frames() || ref.dim() != pred.dim())
    throw DimensionError("mcd: shapes differ (" + std::to_string(ref.frames()) + "x" + std::to_string(ref.dim()) +
                         " vs " + std::to_string(pred.frames()) + "x" + std::to_string(pred.dim()) + ")");
  std::vector<double> out(ref.frames());
  for (std::size_t t = 0; t < ref.frames(); ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < ref.dim(); ++c) {
      double d = double(ref.at(t, c)) - double(pred.at(t, c));
      s += d * d;
    }
    out[t] = kMcdScale * std::sqrt(2.0 * s);
  }
  return out;
}

double mcd(const FrameSeq& ref, const FrameSeq& pred, std::span<const std::uint8_t> mask) {
  std::vector<double> per = mcd_frames(ref, pred);
  if (!mask.empty() && mask.size() != per.size()) throw DimensionError("mcd: mask length differs from frames");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < per.size(); ++t) {
    if (!mask.empty() && !mask[t]) continue;
    sum += per[t];
    ++n;
  }
  if (n == 0) throw EvaluationError("mcd: no frames left to score");
  return sum / double(n);
}

double vuv_accuracy(std::span<const float> ref, std::span<const float> pred) {
  if (ref.size() != pred.size()) throw DimensionError("vuv_accuracy: lengths differ");
  if (ref.empty()) throw EvaluationError("vuv_accuracy: no frames");
  std::size_t hit = 0;
  for (std::size_t t = 0; t < ref.size(); ++t) hit += ref[t] == pred[t];
  return 100.0 * double(hit) / double(ref.size());
}

std::vector<std::uint8_t> build_mask(std::span<const std::uint16_t> labels, std::size_t silence_id,
                                     std::span<const float> ref_vuv, std::span<const float> pred_vuv) {
  if (labels.size() != ref_vuv.size() || labels.size() != pred_vuv.size())
    throw DimensionError("build_mask: sequences are not aligned");
  std::vector<std::uint8_t> m(labels.size());
  for (std::size_t t = 0; t < labels.size(); ++t) m[t] = labels[t] != silence_id && ref_vuv[t] == pred_vuv[t];
  return m;
}

std::vector<std::uint8_t> mid_phone_mask(std::span<const std::uint16_t> labels, std::size_t silence_id) {
  std::vector<std::uint8_t> m(labels.size(), 0);
  for (std::size_t s = 0; s < labels.size();) {
    std::size_t e = s;
    while (e < labels.size() && labels[e] == labels[s]) ++e;
    if (labels[s] != silence_id) {
      const std::size_t n = e - s;
      for (std::size_t j = n / 4; j < n - n / 4; ++j) m[s + j] = 1;
    }
    s = e;
  }
  return m;
}

double phoneme_accuracy(const FrameSeq& harmonic, std::span<const std::uint16_t> labels,
                        std::span<const PhonemeTemplate> templates, std::span<const std::uint8_t> mask) {
  if (harmonic.frames() != labels.size() || mask.size() != labels.size())
    throw DimensionError("phoneme_accuracy: sequences are not aligned");
  std::size_t hit = 0, n = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (!mask[t]) continue;
    ++n;
    hit += nearest_template(templates, harmonic.frame(t)) == labels[t];
  }
  if (n == 0) throw EvaluationError("phoneme_accuracy: no frames selected");
  return 100.0 * double(hit) / double(n);
}

double vuv_consistency(std::span<const float> vuv, std::span<const std::uint16_t> labels,
                       std::span<const PhonemeTemplate> templates) {
  if (vuv.size() != labels.size()) throw DimensionError("vuv_consistency: sequences are not aligned");
  if (vuv.empty()) throw EvaluationError("vuv_consistency: no frames");
  std::size_t hit = 0;
  for (std::size_t t = 0; t < vuv.size(); ++t) hit += (vuv[t] == 1.0f) == templates[labels[t]].voiced;
  return 100.0 * double(hit) / double(vuv.size());
}

FrameSeq teacher_forced_prediction(const StreamModel& model, const Corpus& corpus, std::size_t utterance) {
  const std::size_t ids[] = {utterance};
  StreamSequences data = prepare_sequences(corpus, model.stream, ids, model.input_stats);
  Rng unused(0);
  WindowInputs win = build_window(data, model.config, {0, 0, data.frames(0)}, 0.0, unused);
  std::vector<float> raw = forward_batch<float>(model.params, model.config, win.inputs, win.controls, win.first_output);
  const std::size_t T = data.frames(0), N = model.config.input_channels;
  FrameSeq out(T, N);
  for (std::size_t t = 0; t < T; ++t) {
    if (model.is_mixture()) {
      for (std::size_t c = 0; c < N; ++c) out.at(t, c) = model.input_stats.denormalize(c, raw[t * 4 * N + 4 * c]);
    } else {
      out.at(t, 0) = cgm::vuv_prob(raw[t]) >= 0.5 ? 1.0f : 0.0f;
    }
  }
  return out;
}

double constant_baseline_nll(const Corpus& corpus, StreamId stream) {
  const auto train = corpus.indices(Split::train);
  const auto val = corpus.indices(Split::validation);
  if (train.empty() || val.empty()) throw EvaluationError("baseline needs training and validation utterances");
  double total = 0.0;
  std::size_t n = 0;
  if (stream == StreamId::vuv) {
    double voiced = 0.0, frames = 0.0;
    for (std::size_t u : train)
      for (float v : corpus.utterances[u].stream(stream).values()) voiced += v, frames += 1.0;
    const double p = std::clamp(voiced / frames, cgm::kProbClamp, 1.0 - cgm::kProbClamp);
    for (std::size_t u : val)
      for (float v : corpus.utterances[u].stream(stream).values()) {
        total += v == 1.0f ? -std::log(p) : -std::log1p(-p);
        ++n;
      }
  } else {
    const ChannelStats st = compute_stats(corpus, stream, train);
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    for (std::size_t u : val) {
      const FrameSeq& f = corpus.utterances[u].stream(stream);
      for (std::size_t t = 0; t < f.frames(); ++t)
        for (std::size_t c = 0; c < f.dim(); ++c) {
          const double z = st.normalize(c, f.at(t, c));
          total += half_log_2pi + 0.5 * z * z;
          ++n;
        }
    }
  }
  return total / double(n);
}

EvalRow eval_model(const Corpus& corpus, const std::array<StreamModel, 3>& models, const std::string& voice,
                   std::size_t threads) {
  for (StreamId s : kAllStreams) {
    const StreamModel& m = models[static_cast<std::size_t>(s)];
    if (m.stream != s) throw ConfigError("no model for stream " + std::string(stream_name(s)));
    if (m.config.control_dim != control_dim(corpus.alphabet.size()))
      throw ConfigError(std::string(stream_name(s)) + " model does not match the corpus alphabet");
  }
  const auto val = corpus.indices(Split::validation);
  if (val.empty()) throw EvaluationError("validation split is empty");
  for (std::size_t u : val)
    for (StreamId s : kAllStreams)
      if (!corpus.utterances[u].has_stream(stream_name(s)))
        throw ConfigError("validation utterance " + corpus.names[u] + " lacks stream " + std::string(stream_name(s)));
  const std::size_t sil = corpus.alphabet.index(kSilence);
  const ChannelStats hstats = compute_stats(corpus, StreamId::harmonic, corpus.indices(Split::train));

  struct Part {
    std::vector<double> h, a, base;
    std::vector<float> vref, vpred;
    std::size_t counted = 0, excluded = 0;
  };
  std::vector<Part> parts(val.size());
  parallel_for(val.size(), threads, [&](std::size_t i) {
    const std::size_t u = val[i];
    const Utterance& utt = corpus.utterances[u];
    FrameSeq hp = teacher_forced_prediction(models[0], corpus, u);
    FrameSeq ap = teacher_forced_prediction(models[1], corpus, u);
    FrameSeq vp = teacher_forced_prediction(models[2], corpus, u);
    const FrameSeq& vr = utt.stream(StreamId::vuv);
    auto mask = build_mask(utt.labels, sil, vr.values(), vp.values());
    FrameSeq mean_pred(utt.length(), hp.dim());
    for (std::size_t t = 0; t < utt.length(); ++t)
      for (std::size_t c = 0; c < hp.dim(); ++c) mean_pred.at(t, c) = hstats.mean[c];
    auto hd = mcd_frames(utt.stream(StreamId::harmonic), hp);
    auto ad = mcd_frames(utt.stream(StreamId::aperiodic), ap);
    auto bd = mcd_frames(utt.stream(StreamId::harmonic), mean_pred);
    Part& p = parts[i];
    for (std::size_t t = 0; t < utt.length(); ++t) {
      if (utt.labels[t] != sil) {
        p.vref.push_back(vr.at(t, 0));
        p.vpred.push_back(vp.at(t, 0));
      }
      if (!mask[t]) {
        ++p.excluded;
        continue;
      }
      ++p.counted;
      p.h.push_back(hd[t]);
      p.a.push_back(ad[t]);
      p.base.push_back(bd[t]);
    }
  });

  EvalRow row;
  row.voice = voice;
  double hs = 0, as = 0, bs = 0;
  std::vector<float> vref, vpred;
  for (const Part& p : parts) {
    for (double v : p.h) hs += v;
    for (double v : p.a) as += v;
    for (double v : p.base) bs += v;
    vref.insert(vref.end(), p.vref.begin(), p.vref.end());
    vpred.insert(vpred.end(), p.vpred.begin(), p.vpred.end());
    row.frames_counted += p.counted;
    row.frames_excluded += p.excluded;
  }
  // With every frame excluded (e.g. an untrained V/UV net) the distortions
  // are undefined and reported as NaN.
  const double counted = row.frames_counted ? double(row.frames_counted) : std::nan("");
  row.harmonic_mcd = hs / counted;
  row.aperiodic_mcd = as / counted;
  row.baseline_harmonic_mcd = bs / counted;
  row.vuv_accuracy = vref.empty() ? std::nan("") : vuv_accuracy(vref, vpred);
  for (StreamId s : kAllStreams) {
    const std::size_t k = static_cast<std::size_t>(s);
    const StreamModel& m = models[k];
    StreamSequences data = prepare_sequences(corpus, s, val, m.input_stats);
    row.nll[k] = evaluate_nll(m.params, m.config, m.is_mixture(), data, threads);
    row.baseline_nll[k] = constant_baseline_nll(corpus, s);
  }
  return row;
}

std::string format_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "voice" << std::right << std::setw(20) << "harmonic MCD (dB)" << std::setw(21)
     << "aperiodic MCD (dB)" << std::setw(19) << "V/UV accuracy (%)" << '\n';
  for (const EvalRow& r : report.rows)
    os << std::left << std::setw(16) << r.voice << std::right << std::setw(20) << fmt(r.harmonic_mcd, 2)
       << std::setw(21) << fmt(r.aperiodic_mcd, 2) << std::setw(19) << fmt(r.vuv_accuracy, 2) << '\n';
  return os.str();
}

std::string format_keyvalue(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "rows=" << report.rows.size() << '\n';
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const EvalRow& r = report.rows[i];
    const std::string p = "row" + std::to_string(i) + ".";
    os << p << "voice=" << r.voice << '\n'
       << p << "harmonic_mcd_db=" << r.harmonic_mcd << '\n'
       << p << "aperiodic_mcd_db=" << r.aperiodic_mcd << '\n'
       << p << "vuv_accuracy_pct=" << r.vuv_accuracy << '\n'
       << p << "frames_counted=" << r.frames_counted << '\n'
       << p << "frames_excluded=" << r.frames_excluded << '\n'
       << p << "baseline_harmonic_mcd_db=" << r.baseline_harmonic_mcd << '\n';
    for (StreamId s : kAllStreams) {
      const std::size_t k = static_cast<std::size_t>(s);
      os << p << "nll." << stream_name(s) << '=' << r.nll[k] << '\n'
         << p << "baseline_nll." << stream_name(s) << '=' << r.baseline_nll[k] << '\n';
    }
  }
  return os.str();
}

}  // namespace npss
