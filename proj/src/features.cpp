#include "npss/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "npss/binio.hpp"
#include "npss/errors.hpp"
#include "npss/rng.hpp"

namespace npss {

namespace {

constexpr std::string_view kFeatureMagic = "NPSF";
constexpr std::uint32_t kFeatureVersion = 1;

bool finite_all(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

float parse_float(std::string_view s, const std::string& where) {
  float v = 0.0f;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("bad number '" + std::string(s) + "' in " + where);
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace

std::string_view stream_name(StreamId id) {
  switch (id) {
    case StreamId::harmonic: return "harmonic";
    case StreamId::aperiodic: return "aperiodic";
    case StreamId::vuv: return "vuv";
  }
  return "?";
}

StreamId stream_from_name(std::string_view name) {
  for (StreamId id : kAllStreams)
    if (stream_name(id) == name) return id;
  throw LookupError("unknown stream name: '" + std::string(name) + "'");
}

std::size_t stream_dim(StreamId id) {
  switch (id) {
    case StreamId::harmonic: return 60;
    case StreamId::aperiodic: return 4;
    case StreamId::vuv: return 1;
  }
  return 0;
}

FrameSeq::FrameSeq(std::size_t dim, std::vector<float> values) : dim_(dim), values_(std::move(values)) {
  if (dim_ == 0 ? !values_.empty() : values_.size() % dim_ != 0)
    throw DimensionError("frame data size " + std::to_string(values_.size()) + " is not a multiple of dim " +
                         std::to_string(dim_));
}

void FrameSeq::push_back(std::span<const float> frame) {
  if (frame.size() != dim_)
    throw DimensionError("frame has " + std::to_string(frame.size()) + " channels, expected " +
                         std::to_string(dim_));
  values_.insert(values_.end(), frame.begin(), frame.end());
}

PhonemeAlphabet::PhonemeAlphabet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (symbols_[i] == symbols_[j]) throw ConfigError("duplicate phoneme symbol: " + symbols_[i]);
}

std::size_t PhonemeAlphabet::index(std::string_view symbol) const {
  auto it = std::find(symbols_.begin(), symbols_.end(), symbol);
  if (it == symbols_.end()) throw LookupError("unknown phoneme symbol: '" + std::string(symbol) + "'");
  return static_cast<std::size_t>(it - symbols_.begin());
}

bool PhonemeAlphabet::contains(std::string_view symbol) const {
  return std::find(symbols_.begin(), symbols_.end(), symbol) != symbols_.end();
}

std::array<float, 3> coarse_code_position(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("coarse_code_position: p=" + std::to_string(p) + " outside [0,1]");
  auto tri = [p](double center) { return std::max(0.0, 1.0 - std::abs(p - center) / 0.5); };
  return {static_cast<float>(tri(0.0)), static_cast<float>(tri(0.5)), static_cast<float>(tri(1.0))};
}

std::vector<float> encode_control(std::string_view prev, std::string_view cur, std::string_view next,
                                  double position, const PhonemeAlphabet& alphabet) {
  const std::size_t n = alphabet.size();
  std::vector<float> v(control_dim(n), 0.0f);
  v[alphabet.index(prev)] = 1.0f;
  v[n + alphabet.index(cur)] = 1.0f;
  v[2 * n + alphabet.index(next)] = 1.0f;
  auto code = coarse_code_position(position);
  std::copy(code.begin(), code.end(), v.begin() + static_cast<std::ptrdiff_t>(3 * n));
  return v;
}

bool Utterance::has_stream(std::string_view name) const {
  return std::any_of(streams.begin(), streams.end(), [&](const StreamTrack& s) { return s.name == name; });
}

const FrameSeq& Utterance::stream(std::string_view name) const {
  for (const auto& s : streams)
    if (s.name == name) return s.frames;
  throw LookupError("utterance has no stream '" + std::string(name) + "'");
}

void Utterance::validate() const {
  if (!(hop_seconds > 0.0)) throw DomainError("hop_seconds must be positive");
  const std::size_t T = labels.size();
  for (const auto& s : streams) {
    if (s.frames.frames() != T)
      throw DimensionError("stream '" + s.name + "' has " + std::to_string(s.frames.frames()) +
                           " frames, labels have " + std::to_string(T));
    if (!finite_all(s.frames.values())) throw DomainError("stream '" + s.name + "' has non-finite values");
    if (s.name == stream_name(StreamId::vuv)) {
      for (float v : s.frames.values())
        if (v != 0.0f && v != 1.0f) throw DomainError("stored V/UV values must be 0 or 1");
    }
  }
  if (control.frames() != T)
    throw DimensionError("control track has " + std::to_string(control.frames()) + " frames, labels have " +
                         std::to_string(T));
  if (T > 0 && control.rows.dim() != control_dim(control.alphabet_size))
    throw DimensionError("control dim " + std::to_string(control.rows.dim()) + " does not match alphabet size " +
                         std::to_string(control.alphabet_size));
  for (auto id : labels)
    if (id >= control.alphabet_size && control.alphabet_size > 0) throw DomainError("label id out of alphabet range");
}

EncodedScore encode_score(std::span<const PhoneSegment> phones, const PhonemeAlphabet& alphabet) {
  EncodedScore out;
  out.control.alphabet_size = alphabet.size();
  out.control.rows = FrameSeq(0, control_dim(alphabet.size()));
  for (std::size_t i = 0; i < phones.size(); ++i) {
    const auto& cur = phones[i];
    std::string_view prev = i > 0 ? std::string_view(phones[i - 1].symbol) : kSilence;
    std::string_view next = i + 1 < phones.size() ? std::string_view(phones[i + 1].symbol) : kSilence;
    const auto id = static_cast<std::uint16_t>(alphabet.index(cur.symbol));
    for (std::size_t j = 0; j < cur.frames; ++j) {
      double pos = (static_cast<double>(j) + 0.5) / static_cast<double>(cur.frames);
      out.control.rows.push_back(encode_control(prev, cur.symbol, next, pos, alphabet));
      out.labels.push_back(id);
    }
  }
  return out;
}

std::vector<PhoneSegment> parse_phoneme_script(std::string_view text, double hop_seconds) {
  if (!(hop_seconds > 0.0)) throw ConfigError("hop_seconds must be positive");
  std::vector<PhoneSegment> out;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 2)
      throw ConfigError("phoneme script line " + std::to_string(lineno) + ": expected 'symbol duration_ms'");
    double ms = parse_float(tok[1], "phoneme script line " + std::to_string(lineno));
    if (!(ms > 0.0)) throw ConfigError("phoneme script line " + std::to_string(lineno) + ": duration must be > 0");
    auto frames = static_cast<std::size_t>(std::llround(ms / (hop_seconds * 1000.0)));
    out.push_back({tok[0], std::max<std::size_t>(frames, 1)});
  }
  return out;
}

std::string_view split_name(Split s) { return s == Split::train ? "train" : "validation"; }

std::vector<std::size_t> Corpus::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

void Corpus::validate() const {
  if (utterances.size() != split.size() || utterances.size() != names.size())
    throw DimensionError("corpus utterance/split/name counts differ");
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    u.validate();
    if (u.control.alphabet_size != alphabet.size())
      throw ConfigError("utterance '" + names[i] + "' uses a different alphabet size");
    const auto& first = utterances.front();
    if (u.streams.size() != first.streams.size()) throw ConfigError("utterance '" + names[i] + "' stream set differs");
    for (std::size_t s = 0; s < u.streams.size(); ++s) {
      if (u.streams[s].name != first.streams[s].name || u.streams[s].frames.dim() != first.streams[s].frames.dim())
        throw ConfigError("utterance '" + names[i] + "' stream layout differs");
    }
  }
}

bool synthetic_symbol_voiced(std::size_t symbol_id) { return symbol_id > 0 && symbol_id % 2 == 1; }

namespace {

std::vector<std::string> synthetic_symbols(std::size_t n) {
  std::vector<std::string> out{std::string(kSilence)};
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t k = i - 1;
    std::string s(1, static_cast<char>('a' + k % 26));
    if (k >= 26) s += std::to_string(k / 26);
    out.push_back(s);
  }
  return out;
}

// Seeded white noise restricted to the lowest `cutoff` cosine components.
std::vector<double> smooth_curve(std::size_t dim, std::size_t cutoff, double amplitude, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(dim, 0.0);
  for (std::size_t k = 1; k <= cutoff; ++k) {
    double a = amplitude * normal(rng) / std::sqrt(static_cast<double>(k));
    for (std::size_t i = 0; i < dim; ++i)
      out[i] += a * std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(i) + 0.5) /
                             static_cast<double>(dim));
  }
  return out;
}

PhonemeTemplate make_template(std::size_t id, const std::string& symbol, const SynthSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  PhonemeTemplate t;
  t.symbol = symbol;
  t.voiced = synthetic_symbol_voiced(id);
  const std::size_t nh = stream_dim(StreamId::harmonic);
  const std::size_t na = stream_dim(StreamId::aperiodic);
  double level = 0.0, tilt = 0.0, amp = 0.0;
  if (id == 0) {
    level = -80.0, tilt = 0.0, amp = 1.5;
  } else if (t.voiced) {
    level = -20.0 + 10.0 * uni(rng), tilt = -25.0 - 15.0 * uni(rng), amp = 10.0;
  } else {
    level = -45.0 + 10.0 * uni(rng), tilt = 5.0 + 10.0 * uni(rng), amp = 7.0;
  }
  auto curve = smooth_curve(nh, spec.template_cutoff, amp, rng);
  for (std::size_t i = 0; i < nh; ++i) {
    double x = static_cast<double>(i) / static_cast<double>(nh - 1);
    t.harmonic.push_back(static_cast<float>(level + tilt * x + curve[i]));
  }
  for (std::size_t b = 0; b < na; ++b) {
    double v;
    if (id == 0) {
      v = -0.5 * uni(rng);
    } else if (t.voiced) {
      v = -24.0 + 4.0 * static_cast<double>(b) + 4.0 * uni(rng);
    } else {
      v = -4.0 + 3.0 * uni(rng);
    }
    t.aperiodic.push_back(static_cast<float>(v));
  }
  return t;
}

struct RenderedPhone {
  std::size_t id;
  std::size_t start;
  std::size_t frames;
};

// Weight of the previous phone's template at frame j of a phone; always below
// 0.5 so the labelled phone dominates. The blend is carry-over only: it starts
// at the labelled boundary, so transitions are predictable from the controls.
double crossfade_weight(std::size_t j, std::size_t width) {
  if (width == 0) return 0.0;
  double w = 0.5 * (1.0 - (static_cast<double>(j) + 0.5) / static_cast<double>(width));
  return std::max(0.0, w);
}

Utterance render_utterance(const std::vector<RenderedPhone>& phones, const std::vector<PhonemeTemplate>& templates,
                           const PhonemeAlphabet& alphabet, const SynthSpec& spec, Rng& rng) {
  std::vector<PhoneSegment> segs;
  for (const auto& p : phones) segs.push_back({alphabet.symbol(p.id), p.frames});
  auto score = encode_score(segs, alphabet);
  const std::size_t T = score.labels.size();
  const std::size_t nh = stream_dim(StreamId::harmonic);
  const std::size_t na = stream_dim(StreamId::aperiodic);

  FrameSeq harm(T, nh), aper(T, na), vuv(T, 1);
  for (std::size_t k = 0; k < phones.size(); ++k) {
    const auto& p = phones[k];
    const std::size_t width = std::min(spec.crossfade_frames, p.frames / 2);
    for (std::size_t j = 0; j < p.frames; ++j) {
      const std::size_t t = p.start + j;
      const double w_prev = k > 0 ? crossfade_weight(j, width) : 0.0;
      const auto& cur = templates[p.id];
      const auto* prev = k > 0 ? &templates[phones[k - 1].id] : nullptr;
      auto blend = [&](auto member, std::size_t c) {
        double v = (1.0 - w_prev) * static_cast<double>((cur.*member)[c]);
        if (prev && w_prev > 0.0) v += w_prev * static_cast<double>((prev->*member)[c]);
        return v;
      };
      for (std::size_t c = 0; c < nh; ++c) harm.at(t, c) = static_cast<float>(blend(&PhonemeTemplate::harmonic, c));
      for (std::size_t c = 0; c < na; ++c) aper.at(t, c) = static_cast<float>(blend(&PhonemeTemplate::aperiodic, c));
      vuv.at(t, 0) = cur.voiced ? 1.0f : 0.0f;
    }
  }

  if (spec.noise_level > 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double innov = std::sqrt(1.0 - spec.noise_ar * spec.noise_ar);
    auto add_ar_noise = [&](FrameSeq& seq, double sd) {
      std::vector<double> state(seq.dim(), 0.0);
      for (std::size_t c = 0; c < seq.dim(); ++c) state[c] = sd * normal(rng);
      for (std::size_t t = 0; t < seq.frames(); ++t) {
        for (std::size_t c = 0; c < seq.dim(); ++c) {
          if (t > 0) state[c] = spec.noise_ar * state[c] + innov * sd * normal(rng);
          seq.at(t, c) = static_cast<float>(static_cast<double>(seq.at(t, c)) + state[c]);
        }
      }
    };
    add_ar_noise(harm, spec.noise_level);
    add_ar_noise(aper, 0.5 * spec.noise_level);
  }

  Utterance u;
  u.hop_seconds = spec.hop_seconds;
  u.streams.push_back({std::string(stream_name(StreamId::harmonic)), std::move(harm)});
  u.streams.push_back({std::string(stream_name(StreamId::aperiodic)), std::move(aper)});
  u.streams.push_back({std::string(stream_name(StreamId::vuv)), std::move(vuv)});
  u.control = std::move(score.control);
  u.labels = std::move(score.labels);
  return u;
}

}  // namespace

Corpus gen_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.num_phonemes < 4) throw ConfigError("synthetic corpus needs at least 4 phonemes");
  if (spec.num_utterances == 0) throw ConfigError("synthetic corpus needs at least 1 utterance");
  if (spec.min_phones == 0 || spec.min_phones > spec.max_phones) throw ConfigError("bad phones-per-utterance range");
  if (spec.min_phone_frames == 0 || spec.min_phone_frames > spec.max_phone_frames)
    throw ConfigError("bad phone duration range");
  if (spec.min_sil_frames == 0 || spec.min_sil_frames > spec.max_sil_frames) throw ConfigError("bad silence range");
  if (spec.template_cutoff == 0) throw ConfigError("template_cutoff must be positive");
  if (!(spec.noise_level >= 0.0) || !(std::abs(spec.noise_ar) < 1.0)) throw ConfigError("bad noise parameters");
  if (!(spec.validation_fraction >= 0.0 && spec.validation_fraction < 1.0))
    throw ConfigError("validation_fraction must be in [0,1)");
  if (!(spec.hop_seconds > 0.0)) throw ConfigError("hop_seconds must be positive");

  Corpus corpus;
  corpus.alphabet = PhonemeAlphabet(synthetic_symbols(spec.num_phonemes));

  Rng template_rng(derive_seed(seed, 1));
  std::vector<PhonemeTemplate> templates;
  for (std::size_t i = 0; i < spec.num_phonemes; ++i)
    templates.push_back(make_template(i, corpus.alphabet.symbol(i), spec, template_rng));

  Rng rng(derive_seed(seed, 2));
  auto uniform_size = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  for (std::size_t u = 0; u < spec.num_utterances; ++u) {
    std::vector<RenderedPhone> phones;
    std::size_t t = 0;
    auto add = [&](std::size_t id, std::size_t frames) {
      phones.push_back({id, t, frames});
      t += frames;
    };
    add(0, uniform_size(spec.min_sil_frames, spec.max_sil_frames));
    const std::size_t count = uniform_size(spec.min_phones, spec.max_phones);
    std::size_t last = 0;
    for (std::size_t k = 0; k < count; ++k) {
      std::size_t id;
      do {
        id = uniform_size(1, spec.num_phonemes - 1);
      } while (id == last);
      last = id;
      add(id, uniform_size(spec.min_phone_frames, spec.max_phone_frames));
    }
    add(0, uniform_size(spec.min_sil_frames, spec.max_sil_frames));
    corpus.utterances.push_back(render_utterance(phones, templates, corpus.alphabet, spec, rng));
    char name[32];
    std::snprintf(name, sizeof(name), "utt_%04zu", u);
    corpus.names.emplace_back(name);
  }

  const std::size_t n = spec.num_utterances;
  std::size_t n_val = 0;
  if (n >= 2 && spec.validation_fraction > 0.0)
    n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(spec.validation_fraction * double(n))), 1,
                                    n - 1);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng split_rng(derive_seed(seed, 3));
  std::shuffle(order.begin(), order.end(), split_rng);
  corpus.split.assign(n, Split::train);
  for (std::size_t i = 0; i < n_val; ++i) corpus.split[order[i]] = Split::validation;

  corpus.generator_truth = std::move(templates);
  return corpus;
}

std::vector<std::uint8_t> encode_features(const Utterance& u) {
  u.validate();
  binio::ByteWriter w;
  w.raw(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.f64(u.hop_seconds);
  if (u.streams.size() > 255) throw ConfigError("too many streams");
  w.u8(static_cast<std::uint8_t>(u.streams.size()));
  const auto T = static_cast<std::uint32_t>(u.length());
  for (const auto& s : u.streams) {
    w.short_string(s.name);
    w.u32(static_cast<std::uint32_t>(s.frames.dim()));
    w.u32(T);
    w.f32_span(s.frames.values());
  }
  w.u32(static_cast<std::uint32_t>(u.control.alphabet_size));
  w.u32(static_cast<std::uint32_t>(u.control.rows.dim()));
  w.u32(T);
  w.f32_span(u.control.rows.values());
  w.u32(T);
  for (auto id : u.labels) w.u16(id);
  return std::move(w).take();
}

Utterance decode_features(std::span<const std::uint8_t> bytes) {
  binio::ByteReader r(bytes);
  r.expect_magic(kFeatureMagic);
  const auto version_at = r.offset();
  if (auto v = r.u32(); v != kFeatureVersion)
    throw FormatError("unsupported feature file version " + std::to_string(v), version_at);
  Utterance u;
  u.hop_seconds = r.f64();
  if (!(u.hop_seconds > 0.0)) r.fail("hop_seconds must be positive");
  const std::size_t n_streams = r.u8();
  std::optional<std::uint32_t> length;
  auto check_length = [&](std::uint32_t T, std::uint64_t at) {
    if (length && *length != T) throw FormatError("inconsistent frame count " + std::to_string(T), at);
    length = T;
  };
  for (std::size_t s = 0; s < n_streams; ++s) {
    StreamTrack track;
    track.name = r.short_string();
    const std::uint32_t N = r.u32();
    const auto t_at = r.offset();
    const std::uint32_t T = r.u32();
    check_length(T, t_at);
    if (std::uint64_t(N) * T * 4 > r.remaining()) r.fail("truncated payload in stream '" + track.name + "'");
    std::vector<float> values(std::size_t(N) * T);
    r.f32_into(values);
    track.frames = N == 0 ? FrameSeq() : FrameSeq(N, std::move(values));
    u.streams.push_back(std::move(track));
  }
  u.control.alphabet_size = r.u32();
  const std::uint32_t dim = r.u32();
  const auto t_at = r.offset();
  const std::uint32_t T = r.u32();
  check_length(T, t_at);
  if (std::uint64_t(dim) * T * 4 > r.remaining()) r.fail("truncated payload in control block");
  std::vector<float> ctrl(std::size_t(dim) * T);
  r.f32_into(ctrl);
  u.control.rows = FrameSeq(dim, std::move(ctrl));
  const auto l_at = r.offset();
  const std::uint32_t TL = r.u32();
  check_length(TL, l_at);
  if (std::uint64_t(TL) * 2 > r.remaining()) r.fail("truncated payload in label block");
  u.labels.resize(TL);
  for (auto& id : u.labels) id = r.u16();
  if (!r.at_end()) r.fail("trailing bytes after label block");
  try {
    u.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("invalid utterance: ") + e.what(), r.offset());
  }
  return u;
}

void write_features(const Utterance& u, const std::filesystem::path& path) {
  binio::write_file(path, encode_features(u));
}

Utterance read_features(const std::filesystem::path& path) { return decode_features(binio::read_file(path)); }

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const std::string file = corpus.names[i] + ".npsf";
    write_features(corpus.utterances[i], dir / file);
    manifest << file << ' ' << split_name(corpus.split[i]) << '\n';
  }
  auto write_text = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + (dir / name).string());
    out << text;
  };
  write_text("manifest.txt", manifest.str());
  std::ostringstream alpha;
  for (const auto& s : corpus.alphabet.symbols()) alpha << s << '\n';
  write_text("alphabet.txt", alpha.str());
  if (corpus.generator_truth) {
    std::ostringstream truth;
    for (const auto& t : *corpus.generator_truth) {
      truth << t.symbol << ' ' << (t.voiced ? 1 : 0) << ' ' << t.harmonic.size() << ' ' << t.aperiodic.size();
      for (float v : t.harmonic) truth << ' ' << format_float(v);
      for (float v : t.aperiodic) truth << ' ' << format_float(v);
      truth << '\n';
    }
    write_text("generator_truth.txt", truth.str());
  } else {
    std::filesystem::remove(dir / "generator_truth.txt");
  }
}

Corpus read_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  auto read_lines = [&](const std::string& name) {
    std::ifstream in(dir / name);
    if (!in) throw ConfigError("cannot read " + (dir / name).string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) lines.push_back(line);
    return lines;
  };
  corpus.alphabet = PhonemeAlphabet(read_lines("alphabet.txt"));
  for (const auto& line : read_lines("manifest.txt")) {
    auto tok = split_ws(line);
    if (tok.size() != 2) throw ConfigError("bad manifest line: '" + line + "'");
    Split s;
    if (tok[1] == "train") s = Split::train;
    else if (tok[1] == "validation") s = Split::validation;
    else throw ConfigError("bad split tag '" + tok[1] + "' in manifest");
    corpus.utterances.push_back(read_features(dir / tok[0]));
    std::string name = tok[0];
    if (name.size() > 5 && name.ends_with(".npsf")) name.resize(name.size() - 5);
    corpus.names.push_back(name);
    corpus.split.push_back(s);
  }
  if (std::filesystem::exists(dir / "generator_truth.txt")) {
    std::vector<PhonemeTemplate> templates;
    for (const auto& line : read_lines("generator_truth.txt")) {
      auto tok = split_ws(line);
      if (tok.size() < 4) throw ConfigError("bad generator_truth line");
      PhonemeTemplate t;
      t.symbol = tok[0];
      t.voiced = tok[1] == "1";
      const std::size_t nh = std::stoul(tok[2]), na = std::stoul(tok[3]);
      if (tok.size() != 4 + nh + na) throw ConfigError("generator_truth line has wrong value count");
      for (std::size_t i = 0; i < nh; ++i) t.harmonic.push_back(parse_float(tok[4 + i], "generator_truth"));
      for (std::size_t i = 0; i < na; ++i) t.aperiodic.push_back(parse_float(tok[4 + nh + i], "generator_truth"));
      templates.push_back(std::move(t));
    }
    corpus.generator_truth = std::move(templates);
  }
  corpus.validate();
  return corpus;
}

std::size_t nearest_template(std::span<const PhonemeTemplate> templates, std::span<const float> harmonic) {
  if (templates.empty()) throw ConfigError("no templates to classify against");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < templates.size(); ++k) {
    const auto& t = templates[k].harmonic;
    if (t.size() != harmonic.size()) throw DimensionError("template/frame dimension mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      double e = static_cast<double>(t[i]) - static_cast<double>(harmonic[i]);
      d += e * e;
    }
    if (d < best_d) best_d = d, best = k;
  }
  return best;
}

}  // namespace npss
