#include "npss/run_config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "npss/binio.hpp"
#include "npss/errors.hpp"

namespace npss {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("bad value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("bad boolean '" + std::string(v) + "' for " + std::string(key));
}

std::string show(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string show(std::size_t v) { return std::to_string(v); }

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const std::size_t comma = std::min(v.find(',', start), v.size());
    out.push_back(parse_number<std::size_t>(key, trim(v.substr(start, comma - start))));
    start = comma + 1;
  }
  return out;
}

std::string show_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Option {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define NPSS_SIZE(k, field)                                                                          \
  Option { k, [](const RunConfig& c) { return show(c.field); },                                      \
           [](RunConfig& c, std::string_view v) { c.field = parse_number<std::size_t>(k, v); } }
#define NPSS_DOUBLE(k, field)                                                                        \
  Option { k, [](const RunConfig& c) { return show(c.field); },                                      \
           [](RunConfig& c, std::string_view v) { c.field = parse_number<double>(k, v); } }
#define NPSS_STRING(k, field)                                                                        \
  Option { k, [](const RunConfig& c) { return c.field; }, [](RunConfig& c, std::string_view v) { c.field = v; } }

const std::vector<Option>& options() {
  static const std::vector<Option> table = [] {
    std::vector<Option> t = {
        NPSS_STRING("out", out),
        Option{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
               [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
        NPSS_SIZE("threads", threads),
        NPSS_STRING("corpus.dir", corpus_dir),
        NPSS_STRING("model.dir", model_dir),
        NPSS_SIZE("synth.num_phonemes", synth.num_phonemes),
        NPSS_SIZE("synth.num_utterances", synth.num_utterances),
        NPSS_SIZE("synth.min_phones", synth.min_phones),
        NPSS_SIZE("synth.max_phones", synth.max_phones),
        NPSS_SIZE("synth.min_phone_frames", synth.min_phone_frames),
        NPSS_SIZE("synth.max_phone_frames", synth.max_phone_frames),
        NPSS_SIZE("synth.min_sil_frames", synth.min_sil_frames),
        NPSS_SIZE("synth.max_sil_frames", synth.max_sil_frames),
        NPSS_SIZE("synth.crossfade_frames", synth.crossfade_frames),
        NPSS_SIZE("synth.template_cutoff", synth.template_cutoff),
        NPSS_DOUBLE("synth.noise_level", synth.noise_level),
        NPSS_DOUBLE("synth.noise_ar", synth.noise_ar),
        NPSS_DOUBLE("synth.validation_fraction", synth.validation_fraction),
        NPSS_DOUBLE("synth.hop_seconds", synth.hop_seconds),
    };
    for (StreamId s : {StreamId::harmonic, StreamId::vuv, StreamId::aperiodic}) {
      const std::string p = "stream." + std::string(stream_name(s)) + ".";
      const std::size_t i = static_cast<std::size_t>(s);
      auto size_opt = [&](const std::string& name, std::size_t NetConfig::*field) {
        const std::string key = p + name;
        t.push_back({key, [i, field](const RunConfig& c) { return show(c.train.nets[i].*field); },
                     [i, field, key](RunConfig& c, std::string_view v) {
                       c.train.nets[i].*field = parse_number<std::size_t>(key, v);
                     }});
      };
      size_opt("initial_taps", &NetConfig::initial_taps);
      size_opt("conv_channels", &NetConfig::conv_channels);
      size_opt("skip_channels", &NetConfig::skip_channels);
      const std::string key = p + "dilations";
      t.push_back({key, [i](const RunConfig& c) { return show_list(c.train.nets[i].dilations); },
                   [i, key](RunConfig& c, std::string_view v) { c.train.nets[i].dilations = parse_list(key, v); }});
    }
    const std::vector<Option> rest = {
        NPSS_DOUBLE("train.lambda", train.lambda),
        NPSS_DOUBLE("train.learning_rate", train.learning_rate),
        NPSS_SIZE("train.batch_sequences", train.batch_sequences),
        NPSS_SIZE("train.output_length", train.output_length),
        NPSS_SIZE("train.epochs", train.epochs),
        NPSS_SIZE("train.patience", train.patience),
        Option{"train.streams",
               [](const RunConfig& c) {
                 std::string s;
                 for (std::size_t k = 0; k < c.train_streams.size(); ++k)
                   s += (k ? "," : "") + std::string(stream_name(c.train_streams[k]));
                 return s;
               },
               [](RunConfig& c, std::string_view v) {
                 std::vector<StreamId> out;
                 std::size_t start = 0;
                 while (start <= v.size()) {
                   const std::size_t comma = std::min(v.find(',', start), v.size());
                   out.push_back(stream_from_name(trim(v.substr(start, comma - start))));
                   start = comma + 1;
                 }
                 c.train_streams = std::move(out);
               }},
        Option{"train.resume", [](const RunConfig& c) { return std::string(c.train_resume ? "1" : "0"); },
               [](RunConfig& c, std::string_view v) { c.train_resume = parse_bool("train.resume", v); }},
        NPSS_SIZE("train.stop_after", train_stop_after),
        NPSS_DOUBLE("generate.tau.harmonic", tau.harmonic),
        NPSS_DOUBLE("generate.tau.aperiodic", tau.aperiodic),
        NPSS_DOUBLE("generate.tau.vuv", tau.vuv),
        NPSS_STRING("generate.input", generate_input),
        NPSS_STRING("generate.output", generate_output),
        Option{"generate.mode",
               [](const RunConfig& c) {
                 return std::string(c.generate_mode == DecodeMode::cached ? "cached" : "naive");
               },
               [](RunConfig& c, std::string_view v) {
                 if (v == "cached") c.generate_mode = DecodeMode::cached;
                 else if (v == "naive") c.generate_mode = DecodeMode::naive;
                 else throw ConfigError("generate.mode must be cached or naive");
               }},
        NPSS_SIZE("bench.frames", bench_frames),
        NPSS_SIZE("bench.repeats", bench_repeats),
        NPSS_STRING("eval.voice", voice),
    };
    t.insert(t.end(), rest.begin(), rest.end());
    return t;
  }();
  return table;
}

#undef NPSS_SIZE
#undef NPSS_DOUBLE
#undef NPSS_STRING

}  // namespace

RunConfig::RunConfig() : train(default_train_config(synth.num_phonemes)) {}

std::filesystem::path RunConfig::corpus_path() const {
  return corpus_dir.empty() ? std::filesystem::path(out) / "corpus" : std::filesystem::path(corpus_dir);
}

std::filesystem::path RunConfig::model_path() const {
  return model_dir.empty() ? std::filesystem::path(out) / "model" : std::filesystem::path(model_dir);
}

std::filesystem::path RunConfig::generate_output_path() const {
  return generate_output.empty() ? std::filesystem::path(out) / "generated.npsf"
                                 : std::filesystem::path(generate_output);
}

NetConfig RunConfig::net_for(StreamId s, std::size_t alphabet_size) const {
  NetConfig c = default_stream_config(s, control_dim(alphabet_size));
  const NetConfig& user = train.net(s);
  c.initial_taps = user.initial_taps;
  c.dilations = user.dilations;
  c.conv_channels = user.conv_channels;
  c.skip_channels = user.skip_channels;
  return c;
}

TrainConfig RunConfig::train_config_for(std::size_t alphabet_size) const {
  TrainConfig t = train;
  for (StreamId s : kAllStreams) t.net(s) = net_for(s, alphabet_size);
  t.seed = seed;
  t.threads = threads;
  return t;
}

void set_option(RunConfig& config, std::string_view key, std::string_view value) {
  for (const Option& o : options())
    if (o.key == key) {
      o.set(config, value);
      return;
    }
  throw LookupError("unknown config key '" + std::string(key) + "'");
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  set_option(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string config_to_text(const RunConfig& config) {
  std::string s;
  for (const Option& o : options()) s += o.key + "=" + o.get(config) + "\n";
  return s;
}

RunConfig config_from_text(std::string_view text, RunConfig base) {
  std::istringstream is{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    try {
      apply_override(base, t);
    } catch (const LookupError& e) {
      throw LookupError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  auto bytes = binio::read_file(path);
  return config_from_text(std::string(bytes.begin(), bytes.end()), std::move(base));
}

}  // namespace npss
