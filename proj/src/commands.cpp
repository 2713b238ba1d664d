#include "npss/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "npss/binio.hpp"
#include "npss/errors.hpp"
#include "npss/evalkit.hpp"
#include "npss/generation.hpp"

namespace npss {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  binio::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  auto b = binio::read_file(path);
  return std::string(b.begin(), b.end());
}

fs::path checkpoint_path(const RunConfig& c, StreamId s) {
  return c.model_path() / (std::string(stream_name(s)) + ".npsw");
}

fs::path state_path(const RunConfig& c, StreamId s) {
  return c.model_path() / (std::string(stream_name(s)) + ".state.npsw");
}

Corpus load_corpus(const RunConfig& c) {
  const fs::path dir = c.corpus_path();
  if (!fs::exists(dir / "manifest.txt")) throw ConfigError("no corpus at " + dir.string() + " (run synth-data first)");
  return read_corpus(dir);
}

std::array<StreamModel, 3> load_models(const RunConfig& c) {
  std::array<StreamModel, 3> models;
  for (StreamId s : kAllStreams) {
    const fs::path p = checkpoint_path(c, s);
    if (!fs::exists(p)) throw ConfigError("missing checkpoint for stream " + std::string(stream_name(s)) + ": " + p.string());
    models[static_cast<std::size_t>(s)] = from_checkpoint(load_checkpoint(p));
  }
  return models;
}

std::string history_text(const TrainHistory& h) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# epoch train_nll val_nll seconds\n";
  os << "# initial_val_nll " << h.initial_val_nll << '\n';
  os << "# best_epoch " << h.best_epoch << '\n';
  for (const EpochRecord& e : h.epochs)
    os << e.epoch << ' ' << e.train_nll << ' ' << e.val_nll << ' ' << std::setprecision(4) << e.seconds
       << std::setprecision(17) << '\n';
  return os.str();
}

}  // namespace

void cmd_synth_data(const RunConfig& c, std::ostream& log) {
  Corpus corpus = gen_synthetic_corpus(c.synth, c.seed);
  write_corpus(corpus, c.corpus_path());
  log << "wrote " << corpus.utterances.size() << " utterances (" << corpus.indices(Split::validation).size()
      << " validation) to " << c.corpus_path().string() << '\n';
}

void cmd_train(const RunConfig& c, std::ostream& log) {
  const Corpus corpus = load_corpus(c);
  const TrainConfig tc = c.train_config_for(corpus.alphabet.size());
  tc.validate();
  fs::create_directories(c.model_path());

  // Dependency order regardless of how the streams were listed.
  std::vector<StreamId> order;
  for (StreamId s : {StreamId::harmonic, StreamId::vuv, StreamId::aperiodic})
    if (std::find(c.train_streams.begin(), c.train_streams.end(), s) != c.train_streams.end()) order.push_back(s);

  TrainOptions opts;
  if (c.train_stop_after > 0) opts.stop_after = c.train_stop_after;
  opts.on_epoch = [&log](StreamId s, const EpochRecord& e) {
    log << stream_name(s) << " epoch " << e.epoch << std::fixed << std::setprecision(5) << " train_nll "
        << e.train_nll << " val_nll " << e.val_nll << std::defaultfloat << '\n';
  };

  for (StreamId s : order) {
    std::optional<TrainState> resume;
    if (c.train_resume && fs::exists(state_path(c, s))) {
      resume = decode_train_state(binio::read_file(state_path(c, s)));
      if (resume->finished) {
        log << stream_name(s) << ": already trained, skipping\n";
        continue;
      }
      log << stream_name(s) << ": resuming at epoch " << resume->next_epoch << '\n';
    }
    log << stream_name(s) << ": " << param_count(tc.net(s)) << " parameters, receptive field "
        << receptive_field(tc.net(s)) << " frames\n";
    TrainResult r = train_stream(corpus, s, tc, opts, std::move(resume));
    save_checkpoint(to_checkpoint(r.best), checkpoint_path(c, s));
    binio::write_file(state_path(c, s), encode_train_state(r.state, tc));
    write_text(c.model_path() / (std::string(stream_name(s)) + ".history.txt"), history_text(r.history));
    if (!r.history.epochs.empty())
      log << stream_name(s) << ": best epoch " << r.history.best_epoch << " val_nll "
          << r.history.epochs[r.history.best_epoch].val_nll << (r.state.finished ? "" : " (interrupted)") << '\n';
  }
}

void cmd_generate(const RunConfig& c, std::ostream& log) {
  if (c.generate_input.empty()) throw ConfigError("generate.input is not set (utterance file or phoneme script)");
  const fs::path in(c.generate_input);
  if (!fs::exists(in)) throw ConfigError("generate input not found: " + in.string());
  const std::array<StreamModel, 3> models = load_models(c);

  ControlTrack control;
  if (in.extension() == ".npsf") {
    control = read_features(in).control;
  } else {
    const Corpus corpus = load_corpus(c);
    auto phones = parse_phoneme_script(read_text(in), c.synth.hop_seconds);
    control = encode_score(phones, corpus.alphabet).control;
  }
  Utterance u = generate_multistream(models, control, c.tau, c.seed, c.generate_mode);
  u.hop_seconds = c.synth.hop_seconds;
  write_features(u, c.generate_output_path());
  log << "generated " << u.length() << " frames (" << std::fixed << std::setprecision(3)
      << double(u.length()) * u.hop_seconds << " s) to " << c.generate_output_path().string() << std::defaultfloat
      << '\n';
}

void cmd_bench(const RunConfig& c, std::ostream& log) {
  const std::size_t P = c.synth.num_phonemes;
  std::ostringstream text, machine;
  text << std::setprecision(6);
  machine << std::setprecision(9);
  auto put = [&](const std::string& key, const auto& value) {
    text << key << ": " << value << '\n';
    machine << key << '=' << value << '\n';
  };
  put("bench.frames", c.bench_frames);
  put("bench.repeats", c.bench_repeats);
  put("bench.hop_seconds", kDefaultHopSeconds);

  std::size_t total_params = 0;
  double naive_spf = 0.0, cached_spf = 0.0;
  for (StreamId s : {StreamId::harmonic, StreamId::vuv, StreamId::aperiodic}) {
    const std::string name(stream_name(s));
    StreamModel m;
    m.stream = s;
    m.config = c.net_for(s, P);
    m.config.validate();
    m.params = init_params(m.config, derive_seed(c.seed, static_cast<std::uint64_t>(s)));
    m.input_stats = {std::vector<float>(m.config.row_width(), 0.0f), std::vector<float>(m.config.row_width(), 1.0f)};
    const std::size_t n = param_count(m.config);
    total_params += n;
    put(name + ".params", n);
    put(name + ".receptive_field_frames", receptive_field(m.config));

    BenchResult naive = bench_generation(m, c.bench_frames, DecodeMode::naive, c.bench_repeats, c.seed);
    BenchResult cached = bench_generation(m, c.bench_frames, DecodeMode::cached, c.bench_repeats, c.seed);
    naive_spf += 1.0 / naive.frames_per_second;
    cached_spf += 1.0 / cached.frames_per_second;
    put(name + ".naive.frames_per_second", naive.frames_per_second);
    put(name + ".naive.realtime_factor", naive.realtime_factor);
    put(name + ".cached.frames_per_second", cached.frames_per_second);
    put(name + ".cached.realtime_factor", cached.realtime_factor);
    put(name + ".speedup", cached.frames_per_second / naive.frames_per_second);
    for (std::size_t k = 0; k < cached.stage_seconds.size(); ++k) {
      std::string stage = k == 0                                  ? "input_conv"
                          : k + 1 == cached.stage_seconds.size() ? "output"
                                                                  : "layer" + std::to_string(k - 1);
      put(name + ".cached.stage." + stage + "_us", cached.stage_seconds[k] * 1e6);
    }
  }
  put("params.total", total_params);
  put("params.reference", kReferenceParamCount);
  put("params.ratio", double(total_params) / double(kReferenceParamCount));
  put("all_streams.naive.realtime_factor", kDefaultHopSeconds / naive_spf);
  put("all_streams.cached.realtime_factor", kDefaultHopSeconds / cached_spf);
  put("reference.realtime_factor", std::string("20-35"));

  const std::string report = text.str() + "\n[machine]\n" + machine.str();
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "bench.txt", report);
  log << report;
}

void cmd_eval(const RunConfig& c, std::ostream& log) {
  const Corpus corpus = load_corpus(c);
  if (corpus.indices(Split::validation).empty()) throw EvaluationError("validation split is empty");
  const std::array<StreamModel, 3> models = load_models(c);
  EvalReport report;
  report.rows.push_back(eval_model(corpus, models, c.voice, c.threads));
  const std::string text = format_table(report) + "\n[machine]\n" + format_keyvalue(report);
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "eval.txt", text);
  log << text;
}

int exit_code_for(const std::exception& e) { return dynamic_cast<const ConfigError*>(&e) ? 2 : 3; }

int run_command(std::string_view name, const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    using Fn = void (*)(const RunConfig&, std::ostream&);
    Fn fn = nullptr;
    if (name == "synth-data") fn = cmd_synth_data;
    else if (name == "train") fn = cmd_train;
    else if (name == "generate") fn = cmd_generate;
    else if (name == "bench") fn = cmd_bench;
    else if (name == "eval") fn = cmd_eval;
    else throw LookupError("unknown command '" + std::string(name) + "'");
    fs::create_directories(config.out);
    write_text(fs::path(config.out) / "effective.cfg", config_to_text(config));
    fn(config, log);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace npss
