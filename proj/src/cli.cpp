#include "sf/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "sf/inference.hpp"
#include "sf/trainer.hpp"

namespace sf {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Config-file entries become `--key=value` arguments placed before the
/// command-line flags, so flags win (options keep their last value).
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out, rest;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
      out.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

struct ModelFlags {
  ModelConfig config;
  std::string quantiles;
  std::string stp_variant;

  explicit ModelFlags(const ModelConfig& c) : config(c), stp_variant(to_string(c.stp_variant)) {}

  void add(CLI::App* app) {
    app->add_option("--dim", config.dim, "Model width D")->capture_default_str();
    app->add_option("--patch_len", config.patch_len, "Patch length P")->capture_default_str();
    app->add_option("--max_patches", config.max_patches, "Context bound N_max in patches")->capture_default_str();
    app->add_option("--main_blocks", config.main_blocks, "TimeMoE blocks L")->capture_default_str();
    app->add_option("--stp_blocks", config.stp_blocks, "TimeSTP blocks H")->capture_default_str();
    app->add_option("--experts", config.experts, "Experts per MoE layer E")->capture_default_str();
    app->add_option("--top_k", config.top_k, "Experts per token K")->capture_default_str();
    app->add_option("--heads", config.heads, "Attention heads (0: max(1, D/64))")->capture_default_str();
    app->add_option("--ffn_dim", config.ffn_dim, "Expert hidden width (0: 2D)")->capture_default_str();
    app->add_option("--embed_hidden", config.embed_hidden, "Patch embedder hidden width (0: D)")->capture_default_str();
    app->add_option("--quantiles", quantiles, "Comma-separated quantile levels");
    app->add_option("--theta_base", config.theta_base, "Rotary base")->capture_default_str();
    app->add_option("--rope_scale", config.rope_scale, "Rotary position scale")->capture_default_str();
    app->add_option("--rms_eps", config.rms_eps, "RMSNorm epsilon")->capture_default_str();
    app->add_option("--stp_variant", stp_variant, "serial | shift_token")->capture_default_str();
  }

  ModelConfig resolve() {
    if (!quantiles.empty()) config.set("quantiles", quantiles);
    config.stp_variant = parse_stp_variant(stp_variant);
    config.validate();
    return config;
  }
};

struct TrainFlags {
  TrainConfig config;
  std::string mixture;

  void add(CLI::App* app) {
    app->add_option("--steps", config.steps, "Optimizer steps")->capture_default_str();
    app->add_option("--batch_size", config.batch_size, "Windows per step")->capture_default_str();
    app->add_option("--peak_lr", config.peak_lr, "Peak learning rate")->capture_default_str();
    app->add_option("--warmup_frac", config.warmup_frac, "Warmup fraction of steps")->capture_default_str();
    app->add_option("--min_lr_frac", config.min_lr_frac, "Final learning rate / peak")->capture_default_str();
    app->add_option("--weight_decay", config.weight_decay, "Decoupled weight decay")->capture_default_str();
    app->add_option("--clip_norm", config.clip_norm, "Global gradient-norm clip")->capture_default_str();
    app->add_option("--alpha", config.alpha, "Load-balancing loss weight")->capture_default_str();
    app->add_option("--beta1", config.beta1)->capture_default_str();
    app->add_option("--beta2", config.beta2)->capture_default_str();
    app->add_option("--adam_eps", config.adam_eps)->capture_default_str();
    app->add_option("--seed", config.seed, "Root seed")->capture_default_str();
    app->add_option("--mixture_weights", mixture, "Source weights, comma-separated");
    app->add_option("--flip_prob", config.flip_prob, "Value-flip probability")->capture_default_str();
    app->add_option("--resample_prob", config.resample_prob, "Resampling probability")->capture_default_str();
    app->add_option("--workers", config.workers, "Threads for per-sample work")->capture_default_str();
    app->add_option("--checkpoint_every", config.checkpoint_every, "Interval checkpoints (0: off)")
        ->capture_default_str();
    app->add_option("--log_every", config.log_every, "Progress line interval")->capture_default_str();
  }

  TrainConfig resolve() {
    if (!mixture.empty()) config.set("mixture_weights", mixture);
    config.validate();
    return config;
  }
};

void log_step(const StepReport& r, Index every) {
  if (every > 0 && (r.step % every == 0 || r.skipped))
    std::cerr << "step " << r.step << (r.skipped ? " skipped" : "") << " loss " << r.loss.total << " ntp " << r.loss.ntp
              << " stp " << r.loss.stp << " aux " << r.loss.aux << " grad_norm " << r.grad_norm << " lr " << r.lr
              << '\n';
}

Checkpoint<float> load_model(const std::string& path) { return load_checkpoint<float>(path); }

std::vector<Series> load_series_inputs(const std::vector<std::string>& inputs) {
  std::vector<Series> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p) && fs::exists(p / kManifestName)) {
      auto all = read_all_series(ShardManifest::load(p));
      out.insert(out.end(), all.begin(), all.end());
    } else if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".csv") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back(read_csv_series(f));
    } else {
      out.push_back(read_csv_series(p));
    }
  }
  if (out.empty()) throw InputError("no input series found");
  return out;
}

fs::path resolve_data(const std::string& s) {
  const fs::path p(s);
  return p.is_absolute() || fs::exists(p) ? p : data_root() / p;
}

void echo_config(CLI::App* sub) {
  std::cerr << "# effective configuration (" << sub->get_name() << ")\n" << sub->config_to_str(true, false);
}

} // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Serial-token time-series forecasting: synthesis, sharding, training, forecasting"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic series (CSV or shards)");
  std::string kind = "sinusoidal", combine = "additive", family = "signal", synth_format = "csv", synth_out;
  SignalComponent comp;
  SignalSpec sig;
  Index synth_count = 1;
  std::uint64_t synth_shard_bytes = kDefaultShardBytes;
  synth->add_option("--kind", kind, "Comma-separated signal kinds")->capture_default_str();
  synth->add_option("--combine", combine, "additive | multiplicative")->capture_default_str();
  synth->add_option("--amplitude", comp.amplitude)->capture_default_str();
  synth->add_option("--period", comp.period)->capture_default_str();
  synth->add_option("--phase", comp.phase)->capture_default_str();
  synth->add_option("--slope", comp.slope)->capture_default_str();
  synth->add_option("--intercept", comp.intercept)->capture_default_str();
  synth->add_option("--rate", comp.rate)->capture_default_str();
  synth->add_option("--exponent", comp.exponent)->capture_default_str();
  synth->add_option("--location", comp.location)->capture_default_str();
  synth->add_option("--noise_sigma", sig.noise_sigma)->capture_default_str();
  synth->add_option("--length", sig.length)->capture_default_str();
  synth->add_option("--seed", sig.seed)->capture_default_str();
  synth->add_option("--count", synth_count, "Number of series")->capture_default_str();
  synth->add_option("--family", family, "signal (flags above) | corpus (sinusoid+trend family)")->capture_default_str();
  synth->add_option("--format", synth_format, "csv | shard")->capture_default_str();
  synth->add_option("--out", synth_out, "CSV file or shard directory (CSV default: stdout)");
  synth->add_option("--shard_bytes", synth_shard_bytes)->capture_default_str();

  // shard
  auto* shard = app.add_subcommand("shard", "Pack CSV series into shards");
  std::vector<std::string> shard_inputs;
  std::string shard_out;
  std::uint64_t shard_bytes = kDefaultShardBytes, shard_seed = 0;
  shard->add_option("--input", shard_inputs, "CSV files or directories")->required();
  shard->add_option("--out", shard_out, "Output directory")->required();
  shard->add_option("--shard_bytes", shard_bytes)->capture_default_str();
  shard->add_option("--seed", shard_seed)->capture_default_str();

  // stats
  auto* stats = app.add_subcommand("stats", "Dataset complexity: length-weighted ADF and forecastability");
  std::vector<std::string> stats_inputs;
  stats->add_option("--input", stats_inputs, "Shard directories, CSV files or directories")->required();

  // train / posttrain
  auto* train = app.add_subcommand("train", "Pre-train from initialization");
  ModelFlags train_model(ModelConfig::desk());
  TrainFlags train_flags;
  std::string train_data = "shards", train_out = "model.sfck", train_resume, train_ckdir;
  Index active_shards = 4, rotate_every = 100;
  train_model.add(train);
  train_flags.add(train);
  train->add_option("--data", train_data, "Shard directory (relative paths resolve under SF_DATA_DIR)")
      ->capture_default_str();
  train->add_option("--out", train_out, "Final checkpoint")->capture_default_str();
  train->add_option("--resume", train_resume, "Continue from a checkpoint with training state");
  train->add_option("--checkpoint_dir", train_ckdir, "Directory for interval checkpoints");
  train->add_option("--active_shards", active_shards, "Resident shard capacity")->capture_default_str();
  train->add_option("--rotate_every", rotate_every, "Steps between active-set rotations")->capture_default_str();

  auto* post = app.add_subcommand("posttrain", "Continued training with weighted serial loss");
  TrainFlags post_flags;
  post_flags.config.stage = Stage::Posttrain;
  std::string post_init, post_data = "shards", post_revisit, post_out = "posttrained.sfck", post_ckdir;
  post_flags.add(post);
  post->add_option("--init", post_init, "Pre-trained checkpoint")->required();
  post->add_option("--data", post_data, "Post-training shard directory")->capture_default_str();
  post->add_option("--revisit", post_revisit, "Pre-training shard directory mixed back in");
  post->add_option("--max_patches", post_flags.config.max_patches, "Raise the context bound first (0: keep)")
      ->capture_default_str();
  post->add_option("--out", post_out)->capture_default_str();
  post->add_option("--checkpoint_dir", post_ckdir);
  post->add_option("--active_shards", active_shards)->capture_default_str();
  post->add_option("--rotate_every", rotate_every)->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every parameter family");
  ModelFlags gc_model(ModelConfig::tiny_reference());
  GradCheckOptions gc;
  std::string gc_stage = "pretrain";
  gc_model.add(gradcheck);
  gradcheck->add_option("--seed", gc.seed)->capture_default_str();
  gradcheck->add_option("--batch", gc.batch)->capture_default_str();
  gradcheck->add_option("--epsilon", gc.epsilon)->capture_default_str();
  gradcheck->add_option("--alpha", gc.alpha)->capture_default_str();
  gradcheck->add_option("--stage", gc_stage, "pretrain | posttrain")->capture_default_str();
  gradcheck->add_option("--tol", gc.tolerance.rel_tol)->capture_default_str();

  // forecast
  auto* fc = app.add_subcommand("forecast", "Quantile forecast for one CSV series");
  std::string fc_ckpt, fc_input, fc_out, fc_mode = "serial";
  Index fc_horizon = 0;
  bool monotone = true;
  fc->add_option("--checkpoint", fc_ckpt)->required();
  fc->add_option("--input", fc_input, "CSV with a value column")->required();
  fc->add_option("--horizon", fc_horizon)->required()->check(CLI::PositiveNumber);
  fc->add_option("--mode", fc_mode, "serial | rolling")->capture_default_str();
  fc->add_option("--monotone", monotone, "Sort quantiles at every step")->capture_default_str();
  fc->add_option("--out", fc_out, "Output CSV (default: stdout)");

  // eval
  auto* ev = app.add_subcommand("eval", "Hold out the series tails and score forecasts");
  std::string ev_ckpt;
  std::vector<std::string> ev_inputs;
  Index ev_horizon = 64, ev_season = 1, ev_max = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--input", ev_inputs, "Shard directories, CSV files or directories")->required();
  ev->add_option("--horizon", ev_horizon)->check(CLI::PositiveNumber)->capture_default_str();
  ev->add_option("--season", ev_season, "MASE season m")->capture_default_str();
  ev->add_option("--max_series", ev_max, "Evaluate at most this many series (0: all)")->capture_default_str();
  ev->add_option("--monotone", monotone)->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "Serial versus rolling inference cost");
  ModelFlags bench_model(ModelConfig::desk());
  std::string bench_ckpt, bench_horizons = "16,32,80";
  Index bench_reps = 20;
  std::uint64_t bench_seed = 0;
  bench_model.add(bench);
  bench->add_option("--checkpoint", bench_ckpt, "Use a trained model instead of a seeded initialization");
  bench->add_option("--horizons", bench_horizons)->capture_default_str();
  bench->add_option("--reps", bench_reps)->capture_default_str();
  bench->add_option("--seed", bench_seed)->capture_default_str();

  std::vector<std::string> args;
  try {
    std::vector<std::string> raw(argv + std::min(argc, 1), argv + argc);
    if (!raw.empty() && raw[0].rfind("-", 0) != 0) {
      std::vector<std::string> tail(raw.begin() + 1, raw.end());
      args.push_back(raw[0]);
      for (auto& a : expand_config(tail)) args.push_back(a);
    } else {
      args = raw;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    echo_config(sub);
    if (sub == synth) {
      std::vector<Series> out;
      if (family == "corpus") {
        CorpusSpec cs;
        cs.count = synth_count;
        cs.length = sig.length;
        cs.seed = sig.seed;
        out = make_corpus(cs);
      } else if (family == "signal") {
        sig.components.clear();
        sig.combine = parse_combine(combine);
        for (const auto& k : split_list(kind)) {
          SignalComponent c = comp;
          c.kind = parse_signal_kind(k);
          sig.components.push_back(c);
        }
        for (Index i = 0; i < synth_count; ++i) {
          SignalSpec s = sig;
          s.seed = synth_count == 1 ? sig.seed : sub_seed(sig.seed, std::uint64_t(i));
          out.push_back(gen_signal(s));
        }
      } else {
        throw ConfigError("unknown family '" + family + "' (signal|corpus)");
      }
      if (synth_format == "shard") {
        if (synth_out.empty()) throw ConfigError("--out is required for the shard format");
        const auto m = build_shards(out, synth_shard_bytes, resolve_data(synth_out), sig.seed);
        std::cout << "shards " << m.shards.size() << "\nseries " << m.total_series() << "\npoints " << m.total_points()
                  << '\n';
      } else if (synth_format == "csv") {
        if (out.size() != 1) throw ConfigError("CSV output holds one series; use --format shard for --count > 1");
        if (synth_out.empty()) {
          std::cout.precision(17);
          std::cout << "value\n";
          for (double v : out[0]) std::cout << v << '\n';
        } else {
          write_csv_series(synth_out, out[0]);
        }
      } else {
        throw ConfigError("unknown format '" + synth_format + "' (csv|shard)");
      }
    } else if (sub == shard) {
      const auto series = load_series_inputs(shard_inputs);
      const auto m = build_shards(series, shard_bytes, resolve_data(shard_out), shard_seed);
      std::cout << "shards " << m.shards.size() << "\nseries " << m.total_series() << "\npoints " << m.total_points()
                << '\n';
    } else if (sub == stats) {
      std::vector<std::string> resolved;
      for (const auto& s : stats_inputs) resolved.push_back(resolve_data(s).string());
      const auto series = load_series_inputs(resolved);
      std::uint64_t points = 0;
      for (const auto& s : series) points += s.size();
      const auto c = dataset_complexity(series);
      std::cout << "series " << series.size() << "\npoints " << points << "\nadf " << c.adf << "\nforecastability "
                << c.forecastability << "\ndegenerate " << c.degenerate_variates << '\n';
    } else if (sub == train) {
      TrainConfig tc = train_flags.resolve();
      tc.stage = Stage::Pretrain;
      ModelConfig mc = train_model.resolve();
      WindowSampler sampler(ShardManifest::load(resolve_data(train_data)), active_shards, rotate_every, tc.seed);
      MixtureSampler mix({&sampler}, {1.0});
      TrainHooks hooks;
      hooks.on_step = [&](const StepReport& r) { log_step(r, tc.log_every); };
      hooks.checkpoint_dir = train_ckdir;
      TrainRun<float> run;
      if (!train_resume.empty()) {
        auto ck = load_checkpoint<float>(train_resume, &mc);
        if (!ck.optimizer) throw CheckpointError("'" + train_resume + "' holds no training state");
        run = train_loop<float>(std::move(ck.params), std::move(*ck.optimizer), mix, tc, hooks);
      } else {
        run = run_pretrain<float>(mc, tc, mix, hooks);
      }
      save_checkpoint<float>(train_out, run.params, &run.state, tc.to_text());
      std::cout << "steps " << run.state.step << "\nskipped " << run.skipped << "\nfinal_loss "
                << (run.history.empty() ? 0.0 : run.history.back().loss.total) << "\ncheckpoint " << train_out << '\n';
    } else if (sub == post) {
      TrainConfig tc = post_flags.resolve();
      tc.stage = Stage::Posttrain;
      auto ck = load_model(post_init);
      std::vector<std::unique_ptr<WindowSampler>> samplers;
      samplers.push_back(std::make_unique<WindowSampler>(ShardManifest::load(resolve_data(post_data)), active_shards,
                                                         rotate_every, tc.seed, 0));
      if (!post_revisit.empty())
        samplers.push_back(std::make_unique<WindowSampler>(ShardManifest::load(resolve_data(post_revisit)),
                                                           active_shards, rotate_every, sub_seed(tc.seed, 1), 1));
      std::vector<double> weights(tc.mixture_weights.begin(), tc.mixture_weights.end());
      weights.resize(samplers.size(), 0.0);
      if (samplers.size() == 1) weights = {1.0};
      std::vector<WindowSampler*> ptrs;
      for (auto& s : samplers) ptrs.push_back(s.get());
      MixtureSampler mix(ptrs, weights);
      TrainHooks hooks;
      hooks.on_step = [&](const StepReport& r) { log_step(r, tc.log_every); };
      hooks.checkpoint_dir = post_ckdir;
      auto run = run_posttrain<float>(ck.params, tc, mix, hooks);
      save_checkpoint<float>(post_out, run.params, &run.state, tc.to_text());
      std::cout << "steps " << run.state.step << "\nskipped " << run.skipped << "\nmax_patches "
                << run.params.config.max_patches << "\ncheckpoint " << post_out << '\n';
    } else if (sub == gradcheck) {
      const ModelConfig mc = gc_model.resolve();
      if (gc_stage == "pretrain") gc.stage = Stage::Pretrain;
      else if (gc_stage == "posttrain") gc.stage = Stage::Posttrain;
      else throw ConfigError("unknown stage '" + gc_stage + "'");
      const auto reports = gradient_check_suite(mc, gc);
      const GradCheckReport* worst = nullptr;
      for (const auto& r : reports) {
        std::cout << r.param_name << " max_rel_err " << r.max_rel_err << " max_abs_err " << r.max_abs_err
                  << " coords " << r.coords_checked << (r.passed ? " ok" : " FAIL") << '\n';
        if (!r.passed && (!worst || r.max_rel_err > worst->max_rel_err)) worst = &r;
      }
      if (worst) {
        std::cerr << "gradient check failed; worst family: " << worst->param_name << " (max_rel_err "
                  << worst->max_rel_err << ")\n";
        return 2;
      }
    } else if (sub == fc) {
      const auto ck = load_model(fc_ckpt);
      const auto series = read_csv_series(fc_input);
      ForecastOptions opt;
      opt.monotone = monotone;
      InferenceStats st;
      ForecastDistribution dist;
      if (fc_mode == "serial") dist = forecast<float>(series, fc_horizon, ck.params, &st, opt);
      else if (fc_mode == "rolling") dist = forecast_rolling_ntp<float>(series, fc_horizon, ck.params, &st, opt);
      else throw ConfigError("unknown mode '" + fc_mode + "' (serial|rolling)");
      std::ofstream file;
      if (!fc_out.empty()) {
        file.open(fc_out);
        if (!file) throw IoError("cannot open '" + fc_out + "' for writing");
      }
      std::ostream& os = fc_out.empty() ? std::cout : file;
      os.precision(10);
      os << "step";
      for (double q : dist.levels.levels) os << ",q" << q;
      os << '\n';
      for (Index t = 0; t < dist.horizon(); ++t) {
        os << t + 1;
        for (Index k = 0; k < dist.values.rows(); ++k) os << ',' << dist.values(k, t);
        os << '\n';
      }
      std::cerr << "passes " << st.passes << " blocks " << st.blocks << '\n';
    } else if (sub == ev) {
      const auto ck = load_model(ev_ckpt);
      std::vector<std::string> resolved;
      for (const auto& s : ev_inputs) resolved.push_back(resolve_data(s).string());
      auto series = load_series_inputs(resolved);
      if (ev_max > 0 && Index(series.size()) > ev_max) series.resize(std::size_t(ev_max));
      ForecastOptions opt;
      opt.monotone = monotone;
      std::cout << evaluate<float>(ck.params, series, ev_horizon, ev_season, opt).to_text();
    } else if (sub == bench) {
      ModelParams<float> params =
          bench_ckpt.empty() ? ModelParams<float>::init(bench_model.resolve(), bench_seed) : load_model(bench_ckpt).params;
      std::vector<Index> horizons;
      for (const auto& h : split_list(bench_horizons)) horizons.push_back(std::stol(h));
      std::cout << "horizon blocks_serial blocks_rolling block_ratio wall_ms_serial wall_ms_rolling wall_ratio\n";
      for (const auto& r : bench_inference<float>(params, horizons, bench_reps, bench_seed))
        std::cout << r.horizon << ' ' << r.blocks_serial << ' ' << r.blocks_rolling << ' '
                  << double(r.blocks_rolling) / double(r.blocks_serial) << ' ' << r.wall_ms_serial << ' '
                  << r.wall_ms_rolling << ' ' << r.wall_ms_rolling / r.wall_ms_serial << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

} // namespace sf
