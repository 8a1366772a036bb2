#include "tgcn/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tgcn/data.hpp"
#include "tgcn/explain.hpp"
#include "tgcn/metrics.hpp"
#include "tgcn/model.hpp"
#include "tgcn/training.hpp"

namespace tgcn::cli {

namespace {

using nlohmann::json;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw DataError("write to '" + path + "' failed");
}

// One manifest per run, next to the primary output. Reproducing the run is a
// matter of re-invoking the command with the recorded flags and seed.
struct ManifestClock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const std::string& out_path, const std::string& command,
             json flags, json inputs, json outputs) const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    json manifest;
    manifest["command"] = command;
    manifest["tool_version"] = kToolVersion;
    manifest["flags"] = std::move(flags);
    manifest["inputs"] = std::move(inputs);
    manifest["outputs"] = std::move(outputs);
    manifest["wall_clock_seconds"] = secs;
    write_file(out_path + ".manifest.json", manifest.dump(2) + "\n");
  }
};

struct GenerateArgs {
  int n = 0;
  int p = 21;
  std::string topology = "builtin";
  double edge_prob = 0.3;
  int t_raw = 19200;
  double sample_rate = 200.0;
  double noise = 1.0;
  double freq_lo = 15.0;
  double freq_hi = 25.0;
  double amplitude = 3.0;
  double duration = 10.0;
  int origin = -1;
  double decay = 0.5;
  double positive_frac = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};

Adjacency build_topology(const GenerateArgs& a, std::vector<std::string>* leads) {
  if (a.topology == "builtin") {
    const EegTopology& topo = builtin_topology();
    if (a.p != static_cast<int>(topo.leads.size()))
      throw UsageError("--topology builtin requires --p " +
                       std::to_string(topo.leads.size()));
    *leads = topo.leads;
    return topo.adjacency;
  }
  if (a.topology == "complete") return Adjacency::complete(a.p);
  if (a.topology == "ring") {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < a.p; ++i) edges.emplace_back(i, (i + 1) % a.p);
    return Adjacency::from_edges(a.p, edges);
  }
  if (a.topology == "random") {
    Rng rng(derive_seed(a.seed, 0, "topology"));
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < a.p; ++i) {
      for (int j = i + 1; j < a.p; ++j)
        if (rng.bernoulli(a.edge_prob)) edges.emplace_back(i, j);
      // keep the graph connected so motifs can spread anywhere
      if (i + 1 < a.p) edges.emplace_back(i, i + 1);
    }
    return Adjacency::from_edges(a.p, edges);
  }
  // Edge-list file over the builtin lead names.
  const EegTopology& topo = builtin_topology();
  if (a.p != static_cast<int>(topo.leads.size()))
    throw UsageError("edge-list topologies use the builtin 21 leads; pass --p 21");
  *leads = topo.leads;
  return load_adjacency_edges(a.topology, topo.leads);
}

int cmd_generate(const GenerateArgs& a) {
  ManifestClock clock;
  SyntheticSpec spec;
  spec.p = a.p;
  spec.t_raw = a.t_raw;
  spec.sample_rate = a.sample_rate;
  spec.noise_level = a.noise;
  spec.motif_freq_lo = a.freq_lo;
  spec.motif_freq_hi = a.freq_hi;
  spec.motif_amplitude = a.amplitude;
  spec.motif_duration = a.duration;
  spec.origin_node = a.origin;
  spec.decay = a.decay;
  spec.positive_fraction = a.positive_frac;
  spec.seed = a.seed;
  std::vector<std::string> leads;
  spec.adjacency = build_topology(a, &leads);

  Dataset ds = generate(spec, a.n);
  ds.leads = leads;
  save_dataset(ds, a.out);

  json flags = {{"n", a.n},
                {"p", a.p},
                {"topology", a.topology},
                {"edge_prob", a.edge_prob},
                {"t_raw", a.t_raw},
                {"sample_rate", a.sample_rate},
                {"noise", a.noise},
                {"motif_freq_lo", a.freq_lo},
                {"motif_freq_hi", a.freq_hi},
                {"amplitude", a.amplitude},
                {"duration", a.duration},
                {"origin", a.origin},
                {"decay", a.decay},
                {"positive_frac", a.positive_frac},
                {"seed", a.seed}};
  clock.write(a.out, "generate", flags, json::object(), {{"dataset", a.out}});
  return 0;
}

struct TrainArgs {
  std::string dataset;
  std::string eval_dataset;
  std::string config = "II";
  std::string rule = "B";
  std::string aggregate = "max";
  bool use_g1 = false;
  bool tcnn = false;
  std::uint64_t seed = 0;
  double lr = 0.01;
  double momentum = 0.9;
  int decay_every = 100;
  double decay_factor = 0.9;
  int batch_size = 16;
  int max_steps = 1000;
  double keep_negatives = 0.1;
  int eval_every = 100;
  double stop_at_auroc = 0.0;
  int stft_window = 64;
  int stft_overlap = 32;
  std::string out;
  std::string log;
};

StcRule parse_rule(const std::string& s) {
  if (s == "A") return StcRule::A;
  if (s == "B") return StcRule::B;
  throw UsageError("--rule must be A or B");
}

ReduceKind parse_aggregate(const std::string& s) {
  if (s == "max") return ReduceKind::Max;
  if (s == "mean") return ReduceKind::Mean;
  throw UsageError("--aggregate must be max or mean");
}

bool is_named_config(const std::string& s) {
  return s == "I" || s == "II" || s == "III" || s == "IV" || s == "V";
}

ArchitectureConfig resolve_config(const TrainArgs& a, const Dataset& ds,
                                  const StftSpec& stft) {
  const int frames = stft.frame_count(ds.t_raw);
  const int bins = stft.bins();
  ArchitectureConfig config;
  if (is_named_config(a.config)) {
    config = named_config(a.config, parse_rule(a.rule), parse_aggregate(a.aggregate),
                          a.use_g1);
    config.input_frames = frames;
    config.input_bins = a.tcnn ? ds.p * bins : bins;
    config.collapse_input = a.tcnn;
  } else {
    std::ifstream in(a.config);
    if (!in) throw DataError("cannot open config file '" + a.config + "'");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    config = config_from_text(text);
    const int want_bins = config.collapse_input ? ds.p * bins : bins;
    if (config.input_frames != frames || config.input_bins != want_bins)
      throw DataError("config expects input " + std::to_string(config.input_frames) +
                      "x" + std::to_string(config.input_bins) +
                      ", dataset with this stft yields " + std::to_string(frames) +
                      "x" + std::to_string(want_bins));
  }
  return config;
}

int cmd_train(const TrainArgs& a) {
  ManifestClock clock;
  const Dataset ds = load_dataset(a.dataset);
  Dataset eval_ds;
  const bool have_eval = !a.eval_dataset.empty();
  if (have_eval) eval_ds = load_dataset(a.eval_dataset);

  TrainSpec spec;
  spec.lr0 = a.lr;
  spec.momentum = a.momentum;
  spec.decay_every = a.decay_every;
  spec.decay_factor = a.decay_factor;
  spec.batch_size = a.batch_size;
  spec.max_steps = a.max_steps;
  spec.seed = a.seed;
  spec.keep_negative_fraction = a.keep_negatives;
  spec.eval_every = a.eval_every;
  spec.stop_at_auroc = a.stop_at_auroc;
  spec.stft.window_len = a.stft_window;
  spec.stft.overlap = a.stft_overlap;
  spec.check();

  const ArchitectureConfig config = resolve_config(a, ds, spec.stft);
  TgcnModel model = TgcnModel::build(config, a.seed);

  TrainResult result = train(model, ds, spec, have_eval ? &eval_ds : nullptr);
  save_model(result.best, a.out);
  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  write_file(log_path, train_log_csv(result.log));

  json flags = {{"dataset", a.dataset},
                {"eval_dataset", a.eval_dataset},
                {"config", a.config},
                {"rule", a.rule},
                {"aggregate", a.aggregate},
                {"use_g1", a.use_g1},
                {"tcnn", a.tcnn},
                {"seed", a.seed},
                {"lr", a.lr},
                {"momentum", a.momentum},
                {"decay_every", a.decay_every},
                {"decay_factor", a.decay_factor},
                {"batch_size", a.batch_size},
                {"max_steps", a.max_steps},
                {"keep_negatives", a.keep_negatives},
                {"eval_every", a.eval_every},
                {"stop_at_auroc", a.stop_at_auroc},
                {"stft_window", a.stft_window},
                {"stft_overlap", a.stft_overlap},
                {"resolved_config_text", config_to_text(config)},
                {"batch_norm_epsilon", kBatchNormEpsilon},
                {"batch_norm_momentum", kBatchNormMomentum},
                {"stft_window_function", "rectangular"}};
  json outputs = {{"model", a.out}, {"log", log_path}};
  json info = {{"best_auroc", result.best_auroc},
               {"best_step", result.best_step},
               {"steps_run", result.steps_run},
               {"param_count", model.param_count()}};
  flags["result"] = info;
  clock.write(a.out, "train", flags,
              {{"dataset", a.dataset}, {"eval_dataset", a.eval_dataset}}, outputs);
  return 0;
}

struct EvaluateArgs {
  std::string model;
  std::string dataset;
  int stft_window = 64;
  int stft_overlap = 32;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  ManifestClock clock;
  TgcnModel model = load_model(a.model);
  const Dataset ds = load_dataset(a.dataset);
  StftSpec stft;
  stft.window_len = a.stft_window;
  stft.overlap = a.stft_overlap;
  const int frames = stft.frame_count(ds.t_raw);
  const int bins = stft.bins();
  const int want_bins =
      model.config().collapse_input ? ds.p * bins : bins;
  if (model.config().input_frames != frames || model.config().input_bins != want_bins)
    throw DataError("model expects input " +
                    std::to_string(model.config().input_frames) + "x" +
                    std::to_string(model.config().input_bins) +
                    ", dataset with this stft yields " + std::to_string(frames) +
                    "x" + std::to_string(want_bins));

  const ScoredLabels scored = score_dataset(model, ds, stft);
  write_file(a.out, metrics_report_json(scored));

  json flags = {{"model", a.model},
                {"dataset", a.dataset},
                {"stft_window", a.stft_window},
                {"stft_overlap", a.stft_overlap}};
  clock.write(a.out, "evaluate", flags,
              {{"model", a.model}, {"dataset", a.dataset}}, {{"metrics", a.out}});
  return 0;
}

struct ExplainArgs {
  std::vector<std::string> models;
  std::string dataset;
  std::int64_t sample = 0;
  std::string mode = "gradient";
  int stft_window = 64;
  int stft_overlap = 32;
  std::string out;
  std::string overlay_out;
};

int cmd_explain(const ExplainArgs& a) {
  ManifestClock clock;
  if (a.mode != "gradient" && a.mode != "dropout-single" && a.mode != "dropout-region")
    throw UsageError("--mode must be gradient, dropout-single, or dropout-region");

  Ensemble ensemble;
  ensemble.stft.window_len = a.stft_window;
  ensemble.stft.overlap = a.stft_overlap;
  for (const auto& path : a.models) ensemble.models.push_back(load_model(path));
  ensemble.check();

  const Dataset ds = load_dataset(a.dataset);
  if (a.sample < 0 || static_cast<std::size_t>(a.sample) >= ds.samples.size())
    throw DataError("sample id " + std::to_string(a.sample) +
                    " out of range (dataset has " +
                    std::to_string(ds.samples.size()) + " samples)");
  const StructuralTimeSeries& sample = ds.samples[static_cast<std::size_t>(a.sample)];

  if (a.mode == "gradient") {
    const AttributionResult attr = gradient_attribution(ensemble, sample);
    write_file(a.out, attribution_csv(attr, ds.leads));
    if (!a.overlay_out.empty()) {
      const EegTopology& topo = builtin_topology();
      if (ds.leads != topo.leads)
        throw DataError("overlay output needs the builtin 21-lead dataset");
      std::vector<std::pair<int, int>> pairs;
      for (const auto& [x, y] : topo.montage_pairs)
        pairs.emplace_back(topo.lead_index(x), topo.lead_index(y));
      const Tensor overlay = render_overlay_data(attr, pairs);
      std::ostringstream os;
      os << "t";
      for (const auto& [x, y] : topo.montage_pairs) os << "," << x << "-" << y;
      os << "\n";
      char buf[40];
      for (int t = 0; t < overlay.extent(0); ++t) {
        os << t;
        for (int j = 0; j < overlay.extent(1); ++j) {
          std::snprintf(buf, sizeof buf, "%.17g",
                        overlay[static_cast<std::size_t>(t) * overlay.extent(1) + j]);
          os << "," << buf;
        }
        os << "\n";
      }
      write_file(a.overlay_out, os.str());
    }
  } else {
    std::vector<std::vector<int>> drops = {{}};  // empty-drop control
    std::vector<std::string> group_names = {"control"};
    if (a.mode == "dropout-single") {
      for (auto& d : singleton_drops(ds.p)) drops.push_back(std::move(d));
      group_names.clear();
    } else {
      const EegTopology& topo = builtin_topology();
      for (auto& d : region_drops(topo, ds.leads)) drops.push_back(std::move(d));
      for (const auto& region : topo.regions) group_names.push_back(region.name);
    }
    const std::vector<DropoutScore> scores = sequence_dropout(ensemble, sample, drops);
    write_file(a.out, dropout_json(scores, ds.leads, group_names));
  }

  json flags = {{"models", a.models},
                {"dataset", a.dataset},
                {"sample", a.sample},
                {"mode", a.mode},
                {"stft_window", a.stft_window},
                {"stft_overlap", a.stft_overlap},
                {"overlay_out", a.overlay_out}};
  clock.write(a.out, "explain", flags,
              {{"models", a.models}, {"dataset", a.dataset}}, {{"result", a.out}});
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Temporal graph convolutional networks for structural time series"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "Generate a synthetic dataset");
  generate->add_option("--n", gen.n, "Sample count")->required();
  generate->add_option("--p", gen.p, "Node (lead) count");
  generate->add_option("--topology", gen.topology,
                       "builtin | random | ring | complete | edge-list path");
  generate->add_option("--edge-prob", gen.edge_prob, "Edge probability (random)");
  generate->add_option("--t-raw", gen.t_raw, "Samples per epoch");
  generate->add_option("--sample-rate", gen.sample_rate, "Hz");
  generate->add_option("--noise", gen.noise, "Background noise std");
  generate->add_option("--motif-freq-lo", gen.freq_lo, "Motif band low (Hz)");
  generate->add_option("--motif-freq-hi", gen.freq_hi, "Motif band high (Hz)");
  generate->add_option("--amp", gen.amplitude, "Motif amplitude");
  generate->add_option("--duration", gen.duration, "Motif duration (s)");
  generate->add_option("--origin", gen.origin, "Motif origin node (-1: random)");
  generate->add_option("--decay", gen.decay, "Amplitude decay per hop");
  generate->add_option("--positive-frac", gen.positive_frac, "Positive fraction");
  generate->add_option("--seed", gen.seed, "Seed");
  generate->add_option("--out", gen.out, "Output dataset path")->required();

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--dataset", tr.dataset, "Training dataset")->required();
  train_cmd->add_option("--eval-dataset", tr.eval_dataset, "Evaluation dataset");
  train_cmd->add_option("--config", tr.config, "I..V or config file path");
  train_cmd->add_option("--rule", tr.rule, "A | B");
  train_cmd->add_option("--aggregate", tr.aggregate, "max | mean");
  train_cmd->add_flag("--use-g1", tr.use_g1, "Rule B inner nonlinearity");
  train_cmd->add_flag("--tcnn", tr.tcnn, "Plain TCNN baseline (fold leads)");
  train_cmd->add_option("--seed", tr.seed, "Seed");
  train_cmd->add_option("--lr", tr.lr, "Initial learning rate");
  train_cmd->add_option("--momentum", tr.momentum, "Momentum coefficient");
  train_cmd->add_option("--decay-every", tr.decay_every, "Steps between decays");
  train_cmd->add_option("--decay-factor", tr.decay_factor, "Decay factor");
  train_cmd->add_option("--batch-size", tr.batch_size, "Batch size");
  train_cmd->add_option("--max-steps", tr.max_steps, "Gradient steps");
  train_cmd->add_option("--keep-negatives", tr.keep_negatives,
                        "Negative keep fraction");
  train_cmd->add_option("--eval-every", tr.eval_every, "Eval interval (steps)");
  train_cmd->add_option("--stop-at-auroc", tr.stop_at_auroc,
                        "Stop once the eval AU-ROC reaches this");
  train_cmd->add_option("--stft-window", tr.stft_window, "STFT window");
  train_cmd->add_option("--stft-overlap", tr.stft_overlap, "STFT overlap");
  train_cmd->add_option("--out", tr.out, "Output model path")->required();
  train_cmd->add_option("--log", tr.log, "Step log path (default <out>.log.csv)");

  EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate a model");
  evaluate->add_option("--model", ev.model, "Model path")->required();
  evaluate->add_option("--dataset", ev.dataset, "Dataset path")->required();
  evaluate->add_option("--stft-window", ev.stft_window, "STFT window");
  evaluate->add_option("--stft-overlap", ev.stft_overlap, "STFT overlap");
  evaluate->add_option("--out", ev.out, "Metrics JSON path")->required();

  ExplainArgs ex;
  CLI::App* explain = app.add_subcommand("explain", "Explain a prediction");
  explain->add_option("--model", ex.models, "Model path (repeat for ensembles)")
      ->required();
  explain->add_option("--dataset", ex.dataset, "Dataset path")->required();
  explain->add_option("--sample", ex.sample, "Sample id");
  explain->add_option("--mode", ex.mode,
                      "gradient | dropout-single | dropout-region");
  explain->add_option("--stft-window", ex.stft_window, "STFT window");
  explain->add_option("--stft-overlap", ex.stft_overlap, "STFT overlap");
  explain->add_option("--out", ex.out, "Output path")->required();
  explain->add_option("--overlay-out", ex.overlay_out,
                      "Montage overlay CSV (gradient mode)");

  std::vector<const char*> argv;
  argv.push_back("tgcn");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (evaluate->parsed()) return cmd_evaluate(ev);
    return cmd_explain(ex);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {  // DataError, ShapeError, io
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace tgcn::cli
