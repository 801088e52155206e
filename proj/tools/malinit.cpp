// malinit: command-line front end for the adversarial initialization toolkit.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "malinit/malinit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace malinit;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    auto j = read_json_file(path);
    if (!j.is_object()) throw UsageError(path + ": config must be a JSON object");
    return j;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

template <typename F>
auto parse_config(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> keys, const std::string& ctx) {
  parse_config([&] {
    detail::require_keys(j, keys, ctx);
    return 0;
  });
}

bool is_checkpoint(const std::string& path) { return fs::is_directory(path) && fs::exists(path + "/manifest.json"); }

void require_distinct(const std::string& in, const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  std::error_code ec;
  if (fs::exists(out) && fs::equivalent(in, out, ec)) throw UsageError("--out must differ from --in (inputs are never modified)");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// --- attack -----------------------------------------------------------------

struct AttackArgs {
  std::string config, in, out, kind, placement;
  std::optional<double> r, scale;
  std::optional<std::size_t> s, filters;
  std::optional<std::uint64_t> placement_seed;
  bool start_parity = false;
};

AttackConfig resolve_attack(const json& j, const AttackArgs& a) {
  json merged = j.is_null() ? json::object() : j;
  if (!a.kind.empty()) merged["kind"] = a.kind;
  if (a.r) merged["r"] = *a.r;
  if (a.s) merged["s"] = *a.s;
  if (a.filters) merged["attacked_filters"] = *a.filters;
  if (a.scale) merged["scale_factor"] = *a.scale;
  if (!a.placement.empty()) merged["placement"] = a.placement;
  if (a.placement_seed) merged["placement_seed"] = *a.placement_seed;
  if (a.start_parity) merged["start_parity"] = true;
  if (!merged.contains("kind")) throw UsageError("attack kind is required (--kind)");
  return parse_config([&] { return attack_from_json(merged); });
}

void add_attack_flags(CLI::App* sub, AttackArgs& a) {
  sub->add_option("--kind", a.kind, "soft-knockout | shift | conv-soft-knockout | conv-shift | scale | variance-swap");
  sub->add_option("--r", a.r, "fraction of entries in the small block");
  sub->add_option("--s", a.s, "shift: number of neurons left active");
  sub->add_option("--filters", a.filters, "conv cross layers: number of attacked filters");
  sub->add_option("--scale", a.scale, "scale factor for --kind scale");
  sub->add_option("--placement", a.placement, "stable | shuffled");
  sub->add_option("--placement-seed", a.placement_seed, "seed for shuffled placement");
  sub->add_flag("--start-parity", a.start_parity, "treat the first tensor as a cross layer");
}

int run_attack(const AttackArgs& a) {
  const json cfg = load_config(a.config);
  check_keys(cfg, {"attack"}, "attack config");
  AttackConfig ac = resolve_attack(cfg.value("attack", json::object()), a);
  if (a.in.empty()) throw UsageError("--in is required");
  require_distinct(a.in, a.out);
  if (is_checkpoint(a.in)) {
    Network net = load_checkpoint(a.in);
    net.set_weights(attack_network(net.weight_tensors(), ac));
    save_checkpoint(net, a.out, {{"attack", attack_to_json(ac)}});
  } else {
    const auto w = load_tensor(a.in);
    // A lone tensor keeps its place in the alternation through its layer index.
    if (w.layer_index() % 2 == 1) ac.start_parity = !ac.start_parity;
    AttackStream stream(ac);
    const auto out = attack_tensor(stream, w);
    save_tensor(out, a.out, {{"attack", attack_to_json(ac)}});
  }
  return 0;
}

// --- analyze ----------------------------------------------------------------

struct AnalyzeArgs {
  std::string config, out;
  double r = 0.5, bias_ratio = 0.0, sharpness = 1.0 / 3.0;
  std::size_t n = 100;
  bool grid = false;
};

const std::vector<double> kGridR = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
const std::vector<std::size_t> kGridN = {50, 100, 784};
const std::vector<double> kGridBias = {0.0, 1.0, 5.0};
const std::vector<double> kGridSharpness = {0.1, 1.0 / 3.0, 1.0};

int run_analyze(const AnalyzeArgs& a) {
  std::ostringstream os;
  os << "r,n,bias_ratio,sharpness,p_zero_small_block,p_zero_large_block\n";
  auto row = [&](double r, std::size_t n, double b, double s) {
    const LayerStatsInput in{n, b, s, r};
    const auto st = first_layer_stats(in, std::sqrt(2.0 / static_cast<double>(n)), 0.5);
    os << fmt(r) << "," << n << "," << fmt(b) << "," << fmt(s) << "," << fmt(st.p_zero_s) << "," << fmt(st.p_zero_l) << "\n";
  };
  if (a.grid) {
    for (double r : kGridR)
      for (auto n : kGridN)
        for (double b : kGridBias)
          for (double s : kGridSharpness) row(r, n, b, s);
  } else {
    try {
      row(a.r, a.n, a.bias_ratio, a.sharpness);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  write_text(a.out, os.str());
  return 0;
}

// --- montecarlo -------------------------------------------------------------

struct McArgs {
  std::string in, out, input = "uniform";
  std::size_t trials = 100000, jobs = 1;
  std::uint64_t seed = 0;
  double mean = 0.5, std = 0.5;
  bool truncated = false, grid = false;
  double r = 0.5, bias_ratio = 0.0, sharpness = 1.0 / 3.0;
  std::size_t n = 100;
};

int run_montecarlo(const McArgs& a) {
  McConfig mc;
  mc.trials = a.trials;
  mc.seed = a.seed;
  mc.jobs = a.jobs;
  if (a.input == "uniform") {
    mc.input = InputDistribution::uniform01();
  } else if (a.input == "normal") {
    mc.input = InputDistribution::normal(a.mean, a.std, a.truncated);
  } else {
    throw UsageError("--input must be uniform or normal");
  }
  std::ostringstream os;
  if (!a.in.empty()) {
    if (is_checkpoint(a.in)) {
      const auto net = load_checkpoint(a.in);
      const auto counts = active_neuron_count(net, mc);
      os << "hidden_layer,active_units\n";
      for (std::size_t i = 0; i < counts.size(); ++i) os << i << "," << counts[i] << "\n";
    } else {
      const auto w = load_tensor(a.in);
      if (w.rank() != 2) throw UsageError("montecarlo: expects a dense tensor (or a checkpoint directory)");
      const auto f = estimate_p_zero(w, {}, mc);
      os << "neuron,p_zero\n";
      for (std::size_t i = 0; i < f.size(); ++i) os << i << "," << fmt(f[i]) << "\n";
    }
  } else {
    os << "r,n,bias_ratio,sharpness,p_zero_small_block,p_zero_large_block,analytic_small,analytic_large\n";
    auto point = [&](double r, std::size_t n, double s, const std::vector<double>& biases) {
      const auto freqs = split_block_zero_frequencies(r, n, s, biases, mc);
      for (const auto& f : freqs) {
        const auto st = first_layer_stats({n, f.bias_ratio, s, r}, std::sqrt(2.0 / static_cast<double>(n)), 0.5);
        os << fmt(r) << "," << n << "," << fmt(f.bias_ratio) << "," << fmt(s) << "," << fmt(f.p_zero_s) << ","
           << fmt(f.p_zero_l) << "," << fmt(st.p_zero_s) << "," << fmt(st.p_zero_l) << "\n";
      }
    };
    if (a.grid) {
      for (double r : kGridR)
        for (auto n : kGridN)
          for (double s : kGridSharpness) point(r, n, s, kGridBias);
    } else {
      point(a.r, a.n, a.sharpness, {a.bias_ratio});
    }
  }
  write_text(a.out, os.str());
  return 0;
}

// --- train / experiment -----------------------------------------------------

json default_dataset() { return {{"kind", "blobs"}, {"classes", 4}, {"dim", 20}, {"per_class", 250}, {"separation", 6.0}, {"seed", 123}}; }

NetworkSpec default_network(const Dataset& ds) {
  NetworkSpec s = NetworkSpec::dense_stack(ds.dim, {64, 64, ds.classes});
  if (ds.sample_shape.size() == 3) s.input_shape = ds.sample_shape;
  return s;
}

struct TrainArgs {
  std::string config, out;
  std::optional<std::size_t> epochs, batch;
  std::optional<double> lr, dropout;
  std::optional<std::uint64_t> seed;
  std::size_t seeds = 0, jobs = 1;
  AttackArgs attack;
};

void apply_train_flags(TrainConfig& t, const TrainArgs& a) {
  if (a.epochs) t.epochs = *a.epochs;
  if (a.batch) t.batch_size = *a.batch;
  if (a.lr) t.optimizer.lr = *a.lr;
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int run_train(const TrainArgs& a) {
  const json cfg = load_config(a.config);
  check_keys(cfg, {"dataset", "network", "train"}, "train config");
  const Dataset ds = dataset_from_json(cfg.value("dataset", default_dataset()));
  NetworkSpec spec = cfg.contains("network") ? parse_config([&] { return spec_from_json(cfg["network"]); }) : default_network(ds);
  if (a.dropout) spec.dropout_rate = *a.dropout;
  TrainConfig tc = cfg.contains("train") ? parse_config([&] { return train_from_json(cfg["train"]); }) : TrainConfig{};
  if (a.seed) tc.seed = *a.seed;
  apply_train_flags(tc, a);
  Network net(spec, init_seed(tc.seed));
  tc.seed = training_seed(tc.seed);
  const auto trace = train(net, ds, tc);
  std::ostringstream os;
  os << "epoch,train_loss,test_loss,test_acc\n";
  for (std::size_t e = 0; e < trace.train_loss.size(); ++e)
    os << e + 1 << "," << fmt(trace.train_loss[e]) << "," << fmt(trace.test_loss[e]) << "," << fmt(trace.test_accuracy[e]) << "\n";
  std::cout << os.str();
  std::cerr << "best accuracy " << trace.best_accuracy << " at epoch " << trace.best_epoch << "\n";
  if (!a.out.empty())
    save_checkpoint(net, a.out, {{"best_acc", trace.best_accuracy}, {"best_epoch", trace.best_epoch}}, trace.train_loss.size());
  return 0;
}

int run_experiment_cmd(const TrainArgs& a) {
  const json cfg = load_config(a.config);
  check_keys(cfg, {"name", "dataset", "network", "train", "attack", "seeds", "seed_count", "reshuffle_after_attack", "override"},
             "experiment config");
  if (a.out.empty()) throw UsageError("--out is required");
  const Dataset ds = dataset_from_json(cfg.value("dataset", default_dataset()));
  ExperimentConfig ec;
  ec.name = cfg.value("name", std::string("experiment"));
  ec.spec = cfg.contains("network") ? parse_config([&] { return spec_from_json(cfg["network"]); }) : default_network(ds);
  if (a.dropout) ec.spec.dropout_rate = *a.dropout;
  ec.train = cfg.contains("train") ? parse_config([&] { return train_from_json(cfg["train"]); }) : TrainConfig{};
  apply_train_flags(ec.train, a);
  const bool has_attack = cfg.contains("attack") || !a.attack.kind.empty();
  if (has_attack) ec.attack = resolve_attack(cfg.value("attack", json::object()), a.attack);
  ec.reshuffle_after_attack = cfg.value("reshuffle_after_attack", false);
  if (cfg.contains("override")) {
    const auto& o = cfg["override"];
    check_keys(o, {"learning_rate", "dropout_rate"}, "override");
    TrainingOverride ov;
    if (o.contains("learning_rate")) ov.learning_rate = o["learning_rate"].get<double>();
    if (o.contains("dropout_rate")) ov.dropout_rate = o["dropout_rate"].get<double>();
    ec = parse_config([&] { return override_training(ec, ov); });
  }
  if (!ec.attack && ec.alternative_attack.empty()) throw UsageError("experiment needs an attack (config \"attack\" or --kind)");
  const std::size_t count = a.seeds ? a.seeds : cfg.value("seed_count", std::size_t{50});
  ec.seeds = cfg.contains("seeds") ? cfg["seeds"].get<std::vector<std::uint64_t>>() : default_seeds(count);
  if (a.seeds && cfg.contains("seeds") && ec.seeds.size() > a.seeds) ec.seeds.resize(a.seeds);
  ec.output_dir = a.out;
  ec.jobs = a.jobs;
  fs::create_directories(a.out);
  const auto res = run_paired(ec, ds);
  std::vector<double> base, atk;
  for (const auto& r : res.baseline) base.push_back(r.best_accuracy);
  for (const auto& r : res.attacked) atk.push_back(r.best_accuracy);
  std::cout << "median best accuracy: baseline " << median(base) << ", attack " << median(atk) << "\n";
  return 0;
}

// --- knockout ---------------------------------------------------------------

struct KnockoutArgs {
  std::string in, out, widths = "14,7,7,2";
  KnockoutOptions opt;
};

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> w;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      w.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw UsageError("--widths: '" + item + "' is not a width");
    }
  }
  return w;
}

int run_knockout(const KnockoutArgs& a) {
  if (a.out.empty()) throw UsageError("--out is required");
  KnockoutResult res;
  Network result;
  if (!a.in.empty()) {
    require_distinct(a.in, a.out);
    const Network net = load_checkpoint(a.in);
    res = optimize_knockout(net, a.opt);
    result = apply_knockout(net, res);
  } else {
    res = optimize_knockout(parse_widths(a.widths), a.opt);
    result = res.net;
  }
  save_checkpoint(result, a.out, {{"objective_initial", res.objective.front()}, {"objective_final", res.objective.back()},
                                  {"iterations", res.iterations}});
  std::cout << "iteration,objective\n";
  for (std::size_t i = 0; i < res.objective.size(); ++i) std::cout << i << "," << fmt(res.objective[i]) << "\n";
  return 0;
}

// --- detect / undo ----------------------------------------------------------

std::vector<WeightTensor> load_weights(const std::string& in) {
  if (in.empty()) throw UsageError("--in is required");
  if (is_checkpoint(in)) return load_checkpoint(in).weight_tensors();
  return {load_tensor(in)};
}

int run_detect(const std::string& in, const std::string& out, double alpha) {
  if (out.empty()) throw UsageError("--out is required");
  auto ws = load_weights(in);
  fs::create_directories(out);
  DetectionReport rep;
  if (ws.size() == 1 && !is_checkpoint(in)) {
    // Single tensor: its sidecar layer index picks the orientation.
    rep = detect_block_structure(ws, alpha);
    const auto& w = ws.front();
    const auto flat = flatten_filter_major(w);
    if (flat.rows() >= 4 && flat.cols() >= 4) {
      rep.layers[0].layer = w.layer_index();
      rep.layers[0].test = block_structure_test(w, default_orientation(w.layer_index()));
      rep.layers[0].suspicious = rep.layers[0].test.p_value < alpha;
    }
  } else {
    rep = detect_block_structure(ws, alpha);
  }
  for (std::size_t i = 0; i < ws.size(); ++i) weight_heatmap(ws[i], out + "/layer_" + std::to_string(i) + ".pgm");
  write_text(out + "/report.json", report_to_json(rep).dump(2) + "\n");
  std::cout << (rep.any_suspicious() ? "suspicious" : "clean") << "\n";
  return 0;
}

int run_undo(const std::string& in, const std::string& out, std::uint64_t seed) {
  if (in.empty()) throw UsageError("--in is required");
  require_distinct(in, out);
  if (is_checkpoint(in)) {
    save_checkpoint(reshuffle_weights(load_checkpoint(in), seed), out, {{"reshuffled_with_seed", seed}});
  } else {
    const auto w = load_tensor(in);
    save_tensor(reshuffle_tensors({w}, seed).front(), out, {{"reshuffled_with_seed", seed}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"malinit: adversarial weight initialization toolkit"};
  app.require_subcommand(1);

  AttackArgs attack;
  auto* c_attack = app.add_subcommand("attack", "permute or rescale initial weights of a tensor or checkpoint");
  c_attack->add_option("--config", attack.config, "JSON config with an \"attack\" object");
  c_attack->add_option("--in", attack.in, "tensor file or checkpoint directory");
  c_attack->add_option("--out", attack.out, "output tensor file or checkpoint directory");
  add_attack_flags(c_attack, attack);

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "analytic deactivation probabilities (CSV)");
  c_analyze->add_option("--r", analyze.r);
  c_analyze->add_option("--n", analyze.n);
  c_analyze->add_option("--bias-ratio", analyze.bias_ratio);
  c_analyze->add_option("--sharpness", analyze.sharpness);
  c_analyze->add_flag("--grid", analyze.grid, "full r x n x bias_ratio x sharpness grid");
  c_analyze->add_option("--out", analyze.out, "CSV path (default: stdout)");

  McArgs mc;
  auto* c_mc = app.add_subcommand("montecarlo", "empirical deactivation frequencies (CSV)");
  c_mc->add_option("--in", mc.in, "dense tensor (per-neuron p_zero) or checkpoint (active units)");
  c_mc->add_option("--trials", mc.trials);
  c_mc->add_option("--seed", mc.seed);
  c_mc->add_option("--jobs", mc.jobs);
  c_mc->add_option("--input", mc.input, "uniform | normal");
  c_mc->add_option("--mean", mc.mean);
  c_mc->add_option("--std", mc.std);
  c_mc->add_flag("--truncated", mc.truncated);
  c_mc->add_option("--r", mc.r);
  c_mc->add_option("--n", mc.n);
  c_mc->add_option("--bias-ratio", mc.bias_ratio);
  c_mc->add_option("--sharpness", mc.sharpness);
  c_mc->add_flag("--grid", mc.grid);
  c_mc->add_option("--out", mc.out, "CSV path (default: stdout)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train one network; per-epoch CSV on stdout");
  c_train->add_option("--config", tr.config, "JSON config: dataset, network, train");
  c_train->add_option("--out", tr.out, "checkpoint directory");
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--batch-size", tr.batch);
  c_train->add_option("--lr", tr.lr);
  c_train->add_option("--dropout", tr.dropout);
  c_train->add_option("--seed", tr.seed);

  TrainArgs ex;
  auto* c_exp = app.add_subcommand("experiment", "multi-seed baseline vs attack runs");
  c_exp->add_option("--config", ex.config, "JSON config: name, dataset, network, train, attack, seeds, override");
  c_exp->add_option("--out", ex.out, "output directory (rerun resumes)");
  c_exp->add_option("--epochs", ex.epochs);
  c_exp->add_option("--batch-size", ex.batch);
  c_exp->add_option("--lr", ex.lr);
  c_exp->add_option("--dropout", ex.dropout);
  c_exp->add_option("--seeds", ex.seeds, "number of seeds");
  c_exp->add_option("--jobs", ex.jobs, "seeds trained in parallel");
  add_attack_flags(c_exp, ex.attack);

  KnockoutArgs ko;
  auto* c_ko = app.add_subcommand("knockout", "norm-preserving optimization that switches off the class outputs");
  c_ko->add_option("--in", ko.in, "checkpoint directory (default: fresh network of --widths)");
  c_ko->add_option("--widths", ko.widths, "comma-separated widths, input first");
  c_ko->add_option("--out", ko.out, "checkpoint directory");
  c_ko->add_option("--iterations", ko.opt.iterations);
  c_ko->add_option("--free", ko.opt.free_layers, "leading matrices to optimize");
  c_ko->add_option("--probes", ko.opt.probe_count);
  c_ko->add_option("--step", ko.opt.step);
  c_ko->add_option("--seed", ko.opt.seed);

  std::string d_in, d_out;
  double alpha = 0.01;
  auto* c_detect = app.add_subcommand("detect", "block-structure test and weight heatmaps");
  c_detect->add_option("--in", d_in, "tensor file or checkpoint directory");
  c_detect->add_option("--out", d_out, "directory for report.json and PGM images");
  c_detect->add_option("--alpha", alpha, "significance level");

  std::string u_in, u_out;
  std::uint64_t u_seed = 0;
  auto* c_undo = app.add_subcommand("undo", "uniformly reshuffle every weight tensor");
  c_undo->add_option("--in", u_in);
  c_undo->add_option("--out", u_out);
  c_undo->add_option("--seed", u_seed);

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (c_attack->parsed()) return run_attack(attack);
    if (c_analyze->parsed()) return run_analyze(analyze);
    if (c_mc->parsed()) return run_montecarlo(mc);
    if (c_train->parsed()) return run_train(tr);
    if (c_exp->parsed()) return run_experiment_cmd(ex);
    if (c_ko->parsed()) return run_knockout(ko);
    if (c_detect->parsed()) return run_detect(d_in, d_out, alpha);
    if (c_undo->parsed()) return run_undo(u_in, u_out, u_seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
