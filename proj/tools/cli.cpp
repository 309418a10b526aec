#include "cli.hpp"

#include "xcnn/checkpoint.hpp"
#include "xcnn/harness.hpp"
#include "xcnn/introspect.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xcnn::cli {

namespace {

struct PublishedCount {
  const char* preset;
  double millions;
};

constexpr PublishedCount published_counts[] = {
    {"kerasnet", 4.46}, {"x-kerasnet", 4.37}, {"fitnet4", 2.75}, {"x-fitnet4", 2.72}};

struct DataOptions {
  std::string dataset = "cifar10";
  std::string data_dir;
  bool synthetic = false;
  Index synthetic_train = 500;
  Index synthetic_test = 200;
  double synthetic_signal = 0.0;
  std::uint64_t synthetic_seed = 0;

  SyntheticConfig synthetic_config() const {
    SyntheticConfig s;
    s.train = synthetic_train;
    s.test = synthetic_test;
    s.signal = synthetic_signal;
    s.seed = synthetic_seed;
    s.variant = parse_variant(dataset);
    return s;
  }

  json to_json() const {
    json j{{"dataset", dataset}, {"synthetic", synthetic}};
    if (synthetic)
      j["synthetic_config"] = {{"train", synthetic_train}, {"test", synthetic_test}, {"signal", synthetic_signal},
                               {"seed", synthetic_seed}};
    else
      j["data_dir"] = find_cifar_dir(resolve_data_dir(data_dir), parse_variant(dataset));
    return j;
  }
};

void add_data_options(CLI::App* app, DataOptions& d) {
  app->add_option("--dataset", d.dataset, "cifar10 or cifar100")->check(CLI::IsMember({"cifar10", "cifar100"}));
  app->add_option("--data-dir", d.data_dir, "Directory with the CIFAR binary files (default: $DATA_DIR)");
  app->add_flag("--synthetic", d.synthetic, "Use seeded synthetic images instead of CIFAR files");
  app->add_option("--synthetic-train", d.synthetic_train, "Synthetic training images")->check(CLI::PositiveNumber);
  app->add_option("--synthetic-test", d.synthetic_test, "Synthetic test images")->check(CLI::PositiveNumber);
  app->add_option("--synthetic-signal", d.synthetic_signal, "Amplitude of the per-class synthetic pattern");
  app->add_option("--synthetic-seed", d.synthetic_seed, "Seed of the synthetic generator");
}

std::pair<Dataset, Dataset> load_data(const DataOptions& d) {
  const Variant v = parse_variant(d.dataset);
  if (d.synthetic) return synthetic_cifar(d.synthetic_config());
  const std::string dir = resolve_data_dir(d.data_dir);
  if (find_cifar_dir(dir, v).empty())
    throw std::runtime_error("no " + d.dataset + " binary files found" + (dir.empty() ? "" : " under '" + dir + "'") +
                             "; pass --data-dir, set DATA_DIR, or use --synthetic");
  return load_cifar(dir, v);
}

struct ArchOptions {
  std::string fitnet_cross = "linear";
  std::string batchnorm = "after";

  PresetOptions resolve() const {
    PresetOptions o;
    o.fitnet_cross = fitnet_cross == "maxout" ? CrossActivation::maxout : CrossActivation::linear;
    o.batchnorm = batchnorm == "before" ? BatchNormPlacement::before_activation : BatchNormPlacement::after_activation;
    return o;
  }
};

void add_arch_options(CLI::App* app, ArchOptions& a) {
  app->add_option("--fitnet-cross", a.fitnet_cross, "X-FitNet4 cross-connection activation")
      ->check(CLI::IsMember({"linear", "maxout"}));
  app->add_option("--bn", a.batchnorm, "FitNet4 batch-norm placement relative to maxout")
      ->check(CLI::IsMember({"after", "before"}));
}

json train_config_json(const TrainConfig& c) {
  return {{"preset", c.preset},
          {"config_path", c.config_path},
          {"fitnet_cross", c.preset_options.fitnet_cross == CrossActivation::maxout ? "maxout" : "linear"},
          {"batchnorm", c.preset_options.batchnorm == BatchNormPlacement::before_activation ? "before" : "after"},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"l2_lambda", c.l2_lambda},
          {"learning_rate", c.learning_rate},
          {"augment", c.augment},
          {"max_shift", c.augment_config.max_shift},
          {"horizontal_flip", c.augment_config.horizontal_flip},
          {"seed", c.seed},
          {"test_subset", c.test_subset}};
}

std::string percent_label(double p) {
  std::ostringstream os;
  os << p;
  return os.str();
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string preset = "x-kerasnet";
  std::string config_path;
  ArchOptions arch;
  DataOptions data;
  double p = 100.0;
  bool stratified = false;
  Index epochs = 0, batch_size = 0;
  double l2 = -1.0, lr = 0.001;
  bool augment = false;
  Index max_shift = 4;
  bool no_flip = false;
  std::uint64_t seed = 0;
  Index test_subset = 0;
  std::string out;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig c = TrainConfig::regime(a.preset);
  if (!a.config_path.empty() && a.preset.empty()) c = TrainConfig{};
  c.config_path = a.config_path;
  c.preset_options = a.arch.resolve();
  if (a.epochs > 0) c.epochs = a.epochs;
  if (a.batch_size > 0) c.batch_size = a.batch_size;
  if (a.l2 >= 0) c.l2_lambda = a.l2;
  c.learning_rate = a.lr;
  c.augment = a.augment;
  c.augment_config.max_shift = a.max_shift;
  c.augment_config.horizontal_flip = !a.no_flip;
  c.seed = a.seed;
  c.test_subset = a.test_subset;

  const std::string dir =
      a.out.empty() ? "runs/" + a.preset + "_p" + percent_label(a.p) + "_s" + std::to_string(a.seed) : a.out;
  json resolved{{"command", "train"}, {"train", train_config_json(c)}, {"data", a.data.to_json()},
                {"p", a.p},           {"stratified", a.stratified},   {"out", dir}};
  out << "config " << resolved.dump() << std::endl;

  auto [train_raw, test_raw] = load_data(a.data);
  auto data = normalize_input(subset(rgb_to_yuv(std::move(train_raw)), a.p, a.stratified), rgb_to_yuv(std::move(test_raw)));
  auto graph = build_for_training(c, data.train.num_classes());
  out << "model " << graph.spec().name << ": " << count_params(graph) << " parameters, " << data.train.size()
      << " training images, " << data.test.size() << " test images" << std::endl;

  const auto result = train(graph, data.train, data.test, c, [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << "/" << c.epochs << " loss " << std::fixed << std::setprecision(4) << e.train_loss
        << " test_accuracy " << e.test_accuracy << std::defaultfloat << std::endl;
  });

  fs::create_directories(dir);
  write_history_csv((fs::path(dir) / "history.csv").string(), result.history);
  save_checkpoint((fs::path(dir) / "model.ckpt").string(), graph,
                  {{"input_norm.mean", data.stats.mean_tensor()}, {"input_norm.std", data.stats.stddev_tensor()}});
  std::ofstream((fs::path(dir) / "config.json").string()) << resolved.dump(2) << '\n';
  out << "final test accuracy " << result.final_accuracy << " (" << result.wall_seconds << " s); wrote " << dir
      << "/{history.csv,model.ckpt,config.json}" << std::endl;
  return 0;
}

// ---- sweep ------------------------------------------------------------------

struct SweepArgs {
  std::string models = "kerasnet,x-kerasnet";
  DataOptions data;
  ArchOptions arch;
  bool augment = false;
  std::string seeds = "0..4";
  std::vector<double> points;
  Index epochs = 0, batch_size = 0, test_subset = 0;
  double l2 = -1.0;
  bool stratified = false;
  bool dry_run = false;
  std::string out = "sweep-out";
};

int run_sweep_command(const SweepArgs& a, std::ostream& out) {
  SweepConfig s;
  s.models.clear();
  std::stringstream ms(a.models);
  for (std::string m; std::getline(ms, m, ',');)
    if (!m.empty()) s.models.push_back(m);
  s.variant = parse_variant(a.data.dataset);
  s.data_dir = a.data.data_dir;
  s.synthetic = a.data.synthetic;
  s.synthetic_config = a.data.synthetic_config();
  s.seeds = parse_seed_list(a.seeds);
  s.points = a.points;
  s.stratified = a.stratified;
  s.dry_run = a.dry_run;
  s.out_dir = a.out;
  s.epochs = a.epochs;
  s.batch_size = a.batch_size;
  s.l2_lambda = a.l2;
  s.augment = a.augment;
  s.test_subset = a.test_subset;
  s.preset_options = a.arch.resolve();

  json resolved{{"command", "sweep"},  {"models", s.models},   {"dataset", a.data.dataset}, {"seeds", s.seeds},
                {"points", s.points},  {"augment", s.augment}, {"epochs", s.epochs},        {"batch_size", s.batch_size},
                {"l2", s.l2_lambda},   {"dry_run", s.dry_run}, {"out", s.out_dir},          {"stratified", s.stratified},
                {"test_subset", s.test_subset}, {"synthetic", s.synthetic}};
  out << "config " << resolved.dump() << std::endl;

  if (s.dry_run) {
    const auto outcome = run_sweep(s);
    if (s.points.empty()) out << "adaptive schedule: points past 50% depend on the measured gaps\n";
    for (const auto& cell : outcome.plan)
      out << "plan " << cell.model << " p=" << percent_label(cell.p) << " seed=" << cell.seed << '\n';
    out << outcome.plan.size() << " planned runs" << std::endl;
    return 0;
  }

  auto [train_raw, test_raw] = load_data(a.data);
  const Dataset train_yuv = rgb_to_yuv(std::move(train_raw)), test_yuv = rgb_to_yuv(std::move(test_raw));
  fs::create_directories(s.out_dir);
  std::ofstream((fs::path(s.out_dir) / "config.json").string()) << resolved.dump(2) << '\n';
  const auto outcome = run_sweep(s, [&](const PlannedRun& cell) {
    auto r = run_one(cell, train_yuv, test_yuv, s);
    out << "run " << cell.model << " p=" << percent_label(cell.p) << " seed=" << cell.seed << ": "
        << (r.ok() ? "accuracy " + std::to_string(r.final_accuracy) : "FAILED " + r.error) << " ("
        << std::setprecision(3) << r.wall_seconds << " s)" << std::defaultfloat << std::endl;
    return r;
  });
  out << '\n' << outcome.report << "\nwrote " << s.out_dir << "/{results.csv,report.md,runs/}" << std::endl;
  return 0;
}

// ---- visualize --------------------------------------------------------------

struct VisualizeArgs {
  std::string checkpoint;
  std::string preset;
  ArchOptions arch;
  std::uint64_t seed = 0;
  std::string layer;
  Index channel = 0;
  std::string out;
  Index cell = 16;
  AscentConfig ascent;
  DataOptions data;
  Index image_index = 0;
};

struct LoadedModel {
  NetworkGraph<float> graph;
  std::optional<NormalizationStats> stats;
};

LoadedModel load_model(const VisualizeArgs& a) {
  if (!a.checkpoint.empty()) {
    const auto ckpt = load_checkpoint<float>(a.checkpoint);
    LoadedModel m{restore_network(ckpt), std::nullopt};
    const auto* mean = ckpt.find("input_norm.mean");
    const auto* sd = ckpt.find("input_norm.std");
    if (mean && sd) {
      NormalizationStats s;
      for (Index i = 0; i < mean->size(); ++i) {
        s.mean.push_back((*mean)[i]);
        s.stddev.push_back((*sd)[i]);
      }
      m.stats = s;
    }
    return m;
  }
  if (a.preset.empty()) throw std::invalid_argument("visualize: pass --checkpoint FILE or --preset NAME");
  Rng rng = derive_rng({a.seed, 1});
  PresetOptions o = a.arch.resolve();
  return {build_preset<float>(a.preset, 10, rng, o), std::nullopt};
}

int run_visualize(const std::string& what, const VisualizeArgs& a, std::ostream& out) {
  auto model = load_model(a);
  auto& graph = model.graph;
  if (what == "heatmap") {
    const auto h = weight_heatmap(graph, a.layer, a.cell);
    write_ppm(a.out, h.image);
    out << "heatmap " << a.layer << ": " << h.rows << " rows (outputs) x " << h.cols << " columns (inputs), max |w| "
        << h.max_abs << "; wrote " << a.out << std::endl;
  } else if (what == "ascend") {
    out << "config "
        << json{{"command", "visualize ascend"}, {"layer", a.layer},   {"channel", a.channel},
                {"lambda", a.ascent.lambda},     {"steps", a.ascent.steps}, {"step_size", a.ascent.step_size},
                {"init_scale", a.ascent.init_scale}, {"seed", a.ascent.seed}}
               .dump()
        << std::endl;
    const auto r = activation_maximize(graph, a.layer, a.channel, a.ascent);
    write_ppm(a.out, feature_map_rgb(r.display));
    out << "ascent " << a.layer << " channel " << a.channel << ": objective " << r.objective.front() << " -> "
        << r.objective.back() << " in " << r.steps_taken << " steps; wrote " << a.out << std::endl;
  } else {
    auto [train_raw, test_raw] = load_data(a.data);
    Dataset test = rgb_to_yuv(std::move(test_raw));
    const NormalizationStats stats = model.stats ? *model.stats : compute_normalization(rgb_to_yuv(std::move(train_raw)));
    apply_normalization(test, stats);
    if (a.image_index < 0 || a.image_index >= test.size())
      throw std::invalid_argument("visualize: --image-index out of range");
    const std::vector<Index> one{a.image_index};
    Tape<float> tape(false);
    Rng unused(0);
    auto features =
        graph.forward_to(tape, Var<float>::leaf(select(test, one).images), a.layer, Mode::infer, unused).value();
    if (features.rank() != 4) throw std::invalid_argument("visualize: layer " + a.layer + " has no spatial output");
    const Shape chw(features.shape().begin() + 1, features.shape().end());
    write_ppm(a.out, feature_map_rgb(features.reshaped(chw), a.seed));
    out << "feature map " << a.layer << " " << shape_string(chw) << " of test image " << a.image_index << "; wrote "
        << a.out << std::endl;
  }
  return 0;
}

// ---- params / data ----------------------------------------------------------

int run_params(const std::vector<std::string>& presets, const std::string& config_path, bool layers, Index classes,
               const ArchOptions& arch, std::ostream& out) {
  auto print_layers = [&](const NetworkGraph<float>& g) {
    for (const auto& l : g.layers())
      out << "  " << std::left << std::setw(28) << l.id << std::setw(16) << shape_string(l.output) << std::right
          << std::setw(10) << l.params << '\n';
  };
  Rng rng(0);
  if (!config_path.empty()) {
    auto spec = load_config(config_path);
    auto g = NetworkGraph<float>::build(spec, rng);
    out << spec.name << ' ' << count_params(g) << '\n';
    if (layers) print_layers(g);
    return 0;
  }
  const std::vector<std::string> names = presets.empty() ? preset_names() : presets;
  for (const auto& name : names) {
    auto g = build_preset<float>(name, classes, rng, arch.resolve());
    const Index n = count_params(g);
    out << std::left << std::setw(12) << name << std::right << std::setw(10) << n;
    for (const auto& pc : published_counts)
      if (name == pc.preset && classes == 10) {
        const double rel = (static_cast<double>(n) - pc.millions * 1e6) / (pc.millions * 1e6) * 100.0;
        out << "   published ~" << std::fixed << std::setprecision(2) << pc.millions << "M (" << std::showpos << rel
            << std::noshowpos << "%)" << std::defaultfloat;
      }
    out << '\n';
    if (layers) print_layers(g);
  }
  out.flush();
  return 0;
}

int run_data_stats(const DataOptions& d, double p, bool stratified, std::ostream& out) {
  auto [train_set, test_set] = load_data(d);
  Dataset train_sub = subset(train_set, p, stratified);
  out << d.dataset << (d.synthetic ? " (synthetic)" : "") << ": " << train_set.size() << " training, "
      << test_set.size() << " test images\n";
  out << "subset p=" << p << "%" << (stratified ? " (stratified)" : "") << ": " << train_sub.size() << " images\n";
  const auto counts = class_counts(train_sub);
  Index missing = 0;
  out << "per-class counts:";
  for (std::size_t c = 0; c < counts.size(); ++c) {
    out << ' ' << counts[c];
    missing += counts[c] == 0;
  }
  out << '\n';
  if (missing) out << "warning: " << missing << " classes have no training images in this subset\n";
  const auto rgb = compute_normalization(train_sub);
  const auto yuv = compute_normalization(rgb_to_yuv(train_sub));
  out << std::setprecision(5);
  for (int c = 0; c < 3; ++c)
    out << "channel " << "RGB"[c] << " mean " << rgb.mean[c] << " std " << rgb.stddev[c] << " | " << "YUV"[c]
        << " mean " << yuv.mean[c] << " std " << yuv.stddev[c] << '\n';
  out << std::defaultfloat;
  out.flush();
  return 0;
}

void usage_error(const CLI::App& app, const std::string& message, std::ostream& err) {
  err << "error: " << message << "\n\n" << app.help();
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    if (part.empty()) continue;
    const auto dots = part.find("..");
    try {
      if (dots == std::string::npos) {
        seeds.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dots)), hi = std::stoull(part.substr(dots + 2));
        if (hi < lo) throw std::invalid_argument("descending range");
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      }
    } catch (const std::exception&) {
      throw std::invalid_argument("bad seed list '" + text + "' (expected e.g. 0..4 or 0,1,2)");
    }
  }
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal CNN training engine and experiment harness", "xcnn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "xcnn 1.0");
  std::function<int()> action;

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write its checkpoint and history");
  train_cmd->add_option("--preset", ta.preset, "kerasnet, x-kerasnet, fitnet4 or x-fitnet4");
  train_cmd->add_option("--config", ta.config_path, "Declarative architecture file (overrides --preset)")
      ->check(CLI::ExistingFile);
  add_arch_options(train_cmd, ta.arch);
  add_data_options(train_cmd, ta.data);
  train_cmd->add_option("--p", ta.p, "Percentage of the training set (canonical-order prefix)")
      ->check(CLI::Range(0.0, 100.0));
  train_cmd->add_flag("--stratified", ta.stratified, "Take p% of each class instead of a plain prefix");
  train_cmd->add_option("--epochs", ta.epochs, "Epochs (default: the preset's regime)");
  train_cmd->add_option("--batch-size", ta.batch_size, "Mini-batch size (default: the preset's regime)");
  train_cmd->add_option("--l2", ta.l2, "L2 factor on weights (default: the preset's regime)");
  train_cmd->add_option("--lr", ta.lr, "Adam learning rate");
  train_cmd->add_flag("--augment", ta.augment, "Random translations and horizontal flips");
  train_cmd->add_option("--max-shift", ta.max_shift, "Largest translation in pixels")->check(CLI::NonNegativeNumber);
  train_cmd->add_flag("--no-flip", ta.no_flip, "Disable horizontal flips when augmenting");
  train_cmd->add_option("--seed", ta.seed, "Seed for initialization, shuffling, dropout and augmentation");
  train_cmd->add_option("--test-subset", ta.test_subset, "Evaluate on the first K test images only");
  train_cmd->add_option("--out", ta.out, "Output directory");
  train_cmd->callback([&] {
    if (ta.config_path.empty() && !is_preset(ta.preset))
      throw CLI::ValidationError("--preset", "unknown preset '" + ta.preset + "'");
    action = [&] { return run_train(ta, out); };
  });

  SweepArgs sa;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the data-sparsity sweep and write results.csv and report.md");
  sweep_cmd->add_option("--models", sa.models, "Comma-separated presets");
  add_data_options(sweep_cmd, sa.data);
  add_arch_options(sweep_cmd, sa.arch);
  sweep_cmd->add_flag("--augment", sa.augment, "Random translations and horizontal flips");
  sweep_cmd->add_option("--seeds", sa.seeds, "Seeds, e.g. 0..4 or 0,1,2");
  sweep_cmd->add_option("--points", sa.points, "Explicit training percentages (default: adaptive schedule)")
      ->delimiter(',');
  sweep_cmd->add_option("--epochs", sa.epochs, "Epochs per run (default: each preset's regime)");
  sweep_cmd->add_option("--batch-size", sa.batch_size, "Mini-batch size (default: each preset's regime)");
  sweep_cmd->add_option("--l2", sa.l2, "L2 factor (default: each preset's regime)");
  sweep_cmd->add_option("--test-subset", sa.test_subset, "Evaluate on the first K test images only");
  sweep_cmd->add_flag("--stratified", sa.stratified, "Class-stratified subsets");
  sweep_cmd->add_flag("--dry-run", sa.dry_run, "List the planned runs without training");
  sweep_cmd->add_option("--out", sa.out, "Output directory");
  sweep_cmd->callback([&] { action = [&] { return run_sweep_command(sa, out); }; });

  VisualizeArgs va;
  std::string visualize_what;
  auto* vis_cmd = app.add_subcommand("visualize", "Render weight heatmaps, activation maximization or feature maps");
  vis_cmd->add_option("what", visualize_what, "heatmap, ascend or featuremap")
      ->required()
      ->check(CLI::IsMember({"heatmap", "ascend", "featuremap"}));
  vis_cmd->add_option("--checkpoint", va.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  vis_cmd->add_option("--preset", va.preset, "Use a freshly initialized preset instead of a checkpoint");
  vis_cmd->add_option("--seed", va.seed, "Initialization seed (with --preset) or colour projection seed");
  add_arch_options(vis_cmd, va.arch);
  vis_cmd->add_option("--layer", va.layer, "Layer id (see `params --layers`)")->required();
  vis_cmd->add_option("--channel", va.channel, "Channel to maximize (ascend)");
  vis_cmd->add_option("--out", va.out, "Output .ppm file")->required();
  vis_cmd->add_option("--cell", va.cell, "Heatmap cell size in pixels")->check(CLI::PositiveNumber);
  vis_cmd->add_option("--lambda", va.ascent.lambda, "L2 factor of the ascent objective")->check(CLI::NonNegativeNumber);
  vis_cmd->add_option("--steps", va.ascent.steps, "Ascent steps")->check(CLI::PositiveNumber);
  vis_cmd->add_option("--step-size", va.ascent.step_size, "Initial step size")->check(CLI::PositiveNumber);
  vis_cmd->add_option("--init-scale", va.ascent.init_scale, "Standard deviation of the starting noise");
  vis_cmd->add_option("--ascent-seed", va.ascent.seed, "Seed of the starting noise");
  vis_cmd->add_option("--image-index", va.image_index, "Test image to map (featuremap)");
  add_data_options(vis_cmd, va.data);
  vis_cmd->callback([&] { action = [&] { return run_visualize(visualize_what, va, out); }; });

  std::vector<std::string> param_presets;
  std::string param_config;
  bool param_layers = false;
  Index param_classes = 10;
  ArchOptions param_arch;
  auto* params_cmd = app.add_subcommand("params", "Print exact trainable parameter counts");
  params_cmd->add_option("presets", param_presets, "Presets to count (default: all four)")
      ->check(CLI::IsMember(preset_names()));
  params_cmd->add_option("--config", param_config, "Count a declarative architecture file")->check(CLI::ExistingFile);
  params_cmd->add_flag("--layers", param_layers, "List layer ids, output shapes and per-layer counts");
  params_cmd->add_option("--classes", param_classes, "Number of classes")->check(CLI::IsMember({10, 100}));
  add_arch_options(params_cmd, param_arch);
  params_cmd->callback([&] {
    action = [&] { return run_params(param_presets, param_config, param_layers, param_classes, param_arch, out); };
  });

  DataOptions dd;
  double data_p = 100.0;
  bool data_stratified = false;
  std::string synth_out;
  auto* data_cmd = app.add_subcommand("data", "Inspect datasets or write synthetic CIFAR-format files");
  data_cmd->require_subcommand(1);
  auto* stats_cmd = data_cmd->add_subcommand("stats", "Counts, per-class coverage and channel statistics");
  add_data_options(stats_cmd, dd);
  stats_cmd->add_option("--p", data_p, "Subset percentage")->check(CLI::Range(0.0, 100.0));
  stats_cmd->add_flag("--stratified", data_stratified, "Class-stratified subset");
  stats_cmd->callback([&] { action = [&] { return run_data_stats(dd, data_p, data_stratified, out); }; });
  auto* synth_cmd = data_cmd->add_subcommand("synth", "Write seeded synthetic images in the CIFAR binary layout");
  add_data_options(synth_cmd, dd);
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->callback([&] {
    action = [&] {
      auto s = dd.synthetic_config();
      auto [train_set, test_set] = synthetic_cifar(s);
      write_cifar(synth_out, train_set, test_set);
      out << "wrote " << train_set.size() << " training and " << test_set.size() << " test images ("
          << dd.dataset << " layout) to " << synth_out << std::endl;
      return 0;
    };
  });

  if (args.empty()) {
    err << app.help();
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    usage_error(app, e.what(), err);
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    return action ? action() : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace xcnn::cli
