#pragma once

#include "xcnn/data.hpp"
#include "xcnn/network.hpp"
#include "xcnn/trainer.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xcnn {

/// Arg-max class per row of an [N,K] score matrix.
std::vector<int> argmax_rows(const Tensor<float>& scores);

std::vector<int> predict(NetworkGraph<float>& graph, const Tensor<float>& images, Index batch_size = 256);

double accuracy(std::span<const int> predicted, std::span<const int> labels);
double accuracy(NetworkGraph<float>& graph, const Dataset& test, Index batch_size = 256);

/// Accuracy pair per sparsity point for one baseline/cross-modal pair.
using GapHistory = std::map<double, std::pair<double, double>>;

/// Next training percentage to run, or nullopt when the sweep is complete.
/// 1, 5, 10, 15, 20, 30, 40, 50 are unconditional. Past 50 the sweep keeps
/// stepping by 10 until a point from 30 on has the two accuracies within
/// 0.5 points (whichever of the two comes later); 100 always ends it.
std::optional<double> schedule_points(const GapHistory& history, double threshold = 0.005);

/// Union of the schedules produced by each pair's history.
std::vector<double> schedule_union(std::span<const GapHistory> histories, double threshold = 0.005);

/// Full schedule for a history that already covers every point it asks for.
std::vector<double> replay_schedule(const GapHistory& history, double threshold = 0.005);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

/// Two-sided two-sample t-test; Welch-Satterthwaite by default, pooled
/// variance when `welch` is false.
TTestResult t_test(std::span<const double> a, std::span<const double> b, bool welch = true, double alpha = 0.05);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

struct RunResult {
  std::string model;
  double p = 0.0;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  std::vector<double> history;
  Index params = 0;
  double wall_seconds = 0.0;
  std::string error;  // non-empty when the run failed

  bool ok() const { return error.empty(); }
};

struct SweepConfig {
  std::vector<std::string> models{"kerasnet", "x-kerasnet"};
  Variant variant = Variant::cifar10;
  std::string data_dir;
  bool synthetic = false;
  SyntheticConfig synthetic_config;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> points;  // empty = adaptive schedule
  bool stratified = false;
  bool dry_run = false;
  std::string out_dir = "sweep-out";

  // Each run starts from its preset's published regime; these override it.
  Index epochs = 0;         // > 0 replaces the regime's epoch count
  Index batch_size = 0;     // > 0 replaces the regime's batch size
  double l2_lambda = -1.0;  // >= 0 replaces the regime's L2 factor
  double learning_rate = 0.001;
  bool augment = false;
  Index test_subset = 0;
  PresetOptions preset_options;

  TrainConfig resolve(const std::string& model, std::uint64_t seed) const;
};

struct PlannedRun {
  std::string model;
  double p;
  std::uint64_t seed;
};

struct SweepOutcome {
  std::vector<PlannedRun> plan;
  std::vector<RunResult> results;
  std::string report;  // Markdown
};

using RunFn = std::function<RunResult(const PlannedRun&)>;

/// Grid of runs for explicit points.
std::vector<PlannedRun> plan_runs(const std::vector<std::string>& models, std::span<const double> points,
                                  std::span<const std::uint64_t> seeds);

/// Drives the sweep. With an empty point list the schedule is adaptive: each
/// point is run, the per-pair mean accuracies decide the next. `run` trains
/// one cell; the default trains on the configured data.
SweepOutcome run_sweep(const SweepConfig& config, const RunFn& run = {});

/// Trains one (model, p, seed) cell on preprocessed data and writes its history and checkpoint.
RunResult run_one(const PlannedRun& cell, const Dataset& train_yuv, const Dataset& test_yuv, const SweepConfig& config);

void write_results_csv(const std::string& path, std::span<const RunResult> results);

/// Markdown tables in the usual sparsity layout: a row per model, a column per p,
/// mean accuracy in percent to two decimals, the better of each pair in bold,
/// then Welch t-tests per pair and point.
std::string render_report(std::span<const RunResult> results, std::string_view title = "Sweep results");

/// Pairs (baseline, cross-modal) present in the model list.
std::vector<std::pair<std::string, std::string>> model_pairs(const std::vector<std::string>& models);

}  // namespace xcnn
