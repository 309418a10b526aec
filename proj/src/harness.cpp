#include "xcnn/harness.hpp"

#include "xcnn/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace xcnn {

std::vector<int> argmax_rows(const Tensor<float>& scores) {
  if (scores.rank() != 2) throw std::invalid_argument("argmax_rows: expected [N,K], got " + shape_string(scores.shape()));
  std::vector<int> out;
  const auto m = scores.matrix(scores.dim(0), scores.dim(1));
  for (Index r = 0; r < m.rows(); ++r) {
    Index best;
    m.row(r).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

std::vector<int> predict(NetworkGraph<float>& graph, const Tensor<float>& images, Index batch_size) {
  const Index n = images.dim(0), per = images.size() / std::max<Index>(n, 1);
  std::vector<int> out;
  for (Index begin = 0; begin < n; begin += batch_size) {
    const Index count = std::min(batch_size, n - begin);
    Shape shape = images.shape();
    shape[0] = count;
    Tensor<float> batch(shape, images.data().segment(begin * per, count * per));
    const auto labels = argmax_rows(graph.predict_logits(batch));
    out.insert(out.end(), labels.begin(), labels.end());
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size())
    throw std::invalid_argument("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(NetworkGraph<float>& graph, const Dataset& test, Index batch_size) {
  return accuracy(predict(graph, test.images, batch_size), test.labels);
}

// ---- schedule ---------------------------------------------------------------

namespace {

constexpr double fixed_points[] = {1, 5, 10, 15, 20, 30, 40, 50};
constexpr double gap_tolerance = 1e-12;

bool converged(const GapHistory& h, double threshold) {
  for (const auto& [p, acc] : h)
    if (p >= 30 && std::abs(acc.first - acc.second) <= threshold + gap_tolerance) return true;
  return false;
}

}  // namespace

std::optional<double> schedule_points(const GapHistory& history, double threshold) {
  for (double p : fixed_points)
    if (!history.contains(p)) return p;
  if (!converged(history, threshold))
    for (double p = 60; p <= 90; p += 10)
      if (!history.contains(p)) return p;
  if (!history.contains(100)) return 100.0;
  return std::nullopt;
}

std::vector<double> replay_schedule(const GapHistory& history, double threshold) {
  GapHistory seen;
  std::vector<double> points;
  while (auto p = schedule_points(seen, threshold)) {
    points.push_back(*p);
    if (auto it = history.find(*p); it != history.end())
      seen.emplace(*p, it->second);
    else if (*p == 100)
      seen.emplace(*p, std::make_pair(0.0, 0.0));
    else
      throw std::invalid_argument("replay_schedule: no accuracies recorded for p=" + std::to_string(*p));
  }
  return points;
}

std::vector<double> schedule_union(std::span<const GapHistory> histories, double threshold) {
  std::set<double> all;
  for (const auto& h : histories)
    for (double p : replay_schedule(h, threshold)) all.insert(p);
  return {all.begin(), all.end()};
}

// ---- statistics -------------------------------------------------------------

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int max_iter = 500;
  constexpr double eps = 1e-15, tiny = 1e-300;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1) < eps) return h;
  }
  throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (a <= 0 || b <= 0 || x < 0 || x > 1) throw std::invalid_argument("incomplete_beta: argument out of range");
  if (x == 0 || x == 1) return x;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1) / (a + b + 2)) return front * beta_continued_fraction(a, b, x) / a;
  return 1 - front * beta_continued_fraction(b, a, 1 - x) / b;
}

double student_t_two_sided(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2, 0.5, df / (df + t * t));
}

TTestResult t_test(std::span<const double> a, std::span<const double> b, bool welch, double alpha) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("t_test: each sample needs at least two values");
  auto moments = [](std::span<const double> s) {
    const double n = static_cast<double>(s.size());
    double mean = 0;
    for (double v : s) mean += v;
    mean /= n;
    double ss = 0;
    for (double v : s) ss += (v - mean) * (v - mean);
    return std::make_pair(mean, ss / (n - 1));
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());

  TTestResult r;
  double se2;
  if (welch) {
    const double qa = va / na, qb = vb / nb;
    se2 = qa + qb;
    r.df = se2 > 0 ? se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1)) : na + nb - 2;
  } else {
    r.df = na + nb - 2;
    se2 = ((na - 1) * va + (nb - 1) * vb) / r.df * (1 / na + 1 / nb);
  }
  if (se2 == 0) {
    r.t = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    r.p_value = ma == mb ? 1.0 : 0.0;
  } else {
    r.t = (ma - mb) / std::sqrt(se2);
    r.p_value = student_t_two_sided(r.t, r.df);
  }
  r.significant = r.p_value < alpha;
  return r;
}

// ---- sweep ------------------------------------------------------------------

TrainConfig SweepConfig::resolve(const std::string& model, std::uint64_t seed) const {
  TrainConfig c = TrainConfig::regime(model);
  if (epochs > 0) c.epochs = epochs;
  if (batch_size > 0) c.batch_size = batch_size;
  if (l2_lambda >= 0) c.l2_lambda = l2_lambda;
  c.learning_rate = learning_rate;
  c.augment = augment;
  c.test_subset = test_subset;
  c.preset_options = preset_options;
  c.seed = seed;
  return c;
}

std::vector<std::pair<std::string, std::string>> model_pairs(const std::vector<std::string>& models) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& m : models) {
    if (!is_preset(m) || is_cross_modal(m)) continue;
    const std::string x = paired_preset(m);
    if (std::find(models.begin(), models.end(), x) != models.end()) pairs.emplace_back(m, x);
  }
  return pairs;
}

std::vector<PlannedRun> plan_runs(const std::vector<std::string>& models, std::span<const double> points,
                                  std::span<const std::uint64_t> seeds) {
  std::vector<PlannedRun> plan;
  for (double p : points)
    for (const auto& m : models)
      for (auto s : seeds) plan.push_back({m, p, s});
  return plan;
}

namespace {

std::string format_p(double p) {
  std::ostringstream os;
  os << p;
  return os.str();
}

std::string run_stem(const PlannedRun& cell) {
  return cell.model + "_p" + format_p(cell.p) + "_s" + std::to_string(cell.seed);
}

double mean_accuracy(std::span<const RunResult> results, const std::string& model, double p) {
  double sum = 0;
  int n = 0;
  for (const auto& r : results)
    if (r.ok() && r.model == model && r.p == p) {
      sum += r.final_accuracy;
      ++n;
    }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> accuracies(std::span<const RunResult> results, const std::string& model, double p) {
  std::vector<double> out;
  for (const auto& r : results)
    if (r.ok() && r.model == model && r.p == p) out.push_back(r.final_accuracy);
  return out;
}

}  // namespace

RunResult run_one(const PlannedRun& cell, const Dataset& train_yuv, const Dataset& test_yuv,
                  const SweepConfig& config) {
  RunResult r;
  r.model = cell.model;
  r.p = cell.p;
  r.seed = cell.seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto data = normalize_input(subset(train_yuv, cell.p, config.stratified), test_yuv);
    const TrainConfig tc = config.resolve(cell.model, cell.seed);
    auto graph = build_for_training(tc, train_yuv.num_classes());
    const auto trained = train(graph, data.train, data.test, tc);
    r.final_accuracy = trained.final_accuracy;
    r.params = trained.params;
    for (const auto& e : trained.history) r.history.push_back(e.test_accuracy);

    const fs::path dir = fs::path(config.out_dir) / "runs";
    fs::create_directories(dir);
    write_history_csv((dir / (run_stem(cell) + ".csv")).string(), trained.history);
    save_checkpoint((dir / (run_stem(cell) + ".ckpt")).string(), graph,
                    {{"input_norm.mean", data.stats.mean_tensor()}, {"input_norm.std", data.stats.stddev_tensor()}});
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

SweepOutcome run_sweep(const SweepConfig& config, const RunFn& run) {
  if (config.models.empty() || config.seeds.empty()) throw std::invalid_argument("run_sweep: no models or seeds");
  for (const auto& m : config.models)
    if (!is_preset(m)) throw std::invalid_argument("run_sweep: unknown model '" + m + "'");

  SweepOutcome out;
  if (config.dry_run) {
    std::vector<double> points = config.points;
    if (points.empty()) {
      points.assign(std::begin(fixed_points), std::end(fixed_points));
      points.push_back(100);
    }
    out.plan = plan_runs(config.models, points, config.seeds);
    return out;
  }

  RunFn runner = run;
  Dataset train_yuv, test_yuv;
  if (!runner) {
    std::pair<Dataset, Dataset> raw;
    if (config.synthetic) {
      SyntheticConfig sc = config.synthetic_config;
      sc.variant = config.variant;
      raw = synthetic_cifar(sc);
    } else {
      raw = load_cifar(resolve_data_dir(config.data_dir), config.variant);
    }
    train_yuv = rgb_to_yuv(std::move(raw.first));
    test_yuv = rgb_to_yuv(std::move(raw.second));
    runner = [&](const PlannedRun& cell) { return run_one(cell, train_yuv, test_yuv, config); };
  }

  auto run_point = [&](double p) {
    for (const auto& cell : plan_runs(config.models, std::span<const double>(&p, 1), config.seeds)) {
      out.plan.push_back(cell);
      out.results.push_back(runner(cell));
    }
  };

  if (!config.points.empty()) {
    for (double p : config.points) run_point(p);
  } else {
    const auto pairs = model_pairs(config.models);
    std::vector<GapHistory> gaps(pairs.size());
    while (true) {
      std::optional<double> next;
      for (const auto& g : gaps)
        if (auto p = schedule_points(g)) next = next ? std::min(*next, *p) : *p;
      if (pairs.empty()) {
        // Without a pair there is no gap to watch; run the unconditional points.
        const double done = out.plan.empty() ? 0 : out.plan.back().p;
        next.reset();
        for (double p : fixed_points)
          if (p > done) {
            next = p;
            break;
          }
        if (!next && done < 100) next = 100;
      }
      if (!next) break;
      run_point(*next);
      for (std::size_t i = 0; i < pairs.size(); ++i)
        gaps[i][*next] = {mean_accuracy(out.results, pairs[i].first, *next),
                          mean_accuracy(out.results, pairs[i].second, *next)};
    }
  }

  fs::create_directories(config.out_dir);
  write_results_csv((fs::path(config.out_dir) / "results.csv").string(), out.results);
  out.report = render_report(out.results, std::string(variant_name(config.variant)) + " sweep");
  std::ofstream md(fs::path(config.out_dir) / "report.md");
  md << out.report;
  if (!md) throw std::runtime_error("cannot write report.md under '" + config.out_dir + "'");
  return out;
}

void write_results_csv(const std::string& path, std::span<const RunResult> results) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "model,p,seed,final_accuracy,params,wall_seconds,epochs,error\n";
  for (const auto& r : results) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out << r.model << ',' << r.p << ',' << r.seed << ',' << r.final_accuracy << ',' << r.params << ','
        << r.wall_seconds << ',' << r.history.size() << ",\"" << err << "\"\n";
  }
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::string render_report(std::span<const RunResult> results, std::string_view title) {
  std::vector<std::string> models;
  std::set<double> point_set;
  for (const auto& r : results) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    point_set.insert(r.p);
  }
  const std::vector<double> points(point_set.begin(), point_set.end());
  const auto pairs = model_pairs(models);

  auto partner_of = [&](const std::string& m) -> std::string {
    for (const auto& [a, b] : pairs) {
      if (a == m) return b;
      if (b == m) return a;
    }
    return {};
  };

  std::ostringstream os;
  os << "# " << title << "\n\n";
  os << "Mean test accuracy (%) over seeds; the better model of each pair is bold.\n\n";
  os << "| Model |";
  for (double p : points) os << ' ' << format_p(p) << "% |";
  os << "\n|---|";
  for (std::size_t i = 0; i < points.size(); ++i) os << "---|";
  os << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& m : models) {
    os << "| " << m << " |";
    for (double p : points) {
      const double acc = mean_accuracy(results, m, p);
      if (std::isnan(acc)) {
        os << " - |";
        continue;
      }
      const std::string partner = partner_of(m);
      const double other = partner.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_accuracy(results, partner, p);
      const bool bold = !std::isnan(other) && acc >= other;
      os << ' ' << (bold ? "**" : "") << acc * 100 << (bold ? "**" : "") << " |";
    }
    os << '\n';
  }

  bool header = false;
  for (const auto& [base, x] : pairs)
    for (double p : points) {
      const auto a = accuracies(results, base, p), b = accuracies(results, x, p);
      if (a.size() < 2 || b.size() < 2) continue;
      if (!header) {
        os << "\n## Welch t-tests\n\n| Pair | p | t | df | p-value | significant (p < 0.05) |\n|---|---|---|---|---|---|\n";
        header = true;
      }
      const auto t = t_test(a, b);
      os << std::setprecision(4) << "| " << base << " vs " << x << " | " << format_p(p) << "% | " << t.t << " | "
         << t.df << " | " << t.p_value << " | " << (t.significant ? "yes" : "no") << " |\n";
    }

  bool failures = false;
  for (const auto& r : results)
    if (!r.ok()) {
      if (!failures) os << "\n## Failed runs\n\n";
      failures = true;
      os << "- " << r.model << " p=" << format_p(r.p) << " seed=" << r.seed << ": " << r.error << '\n';
    }
  return os.str();
}

}  // namespace xcnn
