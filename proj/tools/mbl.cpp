// mbl: run, sweep, verify and plot multi-batch L-BFGS experiments.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <locale>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mbl/data.hpp"
#include "mbl/objective.hpp"
#include "mbl/solver.hpp"
#include "mbl/svg_plot.hpp"
#include "mbl/trace_io.hpp"
#include "mbl/verify.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

struct RunFlags {
  std::string dataset;
  std::string synthetic;
  double flip = 0.0;
  bool zero_one = false;
  std::size_t dim = 0;
  std::string problem = "logistic";
  double sigma = -1.0;
  double cond = 10.0;
  std::string method = "robust";
  std::string strategy = "partition";
  std::string init = "zeros";
  std::size_t epochs = 0;
  std::size_t max_iters = 0;
  mbl::SolverConfig config;
};

void add_run_flags(CLI::App& cmd, RunFlags& f) {
  auto* source = cmd.add_option_group("source");
  source->add_option("--dataset", f.dataset, "LIBSVM file");
  source->add_option("--synthetic", f.synthetic, "n,d,nnz,seed");
  source->require_option(1);
  cmd.add_option("--flip", f.flip, "label flip probability for --synthetic")->check(CLI::Range(0.0, 0.999));
  cmd.add_flag("--zero-one-labels", f.zero_one, "map label 0 to -1");
  cmd.add_option("--dim", f.dim, "minimum feature dimension");
  cmd.add_option("--problem", f.problem)->check(CLI::IsMember({"logistic", "quadratic", "cauchy"}));
  cmd.add_option("--sigma", f.sigma, "logistic L2 weight (default 1/n)");
  cmd.add_option("--cond", f.cond, "quadratic: largest Hessian eigenvalue (smallest is 1)");
  cmd.add_option("--method", f.method)->check(CLI::IsMember({"robust", "naive", "gd", "sgd"}));
  cmd.add_option("--strategy", f.strategy)->check(CLI::IsMember({"partition", "subsample", "fault"}));
  cmd.add_option("--r", f.config.r, "batch fraction");
  cmd.add_option("--o", f.config.o, "overlap fraction of the batch");
  cmd.add_option("--alpha", f.config.alpha, "step length");
  cmd.add_option("--memory", f.config.memory, "L-BFGS memory m");
  cmd.add_option("--epsilon", f.config.epsilon, "cautious threshold");
  cmd.add_flag("--cautious", f.config.cautious, "skip pairs with y^T s < epsilon |s|^2");
  cmd.add_option("--epochs", f.epochs, "epoch budget (default 10)");
  cmd.add_option("--max-iters", f.max_iters, "iteration budget instead of epochs");
  cmd.add_option("--nodes", f.config.nodes, "fault strategy: node count K");
  cmd.add_option("--p", f.config.p, "fault strategy: node failure probability");
  cmd.add_option("--redistribute", f.config.redistribute_every, "fault strategy: reshuffle every N iterations");
  cmd.add_option("--eval-every", f.config.eval_every, "full evaluation cadence (0 = once per epoch)");
  cmd.add_option("--chunks", f.config.chunk_count, "gradient reduction chunks");
  cmd.add_option("--init", f.init)->check(CLI::IsMember({"zeros", "gaussian"}));
  cmd.add_flag("--timing", f.config.record_timing, "record elapsed_ns (output no longer reproducible)");
}

mbl::SolverConfig finish_config(RunFlags& f) {
  mbl::SolverConfig c = f.config;
  c.method = f.method == "robust"  ? mbl::Method::robust_lbfgs
             : f.method == "naive" ? mbl::Method::naive_lbfgs
             : f.method == "gd"    ? mbl::Method::gradient_descent
                                   : mbl::Method::serial_sgd;
  c.strategy = f.strategy == "partition" ? mbl::Strategy::partition
               : f.strategy == "subsample" ? mbl::Strategy::subsample
                                           : mbl::Strategy::fault;
  c.init = f.init == "gaussian" ? mbl::InitialPoint::seeded_gaussian : mbl::InitialPoint::zeros;
  if (f.epochs > 0 && f.max_iters > 0) throw mbl::ConfigError("--epochs and --max-iters are exclusive");
  if (f.max_iters > 0) {
    c.max_iters = f.max_iters;
  } else {
    c.epochs = f.epochs > 0 ? f.epochs : 10;
  }
  mbl::validate(c);
  return c;
}

struct LoadedProblem {
  mbl::AnyProblem problem;
  std::string source;
  std::string hash;
};

std::vector<std::size_t> parse_synthetic(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(part, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != part.size() || part.empty() || part.front() == '-')
      throw mbl::ConfigError("--synthetic expects n,d,nnz,seed");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.size() != 4) throw mbl::ConfigError("--synthetic expects n,d,nnz,seed");
  return out;
}

LoadedProblem load_problem(const RunFlags& f) {
  std::shared_ptr<const mbl::Dataset> data;
  std::string source, hash;
  std::vector<std::size_t> syn;
  if (!f.dataset.empty()) {
    std::ifstream in(f.dataset, std::ios::binary);
    if (!in) throw mbl::ConfigError("cannot read " + f.dataset);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    hash = mbl::hex64(mbl::fnv1a64(bytes));
    source = f.dataset;
    if (f.problem == "quadratic") throw mbl::ConfigError("--problem quadratic takes --synthetic, not --dataset");
    std::istringstream text(bytes);
    data = std::make_shared<mbl::Dataset>(mbl::parse_libsvm(text, {f.zero_one, f.dim}));
  } else {
    syn = parse_synthetic(f.synthetic);
    source = "synthetic:" + f.synthetic;
    if (f.problem != "quadratic") {
      mbl::SyntheticSpec spec{syn[0], std::max(syn[1], f.dim), syn[2], syn[3], f.flip};
      data = std::make_shared<mbl::Dataset>(mbl::generate_synthetic(spec));
      std::ostringstream text;
      mbl::write_libsvm(text, *data);
      hash = mbl::hex64(mbl::fnv1a64(text.str()));
    }
  }
  if (f.problem == "logistic") {
    std::optional<double> sigma;
    if (f.sigma >= 0.0) sigma = f.sigma;
    return {mbl::LogisticProblem(data, sigma), source, hash};
  }
  if (f.problem == "cauchy") return {mbl::CauchyProblem(data), source, hash};

  if (!(f.cond >= 1.0)) throw mbl::ConfigError("--cond must be at least 1");
  mbl::QuadraticSpec spec;
  const std::size_t d = syn[1];
  if (d == 0 || syn[0] == 0) throw mbl::ConfigError("quadratic needs n, d >= 1");
  for (std::size_t i = 0; i < d; ++i)
    spec.eigenvalues.push_back(d == 1 ? 1.0 : 1.0 + (f.cond - 1.0) * static_cast<double>(i) / (d - 1));
  spec.n = syn[0];
  spec.noise = 1.0;
  spec.noise_seed = syn[3];
  spec.rotation_seed = syn[3];
  spec.minimizer.assign(d, 1.0);
  mbl::QuadraticProblem q(spec);
  std::string fingerprint = "quadratic:" + f.synthetic + ":" + mbl::format_real(f.cond);
  return {std::move(q), source, mbl::hex64(mbl::fnv1a64(fingerprint))};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string trace_text(const mbl::Trace& trace) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  mbl::write_trace_csv(out, trace);
  return out.str();
}

/// Runs one configuration and writes `out` plus `out.manifest`.
bool run_and_write(const LoadedProblem& lp, const RunFlags& f, const mbl::SolverConfig& config,
                   const fs::path& out) {
  const std::string started = utc_timestamp();
  const mbl::Trace trace = mbl::run(lp.problem, config);
  mbl::write_file_atomic(out, trace_text(trace));

  mbl::Manifest m;
  m.set("version", MBL_VERSION);
  m.set("started", started);
  m.set("problem", f.problem);
  m.set("dataset", lp.source);
  m.set("dataset_fnv1a64", lp.hash);
  if (!f.synthetic.empty() && f.problem != "quadratic") m.set("flip", mbl::format_real(f.flip));
  if (f.problem == "quadratic") m.set("cond", mbl::format_real(f.cond));
  mbl::echo_config(m, config);
  m.set("iterations", std::to_string(trace.records.empty() ? 0 : trace.records.back().k));
  m.set("diverged", trace.diverged ? "true" : "false");
  m.set("trace", out.string());
  auto manifest_path = out;
  manifest_path += ".manifest";
  m.set("manifest", manifest_path.string());
  mbl::write_file_atomic(manifest_path, m.str());
  return trace.diverged;
}

int cmd_run(RunFlags& f, const std::string& out) {
  const auto config = finish_config(f);
  const auto lp = load_problem(f);
  const bool diverged = run_and_write(lp, f, config, out);
  if (diverged) {
    std::cerr << "mbl run: numerical divergence, trace truncated\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_sweep(RunFlags& f, const std::string& dir, std::size_t seeds, std::size_t jobs) {
  if (seeds == 0) throw mbl::ConfigError("--seeds must be positive");
  const auto base = finish_config(f);
  const auto lp = load_problem(f);
  fs::create_directories(dir);

  std::vector<char> diverged(seeds, 0);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::string error;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seeds;) {
      try {
        auto config = base;
        config.seed = i + 1;
        diverged[i] = run_and_write(lp, f, config, fs::path(dir) / ("seed_" + std::to_string(i + 1) + ".csv"));
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        error = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < std::max<std::size_t>(jobs, 1); ++j) pool.emplace_back(worker);
    worker();
  }
  if (!error.empty()) throw mbl::ConfigError(error);

  std::vector<std::map<std::size_t, double>> per_seed;
  for (std::size_t i = 0; i < seeds; ++i)
    per_seed.push_back(
        mbl::per_epoch_grad_norm(mbl::read_csv_file(fs::path(dir) / ("seed_" + std::to_string(i + 1) + ".csv"))));
  std::ostringstream summary;
  summary.imbue(std::locale::classic());
  mbl::write_summary_csv(summary, mbl::summarize(per_seed));
  mbl::write_file_atomic(fs::path(dir) / "summary.csv", summary.str());

  const auto failures = std::count(diverged.begin(), diverged.end(), 1);
  if (failures > 0) {
    std::cerr << "mbl sweep: " << failures << " of " << seeds << " seeds diverged\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_verify(const std::vector<std::string>& checks, const std::string& csv_out, std::uint64_t seed) {
  std::vector<mbl::CheckLine> lines;
  for (const auto& name : checks) {
    std::vector<mbl::CheckLine> got;
    if (name == "gradient") got = mbl::verify_gradient(20, seed);
    else if (name == "two-loop") got = mbl::verify_two_loop(100, seed);
    else if (name == "curvature") got = mbl::verify_curvature(seed);
    else if (name == "convex-bound") got = mbl::verify_convex_bound(seed);
    else if (name == "nonconvex-bound") got = mbl::verify_nonconvex_bound(seed);
    else if (name == "samplers") got = mbl::verify_samplers(seed);
    else throw mbl::ConfigError("unknown check " + name);
    lines.insert(lines.end(), got.begin(), got.end());
  }
  std::ostringstream csv;
  csv.imbue(std::locale::classic());
  csv << "check,property,value,threshold,passed\n";
  bool all = true;
  for (const auto& l : lines) {
    all = all && l.passed;
    std::cout << (l.passed ? "PASS" : "FAIL") << "  " << l.check << ": " << l.property << " = "
              << mbl::format_real(l.value) << " (threshold " << mbl::format_real(l.threshold) << ")\n";
    csv << l.check << ',' << l.property << ',' << mbl::format_real(l.value) << ','
        << mbl::format_real(l.threshold) << ',' << (l.passed ? 1 : 0) << '\n';
  }
  if (csv_out.empty()) {
    std::cout << '\n' << csv.str();
  } else {
    mbl::write_file_atomic(csv_out, csv.str());
  }
  return all ? kExitOk : kExitUsage;
}

int cmd_plot(const std::vector<std::string>& traces, const std::string& out, bool logy) {
  std::vector<mbl::PlotSeries> series;
  for (const auto& path : traces) {
    const auto table = mbl::read_csv_file(path);
    const auto ec = table.column("epoch"), mc = table.column("mean"), lo = table.column("min"),
               hi = table.column("max");
    if (!ec || !mc || !lo || !hi) throw mbl::ConfigError(path + ": needs epoch, mean, min and max columns");
    mbl::PlotSeries s;
    const fs::path p(path);
    s.label = p.stem() == "summary" && p.has_parent_path() ? p.parent_path().filename().string() : p.stem().string();
    for (const auto& row : table.rows) {
      auto e = mbl::parse_cell(row[*ec]);
      auto m = mbl::parse_cell(row[*mc]), a = mbl::parse_cell(row[*lo]), b = mbl::parse_cell(row[*hi]);
      if (!e || !m || !a || !b) continue;
      s.x.push_back(*e);
      s.mean.push_back(*m);
      s.min.push_back(*a);
      s.max.push_back(*b);
    }
    series.push_back(std::move(s));
  }
  mbl::PlotOptions opt;
  opt.logy = logy;
  const auto result = mbl::render_svg(series, opt);
  if (result.clamped > 0)
    std::cerr << "mbl plot: warning: " << result.clamped << " non-positive value(s) clamped to 1e-16 on the log axis\n";
  mbl::write_file_atomic(out, result.svg);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-batch L-BFGS experiments"};
  app.set_version_flag("--version", MBL_VERSION);
  app.require_subcommand(1);

  RunFlags run_flags;
  std::string run_out;
  auto* run = app.add_subcommand("run", "run one solver configuration and write its trace");
  add_run_flags(*run, run_flags);
  run->add_option("--out", run_out, "trace CSV path")->required();
  run->add_option("--seed", run_flags.config.seed, "random seed");

  RunFlags sweep_flags;
  std::string sweep_out;
  std::size_t seeds = 10, jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "run seeds 1..N and summarize per epoch");
  add_run_flags(*sweep, sweep_flags);
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--seeds", seeds, "number of seeds");
  sweep->add_option("--jobs", jobs, "concurrent runs");

  std::vector<std::string> checks;
  std::string verify_out;
  std::uint64_t verify_seed = 1;
  auto* verify = app.add_subcommand("verify", "numerical self-checks");
  verify->add_option("--check", checks, "gradient|two-loop|curvature|convex-bound|nonconvex-bound|samplers|all")
      ->required()
      ->delimiter(',');
  verify->add_option("--out", verify_out, "CSV report path (default: stdout)");
  verify->add_option("--seed", verify_seed, "random seed");

  std::vector<std::string> plot_traces;
  std::string plot_out;
  bool logy = false;
  auto* plot = app.add_subcommand("plot", "render summary CSVs as an SVG line chart");
  plot->add_option("--traces", plot_traces, "summary CSV files")->required()->delimiter(',');
  plot->add_option("--out", plot_out, "SVG path")->required();
  plot->add_flag("--logy", logy, "logarithmic y axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_flags, run_out);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_out, seeds, jobs);
    if (*verify) {
      if (std::find(checks.begin(), checks.end(), "all") != checks.end())
        checks = {"gradient", "two-loop", "curvature", "convex-bound", "nonconvex-bound", "samplers"};
      return cmd_verify(checks, verify_out, verify_seed);
    }
    if (*plot) return cmd_plot(plot_traces, plot_out, logy);
  } catch (const std::exception& e) {
    std::cerr << "mbl: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
