#pragma once

// Config-driven commands. A config file is flat "key = value" text, '#'
// starts a comment, keys carry section prefixes (sampler.f0 = 4). Unknown
// keys are rejected. Relative paths resolve against the config's directory.
//
// Exit codes: 0 success, 1 unexpected failure, 2 malformed config, 3 data
// shape mismatch, 4 solver abort (trace still written). While a command runs
// the output directory holds a ".failed" marker; it is removed on success and
// filled with the reason on failure.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "klpost/constraints.hpp"
#include "klpost/datagen.hpp"
#include "klpost/error.hpp"
#include "klpost/io.hpp"
#include "klpost/posterior.hpp"
#include "klpost/prior.hpp"
#include "klpost/random.hpp"
#include "klpost/reduction.hpp"
#include "klpost/sampler.hpp"
#include "klpost/solver.hpp"

namespace klpost::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitBadConfig = 2,
  kExitBadData = 3,
  kExitSolverAbort = 4,
};

class config_error : public error {
 public:
  using error::error;
};

class data_error : public error {
 public:
  using error::error;
};

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

class Config {
 public:
  static Config parse(std::string_view text, fs::path base_dir = {}) {
    Config c;
    c.base_dir_ = std::move(base_dir);
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty() || !std::all_of(key.begin(), key.end(), [](char ch) {
            return (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || ch == '_' || ch == '.';
          }))
        throw config_error("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
      if (value.empty()) throw config_error("config line " + std::to_string(line_no) + ": empty value");
      if (!c.entries_.emplace(key, value).second)
        throw config_error("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    return c;
  }

  static Config load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.parent_path());
  }

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> raw(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
    if (auto v = raw(key)) return *v;
    if (fallback) return *fallback;
    throw config_error("missing required key '" + key + "'");
  }

  fs::path get_path(const std::string& key) const {
    fs::path p(get_string(key));
    return p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p;
  }

  double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    const auto v = raw(key);
    if (!v) {
      if (fallback) return *fallback;
      throw config_error("missing required key '" + key + "'");
    }
    double out = 0.0;
    if (!klpost::detail::parse_double(*v, out)) throw config_error("key '" + key + "': not a number");
    return out;
  }

  std::optional<double> get_optional_double(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return get_double(key);
  }

  std::int64_t get_int(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) const {
    const auto v = raw(key);
    if (!v) {
      if (fallback) return *fallback;
      throw config_error("missing required key '" + key + "'");
    }
    return parse_integer<std::int64_t>(key, *v);
  }

  std::uint64_t get_u64(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) const {
    const auto v = raw(key);
    if (!v) {
      if (fallback) return *fallback;
      throw config_error("missing required key '" + key + "'");
    }
    return parse_integer<std::uint64_t>(key, *v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw config_error("key '" + key + "': expected true or false");
  }

  std::vector<double> get_doubles(const std::string& key) const {
    const auto v = raw(key);
    if (!v) return {};
    std::vector<double> out;
    for (std::string_view field : klpost::detail::split_commas(*v)) {
      double x = 0.0;
      if (!klpost::detail::parse_double(field, x)) throw config_error("key '" + key + "': bad list entry");
      out.push_back(x);
    }
    return out;
  }

  std::vector<Index> get_indices(const std::string& key) const {
    const auto v = raw(key);
    if (!v) return {};
    std::vector<Index> out;
    for (std::string_view field : klpost::detail::split_commas(*v))
      out.push_back(static_cast<Index>(parse_integer<std::int64_t>(key, trim(field))));
    return out;
  }

  /// Throws for keys that no reader asked for (typos, wrong section).
  void reject_unused() const {
    for (const auto& [key, value] : entries_)
      if (!used_.count(key)) throw config_error("unknown config key '" + key + "'");
  }

  /// FNV-1a over the sorted "key=value" lines.
  std::uint64_t hash() const {
    std::string canonical;
    for (const auto& [key, value] : entries_) canonical += key + "=" + value + "\n";
    return fnv1a64(canonical);
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  template <typename T>
  static T parse_integer(const std::string& key, std::string_view text) {
    T out{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc() || ptr != text.data() + text.size())
      throw config_error("key '" + key + "': not an integer");
    return out;
  }

  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> used_;
  fs::path base_dir_;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

struct RunConfig {
  fs::path training;
  fs::path targets;
  fs::path output_dir;
  std::optional<Index> n_q;  // defaults to the target row count
  bool q_leading = true;     // Q rows come before W rows in the training file
  double eps_pca = 1e-4;
  SamplerConfig sampler;
  SolverConfig solver;
  bool emit_marginals = true;
  bool emit_trace = true;
  std::vector<Index> observe;  // Q components for stats and marginals; empty = all
  Index grid_points = 201;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

inline Config load_with_overrides(const fs::path& path, const Overrides& ov) {
  Config c = Config::load(path);
  if (ov.seed) c.set("seed", std::to_string(*ov.seed));
  return c;
}

inline RunConfig parse_run_config(const Config& c, const Overrides& ov = {}) {
  RunConfig r;
  r.config_hash = c.hash();
  r.seed = c.get_u64("seed", 0);
  r.training = c.get_path("data.training");
  r.targets = c.get_path("data.targets");
  if (c.has("data.n_q")) {
    const auto n_q = c.get_int("data.n_q");
    if (n_q < 1) throw config_error("data.n_q must be >= 1");
    r.n_q = static_cast<Index>(n_q);
  }
  const std::string order = c.get_string("data.order", "qw");
  if (order != "qw" && order != "wq") throw config_error("data.order must be qw or wq");
  r.q_leading = order == "qw";
  r.output_dir = c.get_path("output.dir");

  r.eps_pca = c.get_double("reduction.eps_pca", 1e-4);
  if (!(r.eps_pca > 0.0 && r.eps_pca < 1.0)) throw config_error("reduction.eps_pca must be in (0, 1)");

  r.sampler.f0 = c.get_double("sampler.f0", 4.0);
  r.sampler.delta_t = c.get_double("sampler.delta_t", 0.2188);
  r.sampler.m_s = static_cast<Index>(c.get_int("sampler.m_s", 30));
  r.sampler.n_mc = static_cast<Index>(c.get_int("sampler.n_mc", 1));
  r.sampler.seed = r.seed;
  r.sampler.threads = ov.threads.value_or(1);

  r.solver.i_max = static_cast<Index>(c.get_int("solver.i_max", 20));
  r.solver.alpha0 = c.get_double("solver.alpha0", 0.3);
  r.solver.alpha_growth = c.get_double("solver.alpha_growth", 1.5);
  r.solver.alpha_shrink = c.get_double("solver.alpha_shrink", 0.5);
  r.solver.alpha_min = c.get_double("solver.alpha_min", 0.01);
  r.solver.hessian_jitter = c.get_optional_double("solver.jitter");
  r.solver.relative_jitter = c.get_double("solver.jitter_rel", r.solver.relative_jitter);
  r.solver.err_target = c.get_optional_double("solver.err_target");
  r.solver.cache_sets = c.get_bool("solver.cache_sets", true);

  r.emit_marginals = c.get_bool("output.marginals", true);
  r.emit_trace = c.get_bool("output.trace", true);
  r.observe = c.get_indices("output.observe");
  r.grid_points = static_cast<Index>(c.get_int("output.grid_points", 201));
  c.reject_unused();

  try {
    r.sampler.validate();
    r.solver.validate();
  } catch (const argument_error& e) {
    throw config_error(e.what());
  }
  if (r.grid_points < 2) throw config_error("output.grid_points must be >= 2");
  for (Index k : r.observe)
    if (k < 0) throw config_error("output.observe: negative component");
  return r;
}

namespace detail {

/// Creates the output directory and a ".failed" marker that stays until the
/// command completes.
class RunGuard {
 public:
  explicit RunGuard(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    write_marker("incomplete run\n");
  }

  void fail(const std::string& reason) { write_marker(reason + "\n"); }
  void succeed() { fs::remove(dir_ / ".failed"); }
  const fs::path& dir() const { return dir_; }

 private:
  void write_marker(const std::string& text) {
    std::ofstream out(dir_ / ".failed", std::ios::trunc);
    out << text;
  }
  fs::path dir_;
};

class ArtifactWriter {
 public:
  ArtifactWriter(fs::path dir, std::string command, std::uint64_t config_hash, std::uint64_t seed)
      : dir_(std::move(dir)), command_(std::move(command)), hash_(config_hash), seed_(seed) {}

  std::vector<std::string> header(const std::string& what) const {
    return {"klpost " + command_ + ": " + what, "config_hash=" + hex64(hash_),
            "seed=" + std::to_string(seed_)};
  }

  void matrix(const std::string& name, const MatrixXd& m, const std::string& what) const {
    write_matrix(dir_ / name, m, header(what));
  }

  /// CSV table with a column-name line after the header comments.
  void table(const std::string& name, const std::vector<std::string>& columns, const MatrixXd& rows,
             const std::string& what) const {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + (dir_ / name).string());
    for (const auto& line : header(what)) out << "# " << line << '\n';
    for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "," : "") << columns[k];
    out << '\n';
    write_matrix_csv(out, rows);
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::string command_;
  std::uint64_t hash_;
  std::uint64_t seed_;
};

inline RawDataset load_dataset(const RunConfig& r) {
  MatrixXd x;
  MatrixXd targets;
  try {
    x = read_matrix(r.training);
    targets = read_matrix(r.targets);
  } catch (const io_error& e) {
    throw data_error(e.what());
  }
  const Index n_q = r.n_q.value_or(targets.rows());
  if (n_q >= x.rows())
    throw data_error("training rows (" + std::to_string(x.rows()) + ") must exceed n_q (" +
                     std::to_string(n_q) + ")");
  RawDataset raw;
  raw.x = std::move(x);
  raw.targets = std::move(targets);
  const Index n_w = raw.x.rows() - n_q;
  raw.q_rows = r.q_leading ? IndexRange{0, n_q} : IndexRange{n_w, n_q};
  raw.w_rows = r.q_leading ? IndexRange{n_q, n_w} : IndexRange{0, n_w};
  try {
    raw.validate();
  } catch (const argument_error& e) {
    throw data_error(e.what());
  }
  return raw;
}

inline VectorXd union_grid(const std::vector<VectorXd>& sets, Index points) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : sets) {
    const VectorXd g = auto_grid(s, 2);
    lo = std::min(lo, g[0]);
    hi = std::max(hi, g[1]);
  }
  return VectorXd::LinSpaced(points, lo, hi);
}

template <typename Fn>
int run_guarded(const fs::path& out_dir, std::ostream& log, Fn&& body) {
  std::optional<RunGuard> guard;
  try {
    guard.emplace(out_dir);
    const int code = body(*guard);
    if (code == kExitOk) guard->succeed();
    return code;
  } catch (const data_error& e) {
    if (guard) guard->fail(std::string("data error: ") + e.what());
    log << "error: " << e.what() << '\n';
    return kExitBadData;
  } catch (const std::exception& e) {
    if (guard) guard->fail(std::string("failure: ") + e.what());
    log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace detail

/// Full pipeline: scale, reduce, fit the prior and constraints, solve for
/// lambda, map the learned set back, write artifacts.
inline int cmd_learn(const fs::path& config_path, const Overrides& ov = {}, std::ostream& log = std::cerr) {
  RunConfig r;
  try {
    r = parse_run_config(load_with_overrides(config_path, ov), ov);
  } catch (const error& e) {
    log << "config error: " << e.what() << '\n';
    return kExitBadConfig;
  }

  return detail::run_guarded(r.output_dir, log, [&](detail::RunGuard& guard) -> int {
    const RawDataset raw = detail::load_dataset(r);
    const ScaledDataset scaled = scale_dataset(raw);
    ReductionFit fit;
    ProjectedTargets projected;
    try {
      fit = fit_reduction(scaled.data, r.eps_pca);
      projected = project_targets(fit.basis, scaled.data.targets);
    } catch (const degenerate_error& e) {
      throw data_error(e.what());
    } catch (const rank_error& e) {
      throw data_error(e.what());
    }
    for (Index k : r.observe)
      if (k >= raw.n_q()) throw data_error("output.observe: component " + std::to_string(k) + " >= n_q");

    const PriorKde prior = fit_prior(fit.reduced);
    const ConstraintSpec spec = make_constraint_spec(projected);
    for (const auto& w : spec.warnings) log << "warning: " << w << '\n';
    log << "n_x=" << raw.n_x() << " N_d=" << raw.n_d() << " N_r=" << raw.n_r() << " nu=" << fit.basis.nu
        << " N=" << raw.n_d() * r.sampler.n_mc << '\n';

    const SolverTrace tr = solve_lambda(prior, spec, fit.reduced, r.sampler, r.solver);
    const detail::ArtifactWriter out(guard.dir(), "learn", r.config_hash, r.seed);

    if (r.emit_trace) {
      std::vector<std::string> cols{"i", "err", "alpha"};
      for (Index k = 1; k <= spec.n_r(); ++k) cols.push_back("lambda_" + std::to_string(k));
      MatrixXd rows(tr.iterations(), 3 + spec.n_r());
      for (Index i = 0; i < tr.iterations(); ++i) {
        const auto s = static_cast<std::size_t>(i);
        rows(i, 0) = static_cast<double>(i + 1);
        rows(i, 1) = tr.errs[s];
        rows(i, 2) = tr.alphas[s];
        rows.row(i).tail(spec.n_r()) = tr.lambdas[s].transpose();
      }
      out.table("trace.csv", cols, rows,
                "row i: lambda that generated set i, its err, step size for the next update");
    }
    if (tr.aborted) {
      guard.fail("solver abort: " + tr.abort_reason);
      log << "solver abort: " << tr.abort_reason << '\n';
      return kExitSolverAbort;
    }

    PosteriorEnsemble post = build_posterior(fit.basis, scaled.params, tr.learned_set_sol);
    post.seed = r.seed;
    post.lambda_sol = tr.lambda_sol();
    post.err_sol = tr.err_sol();
    log << "i_sol=" << tr.i_sol << " err(1)=" << tr.errs.front() << " err(i_sol)=" << post.err_sol << '\n';

    out.matrix("posterior_q.csv", post.q_samples, "posterior Q, one realization per column");
    out.matrix("posterior_w.csv", post.w_samples, "posterior W, one realization per column");
    out.matrix("lambda_sol.csv", post.lambda_sol, "lambda_sol (N_r x 1), i_sol=" + std::to_string(tr.i_sol));
    out.matrix("b_c.csv", spec.b_c, "b^c (N_r x 1)");

    std::vector<Index> observe = r.observe;
    if (observe.empty())
      for (Index k = 0; k < raw.n_q(); ++k) observe.push_back(k);
    const MatrixXd q_train = raw.x.middleRows(raw.q_rows.start, raw.q_rows.size);
    MatrixXd stats(static_cast<Index>(observe.size()), 4);
    for (std::size_t n = 0; n < observe.size(); ++n) {
      const Index k = observe[n];
      const auto row = static_cast<Index>(n);
      stats(row, 0) = static_cast<double>(k);
      stats(row, 1) = mean_square_norm(q_train, k);
      stats(row, 2) = mean_square_norm(raw.targets, k);
      stats(row, 3) = mean_square_norm(post.q_samples, k);
    }
    out.table("stats.csv", {"component", "msn_training", "msn_target", "msn_posterior"}, stats,
              "mean-square norms of observed Q components");

    if (r.emit_marginals) {
      for (Index k : observe) {
        const VectorXd a = q_train.row(k).transpose();
        const VectorXd b = raw.targets.row(k).transpose();
        const VectorXd c = post.q_samples.row(k).transpose();
        const VectorXd grid = detail::union_grid({a, b, c}, r.grid_points);
        MatrixXd curves(grid.size(), 4);
        curves.col(0) = grid;
        std::vector<std::string> warnings;
        curves.col(1) = marginal_pdf(a, grid, &warnings);
        curves.col(2) = b.size() >= 2 ? marginal_pdf(b, grid, &warnings) : VectorXd::Zero(grid.size());
        curves.col(3) = marginal_pdf(c, grid, &warnings);
        for (const auto& w : warnings) log << "warning: component " << k << ": " << w << '\n';
        out.table("marginal_q" + std::to_string(k) + ".csv", {"x", "pdf_training", "pdf_target", "pdf_posterior"},
                  curves, "marginal pdfs of Q component " + std::to_string(k));
      }
    }
    return kExitOk;
  });
}

/// J(m, sigma) surface of the Gaussian diagnostic.
inline int cmd_sweep_j(const fs::path& config_path, const Overrides& ov = {}, std::ostream& log = std::cerr) {
  SweepConfig sweep;
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::uint64_t hash = 0;
  try {
    const Config c = load_with_overrides(config_path, ov);
    hash = c.hash();
    seed = c.get_u64("seed", 0);
    sweep.nu = static_cast<Index>(c.get_int("sweep.nu", 100));
    sweep.n_d = static_cast<Index>(c.get_int("sweep.n_d", 1000));
    sweep.n_r = static_cast<Index>(c.get_int("sweep.n_r", 100));
    sweep.m_values = c.get_doubles("sweep.m");
    sweep.sigma_values = c.get_doubles("sweep.sigma");
    sweep.sample_seed = seed;
    sweep.direction_seed = c.get_u64("sweep.direction_seed", seed);
    out_dir = c.get_path("output.dir");
    c.reject_unused();
    GaussianCaseConfig probe;
    probe.nu = sweep.nu;
    probe.n_d = sweep.n_d;
    probe.n_r = sweep.n_r;
    const auto ms = sweep.m_values.empty() ? SweepConfig::default_m() : sweep.m_values;
    const auto ss = sweep.sigma_values.empty() ? SweepConfig::default_sigma() : sweep.sigma_values;
    for (double m : ms)
      for (double s : ss) {
        probe.m_targ = m;
        probe.sigma_targ = s;
        probe.validate();
      }
  } catch (const error& e) {
    log << "config error: " << e.what() << '\n';
    return kExitBadConfig;
  }

  return detail::run_guarded(out_dir, log, [&](detail::RunGuard& guard) -> int {
    const JSurface surface = sweep_j(sweep);
    MatrixXd rows(static_cast<Index>(surface.points.size()), 3);
    for (std::size_t k = 0; k < surface.points.size(); ++k) {
      const auto i = static_cast<Index>(k);
      rows(i, 0) = surface.points[k].m;
      rows(i, 1) = surface.points[k].sigma;
      rows(i, 2) = surface.points[k].j;
    }
    detail::ArtifactWriter(guard.dir(), "sweep-j", hash, seed)
        .table("surface.csv", {"m", "sigma", "J"}, rows, "constraint mismatch J over (m_targ, sigma_targ)");
    const SurfacePoint& best = surface.min_point();
    log << "argmin m=" << best.m << " sigma=" << best.sigma << " J=" << best.j << '\n';
    return kExitOk;
  });
}

/// Writes synthetic datasets (gen.kind = supervised | gaussian).
inline int cmd_gen(const fs::path& config_path, const Overrides& ov = {}, std::ostream& log = std::cerr) {
  std::string kind;
  std::string ext;
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::uint64_t hash = 0;
  SyntheticSupervisedConfig sup;
  GaussianCaseConfig gauss;
  try {
    const Config c = load_with_overrides(config_path, ov);
    hash = c.hash();
    seed = c.get_u64("seed", 0);
    kind = c.get_string("gen.kind");
    const std::string format = c.get_string("output.format", "csv");
    if (format != "csv" && format != "bin") throw config_error("output.format must be csv or bin");
    ext = "." + format;
    out_dir = c.get_path("output.dir");
    if (kind == "supervised") {
      sup.n_w = static_cast<Index>(c.get_int("gen.n_w", sup.n_w));
      sup.n_q = static_cast<Index>(c.get_int("gen.n_q", sup.n_q));
      sup.n_d = static_cast<Index>(c.get_int("gen.n_d", sup.n_d));
      sup.n_r = static_cast<Index>(c.get_int("gen.n_r", sup.n_r));
      sup.noise = c.get_double("gen.noise", sup.noise);
      sup.w_spread = c.get_double("gen.w_spread", sup.w_spread);
      sup.quadratic = c.get_double("gen.quadratic", sup.quadratic);
      sup.target_shift = c.get_double("gen.target_shift", sup.target_shift);
      sup.target_spread = c.get_double("gen.target_spread", sup.target_spread);
      const std::string map = c.get_string("gen.map", "polynomial");
      if (map != "polynomial" && map != "identity") throw config_error("gen.map must be polynomial or identity");
      sup.map = map == "identity" ? SupervisedMap::identity : SupervisedMap::polynomial;
      sup.seed = seed;
      c.reject_unused();
      sup.validate();
    } else if (kind == "gaussian") {
      gauss.nu = static_cast<Index>(c.get_int("gen.nu", gauss.nu));
      gauss.n_d = static_cast<Index>(c.get_int("gen.n_d", gauss.n_d));
      gauss.n_r = static_cast<Index>(c.get_int("gen.n_r", gauss.n_r));
      gauss.m_targ = c.get_double("gen.m_targ", gauss.m_targ);
      gauss.sigma_targ = c.get_double("gen.sigma_targ", gauss.sigma_targ);
      gauss.sample_seed = seed;
      gauss.direction_seed = c.get_u64("gen.direction_seed", seed);
      c.reject_unused();
      gauss.validate();
    } else {
      throw config_error("gen.kind must be supervised or gaussian");
    }
  } catch (const error& e) {
    log << "config error: " << e.what() << '\n';
    return kExitBadConfig;
  }

  return detail::run_guarded(out_dir, log, [&](detail::RunGuard& guard) -> int {
    const detail::ArtifactWriter out(guard.dir(), "gen", hash, seed);
    if (kind == "supervised") {
      const SupervisedCase sc = gen_supervised(sup);
      out.matrix("training" + ext, sc.dataset.x,
                 "training set, rows: " + std::to_string(sup.n_q) + " Q then " + std::to_string(sup.n_w) + " W");
      out.matrix("targets" + ext, sc.dataset.targets, "target Q realizations");
      out.matrix("target_w" + ext, sc.target_w, "W that generated the targets (reference only)");
    } else {
      const GaussianCase gc = gen_gaussian_case(gauss);
      out.matrix("h" + ext, gc.h, "H ~ N(0, I)");
      out.matrix("h_targ" + ext, gc.h_targ, "H_targ ~ N(m_targ a, sigma_targ I)");
    }
    if (ext == ".bin") {
      // Binary matrices have no room for comments; the provenance goes alongside.
      std::ofstream manifest(guard.dir() / "manifest.txt", std::ios::trunc);
      for (const auto& line : out.header("binary matrices in this directory")) manifest << "# " << line << '\n';
    }
    return kExitOk;
  });
}

/// Prints basis and constraint summaries for a learn config without solving.
inline int cmd_diagnose(const fs::path& config_path, const Overrides& ov = {}, std::ostream& out = std::cout,
                        std::ostream& log = std::cerr) {
  RunConfig r;
  try {
    r = parse_run_config(load_with_overrides(config_path, ov), ov);
  } catch (const error& e) {
    log << "config error: " << e.what() << '\n';
    return kExitBadConfig;
  }
  try {
    const RawDataset raw = detail::load_dataset(r);
    const ScaledDataset scaled = scale_dataset(raw);
    ReductionFit fit;
    try {
      fit = fit_reduction(scaled.data, r.eps_pca);
    } catch (const degenerate_error& e) {
      throw data_error(e.what());
    }
    const ReducedBasis& b = fit.basis;
    out << "config_hash " << hex64(r.config_hash) << "\nseed " << r.seed << '\n';
    out << "n_x " << raw.n_x() << "\nn_q " << raw.n_q() << "\nn_w " << raw.n_w() << "\nN_d " << raw.n_d()
        << "\nN_r " << raw.n_r() << '\n';
    out << "eps_pca " << b.eps_pca << "\nnu " << b.nu << "\nerr_pca " << pca_error(b, b.nu) << '\n';
    out << "kappa_first " << b.kappa[0] << "\nkappa_last " << b.kappa[b.nu - 1] << '\n';
    out << "projection_condition " << b.v_condition << '\n';
    const PriorKde prior = fit_prior(fit.reduced);
    out << "s_sb " << prior.s_sb << "\ns_hat " << prior.s_hat << '\n';
    if (!b.can_project()) {
      out << "constraints unavailable: Q-block rank deficient\n";
      return kExitBadData;
    }
    const ConstraintSpec spec = make_constraint_spec(project_targets(b, scaled.data.targets));
    out << "s " << spec.s << "\nb_c_min " << spec.b_c.minCoeff() << "\nb_c_max " << spec.b_c.maxCoeff()
        << "\nJ_training " << constraint_mismatch(spec, fit.reduced.eta) << '\n';
    for (const auto& w : spec.warnings) out << "warning " << w << '\n';
    return kExitOk;
  } catch (const data_error& e) {
    log << "error: " << e.what() << '\n';
    return kExitBadData;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace klpost::cli
