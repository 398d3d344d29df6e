#include <gtest/gtest.h>

#include <cctype>
#include <cstdlib>
#include <map>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "klpost/cli.hpp"

namespace {

namespace fs = std::filesystem;
using klpost::cli::Config;
using klpost::cli::Overrides;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("klpost_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t data_rows(const fs::path& csv) {
  std::istringstream in(read_text(csv));
  std::string line;
  std::size_t n = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen && !std::isdigit(static_cast<unsigned char>(line[0])) && line[0] != '-') {
      header_seen = true;
      continue;
    }
    ++n;
  }
  return n;
}

// Generates a small supervised problem into `dir` and returns a learn config path.
fs::path prepare_learn(const fs::path& dir, const std::string& extra_gen = "", const std::string& extra_learn = "") {
  write_text(dir / "gen.cfg",
             "seed = 3\ngen.kind = supervised\ngen.n_w = 6\ngen.n_q = 12\ngen.n_d = 80\ngen.n_r = 20\n"
             "output.dir = data\n" + extra_gen);
  std::ostringstream log;
  EXPECT_EQ(klpost::cli::cmd_gen(dir / "gen.cfg", {}, log), 0) << log.str();
  write_text(dir / "learn.cfg",
             "# small learn run\nseed = 5\ndata.training = data/training.csv\ndata.targets = data/targets.csv\n"
             "reduction.eps_pca = 1e-3\nsampler.m_s = 20\nsolver.i_max = 4\noutput.dir = out\noutput.observe = 0,3\n" +
                 extra_learn);
  return dir / "learn.cfg";
}

double best_err(const fs::path& trace) {
  std::istringstream in(read_text(trace));
  std::string line;
  double best = 1e300;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line[0] == 'i') continue;
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    best = std::min(best, std::stod(line.substr(first + 1, second - first - 1)));
  }
  return best;
}

TEST(Config, ParsesCommentsAndSections) {
  const Config c = Config::parse("# header\nsampler.f0 = 4 # trailing\n\n  solver.i_max=7\nname = a b\n");
  EXPECT_EQ(c.get_double("sampler.f0"), 4.0);
  EXPECT_EQ(c.get_int("solver.i_max"), 7);
  EXPECT_EQ(c.get_string("name"), "a b");
  EXPECT_EQ(c.get_double("missing", 2.5), 2.5);
  EXPECT_NO_THROW(c.reject_unused());
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(Config::parse("novalue\n"), klpost::cli::config_error);
  EXPECT_THROW(Config::parse("a = 1\na = 2\n"), klpost::cli::config_error);
  EXPECT_THROW(Config::parse("Bad-Key = 1\n"), klpost::cli::config_error);
  EXPECT_THROW(Config::parse("a =\n"), klpost::cli::config_error);
  const Config c = Config::parse("a = x\nb = 1.5\nc = maybe\n");
  EXPECT_THROW(c.get_double("a"), klpost::cli::config_error);
  EXPECT_THROW(c.get_int("b"), klpost::cli::config_error);
  EXPECT_THROW(c.get_bool("c", false), klpost::cli::config_error);
  EXPECT_THROW(c.get_string("absent"), klpost::cli::config_error);
}

TEST(Config, UnknownKeysRejected) {
  const Config c = Config::parse("used = 1\ntypo.key = 2\n");
  c.get_int("used");
  EXPECT_THROW(c.reject_unused(), klpost::cli::config_error);
}

TEST(Config, HashIgnoresFormattingButNotValues) {
  const auto a = Config::parse("x = 1\ny = 2\n").hash();
  const auto b = Config::parse("# comment\ny=2\n\nx =   1\n").hash();
  const auto c = Config::parse("x = 1\ny = 3\n").hash();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(RunConfig, DefaultsFromLiterature) {
  const auto r = klpost::cli::parse_run_config(
      Config::parse("data.training = a.csv\ndata.targets = b.csv\noutput.dir = o\n"));
  EXPECT_EQ(r.eps_pca, 1e-4);
  EXPECT_EQ(r.sampler.f0, 4.0);
  EXPECT_EQ(r.sampler.delta_t, 0.2188);
  EXPECT_EQ(r.sampler.m_s, 30);
  EXPECT_EQ(r.solver.alpha0, 0.3);
}

TEST(RunConfig, OutOfRangeValuesAreConfigErrors) {
  const std::string base = "data.training = a.csv\ndata.targets = b.csv\noutput.dir = o\n";
  EXPECT_THROW(klpost::cli::parse_run_config(Config::parse(base + "sampler.f0 = -1\n")), klpost::cli::config_error);
  EXPECT_THROW(klpost::cli::parse_run_config(Config::parse(base + "reduction.eps_pca = 2\n")),
               klpost::cli::config_error);
  EXPECT_THROW(klpost::cli::parse_run_config(Config::parse(base + "solver.alpha0 = 0\n")), klpost::cli::config_error);
  EXPECT_THROW(klpost::cli::parse_run_config(Config::parse(base + "solver.imax = 3\n")), klpost::cli::config_error);
}

TEST(CmdGen, SupervisedShapes) {
  const fs::path dir = fresh_dir("gen_sup");
  write_text(dir / "gen.cfg", "seed = 1\ngen.kind = supervised\noutput.dir = out\n");
  std::ostringstream log;
  ASSERT_EQ(klpost::cli::cmd_gen(dir / "gen.cfg", {}, log), 0) << log.str();
  const klpost::SyntheticSupervisedConfig d;
  const auto x = klpost::read_matrix(dir / "out/training.csv");
  EXPECT_EQ(x.rows(), d.n_q + d.n_w);
  EXPECT_EQ(x.cols(), d.n_d);
  const auto t = klpost::read_matrix(dir / "out/targets.csv");
  EXPECT_EQ(t.rows(), d.n_q);
  EXPECT_EQ(t.cols(), d.n_r);
  EXPECT_FALSE(fs::exists(dir / "out/.failed"));
  const std::string text = read_text(dir / "out/training.csv");
  EXPECT_NE(text.find("# config_hash=0x"), std::string::npos);
  EXPECT_NE(text.find("# seed=1"), std::string::npos);
}

TEST(CmdGen, GaussianShapesBinary) {
  const fs::path dir = fresh_dir("gen_gauss");
  write_text(dir / "gen.cfg", "seed = 2\ngen.kind = gaussian\ngen.n_d = 300\noutput.dir = out\noutput.format = bin\n");
  std::ostringstream log;
  ASSERT_EQ(klpost::cli::cmd_gen(dir / "gen.cfg", {}, log), 0) << log.str();
  const auto h = klpost::read_matrix(dir / "out/h.bin");
  const auto t = klpost::read_matrix(dir / "out/h_targ.bin");
  EXPECT_EQ(h.rows(), 100);
  EXPECT_EQ(h.cols(), 300);
  EXPECT_EQ(t.rows(), 100);
  EXPECT_EQ(t.cols(), 100);
  EXPECT_TRUE(fs::exists(dir / "out/manifest.txt"));
}

TEST(CmdGen, MalformedConfigExitsTwo) {
  const fs::path dir = fresh_dir("gen_bad");
  std::ostringstream log;
  write_text(dir / "a.cfg", "gen.kind = spiral\noutput.dir = out\n");
  EXPECT_EQ(klpost::cli::cmd_gen(dir / "a.cfg", {}, log), 2);
  write_text(dir / "b.cfg", "gen.kind = gaussian\ngen.m_targ = 9\noutput.dir = out\n");
  EXPECT_EQ(klpost::cli::cmd_gen(dir / "b.cfg", {}, log), 2);
  EXPECT_EQ(klpost::cli::cmd_gen(dir / "missing.cfg", {}, log), 2);
}

TEST(CmdLearn, GenThenLearnWritesArtifacts) {
  const fs::path dir = fresh_dir("learn");
  std::ostringstream log;
  ASSERT_EQ(klpost::cli::cmd_learn(prepare_learn(dir), {}, log), 0) << log.str();
  for (const char* name : {"posterior_q.csv", "posterior_w.csv", "trace.csv", "lambda_sol.csv", "b_c.csv",
                           "stats.csv", "marginal_q0.csv", "marginal_q3.csv"})
    EXPECT_TRUE(fs::exists(dir / "out" / name)) << name;
  EXPECT_FALSE(fs::exists(dir / "out/.failed"));
  EXPECT_FALSE(fs::exists(dir / "out/marginal_q1.csv"));
  const auto q = klpost::read_matrix(dir / "out/posterior_q.csv");
  EXPECT_EQ(q.rows(), 12);
  EXPECT_EQ(q.cols(), 80);
  EXPECT_EQ(data_rows(dir / "out/trace.csv"), 4u);
  EXPECT_EQ(klpost::read_matrix(dir / "out/lambda_sol.csv").rows(), 20);
}

TEST(CmdLearn, SingleIterationTrace) {
  const fs::path dir = fresh_dir("learn_one");
  std::ostringstream log;
  const fs::path cfg = prepare_learn(dir, "", "");
  write_text(cfg, read_text(cfg) + "solver.i_max = 1\n");
  EXPECT_EQ(klpost::cli::cmd_learn(cfg, {}, log), 2);  // duplicate key
  write_text(dir / "one.cfg",
             "seed = 5\ndata.training = data/training.csv\ndata.targets = data/targets.csv\n"
             "reduction.eps_pca = 1e-3\nsolver.i_max = 1\noutput.dir = out1\n");
  ASSERT_EQ(klpost::cli::cmd_learn(dir / "one.cfg", {}, log), 0) << log.str();
  EXPECT_EQ(data_rows(dir / "out1/trace.csv"), 1u);
}

TEST(CmdLearn, ByteIdenticalReruns) {
  const fs::path dir = fresh_dir("learn_det");
  std::ostringstream log;
  const fs::path cfg = prepare_learn(dir);
  ASSERT_EQ(klpost::cli::cmd_learn(cfg, {}, log), 0) << log.str();
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(dir / "out")) first[e.path().filename().string()] = read_text(e.path());
  ASSERT_EQ(klpost::cli::cmd_learn(cfg, Overrides{std::nullopt, 3u}, log), 0);
  for (const auto& [name, bytes] : first) EXPECT_EQ(read_text(dir / "out" / name), bytes) << name;

  // A seed override changes the artifacts and their header.
  ASSERT_EQ(klpost::cli::cmd_learn(cfg, Overrides{6u, std::nullopt}, log), 0);
  EXPECT_NE(read_text(dir / "out/posterior_q.csv"), first["posterior_q.csv"]);
  EXPECT_NE(read_text(dir / "out/posterior_q.csv").find("# seed=6"), std::string::npos);
}

TEST(CmdLearn, IsonomicTargetsReachLowerErr) {
  const fs::path iso = fresh_dir("learn_iso");
  const fs::path shifted = fresh_dir("learn_shift");
  std::ostringstream log;
  ASSERT_EQ(klpost::cli::cmd_learn(prepare_learn(iso, "gen.target_shift = 0\n"), {}, log), 0) << log.str();
  ASSERT_EQ(klpost::cli::cmd_learn(prepare_learn(shifted, "gen.target_shift = 1.5\n"), {}, log), 0) << log.str();
  EXPECT_LT(best_err(iso / "out/trace.csv"), best_err(shifted / "out/trace.csv"));
}

TEST(CmdLearn, ShapeMismatchExitsThree) {
  const fs::path dir = fresh_dir("learn_shape");
  std::ostringstream log;
  prepare_learn(dir);
  write_text(dir / "bad.cfg",
             "data.training = data/training.csv\ndata.targets = data/targets.csv\ndata.n_q = 10\noutput.dir = out\n");
  EXPECT_EQ(klpost::cli::cmd_learn(dir / "bad.cfg", {}, log), 3);
  EXPECT_TRUE(fs::exists(dir / "out/.failed"));
  EXPECT_NE(read_text(dir / "out/.failed").find("data error"), std::string::npos);

  write_text(dir / "missing.cfg", "data.training = nope.csv\ndata.targets = data/targets.csv\noutput.dir = out2\n");
  EXPECT_EQ(klpost::cli::cmd_learn(dir / "missing.cfg", {}, log), 3);
}

TEST(CmdLearn, MalformedConfigExitsTwo) {
  const fs::path dir = fresh_dir("learn_cfg");
  std::ostringstream log;
  write_text(dir / "a.cfg", "data.training = a.csv\noutput.dir = out\n");  // no targets
  EXPECT_EQ(klpost::cli::cmd_learn(dir / "a.cfg", {}, log), 2);
  write_text(dir / "b.cfg", "data.training = a.csv\ndata.targets = b.csv\noutput.dir = out\nsampler.dt = 1\n");
  EXPECT_EQ(klpost::cli::cmd_learn(dir / "b.cfg", {}, log), 2);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(CmdLearn, SolverAbortExitsFourWithTrace) {
  const fs::path dir = fresh_dir("learn_abort");
  std::ostringstream log;
  prepare_learn(dir);
  // Targets far outside the training range: every feature underflows, the
  // covariance is zero and, without jitter, the Newton solve fails.
  auto targets = klpost::read_matrix(dir / "data/targets.csv");
  targets.array() += 1e4;
  klpost::write_matrix(dir / "data/far.csv", targets);
  write_text(dir / "abort.cfg",
             "data.training = data/training.csv\ndata.targets = data/far.csv\nreduction.eps_pca = 1e-3\n"
             "solver.jitter = 0\nsolver.i_max = 3\noutput.dir = out\n");
  EXPECT_EQ(klpost::cli::cmd_learn(dir / "abort.cfg", {}, log), 4) << log.str();
  EXPECT_EQ(data_rows(dir / "out/trace.csv"), 1u);
  EXPECT_NE(read_text(dir / "out/.failed").find("solver abort"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out/posterior_q.csv"));
}

TEST(CmdSweepJ, SingleNodeAndDeterminism) {
  const fs::path dir = fresh_dir("sweep");
  write_text(dir / "s.cfg",
             "seed = 4\nsweep.nu = 10\nsweep.n_d = 200\nsweep.n_r = 20\nsweep.m = 0\nsweep.sigma = 1.1\n"
             "output.dir = out\n");
  std::ostringstream log;
  ASSERT_EQ(klpost::cli::cmd_sweep_j(dir / "s.cfg", {}, log), 0) << log.str();
  EXPECT_EQ(data_rows(dir / "out/surface.csv"), 1u);
  const std::string first = read_text(dir / "out/surface.csv");
  ASSERT_EQ(klpost::cli::cmd_sweep_j(dir / "s.cfg", {}, log), 0);
  EXPECT_EQ(read_text(dir / "out/surface.csv"), first);

  write_text(dir / "bad.cfg", "sweep.sigma = 5\noutput.dir = out\n");
  EXPECT_EQ(klpost::cli::cmd_sweep_j(dir / "bad.cfg", {}, log), 2);
}

TEST(CmdSweepJ, SmallDefaultGrid) {
  const fs::path dir = fresh_dir("sweep_grid");
  write_text(dir / "s.cfg", "seed = 1\nsweep.nu = 20\nsweep.n_d = 400\nsweep.n_r = 40\noutput.dir = out\n");
  std::ostringstream log;
  ASSERT_EQ(klpost::cli::cmd_sweep_j(dir / "s.cfg", {}, log), 0) << log.str();
  EXPECT_EQ(data_rows(dir / "out/surface.csv"), 84u);
}

TEST(CmdDiagnose, PrintsSummary) {
  const fs::path dir = fresh_dir("diagnose");
  const fs::path cfg = prepare_learn(dir);
  std::ostringstream out, log;
  ASSERT_EQ(klpost::cli::cmd_diagnose(cfg, {}, out, log), 0) << log.str();
  const std::string text = out.str();
  for (const char* key : {"nu ", "err_pca ", "s_sb ", "s_hat ", "b_c_min ", "J_training "})
    EXPECT_NE(text.find(key), std::string::npos) << key;
}

TEST(Executable, ExitCodesPropagate) {
  const char* exe = std::getenv("KLPOST_CLI");
  if (!exe) GTEST_SKIP() << "KLPOST_CLI not set";
  const fs::path dir = fresh_dir("exe");
  write_text(dir / "gen.cfg", "seed = 1\ngen.kind = gaussian\ngen.nu = 3\ngen.n_d = 10\ngen.n_r = 4\noutput.dir = out\n");
  const std::string base = std::string(exe) + " gen --config " + (dir / "gen.cfg").string();
  EXPECT_EQ(WEXITSTATUS(std::system((base + " --seed 9 --threads 2 2>/dev/null").c_str())), 0);
  EXPECT_NE(read_text(dir / "out/h.csv").find("# seed=9"), std::string::npos);
  write_text(dir / "bad.cfg", "gen.kind = gaussian\n");
  EXPECT_EQ(WEXITSTATUS(std::system((std::string(exe) + " gen --config " + (dir / "bad.cfg").string() + " 2>/dev/null").c_str())), 2);
  EXPECT_EQ(WEXITSTATUS(std::system((std::string(exe) + " frobnicate 2>/dev/null >/dev/null").c_str())), 2);
}

}  // namespace
