#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <sys/wait.h>

#include "tsmini/checkpoint.hpp"
#include "tsmini/commands.hpp"
#include "tsmini/config.hpp"
#include "tsmini/errors.hpp"

namespace fs = std::filesystem;
using namespace tsmini;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / ("tsmini_cli_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct CliResult {
  int code;
  std::string output;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path capture = dir / "cli_output.txt";
  const std::string cmd = std::string(TSMINI_CLI_PATH) + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(capture)};
}

std::string trajectory_line(std::size_t n, double lon0, double lat0) {
  std::ostringstream os;
  os.precision(10);
  os << "t" << n << '\t';
  for (std::size_t i = 0; i < n; ++i) {
    if (i) os << ';';
    os << lon0 + 0.0004 * static_cast<double>(i) << ',' << lat0 + 0.0002 * static_cast<double>(i % 7);
  }
  return os.str();
}

SynthConfig small_synth(std::size_t count, std::uint64_t seed) {
  SynthConfig sc;
  sc.count = count;
  sc.n_min = 20;
  sc.n_max = 40;
  sc.seed = seed;
  return sc;
}

std::string tiny_run_config(const fs::path& dataset, const fs::path& out) {
  return "# quick run\ndataset = " + dataset.string() + "\nout=" + out.string() +
         "\nmeasure=dtw\nd=16\nheads=2\nlayers=1\nbatch=16\nepochs=2\npatience=2\nseed=5\n";
}

}  // namespace

TEST(RunConfigParse, DefaultsAndOverrides) {
  std::istringstream in("dataset=data.txt\n\n# comment\nd = 32\nheads=4\nlambda=1\nlr=0.01\nmeasure=edwp\n");
  const RunConfig c = parse_run_config(in);
  EXPECT_EQ(c.dataset, fs::path("data.txt"));
  EXPECT_EQ(c.model.d, 32u);
  EXPECT_EQ(c.model.heads, 4u);
  EXPECT_EQ(c.train.loss.lambda, 1.0);
  EXPECT_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.measure, MeasureKind::EDwP);
  EXPECT_EQ(c.train_frac, 0.7);
  EXPECT_EQ(c.val_frac, 0.1);
  EXPECT_EQ(c.test_frac, 0.2);
  EXPECT_EQ(c.train.max_epochs, 40u);
  EXPECT_EQ(c.gt_path(), fs::path("out") / "gt-edwp.tsim");
}

TEST(RunConfigParse, RejectsUnknownDuplicateAndMalformed) {
  const auto expect_usage = [](const std::string& text, const std::string& fragment) {
    std::istringstream in(text);
    try {
      parse_run_config(in, "run.cfg").validate();
      FAIL() << "accepted: " << text;
    } catch (const UsageError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_usage("dataset=a\ncolour=blue\n", "run.cfg:2");
  expect_usage("dataset=a\nd=16\nd=32\n", "run.cfg:3");
  expect_usage("dataset=a\nd\n", "run.cfg:2");
  expect_usage("dataset=a\nd=sixteen\n", "run.cfg:2");
  expect_usage("dataset=a\nmeasure=lcss\n", "run.cfg:2");
  expect_usage("dataset=a\ntrain_frac=0.5\n", "frac");
  expect_usage("dataset=a\nd=30\nheads=4\n", "head");
  expect_usage("d=16\n", "dataset");
}

TEST(Split, SizesDisjointAndSeeded) {
  const cmd::Split s = cmd::make_split(1000, 0.7, 0.1, 1);
  EXPECT_EQ(s.train.size(), 700u);
  EXPECT_EQ(s.val.size(), 100u);
  EXPECT_EQ(s.test.size(), 200u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(cmd::make_split(1000, 0.7, 0.1, 1).test, s.test);
  EXPECT_NE(cmd::make_split(1000, 0.7, 0.1, 2).test, s.test);
}

TEST(Preprocess, CountsAndIdempotence) {
  TempDir dir;
  spit(dir / "raw.txt", trajectory_line(19, -8.6, 41.1) + "\n" + trajectory_line(30, -8.6, 41.1) + "\n");
  const auto s = cmd::preprocess(dir / "raw.txt", dir / "clean.txt");
  EXPECT_EQ(s.accepted, 1u);
  EXPECT_EQ(s.rejected, 1u);
  const auto again = cmd::preprocess(dir / "clean.txt", dir / "clean2.txt");
  EXPECT_EQ(again.accepted, 1u);
  EXPECT_EQ(again.rejected, 0u);
  EXPECT_EQ(slurp(dir / "clean.txt"), slurp(dir / "clean2.txt"));
}

TEST(Synth, CountDeterminismAndCleanOutput) {
  TempDir dir;
  cmd::synth(small_synth(1000, 3), dir / "a.txt");
  cmd::synth(small_synth(1000, 3), dir / "b.txt");
  const std::string a = slurp(dir / "a.txt");
  EXPECT_EQ(a, slurp(dir / "b.txt"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1000);
  const auto s = cmd::preprocess(dir / "a.txt", dir / "c.txt", LengthBounds{20, 40});
  EXPECT_EQ(s.accepted, 1000u);
  EXPECT_EQ(slurp(dir / "c.txt"), a);
  SynthConfig bad = small_synth(10, 1);
  bad.x_max = bad.x_min;
  EXPECT_THROW(cmd::synth(bad, dir / "d.txt"), UsageError);
  EXPECT_FALSE(fs::exists(dir / "d.txt"));
}

TEST(GroundTruthCommand, DeterministicAndIdenticalOnes) {
  TempDir dir;
  cmd::synth(small_synth(30, 4), dir / "data.txt");
  const auto r1 = cmd::ground_truth(dir / "data.txt", MeasureKind::DTW, dir / "g1", 7, 2);
  const auto r2 = cmd::ground_truth(dir / "data.txt", MeasureKind::DTW, dir / "g2", 7, 1);
  EXPECT_EQ(r1.matrix_path.filename(), "gt-dtw.tsim");
  EXPECT_EQ(slurp(r1.matrix_path), slurp(r2.matrix_path));
  EXPECT_EQ(slurp(cmd::gt_info_path(r1.matrix_path)), slurp(cmd::gt_info_path(r2.matrix_path)));
  const cmd::GtInfo info = cmd::load_gt_info(cmd::gt_info_path(r1.matrix_path));
  EXPECT_EQ(info.scale.s, r1.info.scale.s);
  EXPECT_EQ(info.frame.ref_lat_deg, r1.info.frame.ref_lat_deg);

  const std::string line = trajectory_line(25, -8.6, 41.1);
  spit(dir / "same.txt", line + "\n" + line + "\n" + line + "\n");
  const auto r3 = cmd::ground_truth(dir / "same.txt", MeasureKind::DiscreteFrechet, dir / "g3", 0, 1);
  std::ifstream in(r3.matrix_path, std::ios::binary);
  const auto m = read_gt_matrix(in);
  for (float v : m.values) EXPECT_EQ(v, 1.0f);

  spit(dir / "one.txt", line + "\n");
  EXPECT_THROW(cmd::ground_truth(dir / "one.txt", MeasureKind::DTW, dir / "g4", 0), UsageError);
}

TEST(TrainCommand, DeterministicCheckpointAndArtifacts) {
  TempDir dir;
  cmd::synth(small_synth(80, 5), dir / "data.txt");
  cmd::ground_truth(dir / "data.txt", MeasureKind::DTW, dir / "run1" / "nested", 0, 1);
  fs::create_directories(dir / "run2");
  fs::copy(dir / "run1" / "nested", dir / "run2" / "nested", fs::copy_options::recursive);
  spit(dir / "run1.cfg", tiny_run_config(dir / "data.txt", dir / "run1" / "nested"));
  spit(dir / "run2.cfg", tiny_run_config(dir / "data.txt", dir / "run2" / "nested"));
  std::ostringstream log;
  const TrainReport rep = cmd::train(load_run_config(dir / "run1.cfg"), &log);
  cmd::train(load_run_config(dir / "run2.cfg"));
  const fs::path out1 = dir / "run1" / "nested";
  EXPECT_EQ(rep.epochs.size(), 2u);
  EXPECT_EQ(slurp(out1 / "checkpoint.tsck"), slurp(dir / "run2" / "nested" / "checkpoint.tsck"));
  const std::string text = slurp(out1 / "train.log");
  EXPECT_EQ(text.rfind("epoch\tloss\tval_hr10\n", 0), 0u);
  EXPECT_NE(text.find("# best_epoch"), std::string::npos);
  EXPECT_EQ(log.str(), text);
  for (const char* name : {"split-train.txt", "split-val.txt", "split-test.txt"}) EXPECT_TRUE(fs::exists(out1 / name));
  const LoadedModel lm = load_checkpoint(out1 / "checkpoint.tsck");
  EXPECT_EQ(lm.model.config().d, 16u);
  EXPECT_EQ(lm.scale.kind, MeasureKind::DTW);
}

TEST(TrainCommand, MissingGroundTruthIsDataError) {
  TempDir dir;
  cmd::synth(small_synth(40, 6), dir / "data.txt");
  spit(dir / "run.cfg", tiny_run_config(dir / "data.txt", dir / "out"));
  EXPECT_THROW(cmd::train(load_run_config(dir / "run.cfg")), FormatError);
  EXPECT_FALSE(fs::exists(dir / "out" / "checkpoint.tsck"));
}

TEST(Binary, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_cli("", dir.path()).code, 1);
  EXPECT_EQ(run_cli("frobnicate", dir.path()).code, 1);
  EXPECT_EQ(run_cli("--help", dir.path()).code, 0);

  spit(dir / "bad.txt", trajectory_line(25, -8.6, 41.1) + "\nx\t-8.6,41.1 abc,41.2\n");
  const CliResult bad = run_cli("preprocess " + (dir / "bad.txt").string() + " " + (dir / "out.txt").string(), dir.path());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("line 2"), std::string::npos) << bad.output;
  EXPECT_FALSE(fs::exists(dir / "out.txt"));

  EXPECT_EQ(run_cli("synth " + (dir / "s.txt").string() + " --box 0 0 0 0", dir.path()).code, 1);
  EXPECT_EQ(run_cli("gt " + (dir / "missing.txt").string(), dir.path()).code, 2);
  EXPECT_EQ(run_cli("train --config " + (dir / "nope.cfg").string(), dir.path()).code, 1);

  spit(dir / "junk.tsck", "JUNKJUNKJUNK");
  cmd::synth(small_synth(10, 1), dir / "d.txt");
  EXPECT_EQ(run_cli("embed " + (dir / "junk.tsck").string() + " " + (dir / "d.txt").string() + " " +
                        (dir / "e.temb").string(),
                    dir.path())
                .code,
            2);
}

TEST(Binary, EndToEndPipeline) {
  TempDir dir;
  const auto p = [&](const std::string& name) { return (dir / name).string(); };
  ASSERT_EQ(run_cli("synth " + p("data.txt") + " --count 100 --seed 2 --min-len 20 --max-len 40", dir.path()).code, 0);
  ASSERT_EQ(run_cli("synth " + p("test.txt") + " --count 60 --seed 3 --min-len 20 --max-len 40", dir.path()).code, 0);
  spit(dir / "run.cfg", tiny_run_config(dir / "data.txt", dir / "out"));
  ASSERT_EQ(run_cli("gt --config " + p("run.cfg"), dir.path()).code, 0);
  const CliResult tr = run_cli("train --config " + p("run.cfg"), dir.path());
  ASSERT_EQ(tr.code, 0) << tr.output;
  const std::string ckpt = (dir / "out" / "checkpoint.tsck").string();

  ASSERT_EQ(run_cli("embed " + ckpt + " " + p("test.txt") + " " + p("e1.temb"), dir.path()).code, 0);
  ASSERT_EQ(run_cli("embed " + ckpt + " " + p("test.txt") + " " + p("e2.temb"), dir.path()).code, 0);
  const std::string e1 = slurp(dir / "e1.temb");
  EXPECT_EQ(e1, slurp(dir / "e2.temb"));
  EXPECT_EQ(e1.size(), 16u + 4u * 60u * 16u);

  const CliResult oracle = run_cli("eval " + ckpt + " " + p("test.txt") + " --oracle", dir.path());
  ASSERT_EQ(oracle.code, 0) << oracle.output;
  EXPECT_NE(oracle.output.find("HR@10\t1.000000"), std::string::npos);
  EXPECT_NE(oracle.output.find("HR@50\t1.000000"), std::string::npos);
  EXPECT_NE(oracle.output.find("R10@50\t1.000000"), std::string::npos);

  const CliResult masked = run_cli("eval " + ckpt + " " + p("test.txt") + " --mask 0.4 --out " + p("metrics"), dir.path());
  ASSERT_EQ(masked.code, 0) << masked.output;
  EXPECT_EQ(slurp(dir / "metrics" / "metrics.txt"), masked.output);
  EXPECT_EQ(run_cli("eval " + ckpt + " " + p("test.txt") + " --shift 100", dir.path()).code, 0);
}
