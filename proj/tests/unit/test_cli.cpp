#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dxlm/cli/cli.hpp"
#include "dxlm/harness/train.hpp"

using namespace dxlm;

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Scratch directory with a small corpus and a config that trains in seconds.
struct Workspace {
  fs::path dir;
  std::string config;

  explicit Workspace(const std::string& name) {
    dir = fs::temp_directory_path() / ("dxlm_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string text;
    for (int i = 0; i < 300; ++i) text += "the quick brown fox jumps over the lazy dog. ";
    std::ofstream(dir / "corpus.txt") << text;
    config = (dir / "run.cfg").string();
    std::ofstream(config) << "# tiny run\n"
                          << "n_layers=2\nd_model=16\nn_heads=2\nkernels=3,5\n"
                          << "ffn_mult=2\nfusion_mult=2\nmax_seq_len=16\nseq_len=16\n"
                          << "batch_schedule=4\ntotal_steps=6\neval_every=3\n"
                          << "eval_batches=2\neval_batch_size=4\n"
                          << "corpus=" << (dir / "corpus.txt").string() << "\n"
                          << "out_dir=" << dir.string() << "\nrun_name=tiny\n";
  }
};

}  // namespace

TEST(Cli, NoSubcommandIsConfigError) {
  const auto r = run({});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  for (const char* sub : {"train", "eval", "gradcheck", "ablate", "decode"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, MissingConfigIsConfigError) {
  EXPECT_EQ(run({"train"}).code, cli::kExitConfig);
  EXPECT_EQ(run({"train", "-c", "/nonexistent/x.cfg"}).code, cli::kExitConfig);
}

TEST(Cli, UnknownKeyListsValidKeys) {
  Workspace w("unknown");
  const auto r = run({"train", "-c", w.config, "learning_rate=1"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("unknown key 'learning_rate'"), std::string::npos) << r.err;
  for (const auto& key : harness::config_keys()) {
    EXPECT_NE(r.err.find(key), std::string::npos) << key;
  }
}

TEST(Cli, BadValueIsConfigError) {
  Workspace w("badvalue");
  EXPECT_EQ(run({"train", "-c", w.config, "total_steps=many"}).code, cli::kExitConfig);
  EXPECT_EQ(run({"train", "-c", w.config, "seq_len=64"}).code, cli::kExitConfig);
}

TEST(Cli, EffectiveConfigIsPrintedFirst) {
  Workspace w("echo");
  const auto r = run({"train", "-c", w.config, "seed=5"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out.rfind("# effective config\n", 0), 0u);
  EXPECT_NE(r.out.find("\nseed=5\n"), std::string::npos);
  EXPECT_NE(r.out.find("\nd_model=16\n"), std::string::npos);
  // Defaults not in the file are materialized too.
  EXPECT_NE(r.out.find("\nadam_beta1="), std::string::npos);
}

TEST(Cli, TrainEvalDecode) {
  Workspace w("pipeline");
  const auto t = run({"train", "-c", w.config});
  ASSERT_EQ(t.code, cli::kExitOk) << t.err;
  EXPECT_TRUE(fs::exists(w.dir / "tiny.ndjson"));
  EXPECT_TRUE(fs::exists(w.dir / "tiny.csv"));
  EXPECT_TRUE(fs::exists(w.dir / "tiny.ckpt"));
  EXPECT_EQ(harness::read_ndjson((w.dir / "tiny.ndjson").string()).size(), 8u);

  const auto e = run({"eval", "-c", w.config});
  ASSERT_EQ(e.code, cli::kExitOk) << e.err;
  EXPECT_NE(e.out.find("bits_per_byte: "), std::string::npos);
  EXPECT_NE(e.out.find("step: 6"), std::string::npos);

  const auto d = run({"decode", "-c", w.config, "--prompt", "the quick", "--tokens", "5"});
  ASSERT_EQ(d.code, cli::kExitOk) << d.err;
  EXPECT_NE(d.out.find("accept_rate: "), std::string::npos);
  EXPECT_TRUE(fs::exists(w.dir / "tiny.decode.ndjson"));
}

TEST(Cli, EvalWithoutCheckpointIsConfigError) {
  Workspace w("nockpt");
  const auto r = run({"eval", "-c", w.config});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  Workspace w("gradcheck");
  const auto r = run({"gradcheck", "-c", w.config, "--seq-len", "4", "--batch", "1"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("max over modules:"), std::string::npos);
  EXPECT_NE(r.out.find("ldrscm.alpha"), std::string::npos);
}

TEST(Cli, AblateResidualGridWritesThreeFiles) {
  Workspace w("ablate");
  const auto r = run({"ablate", "-c", w.config, "--grid", "residual", "total_steps=2"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::size_t ndjson = 0;
  for (const auto& entry : fs::directory_iterator(w.dir)) {
    if (entry.path().extension() == ".ndjson") ++ndjson;
  }
  EXPECT_EQ(ndjson, 3u);
  EXPECT_NE(r.out.find("summary: "), std::string::npos);
}

TEST(Cli, UnknownGridAxisIsConfigError) {
  Workspace w("badgrid");
  EXPECT_EQ(run({"ablate", "-c", w.config, "--grid", "depth"}).code, cli::kExitConfig);
}

TEST(Cli, DivergenceIsNumericFailure) {
  Workspace w("diverge");
  const auto r = run({"train", "-c", w.config, "schedule=manual", "warmup_steps=0",
                      "constant_steps=6", "decay_steps=0", "tail_steps=0", "peak_lr=1e30",
                      "weight_decay=0"});
  EXPECT_EQ(r.code, cli::kExitNumeric) << r.out << r.err;
  EXPECT_NE(r.err.find("numeric failure"), std::string::npos);
  EXPECT_TRUE(fs::exists(w.dir / "tiny.ckpt.last_good"));
}
