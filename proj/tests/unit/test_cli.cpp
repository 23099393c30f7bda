#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "nnkg/cli.hpp"
#include "nnkg/trainer.hpp"
#include "nnkg/util.hpp"
#include "support/tmpdir.hpp"

using namespace nnkg;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult res;
  res.code = run_cli(args, out, err);
  res.out = out.str();
  res.err = err.str();
  return res;
}

// Five entities on a relation chain plus a second relation, with one held-out
// edge per split.
void make_dataset(const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "train.txt",
             "a\tr\tb\n"
             "b\tr\tc\n"
             "c\tr\td\n"
             "d\tr\te\n"
             "a\ts\tc\n"
             "b\ts\td\n");
  write_file(dir / "valid.txt", "a\tr\tc\n");
  write_file(dir / "test.txt", "b\tr\te\n");
}

// Desk-scale training knobs; the CLI exposes the rest through flags.
void make_train_conf(const fs::path& path) {
  write_file(path,
             "train.batch_size = 8\n"
             "train.negatives = 4\n"
             "train.margin = 2\n"
             "train.learning_rate = 0.001\n"
             "train.eval_every = 0\n");
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  const CliResult bad_flag = run({"info", "--no-such-flag"});
  CHECK(bad_flag.code == 1);
  CHECK(bad_flag.err.find("error:") != std::string::npos);
}

TEST_CASE("help prints the subcommands and exits cleanly") {
  const CliResult res = run({"--help"});
  CHECK(res.code == 0);
  CHECK(res.out.find("ingest") != std::string::npos);
  CHECK(res.out.find("generate") != std::string::npos);
  CHECK(res.out.find("rank") != std::string::npos);
}

TEST_CASE("info reports entity, relation, and triple counts") {
  test::TmpDir dir("nnkg-cli-info");
  make_dataset(dir / "data");
  const CliResult res =
      run({"info", "--data", (dir / "data").string(), "--out", (dir / "out").string()});
  CHECK(res.code == 0);
  CHECK(res.out.find("entities=5 relations=2") != std::string::npos);
  CHECK(res.out.find("train_triples=6 valid_triples=1 test_triples=1") !=
        std::string::npos);
  CHECK(res.out.find("train_graph:") != std::string::npos);
  // every command records the fully-resolved configuration
  CHECK(fs::exists(dir / "out" / "config.resolved"));
}

TEST_CASE("missing or unreadable data surfaces as exit code 2") {
  test::TmpDir dir("nnkg-cli-nodata");
  const CliResult missing =
      run({"info", "--data", (dir / "nowhere").string(), "--out", (dir / "o").string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("data error:") != std::string::npos);

  fs::create_directories(dir / "empty");
  CHECK(run({"info", "--data", (dir / "empty").string(), "--out",
             (dir / "o2").string()})
            .code == 2);

  const CliResult noconf = run({"info", "--out", (dir / "o3").string()});
  CHECK(noconf.code == 1);  // data.dir unset is a configuration error
}

TEST_CASE("ingest writes a bundle that info can read back") {
  test::TmpDir dir("nnkg-cli-ingest");
  make_dataset(dir / "data");
  const CliResult res = run({"ingest", "--data", (dir / "data").string(), "--out",
                             (dir / "out").string()});
  CHECK(res.code == 0);
  CHECK(res.out.find("entities=5 relations=2") != std::string::npos);
  const fs::path bundle = dir / "out" / "bundle";
  for (const char* f : {"entities.dict", "relations.dict", "graph.bin", "manifest.json"})
    CHECK(fs::exists(bundle / f));

  const CliResult back =
      run({"info", "--data", bundle.string(), "--out", (dir / "out2").string()});
  CHECK(back.code == 0);
  CHECK(back.out.find("entities=5 relations=2") != std::string::npos);
  CHECK(back.out.find("train_triples=6") != std::string::npos);
}

TEST_CASE("generate is deterministic and self-verifying") {
  test::TmpDir dir("nnkg-cli-gen");
  make_dataset(dir / "data");
  const auto gen = [&](const std::string& out) {
    return run({"generate", "--data", (dir / "data").string(), "--out", out,
                "--structures", "1p,2i", "--count", "5", "--seed", "7",
                "--verify"});
  };
  const CliResult a = gen((dir / "o1").string());
  CHECK(a.code == 0);
  CHECK(a.out.find("(verified)") != std::string::npos);
  const CliResult b = gen((dir / "o2").string());
  CHECK(b.code == 0);

  for (const char* f : {"train-1p.txt", "train-2i.txt"}) {
    const std::string fa = read_file(dir / "o1" / "queries" / f);
    CHECK(fa == read_file(dir / "o2" / "queries" / f));
    CHECK(!fa.empty());
  }
}

TEST_CASE("generate requires a structure list") {
  test::TmpDir dir("nnkg-cli-gen-empty");
  make_dataset(dir / "data");
  const CliResult res = run({"generate", "--data", (dir / "data").string(),
                             "--out", (dir / "o").string()});
  CHECK(res.code == 1);
  CHECK(res.err.find("generate.structures") != std::string::npos);
}

TEST_CASE("config file values lose to explicit flags") {
  test::TmpDir dir("nnkg-cli-prec");
  make_dataset(dir / "data");
  write_file(dir / "gen.conf", "generate.count = 3\ngenerate.structures = 1p\n");
  const CliResult res =
      run({"generate", "--config", (dir / "gen.conf").string(), "--data",
           (dir / "data").string(), "--out", (dir / "o").string(), "--count", "2"});
  CHECK(res.code == 0);
  CHECK(res.out.find("1p: 2 queries") != std::string::npos);
}

TEST_CASE("train, eval, and rank run end to end") {
  test::TmpDir dir("nnkg-cli-train");
  make_dataset(dir / "data");
  make_train_conf(dir / "train.conf");
  REQUIRE(run({"generate", "--data", (dir / "data").string(), "--out",
               (dir / "gen").string(), "--structures", "1p,2p", "--count", "6",
               "--seed", "3"})
              .code == 0);
  const std::string queries = (dir / "gen" / "queries" / "train-1p.txt").string() +
                              "," +
                              (dir / "gen" / "queries" / "train-2p.txt").string();

  const CliResult trained =
      run({"train", "--config", (dir / "train.conf").string(), "--data",
           (dir / "data").string(), "--out", (dir / "run").string(), "--queries",
           queries, "--embed-dim", "16", "--iterations", "3", "--seed", "5"});
  CHECK(trained.code == 0);
  CHECK(trained.out.find("trained to iteration 3") != std::string::npos);
  const fs::path ckpt = dir / "run" / "checkpoints" / "final.nnkg";
  REQUIRE(fs::exists(ckpt));
  const std::string loss_csv = read_file(dir / "run" / "metrics" / "loss.csv");
  CHECK(loss_csv.find("iteration,loss") == 0);
  CHECK(loss_csv.find("\n3,") != std::string::npos);

  const CliResult scored =
      run({"eval", "--checkpoint", ckpt.string(), "--queries", queries, "--split",
           "valid", "--out", (dir / "evalrun").string()});
  CHECK(scored.code == 0);
  CHECK(scored.out.find("structure") != std::string::npos);
  CHECK(fs::exists(dir / "evalrun" / "metrics" / "eval-valid.csv"));
  CHECK(fs::exists(dir / "evalrun" / "metrics" / "eval-valid.txt"));

  const CliResult ranked =
      run({"rank", "--checkpoint", ckpt.string(), "--query", "(p 0 (e 0))",
           "--top", "3", "--out", (dir / "rankrun").string()});
  CHECK(ranked.code == 0);
  CHECK(ranked.out.substr(0, 2) == "1\t");
  CHECK(std::count(ranked.out.begin(), ranked.out.end(), '\n') == 3);

  const CliResult named =
      run({"rank", "--checkpoint", ckpt.string(), "--query", "(p 0 (e 0))",
           "--top", "5", "--data", (dir / "data").string(), "--out",
           (dir / "rankrun2").string()});
  CHECK(named.code == 0);
  CHECK(named.out.find("\ta\t") != std::string::npos);  // names resolved

  // resume accepts the checkpoint as the model authority...
  const CliResult resumed =
      run({"train", "--config", (dir / "train.conf").string(), "--data",
           (dir / "data").string(), "--out", (dir / "resume").string(),
           "--queries", queries, "--resume", ckpt.string(), "--iterations", "5"});
  CHECK(resumed.code == 0);
  CHECK(resumed.out.find("resumed from") != std::string::npos);
  CHECK(resumed.out.find("trained to iteration 5") != std::string::npos);

  // ...but an explicitly conflicting flag is refused
  const CliResult conflict =
      run({"train", "--config", (dir / "train.conf").string(), "--data",
           (dir / "data").string(), "--out", (dir / "conflict").string(),
           "--queries", queries, "--resume", ckpt.string(), "--iterations", "5",
           "--embed-dim", "32"});
  CHECK(conflict.code == 1);
  CHECK(conflict.err.find("embed_dim") != std::string::npos);
}

TEST_CASE("training zero iterations still writes a loadable checkpoint") {
  test::TmpDir dir("nnkg-cli-zero");
  make_dataset(dir / "data");
  make_train_conf(dir / "train.conf");
  REQUIRE(run({"generate", "--data", (dir / "data").string(), "--out",
               (dir / "gen").string(), "--structures", "1p", "--count", "4",
               "--seed", "2"})
              .code == 0);
  const CliResult res =
      run({"train", "--config", (dir / "train.conf").string(), "--data",
           (dir / "data").string(), "--out", (dir / "run").string(), "--queries",
           (dir / "gen" / "queries" / "train-1p.txt").string(), "--embed-dim",
           "16", "--iterations", "0"});
  CHECK(res.code == 0);
  CHECK(res.out.find("trained to iteration 0") != std::string::npos);
  CHECK(read_file(dir / "run" / "metrics" / "loss.csv") == "iteration,loss\n");

  const TrainState state =
      load_checkpoint((dir / "run" / "checkpoints" / "final.nnkg").string());
  CHECK(state.iteration == 0);
  CHECK(state.model->config().embed_dim == 16);
  CHECK(state.model->entity_count() == 5);
  CHECK(state.model->relation_count() == 4);
}

TEST_CASE("eval requires a checkpoint and maps errors to exit codes") {
  test::TmpDir dir("nnkg-cli-evalerr");
  const CliResult none = run({"eval", "--queries", "q.txt", "--out",
                              (dir / "o").string()});
  CHECK(none.code == 1);  // missing checkpoint is a configuration error
  const CliResult gone =
      run({"eval", "--checkpoint", (dir / "missing.nnkg").string(), "--queries",
           "q.txt", "--out", (dir / "o2").string()});
  CHECK(gone.code == 2);  // unreadable checkpoint is a data error
}

TEST_CASE("the NNKG_OUT environment variable supplies the output root") {
  test::TmpDir dir("nnkg-cli-env");
  make_dataset(dir / "data");
  setenv("NNKG_OUT", (dir / "envout").string().c_str(), 1);
  const CliResult res = run({"info", "--data", (dir / "data").string()});
  unsetenv("NNKG_OUT");
  CHECK(res.code == 0);
  CHECK(fs::exists(dir / "envout" / "config.resolved"));
}
