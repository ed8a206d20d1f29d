#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "samcnn/synth.hpp"
#include "samcnn/treceval.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args) {
  const fs::path out_file = fs::temp_directory_path() / "samcnn_cli_out.txt";
  const std::string cmd = std::string(SAMCNN_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = status == -1 ? -1 : WEXITSTATUS(status);
  result.out = slurp(out_file);
  fs::remove(out_file);
  return result;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& contents) {
  std::ofstream out(p, std::ios::binary);
  out << contents;
}

}  // namespace

TEST_CASE("cli: evaluate reproduces the oracle AP of the bundled fixture") {
  TempDir dir("samcnn_cli_fixture");
  // fixture: two queries with known rankings
  write_file(dir.path / "fix.qrels",
             "301 0 da 1\n301 0 dc 1\n301 0 dz 1\n302 0 k2 2\n302 0 k9 0\n");
  write_file(dir.path / "fix.run",
             "301 Q0 da 1 5.0 fix\n301 Q0 db 2 4.0 fix\n301 Q0 dc 3 3.0 fix\n"
             "302 Q0 k9 1 2.0 fix\n302 Q0 k2 2 1.0 fix\n");

  // independent oracle values for the fixture
  const double ap301 =
      oracle::average_precision({"da", "db", "dc"}, {"da", "dc", "dz"});
  const double ap302 = oracle::average_precision({"k9", "k2"}, {"k2"});
  const double mean_ap = (ap301 + ap302) / 2.0;
  CHECK(ap301 == doctest::Approx((1.0 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
  CHECK(ap302 == doctest::Approx(0.5).epsilon(1e-12));

  auto result = run_cli("evaluate --run " + (dir.path / "fix.run").string() +
                        " --qrels " + (dir.path / "fix.qrels").string());
  REQUIRE(result.exit_code == 0);
  char expect[64];
  std::snprintf(expect, sizeof(expect), "mean over 2 queries\tAP %.4f", mean_ap);
  CHECK(result.out.find(expect) != std::string::npos);
}

TEST_CASE("cli: sigtest of a run against itself gives p = 1") {
  TempDir dir("samcnn_cli_sig");
  write_file(dir.path / "fix.qrels", "1 0 a 1\n1 0 b 0\n2 0 a 1\n");
  write_file(dir.path / "fix.run",
             "1 Q0 a 1 2.0 t\n1 Q0 b 2 1.0 t\n2 Q0 a 1 1.0 t\n");
  auto result = run_cli("sigtest --run-a " + (dir.path / "fix.run").string() +
                        " --run-b " + (dir.path / "fix.run").string() + " --qrels " +
                        (dir.path / "fix.qrels").string() + " --iterations 0");
  REQUIRE(result.exit_code == 0);
  CHECK(result.out.find("AP\t") != std::string::npos);
  std::size_t count = 0;
  std::size_t pos = 0;
  while ((pos = result.out.find("p=1", pos)) != std::string::npos) {
    ++count;
    pos += 3;
  }
  CHECK(count == 2);  // AP and P30 lines
}

TEST_CASE("cli: full pipeline on a synthetic corpus") {
  TempDir dir("samcnn_cli_pipeline");
  samcnn::SynthSpec spec;
  spec.vocab_size = 50;
  spec.n_queries = 8;
  spec.candidates_per_query = 30;
  spec.emb_dim = 8;
  auto files = samcnn::generate_synthetic(spec, (dir.path / "raw").string());

  const std::string bundle = (dir.path / "bundle").string();
  auto prep = run_cli("prepare --corpus " + files.corpus + " --topics " + files.topics +
                      " --run " + files.run + " --qrels " + files.qrels + " --years " +
                      files.years + " --embeddings " + files.embeddings +
                      " --dim 8 --seed 5 --out " + bundle);
  REQUIRE(prep.exit_code == 0);
  CHECK(fs::exists(dir.path / "bundle" / "manifest.txt"));

  write_file(dir.path / "config.txt",
             "variant = qatt\nfilters = 6\nwindow = 2\nemb_dim = 8\nhidden = 8\n"
             "final_hidden = 4\ndropout = 0.0\nlr = 0.05\nbatch_size = 32\n"
             "max_epochs = 3\npatience = 3\nseed = 11\nval_fraction = 0.2\n"
             "balanced_batches = 1\n");
  auto train = run_cli("train --bundle " + bundle + " --config " +
                       (dir.path / "config.txt").string() + " --fold 2014 --out " +
                       (dir.path / "model").string());
  REQUIRE(train.exit_code == 0);
  const std::string ckpt = (dir.path / "model" / "fold_2014.ckpt").string();
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(dir.path / "model" / "fold_2014_epochs.tsv"));

  const std::string run_path = (dir.path / "neural.run").string();
  auto rerank = run_cli("rerank --bundle " + bundle + " --checkpoint " + ckpt +
                        " --year 2014 --alpha 0.7 --out " + run_path);
  REQUIRE(rerank.exit_code == 0);

  // rerank output passes run-file validation and is reproducible
  auto parsed = samcnn::parse_run(run_path);
  CHECK(parsed.by_qid.size() == 2);  // 8 queries over 4 years
  const std::string bytes_first = slurp(run_path);
  auto rerank2 = run_cli("rerank --bundle " + bundle + " --checkpoint " + ckpt +
                         " --year 2014 --alpha 0.7 --out " + run_path);
  REQUIRE(rerank2.exit_code == 0);
  CHECK(slurp(run_path) == bytes_first);

  // manifest gate: matching checkpoint passes, tampered manifest fails, --force overrides
  auto eval_ok = run_cli("evaluate --run " + run_path + " --qrels " + files.qrels +
                         " --checkpoint " + ckpt);
  CHECK(eval_ok.exit_code == 0);

  std::string manifest = slurp(run_path + ".manifest");
  const auto pos = manifest.find("config_hash = ");
  REQUIRE(pos != std::string::npos);
  manifest[pos + 14] = manifest[pos + 14] == '0' ? '1' : '0';
  write_file(run_path + ".manifest", manifest);
  auto eval_bad = run_cli("evaluate --run " + run_path + " --qrels " + files.qrels +
                          " --checkpoint " + ckpt);
  CHECK(eval_bad.exit_code == 4);
  auto eval_forced = run_cli("evaluate --run " + run_path + " --qrels " + files.qrels +
                             " --checkpoint " + ckpt + " --force");
  CHECK(eval_forced.exit_code == 0);

  // export-hidden emits header + one row per candidate of the year
  auto exp = run_cli("export-hidden --bundle " + bundle + " --checkpoint " + ckpt +
                     " --year 2014 --out " + (dir.path / "hidden.tsv").string());
  REQUIRE(exp.exit_code == 0);
  std::istringstream hidden(slurp(dir.path / "hidden.tsv"));
  std::string line;
  int rows = -1;  // header discounted
  while (std::getline(hidden, line)) ++rows;
  CHECK(rows == 2 * 30);

  // bench reports both directions and the batch size
  auto bench = run_cli("bench --bundle " + bundle + " --checkpoint " + ckpt +
                       " --batch-size 300 --batches 1");
  REQUIRE(bench.exit_code == 0);
  CHECK(bench.out.find("batch size\t300") != std::string::npos);
  auto rate_after = [&](const std::string& label) {
    const auto pos = bench.out.find(label);
    REQUIRE(pos != std::string::npos);
    return std::stod(bench.out.substr(pos + label.size()));
  };
  const double fwd = rate_after("forward-only\t");
  const double both = rate_after("forward+backward\t");
  CHECK(fwd >= both);

  // SAMCNN_SEED is a seed fallback for subcommands that need one
  write_file(dir.path / "config_noseed.txt",
             "variant = bicnn\nfilters = 4\nwindow = 2\nemb_dim = 8\nhidden = 6\n"
             "final_hidden = 3\ndropout = 0.0\nmax_epochs = 1\n");
  const std::string train_args = "train --bundle " + bundle + " --config " +
                                 (dir.path / "config_noseed.txt").string() +
                                 " --fold 2014 --out " + (dir.path / "m2").string();
  auto noseed = run_cli(train_args);
  CHECK(noseed.exit_code == 2);
  const std::string env_cmd = "SAMCNN_SEED=5 " + std::string(SAMCNN_CLI_PATH) + " " +
                              train_args + " > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(env_cmd.c_str())) == 0);
  CHECK(fs::exists(dir.path / "m2" / "fold_2014.ckpt"));
}

TEST_CASE("cli: exit codes for usage, format, and runtime errors") {
  auto usage = run_cli("rerank --no-such-flag");
  CHECK(usage.exit_code == 2);

  auto missing = run_cli("evaluate --run /nonexistent.run --qrels /nonexistent.qrels");
  CHECK(missing.exit_code == 3);

  TempDir dir("samcnn_cli_badfmt");
  write_file(dir.path / "bad.run", "1 Q0 a 1 2.0 t\n1 Q0 b 3 1.0 t\n");
  write_file(dir.path / "fix.qrels", "1 0 a 1\n");
  auto badrun = run_cli("evaluate --run " + (dir.path / "bad.run").string() +
                        " --qrels " + (dir.path / "fix.qrels").string());
  CHECK(badrun.exit_code == 3);
  CHECK(badrun.out.find("contiguity") != std::string::npos);
}

TEST_CASE("cli: convert-topics handles <query> and <title> blocks") {
  TempDir dir("samcnn_cli_topics");
  write_file(dir.path / "topics.trec",
             "<top>\n<num> Number: MB001 </num>\n<query> Evernote IPO </query>\n"
             "</top>\n<top>\n<num> Number: MB077 </num>\n<title> oscars snub </title>\n"
             "</top>\n");
  auto conv = run_cli("convert-topics --in " + (dir.path / "topics.trec").string() +
                      " --out " + (dir.path / "topics.tsv").string());
  REQUIRE(conv.exit_code == 0);
  CHECK(slurp(dir.path / "topics.tsv") == "1\tEvernote IPO\n77\toscars snub\n");

  auto keep = run_cli("convert-topics --keep-qid --in " +
                      (dir.path / "topics.trec").string() + " --out " +
                      (dir.path / "topics.tsv").string());
  REQUIRE(keep.exit_code == 0);
  CHECK(slurp(dir.path / "topics.tsv") == "MB001\tEvernote IPO\nMB077\toscars snub\n");
}
