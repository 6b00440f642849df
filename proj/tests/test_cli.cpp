#include "support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

using namespace reid;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const std::string& args, const TempDir& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(REID_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const auto r = run("synth --out " + (*dir_ / "data").string() +
                           " --dimension 48 --identities 30 --id-dim 8 --nuis-dim 3 --gallery-per-id 4 --probe-per-id 2"
                           " --attribute gender:2:1.5 --seed 4",
                       *dir_);
    ASSERT_EQ(r.code, 0) << r.err;
    corpus_ = (*dir_ / "data" / "corpus.emb").string();
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static TempDir* dir_;
  static std::string corpus_;
};

TempDir* Cli::dir_ = nullptr;
std::string Cli::corpus_;

}  // namespace

TEST_F(Cli, EvalWritesFourMetricFamilies) {
  TempDir d("eval");
  const auto r = run("eval --corpus " + corpus_ + " --out " + (d / "o").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1);
  const auto j = nlohmann::json::parse(slurp(d / "o" / "report.json"));
  for (const char* k : {"auc", "map", "cmc", "tar_at_far"}) EXPECT_TRUE(j["report"].contains(k)) << k;
  EXPECT_EQ(j["config"]["eval"]["measure"], "cosine");
  EXPECT_EQ(j["config"]["eval"]["templated"], false);
  EXPECT_EQ(j["config"]["eval"]["ks"], nlohmann::json({1, 20}));
}

TEST_F(Cli, SelectThenEvalMatchesInProcess) {
  TempDir d("sel");
  ASSERT_EQ(run("select --corpus " + corpus_ + " --out " + (d / "s").string(), d).code, 0);
  const auto r = run("eval --corpus " + corpus_ + " --selection " + (d / "s" / "selection.json").string() + " --out " +
                         (d / "e").string(),
                     d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto corpus = load_corpus(corpus_, FileFormat::bin);
  const auto sel = select_subspace(GalleryView(corpus), {});
  const auto want = to_json(apply_selection(sel, corpus, {}));
  const auto got = nlohmann::ordered_json::parse(slurp(d / "e" / "report.json"));
  EXPECT_EQ(got["report"].dump(), want.dump());
  const auto sj = nlohmann::json::parse(slurp(d / "s" / "selection.json"));
  EXPECT_EQ(sj["selection"]["k_star"], sel.k_star);
}

TEST_F(Cli, SelectionRejectsOtherCorpus) {
  TempDir d("selx");
  ASSERT_EQ(run("synth --out " + (d / "other").string() + " --dimension 48 --identities 30 --id-dim 8 --nuis-dim 3 --seed 5", d).code, 0);
  ASSERT_EQ(run("select --corpus " + corpus_ + " --out " + (d / "s").string(), d).code, 0);
  const auto r = run("eval --corpus " + (d / "other" / "corpus.emb").string() + " --selection " +
                         (d / "s" / "selection.json").string() + " --out " + (d / "e").string(),
                     d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("does not match"), std::string::npos);
}

TEST_F(Cli, SweepCsvShape) {
  TempDir d("sweep");
  const auto r = run("oracle-sweep --corpus " + corpus_ + " --far 0.01 --far 0.1 --out " + (d / "o").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(d / "o" / "sweep.csv");
  EXPECT_EQ(csv.rfind("k,rank1,map,tar_far_0.01,tar_far_0.1,auc\n0,", 0), 0u);
  const auto j = nlohmann::json::parse(slurp(d / "o" / "sweep.json"));
  EXPECT_EQ(j["rows"].size(), j["config"]["rank"].get<std::size_t>());
  EXPECT_TRUE(std::filesystem::exists(d / "o" / "basis.emb.json"));
}

TEST_F(Cli, PcaEvalAndProbe) {
  TempDir d("misc");
  auto r = run("pca-eval --corpus " + corpus_ + " --fit-on templates --measure euclidean --out " + (d / "p").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(d / "p" / "report.json"));
  EXPECT_EQ(j["config"]["fit_on"], "templates");
  EXPECT_EQ(j["report"]["measure"], "negative_euclidean");
  r = run("probe --corpus " + corpus_ + " --attribute gender --out " + (d / "q").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pj = nlohmann::json::parse(slurp(d / "q" / "probe.json"));
  EXPECT_GE(pj["report"]["accuracy"].get<double>(), 0.9);
  EXPECT_TRUE(std::filesystem::exists(d / "q" / "probe_model.emb.json"));
}

TEST_F(Cli, AuxGallery) {
  TempDir d("aux");
  ASSERT_EQ(run("synth --out " + (d / "aux").string() + " --dimension 48 --identities 20 --id-dim 8 --nuis-dim 3 --dataset other --seed 9", d).code, 0);
  const std::string aux = (d / "aux" / "corpus.emb").string();
  auto r = run("select --corpus " + corpus_ + " --aux-gallery " + aux + " --out " + (d / "s").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  r = run("eval --corpus " + corpus_ + " --selection " + (d / "s" / "selection.json").string() + " --out " + (d / "e").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(d / "s" / "report.json"))["report"]["map"],
            nlohmann::json::parse(slurp(d / "e" / "report.json"))["report"]["map"]);
  r = run("pca-eval --corpus " + corpus_ + " --aux-gallery " + aux + " --out " + (d / "p").string(), d);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(d / "p" / "report.json"))["config"]["aux_gallery"], aux);
}

TEST_F(Cli, ExitCodesAndDistinctMessages) {
  TempDir d("codes");
  const std::string o = " --out " + (d / "x").string();
  std::set<std::string> messages;
  for (const std::string& args :
       {"eval --corpus " + corpus_ + " --fit-on images" + o, "eval --corpus " + corpus_ + " --aux-gallery " + corpus_ + o,
        "eval --corpus " + corpus_ + " --leave-one-out" + o, "eval --corpus " + corpus_ + " --far 1.5" + o,
        "eval --corpus " + corpus_ + " --ks 1,x" + o, "oracle-sweep --corpus " + corpus_ + " --no-templated" + o,
        "select --corpus " + corpus_ + " --no-templated" + o, "probe --corpus " + corpus_ + " --attribute nope" + o,
        "synth --attribute bad" + o}) {
    const auto r = run(args, d);
    EXPECT_EQ(r.code, 2) << args << "\n" << r.err;
    EXPECT_FALSE(r.err.empty());
    EXPECT_TRUE(messages.insert(r.err).second) << "duplicate message: " << r.err;
  }
  EXPECT_EQ(run("eval --corpus " + (d / "missing.emb").string() + o, d).code, 1);
  EXPECT_EQ(run("eval" + o, d).code, 2);
  EXPECT_EQ(run("frobnicate", d).code, 2);
  EXPECT_EQ(run("eval --corpus " + corpus_ + " --measure manhattan" + o, d).code, 2);
}

TEST_F(Cli, HelpListsFlags) {
  TempDir d("help");
  for (const auto& [cmd, flags] : std::vector<std::pair<std::string, std::vector<std::string>>>{
           {"eval", {"--measure", "--templated", "--far", "--ks", "--selection", "--threads", "--out"}},
           {"pca-eval", {"--fit-on", "--aux-gallery"}},
           {"select", {"--leave-one-out", "--aux-gallery"}},
           {"probe", {"--attribute", "--fraction", "--seed", "--lr", "--l2", "--epochs", "--tol"}},
           {"synth", {"--dimension", "--attribute", "--noise-var", "--dataset-offset"}}}) {
    const auto r = run(cmd + " --help", d);
    EXPECT_EQ(r.code, 0);
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
  }
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  TempDir d("det");
  const std::vector<std::string> commands{"eval --corpus " + corpus_, "pca-eval --corpus " + corpus_,
                                          "oracle-sweep --corpus " + corpus_, "select --corpus " + corpus_,
                                          "probe --corpus " + corpus_ + " --attribute gender --seed 3",
                                          "synth --identities 10 --dimension 16 --id-dim 4 --nuis-dim 2 --seed 8"};
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const auto a = d / ("a" + std::to_string(i));
    const auto b = d / ("b" + std::to_string(i));
    ASSERT_EQ(run(commands[i] + " --out " + a.string() + (i < 4 ? " --threads 1" : ""), d).code, 0) << commands[i];
    ASSERT_EQ(run(commands[i] + " --out " + b.string() + (i < 4 ? " --threads 4" : ""), d).code, 0) << commands[i];
    for (const auto& f : std::filesystem::directory_iterator(a)) {
      EXPECT_EQ(slurp(f.path()), slurp(b / f.path().filename())) << commands[i] << " " << f.path().filename();
    }
  }
}
