#include "support.hpp"

#include <gtest/gtest.h>

using namespace reid;

namespace {

EmbeddingCorpus labeled_corpus(std::size_t ids, std::size_t per_id) {
  std::vector<RecordMeta> meta;
  FloatRows x(static_cast<Eigen::Index>(ids * per_id), 2);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < ids; ++i) {
    for (std::size_t k = 0; k < per_id; ++k) {
      RecordMeta m;
      m.identity_id = "id" + std::to_string(i);
      m.image_id = m.identity_id + "/" + std::to_string(k);
      m.role = k % 2 ? Role::probe : Role::gallery;
      m.dataset = i % 3 ? "A" : "B";
      m.attributes["g"] = i % 2 ? "m" : "f";
      meta.push_back(m);
      x(r, 0) = static_cast<float>(i);
      x(r, 1) = static_cast<float>(k);
      ++r;
    }
  }
  return EmbeddingCorpus(meta, x);
}

double binomial_band(double p, std::size_t n) { return 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(n)); }

}  // namespace

TEST(Split, CountsAndDisjoint) {
  const auto c = labeled_corpus(4, 2);
  const auto s = identity_split(c, "g", 0.5, 1);
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
  for (const auto& t : s.train) EXPECT_EQ(std::count(s.test.begin(), s.test.end(), t), 0);
}

TEST(Split, DeterministicAndSeedSensitive) {
  const auto c = labeled_corpus(40, 2);
  EXPECT_EQ(identity_split(c, "g", 0.5, 7).train, identity_split(c, "g", 0.5, 7).train);
  EXPECT_NE(identity_split(c, "g", 0.5, 7).train, identity_split(c, "g", 0.5, 8).train);
}

TEST(Split, CeilingAndCoverage) {
  const auto c = labeled_corpus(7, 3);
  const auto s = identity_split(c, "g", 0.3, 3);
  EXPECT_EQ(s.train.size(), 3u);  // ceil(2.1)
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 7u);
}

TEST(Split, Errors) {
  const auto c = labeled_corpus(4, 2);
  EXPECT_THROW(identity_split(c, "nope", 0.5, 1), ValidationError);
  EXPECT_THROW(identity_split(c, "g", 0.0, 1), ValidationError);
  EXPECT_THROW(identity_split(c, "g", 1.0, 1), ValidationError);
  EXPECT_THROW(identity_split(labeled_corpus(1, 3), "g", 0.5, 1), ValidationError);
}

TEST(Split, EveryImageFollowsItsIdentity) {
  SynthConfig cfg;
  cfg.dimension = 16;
  cfg.identity_dim = 4;
  cfg.nuisance_dim = 2;
  cfg.identities = 30;
  cfg.attributes = {{"gender", 2, 1.0, false}};
  const auto out = generate(cfg);
  const auto run = run_attribute_probe(out.corpus, "gender", 0.5, 5);
  const std::set<std::string> train(run.split.train.begin(), run.split.train.end());
  const std::set<std::string> test(run.split.test.begin(), run.split.test.end());
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  for (const auto& m : out.corpus.meta()) {
    const bool a = train.count(m.identity_id) > 0;
    const bool b = test.count(m.identity_id) > 0;
    EXPECT_NE(a, b);
    n_train += a;
    n_test += b;
  }
  EXPECT_EQ(run.report.train_size, n_train);
  EXPECT_EQ(run.report.test_size, n_test);
}

TEST(Train, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  for (int t = 0; t < 10; ++t) {
    const Matrix x = testing_support::random_matrix(gen, 20, 5);
    std::vector<int> y(20);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>((i * 7 + static_cast<std::size_t>(t)) % 3);
    const Matrix w = testing_support::random_matrix(gen, 3, 5, 0.5);
    const Vector b = testing_support::random_matrix(gen, 3, 1, 0.5);
    Matrix gw;
    Vector gb;
    probe_objective(x, y, w, b, 0.1, &gw, &gb);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        Matrix wp = w;
        Matrix wm = w;
        wp(i, j) += h;
        wm(i, j) -= h;
        const double fd = (probe_objective(x, y, wp, b, 0.1) - probe_objective(x, y, wm, b, 0.1)) / (2 * h);
        EXPECT_LE(std::abs(fd - gw(i, j)), 1e-5 * std::max(1.0, std::abs(fd)));
      }
      Vector bp = b;
      Vector bm = b;
      bp(i) += h;
      bm(i) -= h;
      const double fd = (probe_objective(x, y, w, bp, 0.1) - probe_objective(x, y, w, bm, 0.1)) / (2 * h);
      EXPECT_LE(std::abs(fd - gb(i)), 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Train, SeparableBlobs) {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> nd(0.0, 0.3);
  Matrix x(100, 2);
  std::vector<std::string> y;
  for (Eigen::Index i = 0; i < 100; ++i) {
    const double side = i < 50 ? -1.5 : 1.5;
    x(i, 0) = side + std::clamp(nd(gen), -0.9, 0.9);
    x(i, 1) = nd(gen) * 3;
    y.push_back(i < 50 ? "neg" : "pos");
  }
  const auto m = train_probe(x, y);
  const auto r = eval_probe(m, x, y);
  EXPECT_EQ(r.accuracy, 1.0);
  // recompute held-out from the raw parameters
  const auto pred = predict(m, x);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += m.classes[static_cast<std::size_t>(pred[i])] == y[i];
  EXPECT_EQ(ok, y.size());
  ASSERT_TRUE(r.auc.has_value());
  EXPECT_EQ(*r.auc, 1.0);
}

TEST(Train, ConstantFeaturesPredictMajority) {
  const Matrix x = Matrix::Constant(10, 3, 2.0);
  std::vector<std::string> y{"a", "a", "a", "a", "a", "a", "a", "b", "b", "b"};
  const auto m = train_probe(x, y);
  const auto r = eval_probe(m, x, y);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.7);
  for (int p : predict(m, x)) EXPECT_EQ(p, 0);
}

TEST(Train, LossNonIncreasingBelowStepBound) {
  SynthConfig cfg;
  cfg.dimension = 32;
  cfg.identity_dim = 8;
  cfg.nuisance_dim = 3;
  cfg.identities = 40;
  cfg.attributes = {{"yaw", 3, 0.5, true}};
  const auto out = generate(cfg);
  Matrix x = out.corpus.vectors().cast<double>();
  std::vector<std::string> y;
  for (const auto& m : out.corpus.meta()) y.push_back(m.attributes.at("yaw"));
  ProbeConfig pc;
  pc.max_epochs = 200;
  // probe_lipschitz_bound on the standardized features gives the safe step
  const Matrix xs = (x.rowwise() - x.colwise().mean()).array().rowwise() /
                    ((x.rowwise() - x.colwise().mean()).colwise().squaredNorm() / static_cast<double>(x.rows())).array().sqrt();
  pc.learning_rate = 1.0 / probe_lipschitz_bound(xs, pc.l2);
  const auto m = train_probe(x, y, pc);
  for (std::size_t e = 1; e < m.loss_history.size(); ++e) EXPECT_LE(m.loss_history[e], m.loss_history[e - 1]);
}

TEST(Train, PermutedLabelsAreChance) {
  SynthConfig cfg;
  cfg.dimension = 32;
  cfg.identity_dim = 8;
  cfg.nuisance_dim = 3;
  cfg.identities = 200;
  cfg.gallery_per_identity = 4;
  cfg.probe_per_identity = 1;
  cfg.attributes = {{"gender", 2, 2.0, false}};
  const auto out = generate(cfg);
  std::vector<std::string> labels;
  for (const auto& m : out.corpus.meta()) labels.push_back(m.attributes.at("gender"));
  Rng rng(99);
  rng.shuffle(labels);
  const Matrix x = out.corpus.vectors().cast<double>();
  const auto half = x.rows() / 2;
  const auto m = train_probe(x.topRows(half), {labels.begin(), labels.begin() + half});
  const auto r = eval_probe(m, x.bottomRows(x.rows() - half), {labels.begin() + half, labels.end()});
  EXPECT_NEAR(r.accuracy, 0.5, binomial_band(0.5, static_cast<std::size_t>(x.rows() - half)));
}

TEST(Train, Errors) {
  EXPECT_THROW(train_probe(Matrix::Zero(3, 2), {"a", "a", "a"}), ValidationError);
  EXPECT_THROW(train_probe(Matrix::Zero(3, 2), {"a", "b"}), ValidationError);
  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_probe(bad, {"a", "b"}), ValidationError);
}

TEST(Eval, AlwaysClassA) {
  const Matrix x = Matrix::Constant(6, 2, 1.0);
  const auto m = train_probe(x, {"A", "A", "A", "A", "A", "B"});
  EXPECT_EQ(eval_probe(m, x.topRows(3), {"A", "A", "A"}).accuracy, 1.0);
  EXPECT_THROW(eval_probe(m, x.topRows(1), {"C"}), ValidationError);
  EXPECT_THROW(eval_probe(m, Matrix::Zero(1, 3), {"A"}), ValidationError);
}

TEST(Eval, AccuracyMatchesBruteForce) {
  std::mt19937_64 gen(6);
  const Matrix x = testing_support::random_matrix(gen, 100, 4);
  std::vector<std::string> y;
  for (Eigen::Index i = 0; i < 100; ++i) y.push_back(x(i, 0) + 0.5 * x(i, 1) > 0.2 ? "u" : (x(i, 2) > 0 ? "v" : "w"));
  const auto m = train_probe(x, y);
  const auto r = eval_probe(m, x, y);
  const Matrix z = ((x.rowwise() - m.feature_mean.transpose()).array().rowwise() / m.feature_scale.transpose().array())
                       .matrix() *
                   m.weights.transpose();
  std::size_t ok = 0;
  std::map<std::string, std::pair<int, int>> per;
  for (Eigen::Index i = 0; i < 100; ++i) {
    Eigen::Index arg = 0;
    (z.row(i) + m.bias.transpose()).maxCoeff(&arg);
    const bool hit = m.classes[static_cast<std::size_t>(arg)] == y[static_cast<std::size_t>(i)];
    ok += hit;
    per[y[static_cast<std::size_t>(i)]].first += hit;
    per[y[static_cast<std::size_t>(i)]].second += 1;
  }
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(ok) / 100.0);
  for (const auto& [label, acc] : r.per_class) {
    EXPECT_DOUBLE_EQ(acc, static_cast<double>(per[label].first) / per[label].second);
  }
  EXPECT_FALSE(r.auc.has_value());
}

TEST(Probe, DatasetPseudoAttributeAndDeterminism) {
  SynthConfig a;
  a.dimension = 24;
  a.identity_dim = 6;
  a.nuisance_dim = 2;
  a.identities = 30;
  a.dataset = "alpha";
  a.dataset_offset_norm = 3.0;
  SynthConfig b = a;
  b.dataset = "beta";
  b.seed = 2;
  SynthConfig c = a;
  c.dataset = "gamma";
  c.seed = 3;
  const auto ca = generate(a).corpus;
  const auto cb = generate(b).corpus;
  const auto cc = generate(c).corpus;
  const auto merged = concat({&ca, &cb, &cc});
  const auto r1 = run_attribute_probe(merged, "dataset", 0.5, 11);
  const auto r2 = run_attribute_probe(merged, "dataset", 0.5, 11);
  EXPECT_EQ(r1.model.classes, (std::vector<std::string>{"alpha", "beta", "gamma"}));
  EXPECT_EQ(to_json(r1.report).dump(), to_json(r2.report).dump());
  EXPECT_TRUE(r1.model.weights == r2.model.weights);
  EXPECT_GE(r1.report.accuracy, 0.95);
}

TEST(Probe, ModelPersistence) {
  testing_support::TempDir dir("probe");
  const Matrix x = Matrix::Identity(4, 3);
  const auto m = train_probe(x, {"a", "b", "a", "b"});
  write_probe_model(m, dir / "m.emb");
  const auto w = read_emb1_matrix(dir / "m.emb");
  EXPECT_EQ(w.rows(), 2);
  EXPECT_EQ(w.cols(), 3);
  const auto side = nlohmann::json::parse(testing_support::slurp(dir / "m.emb.json"));
  EXPECT_EQ(side["classes"], nlohmann::json({"a", "b"}));
  EXPECT_EQ(side["config"]["max_epochs"], 500);
}
