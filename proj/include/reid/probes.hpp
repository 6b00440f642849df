#pragma once

// Linear read-out of non-identity attributes: identity-disjoint splits and a
// multinomial logistic-regression probe trained by full-batch gradient descent.

#include "reid/io.hpp"
#include "reid/metrics.hpp"
#include "reid/synth.hpp"

#include <set>

namespace reid {

struct ProbeSplit {
  std::string attribute;
  std::uint64_t seed = 0;
  double fraction = 0.5;
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Shuffles the identities that carry `attribute` with a seeded generator and
/// puts the first ceil(fraction * n) on the training side.
inline ProbeSplit identity_split(const EmbeddingCorpus& corpus, const std::string& attribute, double fraction,
                                 std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split fraction must lie in (0, 1)");
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& m : corpus.meta()) {
    if (m.attribute(attribute) && seen.insert(m.identity_id).second) ids.push_back(m.identity_id);
  }
  if (ids.empty()) throw ValidationError("attribute '" + attribute + "' is not labeled on any record");
  if (ids.size() < 2) throw ValidationError("attribute '" + attribute + "' is labeled for fewer than 2 identities");
  Rng rng(seed);
  rng.shuffle(ids);
  auto n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  ProbeSplit split;
  split.attribute = attribute;
  split.seed = seed;
  split.fraction = fraction;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return split;
}

struct ProbeConfig {
  double learning_rate = 0.1;
  std::size_t max_epochs = 500;
  double l2 = 1e-4;
  double tolerance = 1e-6;
};

struct ProbeModel {
  std::vector<std::string> classes;  // sorted
  Matrix weights;                    // classes x d, on standardized features
  Vector bias;
  Vector feature_mean;
  Vector feature_scale;
  ProbeConfig config;
  std::vector<double> loss_history;  // objective before each update
  std::size_t epochs_run = 0;

  Matrix standardize(const Matrix& x) const {
    Matrix z = x.rowwise() - feature_mean.transpose();
    return z.array().rowwise() / feature_scale.transpose().array();
  }
  Matrix logits(const Matrix& x) const {
    Matrix z = standardize(x) * weights.transpose();
    z.rowwise() += bias.transpose();
    return z;
  }
};

/// Mean cross-entropy plus (l2/2)|W|^2 (bias unpenalized) on already
/// standardized features; fills the gradient when asked.
inline double probe_objective(const Matrix& x, const std::vector<int>& y, const Matrix& w, const Vector& b, double l2,
                              Matrix* grad_w = nullptr, Vector* grad_b = nullptr) {
  const auto n = x.rows();
  Matrix z = x * w.transpose();
  z.rowwise() += b.transpose();
  double loss = 0.0;
  Matrix resid(n, w.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double top = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - top).exp();
    const double denom = e.sum();
    loss += std::log(denom) + top - z(i, y[static_cast<std::size_t>(i)]);
    resid.row(i) = e / denom;
    resid(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  }
  loss = loss / static_cast<double>(n) + 0.5 * l2 * w.squaredNorm();
  if (grad_w) *grad_w = resid.transpose() * x / static_cast<double>(n) + l2 * w;
  if (grad_b) *grad_b = resid.colwise().sum().transpose() / static_cast<double>(n);
  return loss;
}

/// Upper bound on the Lipschitz constant of the objective's gradient:
/// softmax curvature is at most 1/2, times mean |[x, 1]|^2, plus l2.
inline double probe_lipschitz_bound(const Matrix& standardized, double l2) {
  return 0.5 * (standardized.rowwise().squaredNorm().mean() + 1.0) + l2;
}

namespace detail {

inline std::vector<int> encode_labels(const std::vector<std::string>& labels, const std::vector<std::string>& classes) {
  std::vector<int> y;
  y.reserve(labels.size());
  for (const auto& l : labels) {
    auto it = std::lower_bound(classes.begin(), classes.end(), l);
    if (it == classes.end() || *it != l) throw ValidationError("label '" + l + "' is not one of the model's classes");
    y.push_back(static_cast<int>(it - classes.begin()));
  }
  return y;
}

}  // namespace detail

/// Multinomial logistic regression from zero initialization. Features are
/// standardized with the training statistics (zero-variance features keep
/// scale 1). Stops at max_epochs or once the gradient's max-norm < tolerance.
inline ProbeModel train_probe(const Matrix& x, const std::vector<std::string>& labels, const ProbeConfig& cfg = {}) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ValidationError("train_probe: vector and label counts differ");
  if (x.rows() == 0) throw ValidationError("train_probe: no training vectors");
  if (!x.allFinite()) throw ValidationError("train_probe: non-finite input");
  if (!(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0)) throw ValidationError("train_probe: bad learning rate or l2");

  ProbeModel m;
  m.config = cfg;
  m.classes = labels;
  std::sort(m.classes.begin(), m.classes.end());
  m.classes.erase(std::unique(m.classes.begin(), m.classes.end()), m.classes.end());
  if (m.classes.size() < 2) throw ValidationError("train_probe: need at least 2 classes, got " + std::to_string(m.classes.size()));
  const auto y = detail::encode_labels(labels, m.classes);

  const auto n = static_cast<double>(x.rows());
  m.feature_mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - m.feature_mean.transpose();
  m.feature_scale = (centered.colwise().squaredNorm() / n).array().sqrt().transpose();
  for (Eigen::Index j = 0; j < m.feature_scale.size(); ++j) {
    if (!(m.feature_scale(j) > 0.0)) m.feature_scale(j) = 1.0;
  }
  const Matrix xs = m.standardize(x);

  const auto c = static_cast<Eigen::Index>(m.classes.size());
  m.weights = Matrix::Zero(c, x.cols());
  m.bias = Vector::Zero(c);
  Matrix gw;
  Vector gb;
  for (m.epochs_run = 0; m.epochs_run < cfg.max_epochs; ++m.epochs_run) {
    m.loss_history.push_back(probe_objective(xs, y, m.weights, m.bias, cfg.l2, &gw, &gb));
    const double gnorm = std::max(gw.cwiseAbs().maxCoeff(), gb.cwiseAbs().maxCoeff());
    if (gnorm < cfg.tolerance) break;
    m.weights -= cfg.learning_rate * gw;
    m.bias -= cfg.learning_rate * gb;
  }
  if (!m.weights.allFinite() || !m.bias.allFinite()) throw ValidationError("train_probe diverged; lower the learning rate");
  return m;
}

struct ProbeReport {
  double accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_class;  // classes present in the test labels
  std::optional<double> auc;                               // binary models only
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

inline std::vector<int> predict(const ProbeModel& model, const Matrix& x) {
  const Matrix z = model.logits(x);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    z.row(i).maxCoeff(&arg);  // first maximum wins
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

/// Argmax accuracy, per-class accuracy, and for binary models the AUC of the
/// positive-class log-odds (second class in sorted order is positive).
inline ProbeReport eval_probe(const ProbeModel& model, const Matrix& x, const std::vector<std::string>& labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ValidationError("eval_probe: vector and label counts differ");
  if (x.rows() == 0) throw ValidationError("eval_probe: no test vectors");
  if (static_cast<std::size_t>(x.cols()) != static_cast<std::size_t>(model.weights.cols())) {
    throw ValidationError("eval_probe: dimension mismatch");
  }
  const auto y = detail::encode_labels(labels, model.classes);
  const auto pred = predict(model, x);
  ProbeReport r;
  r.test_size = labels.size();
  std::vector<std::size_t> hit(model.classes.size(), 0);
  std::vector<std::size_t> total(model.classes.size(), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ++total[static_cast<std::size_t>(y[i])];
    if (pred[i] == y[i]) {
      ++correct;
      ++hit[static_cast<std::size_t>(y[i])];
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(y.size());
  for (std::size_t c = 0; c < model.classes.size(); ++c) {
    if (total[c] > 0) r.per_class.emplace_back(model.classes[c], static_cast<double>(hit[c]) / static_cast<double>(total[c]));
  }
  if (model.classes.size() == 2 && total[0] > 0 && total[1] > 0) {
    const Matrix z = model.logits(x);
    std::vector<double> pos;
    std::vector<double> neg;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      (y[i] == 1 ? pos : neg).push_back(z(ii, 1) - z(ii, 0));
    }
    r.auc = roc_auc(pos, neg);
  }
  return r;
}

namespace detail {

inline void gather(const EmbeddingCorpus& corpus, const std::string& attribute, const std::set<std::string>& ids, Matrix& x,
                   std::vector<std::string>& labels) {
  std::vector<std::size_t> rows;
  labels.clear();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& m = corpus.meta(i);
    auto v = m.attribute(attribute);
    if (!v || !ids.count(m.identity_id)) continue;
    rows.push_back(i);
    labels.push_back(*v);
  }
  x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(corpus.dimension()));
  for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = corpus.vector(rows[r]).cast<double>();
}

}  // namespace detail

struct ProbeRun {
  ProbeSplit split;
  ProbeModel model;
  ProbeReport report;
};

/// Split, train, evaluate. attribute "dataset" reads the record's dataset tag.
inline ProbeRun run_attribute_probe(const EmbeddingCorpus& corpus, const std::string& attribute, double fraction,
                                    std::uint64_t seed, const ProbeConfig& cfg = {}) {
  ProbeRun run;
  run.split = identity_split(corpus, attribute, fraction, seed);
  Matrix x_train;
  Matrix x_test;
  std::vector<std::string> y_train;
  std::vector<std::string> y_test;
  detail::gather(corpus, attribute, {run.split.train.begin(), run.split.train.end()}, x_train, y_train);
  detail::gather(corpus, attribute, {run.split.test.begin(), run.split.test.end()}, x_test, y_test);
  run.model = train_probe(x_train, y_train, cfg);
  run.report = eval_probe(run.model, x_test, y_test);
  run.report.train_size = y_train.size();
  return run;
}

inline nlohmann::ordered_json to_json(const ProbeReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [label, acc] : r.per_class) per[label] = acc;
  j["per_class_accuracy"] = per;
  j["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json();
  j["train_size"] = r.train_size;
  j["test_size"] = r.test_size;
  return j;
}

inline nlohmann::ordered_json to_json(const ProbeConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs}, {"l2", c.l2}, {"tolerance", c.tolerance}};
}

/// EMB1 rows = class weight vectors; `<path>.json` holds bias, classes,
/// standardization and training configuration.
inline void write_probe_model(const ProbeModel& m, const std::filesystem::path& path) {
  write_emb1_matrix(path, m.weights.cast<float>());
  nlohmann::ordered_json j;
  j["classes"] = m.classes;
  j["bias"] = std::vector<double>(m.bias.data(), m.bias.data() + m.bias.size());
  j["feature_mean"] = std::vector<double>(m.feature_mean.data(), m.feature_mean.data() + m.feature_mean.size());
  j["feature_scale"] = std::vector<double>(m.feature_scale.data(), m.feature_scale.data() + m.feature_scale.size());
  j["config"] = to_json(m.config);
  j["epochs_run"] = m.epochs_run;
  auto out = detail::open_out(path.string() + ".json");
  out << j.dump(2) << '\n';
}

}  // namespace reid
