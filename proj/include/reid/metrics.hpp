#pragma once

#include "reid/corpus.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>

namespace reid {

// ---------------------------------------------------------------------------
// Pairwise scoring

// Every pairwise sum runs from the last coordinate down to the first. The
// subspace sweep builds prefix-excised scores by extending these same sums
// one component at a time, which gives bit-identical results to scoring the
// truncated coordinates directly.

struct ScoreMatrix {
  Matrix values;  // probes x gallery entries, higher = more similar
  Measure measure = Measure::cosine;
  bool templated = false;

  std::size_t probes() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t gallery() const { return static_cast<std::size_t>(values.cols()); }
};

namespace detail {

inline double finish_cosine(double dot, double a_sq, double b_sq) {
  if (a_sq == 0.0 || b_sq == 0.0) return 0.0;
  return dot / (std::sqrt(a_sq) * std::sqrt(b_sq));
}

inline Vector reverse_sq_norms(const Matrix& rows) {
  Vector out = Vector::Zero(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index c = rows.cols() - 1; c >= 0; --c) acc += rows(i, c) * rows(i, c);
    out(i) = acc;
  }
  return out;
}

}  // namespace detail

/// Score of a single pair; same arithmetic as one entry of score_matrix.
inline double pair_score(const Eigen::Ref<const Eigen::RowVectorXd>& p, const Eigen::Ref<const Eigen::RowVectorXd>& g,
                         Measure m) {
  double dot = 0.0;
  double p_sq = 0.0;
  double g_sq = 0.0;
  double diff_sq = 0.0;
  for (Eigen::Index c = p.size() - 1; c >= 0; --c) {
    dot += p(c) * g(c);
    p_sq += p(c) * p(c);
    g_sq += g(c) * g(c);
    const double d = p(c) - g(c);
    diff_sq += d * d;
  }
  return m == Measure::negative_euclidean ? -std::sqrt(diff_sq) : detail::finish_cosine(dot, p_sq, g_sq);
}

/// cosine = dot / (|a||b|), zero-norm vectors score 0; negative_euclidean =
/// -|a-b|. Rows may be split across threads without changing any value.
inline ScoreMatrix score_matrix(const Matrix& probes, const Matrix& gallery, Measure measure, bool templated = false,
                                unsigned threads = 1) {
  if (probes.rows() == 0 || gallery.rows() == 0) throw ValidationError("score_matrix needs non-empty probe and gallery sides");
  if (probes.cols() != gallery.cols()) {
    throw ValidationError("dimension mismatch: probes have " + std::to_string(probes.cols()) + ", gallery has " +
                          std::to_string(gallery.cols()));
  }
  const Eigen::Index n = gallery.rows();
  const Eigen::Index d = gallery.cols();
  const Matrix gallery_t = gallery.transpose();  // d x n, contiguous over gallery entries
  const Vector p_sq = detail::reverse_sq_norms(probes);
  const Vector g_sq = detail::reverse_sq_norms(gallery);
  ScoreMatrix out{Matrix(probes.rows(), n), measure, templated};
  parallel_for(static_cast<std::size_t>(probes.rows()), threads, [&](std::size_t b, std::size_t e) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (auto i = static_cast<Eigen::Index>(b); i < static_cast<Eigen::Index>(e); ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (Eigen::Index c = d - 1; c >= 0; --c) {
        const double p = probes(i, c);
        const double* g = gallery_t.row(c).data();
        if (measure == Measure::cosine) {
          for (Eigen::Index j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += p * g[j];
        } else {
          for (Eigen::Index j = 0; j < n; ++j) {
            const double diff = p - g[j];
            acc[static_cast<std::size_t>(j)] += diff * diff;
          }
        }
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        const double a = acc[static_cast<std::size_t>(j)];
        out.values(i, j) = measure == Measure::cosine ? detail::finish_cosine(a, p_sq(i), g_sq(j)) : -std::sqrt(a);
      }
    }
  });
  return out;
}

/// Identity labels of both sides mapped to shared integer codes.
struct PairLabels {
  std::vector<int> probe;
  std::vector<int> gallery;
  std::vector<int> probe_dataset;
  std::vector<int> gallery_dataset;

  static std::vector<int> encode(const std::vector<std::string>& xs, std::unordered_map<std::string, int>& dict) {
    std::vector<int> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(dict.try_emplace(x, static_cast<int>(dict.size())).first->second);
    return out;
  }

  static PairLabels make(const std::vector<std::string>& probe_ids, const std::vector<std::string>& gallery_ids,
                         const std::vector<std::string>* probe_datasets = nullptr,
                         const std::vector<std::string>* gallery_datasets = nullptr) {
    PairLabels l;
    std::unordered_map<std::string, int> ids;
    l.probe = encode(probe_ids, ids);
    l.gallery = encode(gallery_ids, ids);
    if (probe_datasets && gallery_datasets) {
      std::unordered_map<std::string, int> ds;
      l.probe_dataset = encode(*probe_datasets, ds);
      l.gallery_dataset = encode(*gallery_datasets, ds);
    }
    return l;
  }
};

// ---------------------------------------------------------------------------
// Metric kernels

namespace detail {

// Number of elements of sorted a[0..n) strictly below x (branch-free search).
inline std::size_t count_below(const double* a, std::size_t n, double x) {
  if (n == 0) return 0;
  const double* base = a;
  while (n > 1) {
    const std::size_t half = n / 2;
    base = base[half - 1] < x ? base + half : base;
    n -= half;
  }
  return static_cast<std::size_t>(base - a) + (*base < x ? 1 : 0);
}

}  // namespace detail

/// Mann-Whitney estimate of P(genuine > impostor), ties counted one half.
inline double roc_auc(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw ValidationError("roc_auc needs non-empty genuine and impostor scores");
  std::vector<double> g(genuine.begin(), genuine.end());
  std::sort(g.begin(), g.end());
  // twice (#genuine above + half #genuine equal), summed over impostors
  const std::size_t n = g.size();
  std::uint64_t twice = 0;
  for (double s : impostor) {
    const std::size_t lo = detail::count_below(g.data(), n, s);
    std::size_t hi = lo;
    while (hi < n && g[hi] == s) ++hi;
    twice += 2 * static_cast<std::uint64_t>(n - hi) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(g.size()) * static_cast<double>(impostor.size()));
}

struct TarAtFar {
  double far_target = 0.0;
  double tar = 0.0;
  double threshold = 0.0;
  double realized_far = 0.0;
};

/// Order-statistic threshold: the m-th largest impostor (0-based), with
/// m = floor(far_target * |impostor|). Scores strictly above it are accepted,
/// so the realized FAR never exceeds the target.
inline TarAtFar tar_at_far(std::span<const double> genuine, std::span<const double> impostor, double far_target) {
  if (genuine.empty() || impostor.empty()) throw ValidationError("tar_at_far needs non-empty genuine and impostor scores");
  if (!(far_target > 0.0 && far_target < 1.0)) throw ValidationError("far target must lie in (0, 1)");
  const auto m = static_cast<std::size_t>(std::floor(far_target * static_cast<double>(impostor.size())));
  TarAtFar out;
  out.far_target = far_target;
  if (m >= impostor.size()) {
    out.threshold = -std::numeric_limits<double>::infinity();
  } else {
    std::vector<double> im(impostor.begin(), impostor.end());
    std::nth_element(im.begin(), im.begin() + static_cast<std::ptrdiff_t>(m), im.end(), std::greater<>());
    out.threshold = im[m];
  }
  const auto above = [&](std::span<const double> xs) {
    return static_cast<double>(std::count_if(xs.begin(), xs.end(), [&](double s) { return s > out.threshold; }));
  };
  out.tar = above(genuine) / static_cast<double>(genuine.size());
  out.realized_far = above(impostor) / static_cast<double>(impostor.size());
  return out;
}

namespace detail {

// 1-based rank of gallery entry c in a score row: entries scoring higher, or
// equal with a lower index, come first. Entries with skip[j] set are ignored.
inline std::size_t rank_of(const double* row, std::size_t n, std::size_t c, const std::vector<char>* skip = nullptr) {
  const double s = row[c];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < n; ++j) {
    if (skip && (*skip)[j]) continue;
    if (row[j] > s || (row[j] == s && j < c)) ++rank;
  }
  return rank;
}

// Rank of the best-placed correct entry; 0 if the probe has none.
inline std::size_t first_correct_rank(const double* row, int probe, const std::vector<int>& gallery) {
  std::size_t best = gallery.size();
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    if (gallery[j] == probe && (best == gallery.size() || row[j] > row[best])) best = j;
  }
  return best == gallery.size() ? 0 : rank_of(row, gallery.size(), best);
}

inline const double* row_ptr(const ScoreMatrix& s, std::size_t i) {
  return s.values.row(static_cast<Eigen::Index>(i)).data();
}

}  // namespace detail

struct CmcPoint {
  std::size_t k = 0;
  double accuracy = 0.0;
};

struct CmcResult {
  std::vector<CmcPoint> points;
  std::size_t included = 0;
  std::size_t excluded = 0;  // probes whose identity is absent from the gallery

  double at(std::size_t k) const {
    for (const auto& p : points) {
      if (p.k == k) return p.accuracy;
    }
    throw ValidationError("CMC was not computed at k=" + std::to_string(k));
  }
};

/// Fraction of probes whose identity is among the k best-scoring gallery
/// entries; k beyond the gallery size is clamped. Probes with no correct
/// entry are excluded and counted.
inline CmcResult cmc(const ScoreMatrix& scores, const PairLabels& labels, const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw ValidationError("cmc needs at least one k");
  if (labels.probe.size() != scores.probes() || labels.gallery.size() != scores.gallery()) {
    throw ValidationError("cmc: id lists do not match the score matrix shape");
  }
  CmcResult out;
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < labels.probe.size(); ++i) {
    const std::size_t r = detail::first_correct_rank(detail::row_ptr(scores, i), labels.probe[i], labels.gallery);
    if (r > 0) {
      ranks.push_back(r);
    } else {
      ++out.excluded;
    }
  }
  out.included = ranks.size();
  if (ranks.empty()) throw ValidationError("cmc: no probe identity is present in the gallery");
  for (std::size_t k : ks) {
    if (k == 0) throw ValidationError("cmc: k must be positive");
    const std::size_t kk = std::min(k, labels.gallery.size());
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [kk](std::size_t r) { return r <= kk; });
    out.points.push_back({k, static_cast<double>(hits) / static_cast<double>(ranks.size())});
  }
  return out;
}

inline CmcResult cmc(const ScoreMatrix& scores, const std::vector<std::string>& probe_ids,
                     const std::vector<std::string>& gallery_ids, const std::vector<std::size_t>& ks) {
  return cmc(scores, PairLabels::make(probe_ids, gallery_ids), ks);
}

struct MapResult {
  double map = 0.0;
  std::size_t included = 0;
};

/// Mean over probes with at least one correct entry of average precision.
/// When dataset codes are present, gallery entries sharing both identity and
/// dataset tag with the probe are ignored (junk), as with same-camera rules.
inline MapResult mean_average_precision(const ScoreMatrix& scores, const PairLabels& labels, bool exclude_same_dataset) {
  if (labels.probe.size() != scores.probes() || labels.gallery.size() != scores.gallery()) {
    throw ValidationError("mean_average_precision: id lists do not match the score matrix shape");
  }
  if (exclude_same_dataset && labels.probe_dataset.empty()) {
    throw ValidationError("mean_average_precision: dataset exclusion needs dataset tags");
  }
  const std::size_t n = labels.gallery.size();
  double sum = 0.0;
  std::size_t used = 0;
  std::vector<char> skip(n, 0);
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < labels.probe.size(); ++i) {
    const double* row = detail::row_ptr(scores, i);
    bool any_skip = false;
    if (exclude_same_dataset) {
      for (std::size_t j = 0; j < n; ++j) {
        skip[j] = labels.gallery[j] == labels.probe[i] && labels.gallery_dataset[j] == labels.probe_dataset[i];
        any_skip = any_skip || skip[j];
      }
    }
    ranks.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (labels.gallery[j] != labels.probe[i] || (any_skip && skip[j])) continue;
      ranks.push_back(detail::rank_of(row, n, j, any_skip ? &skip : nullptr));
    }
    if (ranks.empty()) continue;
    std::sort(ranks.begin(), ranks.end());
    double ap = 0.0;
    for (std::size_t h = 0; h < ranks.size(); ++h) ap += static_cast<double>(h + 1) / static_cast<double>(ranks[h]);
    sum += ap / static_cast<double>(ranks.size());
    ++used;
  }
  if (used == 0) throw ValidationError("mean_average_precision: no probe has any gallery match");
  return {sum / static_cast<double>(used), used};
}

inline MapResult mean_average_precision(const ScoreMatrix& scores, const std::vector<std::string>& probe_ids,
                                        const std::vector<std::string>& gallery_ids) {
  return mean_average_precision(scores, PairLabels::make(probe_ids, gallery_ids), false);
}

// ---------------------------------------------------------------------------
// Composite evaluation

struct EvalOptions {
  Measure measure = Measure::cosine;
  bool templated = false;
  std::vector<std::size_t> ks{1, 20};
  std::vector<double> far_targets{1e-3};
  unsigned threads = 1;
  bool exclude_same_dataset = false;
};

struct EvalReport {
  double auc = 0.0;
  double map = 0.0;
  std::vector<CmcPoint> cmc;
  std::vector<TarAtFar> tar_at_far;
  Measure measure = Measure::cosine;
  bool templated = false;
  std::optional<std::string> subspace_descriptor;
  std::size_t probe_count = 0;
  std::size_t gallery_count = 0;
  std::size_t excluded_probes = 0;
  std::size_t genuine_pairs = 0;
  std::size_t impostor_pairs = 0;

  double rank(std::size_t k) const {
    for (const auto& p : cmc) {
      if (p.k == k) return p.accuracy;
    }
    throw ValidationError("report has no CMC point at k=" + std::to_string(k));
  }
  double tar(double far_target) const {
    for (const auto& t : tar_at_far) {
      if (t.far_target == far_target) return t.tar;
    }
    throw ValidationError("report has no TAR at FAR=" + std::to_string(far_target));
  }
};

/// Genuine (same identity) and impostor scores in row-major order.
inline void split_pairs(const ScoreMatrix& scores, const PairLabels& labels, std::vector<double>& genuine,
                        std::vector<double>& impostor) {
  genuine.clear();
  impostor.clear();
  for (std::size_t i = 0; i < labels.probe.size(); ++i) {
    const double* row = detail::row_ptr(scores, i);
    for (std::size_t j = 0; j < labels.gallery.size(); ++j) {
      (labels.probe[i] == labels.gallery[j] ? genuine : impostor).push_back(row[j]);
    }
  }
}

inline EvalReport evaluate_scores(const ScoreMatrix& scores, const PairLabels& labels, const EvalOptions& opt) {
  for (double f : opt.far_targets) {
    if (!(f > 0.0 && f < 1.0)) throw ValidationError("far target must lie in (0, 1)");
  }
  EvalReport r;
  r.measure = scores.measure;
  r.templated = scores.templated;
  r.probe_count = scores.probes();
  r.gallery_count = scores.gallery();

  std::vector<double> genuine;
  std::vector<double> impostor;
  split_pairs(scores, labels, genuine, impostor);
  r.genuine_pairs = genuine.size();
  r.impostor_pairs = impostor.size();
  r.auc = roc_auc(genuine, impostor);
  for (double f : opt.far_targets) r.tar_at_far.push_back(tar_at_far(genuine, impostor, f));

  auto c = cmc(scores, labels, opt.ks);
  r.cmc = std::move(c.points);
  r.excluded_probes = c.excluded;
  r.map = mean_average_precision(scores, labels, opt.exclude_same_dataset).map;
  return r;
}

inline PairLabels pair_labels(const LabeledSet& probes, const LabeledSet& gallery) {
  return PairLabels::make(probes.ids, gallery.ids, &probes.datasets, &gallery.datasets);
}

inline EvalReport evaluate(const LabeledSet& probes, const LabeledSet& gallery, const EvalOptions& opt) {
  const auto scores = score_matrix(probes.rows, gallery.rows, opt.measure, opt.templated, opt.threads);
  return evaluate_scores(scores, pair_labels(probes, gallery), opt);
}

// ---------------------------------------------------------------------------
// Serialization

/// Shortest round-trip decimal; stable across runs.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  std::array<char, 40> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["auc"] = r.auc;
  j["map"] = r.map;
  auto cmc = nlohmann::ordered_json::array();
  for (const auto& p : r.cmc) cmc.push_back({{"k", p.k}, {"accuracy", p.accuracy}});
  j["cmc"] = cmc;
  auto tars = nlohmann::ordered_json::array();
  for (const auto& t : r.tar_at_far) {
    nlohmann::ordered_json e;
    e["far_target"] = t.far_target;
    e["tar"] = t.tar;
    e["threshold"] = std::isinf(t.threshold) ? nlohmann::ordered_json("-inf") : nlohmann::ordered_json(t.threshold);
    e["realized_far"] = t.realized_far;
    tars.push_back(e);
  }
  j["tar_at_far"] = tars;
  j["measure"] = std::string(to_string(r.measure));
  j["templated"] = r.templated;
  j["subspace"] = r.subspace_descriptor ? nlohmann::ordered_json(*r.subspace_descriptor) : nlohmann::ordered_json();
  j["probe_count"] = r.probe_count;
  j["gallery_count"] = r.gallery_count;
  j["excluded_probes"] = r.excluded_probes;
  j["genuine_pairs"] = r.genuine_pairs;
  j["impostor_pairs"] = r.impostor_pairs;
  return j;
}

/// One row per metric: `metric,value`.
inline std::string to_csv(const EvalReport& r) {
  std::string out = "metric,value\n";
  out += "auc," + format_double(r.auc) + "\n";
  out += "map," + format_double(r.map) + "\n";
  for (const auto& p : r.cmc) out += "rank_" + std::to_string(p.k) + "," + format_double(p.accuracy) + "\n";
  for (const auto& t : r.tar_at_far) out += "tar_at_far_" + format_double(t.far_target) + "," + format_double(t.tar) + "\n";
  return out;
}

}  // namespace reid
