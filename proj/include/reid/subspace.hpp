#pragma once

// Principal-component subspace selection for retrieval.
//
// pca_eval      gallery and probes projected onto the full gallery PCA basis.
// oracle_sweep  fit PCA on identity templates, then for every k drop the k
//               highest-variance components and score probes against
//               templates (uses probe labels, so it is an upper bound).
// select_subspace / apply_selection
//               choose k from the gallery alone, by rank-1 of gallery images
//               against their templates, then score probes in that subspace.

#include "reid/metrics.hpp"
#include "reid/pca.hpp"

namespace reid {

enum class FitOn { gallery_images, templates };

inline std::string_view to_string(FitOn f) { return f == FitOn::templates ? "templates" : "images"; }

inline FitOn parse_fit_on(std::string_view s) {
  if (s == "images" || s == "gallery_images") return FitOn::gallery_images;
  if (s == "templates") return FitOn::templates;
  throw ValidationError("unknown fit source '" + std::string(s) + "'");
}

inline PcaBasis fit_gallery_basis(const GalleryView& gallery, FitOn fit_on) {
  if (fit_on == FitOn::templates) return fit_pca(build_templates(gallery).vectors);
  return fit_pca(gallery.images().rows);
}

/// Evaluates probes against templates (templated) or gallery images.
inline EvalReport evaluate_corpus(const EmbeddingCorpus& corpus, const EvalOptions& opt) {
  const GalleryView gallery(corpus);
  const LabeledSet probes = probe_set(corpus);
  if (probes.size() == 0) throw ValidationError("corpus has no probe records");
  auto report = opt.templated ? evaluate(probes, build_templates(gallery).as_labeled(), opt)
                              : evaluate(probes, gallery.images(), opt);
  report.subspace_descriptor = "raw";
  return report;
}

struct PcaEvalOptions {
  EvalOptions eval;
  FitOn fit_on = FitOn::gallery_images;
  std::optional<PcaBasis> basis;  // e.g. fit on an auxiliary combined gallery
};

inline EvalReport pca_eval(const EmbeddingCorpus& corpus, const PcaEvalOptions& opt) {
  const GalleryView gallery(corpus);
  LabeledSet probes = probe_set(corpus);
  if (probes.size() == 0) throw ValidationError("corpus has no probe records");
  const PcaBasis basis = opt.basis ? *opt.basis : fit_gallery_basis(gallery, opt.fit_on);
  LabeledSet side = opt.eval.templated ? build_templates(gallery).as_labeled() : gallery.images();
  side.rows = project(basis, side.rows).coordinates;
  probes.rows = project(basis, probes.rows).coordinates;
  auto report = evaluate(probes, side, opt.eval);
  report.subspace_descriptor = "pca-full";
  return report;
}

namespace detail {

// Scores of every (probe, gallery) pair restricted to components {k..r-1},
// produced for k = r-1 down to 0 by adding one component at a time. Sums run
// from the last coordinate down, as in score_matrix, so each stage matches
// scoring the truncated coordinates directly, bit for bit.
class PrefixScorer {
 public:
  PrefixScorer(const Matrix& probes, const Matrix& gallery, Measure measure, unsigned threads = 1)
      : probes_(probes), gallery_t_(gallery.transpose()), measure_(measure), threads_(threads), k_(probes.cols()) {
    pair_ = Matrix::Zero(probes.rows(), gallery.rows());
    probe_sq_ = Vector::Zero(probes.rows());
    gallery_sq_ = Vector::Zero(gallery.rows());
  }

  // Adds the next (lower-index) component. Returns the k now represented.
  Eigen::Index extend() {
    --k_;
    const Eigen::Index c = k_;
    parallel_for(static_cast<std::size_t>(probes_.rows()), threads_, [&](std::size_t b, std::size_t e) {
      for (auto i = static_cast<Eigen::Index>(b); i < static_cast<Eigen::Index>(e); ++i) {
        const double p = probes_(i, c);
        probe_sq_(i) += p * p;
        const double* g = gallery_t_.row(c).data();
        double* acc = pair_.row(i).data();
        const Eigen::Index n = gallery_t_.cols();
        if (measure_ == Measure::cosine) {
          for (Eigen::Index j = 0; j < n; ++j) acc[j] += p * g[j];
        } else {
          for (Eigen::Index j = 0; j < n; ++j) {
            const double d = p - g[j];
            acc[j] += d * d;
          }
        }
      }
    });
    for (Eigen::Index j = 0; j < gallery_t_.cols(); ++j) gallery_sq_(j) += gallery_t_(c, j) * gallery_t_(c, j);
    return k_;
  }

  double score(Eigen::Index i, Eigen::Index j) const {
    if (measure_ == Measure::negative_euclidean) return -std::sqrt(pair_(i, j));
    if (probe_sq_(i) == 0.0 || gallery_sq_(j) == 0.0) return 0.0;
    return pair_(i, j) / (std::sqrt(probe_sq_(i)) * std::sqrt(gallery_sq_(j)));
  }

  ScoreMatrix scores(bool templated) const {
    ScoreMatrix s{Matrix(probes_.rows(), gallery_t_.cols()), measure_, templated};
    for (Eigen::Index i = 0; i < probes_.rows(); ++i) {
      for (Eigen::Index j = 0; j < gallery_t_.cols(); ++j) s.values(i, j) = score(i, j);
    }
    return s;
  }

 private:
  const Matrix& probes_;
  Matrix gallery_t_;  // components x gallery entries
  Measure measure_;
  unsigned threads_;
  Eigen::Index k_;
  Matrix pair_;  // dot products (cosine) or squared differences (euclidean)
  Vector probe_sq_;
  Vector gallery_sq_;
};

}  // namespace detail

struct SweepRow {
  std::size_t k = 0;
  double rank1 = 0.0;
  double map = 0.0;
  std::vector<TarAtFar> tar_at_far;
  double auc = 0.0;  // reported, but known to degrade as components are excised
};

struct SweepResult {
  std::vector<SweepRow> rows;  // k = 0 .. r-1
  PcaBasis basis;
  Measure measure = Measure::cosine;
  bool templated = true;
  std::vector<double> far_targets;
};

struct SweepOptions {
  EvalOptions eval{Measure::cosine, true};
  std::optional<PcaBasis> basis;
};

inline SweepResult oracle_sweep(const EmbeddingCorpus& corpus, const SweepOptions& opt) {
  const GalleryView gallery(corpus);
  const TemplateGallery templates = build_templates(gallery);
  if (templates.size() < 3) {
    throw ValidationError("oracle_sweep needs at least 3 gallery identities, got " + std::to_string(templates.size()));
  }
  LabeledSet probes = probe_set(corpus);
  if (probes.size() == 0) throw ValidationError("corpus has no probe records");

  SweepResult out;
  out.basis = opt.basis ? *opt.basis : fit_pca(templates.vectors);
  out.measure = opt.eval.measure;
  out.templated = true;
  out.far_targets = opt.eval.far_targets;

  LabeledSet side = templates.as_labeled();
  side.rows = project(out.basis, side.rows).coordinates;
  probes.rows = project(out.basis, probes.rows).coordinates;

  EvalOptions eval = opt.eval;
  eval.templated = true;
  eval.ks = {1};

  const auto r = static_cast<Eigen::Index>(out.basis.rank());
  out.rows.resize(static_cast<std::size_t>(r));
  const PairLabels labels = pair_labels(probes, side);
  detail::PrefixScorer scorer(probes.rows, side.rows, eval.measure, eval.threads);
  while (true) {
    const Eigen::Index k = scorer.extend();
    const auto rep = evaluate_scores(scorer.scores(true), labels, eval);
    out.rows[static_cast<std::size_t>(k)] = {static_cast<std::size_t>(k), rep.rank(1), rep.map, rep.tar_at_far, rep.auc};
    if (k == 0) break;
  }
  return out;
}

inline std::string sweep_csv(const SweepResult& s) {
  std::string out = "k,rank1,map";
  for (double f : s.far_targets) out += ",tar_far_" + format_double(f);
  out += ",auc\n";
  for (const auto& row : s.rows) {
    out += std::to_string(row.k) + "," + format_double(row.rank1) + "," + format_double(row.map);
    for (const auto& t : row.tar_at_far) out += "," + format_double(t.tar);
    out += "," + format_double(row.auc) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gallery-only selection

struct SelectOptions {
  Measure measure = Measure::cosine;
  bool leave_one_out = false;
  unsigned threads = 1;
  std::optional<PcaBasis> basis;
};

struct SubspaceSelection {
  std::size_t k_star = 0;
  std::vector<std::size_t> retained;
  std::vector<double> self_rank1;  // indexed by k
  std::string rule;
  bool degenerate = false;
  Measure measure = Measure::cosine;
  bool leave_one_out = false;
  std::string gallery_fingerprint;
  PcaBasis basis;
};

namespace detail {

// Rank-1 of each gallery image against the templates, for every prefix
// excision k. With leave_one_out, an image's own template is recomputed
// without it; images of single-image identities are then skipped.
inline std::vector<double> self_rank1_curve(const Matrix& images, const std::vector<std::size_t>& owner,
                                            const Matrix& templates, const std::vector<std::size_t>& counts,
                                            Measure measure, bool leave_one_out, unsigned threads) {
  const auto n_img = images.rows();
  const auto n_tpl = templates.rows();
  const auto r = templates.cols();

  Matrix own;  // per-image own-template coordinates (leave-one-out only)
  std::vector<char> used(static_cast<std::size_t>(n_img), 1);
  if (leave_one_out) {
    own = Matrix::Zero(n_img, r);
    for (Eigen::Index i = 0; i < n_img; ++i) {
      const std::size_t t = owner[static_cast<std::size_t>(i)];
      const auto cnt = static_cast<double>(counts[t]);
      if (counts[t] < 2) {
        used[static_cast<std::size_t>(i)] = 0;
        continue;
      }
      own.row(i) = (cnt * templates.row(static_cast<Eigen::Index>(t)) - images.row(i)) / (cnt - 1.0);
    }
  }
  const auto n_used = std::count(used.begin(), used.end(), 1);
  if (n_used == 0) return {};

  PrefixScorer scorer(images, templates, measure, threads);
  Vector own_pair = Vector::Zero(n_img);
  Vector own_sq = Vector::Zero(n_img);
  Vector img_sq = Vector::Zero(n_img);
  std::vector<double> curve(static_cast<std::size_t>(r));
  while (true) {
    const Eigen::Index k = scorer.extend();
    if (leave_one_out) {
      for (Eigen::Index i = 0; i < n_img; ++i) {
        const double p = images(i, k);
        const double g = own(i, k);
        if (measure == Measure::cosine) {
          own_pair(i) += p * g;
        } else {
          own_pair(i) += (p - g) * (p - g);
        }
        own_sq(i) += g * g;
        img_sq(i) += p * p;
      }
    }
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < n_img; ++i) {
      if (!used[static_cast<std::size_t>(i)]) continue;
      const auto t = static_cast<Eigen::Index>(owner[static_cast<std::size_t>(i)]);
      double correct = scorer.score(i, t);
      if (leave_one_out) {
        const double probe_sq = img_sq(i);
        if (measure == Measure::negative_euclidean) {
          correct = -std::sqrt(own_pair(i));
        } else {
          correct = (probe_sq == 0.0 || own_sq(i) == 0.0) ? 0.0 : own_pair(i) / (std::sqrt(probe_sq) * std::sqrt(own_sq(i)));
        }
      }
      bool top = true;
      for (Eigen::Index j = 0; j < n_tpl && top; ++j) {
        if (j == t) continue;
        const double s = scorer.score(i, j);
        if (s > correct || (s == correct && j < t)) top = false;
      }
      if (top) ++hits;
    }
    curve[static_cast<std::size_t>(k)] = static_cast<double>(hits) / static_cast<double>(n_used);
    if (k == 0) break;
  }
  return curve;
}

}  // namespace detail

/// Picks the number of leading components to drop using only the gallery:
/// the smallest k maximizing rank-1 of gallery images against their own
/// identity templates.
inline SubspaceSelection select_subspace(const GalleryView& gallery, const SelectOptions& opt) {
  const LabeledSet& images = gallery.images();
  const TemplateGallery templates = build_templates(images);
  if (templates.size() < 3) {
    throw ValidationError("select_subspace needs at least 3 gallery identities, got " + std::to_string(templates.size()));
  }
  SubspaceSelection sel;
  sel.measure = opt.measure;
  sel.leave_one_out = opt.leave_one_out;
  sel.rule = opt.leave_one_out ? "max-self-rank1-smallest-k/leave-one-out" : "max-self-rank1-smallest-k";
  sel.gallery_fingerprint = gallery.fingerprint();
  sel.basis = opt.basis ? *opt.basis : fit_pca(templates.vectors);
  if (sel.basis.dimension() != images.dimension()) throw ValidationError("basis dimension does not match the gallery");

  sel.degenerate = std::all_of(templates.image_counts.begin(), templates.image_counts.end(),
                               [](std::size_t c) { return c == 1; });

  std::unordered_map<std::string, std::size_t> slot;
  for (std::size_t t = 0; t < templates.size(); ++t) slot[templates.identity_ids[t]] = t;
  std::vector<std::size_t> owner(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) owner[i] = slot.at(images.ids[i]);

  const Matrix img = project(sel.basis, images.rows).coordinates;
  const Matrix tpl = project(sel.basis, templates.vectors).coordinates;
  sel.self_rank1 = detail::self_rank1_curve(img, owner, tpl, templates.image_counts, opt.measure, opt.leave_one_out,
                                              opt.threads);

  sel.k_star = 0;
  if (!sel.degenerate) {
    for (std::size_t k = 1; k < sel.self_rank1.size(); ++k) {
      if (sel.self_rank1[k] > sel.self_rank1[sel.k_star]) sel.k_star = k;
    }
  }
  sel.retained = excise_prefix(sel.basis, sel.k_star);
  return sel;
}

/// Scores probes against templates in the selected subspace.
inline EvalReport apply_selection(const SubspaceSelection& sel, const EmbeddingCorpus& corpus, EvalOptions opt) {
  const GalleryView gallery(corpus);
  if (sel.basis.dimension() != corpus.dimension() || gallery.fingerprint() != sel.gallery_fingerprint) {
    throw ValidationError("selection was fitted on a different gallery than this corpus");
  }
  LabeledSet probes = probe_set(corpus);
  if (probes.size() == 0) throw ValidationError("corpus has no probe records");
  LabeledSet side = build_templates(gallery).as_labeled();
  side.rows = project(sel.basis, side.rows, sel.retained).coordinates;
  probes.rows = project(sel.basis, probes.rows, sel.retained).coordinates;
  opt.measure = sel.measure;
  opt.templated = true;
  auto report = evaluate(probes, side, opt);
  report.subspace_descriptor = "selected-k=" + std::to_string(sel.k_star);
  return report;
}

inline nlohmann::ordered_json to_json(const SubspaceSelection& s) {
  nlohmann::ordered_json j;
  j["k_star"] = s.k_star;
  j["rank"] = s.basis.rank();
  j["retained"] = s.retained;
  j["self_rank1"] = s.self_rank1;
  j["rule"] = s.rule;
  j["degenerate"] = s.degenerate;
  j["measure"] = std::string(to_string(s.measure));
  j["leave_one_out"] = s.leave_one_out;
  j["gallery_fingerprint"] = s.gallery_fingerprint;
  return j;
}

/// Rebuilds a selection from its JSON and the basis it was made with.
inline SubspaceSelection selection_from_json(const nlohmann::json& j, PcaBasis basis) {
  SubspaceSelection s;
  try {
    s.k_star = j.at("k_star").get<std::size_t>();
    s.self_rank1 = j.at("self_rank1").get<std::vector<double>>();
    s.rule = j.at("rule").get<std::string>();
    s.degenerate = j.at("degenerate").get<bool>();
    s.measure = parse_measure(j.at("measure").get<std::string>());
    s.leave_one_out = j.at("leave_one_out").get<bool>();
    s.gallery_fingerprint = j.at("gallery_fingerprint").get<std::string>();
    if (j.at("rank").get<std::size_t>() != basis.rank()) throw ValidationError("selection rank does not match the basis");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad selection file: " + std::string(e.what()));
  }
  s.basis = std::move(basis);
  s.retained = excise_prefix(s.basis, s.k_star);
  if (s.retained.empty()) throw ValidationError("selection excises every component");
  return s;
}

}  // namespace reid
