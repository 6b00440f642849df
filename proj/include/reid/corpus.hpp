#pragma once

#include "reid/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace reid {

enum class Role { gallery, probe };

inline std::string_view to_string(Role r) { return r == Role::gallery ? "gallery" : "probe"; }

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "gallery") return Role::gallery;
  if (s == "probe") return Role::probe;
  return std::nullopt;
}

struct RecordMeta {
  std::string image_id;
  std::string identity_id;
  Role role = Role::gallery;
  std::string dataset;
  std::map<std::string, std::string> attributes;

  bool operator==(const RecordMeta&) const = default;

  /// Attribute lookup; the pseudo-attribute "dataset" resolves to the dataset tag.
  std::optional<std::string> attribute(const std::string& name) const {
    if (name == "dataset") return dataset;
    auto it = attributes.find(name);
    if (it == attributes.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }
};

using FloatRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Immutable set of embeddings with per-row metadata. Row order is the
/// canonical iteration order for every downstream computation.
class EmbeddingCorpus {
 public:
  /// Validates and takes ownership. Throws ValidationError naming the
  /// offending row (1-based, in file order).
  EmbeddingCorpus(std::vector<RecordMeta> meta, FloatRows vectors)
      : meta_(std::move(meta)), vectors_(std::move(vectors)) {
    if (meta_.empty()) throw ValidationError("empty corpus");
    if (vectors_.cols() <= 0) throw ValidationError("corpus dimension must be positive");
    if (static_cast<std::size_t>(vectors_.rows()) != meta_.size()) {
      throw ValidationError("metadata has " + std::to_string(meta_.size()) + " rows but " +
                            std::to_string(vectors_.rows()) + " vectors were given");
    }
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < meta_.size(); ++i) {
      if (meta_[i].image_id.empty()) throw ValidationError("row " + std::to_string(i + 1) + ": empty image_id");
      if (!seen.insert(meta_[i].image_id).second) {
        throw ValidationError("row " + std::to_string(i + 1) + ": duplicate image_id '" + meta_[i].image_id + "'");
      }
      if (!vectors_.row(static_cast<Eigen::Index>(i)).allFinite()) {
        throw ValidationError("row " + std::to_string(i + 1) + ": non-finite embedding value");
      }
    }
  }

  std::size_t size() const { return meta_.size(); }
  std::size_t dimension() const { return static_cast<std::size_t>(vectors_.cols()); }
  const RecordMeta& meta(std::size_t i) const { return meta_[i]; }
  const std::vector<RecordMeta>& meta() const { return meta_; }
  const FloatRows& vectors() const { return vectors_; }
  auto vector(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)); }

  std::size_t count(Role role) const {
    return static_cast<std::size_t>(
        std::count_if(meta_.begin(), meta_.end(), [role](const RecordMeta& m) { return m.role == role; }));
  }

  bool operator==(const EmbeddingCorpus& o) const {
    return meta_ == o.meta_ && vectors_.rows() == o.vectors_.rows() && vectors_.cols() == o.vectors_.cols() &&
           vectors_ == o.vectors_;
  }

 private:
  std::vector<RecordMeta> meta_;
  FloatRows vectors_;
};

/// Rows of one role, promoted to double, with identity labels. This is the
/// currency the metrics and subspace modules operate on.
struct LabeledSet {
  std::vector<std::string> ids;
  std::vector<std::string> datasets;
  Matrix rows;

  std::size_t size() const { return ids.size(); }
  std::size_t dimension() const { return static_cast<std::size_t>(rows.cols()); }
};

inline LabeledSet select_role(const EmbeddingCorpus& corpus, Role role) {
  LabeledSet out;
  const std::size_t n = corpus.count(role);
  out.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(corpus.dimension()));
  out.ids.reserve(n);
  out.datasets.reserve(n);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus.meta(i).role != role) continue;
    out.ids.push_back(corpus.meta(i).identity_id);
    out.datasets.push_back(corpus.meta(i).dataset);
    out.rows.row(r++) = corpus.vector(i).cast<double>();
  }
  return out;
}

inline LabeledSet probe_set(const EmbeddingCorpus& corpus) { return select_role(corpus, Role::probe); }

/// Gallery-only slice of a corpus. Anything that must not see probes takes
/// this type instead of the corpus.
class GalleryView {
 public:
  explicit GalleryView(const EmbeddingCorpus& corpus) : images_(select_role(corpus, Role::gallery)) {
    if (images_.size() == 0) throw ValidationError("corpus has no gallery records");
  }
  const LabeledSet& images() const { return images_; }

  /// Fingerprint of identity labels and vector bytes in row order.
  std::string fingerprint() const {
    Fnv1a h;
    for (std::size_t i = 0; i < images_.size(); ++i) {
      h.update(images_.ids[i]);
      const auto row = images_.rows.row(static_cast<Eigen::Index>(i));
      for (Eigen::Index j = 0; j < row.size(); ++j) {
        const double v = row(j);
        h.update(&v, sizeof v);
      }
    }
    return h.hex();
  }

 private:
  LabeledSet images_;
};

struct TemplateGallery {
  std::size_t dimension = 0;
  std::vector<std::string> identity_ids;
  std::vector<std::string> datasets;  // dataset tag of each identity's first gallery image
  std::vector<std::size_t> image_counts;
  Matrix vectors;

  std::size_t size() const { return identity_ids.size(); }
  LabeledSet as_labeled() const { return {identity_ids, datasets, vectors}; }
};

/// Per-identity unweighted mean of gallery vectors, identities in order of
/// first appearance. Sums run in double in row order.
inline TemplateGallery build_templates(const LabeledSet& gallery) {
  if (gallery.size() == 0) throw ValidationError("no gallery records to build templates from");
  TemplateGallery out;
  out.dimension = gallery.dimension();
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::size_t> owner(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    auto [it, fresh] = slot.try_emplace(gallery.ids[i], out.identity_ids.size());
    if (fresh) {
      out.identity_ids.push_back(gallery.ids[i]);
      out.datasets.push_back(gallery.datasets[i]);
      out.image_counts.push_back(0);
    }
    owner[i] = it->second;
    ++out.image_counts[it->second];
  }
  out.vectors = Matrix::Zero(static_cast<Eigen::Index>(out.identity_ids.size()),
                             static_cast<Eigen::Index>(out.dimension));
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    out.vectors.row(static_cast<Eigen::Index>(owner[i])) += gallery.rows.row(static_cast<Eigen::Index>(i));
  }
  for (std::size_t t = 0; t < out.size(); ++t) {
    out.vectors.row(static_cast<Eigen::Index>(t)) /= static_cast<double>(out.image_counts[t]);
  }
  return out;
}

inline TemplateGallery build_templates(const GalleryView& gallery) { return build_templates(gallery.images()); }

inline TemplateGallery build_templates(const EmbeddingCorpus& corpus) {
  return build_templates(select_role(corpus, Role::gallery));
}

/// Concatenates corpora (e.g. sub-corpora from several datasets). Dimensions
/// must agree and image ids must stay unique.
inline EmbeddingCorpus concat(const std::vector<const EmbeddingCorpus*>& parts) {
  if (parts.empty()) throw ValidationError("empty corpus");
  const auto dim = parts.front()->dimension();
  std::vector<RecordMeta> meta;
  Eigen::Index rows = 0;
  for (const auto* p : parts) {
    if (p->dimension() != dim) throw ValidationError("cannot concatenate corpora of different dimension");
    rows += static_cast<Eigen::Index>(p->size());
  }
  FloatRows vectors(rows, static_cast<Eigen::Index>(dim));
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    meta.insert(meta.end(), p->meta().begin(), p->meta().end());
    vectors.middleRows(at, static_cast<Eigen::Index>(p->size())) = p->vectors();
    at += static_cast<Eigen::Index>(p->size());
  }
  return EmbeddingCorpus(std::move(meta), std::move(vectors));
}

}  // namespace reid
