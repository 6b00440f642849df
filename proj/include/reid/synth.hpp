#pragma once

// Synthetic embedding corpora with planted structure.
//
// Before rotation the coordinates are split into disjoint blocks:
//   [identity | nuisance | attribute_0 | attribute_1 | ... | free]
// Each identity draws one mean in the identity block. Each image draws a fresh
// nuisance vector (the same subspace for every identity, like a camera or
// session effect), adds its attribute class offsets, and isotropic noise over
// all coordinates. Variances are expected squared norms of each component,
// spread evenly over the block. A seeded random rotation and an optional
// common offset are then applied to every vector.

#include "reid/corpus.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/QR>

#include <cstdio>
#include <random>

namespace reid {

/// mt19937_64 with distribution code of our own, so streams do not depend on
/// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0;
    do {
      u = uniform();
    } while (u <= 0.0);
    const double v = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u));
    const double angle = 2.0 * 3.14159265358979323846 * v;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct AttributeSpec {
  std::string name;
  std::size_t classes = 2;
  double effect_norm = 1.0;
  bool per_image = false;  // false: one class per identity (e.g. gender)
};

struct SynthConfig {
  std::size_t dimension = 256;
  std::size_t identities = 200;
  std::size_t gallery_per_identity = 10;
  std::size_t probe_per_identity = 5;
  double identity_variance = 1.0;
  std::size_t identity_dim = 32;
  double nuisance_variance = 10.0;
  std::size_t nuisance_dim = 5;
  std::vector<AttributeSpec> attributes;
  double noise_variance = 2.0;
  std::string dataset = "synth";
  double dataset_offset_norm = 0.0;
  std::uint64_t seed = 1;

  std::size_t attribute_dims() const {
    std::size_t n = 0;
    for (const auto& a : attributes) n += a.classes;
    return n;
  }

  void validate() const {
    if (dimension == 0) throw ValidationError("synth: dimension must be positive");
    if (identities == 0 || gallery_per_identity == 0 || probe_per_identity == 0) {
      throw ValidationError("synth: identity and image counts must be at least 1");
    }
    if (identity_dim == 0) throw ValidationError("synth: identity subspace must have at least one dimension");
    if (identity_dim + nuisance_dim + attribute_dims() > dimension) {
      throw ValidationError("synth: identity, nuisance and attribute blocks do not fit in dimension " +
                            std::to_string(dimension));
    }
    for (double v : {identity_variance, nuisance_variance, noise_variance, dataset_offset_norm}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("synth: variances and norms must be finite and >= 0");
    }
    if (nuisance_dim == 0 && nuisance_variance > 0.0) throw ValidationError("synth: nuisance variance needs nuisance_dim > 0");
    for (const auto& a : attributes) {
      if (a.name.empty() || a.name == "dataset") throw ValidationError("synth: invalid attribute name '" + a.name + "'");
      if (a.classes < 2) throw ValidationError("synth: attribute '" + a.name + "' needs at least 2 classes");
      if (!(a.effect_norm >= 0.0)) throw ValidationError("synth: attribute effect norm must be >= 0");
    }
  }
};

struct Block {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// What the generator planted, for mechanical oracle comparisons.
struct GroundTruth {
  std::vector<Block> blocks;
  Matrix rotation;  // d x d orthonormal; embedding = rotation * block_coords + offset
  Vector offset;

  const Block& block(std::string_view name) const {
    for (const auto& b : blocks) {
      if (b.name == name) return b;
    }
    throw ValidationError("no ground-truth block named '" + std::string(name) + "'");
  }

  /// Orthonormal rows spanning a block in embedding space.
  Matrix subspace(std::string_view name) const {
    const auto& b = block(name);
    return rotation.middleCols(static_cast<Eigen::Index>(b.begin), static_cast<Eigen::Index>(b.end - b.begin)).transpose();
  }
};

struct SynthOutput {
  EmbeddingCorpus corpus;
  GroundTruth truth;
};

inline SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto d = static_cast<Eigen::Index>(cfg.dimension);

  GroundTruth truth;
  std::size_t at = 0;
  truth.blocks.push_back({"identity", at, at + cfg.identity_dim});
  at += cfg.identity_dim;
  truth.blocks.push_back({"nuisance", at, at + cfg.nuisance_dim});
  at += cfg.nuisance_dim;
  for (const auto& a : cfg.attributes) {
    truth.blocks.push_back({"attr:" + a.name, at, at + a.classes});
    at += a.classes;
  }
  truth.blocks.push_back({"free", at, cfg.dimension});

  Eigen::MatrixXd gauss(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) gauss(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (rmat(j, j) < 0.0) q.col(j) *= -1.0;
  }
  truth.rotation = q;

  truth.offset = Vector::Zero(d);
  if (cfg.dataset_offset_norm > 0.0) {
    for (Eigen::Index j = 0; j < d; ++j) truth.offset(j) = rng.normal();
    truth.offset *= cfg.dataset_offset_norm / truth.offset.norm();
  }

  const double id_sd = std::sqrt(cfg.identity_variance / static_cast<double>(cfg.identity_dim));
  const double nuis_sd = cfg.nuisance_dim ? std::sqrt(cfg.nuisance_variance / static_cast<double>(cfg.nuisance_dim)) : 0.0;
  const double noise_sd = std::sqrt(cfg.noise_variance / static_cast<double>(cfg.dimension));
  const std::size_t per_id = cfg.gallery_per_identity + cfg.probe_per_identity;
  const auto total = static_cast<Eigen::Index>(cfg.identities * per_id);

  Matrix coords = Matrix::Zero(total, d);
  std::vector<RecordMeta> meta;
  meta.reserve(static_cast<std::size_t>(total));
  const auto& nuis = truth.block("nuisance");
  Eigen::Index row = 0;
  for (std::size_t id = 0; id < cfg.identities; ++id) {
    char name[32];
    std::snprintf(name, sizeof name, "id%05zu", id);
    const std::string identity = cfg.dataset + ":" + name;
    Vector mean = Vector::Zero(static_cast<Eigen::Index>(cfg.identity_dim));
    for (Eigen::Index j = 0; j < mean.size(); ++j) mean(j) = id_sd * rng.normal();
    std::vector<std::size_t> id_class(cfg.attributes.size());
    for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
      if (!cfg.attributes[a].per_image) id_class[a] = rng.below(cfg.attributes[a].classes);
    }
    for (std::size_t img = 0; img < per_id; ++img, ++row) {
      const bool gallery = img < cfg.gallery_per_identity;
      const std::size_t local = gallery ? img : img - cfg.gallery_per_identity;
      RecordMeta m;
      m.identity_id = identity;
      m.role = gallery ? Role::gallery : Role::probe;
      m.dataset = cfg.dataset;
      m.image_id = cfg.dataset + "/" + name + "/" + (gallery ? "g" : "p") + std::to_string(local);

      coords.row(row).head(static_cast<Eigen::Index>(cfg.identity_dim)) = mean.transpose();
      for (std::size_t j = nuis.begin; j < nuis.end; ++j) coords(row, static_cast<Eigen::Index>(j)) = nuis_sd * rng.normal();
      for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
        const auto& spec = cfg.attributes[a];
        const std::size_t cls = spec.per_image ? rng.below(spec.classes) : id_class[a];
        const auto& blk = truth.block("attr:" + spec.name);
        coords(row, static_cast<Eigen::Index>(blk.begin + cls)) += spec.effect_norm;
        m.attributes[spec.name] = std::to_string(cls);
      }
      for (Eigen::Index j = 0; j < d; ++j) coords(row, j) += noise_sd * rng.normal();
      meta.push_back(std::move(m));
    }
  }

  Matrix embedded = coords * truth.rotation.transpose();
  embedded.rowwise() += truth.offset.transpose();
  FloatRows vectors = embedded.cast<float>();
  return {EmbeddingCorpus(std::move(meta), std::move(vectors)), std::move(truth)};
}

inline nlohmann::ordered_json to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["dimension"] = c.dimension;
  j["identities"] = c.identities;
  j["gallery_per_identity"] = c.gallery_per_identity;
  j["probe_per_identity"] = c.probe_per_identity;
  j["identity_variance"] = c.identity_variance;
  j["identity_dim"] = c.identity_dim;
  j["nuisance_variance"] = c.nuisance_variance;
  j["nuisance_dim"] = c.nuisance_dim;
  auto attrs = nlohmann::ordered_json::array();
  for (const auto& a : c.attributes) {
    attrs.push_back({{"name", a.name}, {"classes", a.classes}, {"effect_norm", a.effect_norm}, {"per_image", a.per_image}});
  }
  j["attributes"] = attrs;
  j["noise_variance"] = c.noise_variance;
  j["dataset"] = c.dataset;
  j["dataset_offset_norm"] = c.dataset_offset_norm;
  j["seed"] = c.seed;
  return j;
}

inline nlohmann::ordered_json to_json(const GroundTruth& t) {
  nlohmann::ordered_json j;
  auto blocks = nlohmann::ordered_json::array();
  for (const auto& b : t.blocks) {
    nlohmann::ordered_json e;
    e["name"] = b.name;
    e["begin"] = b.begin;
    e["end"] = b.end;
    if (b.name != "free") {
      const Matrix basis = t.subspace(b.name);
      auto rows = nlohmann::ordered_json::array();
      for (Eigen::Index i = 0; i < basis.rows(); ++i) {
        rows.push_back(std::vector<double>(basis.row(i).data(), basis.row(i).data() + basis.cols()));
      }
      e["basis"] = rows;
    }
    blocks.push_back(e);
  }
  j["blocks"] = blocks;
  j["offset"] = std::vector<double>(t.offset.data(), t.offset.data() + t.offset.size());
  return j;
}

}  // namespace reid
