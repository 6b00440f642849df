#pragma once

#include "reid/io.hpp"

#include <Eigen/SVD>

namespace reid {

inline constexpr const char* kSignConvention = "largest-abs-coordinate-positive/v1";
inline constexpr double kRankTolerance = 1e-10;

/// Mean-centered PCA basis. Components are rows, ordered by descending
/// explained variance (sample variance, divisor n-1).
struct PcaBasis {
  Vector mean;
  Matrix components;  // r x d, orthonormal rows
  Vector explained_variance;
  std::size_t fit_rows = 0;

  std::size_t rank() const { return static_cast<std::size_t>(components.rows()); }
  std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }
};

/// Fits PCA by thin SVD of the centered matrix. Rank is the number of
/// singular values above 1e-10 times the largest. Each component is flipped
/// so its largest-magnitude coordinate is positive (first index wins ties).
inline PcaBasis fit_pca(const Matrix& rows) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < 2) throw ValidationError("fit_pca needs at least 2 rows, got " + std::to_string(n));
  if (d < 1) throw ValidationError("fit_pca needs a positive dimension");

  PcaBasis basis;
  basis.fit_rows = static_cast<std::size_t>(n);
  basis.mean = Vector::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i) basis.mean += rows.row(i).transpose();
  basis.mean /= static_cast<double>(n);

  Eigen::MatrixXd centered = rows;
  centered.rowwise() -= basis.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) throw ValidationError("fit_pca: all rows are identical (rank 0)");
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > kRankTolerance * sv(0)) ++r;

  basis.components = svd.matrixV().leftCols(r).transpose();
  basis.explained_variance = sv.head(r).array().square() / static_cast<double>(n - 1);
  for (Eigen::Index c = 0; c < r; ++c) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double a = std::abs(basis.components(c, j));
      if (a > best) {
        best = a;
        arg = j;
      }
    }
    if (basis.components(c, arg) < 0.0) basis.components.row(c) *= -1.0;
  }
  return basis;
}

/// Rows expressed in a subset of a basis's components.
struct ProjectedSet {
  Matrix coordinates;                 // m x |retained|
  std::vector<std::size_t> retained;  // strictly increasing component indices
};

/// (rows - mean) * components^T, restricted to `retain`.
inline ProjectedSet project(const PcaBasis& basis, const Matrix& rows, const std::vector<std::size_t>& retain) {
  if (static_cast<std::size_t>(rows.cols()) != basis.dimension()) {
    throw ValidationError("project: rows have dimension " + std::to_string(rows.cols()) + ", basis has " +
                          std::to_string(basis.dimension()));
  }
  if (retain.empty()) throw ValidationError("project: retained component set is empty");
  for (std::size_t i = 0; i < retain.size(); ++i) {
    if (retain[i] >= basis.rank()) {
      throw ValidationError("project: component index " + std::to_string(retain[i]) + " out of range for rank " +
                            std::to_string(basis.rank()));
    }
    if (i > 0 && retain[i] <= retain[i - 1]) throw ValidationError("project: retained indices must be strictly increasing");
  }
  // Plain loops in a fixed order: a coordinate never depends on which other
  // rows or components are projected alongside it.
  const Eigen::Index d = rows.cols();
  const auto r = static_cast<Eigen::Index>(retain.size());
  Matrix loadings(d, r);  // column c holds component retain[c]
  for (Eigen::Index c = 0; c < r; ++c) {
    loadings.col(c) = basis.components.row(static_cast<Eigen::Index>(retain[static_cast<std::size_t>(c)])).transpose();
  }
  ProjectedSet out{Matrix::Zero(rows.rows(), r), retain};
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double* acc = out.coordinates.row(i).data();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double x = rows(i, j) - basis.mean(j);
      const double* w = loadings.row(j).data();
      for (Eigen::Index c = 0; c < r; ++c) acc[c] += x * w[c];
    }
  }
  return out;
}

inline std::vector<std::size_t> all_components(const PcaBasis& basis) {
  std::vector<std::size_t> out(basis.rank());
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

inline ProjectedSet project(const PcaBasis& basis, const Matrix& rows) { return project(basis, rows, all_components(basis)); }

/// Drops the k highest-variance components: {k, ..., r-1}.
inline std::vector<std::size_t> excise_prefix(const PcaBasis& basis, std::size_t k) {
  if (k > basis.rank()) {
    throw ValidationError("excise_prefix: k=" + std::to_string(k) + " exceeds rank " + std::to_string(basis.rank()));
  }
  std::vector<std::size_t> out;
  for (std::size_t c = k; c < basis.rank(); ++c) out.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: EMB1 rows [mean, component_0, ...] plus `<path>.json`.

inline void write_pca_basis(const PcaBasis& basis, const std::filesystem::path& path) {
  FloatRows rows(static_cast<Eigen::Index>(basis.rank() + 1), static_cast<Eigen::Index>(basis.dimension()));
  rows.row(0) = basis.mean.transpose().cast<float>();
  rows.bottomRows(static_cast<Eigen::Index>(basis.rank())) = basis.components.cast<float>();
  write_emb1_matrix(path, rows);
  nlohmann::ordered_json j;
  j["sign_convention"] = kSignConvention;
  j["rank"] = basis.rank();
  j["dimension"] = basis.dimension();
  j["fit_rows"] = basis.fit_rows;
  j["explained_variance"] = std::vector<double>(basis.explained_variance.data(),
                                                basis.explained_variance.data() + basis.explained_variance.size());
  auto out = detail::open_out(path.string() + ".json");
  out << j.dump(2) << '\n';
}

/// Loads a basis written by write_pca_basis (float32 precision).
inline PcaBasis read_pca_basis(const std::filesystem::path& path) {
  const FloatRows rows = read_emb1_matrix(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad PCA basis sidecar: " + std::string(e.what()));
  }
  if (j.value("sign_convention", std::string{}) != kSignConvention) {
    throw ValidationError("PCA basis uses an unsupported sign convention");
  }
  const auto ev = j.at("explained_variance").get<std::vector<double>>();
  if (ev.size() + 1 != static_cast<std::size_t>(rows.rows())) {
    throw ValidationError("PCA basis sidecar rank does not match the EMB1 row count");
  }
  PcaBasis b;
  b.mean = rows.row(0).transpose().cast<double>();
  b.components = rows.bottomRows(rows.rows() - 1).cast<double>();
  b.explained_variance = Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  b.fit_rows = j.value("fit_rows", std::size_t{0});
  return b;
}

}  // namespace reid
