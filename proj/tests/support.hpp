#pragma once

#include "oracles.hpp"
#include "reid/reid.hpp"

#include <filesystem>
#include <random>

namespace testing_support {

inline oracle::Mat to_mat(const reid::Matrix& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return out;
}

inline reid::Matrix random_matrix(std::mt19937_64& gen, Eigen::Index n, Eigen::Index d, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  reid::Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = nd(gen);
  }
  return m;
}

/// Random clustered corpus: identity centers plus per-image noise. Some
/// probe identities may be missing from the gallery when `strangers` is set.
/// With `quantize`, coordinates are small integers so exact score ties occur.
inline reid::EmbeddingCorpus random_corpus(std::mt19937_64& gen, std::size_t ids, std::size_t gallery_per,
                                           std::size_t probe_per, std::size_t d, bool strangers = false,
                                           bool quantize = false) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<reid::RecordMeta> meta;
  std::vector<std::vector<float>> rows;
  auto value = [&](double center) {
    const double v = center + 0.8 * nd(gen);
    return quantize ? static_cast<float>(std::round(v * 2.0)) : static_cast<float>(v);
  };
  for (std::size_t id = 0; id < ids; ++id) {
    std::vector<double> center(d);
    for (auto& c : center) c = nd(gen);
    const bool stranger = strangers && id % 4 == 3;
    for (std::size_t k = 0; k < gallery_per + probe_per; ++k) {
      const bool gallery = k < gallery_per;
      if (gallery && stranger) continue;
      reid::RecordMeta m;
      m.identity_id = "id" + std::to_string(id);
      m.image_id = m.identity_id + (gallery ? "/g" : "/p") + std::to_string(k);
      m.role = gallery ? reid::Role::gallery : reid::Role::probe;
      m.dataset = id % 2 ? "A" : "B";
      std::vector<float> v(d);
      for (std::size_t j = 0; j < d; ++j) v[j] = value(center[j]);
      meta.push_back(m);
      rows.push_back(v);
    }
  }
  reid::FloatRows x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return reid::EmbeddingCorpus(std::move(meta), std::move(x));
}

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("reid_" + tag + "_" + std::to_string(std::random_device{}()) + std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) { return reid::detail::read_file(p); }

}  // namespace testing_support
