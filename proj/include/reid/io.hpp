#pragma once

// Corpus file formats.
//
// EMB1 binary: "EMB1", u32 count, u32 dimension, count*dimension float32,
// all little-endian, row-major. Metadata lives in `<path>.meta.jsonl`, one
// JSON object per row in order.
//
// CSV: header image_id,identity_id,role,dataset,attr:<name>...,e0..e{d-1}.
// An empty attribute cell means "not labeled".

#include "reid/corpus.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace reid {

enum class FileFormat { csv, bin };

inline FileFormat parse_format(std::string_view s) {
  if (s == "csv") return FileFormat::csv;
  if (s == "bin" || s == "emb1") return FileFormat::bin;
  throw ValidationError("unknown corpus format '" + std::string(s) + "'");
}

/// csv for *.csv, bin otherwise.
inline FileFormat format_from_path(const std::filesystem::path& p) {
  return p.extension() == ".csv" ? FileFormat::csv : FileFormat::bin;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::string format_float(float v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline bool needs_quotes(std::string_view s) { return s.find_first_of(",\"\r\n") != std::string_view::npos; }

inline std::string csv_field(std::string_view s) {
  if (!needs_quotes(s)) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// RFC 4180 style split of one logical line. Quoted fields may hold commas and
// doubled quotes; embedded newlines are not supported.
inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t row) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ValidationError("row " + std::to_string(row) + ": unterminated quoted field");
  out.push_back(std::move(cur));
  return out;
}

inline float parse_float(std::string_view s, std::size_t row, std::size_t col) {
  float v = 0.0f;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || s.empty()) {
    throw ValidationError("row " + std::to_string(row) + ": malformed float '" + std::string(s) + "' in column e" +
                          std::to_string(col));
  }
  return v;
}

inline nlohmann::ordered_json meta_to_json(const RecordMeta& m) {
  nlohmann::ordered_json j;
  j["image_id"] = m.image_id;
  j["identity_id"] = m.identity_id;
  j["role"] = std::string(to_string(m.role));
  j["dataset"] = m.dataset;
  nlohmann::ordered_json attrs = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.attributes) attrs[k] = v;
  j["attributes"] = attrs;
  return j;
}

inline RecordMeta meta_from_json(const nlohmann::json& j, std::size_t row) {
  const auto where = "row " + std::to_string(row) + ": ";
  if (!j.is_object()) throw ValidationError(where + "metadata line is not a JSON object");
  RecordMeta m;
  try {
    m.image_id = j.at("image_id").get<std::string>();
    m.identity_id = j.at("identity_id").get<std::string>();
    const auto role = j.at("role").get<std::string>();
    auto parsed = parse_role(role);
    if (!parsed) throw ValidationError(where + "unknown role '" + role + "'");
    m.role = *parsed;
    m.dataset = j.value("dataset", std::string{});
    if (j.contains("attributes")) {
      for (const auto& [k, v] : j.at("attributes").items()) m.attributes[k] = v.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + "bad metadata: " + e.what());
  }
  return m;
}

}  // namespace detail

inline std::filesystem::path meta_path(const std::filesystem::path& p) { return p.string() + ".meta.jsonl"; }

/// Writes a bare EMB1 float matrix (no metadata sidecar).
inline void write_emb1_matrix(const std::filesystem::path& path, const FloatRows& rows) {
  auto out = detail::open_out(path, true);
  out.write("EMB1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(rows.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(rows.cols()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) detail::put_u32(out, std::bit_cast<std::uint32_t>(rows(i, j)));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Reads a bare EMB1 float matrix. A zero count is reported as an empty corpus.
inline FloatRows read_emb1_matrix(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "EMB1", 4) != 0) {
    throw ValidationError("'" + path.string() + "' is not an EMB1 file (bad magic)");
  }
  const std::uint32_t n = detail::get_u32(p + 4);
  const std::uint32_t d = detail::get_u32(p + 8);
  if (n == 0) throw ValidationError("empty corpus");
  if (d == 0) throw ValidationError("EMB1 dimension must be positive");
  const std::uint64_t expected = 12 + 4ULL * n * d;
  if (bytes.size() != expected) {
    throw ValidationError("'" + path.string() + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected) + " for " + std::to_string(n) + "x" + std::to_string(d));
  }
  FloatRows rows(n, d);
  const unsigned char* q = p + 12;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j, q += 4) rows(i, j) = std::bit_cast<float>(detail::get_u32(q));
  }
  return rows;
}

inline void write_corpus_bin(const EmbeddingCorpus& corpus, const std::filesystem::path& path) {
  write_emb1_matrix(path, corpus.vectors());
  auto meta = detail::open_out(meta_path(path));
  for (const auto& m : corpus.meta()) meta << detail::meta_to_json(m).dump() << '\n';
  if (!meta) throw IoError("write failed for '" + meta_path(path).string() + "'");
}

inline EmbeddingCorpus load_corpus_bin(const std::filesystem::path& path) {
  FloatRows rows = read_emb1_matrix(path);
  std::ifstream in(meta_path(path));
  if (!in) throw IoError("cannot open metadata sidecar '" + meta_path(path).string() + "'");
  std::vector<RecordMeta> meta;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::size_t row = meta.size() + 1;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("row " + std::to_string(row) + ": metadata is not valid JSON");
    }
    meta.push_back(detail::meta_from_json(j, row));
  }
  if (meta.size() != static_cast<std::size_t>(rows.rows())) {
    throw ValidationError("metadata sidecar has " + std::to_string(meta.size()) + " rows but EMB1 count is " +
                          std::to_string(rows.rows()));
  }
  return EmbeddingCorpus(std::move(meta), std::move(rows));
}

inline void write_corpus_csv(const EmbeddingCorpus& corpus, const std::filesystem::path& path) {
  std::set<std::string> names;
  for (const auto& m : corpus.meta()) {
    for (const auto& [k, v] : m.attributes) names.insert(k);
  }
  auto out = detail::open_out(path);
  out << "image_id,identity_id,role,dataset";
  for (const auto& n : names) out << ',' << detail::csv_field("attr:" + n);
  for (std::size_t j = 0; j < corpus.dimension(); ++j) out << ",e" << j;
  out << '\n';
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& m = corpus.meta(i);
    out << detail::csv_field(m.image_id) << ',' << detail::csv_field(m.identity_id) << ',' << to_string(m.role) << ','
        << detail::csv_field(m.dataset);
    for (const auto& n : names) {
      auto it = m.attributes.find(n);
      out << ',' << (it == m.attributes.end() ? std::string{} : detail::csv_field(it->second));
    }
    const auto v = corpus.vector(i);
    for (Eigen::Index j = 0; j < v.size(); ++j) out << ',' << detail::format_float(v(j));
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline EmbeddingCorpus load_corpus_csv(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty corpus");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line, 0);
  static const std::array<std::string, 4> kFixed{"image_id", "identity_id", "role", "dataset"};
  if (header.size() < 5 || !std::equal(kFixed.begin(), kFixed.end(), header.begin())) {
    throw ValidationError("'" + path.string() + "' is not a corpus CSV (bad header)");
  }
  std::vector<std::string> attr_names;
  std::size_t col = 4;
  for (; col < header.size() && header[col].starts_with("attr:"); ++col) attr_names.push_back(header[col].substr(5));
  const std::size_t dim = header.size() - col;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[col + j] != "e" + std::to_string(j)) {
      throw ValidationError("bad CSV header: expected column 'e" + std::to_string(j) + "', got '" + header[col + j] + "'");
    }
  }
  if (dim == 0) throw ValidationError("CSV corpus has no embedding columns");

  std::vector<RecordMeta> meta;
  std::vector<float> values;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t row = meta.size() + 1;
    const auto fields = detail::split_csv_line(line, row);
    if (fields.size() != header.size()) {
      const long got = static_cast<long>(fields.size()) - static_cast<long>(col);
      throw ValidationError("row " + std::to_string(row) + ": dimension mismatch, expected " + std::to_string(dim) +
                            " values, got " + std::to_string(got));
    }
    RecordMeta m;
    m.image_id = fields[0];
    m.identity_id = fields[1];
    auto role = parse_role(fields[2]);
    if (!role) throw ValidationError("row " + std::to_string(row) + ": unknown role '" + fields[2] + "'");
    m.role = *role;
    m.dataset = fields[3];
    for (std::size_t a = 0; a < attr_names.size(); ++a) {
      if (!fields[4 + a].empty()) m.attributes[attr_names[a]] = fields[4 + a];
    }
    for (std::size_t j = 0; j < dim; ++j) values.push_back(detail::parse_float(fields[col + j], row, j));
    meta.push_back(std::move(m));
  }
  if (meta.empty()) throw ValidationError("empty corpus");
  FloatRows rows = Eigen::Map<FloatRows>(values.data(), static_cast<Eigen::Index>(meta.size()),
                                         static_cast<Eigen::Index>(dim));
  return EmbeddingCorpus(std::move(meta), std::move(rows));
}

inline EmbeddingCorpus load_corpus(const std::filesystem::path& path, FileFormat format) {
  return format == FileFormat::csv ? load_corpus_csv(path) : load_corpus_bin(path);
}

inline void write_corpus(const EmbeddingCorpus& corpus, const std::filesystem::path& path, FileFormat format) {
  if (format == FileFormat::csv) {
    write_corpus_csv(corpus, path);
  } else {
    write_corpus_bin(corpus, path);
  }
}

}  // namespace reid
