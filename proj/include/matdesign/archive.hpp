#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "matdesign/common.hpp"

namespace matdesign {

/// Little-endian host byte stream for checkpoints. Doubles are stored as raw
/// bit patterns, so save/load round-trips exactly.
class ArchiveWriter {
 public:
  explicit ArchiveWriter(std::string_view magic, std::uint32_t version);

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.append(p, sizeof(T));
  }

  void put(bool value) { put<std::uint8_t>(value ? 1 : 0); }
  void put(std::string_view s);
  void put(const char* s) { put(std::string_view(s)); }
  void put(const std::string& s) { put(std::string_view(s)); }

  template <typename T>
  void put(const std::optional<T>& v) {
    put(v.has_value());
    if (v) put(*v);
  }

  template <typename Scalar, int R, int C, int O, int MR, int MC>
  void put(const Eigen::Matrix<Scalar, R, C, O, MR, MC>& m) {
    put<std::int64_t>(m.rows());
    put<std::int64_t>(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) put<Scalar>(m(i, j));
  }

  template <typename T>
  void put(const std::vector<T>& v) {
    put<std::uint64_t>(v.size());
    for (const auto& x : v) put(x);
  }

  const std::string& bytes() const { return bytes_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::string bytes_;
};

class ArchiveReader {
 public:
  ArchiveReader(std::string bytes, std::string_view magic, std::uint32_t max_version);
  static ArchiveReader open(const std::filesystem::path& path, std::string_view magic, std::uint32_t max_version);

  std::uint32_t version() const { return version_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  bool get_bool() { return get<std::uint8_t>() != 0; }
  std::string get_string();

  template <typename T>
  std::optional<T> get_optional() {
    if (!get_bool()) return std::nullopt;
    return get<T>();
  }

  template <typename MatrixType>
  MatrixType get_matrix() {
    const auto rows = get<std::int64_t>();
    const auto cols = get<std::int64_t>();
    if (rows < 0 || cols < 0) throw DataError("corrupt archive: negative matrix shape");
    MatrixType m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = get<typename MatrixType::Scalar>();
    return m;
  }

  template <typename MatrixType>
  std::vector<MatrixType> get_matrices() {
    const auto n = get<std::uint64_t>();
    std::vector<MatrixType> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(get_matrix<MatrixType>());
    return out;
  }

  std::size_t get_size() { return static_cast<std::size_t>(get<std::uint64_t>()); }

 private:
  void need(std::size_t n) const;

  std::string bytes_;
  std::size_t pos_ = 0;
  std::uint32_t version_ = 0;
};

}  // namespace matdesign
