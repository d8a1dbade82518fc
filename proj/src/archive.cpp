#include "matdesign/archive.hpp"

#include <fstream>

#include "text_util.hpp"

namespace matdesign {

ArchiveWriter::ArchiveWriter(std::string_view magic, std::uint32_t version) {
  put(magic);
  put<std::uint32_t>(version);
}

void ArchiveWriter::put(std::string_view s) {
  put<std::uint64_t>(s.size());
  bytes_.append(s.data(), s.size());
}

void ArchiveWriter::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ArchiveReader::ArchiveReader(std::string bytes, std::string_view magic, std::uint32_t max_version)
    : bytes_(std::move(bytes)) {
  const std::string found = get_string();
  if (found != magic) throw DataError("archive magic mismatch: expected " + std::string(magic) + ", found " + found);
  version_ = get<std::uint32_t>();
  if (version_ == 0 || version_ > max_version)
    throw DataError("unsupported " + std::string(magic) + " archive version " + std::to_string(version_));
}

ArchiveReader ArchiveReader::open(const std::filesystem::path& path, std::string_view magic,
                                  std::uint32_t max_version) {
  return ArchiveReader(detail::read_file(path), magic, max_version);
}

std::string ArchiveReader::get_string() {
  const auto n = get<std::uint64_t>();
  need(n);
  std::string s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

void ArchiveReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) throw DataError("truncated archive");
}

}  // namespace matdesign
