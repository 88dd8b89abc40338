#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace circus::pipeline {

struct ZipMember {
  std::string name;
  std::string bytes;
  bool operator==(const ZipMember&) const = default;
};

bool looks_like_zip(std::string_view bytes) noexcept;
/// Reads stored and deflated members via the central directory. Directory
/// entries are skipped. Throws MalformedDocument on corrupt archives.
std::vector<ZipMember> read_zip(std::string_view bytes);
/// Minimal archive writer (deflate when it saves space, else stored).
std::string write_zip(const std::vector<ZipMember>& members);

}  // namespace circus::pipeline
