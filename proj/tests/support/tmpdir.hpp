#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace nnkg::test {

// Scratch directory removed on scope exit.
class TmpDir {
 public:
  explicit TmpDir(const std::string& tag = "nnkg") {
    std::random_device rd;
    std::uniform_int_distribution<std::uint64_t> d;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(d(rd)));
    std::filesystem::create_directories(path_);
  }
  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TmpDir(const TmpDir&) = delete;
  TmpDir& operator=(const TmpDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const {
    return path_ / leaf;
  }

 private:
  std::filesystem::path path_;
};

}  // namespace nnkg::test
