#pragma once

#include <chrono>
#include <filesystem>
#include <random>
#include <string>

namespace bioage::testsupport {

// Scratch directory that cleans up after itself.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    std::mt19937_64 rng(static_cast<std::uint64_t>(stamp));
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rng() & 0xffffffULL));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace bioage::testsupport
