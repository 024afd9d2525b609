#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace sgmil {

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  /// Fields are length-prefixed so ("ab", "c") and ("a", "bc") differ.
  Sha256& add(std::string_view field);
  Sha256& add(double value);
  Sha256& add(long long value);
  Sha256& add_file(const std::filesystem::path& path);
  std::string hex();

 private:
  void raw(const void* data, std::size_t size);
  struct State;
  std::unique_ptr<State> state_;
};

std::string sha256_file(const std::filesystem::path& path);

/// Stamp files under root/<stage>/<item>.key record the input key an output
/// set was produced from. A lookup hits when the stamp matches and every
/// listed output still exists.
class StageCache {
 public:
  explicit StageCache(std::filesystem::path root) : root_(std::move(root)) {}

  bool hit(const std::string& stage, const std::string& item, const std::string& key,
           std::span<const std::filesystem::path> outputs) const;
  void store(const std::string& stage, const std::string& item, const std::string& key) const;

 private:
  std::filesystem::path stamp(const std::string& stage, const std::string& item) const;
  std::filesystem::path root_;
};

}  // namespace sgmil
