#include "sgmil/cache.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "sgmil/error.hpp"

namespace sgmil {

struct Sha256::State {
  EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : state_(std::make_unique<State>()) {
  state_->ctx = EVP_MD_CTX_new();
  if (state_->ctx == nullptr || EVP_DigestInit_ex(state_->ctx, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 initialisation failed");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(state_->ctx); }

void Sha256::raw(const void* data, std::size_t size) { EVP_DigestUpdate(state_->ctx, data, size); }

Sha256& Sha256::add(std::string_view field) {
  const std::uint64_t n = field.size();
  raw(&n, sizeof(n));
  raw(field.data(), field.size());
  return *this;
}

Sha256& Sha256::add(double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  raw(&bits, sizeof(bits));
  return *this;
}

Sha256& Sha256::add(long long value) {
  raw(&value, sizeof(value));
  return *this;
}

Sha256& Sha256::add_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InvalidInput, "cannot read " + path.string());
  std::array<char, 1 << 16> buf;
  std::uint64_t total = 0;
  while (in) {
    in.read(buf.data(), buf.size());
    const auto got = static_cast<std::size_t>(in.gcount());
    raw(buf.data(), got);
    total += got;
  }
  raw(&total, sizeof(total));
  return *this;
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(state_->ctx, md.data(), &len);
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kDigits[md[i] >> 4]);
    out.push_back(kDigits[md[i] & 15]);
  }
  EVP_DigestInit_ex(state_->ctx, EVP_sha256(), nullptr);
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return Sha256().add_file(path).hex(); }

std::filesystem::path StageCache::stamp(const std::string& stage, const std::string& item) const {
  return root_ / stage / (item + ".key");
}

bool StageCache::hit(const std::string& stage, const std::string& item, const std::string& key,
                     std::span<const std::filesystem::path> outputs) const {
  std::ifstream in(stamp(stage, item));
  if (!in) return false;
  std::string stored;
  std::getline(in, stored);
  if (stored != key) return false;
  for (const auto& p : outputs) {
    if (!std::filesystem::exists(p)) return false;
  }
  return true;
}

void StageCache::store(const std::string& stage, const std::string& item, const std::string& key) const {
  const auto path = stamp(stage, item);
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write cache stamp " + path.string());
  out << key << '\n';
}

}  // namespace sgmil
