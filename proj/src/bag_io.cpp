#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sgmil/embedding.hpp"
#include "sgmil/error.hpp"

namespace sgmil {

namespace {

constexpr char kMagic[5] = {'S', 'G', 'M', 'B', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::size_t offset() const { return pos_; }

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorKind::Format, source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) error("truncated payload (need " + std::to_string(n) + " more bytes)");
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_feature_bag(const FeatureBag& bag) {
  validate(bag);
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_string(out, bag.slide_id);
  put_string(out, bag.patient_id);
  out.push_back(static_cast<std::uint8_t>(bag.cancer_type));
  out.push_back(static_cast<std::uint8_t>(bag.magnification));
  put_u32(out, static_cast<std::uint32_t>(bag.size()));
  put_u32(out, static_cast<std::uint32_t>(bag.dim));
  for (float v : bag.features) put_u32(out, std::bit_cast<std::uint32_t>(v));
  for (const auto& c : bag.coords) {
    put_u32(out, static_cast<std::uint32_t>(c[0]));
    put_u32(out, static_cast<std::uint32_t>(c[1]));
  }
  return out;
}

FeatureBag decode_feature_bag(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader in(bytes, source);
  auto magic = in.raw(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::Format, source + ": bad magic (expected SGMB1) at byte offset 0");
  }
  FeatureBag bag;
  bag.slide_id = in.str();
  bag.patient_id = in.str();
  const std::size_t type_offset = in.offset();
  const std::uint8_t type = in.u8();
  if (type >= kNumCancerTypes) {
    fail(ErrorKind::Format, source + ": invalid cancer type " + std::to_string(type) + " at byte offset " +
                                std::to_string(type_offset));
  }
  bag.cancer_type = static_cast<CancerType>(type);
  const std::size_t mag_offset = in.offset();
  const std::uint8_t mag = in.u8();
  if (mag != 5 && mag != 10 && mag != 20) {
    fail(ErrorKind::Format, source + ": invalid magnification " + std::to_string(mag) + " at byte offset " +
                                std::to_string(mag_offset));
  }
  bag.magnification = static_cast<Magnification>(mag);
  const std::size_t n_offset = in.offset();
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  if (n == 0) {
    fail(ErrorKind::EmptyBag, source + ": header declares N=0 at byte offset " + std::to_string(n_offset));
  }
  if (d == 0) in.error("header declares D=0");
  const std::uint64_t payload = static_cast<std::uint64_t>(n) * d * 4 + static_cast<std::uint64_t>(n) * 8;
  const std::uint64_t remaining = bytes.size() - in.offset();
  if (payload != remaining) {
    in.error("payload size " + std::to_string(remaining) + " does not match header N=" + std::to_string(n) +
             " D=" + std::to_string(d) + " (expected " + std::to_string(payload) + ")");
  }
  bag.dim = d;
  bag.features.resize(static_cast<std::size_t>(n) * d);
  for (auto& v : bag.features) {
    const std::size_t at = in.offset();
    v = std::bit_cast<float>(in.u32());
    if (!std::isfinite(v)) {
      fail(ErrorKind::Format, source + ": non-finite feature value at byte offset " + std::to_string(at));
    }
  }
  bag.coords.resize(n);
  for (auto& c : bag.coords) {
    c[0] = static_cast<std::int32_t>(in.u32());
    c[1] = static_cast<std::int32_t>(in.u32());
  }
  return bag;
}

void save_feature_bag(const FeatureBag& bag, const std::filesystem::path& path) {
  const auto bytes = encode_feature_bag(bag);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::InvalidInput, "short write to " + path.string());
}

FeatureBag load_feature_bag(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InvalidInput, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_feature_bag(bytes, path.string());
}

}  // namespace sgmil
