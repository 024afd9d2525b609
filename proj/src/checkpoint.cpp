#include "sgmil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "sgmil/error.hpp"

namespace sgmil {

namespace {

constexpr char kMagic[5] = {'S', 'G', 'M', 'C', 'K'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorKind::Format, source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) error("truncated checkpoint");
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
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const auto len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  bool magic_ok() {
    need(sizeof(kMagic));
    const bool ok = std::memcmp(bytes_.data(), kMagic, sizeof(kMagic)) == 0;
    pos_ += sizeof(kMagic);
    return ok;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const ScaleModel* Checkpoint::find(Magnification m) const {
  for (const auto& s : scales) {
    if (s.magnification == m) return &s;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Writer w;
  w.buf.assign(std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);
  for (double v : ckpt.ensemble_weights) w.f64(v);
  w.u32(static_cast<std::uint32_t>(ckpt.scales.size()));
  for (const auto& s : ckpt.scales) {
    if (!(s.online.shape == s.ema.shape)) fail(ErrorKind::InvalidInput, "online and EMA shapes differ");
    const auto& shape = s.online.shape;
    w.u8(static_cast<std::uint8_t>(s.magnification));
    w.u32(static_cast<std::uint32_t>(shape.input_dim));
    w.u32(static_cast<std::uint32_t>(shape.width));
    w.u32(static_cast<std::uint32_t>(shape.attn_dim));
    w.u32(static_cast<std::uint32_t>(shape.blocks));
    const auto online = s.online.tensors();
    const auto ema = s.ema.tensors();
    w.u32(static_cast<std::uint32_t>(online.size() + ema.size()));
    for (const auto* set : {&online, &ema}) {
      const std::string prefix = set == &online ? "online/" : "ema/";
      for (const auto& t : *set) {
        w.str(prefix + t.name);
        w.u32(static_cast<std::uint32_t>(t.tensor->rows()));
        w.u32(static_cast<std::uint32_t>(t.tensor->cols()));
        for (double v : t.tensor->values()) w.f64(v);
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InvalidInput, "cannot open checkpoint " + path.string());
  Reader r(std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()),
           path.string());
  if (!r.magic_ok()) r.error("bad magic (expected SGMCK)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  for (double& v : ckpt.ensemble_weights) v = r.f64();
  const auto n_scales = r.u32();
  for (std::uint32_t s = 0; s < n_scales; ++s) {
    ScaleModel sm;
    const auto mag = r.u8();
    if (mag != 5 && mag != 10 && mag != 20) r.error("invalid magnification");
    sm.magnification = static_cast<Magnification>(mag);
    ModelShape shape;
    shape.input_dim = r.u32();
    shape.width = r.u32();
    shape.attn_dim = r.u32();
    shape.blocks = r.u32();
    if (shape.input_dim == 0 || shape.width == 0 || shape.attn_dim == 0 || shape.blocks == 0) {
      r.error("invalid model shape");
    }
    sm.online = ModelParams::zeros(shape);
    sm.ema = ModelParams::zeros(shape);
    std::map<std::string, Matrix*> slots;
    for (auto& t : sm.online.tensors()) slots["online/" + t.name] = t.tensor;
    for (auto& t : sm.ema.tensors()) slots["ema/" + t.name] = t.tensor;
    const auto count = r.u32();
    if (count != slots.size()) r.error("tensor count " + std::to_string(count) + " does not match model shape");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto name = r.str();
      auto it = slots.find(name);
      if (it == slots.end()) r.error("unknown or duplicate tensor '" + name + "'");
      const auto rows = r.u32(), cols = r.u32();
      if (rows != it->second->rows() || cols != it->second->cols()) r.error("tensor '" + name + "' has wrong shape");
      for (double& v : it->second->values()) v = r.f64();
      slots.erase(it);
    }
    ckpt.scales.push_back(std::move(sm));
  }
  if (!r.at_end()) r.error("trailing bytes after checkpoint");
  return ckpt;
}

}  // namespace sgmil
