#include "sgmil/types.hpp"

#include "sgmil/error.hpp"

namespace sgmil {

namespace {
constexpr std::array<std::string_view, kNumCancerTypes> kCancerNames = {
    "COAD", "STAD", "LUAD", "LUSC", "BLCA", "HNSC", "UCEC"};
}

std::size_t scale_index(Magnification m) {
  switch (m) {
    case Magnification::X5: return 0;
    case Magnification::X10: return 1;
    case Magnification::X20: return 2;
  }
  fail(ErrorKind::InvalidInput, "unknown magnification");
}

Magnification magnification_from_int(int value) {
  switch (value) {
    case 5: return Magnification::X5;
    case 10: return Magnification::X10;
    case 20: return Magnification::X20;
    default:
      fail(ErrorKind::InvalidInput,
           "unsupported magnification " + std::to_string(value) + " (expected 5, 10 or 20)");
  }
}

Magnification parse_magnification(std::string_view text) {
  if (!text.empty() && (text.front() == 'x' || text.front() == 'X')) text.remove_prefix(1);
  if (text == "5") return Magnification::X5;
  if (text == "10") return Magnification::X10;
  if (text == "20") return Magnification::X20;
  fail(ErrorKind::InvalidInput, "unsupported magnification '" + std::string(text) + "'");
}

std::string to_string(Magnification m) { return std::to_string(static_cast<int>(m)); }

CancerType cancer_type_from_index(int index) {
  if (index < 0 || index >= static_cast<int>(kNumCancerTypes)) {
    fail(ErrorKind::InvalidInput, "cancer type index out of range: " + std::to_string(index));
  }
  return static_cast<CancerType>(index);
}

CancerType parse_cancer_type(std::string_view text) {
  for (std::size_t i = 0; i < kCancerNames.size(); ++i) {
    if (kCancerNames[i] == text) return static_cast<CancerType>(i);
  }
  fail(ErrorKind::InvalidInput, "unknown cancer type '" + std::string(text) + "'");
}

std::string to_string(CancerType t) {
  return std::string(kCancerNames.at(static_cast<std::size_t>(t)));
}

TmbClass parse_tmb_class(std::string_view text) {
  if (text == "TMB_H" || text == "1" || text == "H") return TmbClass::High;
  if (text == "TMB_L" || text == "0" || text == "L") return TmbClass::Low;
  fail(ErrorKind::InvalidInput, "unknown label '" + std::string(text) + "'");
}

std::string to_string(TmbClass c) { return c == TmbClass::High ? "TMB_H" : "TMB_L"; }

}  // namespace sgmil
