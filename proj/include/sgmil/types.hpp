#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace sgmil {

/// Objective magnification of a raster or feature bag. The value is the
/// nominal zoom factor.
enum class Magnification : std::uint8_t { X5 = 5, X10 = 10, X20 = 20 };

inline constexpr std::array<Magnification, 3> kAllMagnifications = {
    Magnification::X5, Magnification::X10, Magnification::X20};

/// Index of a magnification in kAllMagnifications (0, 1, 2).
std::size_t scale_index(Magnification m);
Magnification magnification_from_int(int value);
Magnification parse_magnification(std::string_view text);
std::string to_string(Magnification m);

inline constexpr std::size_t kNumCancerTypes = 7;

enum class CancerType : std::uint8_t { COAD, STAD, LUAD, LUSC, BLCA, HNSC, UCEC };

CancerType cancer_type_from_index(int index);
CancerType parse_cancer_type(std::string_view text);
std::string to_string(CancerType t);

enum class TmbClass : std::uint8_t { Low = 0, High = 1 };

TmbClass parse_tmb_class(std::string_view text);
std::string to_string(TmbClass c);

}  // namespace sgmil
