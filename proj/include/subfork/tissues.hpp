#pragma once

// Default tissue label numbering of assembled head models. Labels 1..12 are
// whole-head tissues; the seven deep structures are embedded after them.

#include <array>
#include <string_view>

namespace subfork::tissue {

inline constexpr int kSkin = 1;
inline constexpr int kFat = 2;
inline constexpr int kMuscle = 3;
inline constexpr int kBoneCortical = 4;
inline constexpr int kBoneCancellous = 5;
inline constexpr int kBlood = 6;
inline constexpr int kVitreousHumor = 7;
inline constexpr int kCsf = 8;
inline constexpr int kGreyMatter = 9;
inline constexpr int kWhiteMatter = 10;
inline constexpr int kCerebellum = 11;
inline constexpr int kIntervertebralDisk = 12;

/// Offset added to deep-structure labels 1..7 when embedding them.
inline constexpr int kDeepOffset = 12;

inline constexpr std::array<std::string_view, 7> kDeepStructures{
    "Thalamus", "Caudate", "Putamen", "Pallidum", "Hippocampus", "Amygdala", "Accumbens"};

}  // namespace subfork::tissue
