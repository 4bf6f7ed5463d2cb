#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace affect {

inline constexpr std::size_t kNumAu = 12;
inline constexpr std::size_t kNumExpr = 8;
inline constexpr std::size_t kNumVa = 2;
// Query layout: AU [0,12), EXPR [12,20), VA [20,22).
inline constexpr std::size_t kNumQueries = kNumAu + kNumExpr + kNumVa;
inline constexpr std::size_t kNumFused = kNumExpr + kNumVa;

inline constexpr std::size_t kDefaultPatches = 289;
inline constexpr std::size_t kDefaultChannels = 1536;

inline constexpr std::array<std::string_view, kNumAu> kAuNames = {
    "au1", "au2", "au4", "au6", "au7", "au10", "au12", "au15", "au23", "au24", "au25", "au26"};

inline constexpr std::array<std::string_view, kNumExpr> kExpressionNames = {
    "neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise", "other"};

}  // namespace affect
