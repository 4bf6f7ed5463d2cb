#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace affect {

/// Video prefix of an image id: everything before the last '/'.
std::string video_of(const std::string& id);

struct FoldPlan {
  std::size_t k = 0;
  std::map<std::string, std::size_t> fold_of;  // image id -> fold
  std::vector<std::size_t> frame_counts;       // per fold
  std::vector<std::size_t> video_counts;       // per fold

  /// Indices into `ids` whose fold equals / differs from `fold`.
  std::vector<std::size_t> members(std::span<const std::string> ids, std::size_t fold) const;
  std::vector<std::size_t> complement(std::span<const std::string> ids, std::size_t fold) const;
};

/// Greedy balanced assignment of whole videos to k folds by frame count:
/// largest video first (seeded tie order), each to the currently lightest fold.
FoldPlan kfold_split(std::span<const std::string> ids, std::size_t k, std::uint64_t seed);

}  // namespace affect
