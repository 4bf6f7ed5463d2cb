#include "affect/folds.hpp"

#include <algorithm>
#include <random>
#include <unordered_map>

#include "affect/errors.hpp"

namespace affect {

std::string video_of(const std::string& id) {
  const auto slash = id.rfind('/');
  if (slash == std::string::npos || slash == 0) {
    throw DataError("image id '" + id + "' has no video prefix");
  }
  return id.substr(0, slash);
}

std::vector<std::size_t> FoldPlan::members(std::span<const std::string> ids,
                                           std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (fold_of.at(ids[i]) == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::complement(std::span<const std::string> ids,
                                              std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (fold_of.at(ids[i]) != fold) out.push_back(i);
  }
  return out;
}

FoldPlan kfold_split(std::span<const std::string> ids, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("kfold_split: k must be positive");

  struct Video {
    std::string name;
    std::size_t frames = 0;
  };
  std::vector<Video> videos;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& id : ids) {
    auto v = video_of(id);
    auto [it, inserted] = index.emplace(v, videos.size());
    if (inserted) videos.push_back({std::move(v), 0});
    videos[it->second].frames++;
  }
  if (k > videos.size()) {
    throw ConfigError("kfold_split: k=" + std::to_string(k) + " exceeds the number of videos (" +
                      std::to_string(videos.size()) + ")");
  }

  std::mt19937_64 rng(seed);
  std::shuffle(videos.begin(), videos.end(), rng);
  std::stable_sort(videos.begin(), videos.end(),
                   [](const Video& a, const Video& b) { return a.frames > b.frames; });

  FoldPlan plan;
  plan.k = k;
  plan.frame_counts.assign(k, 0);
  plan.video_counts.assign(k, 0);
  std::unordered_map<std::string, std::size_t> fold_of_video;
  for (const auto& v : videos) {
    const auto lightest = static_cast<std::size_t>(
        std::min_element(plan.frame_counts.begin(), plan.frame_counts.end()) -
        plan.frame_counts.begin());
    fold_of_video[v.name] = lightest;
    plan.frame_counts[lightest] += v.frames;
    plan.video_counts[lightest]++;
  }
  for (const auto& id : ids) plan.fold_of[id] = fold_of_video.at(video_of(id));
  return plan;
}

}  // namespace affect
