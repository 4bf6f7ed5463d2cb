#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "affect/constants.hpp"

namespace affect {

/// One image's backbone output: n_patches × n_channels, row-major.
struct FeatureMap {
  std::string id;
  std::vector<float> patches;
};

/// A dataset's features in one contiguous buffer, records in file order.
class FeatureSet {
 public:
  FeatureSet(std::size_t n_patches = kDefaultPatches, std::size_t n_channels = kDefaultChannels);

  std::size_t n_patches() const { return n_patches_; }
  std::size_t n_channels() const { return n_channels_; }
  std::size_t record_size() const { return n_patches_ * n_channels_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> record(std::size_t i) const;
  std::span<float> mutable_record(std::size_t i);

  /// Validates size and finiteness.
  void append(std::string id, std::span<const float> patches);
  void reserve(std::size_t n);

  /// Keeps the given records in the given order.
  FeatureSet subset(std::span<const std::size_t> indices) const;

 private:
  std::size_t n_patches_;
  std::size_t n_channels_;
  std::vector<std::string> ids_;
  std::vector<float> values_;
};

inline constexpr char kFeatureMagic[4] = {'A', 'F', 'F', '1'};
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureHeader {
  std::uint32_t version = kFeatureVersion;
  std::uint32_t count = 0;
  std::uint32_t n_patches = kDefaultPatches;
  std::uint32_t n_channels = kDefaultChannels;
};

/// Streaming reader over a feature container.
class FeatureReader {
 public:
  FeatureReader(const std::string& path, std::size_t expected_patches = kDefaultPatches,
                std::size_t expected_channels = kDefaultChannels);
  ~FeatureReader();

  const FeatureHeader& header() const { return header_; }
  /// False once all `count` records have been read.
  bool next(FeatureMap& out);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  FeatureHeader header_;
  std::uint32_t read_ = 0;
};

/// Streaming writer; the record count is patched into the header on close().
class FeatureWriter {
 public:
  FeatureWriter(const std::string& path, std::size_t n_patches = kDefaultPatches,
                std::size_t n_channels = kDefaultChannels);
  ~FeatureWriter();

  void write(const std::string& id, std::span<const float> patches);
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  std::size_t n_patches_, n_channels_;
  std::uint32_t count_ = 0;
  bool closed_ = false;
};

void save_features(const std::string& path, const FeatureSet& features);
FeatureSet load_features(const std::string& path, std::size_t expected_patches = kDefaultPatches,
                         std::size_t expected_channels = kDefaultChannels);

/// FNV-1a over the little-endian float payload of one record.
std::uint64_t feature_checksum(std::span<const float> patches);

}  // namespace affect
