#include "affect/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "affect/binary_io.hpp"
#include "affect/errors.hpp"

namespace affect {

namespace binary {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for checksumming");
  std::vector<char> buf(1 << 20);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = static_cast<std::size_t>(in.gcount());
    h = fnv1a64(std::as_bytes(std::span(buf.data(), n)), h);
  }
  return h;
}

}  // namespace binary

FeatureSet::FeatureSet(std::size_t n_patches, std::size_t n_channels)
    : n_patches_(n_patches), n_channels_(n_channels) {
  if (n_patches == 0 || n_channels == 0) throw ShapeError("feature set dimensions must be positive");
}

std::span<const float> FeatureSet::record(std::size_t i) const {
  return std::span<const float>(values_).subspan(i * record_size(), record_size());
}

std::span<float> FeatureSet::mutable_record(std::size_t i) {
  return std::span<float>(values_).subspan(i * record_size(), record_size());
}

void FeatureSet::append(std::string id, std::span<const float> patches) {
  if (patches.size() != record_size()) {
    throw ShapeError("feature record '" + id + "' has " + std::to_string(patches.size()) +
                     " values, expected " + std::to_string(n_patches_) + "x" +
                     std::to_string(n_channels_));
  }
  for (float v : patches) {
    if (!std::isfinite(v)) throw DataError("feature record '" + id + "' contains non-finite values");
  }
  ids_.push_back(std::move(id));
  values_.insert(values_.end(), patches.begin(), patches.end());
}

void FeatureSet::reserve(std::size_t n) {
  ids_.reserve(n);
  values_.reserve(n * record_size());
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> indices) const {
  FeatureSet out(n_patches_, n_channels_);
  out.reserve(indices.size());
  for (auto i : indices) {
    out.ids_.push_back(ids_.at(i));
    const auto r = record(i);
    out.values_.insert(out.values_.end(), r.begin(), r.end());
  }
  return out;
}

struct FeatureReader::Impl {
  std::ifstream file;
  binary::Reader reader;
  Impl(const std::string& path) : file(path, std::ios::binary), reader(file, path) {}
};

FeatureReader::FeatureReader(const std::string& path, std::size_t expected_patches,
                             std::size_t expected_channels)
    : impl_(std::make_unique<Impl>(path)) {
  if (!impl_->file) throw FormatError("cannot open feature container '" + path + "'");
  char magic[4];
  impl_->reader.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kFeatureMagic)) {
    throw FormatError(path + ": bad magic, not an AFF1 feature container");
  }
  header_.version = impl_->reader.u32("version");
  if (header_.version != kFeatureVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(header_.version));
  }
  header_.count = impl_->reader.u32("record count");
  header_.n_patches = impl_->reader.u32("n_patches");
  header_.n_channels = impl_->reader.u32("n_channels");
  if (header_.n_patches != expected_patches) {
    throw ShapeError(path + ": patch dimension is " + std::to_string(header_.n_patches) +
                     ", expected " + std::to_string(expected_patches));
  }
  if (header_.n_channels != expected_channels) {
    throw ShapeError(path + ": channel dimension is " + std::to_string(header_.n_channels) +
                     ", expected " + std::to_string(expected_channels));
  }
}

FeatureReader::~FeatureReader() = default;

bool FeatureReader::next(FeatureMap& out) {
  if (read_ >= header_.count) return false;
  const std::string where = "record " + std::to_string(read_);
  auto& r = impl_->reader;
  out.id = r.string16(where + " id");
  out.patches.resize(static_cast<std::size_t>(header_.n_patches) * header_.n_channels);
  r.floats(out.patches, where + " payload");
  for (float v : out.patches) {
    if (!std::isfinite(v)) {
      throw DataError(r.origin() + ": " + where + " ('" + out.id + "') has non-finite values");
    }
  }
  ++read_;
  return true;
}

FeatureWriter::FeatureWriter(const std::string& path, std::size_t n_patches,
                             std::size_t n_channels)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc),
      n_patches_(n_patches), n_channels_(n_channels) {
  if (!out_) throw FormatError("cannot write feature container '" + path + "'");
  out_.write(kFeatureMagic, 4);
  binary::write_u32(out_, kFeatureVersion);
  binary::write_u32(out_, 0);
  binary::write_u32(out_, static_cast<std::uint32_t>(n_patches));
  binary::write_u32(out_, static_cast<std::uint32_t>(n_channels));
}

FeatureWriter::~FeatureWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void FeatureWriter::write(const std::string& id, std::span<const float> patches) {
  if (patches.size() != n_patches_ * n_channels_) {
    throw ShapeError("feature record '" + id + "' has wrong size " +
                     std::to_string(patches.size()));
  }
  binary::write_string16(out_, id);
  binary::write_floats(out_, patches);
  ++count_;
}

void FeatureWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(8);
  binary::write_u32(out_, count_);
  out_.close();
  if (!out_) throw FormatError("failed writing feature container '" + path_ + "'");
}

void save_features(const std::string& path, const FeatureSet& features) {
  FeatureWriter writer(path, features.n_patches(), features.n_channels());
  for (std::size_t i = 0; i < features.size(); ++i) writer.write(features.ids()[i], features.record(i));
  writer.close();
}

FeatureSet load_features(const std::string& path, std::size_t expected_patches,
                         std::size_t expected_channels) {
  FeatureReader reader(path, expected_patches, expected_channels);
  FeatureSet out(expected_patches, expected_channels);
  out.reserve(reader.header().count);
  FeatureMap record;
  while (reader.next(record)) out.append(std::move(record.id), record.patches);
  return out;
}

std::uint64_t feature_checksum(std::span<const float> patches) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float f : patches) {
    const std::uint32_t bits = binary::to_little(std::bit_cast<std::uint32_t>(f));
    h = binary::fnv1a64(std::as_bytes(std::span(&bits, 1)), h);
  }
  return h;
}

}  // namespace affect
