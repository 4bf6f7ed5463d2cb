#include "affect/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "affect/errors.hpp"

namespace affect {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream tags keep teacher, ids and per-sample draws independent.
constexpr std::uint64_t kTeacherStream = 0x7465616368ULL;
constexpr std::uint64_t kIdStream = 0x696473ULL;
constexpr std::uint64_t kLatentStream = 1;
constexpr std::uint64_t kSentinelStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> v(n);
  for (auto& e : v) e = normal(rng);
  return v;
}

std::size_t resolved_videos(std::size_t n, const SyntheticOptions& options) {
  const std::size_t v = options.n_videos == 0 ? (n + 31) / 32 : options.n_videos;
  return std::max<std::size_t>(1, std::min(v, n));
}

}  // namespace

void SyntheticOptions::validate() const {
  if (!(sentinel_fraction >= 0.0 && sentinel_fraction <= 1.0)) {
    throw ConfigError("sentinel fraction must lie in [0, 1]");
  }
  if (latent_dim < kNumExpr) {
    throw ConfigError("latent_dim must be at least " + std::to_string(kNumExpr));
  }
  if (n_patches == 0 || n_channels == 0) throw ConfigError("feature dimensions must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be non-negative");
}

SyntheticTeacher::SyntheticTeacher(std::uint64_t seed, const SyntheticOptions& options)
    : seed_(seed), options_(options) {
  options_.validate();
  const std::size_t d = options_.latent_dim;
  std::mt19937_64 rng(splitmix64(seed ^ kTeacherStream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t j = 0; j < kNumAu; ++j) {
    au_w_.push_back(gaussian_vector(rng, d, 1.0));
    // Offset in units of |w| so that the positive rate is Phi(u), u in [-1, 0.25].
    const double u = -1.0 + 1.25 * unit(rng);
    au_b_[j] = u * std::sqrt(dot(au_w_[j], au_w_[j]));
  }

  // Orthonormal expression directions make the class logits independent.
  for (std::size_t c = 0; c < kNumExpr; ++c) {
    auto v = gaussian_vector(rng, d, 1.0);
    for (const auto& prev : expr_u_) {
      const double p = dot(v, prev);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * prev[i];
    }
    const double norm = std::sqrt(dot(v, v));
    for (auto& e : v) e /= norm;
    expr_u_.push_back(std::move(v));
    expr_scale_[c] = 1.5 + unit(rng);
    expr_bias_[c] = -1.0 + 2.0 * unit(rng);
  }

  valence_w_ = gaussian_vector(rng, d, 0.8 / std::sqrt(static_cast<double>(d)));
  arousal_w_ = gaussian_vector(rng, d, 0.8 / std::sqrt(static_cast<double>(d)));

  std::normal_distribution<float> lift_normal(0.0f, 1.0f / std::sqrt(static_cast<float>(d)));
  lift_.resize(d * options_.n_channels);
  for (auto& e : lift_) e = lift_normal(rng);
  std::uniform_real_distribution<float> scale(0.5f, 1.5f);
  patch_scale_.resize(options_.n_patches);
  for (auto& e : patch_scale_) e = scale(rng);
  std::normal_distribution<float> pattern_normal(0.0f, 0.5f);
  pattern_.resize(options_.n_patches * options_.n_channels);
  for (auto& e : pattern_) e = pattern_normal(rng);
}

double SyntheticTeacher::au_positive_rate(std::size_t j) const {
  return normal_cdf(au_b_.at(j) / std::sqrt(dot(au_w_[j], au_w_[j])));
}

std::uint64_t SyntheticTeacher::stream_seed(std::uint64_t sample_index, std::uint64_t stream) const {
  return splitmix64(splitmix64(seed_ ^ splitmix64(sample_index + 1)) + stream);
}

std::vector<double> SyntheticTeacher::draw_latent(std::uint64_t sample_index) const {
  std::mt19937_64 rng(stream_seed(sample_index, kLatentStream));
  return gaussian_vector(rng, options_.latent_dim, 1.0);
}

LabelRecord SyntheticTeacher::label(std::span<const double> latent) const {
  if (latent.size() != options_.latent_dim) throw ShapeError("latent has wrong dimension");
  LabelRecord r;
  for (std::size_t j = 0; j < kNumAu; ++j) r.au[j] = dot(au_w_[j], latent) + au_b_[j] > 0.0 ? 1 : 0;
  int best = 0;
  double best_logit = -INFINITY;
  for (std::size_t c = 0; c < kNumExpr; ++c) {
    const double logit = expr_scale_[c] * dot(expr_u_[c], latent) + expr_bias_[c];
    if (logit > best_logit) {
      best_logit = logit;
      best = static_cast<int>(c);
    }
  }
  r.expression = best;
  r.valence = static_cast<float>(std::tanh(dot(valence_w_, latent)));
  r.arousal = static_cast<float>(std::tanh(dot(arousal_w_, latent)));
  return r;
}

void SyntheticTeacher::apply_sentinels(std::uint64_t sample_index, LabelRecord& record) const {
  std::mt19937_64 rng(stream_seed(sample_index, kSentinelStream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double f = options_.sentinel_fraction;
  const bool drop_va = unit(rng) < f;
  const bool drop_expr = unit(rng) < f;
  const bool drop_au = unit(rng) < f;
  if (drop_va) record.valence = record.arousal = kInvalidVa;
  if (drop_expr) record.expression = kInvalidExpr;
  if (drop_au) record.au = filled_au(kInvalidAu);
}

void SyntheticTeacher::lift(std::span<const double> latent, std::uint64_t sample_index,
                            std::span<float> out) const {
  const std::size_t P = options_.n_patches, C = options_.n_channels, d = options_.latent_dim;
  if (out.size() != P * C) throw ShapeError("lift output has wrong size");
  std::vector<float> s(C, 0.0f);
  for (std::size_t k = 0; k < d; ++k) {
    const float z = static_cast<float>(latent[k]);
    const float* row = lift_.data() + k * C;
    for (std::size_t c = 0; c < C; ++c) s[c] += z * row[c];
  }
  std::mt19937_64 rng(stream_seed(sample_index, kNoiseStream));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const auto noise = static_cast<float>(options_.noise);
  for (std::size_t p = 0; p < P; ++p) {
    const float a = patch_scale_[p];
    const float* pat = pattern_.data() + p * C;
    float* o = out.data() + p * C;
    for (std::size_t c = 0; c < C; ++c) o[c] = a * s[c] + pat[c] + noise * normal(rng);
  }
}

std::vector<std::string> synthetic_ids(std::size_t n, std::uint64_t seed,
                                       const SyntheticOptions& options) {
  const std::size_t V = resolved_videos(n, options);
  std::mt19937_64 rng(splitmix64(seed ^ kIdStream));
  std::uniform_real_distribution<double> weight(0.5, 1.5);
  std::vector<double> w(V);
  for (auto& e : w) e = weight(rng);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);

  // Every video gets one frame; the rest is split by weight with largest remainders.
  const std::size_t spare = n - V;
  std::vector<std::size_t> len(V, 1);
  std::vector<std::pair<double, std::size_t>> remainders(V);
  std::size_t assigned = 0;
  for (std::size_t v = 0; v < V; ++v) {
    const double share = static_cast<double>(spare) * w[v] / total;
    const auto whole = static_cast<std::size_t>(std::floor(share));
    len[v] += whole;
    assigned += whole;
    remainders[v] = {share - static_cast<double>(whole), v};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < spare; ++i, ++assigned) len[remainders[i % V].second]++;

  std::vector<std::string> ids;
  ids.reserve(n);
  char buf[64];
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t f = 0; f < len[v]; ++f) {
      std::snprintf(buf, sizeof buf, "video_%04zu/%05zu", v, f);
      ids.emplace_back(buf);
    }
  }
  return ids;
}

void for_each_synthetic(std::size_t n, std::uint64_t seed, const SyntheticOptions& options,
                        const std::function<void(const LabelRecord&, std::span<const float>)>& fn) {
  if (n == 0) throw ConfigError("gen_synthetic: n must be at least 1");
  SyntheticTeacher teacher(seed, options);
  const auto ids = synthetic_ids(n, seed, options);
  std::vector<float> features(options.n_patches * options.n_channels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = teacher.draw_latent(i);
    auto rec = teacher.label(z);
    rec.id = ids[i];
    teacher.apply_sentinels(i, rec);
    teacher.lift(z, i, features);
    fn(rec, features);
  }
}

SyntheticDataset gen_synthetic(std::size_t n, std::uint64_t seed, const SyntheticOptions& options) {
  SyntheticDataset out{FeatureSet(options.n_patches, options.n_channels), {}};
  out.features.reserve(n);
  out.labels.reserve(n);
  for_each_synthetic(n, seed, options, [&](const LabelRecord& r, std::span<const float> f) {
    out.labels.push_back(r);
    out.features.append(r.id, f);
  });
  return out;
}

std::vector<LabelRecord> gen_synthetic_labels(std::size_t n, std::uint64_t seed,
                                              const SyntheticOptions& options) {
  if (n == 0) throw ConfigError("gen_synthetic: n must be at least 1");
  SyntheticTeacher teacher(seed, options);
  const auto ids = synthetic_ids(n, seed, options);
  std::vector<LabelRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rec = teacher.label(teacher.draw_latent(i));
    rec.id = ids[i];
    teacher.apply_sentinels(i, rec);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace affect
