#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "affect/constants.hpp"
#include "affect/features.hpp"
#include "affect/labels.hpp"

namespace affect {

struct SyntheticOptions {
  double sentinel_fraction = 0.1;  // per task, per sample
  std::size_t latent_dim = 16;
  std::size_t n_patches = kDefaultPatches;
  std::size_t n_channels = kDefaultChannels;
  double noise = 0.1;
  std::size_t n_videos = 0;  // 0: one video per 32 frames, rounded up

  void validate() const;
};

/// Hidden linear teacher mapping a standard-normal latent z to labels:
///   AU_j   = [w_j·z + b_j > 0]
///   EXPR   = argmax_c (s_c·(u_c·z) + b_c), u_c orthonormal
///   V, A   = tanh(w_v·z), tanh(w_a·z)
/// and features F[p, c] = a_p·(z·L)[c] + pattern[p, c] + noise·N(0, 1).
class SyntheticTeacher {
 public:
  SyntheticTeacher(std::uint64_t seed, const SyntheticOptions& options);

  const SyntheticOptions& options() const { return options_; }

  /// P(AU_j = 1) = Phi(b_j / |w_j|).
  double au_positive_rate(std::size_t j) const;
  // Expression logits are independent Gaussians N(mean_c, std_c^2).
  double expr_logit_mean(std::size_t c) const { return expr_bias_[c]; }
  double expr_logit_std(std::size_t c) const { return expr_scale_[c]; }

  std::vector<double> draw_latent(std::uint64_t sample_index) const;
  /// Labels before sentinel replacement.
  LabelRecord label(std::span<const double> latent) const;
  void apply_sentinels(std::uint64_t sample_index, LabelRecord& record) const;
  void lift(std::span<const double> latent, std::uint64_t sample_index, std::span<float> out) const;

 private:
  std::uint64_t stream_seed(std::uint64_t sample_index, std::uint64_t stream) const;

  std::uint64_t seed_;
  SyntheticOptions options_;
  std::vector<std::vector<double>> au_w_;
  std::array<double, kNumAu> au_b_{};
  std::vector<std::vector<double>> expr_u_;
  std::array<double, kNumExpr> expr_scale_{};
  std::array<double, kNumExpr> expr_bias_{};
  std::vector<double> valence_w_, arousal_w_;
  std::vector<float> lift_;     // latent_dim × n_channels
  std::vector<float> patch_scale_;
  std::vector<float> pattern_;  // n_patches × n_channels
};

/// Image ids "video_XXXX/YYYYY" for n frames split across videos of uneven length.
std::vector<std::string> synthetic_ids(std::size_t n, std::uint64_t seed,
                                       const SyntheticOptions& options);

struct SyntheticDataset {
  FeatureSet features;
  std::vector<LabelRecord> labels;
};

SyntheticDataset gen_synthetic(std::size_t n, std::uint64_t seed,
                               const SyntheticOptions& options = {});

/// Same labels as gen_synthetic, without materializing features.
std::vector<LabelRecord> gen_synthetic_labels(std::size_t n, std::uint64_t seed,
                                              const SyntheticOptions& options = {});

/// Streams samples one at a time (used to write large containers).
void for_each_synthetic(std::size_t n, std::uint64_t seed, const SyntheticOptions& options,
                        const std::function<void(const LabelRecord&, std::span<const float>)>& fn);

}  // namespace affect
