#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <cstring>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "affect/errors.hpp"
#include "affect/features.hpp"
#include "affect/folds.hpp"
#include "affect/labels.hpp"
#include "affect/synthetic.hpp"
#include "test_util.hpp"

namespace affect {
namespace {

const std::string kFixtures = AFFECT_FIXTURE_DIR;

LabelRecord make(std::string id, float v, float a, int e, std::array<int, kNumAu> au,
                 LabelSource vs = LabelSource::annotated, LabelSource es = LabelSource::annotated,
                 LabelSource as = LabelSource::annotated) {
  LabelRecord r;
  r.id = std::move(id);
  r.valence = v;
  r.arousal = a;
  r.expression = e;
  r.au = au;
  r.va_source = vs;
  r.expr_source = es;
  r.au_source = as;
  return r;
}

const std::string kHeader = labels_csv_header();

TEST(Labels, SentinelRow) {
  auto r = parse_labels(kHeader + "\nv1/f1,-5,-5,3,1,0,0,0,0,0,0,0,0,0,0,0\n");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_FALSE(r[0].va_valid());
  EXPECT_EQ(r[0].expression, 3);
  EXPECT_EQ(kExpressionNames[3], "fear");
  EXPECT_TRUE(r[0].au_valid());
}

TEST(Labels, RejectsBadRowsWithLineNumber) {
  auto expect_line = [](const std::string& body, const std::string& needle) {
    try {
      parse_labels(kHeader + "\nv/1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0\n" + body + "\n", "f.csv");
      FAIL() << body;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_line("v/2,0,0,9,0,0,0,0,0,0,0,0,0,0,0,0", "f.csv:3");
  expect_line("v/2,0.5,-5,1,0,0,0,0,0,0,0,0,0,0,0,0", "both");
  expect_line("v/2,1.5,0,1,0,0,0,0,0,0,0,0,0,0,0,0", "outside");
  expect_line("v/2,0,0,1,2,0,0,0,0,0,0,0,0,0,0,0", "au1");
  expect_line("v/2,0,0,1,0,0", "fields");
  expect_line("v/2,x,0,1,0,0,0,0,0,0,0,0,0,0,0,0", "valence");
  EXPECT_THROW(parse_labels("image,valence\n"), DataError);
}

TEST(Labels, GoldenFixture) {
  const auto got = load_labels(kFixtures + "/labels_5.csv");
  const std::vector<LabelRecord> expected{
      make("v1/f1", -5, -5, 3, {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0}),
      make("v1/f2", 0.25f, -0.5f, 0, filled_au(0)),
      make("v2/f1", 1, -1, -1, filled_au(-1)),
      make("v2/f2", -0.125f, 0.75f, 7, filled_au(1)),
      make("v3/f1", 0, 0, 4, {0, 1, 0, -1, 0, 1, 0, 0, 0, 0, 0, 0}),
  };
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], expected[i]) << i;
  EXPECT_FALSE(got[4].au_valid());  // one -1 unit invalidates the vector
  const auto m = validity(got[2]);
  EXPECT_TRUE(m.va);
  EXPECT_FALSE(m.expr);
  EXPECT_FALSE(m.au);
}

TEST(Labels, SaveLoadRoundTrip) {
  testing::TempDir dir("labels");
  const auto labels = load_labels(kFixtures + "/labels_5.csv");
  save_labels(dir / "out.csv", labels);
  EXPECT_EQ(load_labels(dir / "out.csv"), labels);
}

TEST(Merge, Examples) {
  std::vector<LabelRecord> primary{make("x/1", -5, -5, -1, filled_au(0)),
                                   make("x/2", -5, -5, 2, filled_au(0))};
  std::vector<LabelRecord> pseudo{make("x/1", -5, -5, 4, filled_au(0)),
                                  make("x/2", -5, -5, 5, filled_au(0))};
  auto m = merge_pseudo_labels(primary, pseudo);
  EXPECT_EQ(m.labels[0].expression, 4);
  EXPECT_EQ(m.labels[0].expr_source, LabelSource::pseudo);
  EXPECT_EQ(m.labels[1].expression, 2);
  EXPECT_EQ(m.labels[1].expr_source, LabelSource::annotated);
}

TEST(Merge, GoldenFixture) {
  const auto m = merge_pseudo_labels(load_labels(kFixtures + "/merge_primary.csv"),
                                     load_labels(kFixtures + "/merge_pseudo.csv"));
  constexpr auto A = LabelSource::annotated, P = LabelSource::pseudo;
  const std::vector<LabelRecord> expected{
      make("a/1", 0.2f, 0.3f, 4, filled_au(1), P, P, P),
      make("a/2", 0.5f, 0.5f, 2, {1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}),
      make("a/3", -5, -5, 1, {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1}),
      make("b/1", 0.1f, -0.2f, 3, {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, A, P, P),
      make("b/2", 0.6f, -0.6f, -1, {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, P, A, A),
      make("b/3", -0.3f, 0.4f, 6, {1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}),
  };
  ASSERT_EQ(m.labels.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(m.labels[i], expected[i]) << i;
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("zz/9"), std::string::npos);
}

std::vector<LabelRecord> au_column(std::vector<int> unit0) {
  std::vector<LabelRecord> out;
  for (int v : unit0) {
    auto au = filled_au(0);
    au[0] = v;
    out.push_back(make("v/" + std::to_string(out.size()), -5, -5, -1, au));
  }
  return out;
}

TEST(ClassWeights, Examples) {
  EXPECT_EQ(compute_class_weights(au_column({1, 0, 0, 1})).au_pos_weight[0], 1.0);
  EXPECT_EQ(compute_class_weights(au_column({1, 0, 0, 0})).au_pos_weight[0], 3.0);
  EXPECT_EQ(compute_class_weights(au_column({1, 1, 1, 1})).au_pos_weight[0], kMinClassWeight);

  std::vector<LabelRecord> expr;
  for (int c : {0, 0, 0, 1}) expr.push_back(make("v/" + std::to_string(expr.size()), -5, -5, c, filled_au(-1)));
  const auto w = compute_class_weights(expr);
  EXPECT_NEAR(w.expr_weight[0], 4.0 / (8 * 3), 1e-15);
  EXPECT_NEAR(w.expr_weight[1], 4.0 / 8, 1e-15);
  EXPECT_EQ(w.expr_weight[2], kMaxClassWeight);  // absent class
  for (double x : w.au_pos_weight) EXPECT_EQ(x, 1.0);  // no valid AU vectors
}

FeatureSet small_features(std::size_t n, std::size_t p, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  FeatureSet fs(p, c);
  std::vector<float> rec(p * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : rec) x = g(rng);
    fs.append("vid/" + std::to_string(i), rec);
  }
  return fs;
}

TEST(Features, RoundTripBitExact) {
  testing::TempDir dir("features");
  const auto fs = small_features(5, 3, 4, 1);
  save_features(dir / "a.aff", fs);
  const auto back = load_features(dir / "a.aff", 3, 4);
  ASSERT_EQ(back.ids(), fs.ids());
  for (std::size_t i = 0; i < fs.size(); ++i) {
    EXPECT_EQ(std::memcmp(back.record(i).data(), fs.record(i).data(), fs.record(i).size_bytes()), 0);
  }
  save_features(dir / "b.aff", back);
  EXPECT_EQ(testing::read_file(dir / "a.aff"), testing::read_file(dir / "b.aff"));
}

TEST(Features, FullSizeRecordChecksum) {
  testing::TempDir dir("features_full");
  const auto fs = small_features(1, kDefaultPatches, kDefaultChannels, 2);
  const auto before = feature_checksum(fs.record(0));
  save_features(dir / "one.aff", fs);
  EXPECT_EQ(feature_checksum(load_features(dir / "one.aff").record(0)), before);
}

TEST(Features, EmptyContainer) {
  testing::TempDir dir("features_empty");
  save_features(dir / "e.aff", FeatureSet(2, 2));
  FeatureReader reader(dir / "e.aff", 2, 2);
  FeatureMap m;
  EXPECT_EQ(reader.header().count, 0u);
  EXPECT_FALSE(reader.next(m));
  EXPECT_EQ(testing::read_file(dir / "e.aff").size(), 20u);
}

TEST(Features, ErrorsNameTheProblem) {
  testing::TempDir dir("features_bad");
  save_features(dir / "ok.aff", small_features(3, 2, 2, 3));
  const auto bytes = testing::read_file(dir / "ok.aff");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  auto message = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind() + ": " + e.what();
    }
    return std::string("no error");
  };

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_NE(message([&] { load_features(write("m.aff", bad_magic), 2, 2); }).find("format: "), std::string::npos);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_NE(message([&] { load_features(write("v.aff", bad_version), 2, 2); }).find("version"), std::string::npos);
  EXPECT_NE(message([&] { load_features(dir / "ok.aff", 3, 2); }).find("patch"), std::string::npos);
  EXPECT_NE(message([&] { load_features(dir / "ok.aff", 2, 5); }).find("channel"), std::string::npos);
  const auto truncated = message([&] { load_features(write("t.aff", bytes.substr(0, bytes.size() - 3)), 2, 2); });
  EXPECT_NE(truncated.find("record 2"), std::string::npos) << truncated;
  EXPECT_NE(truncated.find("truncated"), std::string::npos) << truncated;

  FeatureSet fs(1, 2);
  const std::vector<float> nan{1.0f, std::nanf("")};
  EXPECT_THROW(fs.append("x/1", nan), DataError);
  EXPECT_THROW(fs.append("x/1", std::vector<float>{1.0f}), ShapeError);
}

std::vector<std::string> video_ids(const std::vector<std::size_t>& lengths) {
  std::vector<std::string> ids;
  for (std::size_t v = 0; v < lengths.size(); ++v) {
    for (std::size_t f = 0; f < lengths[v]; ++f) ids.push_back("vid" + std::to_string(v) + "/" + std::to_string(f));
  }
  return ids;
}

void expect_partition(const FoldPlan& plan, const std::vector<std::string>& ids) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (std::size_t f = 0; f < plan.k; ++f) {
    const auto m = plan.members(ids, f);
    total += m.size();
    seen.insert(m.begin(), m.end());
    EXPECT_EQ(m.size() + plan.complement(ids, f).size(), ids.size());
  }
  EXPECT_EQ(total, ids.size());
  EXPECT_EQ(seen.size(), ids.size());
  std::map<std::string, std::size_t> fold_of_video;
  for (const auto& id : ids) {
    auto [it, inserted] = fold_of_video.emplace(video_of(id), plan.fold_of.at(id));
    EXPECT_EQ(it->second, plan.fold_of.at(id)) << id;
  }
}

TEST(Folds, EqualVideos) {
  const auto ids = video_ids(std::vector<std::size_t>(12, 10));
  const auto plan = kfold_split(ids, 6, 0);
  expect_partition(plan, ids);
  for (auto n : plan.video_counts) EXPECT_EQ(n, 2u);
}

TEST(Folds, SkewedVideosBalanced) {
  const auto ids = video_ids({100, 50, 50, 25, 25, 25, 25});
  const auto plan = kfold_split(ids, 2, 7);
  expect_partition(plan, ids);
  for (auto n : plan.frame_counts) {
    EXPECT_GE(n, 120u);
    EXPECT_LE(n, 180u);
  }
  EXPECT_EQ(plan.frame_counts, (std::vector<std::size_t>{150, 150}));
}

TEST(Folds, DeterministicAndErrors) {
  const auto ids = video_ids({5, 7, 3, 9, 4, 6, 8});
  EXPECT_EQ(kfold_split(ids, 3, 1).fold_of, kfold_split(ids, 3, 1).fold_of);
  EXPECT_THROW(kfold_split(ids, 8, 0), ConfigError);
  EXPECT_THROW(kfold_split(ids, 0, 0), ConfigError);
  EXPECT_THROW(kfold_split(std::vector<std::string>{"noprefix"}, 1, 0), DataError);
}

SyntheticOptions tiny_options(double frac = 0.1) {
  SyntheticOptions o;
  o.n_patches = 4;
  o.n_channels = 6;
  o.sentinel_fraction = frac;
  return o;
}

TEST(Synthetic, SameSeedSameBytes) {
  testing::TempDir dir("synthetic");
  const auto a = gen_synthetic(50, 3, tiny_options());
  const auto b = gen_synthetic(50, 3, tiny_options());
  save_features(dir / "a.aff", a.features);
  save_features(dir / "b.aff", b.features);
  save_labels(dir / "a.csv", a.labels);
  save_labels(dir / "b.csv", b.labels);
  EXPECT_EQ(testing::read_file(dir / "a.aff"), testing::read_file(dir / "b.aff"));
  EXPECT_EQ(testing::read_file(dir / "a.csv"), testing::read_file(dir / "b.csv"));
  EXPECT_EQ(gen_synthetic_labels(50, 3, tiny_options()), a.labels);
  EXPECT_NE(gen_synthetic(50, 4, tiny_options()).labels, a.labels);
}

TEST(Synthetic, DefaultShapeAndIds) {
  const auto d = gen_synthetic(3, 1);
  EXPECT_EQ(d.features.n_patches(), 289u);
  EXPECT_EQ(d.features.n_channels(), 1536u);
  const auto ids = synthetic_ids(100, 5, SyntheticOptions{});
  EXPECT_EQ(ids.size(), 100u);
  std::set<std::string> videos, unique(ids.begin(), ids.end());
  for (const auto& id : ids) videos.insert(video_of(id));
  EXPECT_EQ(unique.size(), 100u);
  EXPECT_EQ(videos.size(), 4u);
  EXPECT_THROW(gen_synthetic(0, 1), ConfigError);
}

TEST(Synthetic, SentinelFractionZeroAllValid) {
  for (const auto& r : gen_synthetic_labels(500, 9, tiny_options(0.0))) {
    EXPECT_TRUE(r.va_valid() && r.expr_valid() && r.au_valid());
    EXPECT_GE(r.valence, -1.0f);
    EXPECT_LE(r.arousal, 1.0f);
  }
}

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }
double cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// P(argmax = c) for independent Gaussian logits, by quadrature.
double argmax_probability(const SyntheticTeacher& t, std::size_t c) {
  const double m = t.expr_logit_mean(c), s = t.expr_logit_std(c);
  const int steps = 20000;
  const double lo = m - 10 * s, hi = m + 10 * s, h = (hi - lo) / steps;
  double total = 0;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + i * h;
    double f = phi((x - m) / s) / s;
    for (std::size_t k = 0; k < kNumExpr; ++k) {
      if (k != c) f *= cdf((x - t.expr_logit_mean(k)) / t.expr_logit_std(k));
    }
    total += (i == 0 || i == steps ? 0.5 : 1.0) * f;
  }
  return total * h;
}

TEST(Synthetic, MarginalsMatchTeacher) {
  const std::size_t n = 10000;
  const auto opts = SyntheticOptions{};
  const SyntheticTeacher teacher(21, opts);
  const auto labels = gen_synthetic_labels(n, 21, opts);

  std::array<std::size_t, kNumAu> pos{}, au_n{};
  std::array<std::size_t, kNumExpr> hist{};
  std::size_t expr_n = 0;
  for (const auto& r : labels) {
    if (r.au_valid()) {
      for (std::size_t j = 0; j < kNumAu; ++j) pos[j] += r.au[j];
      for (auto& c : au_n) ++c;
    }
    if (r.expr_valid()) {
      hist[static_cast<std::size_t>(r.expression)]++;
      ++expr_n;
    }
  }
  for (std::size_t j = 0; j < kNumAu; ++j) {
    const double p = teacher.au_positive_rate(j), m = static_cast<double>(au_n[j]);
    EXPECT_LE(std::abs(pos[j] / m - p), 3 * std::sqrt(p * (1 - p) / m)) << "AU " << j;
  }
  double mass = 0;
  for (std::size_t c = 0; c < kNumExpr; ++c) {
    const double p = argmax_probability(teacher, c), m = static_cast<double>(expr_n);
    mass += p;
    EXPECT_LE(std::abs(hist[c] / m - p), 3 * std::sqrt(p * (1 - p) / m)) << "class " << c;
  }
  EXPECT_NEAR(mass, 1.0, 1e-6);
}

}  // namespace
}  // namespace affect
