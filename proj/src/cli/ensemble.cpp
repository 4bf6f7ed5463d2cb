#include "affect/ensemble.hpp"

#include <array>
#include <unordered_map>

#include "affect/errors.hpp"

namespace affect {

namespace {

constexpr std::array<const char*, 5> kNames = {"best-overall", "best-per-task",
                                               "kfold-best-overall", "kfold-best-per-task",
                                               "meta"};

// Member rows reordered to follow `order`'s ids.
std::vector<const PredictionRecord*> align(const PredictionSet& order, const PredictionSet& member,
                                           std::size_t member_index) {
  if (member.size() != order.size()) {
    throw DataError("ensemble member " + std::to_string(member_index) + " has " +
                    std::to_string(member.size()) + " rows, expected " +
                    std::to_string(order.size()));
  }
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : member) {
    if (!by_id.emplace(p.id, &p).second) {
      throw DataError("ensemble member " + std::to_string(member_index) + " repeats id '" + p.id + "'");
    }
  }
  std::vector<const PredictionRecord*> out;
  out.reserve(order.size());
  for (const auto& p : order) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) {
      throw DataError("ensemble member " + std::to_string(member_index) + " lacks id '" + p.id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

template <std::size_t N>
void accumulate(std::array<double, N>& acc, const std::array<float, N>& v) {
  for (std::size_t i = 0; i < N; ++i) acc[i] += static_cast<double>(v[i]);
}

template <std::size_t N>
std::array<float, N> finish(const std::array<double, N>& acc, double n) {
  std::array<float, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<float>(acc[i] / n);
  return out;
}

}  // namespace

std::string to_string(EnsembleStrategy s) { return kNames.at(static_cast<std::size_t>(s)); }

EnsembleStrategy parse_ensemble_strategy(const std::string& name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (name == kNames[i] || name == std::to_string(i + 1)) return static_cast<EnsembleStrategy>(i);
  }
  throw ConfigError("unknown ensemble strategy '" + name + "'");
}

std::size_t member_count(EnsembleStrategy s) {
  switch (s) {
    case EnsembleStrategy::best_overall: return 1;
    case EnsembleStrategy::best_per_task: return 3;
    case EnsembleStrategy::kfold_best_overall: return 6;
    case EnsembleStrategy::kfold_best_per_task: return 18;
    case EnsembleStrategy::meta: return 4;
  }
  throw ConfigError("invalid ensemble strategy");
}

PredictionSet average_predictions(std::span<const PredictionSet> members) {
  if (members.empty()) throw ConfigError("ensemble needs at least one member");
  const auto& order = members[0];
  std::vector<std::vector<const PredictionRecord*>> aligned;
  for (std::size_t m = 0; m < members.size(); ++m) aligned.push_back(align(order, members[m], m));

  const double n = static_cast<double>(members.size());
  PredictionSet out(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::array<double, kNumAu> au{};
    std::array<double, kNumExpr> expr{};
    std::array<double, kNumVa> va{};
    for (const auto& rows : aligned) {
      accumulate(au, rows[i]->au_logits);
      accumulate(expr, rows[i]->expr_logits);
      accumulate(va, rows[i]->va);
    }
    out[i].id = order[i].id;
    out[i].au_logits = finish(au, n);
    out[i].expr_logits = finish(expr, n);
    out[i].va = finish(va, n);
  }
  return out;
}

PredictionSet ensemble(EnsembleStrategy strategy, std::span<const PredictionSet> members) {
  if (members.size() != member_count(strategy)) {
    throw ConfigError("strategy " + to_string(strategy) + " needs " +
                      std::to_string(member_count(strategy)) + " members, got " +
                      std::to_string(members.size()));
  }
  // Per-task concatenation: AU columns from the first source, EXPR from the
  // second, VA from the third.
  auto concatenate = [](const PredictionSet& au, const PredictionSet& expr, const PredictionSet& va) {
    const auto e = align(au, expr, 1);
    const auto v = align(au, va, 2);
    PredictionSet out = au;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].expr_logits = e[i]->expr_logits;
      out[i].va = v[i]->va;
    }
    return out;
  };

  switch (strategy) {
    case EnsembleStrategy::best_overall:
      return average_predictions(members);
    case EnsembleStrategy::best_per_task:
      return concatenate(members[0], members[1], members[2]);
    case EnsembleStrategy::kfold_best_overall:
    case EnsembleStrategy::meta:
      return average_predictions(members);
    case EnsembleStrategy::kfold_best_per_task:
      return concatenate(average_predictions(members.subspan(0, 6)),
                         average_predictions(members.subspan(6, 6)),
                         average_predictions(members.subspan(12, 6)));
  }
  throw ConfigError("invalid ensemble strategy");
}

}  // namespace affect
