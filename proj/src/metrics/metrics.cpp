#include "affect/metrics.hpp"

#include "affect/errors.hpp"
#include "affect/losses.hpp"

namespace affect {

double f1_binary(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("f1_binary: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  const std::size_t den = 2 * tp + fp + fn;
  return den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
}

ExprF1 f1_macro_expr(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("f1_macro_expr: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  auto check = [](int c) {
    if (c < 0 || c >= static_cast<int>(kNumExpr)) {
      throw DataError("expression class " + std::to_string(c) + " out of range 0..7");
    }
  };
  std::array<std::size_t, kNumExpr> tp{}, fp{}, fn{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check(pred[i]);
    check(truth[i]);
    const auto p = static_cast<std::size_t>(pred[i]), t = static_cast<std::size_t>(truth[i]);
    if (p == t) {
      tp[p]++;
    } else {
      fp[p]++;
      fn[t]++;
    }
  }
  ExprF1 out;
  double total = 0.0;
  for (std::size_t c = 0; c < kNumExpr; ++c) {
    const std::size_t den = 2 * tp[c] + fp[c] + fn[c];
    out.per_class[c] = den == 0 ? 0.0 : static_cast<double>(2 * tp[c]) / static_cast<double>(den);
    total += out.per_class[c];
  }
  out.macro = total / static_cast<double>(kNumExpr);
  return out;
}

VaScore p_va(std::span<const double> pred_v, std::span<const double> pred_a,
             std::span<const double> truth_v, std::span<const double> truth_a) {
  if (pred_v.size() < 2) {
    throw UndefinedMetricError("P_va needs at least two valid VA samples, got " +
                               std::to_string(pred_v.size()));
  }
  VaScore s;
  s.ccc_v = ccc(pred_v, truth_v);
  s.ccc_a = ccc(pred_a, truth_a);
  s.p_va = 0.5 * (s.ccc_v + s.ccc_a);
  return s;
}

EvalReport EvalReport::from_scores(const std::array<double, kNumAu>& per_au_f1,
                                   const std::array<double, kNumExpr>& per_expr_f1, double ccc_v,
                                   double ccc_a) {
  EvalReport r;
  r.per_au_f1 = per_au_f1;
  r.per_expr_f1 = per_expr_f1;
  r.ccc_v = ccc_v;
  r.ccc_a = ccc_a;
  double au = 0.0, expr = 0.0;
  for (double f : per_au_f1) au += f;
  for (double f : per_expr_f1) expr += f;
  r.p_au = au / static_cast<double>(kNumAu);
  r.p_expr = expr / static_cast<double>(kNumExpr);
  r.p_va = 0.5 * (ccc_v + ccc_a);
  r.p_mtl = affect::p_mtl(r.p_au, r.p_expr, r.p_va);
  return r;
}

EvalReport evaluate(std::span<const PredictionRecord> preds, std::span<const LabelRecord> labels) {
  if (preds.size() != labels.size()) {
    throw ShapeError("evaluate: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw UndefinedMetricError("evaluate: empty dataset");

  std::array<std::vector<std::uint8_t>, kNumAu> au_pred, au_true;
  std::vector<int> expr_pred, expr_true;
  std::vector<double> pv, pa, tv, ta;
  TaskCounts au_n, expr_n, va_n;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const auto& y = labels[i];
    if (p.id != y.id) {
      throw DataError("evaluate: prediction '" + p.id + "' at row " + std::to_string(i) +
                      " does not match label '" + y.id + "'");
    }
    if (y.au_valid()) {
      const auto d = p.au_decisions();
      for (std::size_t j = 0; j < kNumAu; ++j) {
        au_pred[j].push_back(static_cast<std::uint8_t>(d[j]));
        au_true[j].push_back(static_cast<std::uint8_t>(y.au[j]));
      }
      au_n.valid++;
    } else {
      au_n.invalid++;
    }
    if (y.expr_valid()) {
      expr_pred.push_back(p.expression());
      expr_true.push_back(y.expression);
      expr_n.valid++;
    } else {
      expr_n.invalid++;
    }
    if (y.va_valid()) {
      pv.push_back(p.va[0]);
      pa.push_back(p.va[1]);
      tv.push_back(y.valence);
      ta.push_back(y.arousal);
      va_n.valid++;
    } else {
      va_n.invalid++;
    }
  }

  std::array<double, kNumAu> au_f1{};
  for (std::size_t j = 0; j < kNumAu; ++j) au_f1[j] = f1_binary(au_pred[j], au_true[j]);
  const auto expr = f1_macro_expr(expr_pred, expr_true);
  const auto va = p_va(pv, pa, tv, ta);
  auto r = EvalReport::from_scores(au_f1, expr.per_class, va.ccc_v, va.ccc_a);
  r.au_counts = au_n;
  r.expr_counts = expr_n;
  r.va_counts = va_n;
  return r;
}

EvalReport fold_aggregate(std::span<const EvalReport> reports) {
  if (reports.empty()) throw UndefinedMetricError("fold_aggregate: no reports");
  if (reports.size() == 1) return reports[0];
  const double n = static_cast<double>(reports.size());
  EvalReport out;
  for (const auto& r : reports) {
    for (std::size_t j = 0; j < kNumAu; ++j) out.per_au_f1[j] += r.per_au_f1[j] / n;
    for (std::size_t c = 0; c < kNumExpr; ++c) out.per_expr_f1[c] += r.per_expr_f1[c] / n;
    out.ccc_v += r.ccc_v / n;
    out.ccc_a += r.ccc_a / n;
    out.p_au += r.p_au / n;
    out.p_expr += r.p_expr / n;
    out.p_va += r.p_va / n;
    out.p_mtl += r.p_mtl / n;
    for (auto [dst, src] : {std::pair{&out.au_counts, &r.au_counts},
                            std::pair{&out.expr_counts, &r.expr_counts},
                            std::pair{&out.va_counts, &r.va_counts}}) {
      dst->valid += src->valid;
      dst->invalid += src->invalid;
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  auto counts = [](const TaskCounts& c) {
    return nlohmann::json{{"valid", c.valid}, {"invalid", c.invalid}};
  };
  j = nlohmann::json{{"per_au_f1", r.per_au_f1},
                     {"per_expr_f1", r.per_expr_f1},
                     {"ccc_v", r.ccc_v},
                     {"ccc_a", r.ccc_a},
                     {"p_au", r.p_au},
                     {"p_expr", r.p_expr},
                     {"p_va", r.p_va},
                     {"p_mtl", r.p_mtl},
                     {"counts", {{"au", counts(r.au_counts)},
                                 {"expr", counts(r.expr_counts)},
                                 {"va", counts(r.va_counts)}}}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("per_au_f1").get_to(r.per_au_f1);
  j.at("per_expr_f1").get_to(r.per_expr_f1);
  j.at("ccc_v").get_to(r.ccc_v);
  j.at("ccc_a").get_to(r.ccc_a);
  j.at("p_au").get_to(r.p_au);
  j.at("p_expr").get_to(r.p_expr);
  j.at("p_va").get_to(r.p_va);
  j.at("p_mtl").get_to(r.p_mtl);
  if (j.contains("counts")) {
    const auto& c = j.at("counts");
    for (auto [key, dst] : {std::pair{"au", &r.au_counts}, std::pair{"expr", &r.expr_counts},
                            std::pair{"va", &r.va_counts}}) {
      c.at(key).at("valid").get_to(dst->valid);
      c.at(key).at("invalid").get_to(dst->invalid);
    }
  }
}

}  // namespace affect
