#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "affect/checkpoint.hpp"
#include "affect/constants.hpp"
#include "affect/ensemble.hpp"
#include "affect/errors.hpp"
#include "affect/features.hpp"
#include "affect/folds.hpp"
#include "affect/labels.hpp"
#include "affect/losses.hpp"
#include "affect/metrics.hpp"
#include "affect/synthetic.hpp"
#include "affect/training.hpp"

namespace py = pybind11;
using namespace affect;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// JSON crosses the boundary as text; the Python side decodes it.
std::string dump(const nlohmann::json& j) { return j.dump(); }

py::dict label_to_dict(const LabelRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["valence"] = r.valence;
  d["arousal"] = r.arousal;
  d["expression"] = r.expression;
  d["au"] = std::vector<int>(r.au.begin(), r.au.end());
  return d;
}

LabelRecord label_from_dict(const py::dict& d) {
  LabelRecord r;
  r.id = d["id"].cast<std::string>();
  if (d.contains("valence")) r.valence = d["valence"].cast<float>();
  if (d.contains("arousal")) r.arousal = d["arousal"].cast<float>();
  if (d.contains("expression")) r.expression = d["expression"].cast<int>();
  if (d.contains("au")) {
    const auto au = d["au"].cast<std::vector<int>>();
    if (au.size() != kNumAu) throw ShapeError("label 'au' needs " + std::to_string(kNumAu) + " entries");
    std::copy(au.begin(), au.end(), r.au.begin());
  }
  return r;
}

std::vector<LabelRecord> labels_from_list(const py::list& items) {
  std::vector<LabelRecord> out;
  for (const auto& item : items) out.push_back(label_from_dict(item.cast<py::dict>()));
  return out;
}

py::list labels_to_list(std::span<const LabelRecord> labels) {
  py::list out;
  for (const auto& r : labels) out.append(label_to_dict(r));
  return out;
}

FloatArray features_to_array(const FeatureSet& f) {
  FloatArray out({f.size(), f.n_patches(), f.n_channels()});
  auto* dst = out.mutable_data();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto r = f.record(i);
    std::copy(r.begin(), r.end(), dst + i * f.record_size());
  }
  return out;
}

FeatureSet features_from_array(const std::vector<std::string>& ids, const FloatArray& values) {
  if (values.ndim() != 3) throw ShapeError("features must be a (n, patches, channels) array");
  const auto n = static_cast<std::size_t>(values.shape(0));
  if (n != ids.size()) throw ShapeError("features and ids differ in length");
  FeatureSet f(static_cast<std::size_t>(values.shape(1)), static_cast<std::size_t>(values.shape(2)));
  f.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.append(ids[i], std::span<const float>(values.data() + i * f.record_size(), f.record_size()));
  }
  return f;
}

py::dict predictions_to_dict(std::span<const PredictionRecord> preds) {
  const std::size_t n = preds.size();
  FloatArray au({n, kNumAu}), expr({n, kNumExpr}), va({n, kNumVa});
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(preds[i].id);
    std::copy(preds[i].au_logits.begin(), preds[i].au_logits.end(), au.mutable_data() + i * kNumAu);
    std::copy(preds[i].expr_logits.begin(), preds[i].expr_logits.end(), expr.mutable_data() + i * kNumExpr);
    std::copy(preds[i].va.begin(), preds[i].va.end(), va.mutable_data() + i * kNumVa);
  }
  py::dict d;
  d["ids"] = ids;
  d["au_logits"] = au;
  d["expr_logits"] = expr;
  d["va"] = va;
  return d;
}

std::vector<PredictionRecord> predictions_from_dict(const py::dict& d) {
  const auto ids = d["ids"].cast<std::vector<std::string>>();
  const auto au = d["au_logits"].cast<FloatArray>();
  const auto expr = d["expr_logits"].cast<FloatArray>();
  const auto va = d["va"].cast<FloatArray>();
  const auto n = static_cast<py::ssize_t>(ids.size());
  if (au.ndim() != 2 || au.shape(0) != n || au.shape(1) != static_cast<py::ssize_t>(kNumAu) ||
      expr.ndim() != 2 || expr.shape(0) != n || expr.shape(1) != static_cast<py::ssize_t>(kNumExpr) ||
      va.ndim() != 2 || va.shape(0) != n || va.shape(1) != static_cast<py::ssize_t>(kNumVa)) {
    throw ShapeError("prediction arrays must be (n, 12), (n, 8) and (n, 2)");
  }
  std::vector<PredictionRecord> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[i].id = ids[i];
    std::copy_n(au.data() + i * kNumAu, kNumAu, out[i].au_logits.begin());
    std::copy_n(expr.data() + i * kNumExpr, kNumExpr, out[i].expr_logits.begin());
    std::copy_n(va.data() + i * kNumVa, kNumVa, out[i].va.begin());
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task affective-behavior head: core bindings";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<GraphError>(m, "GraphError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.attr("NUM_AU") = kNumAu;
  m.attr("NUM_EXPR") = kNumExpr;
  m.attr("NUM_QUERIES") = kNumQueries;

  // Metrics.
  m.def("p_mtl", &p_mtl, py::arg("p_au"), py::arg("p_expr"), py::arg("p_va"));
  m.def("f1_binary", [](const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
    return f1_binary(pred, truth);
  }, py::arg("pred"), py::arg("truth"));
  m.def("f1_macro_expr", [](const std::vector<int>& pred, const std::vector<int>& truth) {
    const auto r = f1_macro_expr(pred, truth);
    return py::make_tuple(r.macro, std::vector<double>(r.per_class.begin(), r.per_class.end()));
  }, py::arg("pred"), py::arg("truth"), "Returns (macro F1, per-class F1).");
  m.def("ccc", [](const std::vector<double>& x, const std::vector<double>& y) { return ccc(x, y); },
        py::arg("x"), py::arg("y"));
  m.def("_fold_aggregate", [](const std::vector<std::string>& reports) {
    std::vector<EvalReport> r;
    for (const auto& s : reports) r.push_back(nlohmann::json::parse(s).get<EvalReport>());
    return dump(fold_aggregate(r));
  });

  // Labels.
  m.def("load_labels", [](const std::string& path) { return labels_to_list(load_labels(path)); });
  m.def("save_labels", [](const std::string& path, const py::list& labels) {
    save_labels(path, labels_from_list(labels));
  });

  // Features.
  m.def("load_features", [](const std::string& path, std::size_t n_patches, std::size_t n_channels) {
    const auto f = load_features(path, n_patches, n_channels);
    return py::make_tuple(f.ids(), features_to_array(f));
  }, py::arg("path"), py::arg("n_patches") = kDefaultPatches, py::arg("n_channels") = kDefaultChannels,
     "Returns (ids, float32 array of shape (n, patches, channels)).");
  m.def("save_features", [](const std::string& path, const std::vector<std::string>& ids,
                            const FloatArray& values) { save_features(path, features_from_array(ids, values)); },
        py::arg("path"), py::arg("ids"), py::arg("values"));

  // Synthetic data and folds.
  m.def("gen_synthetic", [](std::size_t n, std::uint64_t seed, double sentinel_fraction,
                            std::size_t n_patches, std::size_t n_channels, std::size_t n_videos) {
    SyntheticOptions o;
    o.sentinel_fraction = sentinel_fraction;
    o.n_patches = n_patches;
    o.n_channels = n_channels;
    o.n_videos = n_videos;
    const auto d = gen_synthetic(n, seed, o);
    return py::make_tuple(d.features.ids(), features_to_array(d.features), labels_to_list(d.labels));
  }, py::arg("n"), py::arg("seed") = 0, py::arg("sentinel_fraction") = 0.1,
     py::arg("n_patches") = kDefaultPatches, py::arg("n_channels") = kDefaultChannels,
     py::arg("n_videos") = 0, "Returns (ids, features, labels).");
  m.def("kfold_split", [](const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed) {
    const auto plan = kfold_split(ids, k, seed);
    std::vector<std::size_t> folds;
    folds.reserve(ids.size());
    for (const auto& id : ids) folds.push_back(plan.fold_of.at(id));
    return folds;
  }, py::arg("ids"), py::arg("k") = 6, py::arg("seed") = 0, "Fold index of every id.");

  // Training and inference.
  m.def("_train", [](const std::string& config_json) {
    const auto config = nlohmann::json::parse(config_json).get<RunConfig>();
    TrainResult result = [&] {
      py::gil_scoped_release release;
      const auto train = load_dataset(config.features, config.labels, config.pseudo_labels, config.model);
      if (!config.output_dir.empty()) std::filesystem::create_directories(config.output_dir);
      if (!config.val_features.empty()) {
        const auto val = load_dataset(config.val_features, config.val_labels, "", config.model);
        return train_model(train, &val, config);
      }
      if (config.fold >= 0) {
        const auto& ids = train.features.ids();
        const auto plan = kfold_split(ids, config.k_folds, config.seed);
        const auto k = static_cast<std::size_t>(config.fold);
        const auto val = train.subset(plan.members(ids, k));
        return train_model(train.subset(plan.complement(ids, k)), &val, config);
      }
      return train_model(train, nullptr, config);
    }();
    return dump(result);
  });
  m.def("predict", [](const std::string& checkpoint, const std::vector<std::string>& ids,
                      const FloatArray& values, std::size_t batch_size) {
    const auto params = load_checkpoint(checkpoint);
    const auto features = features_from_array(ids, values);
    std::vector<PredictionRecord> preds;
    {
      py::gil_scoped_release release;
      preds = predict(params, features, batch_size);
    }
    return predictions_to_dict(preds);
  }, py::arg("checkpoint"), py::arg("ids"), py::arg("features"), py::arg("batch_size") = 64,
     "Raw outputs: dict with ids, au_logits, expr_logits, va.");
  m.def("save_predictions", [](const std::string& out_csv, const py::dict& preds) {
    const auto records = predictions_from_dict(preds);
    save_prediction_csv(out_csv, records);
    const auto raw = raw_sidecar_path(out_csv);
    save_raw_predictions(raw, records);
    return raw;
  }, py::arg("out_csv"), py::arg("predictions"),
     "Writes the submission CSV and its raw sidecar; returns the sidecar path.");
  m.def("load_raw_predictions", [](const std::string& path) {
    return predictions_to_dict(load_raw_predictions(path));
  });
  m.def("_evaluate_raw", [](const std::string& raw_predictions, const py::list& labels) {
    return dump(evaluate(load_raw_predictions(raw_predictions), labels_from_list(labels)));
  });
  m.def("ensemble", [](const std::string& strategy, const std::vector<std::string>& members,
                       const std::string& out_csv) {
    std::vector<PredictionSet> sets;
    for (const auto& path : members) sets.push_back(load_raw_predictions(path));
    const auto result = ensemble(parse_ensemble_strategy(strategy), sets);
    save_prediction_csv(out_csv, result);
    save_raw_predictions(raw_sidecar_path(out_csv), result);
    return predictions_to_dict(result);
  }, py::arg("strategy"), py::arg("members"), py::arg("out_csv"));
}
