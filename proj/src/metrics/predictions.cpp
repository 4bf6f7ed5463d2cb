#include "affect/predictions.hpp"

#include <cstdio>
#include <fstream>
#include <string_view>

#include "affect/binary_io.hpp"
#include "affect/errors.hpp"

namespace affect {

std::array<int, kNumAu> PredictionRecord::au_decisions() const {
  std::array<int, kNumAu> out{};
  for (std::size_t j = 0; j < kNumAu; ++j) out[j] = au_logits[j] >= 0.0f ? 1 : 0;
  return out;
}

int PredictionRecord::expression() const {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumExpr; ++c) {
    if (expr_logits[c] > expr_logits[best]) best = c;
  }
  return static_cast<int>(best);
}

LabelRecord PredictionRecord::decided() const {
  LabelRecord r;
  r.id = id;
  r.valence = va[0];
  r.arousal = va[1];
  r.expression = expression();
  r.au = au_decisions();
  return r;
}

std::string prediction_csv(std::span<const PredictionRecord> preds) {
  std::string out = labels_csv_header() + "\n";
  char buf[32];
  for (const auto& p : preds) {
    out += p.id;
    for (float v : p.va) {
      std::snprintf(buf, sizeof buf, ",%.4f", static_cast<double>(v));
      // Values that round to zero from below would print as "-0.0000".
      out += std::string_view(buf) == ",-0.0000" ? ",0.0000" : buf;
    }
    out += ',' + std::to_string(p.expression());
    for (int a : p.au_decisions()) out += a ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

void save_prediction_csv(const std::string& path, std::span<const PredictionRecord> preds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write prediction CSV '" + path + "'");
  const auto text = prediction_csv(preds);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError("failed writing prediction CSV '" + path + "'");
}

void save_raw_predictions(const std::string& path, std::span<const PredictionRecord> preds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write raw predictions '" + path + "'");
  out.write(kPredictionMagic, 4);
  binary::write_u32(out, kPredictionVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(preds.size()));
  for (const auto& p : preds) {
    binary::write_string16(out, p.id);
    binary::write_floats(out, p.au_logits);
    binary::write_floats(out, p.expr_logits);
    binary::write_floats(out, p.va);
  }
  if (!out) throw FormatError("failed writing raw predictions '" + path + "'");
}

std::vector<PredictionRecord> load_raw_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open raw predictions '" + path + "'");
  binary::Reader r(in, path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kPredictionMagic)) {
    throw FormatError(path + ": bad magic, not an AFP1 prediction file");
  }
  const auto version = r.u32("version");
  if (version != kPredictionVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.u32("record count");
  std::vector<PredictionRecord> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    out[i].id = r.string16(where + " id");
    r.floats(out[i].au_logits, where + " AU logits");
    r.floats(out[i].expr_logits, where + " expression logits");
    r.floats(out[i].va, where + " VA");
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after " + std::to_string(count) + " records");
  return out;
}

std::string raw_sidecar_path(const std::string& csv_path) { return csv_path + ".raw"; }

}  // namespace affect
