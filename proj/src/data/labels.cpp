#include "affect/labels.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "affect/errors.hpp"

namespace affect {

bool LabelRecord::au_valid() const {
  return std::none_of(au.begin(), au.end(), [](int v) { return v == kInvalidAu; });
}

ValidityMask validity(const LabelRecord& r) { return {r.va_valid(), r.expr_valid(), r.au_valid()}; }

std::string labels_csv_header() {
  std::string h = "image,valence,arousal,expression";
  for (auto name : kAuNames) {
    h += ',';
    h += name;
  }
  return h;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

class RowError {
 public:
  RowError(const std::string& origin, std::size_t line) : origin_(origin), line_(line) {}
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(origin_ + ":" + std::to_string(line_) + ": " + what);
  }

 private:
  const std::string& origin_;
  std::size_t line_;
};

float parse_float(std::string_view s, const RowError& err, const char* field) {
  float v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    err.fail(std::string("malformed ") + field + " '" + std::string(s) + "'");
  }
  return v;
}

int parse_int(std::string_view s, const RowError& err, const char* field) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    err.fail(std::string("malformed ") + field + " '" + std::string(s) + "'");
  }
  return v;
}

LabelRecord parse_row(std::string_view line, const RowError& err) {
  const auto fields = split(line);
  if (fields.size() != 4 + kNumAu) {
    err.fail("expected " + std::to_string(4 + kNumAu) + " fields, got " +
             std::to_string(fields.size()));
  }
  LabelRecord r;
  r.id = std::string(fields[0]);
  if (r.id.empty()) err.fail("empty image id");

  r.valence = parse_float(fields[1], err, "valence");
  r.arousal = parse_float(fields[2], err, "arousal");
  const bool v_invalid = r.valence == kInvalidVa;
  const bool a_invalid = r.arousal == kInvalidVa;
  if (v_invalid != a_invalid) {
    err.fail("valence and arousal must both be -5 or both be valid");
  }
  if (!v_invalid && (r.valence < -1.0f || r.valence > 1.0f || r.arousal < -1.0f ||
                     r.arousal > 1.0f)) {
    err.fail("valence/arousal outside [-1, 1]");
  }

  r.expression = parse_int(fields[3], err, "expression");
  if (r.expression != kInvalidExpr &&
      (r.expression < 0 || r.expression >= static_cast<int>(kNumExpr))) {
    err.fail("expression " + std::to_string(r.expression) + " not in 0..7 or -1");
  }

  for (std::size_t j = 0; j < kNumAu; ++j) {
    const int v = parse_int(fields[4 + j], err, "AU");
    if (v != 0 && v != 1 && v != kInvalidAu) {
      err.fail(std::string(kAuNames[j]) + " value " + std::to_string(v) + " not in {0, 1, -1}");
    }
    r.au[j] = v;
  }
  return r;
}

}  // namespace

std::vector<LabelRecord> parse_labels(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(origin + ": empty label file");
  ++line_no;
  {
    const auto header = split(line);
    const std::string expected_text = labels_csv_header();
    const auto expected = split(expected_text);
    if (header != expected) {
      throw DataError(origin + ":1: header does not match '" + labels_csv_header() + "'");
    }
  }
  std::vector<LabelRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    out.push_back(parse_row(line, RowError(origin, line_no)));
  }
  return out;
}

std::vector<LabelRecord> load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open label file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_labels(ss.str(), path);
}

void save_labels(const std::string& path, std::span<const LabelRecord> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write label file '" + path + "'");
  out << labels_csv_header() << '\n';
  for (const auto& r : labels) {
    out << r.id << ',';
    if (r.va_valid()) {
      out << std::setprecision(9) << r.valence << ',' << r.arousal;
    } else {
      out << "-5,-5";
    }
    out << ',' << r.expression;
    for (int v : r.au) out << ',' << v;
    out << '\n';
  }
  if (!out) throw DataError("failed writing label file '" + path + "'");
}

MergeResult merge_pseudo_labels(std::span<const LabelRecord> primary,
                                std::span<const LabelRecord> pseudo) {
  MergeResult result;
  result.labels.assign(primary.begin(), primary.end());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < result.labels.size(); ++i) index.emplace(result.labels[i].id, i);

  for (const auto& p : pseudo) {
    const auto it = index.find(p.id);
    if (it == index.end()) {
      result.warnings.push_back("pseudo label id '" + p.id + "' not in primary labels; skipped");
      continue;
    }
    auto& r = result.labels[it->second];
    if (!r.va_valid() && p.va_valid()) {
      r.valence = p.valence;
      r.arousal = p.arousal;
      r.va_source = LabelSource::pseudo;
    }
    if (!r.expr_valid() && p.expr_valid()) {
      r.expression = p.expression;
      r.expr_source = LabelSource::pseudo;
    }
    if (!r.au_valid() && p.au_valid()) {
      r.au = p.au;
      r.au_source = LabelSource::pseudo;
    }
  }
  return result;
}

ClassWeights ClassWeights::uniform() {
  ClassWeights w;
  w.au_pos_weight.fill(1.0);
  w.expr_weight.fill(1.0);
  return w;
}

namespace {
double clamp_weight(double w) { return std::clamp(w, kMinClassWeight, kMaxClassWeight); }
}  // namespace

ClassWeights compute_class_weights(std::span<const LabelRecord> labels) {
  std::array<std::size_t, kNumAu> pos{}, neg{};
  std::array<std::size_t, kNumExpr> per_class{};
  std::size_t n_expr = 0;
  for (const auto& r : labels) {
    if (r.au_valid()) {
      for (std::size_t j = 0; j < kNumAu; ++j) (r.au[j] == 1 ? pos : neg)[j]++;
    }
    if (r.expr_valid() && r.expression >= 0 && r.expression < static_cast<int>(kNumExpr)) {
      per_class[static_cast<std::size_t>(r.expression)]++;
      ++n_expr;
    }
  }
  ClassWeights w = ClassWeights::uniform();
  for (std::size_t j = 0; j < kNumAu; ++j) {
    if (pos[j] + neg[j] == 0) continue;
    w.au_pos_weight[j] = pos[j] == 0 ? kMaxClassWeight
                                     : clamp_weight(static_cast<double>(neg[j]) / pos[j]);
  }
  if (n_expr > 0) {
    for (std::size_t c = 0; c < kNumExpr; ++c) {
      w.expr_weight[c] =
          per_class[c] == 0
              ? kMaxClassWeight
              : clamp_weight(static_cast<double>(n_expr) / (kNumExpr * per_class[c]));
    }
  }
  return w;
}

}  // namespace affect
