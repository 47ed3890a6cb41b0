#include "eatkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace eatkit {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names)
    : k_(num_classes), counts_(num_classes * num_classes, 0), names_(std::move(class_names)) {
  if (num_classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
  if (names_.empty()) {
    for (std::size_t i = 0; i < k_; ++i) names_.push_back("class" + std::to_string(i));
  } else if (names_.size() != k_) {
    throw std::invalid_argument("confusion matrix: " + std::to_string(names_.size()) + " names for " +
                                std::to_string(k_) + " classes");
  }
}

void ConfusionMatrix::add(std::int64_t t, std::int64_t p) {
  const auto k = static_cast<std::int64_t>(k_);
  if (t < 0 || t >= k || p < 0 || p >= k) {
    throw std::out_of_range("confusion matrix: label pair (" + std::to_string(t) + ", " + std::to_string(p) +
                            ") outside [0, " + std::to_string(k_) + ")");
  }
  ++counts_[static_cast<std::size_t>(t) * k_ + static_cast<std::size_t>(p)];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion matrix merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t t) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += count(t, p);
  return s;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t p) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) s += count(t, p);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += count(i, i);
  return s;
}

void accumulate(ConfusionMatrix& cm, std::int64_t true_label, std::int64_t predicted_label) {
  cm.add(true_label, predicted_label);
}

PrfResult per_class_prf(const ConfusionMatrix& cm) {
  PrfResult r;
  const std::size_t k = cm.num_classes();
  for (std::size_t c = 0; c < k; ++c) {
    const auto tp = static_cast<double>(cm.count(c, c));
    const auto predicted = static_cast<double>(cm.column_sum(c));
    const auto actual = static_cast<double>(cm.row_sum(c));
    ClassMetrics m;
    m.name = cm.class_names()[c];
    m.support = cm.row_sum(c);
    if (predicted > 0) m.precision = tp / predicted; else m.degenerate = true;
    if (actual > 0) m.recall = tp / actual; else m.degenerate = true;
    if (m.precision + m.recall > 0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.degenerate = true;
    }
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.per_class.push_back(std::move(m));
  }
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  return total == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(total);
}

namespace {

struct MccTerms {
  double numerator;
  double denominator_sq;
};

MccTerms mcc_terms(const ConfusionMatrix& cm) {
  const auto s = static_cast<double>(cm.total());
  const auto c = static_cast<double>(cm.trace());
  double pt = 0, pp = 0, tt = 0;
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    const auto p = static_cast<double>(cm.column_sum(k));
    const auto t = static_cast<double>(cm.row_sum(k));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  return {c * s - pt, (s * s - pp) * (s * s - tt)};
}

}  // namespace

double mcc(const ConfusionMatrix& cm) {
  const MccTerms m = mcc_terms(cm);
  if (m.denominator_sq <= 0.0) return 0.0;
  return std::clamp(m.numerator / std::sqrt(m.denominator_sq), -1.0, 1.0);
}

bool mcc_degenerate(const ConfusionMatrix& cm) { return mcc_terms(cm).denominator_sq <= 0.0; }

MetricsReport report(const ConfusionMatrix& cm) {
  MetricsReport r;
  const PrfResult prf = per_class_prf(cm);
  r.total = cm.total();
  r.accuracy = accuracy(cm);
  r.macro_precision = prf.macro_precision;
  r.macro_recall = prf.macro_recall;
  r.macro_f1 = prf.macro_f1;
  r.mcc = mcc(cm);
  r.mcc_degenerate = mcc_degenerate(cm);
  r.per_class = prf.per_class;
  r.confusion = cm;
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["total"] = total;
  j["accuracy"] = accuracy;
  j["precision_macro"] = macro_precision;
  j["recall_macro"] = macro_recall;
  j["f1_macro"] = macro_f1;
  j["mcc_rk"] = mcc;
  j["mcc_degenerate"] = mcc_degenerate;
  j["averaging"] = "macro";
  auto& classes = j["per_class"] = nlohmann::json::array();
  for (const auto& c : per_class) {
    classes.push_back({{"name", c.name},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"support", c.support},
                       {"degenerate", c.degenerate}});
  }
  auto& rows = j["confusion"] = nlohmann::json::array();
  for (std::size_t t = 0; t < confusion.num_classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < confusion.num_classes(); ++p) row.push_back(confusion.count(t, p));
    rows.push_back(std::move(row));
  }
  return j;
}

std::string MetricsReport::to_json_string() const { return to_json().dump(2); }

std::string MetricsReport::to_table() const {
  std::size_t width = 5;
  for (const auto& c : per_class) width = std::max(width, c.name.size());
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %9s  %9s  %9s  %8s\n", static_cast<int>(width), "class", "precision",
                "recall", "f1", "support");
  out += line;
  for (const auto& c : per_class) {
    std::snprintf(line, sizeof line, "%-*s  %9.4f  %9.4f  %9.4f  %8llu%s\n", static_cast<int>(width),
                  c.name.c_str(), c.precision, c.recall, c.f1, static_cast<unsigned long long>(c.support),
                  c.degenerate ? "  (degenerate)" : "");
    out += line;
  }
  std::snprintf(line, sizeof line, "%-*s  %9.4f  %9.4f  %9.4f  %8llu\n", static_cast<int>(width), "macro",
                macro_precision, macro_recall, macro_f1, static_cast<unsigned long long>(total));
  out += line;
  std::snprintf(line, sizeof line, "accuracy %.4f   mcc(R_K) %.4f%s\n", accuracy, mcc,
                mcc_degenerate ? " (degenerate)" : "");
  out += line;
  return out;
}

}  // namespace eatkit
