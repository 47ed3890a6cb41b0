#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace eatkit {

/// K×K tally, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes, std::vector<std::string> class_names = {});

  /// Throws std::out_of_range for labels outside [0, K).
  void add(std::int64_t true_label, std::int64_t predicted_label);
  /// Cell-wise sum with a matrix of the same size (parallel evaluation).
  void merge(const ConfusionMatrix& other);

  std::uint64_t count(std::size_t true_label, std::size_t predicted_label) const {
    return counts_[true_label * k_ + predicted_label];
  }
  std::uint64_t& count(std::size_t true_label, std::size_t predicted_label) {
    return counts_[true_label * k_ + predicted_label];
  }
  std::size_t num_classes() const { return k_; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t true_label) const;
  std::uint64_t column_sum(std::size_t predicted_label) const;
  std::uint64_t trace() const;
  const std::vector<std::string>& class_names() const { return names_; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::string> names_;
};

void accumulate(ConfusionMatrix& cm, std::int64_t true_label, std::int64_t predicted_label);

/// One-vs-rest scores. Ratios with a zero denominator are reported as 0 and
/// set `degenerate`.
struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool degenerate = false;
};

struct PrfResult {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

PrfResult per_class_prf(const ConfusionMatrix& cm);
/// trace / total; 0 for an empty matrix.
double accuracy(const ConfusionMatrix& cm);
/// Multiclass Matthews coefficient (Gorodkin's R_K); equals the binary MCC
/// for K = 2. Returns 0 when the denominator vanishes.
double mcc(const ConfusionMatrix& cm);
bool mcc_degenerate(const ConfusionMatrix& cm);

struct MetricsReport {
  std::uint64_t total = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double mcc = 0.0;
  bool mcc_degenerate = false;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion{1};

  /// Key-sorted document; identical inputs serialize to identical bytes.
  nlohmann::json to_json() const;
  std::string to_json_string() const;
  /// Aligned plain-text table.
  std::string to_table() const;
};

MetricsReport report(const ConfusionMatrix& cm);

}  // namespace eatkit
