#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "milkit/tensor.hpp"

namespace milkit {

// Rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_classes);

  void add(int true_class, int predicted_class, long count = 1);
  long at(int t, int p) const { return counts_[static_cast<std::size_t>(t) * c_ + p]; }
  int n_classes() const { return c_; }
  long total() const;
  long row_sum(int t) const;
  long col_sum(int p) const;

 private:
  int c_;
  std::vector<long> counts_;
};

// Per-class recall; absent when the class has no true cases.
std::optional<double> sensitivity(const ConfusionMatrix& cm, int c);

// 2PR/(P+R); 0 when precision + recall is 0 (documented convention).
std::optional<double> f1(const ConfusionMatrix& cm, int c);

// Balanced accuracy: mean of per-class sensitivities, zero-support classes
// excluded. The paper-style "weighted accuracy" headline number.
double weighted_accuracy(const ConfusionMatrix& cm);

// Plain fraction correct, reported alongside.
double micro_accuracy(const ConfusionMatrix& cm);

// Per-class Sen/F1 rows plus weighted and micro accuracy footers.
void emit_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                 const std::filesystem::path& csv_path);
std::string format_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

// Line chart of per-instance activation scores with kept instances marked.
void write_activation_svg(const std::filesystem::path& path, const std::vector<double>& scores,
                          const std::vector<char>& kept, double threshold);

}  // namespace milkit
