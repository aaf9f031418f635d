// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace cad {

/// One accuracy record: (scope, question type) with raw counts. Accuracy is
/// always recomputed from the counts.
struct MetricsRow {
  std::string scope;
  std::string question_type;
  long n = 0;
  long correct = 0;
  double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / n; }
};

/// Per-question-category accuracy table with per-scope and overall macro
/// averages, emitted as TSV.
class MetricsTable {
 public:
  void add_result(const std::string& scope, const std::string& question_type,
                  bool correct);

  const std::vector<MetricsRow>& rows() const { return rows_; }
  long total() const;

  double row_accuracy(const std::string& scope,
                      const std::string& question_type) const;
  double scope_average(const std::string& scope) const;
  double overall_average() const;

  std::string to_tsv() const;

 private:
  std::vector<MetricsRow> rows_;  // insertion order
};

std::string format_fixed(double v, int digits = 6);

}  // namespace cad
