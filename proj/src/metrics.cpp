// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#include "cad/metrics.hpp"

#include <cstdio>

#include "cad/tensor.hpp"

namespace cad {

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void MetricsTable::add_result(const std::string& scope,
                              const std::string& question_type, bool correct) {
  for (auto& row : rows_) {
    if (row.scope == scope && row.question_type == question_type) {
      ++row.n;
      if (correct) ++row.correct;
      return;
    }
  }
  rows_.push_back({scope, question_type, 1, correct ? 1L : 0L});
}

long MetricsTable::total() const {
  long t = 0;
  for (const auto& row : rows_) t += row.n;
  return t;
}

double MetricsTable::row_accuracy(const std::string& scope,
                                  const std::string& question_type) const {
  for (const auto& row : rows_) {
    if (row.scope == scope && row.question_type == question_type)
      return row.accuracy();
  }
  fail("metrics: no row for scope '" + scope + "', type '" + question_type + "'");
}

double MetricsTable::scope_average(const std::string& scope) const {
  double sum = 0.0;
  long k = 0;
  for (const auto& row : rows_) {
    if (row.scope == scope) {
      sum += row.accuracy();
      ++k;
    }
  }
  check(k > 0, "metrics: no rows for scope '" + scope + "'");
  return sum / static_cast<double>(k);
}

double MetricsTable::overall_average() const {
  check(!rows_.empty(), "metrics: empty table");
  double sum = 0.0;
  for (const auto& row : rows_) sum += row.accuracy();
  return sum / static_cast<double>(rows_.size());
}

std::string MetricsTable::to_tsv() const {
  std::string out = "scope\tquestion_type\tn\taccuracy\n";
  std::vector<std::string> scopes;
  for (const auto& row : rows_) {
    out += row.scope + "\t" + row.question_type + "\t" + std::to_string(row.n) +
           "\t" + format_fixed(row.accuracy()) + "\n";
    bool known = false;
    for (const auto& s : scopes) known = known || s == row.scope;
    if (!known) scopes.push_back(row.scope);
  }
  for (const auto& s : scopes) {
    long n = 0;
    for (const auto& row : rows_)
      if (row.scope == s) n += row.n;
    out += s + "\tavg\t" + std::to_string(n) + "\t" +
           format_fixed(scope_average(s)) + "\n";
  }
  out += "all\tavg\t" + std::to_string(total()) + "\t" +
         format_fixed(overall_average()) + "\n";
  return out;
}

}  // namespace cad
