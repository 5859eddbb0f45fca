// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "moemoe/data.hpp"

namespace moemoe {

class Model;

struct PredictionRecord {
  std::vector<int> predicted;
  double confidence = 1.0;
  std::vector<int> gold;
  std::size_t attribute = 0;
  SourceLabel label = SourceLabel::kContext;
};

/// Drops PAD and EOS ids.
std::vector<int> strip_special(const std::vector<int>& ids);
bool is_correct(const PredictionRecord& r);

/// Fraction of exact matches. Throws on an empty set.
double accuracy(std::span<const PredictionRecord> records);

struct RecallAtPrecision {
  double recall = 0.0;
  /// Confidence cutoff achieving `recall`; +inf when no cutoff reaches the precision floor.
  double threshold = std::numeric_limits<double>::infinity();
};

/// Highest recall over cutoffs at the distinct observed confidences whose precision is >= p_min.
/// Among cutoffs with equal recall the largest is reported.
RecallAtPrecision recall_at_precision(std::span<const PredictionRecord> records, double p_min = 0.90);

struct ReportRow {
  std::string group;
  std::size_t n = 0;
  double accuracy = 0.0;
  double recall = 0.0;
  double threshold = std::numeric_limits<double>::infinity();
};

struct Report {
  std::string key;  // "attribute" or "source"
  std::vector<ReportRow> rows;
  ReportRow macro;    // unweighted mean over rows
  ReportRow overall;  // metrics over every record
};

Report per_attribute_report(std::span<const PredictionRecord> records, double p_min = 0.90);
Report per_source_report(std::span<const PredictionRecord> records, double p_min = 0.90);

std::string report_text(const Report& report);
/// Columns: <key>,n,accuracy,recall_at_90,threshold.
std::string report_csv(const Report& report);

/// Greedy predictions over the first `limit` samples (all when limit is 0).
std::vector<PredictionRecord> predict(const Model& model, const Dataset& ds, std::size_t limit = 0);

}  // namespace moemoe
