// Copyright 2026 The MoEMoE Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "moemoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "moemoe/model.hpp"

namespace moemoe {

std::vector<int> strip_special(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids)
    if (id != Vocab::kPad && id != Vocab::kEos) out.push_back(id);
  return out;
}

bool is_correct(const PredictionRecord& r) { return strip_special(r.predicted) == strip_special(r.gold); }

namespace {

void check_records(std::span<const PredictionRecord> records, const char* what) {
  if (records.empty()) throw std::invalid_argument(fmt::format("{}: empty record set", what));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double c = records[i].confidence;
    if (!std::isfinite(c) || c <= 0.0) {
      throw std::invalid_argument(fmt::format("{}: record {} has confidence {} outside (0, 1]", what, i, c));
    }
  }
}

ReportRow make_row(std::string group, std::span<const PredictionRecord> records, double p_min) {
  ReportRow row;
  row.group = std::move(group);
  row.n = records.size();
  row.accuracy = accuracy(records);
  const auto r = recall_at_precision(records, p_min);
  row.recall = r.recall;
  row.threshold = r.threshold;
  return row;
}

template <typename KeyFn>
Report grouped_report(std::span<const PredictionRecord> records, double p_min, std::string key, KeyFn&& key_of) {
  check_records(records, "report");
  std::map<std::string, std::vector<PredictionRecord>> groups;
  for (const auto& r : records) groups[key_of(r)].push_back(r);
  Report rep;
  rep.key = std::move(key);
  for (auto& [g, rs] : groups) rep.rows.push_back(make_row(g, rs, p_min));
  rep.macro.group = "macro";
  rep.macro.n = records.size();
  rep.macro.threshold = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : rep.rows) {
    rep.macro.accuracy += row.accuracy;
    rep.macro.recall += row.recall;
  }
  rep.macro.accuracy /= static_cast<double>(rep.rows.size());
  rep.macro.recall /= static_cast<double>(rep.rows.size());
  rep.overall = make_row("all", records, p_min);
  return rep;
}

std::string fmt_threshold(double t) {
  if (std::isnan(t)) return "";
  if (std::isinf(t)) return "inf";
  return fmt::format("{:.6f}", t);
}

}  // namespace

double accuracy(std::span<const PredictionRecord> records) {
  check_records(records, "accuracy");
  std::size_t hits = 0;
  for (const auto& r : records) hits += is_correct(r) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

RecallAtPrecision recall_at_precision(std::span<const PredictionRecord> records, double p_min) {
  check_records(records, "recall_at_precision");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].confidence > records[b].confidence; });
  const double total = static_cast<double>(records.size());
  RecallAtPrecision best;
  std::size_t answered = 0, correct = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double tau = records[order[i]].confidence;
    while (i < order.size() && records[order[i]].confidence == tau) {
      ++answered;
      correct += is_correct(records[order[i]]) ? 1 : 0;
      ++i;
    }
    const double precision = static_cast<double>(correct) / static_cast<double>(answered);
    const double recall = static_cast<double>(correct) / total;
    if (precision >= p_min && (std::isinf(best.threshold) || recall > best.recall)) {
      best.recall = recall;
      best.threshold = tau;
    }
  }
  return best;
}

Report per_attribute_report(std::span<const PredictionRecord> records, double p_min) {
  return grouped_report(records, p_min, "attribute", [](const PredictionRecord& r) {
    return fmt::format("attr_{:02d}", r.attribute);
  });
}

Report per_source_report(std::span<const PredictionRecord> records, double p_min) {
  return grouped_report(records, p_min, "source", [](const PredictionRecord& r) { return to_string(r.label); });
}

std::string report_text(const Report& report) {
  std::string out = fmt::format("{:<12} {:>6} {:>9} {:>12} {:>10}\n", report.key, "n", "accuracy", "recall_at_90", "threshold");
  auto line = [&](const ReportRow& r) {
    out += fmt::format("{:<12} {:>6} {:>9.4f} {:>12.4f} {:>10}\n", r.group, r.n, r.accuracy, r.recall,
                       fmt_threshold(r.threshold));
  };
  for (const auto& r : report.rows) line(r);
  line(report.macro);
  line(report.overall);
  return out;
}

std::string report_csv(const Report& report) {
  std::string out = fmt::format("{},n,accuracy,recall_at_90,threshold\n", report.key);
  auto line = [&](const ReportRow& r) {
    out += fmt::format("{},{},{:.6f},{:.6f},{}\n", r.group, r.n, r.accuracy, r.recall, fmt_threshold(r.threshold));
  };
  for (const auto& r : report.rows) line(r);
  line(report.macro);
  line(report.overall);
  return out;
}

std::vector<PredictionRecord> predict(const Model& model, const Dataset& ds, std::size_t limit) {
  const std::size_t n = limit == 0 ? ds.samples.size() : std::min(limit, ds.samples.size());
  std::vector<PredictionRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = ds.samples[i];
    Generation g = generate(model, s, model.config().max_decode_len - 1);
    out.push_back(PredictionRecord{std::move(g.tokens), g.confidence, s.answer, s.attribute, s.label});
  }
  return out;
}

}  // namespace moemoe
