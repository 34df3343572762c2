#pragma once

// JSON serialization of MetricReport. The uPQ identity upq = (1 - pece) * pq
// is re-checked for every scope on write; a violation means a programming
// error upstream and aborts the write.

#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "evpan/accumulate.hpp"
#include "evpan/core.hpp"

namespace evpan {

namespace detail {

inline void check_upq_identity(const ScopeMetrics& m, const std::string& where) {
  if (std::fabs(m.upq - (1.0 - m.pece) * m.pq) > 1e-12)
    throw ValidationError("report: upq identity violated in scope '" + where + "'");
}

inline nlohmann::json scope_to_json(const ScopeMetrics& m, const std::string& where) {
  check_upq_identity(m, where);
  nlohmann::json j;
  j["pq"] = m.pq;
  j["sq"] = m.sq;
  j["rq"] = m.rq;
  j["pece"] = m.pece;
  j["pece_defaulted"] = m.pece_defaulted;
  j["upq"] = m.upq;
  j["uece"] = m.uece ? nlohmann::json(*m.uece) : nlohmann::json(nullptr);
  j["ece"] = m.ece ? nlohmann::json(*m.ece) : nlohmann::json(nullptr);
  j["matches"] = m.matches;
  j["classes_included"] = m.classes_included;
  return j;
}

inline nlohmann::json curve_to_json(const std::vector<ReliabilityRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const ReliabilityRow& row : rows) {
    nlohmann::json r;
    r["bin_center"] = row.bin_center;
    r["mean_confidence"] = row.mean_confidence;
    r["mean_accuracy"] = row.mean_accuracy;
    r["count"] = row.count;
    j.push_back(std::move(r));
  }
  return j;
}

}  // namespace detail

inline nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["tool"] = "evpan";
  j["format_version"] = 1;
  j["bins"] = report.bins;
  j["image_count"] = report.image_count;
  j["classes"]["stuff"] = report.classes.stuff;
  j["classes"]["thing"] = report.classes.thing;
  j["overall"] = detail::scope_to_json(report.overall, "overall");
  j["things"] = detail::scope_to_json(report.things, "things");
  j["stuff"] = detail::scope_to_json(report.stuff, "stuff");
  j["per_class"] = nlohmann::json::array();
  for (const ClassReport& row : report.per_class) {
    nlohmann::json c = detail::scope_to_json(row.metrics,
                                             "class " + std::to_string(row.class_id));
    c["class_id"] = row.class_id;
    c["is_thing"] = row.is_thing;
    c["tp"] = row.counts.tp;
    c["fp"] = row.counts.fp;
    c["fn"] = row.counts.fn;
    c["iou_sum"] = row.counts.iou_sum;
    j["per_class"].push_back(std::move(c));
  }
  j["uece_image_mean"] =
      report.uece_image_mean ? nlohmann::json(*report.uece_image_mean) : nlohmann::json(nullptr);
  j["reliability"]["uece"] = detail::curve_to_json(report.uece_curve);
  if (report.ece_curve) j["reliability"]["ece"] = detail::curve_to_json(*report.ece_curve);
  if (!report.per_image.empty()) {
    j["per_image"] = nlohmann::json::array();
    for (const ImageReport& row : report.per_image) {
      nlohmann::json entry = detail::scope_to_json(row.metrics, "image " + row.image_id);
      entry["image_id"] = row.image_id;
      j["per_image"].push_back(std::move(entry));
    }
  }
  return j;
}

inline void write_report(const std::string& path, const MetricReport& report) {
  const nlohmann::json j = report_to_json(report);
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("report write: cannot open " + path);
  file << j.dump(2) << "\n";
  if (!file) throw IoError("report write: write failed for " + path);
}

}  // namespace evpan
