#pragma once

#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bioage/cohort.hpp"
#include "bioage/errors.hpp"
#include "bioage/hetreg.hpp"
#include "bioage/json_util.hpp"

namespace bioage {

// Per-subject consolidation of chunk predictions and the uncertainty-scaled
// outlier decision: a subject is flagged when the absolute deviation of the
// consolidated age prediction from the chronological age exceeds R times the
// consolidated uncertainty.

struct OutlierConfig {
  double r = 1.96;  // threshold multiplier; default reflects a 95% interval

  void validate() const {
    if (!(r > 0)) throw ConfigError("outlier.r: must be > 0");
  }
};

inline OutlierConfig outlier_config_from_json(const json& j, const std::string& path = "outlier") {
  OutlierConfig cfg;
  ObjectReader reader(j, path);
  cfg.r = reader.get_or<double>("r", cfg.r);
  reader.finish();
  cfg.validate();
  return cfg;
}

inline json outlier_config_to_json(const OutlierConfig& cfg) { return json{{"r", cfg.r}}; }

struct SubjectAssessment {
  std::string subject_id;
  double mean_age = 0.0;   // consolidated prediction, years
  double sigma = 0.0;      // consolidated uncertainty, years
  double deviation = 0.0;  // |mean_age - CA|
  double threshold = 0.0;  // r * sigma
  bool flagged = false;
};

// Arithmetic mean of the chunk means and of the chunk standard deviations.
inline std::pair<double, double> consolidate_subject(std::span<const ChunkPrediction> predictions) {
  if (predictions.empty()) throw RuntimeError("consolidate_subject: no chunk predictions");
  double mean = 0.0;
  double sigma = 0.0;
  for (const auto& p : predictions) {
    mean += p.mean_age;
    sigma += p.sigma();
  }
  const double k = static_cast<double>(predictions.size());
  return {mean / k, sigma / k};
}

inline SubjectAssessment assess_subject(const Subject& subject, double mean_age, double sigma,
                                        const OutlierConfig& cfg) {
  cfg.validate();
  if (!(sigma > 0)) {
    throw RuntimeError("assess_subject: sigma must be > 0 (got " + std::to_string(sigma) + ")");
  }
  SubjectAssessment a;
  a.subject_id = subject.id;
  a.mean_age = mean_age;
  a.sigma = sigma;
  a.deviation = std::fabs(mean_age - subject.chronological_age);
  a.threshold = cfg.r * sigma;
  a.flagged = a.deviation > a.threshold;  // strict; ties are not flagged
  return a;
}

// Assessment rows as produced across the iterative strategy.
struct AssessmentRow {
  int iteration = 0;
  double chronological_age = 0.0;
  SubjectAssessment assessment;
};

inline void write_assessments_csv(std::span<const AssessmentRow> rows, std::ostream& out) {
  out << "iteration,subject_id,ca,pred_mean,sigma,deviation,threshold,flagged\n";
  for (const auto& row : rows) {
    const auto& a = row.assessment;
    out << row.iteration << ',' << a.subject_id << ',' << detail::format_double(row.chronological_age)
        << ',' << detail::format_double(a.mean_age) << ',' << detail::format_double(a.sigma) << ','
        << detail::format_double(a.deviation) << ',' << detail::format_double(a.threshold) << ','
        << (a.flagged ? 1 : 0) << "\n";
  }
}

}  // namespace bioage
