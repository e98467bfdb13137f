#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "bioage/cohort.hpp"
#include "bioage/consolidate.hpp"
#include "bioage/errors.hpp"
#include "bioage/iterate.hpp"
#include "bioage/json_util.hpp"

namespace bioage {

// Result analysis over finished runs: cumulative outlier curves per cohort
// group, signed deviation distributions with normal fits for the two trained
// models, and detection quality against the generator's planted ground truth.
// This is the only module that reads Subject::group / Subject::true_offset.

inline constexpr std::array<Group, 4> kAllGroups{Group::Typical, Group::AtypicalHalf,
                                                 Group::AtypicalOne, Group::AtypicalTwo};

struct CumulativeCurve {
  struct Point {
    int iteration = 0;
    int count = 0;   // distinct subjects of the group flagged so far
    double pct = 0;  // 100 * count / group population
  };
  std::string group;
  std::vector<Point> points;
};

inline std::vector<CumulativeCurve> cumulative_curves(const FlagLedger& ledger,
                                                      const std::vector<Subject>& cohort) {
  std::map<std::string, Group> group_of;
  std::map<Group, int> population;
  for (const auto& s : cohort) {
    group_of[s.id] = s.group;
    ++population[s.group];
  }

  std::map<Group, std::set<std::string>> seen;
  std::map<Group, std::vector<CumulativeCurve::Point>> points;
  for (const auto& rec : ledger.history) {
    for (const auto& id : rec.flagged_ids) {
      auto it = group_of.find(id);
      if (it == group_of.end()) {
        throw RuntimeError("cumulative_curves: flagged id '" + id + "' is not in the cohort");
      }
      seen[it->second].insert(id);
    }
    for (const auto& [group, pop] : population) {
      const int count = static_cast<int>(seen[group].size());
      points[group].push_back(
          {rec.index, count, 100.0 * static_cast<double>(count) / static_cast<double>(pop)});
    }
  }

  std::vector<CumulativeCurve> curves;
  for (Group g : kAllGroups) {
    auto it = population.find(g);
    if (it == population.end()) continue;
    curves.push_back(CumulativeCurve{group_label(g), points[g]});
  }
  return curves;
}

struct DeviationSummary {
  std::string group;
  std::string model_tag;           // e.g. "ca_trained" / "ba_trained"
  std::vector<double> deviations;  // signed, predicted minus CA, years
  double fit_mean = 0.0;
  double fit_std = 0.0;  // sample standard deviation (n-1); 0 when n < 2
};

namespace detail {
// Two-pass sample moments.
inline std::pair<double, double> sample_moments(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}
}  // namespace detail

// Consolidated signed deviations per group for one model. The same code path
// serves the conventionally trained and the cleaned-pool model; only the
// supplied model differs.
template <typename Model>
std::vector<DeviationSummary> deviation_summary(const Model& model, const std::vector<Subject>& subjects,
                                                std::string_view model_tag) {
  if (subjects.empty()) throw RuntimeError("deviation_summary: empty subject list");
  std::map<Group, std::vector<double>> devs;
  for (const auto& s : subjects) {
    const auto [mean_age, sigma] = consolidate_subject(model.predictions(s));
    (void)sigma;
    devs[s.group].push_back(mean_age - s.chronological_age);
  }
  std::vector<DeviationSummary> out;
  for (Group g : kAllGroups) {
    auto it = devs.find(g);
    if (it == devs.end()) continue;
    DeviationSummary sum;
    sum.group = group_label(g);
    sum.model_tag = std::string(model_tag);
    sum.deviations = std::move(it->second);
    const auto [mean, sd] = detail::sample_moments(sum.deviations);
    sum.fit_mean = mean;
    sum.fit_std = sd;
    out.push_back(std::move(sum));
  }
  return out;
}

struct DetectionQuality {
  // Rates are undefined (not 0) when the corresponding group is empty.
  std::array<std::optional<double>, 3> recall_per_level;  // levels 0.5 / 1 / 2
  std::optional<double> recall_overall;                   // all atypical subjects pooled
  std::optional<double> typical_fpr;
  std::optional<double> recall_fpr_ratio;  // defined only when FPR > 0
};

inline DetectionQuality detection_quality(const std::vector<std::string>& removed,
                                          const std::vector<Subject>& cohort) {
  std::map<std::string, Group> group_of;
  for (const auto& s : cohort) group_of[s.id] = s.group;
  std::set<std::string> removed_set;
  for (const auto& id : removed) {
    if (group_of.find(id) == group_of.end()) {
      throw RuntimeError("detection_quality: removed id '" + id + "' is not in the cohort");
    }
    removed_set.insert(id);
  }

  std::map<Group, int> population;
  std::map<Group, int> hit;
  for (const auto& s : cohort) {
    ++population[s.group];
    if (removed_set.count(s.id)) ++hit[s.group];
  }

  auto rate = [&](Group g) -> std::optional<double> {
    const auto it = population.find(g);
    if (it == population.end() || it->second == 0) return std::nullopt;
    return static_cast<double>(hit[g]) / static_cast<double>(it->second);
  };

  DetectionQuality q;
  int atypical_pop = 0;
  int atypical_hit = 0;
  for (std::size_t i = 0; i < kAtypicalGroups.size(); ++i) {
    q.recall_per_level[i] = rate(kAtypicalGroups[i]);
    atypical_pop += population[kAtypicalGroups[i]];
    atypical_hit += hit[kAtypicalGroups[i]];
  }
  if (atypical_pop > 0) {
    q.recall_overall = static_cast<double>(atypical_hit) / static_cast<double>(atypical_pop);
  }
  q.typical_fpr = rate(Group::Typical);
  if (q.recall_overall && q.typical_fpr && *q.typical_fpr > 0) {
    q.recall_fpr_ratio = *q.recall_overall / *q.typical_fpr;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline void write_curves_csv(const std::vector<CumulativeCurve>& curves, std::ostream& out) {
  out << "group,iteration,cumulative_count,cumulative_pct\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << c.group << ',' << p.iteration << ',' << p.count << ',' << detail::format_double(p.pct)
          << "\n";
    }
  }
}

inline void write_deviation_csv(const std::vector<DeviationSummary>& summaries, std::ostream& out) {
  out << "model,group,n,fit_mean,fit_std\n";
  for (const auto& s : summaries) {
    out << s.model_tag << ',' << s.group << ',' << s.deviations.size() << ','
        << detail::format_double(s.fit_mean) << ',' << detail::format_double(s.fit_std) << "\n";
  }
}

inline json detection_quality_to_json(const DetectionQuality& q) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["recall"] = {{"atypical_0.5", opt(q.recall_per_level[0])},
                 {"atypical_1", opt(q.recall_per_level[1])},
                 {"atypical_2", opt(q.recall_per_level[2])},
                 {"overall", opt(q.recall_overall)}};
  j["typical_fpr"] = opt(q.typical_fpr);
  j["recall_fpr_ratio"] = opt(q.recall_fpr_ratio);
  return j;
}

inline DetectionQuality detection_quality_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  auto opt = [](const json& v) -> std::optional<double> {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  DetectionQuality q;
  ObjectReader recall(r.raw("recall"), path + ".recall");
  q.recall_per_level[0] = opt(recall.raw("atypical_0.5"));
  q.recall_per_level[1] = opt(recall.raw("atypical_1"));
  q.recall_per_level[2] = opt(recall.raw("atypical_2"));
  q.recall_overall = opt(recall.raw("overall"));
  recall.finish();
  q.typical_fpr = opt(r.raw("typical_fpr"));
  q.recall_fpr_ratio = opt(r.raw("recall_fpr_ratio"));
  r.finish();
  return q;
}

}  // namespace bioage
