#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bioage/cohort.hpp"
#include "bioage/consolidate.hpp"
#include "bioage/errors.hpp"
#include "bioage/hetreg.hpp"
#include "bioage/json_util.hpp"
#include "bioage/rng.hpp"

namespace bioage {

// Iterative outlier-segregation strategy: shuffle/split the pool, train a
// fresh regressor on one half, flag outliers on the other half, merge back,
// repeat. The pool is never shrunk mid-run; removal happens once at the end,
// and only subjects flagged in at least removal_min_flags iterations go.

struct IterationRecord {
  int index = 0;  // 1-based
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
  std::vector<std::string> flagged_ids;
  std::vector<std::string> new_flagged_ids;  // flagged here with no prior flags
  double validation_mae = 0.0;               // subject-level, years
  std::uint64_t seed_used = 0;
};

struct FlagLedger {
  std::map<std::string, int> flag_count;
  std::vector<IterationRecord> history;

  void apply(IterationRecord record) {
    for (const auto& id : record.flagged_ids) ++flag_count[id];
    history.push_back(std::move(record));
  }

  static std::map<std::string, int> recount(const std::vector<IterationRecord>& history) {
    std::map<std::string, int> counts;
    for (const auto& rec : history) {
      for (const auto& id : rec.flagged_ids) ++counts[id];
    }
    return counts;
  }
};

enum class StopRule {
  FirstTimeFlags,  // an iteration is clean when it produces no first-time flags
  AnyFlags         // non-default alternative: clean means no flags at all
};

inline std::string stop_rule_label(StopRule rule) {
  return rule == StopRule::FirstTimeFlags ? "first_time_flags" : "any_flags";
}

inline StopRule parse_stop_rule(const std::string& s, const std::string& path) {
  if (s == "first_time_flags") return StopRule::FirstTimeFlags;
  if (s == "any_flags") return StopRule::AnyFlags;
  throw ConfigError(path + ": expected 'first_time_flags' or 'any_flags'");
}

struct IterateConfig {
  double train_fraction = 0.5;
  OutlierConfig outlier;
  TrainConfig trainer;
  int stop_window = 3;       // consecutive clean iterations required
  int max_iterations = 50;   // hard termination cap
  int removal_min_flags = 2; // "more than one iteration"
  StopRule stop_rule = StopRule::FirstTimeFlags;
  std::uint64_t master_seed = 1;

  void validate() const {
    if (!(train_fraction > 0 && train_fraction < 1)) {
      throw ConfigError("iterate.train_fraction: must be in (0, 1)");
    }
    outlier.validate();
    trainer.validate();
    if (stop_window < 1) throw ConfigError("iterate.stop_window: must be >= 1");
    if (max_iterations < stop_window) {
      throw ConfigError("iterate.max_iterations: must be >= stop_window");
    }
    if (removal_min_flags < 1) throw ConfigError("iterate.removal_min_flags: must be >= 1");
  }
};

inline IterateConfig iterate_config_from_json(const json& j, const std::string& path = "iterate") {
  IterateConfig cfg;
  ObjectReader r(j, path);
  cfg.train_fraction = r.get_or<double>("train_fraction", cfg.train_fraction);
  if (r.has("outlier")) cfg.outlier = outlier_config_from_json(r.raw("outlier"), path + ".outlier");
  if (r.has("trainer")) cfg.trainer = train_config_from_json(r.raw("trainer"), path + ".trainer");
  cfg.stop_window = r.get_or<int>("stop_window", cfg.stop_window);
  cfg.max_iterations = r.get_or<int>("max_iterations", cfg.max_iterations);
  cfg.removal_min_flags = r.get_or<int>("removal_min_flags", cfg.removal_min_flags);
  if (r.has("stop_rule")) {
    cfg.stop_rule = parse_stop_rule(r.require<std::string>("stop_rule"), path + ".stop_rule");
  }
  cfg.master_seed = r.get_or<std::uint64_t>("master_seed", cfg.master_seed);
  r.finish();
  cfg.validate();
  return cfg;
}

inline json iterate_config_to_json(const IterateConfig& cfg) {
  json j;
  j["train_fraction"] = cfg.train_fraction;
  j["outlier"] = outlier_config_to_json(cfg.outlier);
  j["trainer"] = train_config_to_json(cfg.trainer);
  j["stop_window"] = cfg.stop_window;
  j["max_iterations"] = cfg.max_iterations;
  j["removal_min_flags"] = cfg.removal_min_flags;
  j["stop_rule"] = stop_rule_label(cfg.stop_rule);
  j["master_seed"] = cfg.master_seed;
  return j;
}

// Seed streams hanging off the master seed. Iteration i uses stream i
// (1-based); 0 is reserved for the final clean-pool training.
inline constexpr std::uint64_t kFinalTrainStream = 0;
inline constexpr std::uint64_t kSplitSubstream = 1;
inline constexpr std::uint64_t kTrainSubstream = 2;

// Production trainer/model pair. Tests substitute stubs with the same shape:
// trainer.fit(subjects, seed) -> model, model.predictions(subject) -> chunk
// predictions.
struct HetregModel {
  ModelParams params;

  std::vector<ChunkPrediction> predictions(const Subject& s) const {
    std::vector<ChunkPrediction> out;
    out.reserve(s.chunks.size());
    for (const auto& chunk : s.chunks) out.push_back(forward(params, chunk, s.sex));
    return out;
  }
};

struct HetregTrainer {
  TrainConfig config;

  HetregModel fit(std::span<const Subject> subjects, std::uint64_t seed) const {
    TrainConfig c = config;
    c.seed = seed;
    return HetregModel{train(make_examples(subjects), c).params};
  }
};

namespace detail {
inline std::vector<std::string> sorted_ids(const std::vector<Subject>& subjects) {
  std::vector<std::string> ids;
  ids.reserve(subjects.size());
  for (const auto& s : subjects) ids.push_back(s.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}
}  // namespace detail

// One shuffle/split/train/flag cycle. Applies the resulting record to the
// ledger and returns it. Assessment rows are appended to sink when given.
template <typename Trainer>
IterationRecord run_iteration(const std::vector<Subject>& pool, FlagLedger& ledger,
                              const IterateConfig& cfg, int iteration_index, const Trainer& trainer,
                              std::vector<AssessmentRow>* sink = nullptr) {
  cfg.validate();
  if (pool.size() < 2) throw ConfigError("run_iteration: need at least 2 subjects");

  IterationRecord rec;
  rec.index = iteration_index;
  rec.seed_used = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(iteration_index));

  auto [train_side, validation_side] =
      split_subjects(pool, cfg.train_fraction, derive_seed(rec.seed_used, kSplitSubstream));
  rec.train_ids = detail::sorted_ids(train_side);
  rec.validation_ids = detail::sorted_ids(validation_side);

  auto model = [&] {
    try {
      return trainer.fit(std::span<const Subject>(train_side), derive_seed(rec.seed_used, kTrainSubstream));
    } catch (const std::exception& e) {
      throw RuntimeError("iteration " + std::to_string(iteration_index) + ": " + e.what());
    }
  }();

  double abs_dev_total = 0.0;
  for (const auto& subject : validation_side) {
    const auto preds = model.predictions(subject);
    const auto [mean_age, sigma] = consolidate_subject(preds);
    const SubjectAssessment a = assess_subject(subject, mean_age, sigma, cfg.outlier);
    abs_dev_total += a.deviation;
    if (a.flagged) {
      rec.flagged_ids.push_back(subject.id);
      auto it = ledger.flag_count.find(subject.id);
      if (it == ledger.flag_count.end() || it->second == 0) rec.new_flagged_ids.push_back(subject.id);
    }
    if (sink) sink->push_back(AssessmentRow{iteration_index, subject.chronological_age, a});
  }
  rec.validation_mae = abs_dev_total / static_cast<double>(validation_side.size());
  std::sort(rec.flagged_ids.begin(), rec.flagged_ids.end());
  std::sort(rec.new_flagged_ids.begin(), rec.new_flagged_ids.end());

  ledger.apply(rec);
  return ledger.history.back();
}

inline std::vector<std::string> removal_candidates(const FlagLedger& ledger, int min_flags) {
  std::vector<std::string> out;
  for (const auto& [id, count] : ledger.flag_count) {
    if (count >= min_flags) out.push_back(id);
  }
  return out;  // map order: already sorted
}

template <typename Model>
struct StrategyResult {
  FlagLedger ledger;
  std::vector<Subject> cleaned;      // pool order preserved
  std::vector<std::string> removed;  // sorted
  Model final_model;
  bool truncated = false;  // hit max_iterations before the stop window
};

// Full strategy: iterate until stop_window consecutive clean iterations (or
// the cap), remove multiply-flagged subjects, train the final model on the
// cleaned pool. Deterministic given (pool, config).
template <typename Trainer>
auto run_strategy(const std::vector<Subject>& pool, const IterateConfig& cfg, const Trainer& trainer,
                  std::vector<AssessmentRow>* sink = nullptr)
    -> StrategyResult<decltype(trainer.fit(std::span<const Subject>{}, std::uint64_t{}))> {
  cfg.validate();
  if (pool.size() < 2) throw ConfigError("run_strategy: need at least 2 subjects");

  StrategyResult<decltype(trainer.fit(std::span<const Subject>{}, std::uint64_t{}))> result;
  int clean_streak = 0;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const IterationRecord rec = run_iteration(pool, result.ledger, cfg, it, trainer, sink);
    const bool clean = cfg.stop_rule == StopRule::FirstTimeFlags ? rec.new_flagged_ids.empty()
                                                                 : rec.flagged_ids.empty();
    clean_streak = clean ? clean_streak + 1 : 0;
    if (clean_streak >= cfg.stop_window) break;
    if (it == cfg.max_iterations) result.truncated = true;
  }

  result.removed = removal_candidates(result.ledger, cfg.removal_min_flags);
  const std::set<std::string> removed_set(result.removed.begin(), result.removed.end());
  for (const auto& s : pool) {
    if (removed_set.find(s.id) == removed_set.end()) result.cleaned.push_back(s);
  }
  if (result.cleaned.size() < 2) {
    throw RuntimeError("run_strategy: only " + std::to_string(result.cleaned.size()) +
                       " subject(s) left after removing " + std::to_string(result.removed.size()) +
                       " flagged subject(s); cannot train the final model");
  }
  result.final_model = trainer.fit(std::span<const Subject>(result.cleaned),
                                   derive_seed(cfg.master_seed, kFinalTrainStream));
  return result;
}

inline StrategyResult<HetregModel> run_strategy(const std::vector<Subject>& pool,
                                                const IterateConfig& cfg,
                                                std::vector<AssessmentRow>* sink = nullptr) {
  return run_strategy(pool, cfg, HetregTrainer{cfg.trainer}, sink);
}

// Manifest serialization for iteration records.
inline json iteration_record_to_json(const IterationRecord& rec) {
  json j;
  j["index"] = rec.index;
  j["seed_used"] = rec.seed_used;
  j["train_ids"] = rec.train_ids;
  j["validation_ids"] = rec.validation_ids;
  j["flagged_ids"] = rec.flagged_ids;
  j["new_flagged_ids"] = rec.new_flagged_ids;
  j["validation_mae"] = rec.validation_mae;
  return j;
}

inline IterationRecord iteration_record_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  IterationRecord rec;
  rec.index = r.require<int>("index");
  rec.seed_used = r.require<std::uint64_t>("seed_used");
  rec.train_ids = r.require<std::vector<std::string>>("train_ids");
  rec.validation_ids = r.require<std::vector<std::string>>("validation_ids");
  rec.flagged_ids = r.require<std::vector<std::string>>("flagged_ids");
  rec.new_flagged_ids = r.require<std::vector<std::string>>("new_flagged_ids");
  rec.validation_mae = r.require<double>("validation_mae");
  r.finish();
  return rec;
}

}  // namespace bioage
