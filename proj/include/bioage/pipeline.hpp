#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bioage/cohort.hpp"
#include "bioage/errors.hpp"
#include "bioage/hetreg.hpp"
#include "bioage/iterate.hpp"
#include "bioage/json_util.hpp"
#include "bioage/report.hpp"
#include "bioage/svg.hpp"

namespace bioage {

// End-to-end drivers shared by the CLI and the acceptance harness:
// generate -> run -> report, each stage persisting its artifacts. All
// comparable outputs are byte-reproducible from the config seeds; volatile
// data (timestamps, absolute paths) is confined to the manifest's "session"
// section.

struct RunConfig {
  GeneratorConfig generator;
  IterateConfig iterate;
  TrainConfig baseline;  // conventional model trained on the uncleaned pool
  std::filesystem::path output_dir = "out";
  bool emit_svg = true;
  std::optional<std::filesystem::path> cohort_csv;  // load instead of generating

  void validate() const {
    generator.validate();
    iterate.validate();
    baseline.validate();
    if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  }
};

inline RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  ObjectReader r(j, "config");
  if (r.has("generator")) cfg.generator = generator_config_from_json(r.raw("generator"));
  if (r.has("iterate")) cfg.iterate = iterate_config_from_json(r.raw("iterate"));
  // The baseline defaults to the strategy's trainer config.
  cfg.baseline = cfg.iterate.trainer;
  if (r.has("baseline")) cfg.baseline = train_config_from_json(r.raw("baseline"), "baseline");
  if (r.has("output_dir")) cfg.output_dir = r.require<std::string>("output_dir");
  cfg.emit_svg = r.get_or<bool>("emit_svg", cfg.emit_svg);
  if (r.has("cohort_csv")) cfg.cohort_csv = r.require<std::string>("cohort_csv");
  r.finish();
  cfg.validate();
  return cfg;
}

inline json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["generator"] = generator_config_to_json(cfg.generator);
  j["iterate"] = iterate_config_to_json(cfg.iterate);
  j["baseline"] = train_config_to_json(cfg.baseline);
  j["output_dir"] = cfg.output_dir.string();
  j["emit_svg"] = cfg.emit_svg;
  if (cfg.cohort_csv) j["cohort_csv"] = cfg.cohort_csv->string();
  return j;
}

// Seed stream for the baseline model hanging off the master seed; the
// iteration streams are 1.., the final model uses 0.
inline constexpr std::uint64_t kBaselineTrainStream = 0xBA5E;

namespace detail {

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out.good()) throw IoError("write failed: " + path.string());
}

inline std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOutcome {
  std::filesystem::path cohort_path;
  std::filesystem::path manifest_path;
  int subjects = 0;
  long rows = 0;  // chunk rows, excluding the header
};

inline GenerateOutcome generate_pipeline(const GeneratorConfig& cfg,
                                         const std::filesystem::path& out_dir, bool quiet = false) {
  cfg.validate();
  detail::ensure_dir(out_dir);
  const auto cohort = generate_cohort(cfg);

  GenerateOutcome outcome;
  outcome.cohort_path = out_dir / "cohort.csv";
  outcome.manifest_path = out_dir / "generation_manifest.json";
  outcome.subjects = static_cast<int>(cohort.size());
  outcome.rows = static_cast<long>(cohort.size()) * cfg.chunks_per_subject;

  write_cohort_csv(cohort, outcome.cohort_path.string());

  json manifest;
  manifest["format"] = "bioage-generation";
  manifest["version"] = 1;
  manifest["config"] = generator_config_to_json(cfg);
  manifest["seed"] = cfg.seed;
  json counts;
  counts["typical"] = cfg.n_typical;
  counts["atypical_0.5"] = cfg.n_atypical_per_level[0];
  counts["atypical_1"] = cfg.n_atypical_per_level[1];
  counts["atypical_2"] = cfg.n_atypical_per_level[2];
  counts["total"] = outcome.subjects;
  counts["chunk_rows"] = outcome.rows;
  manifest["counts"] = counts;
  manifest["session"] = {{"written_at", detail::timestamp_utc()},
                         {"output_dir", std::filesystem::absolute(out_dir).string()}};
  detail::write_text_file(outcome.manifest_path, manifest.dump(2) + "\n");

  if (!quiet) {
    std::cout << "generated " << outcome.subjects << " subjects (" << outcome.rows << " chunk rows) -> "
              << outcome.cohort_path.string() << "\n";
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunOutcome {
  std::filesystem::path run_dir;
  std::filesystem::path manifest_path;
  std::filesystem::path final_model_path;
  std::filesystem::path baseline_model_path;
  StrategyResult<HetregModel> strategy;
  ModelParams baseline_params;
  int iterations = 0;
};

inline RunOutcome run_pipeline(const RunConfig& cfg, bool quiet = false) {
  cfg.validate();
  const auto& out_dir = cfg.output_dir;
  detail::ensure_dir(out_dir);
  const std::string started_at = detail::timestamp_utc();

  // Training pool: either a previously generated cohort or a fresh one.
  std::vector<Subject> pool;
  if (cfg.cohort_csv) {
    pool = read_cohort_csv(cfg.cohort_csv->string());
    if (!quiet) std::cout << "loaded " << pool.size() << " subjects from " << cfg.cohort_csv->string() << "\n";
  } else {
    pool = generate_cohort(cfg.generator);
    if (!quiet) std::cout << "generated pool of " << pool.size() << " subjects\n";
  }
  write_cohort_csv(pool, (out_dir / "cohort.csv").string());

  // Held-out evaluation cohort: fresh subjects from a disjoint seed stream,
  // but the same feature embedding as the training pool. Used by the report
  // stage for deviation summaries.
  GeneratorConfig eval_cfg = cfg.generator;
  eval_cfg.embedding_seed = cfg.generator.effective_embedding_seed();
  eval_cfg.seed = derive_seed(cfg.generator.seed, kEvalCohortStream);
  const auto eval_cohort = generate_cohort(eval_cfg);
  write_cohort_csv(eval_cohort, (out_dir / "eval_cohort.csv").string());

  std::vector<AssessmentRow> assessments;
  RunOutcome outcome;
  outcome.run_dir = out_dir;
  if (!quiet) std::cout << "running iterative strategy (max " << cfg.iterate.max_iterations << " iterations)\n";
  outcome.strategy = run_strategy(pool, cfg.iterate, &assessments);
  outcome.iterations = static_cast<int>(outcome.strategy.ledger.history.size());
  if (!quiet) {
    std::cout << "strategy finished after " << outcome.iterations << " iterations; removed "
              << outcome.strategy.removed.size() << " subject(s)\n";
  }

  // Conventional comparison model on the full, uncleaned pool.
  TrainConfig baseline_cfg = cfg.baseline;
  baseline_cfg.seed = derive_seed(cfg.iterate.master_seed, kBaselineTrainStream);
  outcome.baseline_params = train(make_examples(std::span<const Subject>(pool)), baseline_cfg).params;
  if (!quiet) std::cout << "baseline model trained on the uncleaned pool\n";

  outcome.final_model_path = out_dir / "final_model.json";
  outcome.baseline_model_path = out_dir / "baseline_model.json";
  TrainConfig final_cfg = cfg.iterate.trainer;
  final_cfg.seed = derive_seed(cfg.iterate.master_seed, kFinalTrainStream);
  save_model(outcome.final_model_path, outcome.strategy.final_model.params, final_cfg);
  save_model(outcome.baseline_model_path, outcome.baseline_params, baseline_cfg);

  {
    std::ofstream out(out_dir / "assessments.csv", std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + (out_dir / "assessments.csv").string());
    write_assessments_csv(assessments, out);
  }

  std::vector<std::string> cleaned_ids;
  for (const auto& s : outcome.strategy.cleaned) cleaned_ids.push_back(s.id);

  json manifest;
  manifest["format"] = "bioage-run";
  manifest["version"] = 1;
  {
    RunConfig echo = cfg;
    manifest["config"] = run_config_to_json(echo);
  }
  manifest["iterations"] = json::array();
  for (const auto& rec : outcome.strategy.ledger.history) {
    manifest["iterations"].push_back(iteration_record_to_json(rec));
  }
  manifest["removed"] = outcome.strategy.removed;
  manifest["cleaned"] = cleaned_ids;
  manifest["truncated"] = outcome.strategy.truncated;
  manifest["artifacts"] = {{"cohort", "cohort.csv"},
                           {"eval_cohort", "eval_cohort.csv"},
                           {"assessments", "assessments.csv"},
                           {"final_model", "final_model.json"},
                           {"baseline_model", "baseline_model.json"}};
  manifest["session"] = {{"started_at", started_at},
                         {"finished_at", detail::timestamp_utc()},
                         {"output_dir", std::filesystem::absolute(out_dir).string()}};
  outcome.manifest_path = out_dir / "run_manifest.json";
  detail::write_text_file(outcome.manifest_path, manifest.dump(2) + "\n");
  return outcome;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOutcome {
  std::vector<std::filesystem::path> files;
  DetectionQuality detection;
};

inline ReportOutcome report_pipeline(const std::filesystem::path& run_dir,
                                     const std::filesystem::path& out_dir, bool quiet = false) {
  const auto manifest_path = run_dir / "run_manifest.json";
  const json manifest = detail::load_json_file(manifest_path);

  ObjectReader r(manifest, manifest_path.string());
  if (r.require<std::string>("format") != "bioage-run") {
    throw IoError(manifest_path.string() + ": not a run manifest");
  }
  r.require<int>("version");
  ObjectReader artifacts(r.raw("artifacts"), manifest_path.string() + ".artifacts");
  const auto cohort_path = run_dir / artifacts.require<std::string>("cohort");
  const auto eval_path = run_dir / artifacts.require<std::string>("eval_cohort");
  const auto final_model_path = run_dir / artifacts.require<std::string>("final_model");
  const auto baseline_model_path = run_dir / artifacts.require<std::string>("baseline_model");

  const auto cohort = read_cohort_csv(cohort_path.string());
  const auto eval_cohort = read_cohort_csv(eval_path.string());
  const HetregModel final_model{load_model(final_model_path).params};
  const HetregModel baseline_model{load_model(baseline_model_path).params};

  FlagLedger ledger;
  for (const auto& rec_json : r.raw("iterations")) {
    ledger.apply(iteration_record_from_json(rec_json, manifest_path.string() + ".iterations"));
  }
  const auto removed = r.raw("removed").get<std::vector<std::string>>();

  detail::ensure_dir(out_dir);
  ReportOutcome outcome;
  auto emit = [&](const std::filesystem::path& p, const std::string& text) {
    detail::write_text_file(p, text);
    outcome.files.push_back(p);
  };

  // Cumulative outlier curves per group.
  const auto curves = cumulative_curves(ledger, cohort);
  {
    std::ostringstream csv;
    write_curves_csv(curves, csv);
    emit(out_dir / "cumulative_curves.csv", csv.str());
  }

  // Signed deviation summaries for both models on the held-out cohort.
  auto ba_summaries = deviation_summary(final_model, eval_cohort, "ba_trained");
  auto ca_summaries = deviation_summary(baseline_model, eval_cohort, "ca_trained");
  {
    std::vector<DeviationSummary> all = ca_summaries;
    all.insert(all.end(), ba_summaries.begin(), ba_summaries.end());
    std::ostringstream csv;
    write_deviation_csv(all, csv);
    emit(out_dir / "deviation_summary.csv", csv.str());
  }

  outcome.detection = detection_quality(removed, cohort);

  json metrics;
  metrics["format"] = "bioage-report";
  metrics["version"] = 1;
  metrics["iterations"] = ledger.history.size();
  metrics["truncated"] = r.raw("truncated").get<bool>();
  metrics["removed_count"] = removed.size();
  metrics["detection_quality"] = detection_quality_to_json(outcome.detection);
  json curve_finals;
  for (const auto& c : curves) {
    curve_finals[c.group] = c.points.empty() ? json(nullptr) : json(c.points.back().pct);
  }
  metrics["final_cumulative_pct"] = curve_finals;
  json dev_json = json::array();
  for (const auto* set : {&ca_summaries, &ba_summaries}) {
    for (const auto& s : *set) {
      dev_json.push_back({{"model", s.model_tag},
                          {"group", s.group},
                          {"n", s.deviations.size()},
                          {"fit_mean", s.fit_mean},
                          {"fit_std", s.fit_std}});
    }
  }
  metrics["deviation_fits"] = dev_json;
  json mae_series = json::array();
  for (const auto& rec : ledger.history) mae_series.push_back(rec.validation_mae);
  metrics["validation_mae"] = mae_series;
  emit(out_dir / "metrics.json", metrics.dump(2) + "\n");

  const bool emit_svg = [&] {
    ObjectReader cfg_reader(r.raw("config"), "config");
    const bool v = cfg_reader.get_or<bool>("emit_svg", true);
    return v;
  }();
  if (emit_svg) {
    std::vector<svg::Series> series;
    for (const auto& c : curves) {
      svg::Series s;
      s.label = c.group;
      for (const auto& p : c.points) s.points.emplace_back(p.iteration, p.pct);
      series.push_back(std::move(s));
    }
    emit(out_dir / "cumulative_curves.svg",
         svg::line_chart("Cumulative flagged subjects", "iteration", "cumulative flagged [%]", series));

    for (const auto& ba : ba_summaries) {
      const DeviationSummary* ca = nullptr;
      for (const auto& c : ca_summaries) {
        if (c.group == ba.group) ca = &c;
      }
      std::vector<svg::HistogramSeries> hist;
      if (ca) hist.push_back({"ca_trained", ca->deviations, ca->fit_mean, ca->fit_std});
      hist.push_back({"ba_trained", ba.deviations, ba.fit_mean, ba.fit_std});
      emit(out_dir / ("deviation_" + ba.group + ".svg"),
           svg::deviation_histogram("Prediction deviations: " + ba.group, hist));
    }
  }

  if (!quiet) {
    std::cout << "report written to " << out_dir.string() << " (" << outcome.files.size() << " files)\n";
  }
  return outcome;
}

}  // namespace bioage
