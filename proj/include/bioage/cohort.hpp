#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bioage/errors.hpp"
#include "bioage/json_util.hpp"
#include "bioage/rng.hpp"

namespace bioage {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// Cohort group. Atypical levels are ordinal severity labels used only for
// generation and reporting; the regressor and the cleaning loop never see
// them.
enum class Group { Typical, AtypicalHalf, AtypicalOne, AtypicalTwo };

inline constexpr std::array<Group, 3> kAtypicalGroups{Group::AtypicalHalf, Group::AtypicalOne,
                                                      Group::AtypicalTwo};
inline constexpr std::array<double, 3> kAtypicalLevels{0.5, 1.0, 2.0};

inline std::string group_label(Group g) {
  switch (g) {
    case Group::Typical: return "typical";
    case Group::AtypicalHalf: return "atypical_0.5";
    case Group::AtypicalOne: return "atypical_1";
    case Group::AtypicalTwo: return "atypical_2";
  }
  return "typical";
}

inline Group parse_group(std::string_view s) {
  if (s == "typical") return Group::Typical;
  if (s == "atypical_0.5") return Group::AtypicalHalf;
  if (s == "atypical_1") return Group::AtypicalOne;
  if (s == "atypical_2") return Group::AtypicalTwo;
  throw IoError("unknown group label '" + std::string(s) + "'");
}

// One feature vector standing in for a scan sub-volume.
struct FeatureChunk {
  std::vector<double> values;
};

struct Subject {
  std::string id;
  double chronological_age = 0.0;
  int sex = 0;  // binary covariate
  // Ground truth planted by the generator. Reporting code may read these;
  // the regressor and the cleaning loop must not.
  Group group = Group::Typical;
  double true_offset = 0.0;
  std::vector<FeatureChunk> chunks;
};

struct GeneratorConfig {
  int n_typical = 400;
  std::array<int, 3> n_atypical_per_level{34, 33, 33};  // levels 0.5 / 1 / 2
  int chunks_per_subject = 4;
  int chunk_dim = 32;
  std::array<double, 2> age_range{48.0, 97.0};
  double typical_jitter = 1.5;                        // years; bound and scale of typical offsets
  std::array<double, 3> atypical_offsets{6.0, 10.0, 15.0};  // mean offset per level, years
  double atypical_min_offset = 3.0;                   // hard floor for atypical offsets, years
  double chunk_noise_sd = 0.4;                        // feature-space noise per dimension
  double marker_scale = 0.25;                         // feature units per year of aging offset
  double marker_noise_sd = 0.5;                       // log-scale sd of the marker's multiplicative blur
  std::uint64_t seed = 1;
  // Seed for the latent-to-feature embedding; defaults to `seed`. A held-out
  // cohort drawn with a fresh subject seed must pin this to the training
  // cohort's value so both live in the same feature space.
  std::optional<std::uint64_t> embedding_seed;

  std::uint64_t effective_embedding_seed() const { return embedding_seed.value_or(seed); }

  void validate() const {
    if (n_typical < 0) throw ConfigError("generator.n_typical: must be >= 0");
    for (int n : n_atypical_per_level) {
      if (n < 0) throw ConfigError("generator.n_atypical_per_level: counts must be >= 0");
    }
    if (chunks_per_subject < 1) throw ConfigError("generator.chunks_per_subject: must be >= 1");
    if (chunk_dim < 1) throw ConfigError("generator.chunk_dim: must be >= 1");
    if (!(age_range[0] < age_range[1])) throw ConfigError("generator.age_range: lo must be < hi");
    if (typical_jitter < 0) throw ConfigError("generator.typical_jitter: must be >= 0");
    double min_offset = atypical_offsets[0];
    for (double d : atypical_offsets) {
      if (d <= 0) throw ConfigError("generator.atypical_offsets: offsets must be > 0");
      min_offset = std::min(min_offset, d);
    }
    if (atypical_min_offset < 0 || atypical_min_offset > min_offset) {
      throw ConfigError("generator.atypical_min_offset: must be in [0, min atypical offset]");
    }
    if (chunk_noise_sd < 0) throw ConfigError("generator.chunk_noise_sd: must be >= 0");
    if (marker_scale < 0) throw ConfigError("generator.marker_scale: must be >= 0");
    if (marker_noise_sd < 0) throw ConfigError("generator.marker_noise_sd: must be >= 0");
  }

  int total_subjects() const {
    int n = n_typical;
    for (int a : n_atypical_per_level) n += a;
    return n;
  }
};

inline std::array<double, 3> read_level_map(const json& j, const std::string& path,
                                            std::array<double, 3> fallback) {
  if (j.is_null()) return fallback;
  ObjectReader r(j, path);
  std::array<double, 3> out{};
  out[0] = r.require<double>("0.5");
  out[1] = r.require<double>("1");
  out[2] = r.require<double>("2");
  r.finish();
  return out;
}

inline GeneratorConfig generator_config_from_json(const json& j, const std::string& path = "generator") {
  GeneratorConfig cfg;
  ObjectReader r(j, path);
  cfg.n_typical = r.get_or<int>("n_typical", cfg.n_typical);
  if (r.has("n_atypical_per_level")) {
    ObjectReader levels(r.raw("n_atypical_per_level"), path + ".n_atypical_per_level");
    cfg.n_atypical_per_level[0] = levels.require<int>("0.5");
    cfg.n_atypical_per_level[1] = levels.require<int>("1");
    cfg.n_atypical_per_level[2] = levels.require<int>("2");
    levels.finish();
  }
  cfg.chunks_per_subject = r.get_or<int>("chunks_per_subject", cfg.chunks_per_subject);
  cfg.chunk_dim = r.get_or<int>("chunk_dim", cfg.chunk_dim);
  if (r.has("age_range")) {
    auto range = r.require<std::vector<double>>("age_range");
    if (range.size() != 2) throw ConfigError(path + ".age_range: expected [lo, hi]");
    cfg.age_range = {range[0], range[1]};
  }
  cfg.typical_jitter = r.get_or<double>("typical_jitter", cfg.typical_jitter);
  cfg.atypical_offsets =
      read_level_map(r.raw_or_null("atypical_offsets"), path + ".atypical_offsets", cfg.atypical_offsets);
  cfg.atypical_min_offset = r.get_or<double>("atypical_min_offset", cfg.atypical_min_offset);
  cfg.chunk_noise_sd = r.get_or<double>("chunk_noise_sd", cfg.chunk_noise_sd);
  cfg.marker_scale = r.get_or<double>("marker_scale", cfg.marker_scale);
  cfg.marker_noise_sd = r.get_or<double>("marker_noise_sd", cfg.marker_noise_sd);
  cfg.seed = r.get_or<std::uint64_t>("seed", cfg.seed);
  if (r.has("embedding_seed")) cfg.embedding_seed = r.require<std::uint64_t>("embedding_seed");
  r.finish();
  cfg.validate();
  return cfg;
}

inline json generator_config_to_json(const GeneratorConfig& cfg) {
  json j;
  j["n_typical"] = cfg.n_typical;
  j["n_atypical_per_level"] = {{"0.5", cfg.n_atypical_per_level[0]},
                               {"1", cfg.n_atypical_per_level[1]},
                               {"2", cfg.n_atypical_per_level[2]}};
  j["chunks_per_subject"] = cfg.chunks_per_subject;
  j["chunk_dim"] = cfg.chunk_dim;
  j["age_range"] = {cfg.age_range[0], cfg.age_range[1]};
  j["typical_jitter"] = cfg.typical_jitter;
  j["atypical_offsets"] = {{"0.5", cfg.atypical_offsets[0]},
                           {"1", cfg.atypical_offsets[1]},
                           {"2", cfg.atypical_offsets[2]}};
  j["atypical_min_offset"] = cfg.atypical_min_offset;
  j["chunk_noise_sd"] = cfg.chunk_noise_sd;
  j["marker_scale"] = cfg.marker_scale;
  j["marker_noise_sd"] = cfg.marker_noise_sd;
  j["seed"] = cfg.seed;
  if (cfg.embedding_seed) j["embedding_seed"] = *cfg.embedding_seed;
  return j;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Latent-to-feature embedding shared across a cohort. age_axis and sex_axis
// are the columns of the linear map from [normalized age, sex]; marker_axis
// is a unit vector orthogonal to both, carrying the per-subject aging marker
// so that atypical aging leaves a footprint in feature space without
// disturbing the recoverability of (age, sex).
struct CohortEmbedding {
  std::vector<double> age_axis;
  std::vector<double> sex_axis;
  std::vector<double> marker_axis;
};

namespace detail {
inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
}  // namespace detail

inline constexpr std::uint64_t kEmbeddingStream = 0x1001;
inline constexpr std::uint64_t kSubjectStream = 0x1002;
inline constexpr std::uint64_t kEvalCohortStream = 0x1003;

inline CohortEmbedding make_embedding(int chunk_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kEmbeddingStream));
  CohortEmbedding e;
  e.age_axis.resize(chunk_dim);
  e.sex_axis.resize(chunk_dim);
  e.marker_axis.resize(chunk_dim);
  for (auto& v : e.age_axis) v = rng.normal();
  for (auto& v : e.sex_axis) v = rng.normal();
  for (auto& v : e.marker_axis) v = rng.normal();
  // Orthogonalize the marker against both embedding columns (modified
  // Gram-Schmidt), then normalize. Keeps the linear decode of (age, sex)
  // exact regardless of marker amplitude.
  std::vector<double> sex_perp = e.sex_axis;
  const double aa = detail::dot(e.age_axis, e.age_axis);
  if (aa > 0) {
    const double c = detail::dot(sex_perp, e.age_axis) / aa;
    for (int i = 0; i < chunk_dim; ++i) sex_perp[i] -= c * e.age_axis[i];
  }
  if (aa > 0) {
    const double c = detail::dot(e.marker_axis, e.age_axis) / aa;
    for (int i = 0; i < chunk_dim; ++i) e.marker_axis[i] -= c * e.age_axis[i];
  }
  const double ss = detail::dot(sex_perp, sex_perp);
  if (ss > 0) {
    const double c = detail::dot(e.marker_axis, sex_perp) / ss;
    for (int i = 0; i < chunk_dim; ++i) e.marker_axis[i] -= c * sex_perp[i];
  }
  const double norm = std::sqrt(detail::dot(e.marker_axis, e.marker_axis));
  if (norm > 0) {
    for (auto& v : e.marker_axis) v /= norm;
  }
  return e;
}

inline double normalize_age(double age, const std::array<double, 2>& range) {
  return 2.0 * (age - range[0]) / (range[1] - range[0]) - 1.0;
}

// Builds the synthetic cohort: chronological ages uniform over the range,
// latent biological age = CA + offset, chunks = linear embedding of
// (normalized BA, sex) plus a marker component proportional to a noisy read
// of the offset, plus isotropic noise. Offsets are drawn from truncated
// normals so the documented bounds (|offset| <= jitter for typical subjects,
// offset >= atypical_min_offset for atypical ones) hold exactly.
inline std::vector<Subject> generate_cohort(const GeneratorConfig& cfg) {
  cfg.validate();
  const CohortEmbedding emb = make_embedding(cfg.chunk_dim, cfg.effective_embedding_seed());
  Rng rng(derive_seed(cfg.seed, kSubjectStream));

  std::vector<Subject> cohort;
  cohort.reserve(static_cast<std::size_t>(cfg.total_subjects()));

  auto draw_typical_offset = [&]() {
    if (cfg.typical_jitter == 0.0) return 0.0;
    double v = rng.normal(0.0, cfg.typical_jitter);
    while (std::fabs(v) > cfg.typical_jitter) v = rng.normal(0.0, cfg.typical_jitter);
    return v;
  };
  auto draw_atypical_offset = [&](double mean) {
    double v = rng.normal(mean, cfg.typical_jitter);
    while (v < cfg.atypical_min_offset) v = rng.normal(mean, cfg.typical_jitter);
    return v;
  };

  int serial = 0;
  auto add_subject = [&](Group group, double offset) {
    Subject s;
    ++serial;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sub_%05d", serial);
    s.id = buf;
    s.chronological_age = rng.uniform(cfg.age_range[0], cfg.age_range[1]);
    s.sex = static_cast<int>(rng.below(2));
    s.group = group;
    s.true_offset = offset;
    const double ba = s.chronological_age + s.true_offset;
    const double ba_norm = normalize_age(ba, cfg.age_range);
    // The marker blurs multiplicatively (mean-one lognormal), so larger
    // offsets stay proportionally more ambiguous: the visible marker never
    // pins down a large offset as sharply as a small one.
    const double blur =
        std::exp(cfg.marker_noise_sd * rng.normal() - 0.5 * cfg.marker_noise_sd * cfg.marker_noise_sd);
    const double marker_amp = cfg.marker_scale * s.true_offset * blur;
    s.chunks.resize(static_cast<std::size_t>(cfg.chunks_per_subject));
    for (auto& chunk : s.chunks) {
      chunk.values.resize(static_cast<std::size_t>(cfg.chunk_dim));
      for (int i = 0; i < cfg.chunk_dim; ++i) {
        double v = ba_norm * emb.age_axis[i] + s.sex * emb.sex_axis[i] + marker_amp * emb.marker_axis[i];
        if (cfg.chunk_noise_sd > 0) v += rng.normal(0.0, cfg.chunk_noise_sd);
        chunk.values[i] = v;
      }
    }
    cohort.push_back(std::move(s));
  };

  for (int i = 0; i < cfg.n_typical; ++i) add_subject(Group::Typical, draw_typical_offset());
  for (std::size_t level = 0; level < kAtypicalGroups.size(); ++level) {
    for (int i = 0; i < cfg.n_atypical_per_level[level]; ++i) {
      add_subject(kAtypicalGroups[level], draw_atypical_offset(cfg.atypical_offsets[level]));
    }
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

// Subject-level shuffle/split. All chunks of a subject land on the same side,
// and both sides are guaranteed non-empty.
inline std::pair<std::vector<Subject>, std::vector<Subject>> split_subjects(
    const std::vector<Subject>& subjects, double train_fraction, std::uint64_t seed) {
  if (subjects.size() < 2) throw ConfigError("split_subjects: need at least 2 subjects");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split_subjects: train_fraction must be in (0, 1)");
  }
  const std::size_t n = subjects.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::max<std::size_t>(1, std::min(n_train, n - 1));

  std::pair<std::vector<Subject>, std::vector<Subject>> out;
  out.first.reserve(n_train);
  out.second.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? out.first : out.second).push_back(subjects[order[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV serialization
// ---------------------------------------------------------------------------

namespace detail {
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw IoError(what + ": bad number '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}
}  // namespace detail

// One row per chunk: id,ca,sex,group,true_offset,chunk_index,v0..v{d-1}.
inline void write_cohort_csv(const std::vector<Subject>& cohort, std::ostream& out) {
  int dim = 0;
  if (!cohort.empty() && !cohort.front().chunks.empty()) {
    dim = static_cast<int>(cohort.front().chunks.front().values.size());
  }
  out << "id,ca,sex,group,true_offset,chunk_index";
  for (int i = 0; i < dim; ++i) out << ",v" << i;
  out << "\n";
  for (const auto& s : cohort) {
    for (std::size_t k = 0; k < s.chunks.size(); ++k) {
      out << s.id << ',' << detail::format_double(s.chronological_age) << ',' << s.sex << ','
          << group_label(s.group) << ',' << detail::format_double(s.true_offset) << ',' << k;
      for (double v : s.chunks[k].values) out << ',' << detail::format_double(v);
      out << "\n";
    }
  }
}

inline void write_cohort_csv(const std::vector<Subject>& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_cohort_csv(cohort, out);
  if (!out.good()) throw IoError("write failed: " + path);
}

inline std::vector<Subject> read_cohort_csv(std::istream& in, const std::string& what = "cohort csv") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(what + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 6 || header[0] != "id" || header[5] != "chunk_index") {
    throw IoError(what + ": unexpected header");
  }
  const std::size_t dim = header.size() - 6;

  std::vector<Subject> cohort;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = what + " line " + std::to_string(line_no);
    if (f.size() != header.size()) throw IoError(where + ": wrong field count");
    const std::string& id = f[0];
    const auto chunk_index = static_cast<std::size_t>(std::strtoul(f[5].c_str(), nullptr, 10));
    if (cohort.empty() || cohort.back().id != id) {
      if (chunk_index != 0) throw IoError(where + ": chunk rows out of order");
      Subject s;
      s.id = id;
      s.chronological_age = detail::parse_double(f[1], where);
      s.sex = f[2] == "1" ? 1 : 0;
      s.group = parse_group(f[3]);
      s.true_offset = detail::parse_double(f[4], where);
      cohort.push_back(std::move(s));
    } else if (chunk_index != cohort.back().chunks.size()) {
      throw IoError(where + ": chunk rows out of order");
    }
    FeatureChunk chunk;
    chunk.values.reserve(dim);
    for (std::size_t i = 6; i < f.size(); ++i) chunk.values.push_back(detail::parse_double(f[i], where));
    cohort.back().chunks.push_back(std::move(chunk));
  }
  return cohort;
}

inline std::vector<Subject> read_cohort_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return read_cohort_csv(in, path);
}

}  // namespace bioage
