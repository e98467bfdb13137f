// Command-line driver: cohort generation, iterative-strategy runs, and report
// emission, reproducible from a config file and a seed.
//
// Exit codes: 0 success, 2 config error, 3 runtime/numeric error, 4 I/O error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bioage/pipeline.hpp"

namespace {

bioage::json load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw bioage::IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bioage::parse_json_text(text, path);
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_generate(const CommonOpts& opts) {
  auto cfg = bioage::generator_config_from_json(load_config_file(opts.config_path), "generator");
  if (opts.seed) cfg.seed = *opts.seed;
  const std::filesystem::path out = opts.out_dir.empty() ? "out" : opts.out_dir;
  bioage::generate_pipeline(cfg, out, opts.quiet);
  return 0;
}

int run_run(const CommonOpts& opts) {
  auto cfg = bioage::run_config_from_json(load_config_file(opts.config_path));
  if (opts.seed) {
    cfg.generator.seed = *opts.seed;
    cfg.iterate.master_seed = *opts.seed;
  }
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  bioage::run_pipeline(cfg, opts.quiet);
  return 0;
}

int run_report(const std::string& run_dir, const CommonOpts& opts) {
  const std::filesystem::path run(run_dir);
  const std::filesystem::path out =
      opts.out_dir.empty() ? run / "report" : std::filesystem::path(opts.out_dir);
  bioage::report_pipeline(run, out, opts.quiet);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biological-age estimation toolkit: heteroscedastic age regression with "
               "iterative outlier segregation"};
  app.require_subcommand(1);

  CommonOpts gen_opts, run_opts, rep_opts;
  std::string report_run_dir;

  auto* gen = app.add_subcommand("generate", "generate a synthetic cohort CSV");
  gen->add_option("--config", gen_opts.config_path, "generator config JSON")->required();
  gen->add_option("--out", gen_opts.out_dir, "output directory (default: out)");
  gen->add_option("--seed", gen_opts.seed, "override the config seed");
  gen->add_flag("--quiet", gen_opts.quiet, "suppress progress output");

  auto* run = app.add_subcommand("run", "execute the iterative strategy plus the baseline model");
  run->add_option("--config", run_opts.config_path, "run config JSON")->required();
  run->add_option("--out", run_opts.out_dir, "override config output_dir");
  run->add_option("--seed", run_opts.seed, "override generator seed and master seed");
  run->add_flag("--quiet", run_opts.quiet, "suppress progress output");

  auto* rep = app.add_subcommand("report", "emit CSV/SVG/JSON reports for a finished run");
  rep->add_option("run_dir", report_run_dir, "directory containing run_manifest.json")->required();
  rep->add_option("--out", rep_opts.out_dir, "report output directory (default: <run_dir>/report)");
  rep->add_flag("--quiet", rep_opts.quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_generate(gen_opts);
    if (run->parsed()) return run_run(run_opts);
    if (rep->parsed()) return run_report(report_run_dir, rep_opts);
  } catch (const bioage::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bioage::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const bioage::RuntimeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
