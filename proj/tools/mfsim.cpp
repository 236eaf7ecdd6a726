#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mfsim/experiment.hpp"

namespace fs = std::filesystem;

namespace {

int report(const mfsim::Error& e) {
  std::cerr << "error (" << mfsim::detail::kind_name(e.kind()) << ") " << e.what() << '\n';
  return mfsim::detail::exit_code(e);
}

int cmd_run(const fs::path& manifest_path, bool overwrite, const std::string& mode_override) {
  auto manifest = mfsim::load_manifest(manifest_path);
  if (!mode_override.empty()) manifest.mode = mfsim::run_mode_from(mode_override);
  const auto summary = mfsim::run_experiment(manifest, overwrite);
  std::cout << mfsim::to_json(summary).dump(2) << '\n';
  std::cout << "results written to " << summary.save_dir.string() << '\n';
  return 0;
}

int cmd_worker(const fs::path& manifest_path, const std::string& latency) {
  const auto manifest = mfsim::load_manifest(manifest_path);
  mfsim::validate_manifest(manifest);
  const auto benchmark = mfsim::make_benchmark(manifest);
  auto store = mfsim::Store::open(manifest.output_dir, manifest.settings);
  auto sampling = manifest.latency();
  if (!latency.empty()) {
    if (latency == "measured") {
      sampling = mfsim::SamplingLatency::measured();
    } else {
      const auto value = mfsim::detail::parse_double(latency);
      if (!value) throw mfsim::validation_error("cli", "--latency expects a number or 'measured'");
      sampling = mfsim::SamplingLatency::constant(*value);
    }
  }
  return mfsim::serve_worker(store, *benchmark, manifest.settings, std::cin, std::cout, sampling);
}

int cmd_plot_data(const fs::path& results, const fs::path& output, const std::string& objective, fs::path wall_times) {
  const auto records = mfsim::load_results_file(results);
  if (wall_times.empty()) wall_times = results.parent_path() / "wall_times";
  const auto walls = mfsim::load_wall_times(wall_times);
  if (output.empty() || output == "-") {
    mfsim::emit_plot_data(records, std::cout, objective, walls);
    return 0;
  }
  std::ofstream out(output);
  if (!out) throw mfsim::runtime_error("cli", "cannot write " + output.string());
  mfsim::emit_plot_data(records, out, objective, walls);
  return 0;
}

int cmd_validate(const fs::path& path) {
  const auto j = mfsim::read_json_file(path, "cli");
  if (j.is_object() && j.contains("dimensions")) {
    const auto descriptor = mfsim::load_descriptor(path);
    const auto n = descriptor.space.cardinality();
    std::cout << "descriptor ok: " << descriptor.space.size() << " dimensions, "
              << descriptor.fidelities.size() << " fidelities";
    if (n) std::cout << ", " << mfsim::format_number(*n) << " configurations";
    std::cout << '\n';
    return 0;
  }
  mfsim::validate_manifest(mfsim::load_manifest(path));
  std::cout << "manifest ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-fidelity HPO simulator"};
  app.require_subcommand(1);

  fs::path run_manifest;
  bool overwrite = false;
  std::string mode;
  auto* run = app.add_subcommand("run", "Run an experiment from a manifest");
  run->add_option("manifest", run_manifest, "Manifest JSON file")->required();
  run->add_flag("--overwrite", overwrite, "Replace an existing save directory");
  run->add_option("--mode", mode, "Override the manifest mode (ask-and-tell, multi-worker, naive)");

  fs::path worker_manifest;
  std::string latency;
  auto* worker = app.add_subcommand("worker", "Serve the newline-delimited JSON worker protocol on stdin/stdout");
  worker->add_option("manifest", worker_manifest, "Manifest JSON file")->required();
  worker->add_option("--latency", latency, "Sampling latency in seconds, or 'measured'");

  fs::path results, plot_output, wall_times;
  std::string objective = "loss";
  auto* plot = app.add_subcommand("plot-data", "Turn a results file into a best-so-far curve");
  plot->add_option("results", results, "Results file")->required();
  plot->add_option("-o,--output", plot_output, "CSV output (default stdout)");
  plot->add_option("--objective", objective, "Objective key for best-so-far");
  plot->add_option("--wall-times", wall_times, "Wall-time sidecar (default: next to results)");

  fs::path validate_path;
  auto* validate = app.add_subcommand("validate", "Check a manifest or a space descriptor");
  validate->add_option("file", validate_path, "Manifest or descriptor JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(run_manifest, overwrite, mode);
    if (*worker) return cmd_worker(worker_manifest, latency);
    if (*plot) return cmd_plot_data(results, plot_output, objective, wall_times);
    if (*validate) return cmd_validate(validate_path);
  } catch (const mfsim::Error& e) {
    return report(e);
  } catch (const std::exception& e) {
    std::cerr << "error (runtime) " << e.what() << '\n';
    return 3;
  }
  return 0;
}
