// Command-line front end: batch runs, multi-config comparison, trace viewer.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "collab/errors.hpp"
#include "collab/harness.hpp"

namespace {

using namespace collab;

std::vector<harness::DatasetRecord> load(const std::string& path) {
  std::vector<std::string> warnings;
  auto records = harness::load_dataset(path, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return records;
}

void print_failures(const harness::RunReport& report) {
  for (const auto& run : report.runs) {
    for (const auto& r : run.records) {
      if (r.error) std::cerr << run.strategy << " / " << r.record_id << ": " << *r.error << '\n';
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-grounded decoding: collaborative decoding and baselines"};
  app.require_subcommand(1);

  std::string dataset_path;
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> strategies;
  std::optional<int> workers;

  auto* run_cmd = app.add_subcommand("run", "Decode a dataset under one config");
  run_cmd->add_option("-d,--dataset", dataset_path, "Line-delimited JSON dataset")->required();
  run_cmd->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  run_cmd->add_option("-o,--out", out_dir, "Output directory");
  run_cmd->add_option("--seed", seed, "Override the config seed");
  run_cmd->add_option("-s,--strategy", strategies, "Override strategies (repeatable)");
  run_cmd->add_option("-j,--workers", workers, "Records decoded in parallel");

  std::vector<std::string> config_paths;
  auto* compare_cmd = app.add_subcommand("compare", "Run several configs into one table");
  compare_cmd->add_option("-d,--dataset", dataset_path, "Line-delimited JSON dataset")->required();
  compare_cmd->add_option("-c,--config", config_paths, "Run configs")->required();
  compare_cmd->add_option("-o,--out", out_dir, "Output directory");
  compare_cmd->add_option("--seed", seed, "Override every config seed");
  compare_cmd->add_option("-j,--workers", workers, "Records decoded in parallel");

  std::string trace_path;
  auto* trace_cmd = app.add_subcommand("trace", "Pretty-print a traces.jsonl file");
  trace_cmd->add_option("file", trace_path, "Trace file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto dataset = load(dataset_path);
      auto config = harness::load_config(config_path);
      if (seed) config.seed = *seed;
      if (!strategies.empty()) {
        config.strategies = strategies;
        config = harness::config_from_json(harness::config_to_json(config));
      }
      if (workers) config.workers = *workers;
      const auto report = harness::run(dataset, config);
      harness::emit(report, out_dir);
      print_failures(report);
      std::cout << harness::format_table(report.runs);
    } else if (*compare_cmd) {
      const auto dataset = load(dataset_path);
      harness::RunReport combined;
      for (const auto& path : config_paths) {
        auto config = harness::load_config(path);
        if (seed) config.seed = *seed;
        if (workers) config.workers = *workers;
        auto report = harness::run(dataset, config);
        for (auto& r : report.runs) combined.runs.push_back(std::move(r));
      }
      harness::emit(combined, out_dir);
      print_failures(combined);
      std::cout << harness::format_table(combined.runs);
    } else if (*trace_cmd) {
      std::ifstream in(trace_path);
      harness::pretty_print_traces(in, std::cout);
    }
  } catch (const collab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
