#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "collab/baselines.hpp"
#include "collab/code_decoder.hpp"
#include "collab/metrics.hpp"

namespace collab::harness {

struct Turn {
  std::string speaker;
  std::string text;
};

struct DatasetRecord {
  std::string id;
  std::vector<Turn> context;
  std::string knowledge;
  std::optional<std::string> reference;
};

/// Parse line-delimited JSON records. Blank lines are skipped; a malformed
/// line throws IngestionError naming the line. An empty input yields no
/// records and a warning.
std::vector<DatasetRecord> parse_dataset(std::istream& in, std::vector<std::string>* warnings = nullptr);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path,
                                        std::vector<std::string>* warnings = nullptr);

struct BackendSpec {
  enum class Kind { kToy, kTabular };
  Kind kind = Kind::kToy;
  std::uint64_t seed = 42;
  std::string script;  // tabular script path, relative paths resolve against the config file
};

struct RunConfig {
  std::string name = "run";
  BackendSpec backend;
  /// Amateur model for contrastive decoding; defaults to a toy model seeded
  /// backend.seed + 1 when the main backend is a toy.
  std::optional<BackendSpec> amateur;
  std::vector<std::string> strategies = {"code"};
  CoDeConfig code;
  BaselineConfig baseline;
  int min_new_tokens = 5;
  int max_new_tokens = 32;
  std::uint64_t seed = 0;
  /// Prepended to every context (few-shot prefix).
  std::string demonstrations;
  int workers = 1;
  bool fail_fast = false;
};

RunConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

/// Column order of the aggregate table (Avg. is appended).
inline const std::vector<std::string> kMetricColumns = {
    "DIV", "COH", "CRE", "Coverage", "Density", "BLEU-2", "BLEU-4", "ROUGE-L"};

struct RecordOutput {
  std::string record_id;
  GenerationResult generation;
  metrics::MetricsReport metrics;
  std::optional<std::string> error;
  double wall_ms = 0;
};

struct Aggregate {
  /// Mean per column of kMetricColumns; nullopt when no record had a value.
  std::vector<std::optional<double>> means;
  std::optional<double> avg;
  std::size_t records = 0;
  std::size_t failures = 0;
};

struct StrategyRun {
  std::string label;
  std::string strategy;
  std::vector<RecordOutput> records;
  Aggregate aggregate;
  double wall_ms = 0;
  std::size_t steps = 0;
};

struct RunReport {
  std::vector<StrategyRun> runs;
};

/// Values of one record in kMetricColumns order.
std::vector<std::optional<double>> metric_row(const metrics::MetricsReport& m);
Aggregate aggregate(const std::vector<RecordOutput>& records);

/// Context rendered as plain text ("speaker: text" turns joined by spaces).
std::string context_text(const DatasetRecord& record, const std::string& demonstrations = {});

/// Per-record seed derived from the run seed and the record id, so outputs do
/// not depend on dataset order.
std::uint64_t record_seed(std::uint64_t run_seed, const std::string& record_id);

metrics::MetricsReport score(const DatasetRecord& record, const std::string& response,
                             const metrics::EmbeddingProvider& provider);

RunReport run(const std::vector<DatasetRecord>& dataset, const RunConfig& config);

/// Tab-separated aggregate table, one row per strategy run.
std::string format_table(const std::vector<StrategyRun>& runs);

/// Write generations.jsonl, traces.jsonl, metrics.tsv and timing.json.
void emit(const RunReport& report, const std::filesystem::path& out_dir);

nlohmann::ordered_json trace_to_json(const std::string& record_id, const std::string& label,
                                     const StepTrace& trace);

/// Human-readable rendering of a traces.jsonl stream.
void pretty_print_traces(std::istream& in, std::ostream& out);

}  // namespace collab::harness
