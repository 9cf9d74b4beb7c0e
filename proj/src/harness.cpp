#include "collab/harness.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "collab/errors.hpp"
#include "collab/tabular_backend.hpp"
#include "collab/toy_transformer.hpp"

namespace collab::harness {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string require_string(const json& j, const char* field, std::size_t line) {
  if (!j.contains(field)) throw IngestionError(std::string("missing required field '") + field + "'", line);
  if (!j.at(field).is_string()) throw IngestionError(std::string("field '") + field + "' must be a string", line);
  return j.at(field).get<std::string>();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

BackendSpec backend_from_json(const json& j, const std::filesystem::path& base_dir) {
  BackendSpec spec;
  const std::string kind = j.value("kind", std::string("toy"));
  if (kind == "toy") {
    spec.kind = BackendSpec::Kind::kToy;
  } else if (kind == "tabular") {
    spec.kind = BackendSpec::Kind::kTabular;
    std::filesystem::path script = j.at("script").get<std::string>();
    if (script.is_relative() && !base_dir.empty()) script = base_dir / script;
    spec.script = script.string();
  } else {
    throw ConfigError("unknown backend kind '" + kind + "'");
  }
  spec.seed = j.value("seed", std::uint64_t{42});
  return spec;
}

json backend_to_json(const BackendSpec& spec) {
  if (spec.kind == BackendSpec::Kind::kTabular) return {{"kind", "tabular"}, {"script", spec.script}};
  return {{"kind", "toy"}, {"seed", spec.seed}};
}

std::shared_ptr<const Backend> make_backend(const BackendSpec& spec) {
  if (spec.kind == BackendSpec::Kind::kTabular) return TabularBackend::from_file(spec.script);
  ToyTransformerConfig cfg;
  cfg.seed = spec.seed;
  return ToyTransformer::create(cfg);
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? fixed(*v) : std::string("-"); }

ordered_json metrics_to_json(const metrics::MetricsReport& m) {
  ordered_json j;
  j["distinct"] = m.distinct;
  j["div"] = m.div;
  j["coh"] = optional_number(m.coh);
  j["cre"] = m.cre;
  j["coverage"] = m.coverage;
  j["density"] = m.density;
  j["bleu_2"] = optional_number(m.bleu_2);
  j["bleu_4"] = optional_number(m.bleu_4);
  j["rouge_l"] = optional_number(m.rouge_l);
  return j;
}

std::string glyph(TokenId id) {
  switch (id) {
    case special::kBos: return "<bos>";
    case special::kEos: return "<eos>";
    case special::kSep: return "<sep>";
    default: {
      const std::vector<TokenId> one{id};
      return CharTokenizer::detokenize(one);
    }
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

std::vector<DatasetRecord> parse_dataset(std::istream& in, std::vector<std::string>* warnings) {
  std::vector<DatasetRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IngestionError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw IngestionError("record must be a JSON object", line_no);

    DatasetRecord r;
    r.id = require_string(j, "id", line_no);
    r.knowledge = require_string(j, "knowledge", line_no);
    if (r.knowledge.empty()) throw IngestionError("field 'knowledge' is empty", line_no);
    if (!j.contains("context")) throw IngestionError("missing required field 'context'", line_no);
    const json& ctx = j.at("context");
    if (!ctx.is_array() || ctx.empty()) {
      throw IngestionError("field 'context' must be a nonempty list of turns", line_no);
    }
    for (const json& turn : ctx) {
      if (!turn.is_object()) throw IngestionError("context turn must be an object", line_no);
      r.context.push_back({require_string(turn, "speaker", line_no), require_string(turn, "text", line_no)});
    }
    if (j.contains("reference") && !j.at("reference").is_null()) {
      r.reference = require_string(j, "reference", line_no);
    }
    records.push_back(std::move(r));
  }
  if (records.empty() && warnings) warnings->push_back("dataset contains no records");
  return records;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path,
                                        std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, warnings);
}

RunConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig c;
  try {
    c.name = doc.value("name", c.name);
    if (doc.contains("backend")) c.backend = backend_from_json(doc.at("backend"), base_dir);
    if (doc.contains("amateur") && !doc.at("amateur").is_null()) {
      c.amateur = backend_from_json(doc.at("amateur"), base_dir);
    }
    if (doc.contains("strategies")) c.strategies = doc.at("strategies").get<std::vector<std::string>>();
    if (doc.contains("code")) {
      const json& j = doc.at("code");
      c.code.top_k = j.value("top_k", c.code.top_k);
      c.code.beta = j.value("beta", c.code.beta);
      c.code.gamma = j.value("gamma", c.code.gamma);
      c.code.eta = j.value("eta", c.code.eta);
    }
    if (doc.contains("baseline")) {
      const json& j = doc.at("baseline");
      BaselineConfig& b = c.baseline;
      b.beam_size = j.value("beam_size", b.beam_size);
      b.topk_k = j.value("topk_k", b.topk_k);
      b.cs_k = j.value("cs_k", b.cs_k);
      b.p = j.value("p", b.p);
      b.lambda = j.value("lambda", b.lambda);
      b.omega = j.value("omega", b.omega);
      b.cs_alpha = j.value("cs_alpha", b.cs_alpha);
      b.fecs_alpha = j.value("fecs_alpha", b.fecs_alpha);
      b.fecs_beta = j.value("fecs_beta", b.fecs_beta);
      b.cd_tau = j.value("cd_tau", b.cd_tau);
      b.cd_plausibility = j.value("cd_plausibility", b.cd_plausibility);
      b.cad_alpha = j.value("cad_alpha", b.cad_alpha);
      if (j.value("dola_layers", std::string("high")) != "high") {
        throw ConfigError("dola_layers: only 'high' is supported");
      }
    }
    if (doc.contains("stopping")) {
      const json& j = doc.at("stopping");
      c.min_new_tokens = j.value("min_new_tokens", c.min_new_tokens);
      c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    }
    c.seed = doc.value("seed", c.seed);
    c.demonstrations = doc.value("demonstrations", c.demonstrations);
    c.workers = doc.value("workers", c.workers);
    c.fail_fast = doc.value("fail_fast", c.fail_fast);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  for (const std::string& s : c.strategies) {
    if (s != "code" && !parse_strategy(s)) throw ConfigError("unknown strategy '" + s + "'");
  }
  if (c.workers < 1) throw ConfigError("workers must be at least 1");
  return c;
}

json config_to_json(const RunConfig& c) {
  json doc;
  doc["name"] = c.name;
  doc["backend"] = backend_to_json(c.backend);
  doc["amateur"] = c.amateur ? backend_to_json(*c.amateur) : json(nullptr);
  doc["strategies"] = c.strategies;
  doc["code"] = {{"top_k", c.code.top_k}, {"beta", c.code.beta}, {"gamma", c.code.gamma}, {"eta", c.code.eta}};
  const BaselineConfig& b = c.baseline;
  doc["baseline"] = {{"beam_size", b.beam_size},   {"topk_k", b.topk_k},
                     {"cs_k", b.cs_k},             {"p", b.p},
                     {"lambda", b.lambda},         {"omega", b.omega},
                     {"cs_alpha", b.cs_alpha},     {"fecs_alpha", b.fecs_alpha},
                     {"fecs_beta", b.fecs_beta},   {"cd_tau", b.cd_tau},
                     {"cd_plausibility", b.cd_plausibility}, {"cad_alpha", b.cad_alpha},
                     {"dola_layers", "high"}};
  doc["stopping"] = {{"min_new_tokens", c.min_new_tokens}, {"max_new_tokens", c.max_new_tokens}};
  doc["seed"] = c.seed;
  doc["demonstrations"] = c.demonstrations;
  doc["workers"] = c.workers;
  doc["fail_fast"] = c.fail_fast;
  return doc;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  RunConfig c = config_from_json(doc, path.parent_path());
  if (!doc.contains("name")) c.name = path.stem().string();
  return c;
}

std::vector<std::optional<double>> metric_row(const metrics::MetricsReport& m) {
  return {m.div, m.coh, m.cre, m.coverage, m.density, m.bleu_2, m.bleu_4, m.rouge_l};
}

Aggregate aggregate(const std::vector<RecordOutput>& records) {
  Aggregate agg;
  std::vector<double> sums(kMetricColumns.size(), 0.0);
  std::vector<std::size_t> counts(kMetricColumns.size(), 0);
  for (const RecordOutput& r : records) {
    if (r.error) {
      ++agg.failures;
      continue;
    }
    ++agg.records;
    const auto row = metric_row(r.metrics);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c]) {
        sums[c] += *row[c];
        ++counts[c];
      }
    }
  }
  double avg_sum = 0.0;
  std::size_t avg_count = 0;
  for (std::size_t c = 0; c < sums.size(); ++c) {
    if (counts[c] == 0) {
      agg.means.emplace_back();
      continue;
    }
    const double mean = sums[c] / static_cast<double>(counts[c]);
    agg.means.emplace_back(mean);
    avg_sum += mean;
    ++avg_count;
  }
  if (avg_count > 0) agg.avg = avg_sum / static_cast<double>(avg_count);
  return agg;
}

std::string context_text(const DatasetRecord& record, const std::string& demonstrations) {
  std::string out = demonstrations;
  for (const Turn& t : record.context) {
    if (!out.empty()) out += ' ';
    out += t.speaker + ": " + t.text;
  }
  return out;
}

std::uint64_t record_seed(std::uint64_t run_seed, const std::string& record_id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : record_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return splitmix64(run_seed ^ splitmix64(h));
}

metrics::MetricsReport score(const DatasetRecord& record, const std::string& response,
                             const metrics::EmbeddingProvider& provider) {
  metrics::MetricsReport m;
  const metrics::TokenSeq y = metrics::normalize(response);
  // An empty response scores zero on every metric.
  if (y.empty()) {
    m.coh = 0.0;
    if (record.reference) m.bleu_2 = m.bleu_4 = m.rouge_l = 0.0;
    return m;
  }
  const metrics::TokenSeq k = metrics::normalize(record.knowledge);
  for (int n = 1; n <= 4; ++n) m.distinct[static_cast<std::size_t>(n - 1)] = metrics::distinct_n(y, n);
  m.div = metrics::div(y);
  m.coverage = metrics::coverage(k, y);
  m.density = metrics::density(k, y);
  m.cre = metrics::cre(k, y);
  try {
    m.coh = metrics::coh(context_text(record), response, provider);
  } catch (const InvalidInput&) {
    m.coh = 0.0;
  }
  if (record.reference) {
    const metrics::TokenSeq ref = metrics::normalize(*record.reference);
    if (ref.empty()) {
      m.bleu_2 = m.bleu_4 = m.rouge_l = 0.0;
    } else {
      m.bleu_2 = metrics::bleu_n(y, ref, 2);
      m.bleu_4 = metrics::bleu_n(y, ref, 4);
      m.rouge_l = metrics::rouge_l(y, ref);
    }
  }
  return m;
}

RunReport run(const std::vector<DatasetRecord>& dataset, const RunConfig& config) {
  const std::shared_ptr<const Backend> backend = make_backend(config.backend);
  std::shared_ptr<const Backend> amateur;
  if (config.amateur) {
    amateur = make_backend(*config.amateur);
  } else if (config.backend.kind == BackendSpec::Kind::kToy) {
    BackendSpec spec = config.backend;
    spec.seed += 1;
    amateur = make_backend(spec);
  }
  const metrics::HashEmbeddingProvider provider;

  RunReport report;
  for (const std::string& strategy : config.strategies) {
    StrategyRun sr;
    sr.strategy = strategy;
    sr.label = config.name;
    sr.records.resize(dataset.size());

    auto process = [&](std::size_t index) {
      const DatasetRecord& record = dataset[index];
      RecordOutput& out = sr.records[index];
      out.record_id = record.id;
      const auto start = std::chrono::steady_clock::now();
      try {
        const auto context = CharTokenizer::tokenize(context_text(record, config.demonstrations));
        const auto knowledge = CharTokenizer::tokenize(record.knowledge);
        if (strategy == "code") {
          DecodeRequest request{context, knowledge, config.code};
          request.config.min_new_tokens = config.min_new_tokens;
          request.config.max_new_tokens = config.max_new_tokens;
          out.generation = generate(*backend, request);
        } else {
          BaselineConfig b = config.baseline;
          b.strategy = *parse_strategy(strategy);
          b.min_new_tokens = config.min_new_tokens;
          b.max_new_tokens = config.max_new_tokens;
          b.seed = record_seed(config.seed, record.id);
          out.generation = generate_baseline(*backend, amateur.get(), {context, knowledge}, b);
        }
        out.metrics = score(record, out.generation.text, provider);
      } catch (const Error& e) {
        if (config.fail_fast) throw;
        out.error = e.what();
      }
      out.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    };

    const auto start = std::chrono::steady_clock::now();
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), dataset.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < dataset.size(); ++i) process(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::exception_ptr failure;
      std::mutex failure_mutex;
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < dataset.size(); i = next++) {
            try {
              process(i);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
              next = dataset.size();
            }
          }
        });
      }
      for (auto& t : pool) t.join();
      if (failure) std::rethrow_exception(failure);
    }
    sr.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    for (const RecordOutput& r : sr.records) sr.steps += r.generation.tokens.size();
    sr.aggregate = aggregate(sr.records);
    report.runs.push_back(std::move(sr));
  }
  return report;
}

std::string format_table(const std::vector<StrategyRun>& runs) {
  std::ostringstream out;
  out << "config\tstrategy\trecords";
  for (const std::string& c : kMetricColumns) out << '\t' << c;
  out << "\tAvg.\n";
  for (const StrategyRun& r : runs) {
    out << r.label << '\t' << r.strategy << '\t' << r.aggregate.records;
    for (const auto& m : r.aggregate.means) out << '\t' << cell(m);
    out << '\t' << cell(r.aggregate.avg) << '\n';
  }
  return out.str();
}

ordered_json trace_to_json(const std::string& record_id, const std::string& label,
                           const StepTrace& trace) {
  ordered_json j;
  j["record"] = record_id;
  j["strategy"] = label;
  j["position"] = trace.position;
  j["chosen"] = trace.chosen;
  j["chosen_text"] = glyph(trace.chosen);
  if (trace.diagnostics) {
    const auto& d = *trace.diagnostics;
    j["jsd"] = d.jsd;
    j["delta"] = d.delta;
    j["alpha"] = d.alpha;
    j["c_prior"] = d.c_prior;
    j["c_posterior"] = d.c_posterior;
    j["p_max_prior"] = d.p_max_prior;
    j["p_max_posterior"] = d.p_max_posterior;
    j["entropy_prior"] = d.entropy_prior;
    j["entropy_posterior"] = d.entropy_posterior;
  }
  if (!trace.candidates.empty()) {
    ordered_json cands = ordered_json::array();
    for (const CandidateScore& c : trace.candidates) {
      ordered_json cj;
      cj["token"] = c.token;
      cj["p_code"] = c.p_code;
      cj["sem_reward"] = c.sem_reward;
      cj["att_reward"] = c.att_reward;
      cj["final_score"] = c.final_score;
      cands.push_back(std::move(cj));
    }
    j["candidates"] = std::move(cands);
  }
  return j;
}

void emit(const RunReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());

  std::string generations;
  std::string traces;
  ordered_json timing = ordered_json::array();
  for (const StrategyRun& run : report.runs) {
    for (const RecordOutput& r : run.records) {
      ordered_json g;
      g["record"] = r.record_id;
      g["config"] = run.label;
      g["strategy"] = run.strategy;
      if (r.error) {
        g["error"] = *r.error;
      } else {
        g["text"] = r.generation.text;
        g["tokens"] = r.generation.tokens;
        g["stop_reason"] = to_string(r.generation.stop_reason);
        g["metrics"] = metrics_to_json(r.metrics);
      }
      generations += g.dump() + '\n';
      if (r.error) continue;
      for (const StepTrace& t : r.generation.traces) {
        traces += trace_to_json(r.record_id, run.strategy, t).dump() + '\n';
      }
    }
    ordered_json t;
    t["config"] = run.label;
    t["strategy"] = run.strategy;
    t["wall_ms"] = run.wall_ms;
    t["tokens"] = run.steps;
    t["ms_per_token"] = run.steps ? run.wall_ms / static_cast<double>(run.steps) : 0.0;
    timing.push_back(std::move(t));
  }
  write_file(out_dir / "generations.jsonl", generations);
  write_file(out_dir / "traces.jsonl", traces);
  write_file(out_dir / "metrics.tsv", format_table(report.runs));
  write_file(out_dir / "timing.json", timing.dump(2) + '\n');
}

void pretty_print_traces(std::istream& in, std::ostream& out) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IngestionError(std::string("malformed trace: ") + e.what(), line_no);
    }
    out << j.value("record", std::string("?")) << " [" << j.value("strategy", std::string("?"))
        << "] t=" << j.value("position", 0) << " chosen=" << j.value("chosen", 0) << " '"
        << j.value("chosen_text", std::string()) << "'";
    if (j.contains("alpha")) {
      out << std::fixed << std::setprecision(4) << "  alpha=" << j["alpha"].get<double>()
          << " delta=" << j["delta"].get<double>() << " jsd=" << j["jsd"].get<double>()
          << " Cc=" << j["c_prior"].get<double>() << " Ck=" << j["c_posterior"].get<double>();
      out.unsetf(std::ios::floatfield);
    }
    out << '\n';
    if (j.contains("candidates")) {
      for (const json& c : j["candidates"]) {
        const auto tok = c["token"].get<TokenId>();
        out << "    " << std::setw(4) << tok << " '" << glyph(tok) << "'" << std::fixed
            << std::setprecision(4) << "  p=" << c["p_code"].get<double>()
            << " sem=" << c["sem_reward"].get<double>() << " att=" << c["att_reward"].get<double>()
            << " score=" << c["final_score"].get<double>() << '\n';
        out.unsetf(std::ios::floatfield);
      }
    }
  }
}

}  // namespace collab::harness
