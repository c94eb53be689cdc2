#pragma once

#include "advgnn/attacks.hpp"
#include "advgnn/datagen.hpp"
#include "advgnn/gnn.hpp"
#include "advgnn/network.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace advgnn {

// An attack under the harness: property, seed and deadline in, outcome out.
using AttackFn =
    std::function<AttackOutcome(const Network&, const AttackProperty&, std::uint64_t, Deadline)>;

struct BenchMethod {
  std::string name;
  AttackFn run;
};

struct MethodOptions {
  PgdConfig pgd;
  MiFgsmConfig mifgsm;
  CwConfig cw;
  AdvGnnConfig advgnn;
  std::optional<GnnParams> params;  // required for advgnn
};

// pgd, mifgsm, cw or advgnn; restarts until the deadline. Throws ConfigError
// on an unknown name.
BenchMethod make_method(const std::string& name, const MethodOptions& options = {});

struct BenchProperty {
  std::string id;
  const Network* net = nullptr;
  AttackProperty prop;
};

struct RunRecord {
  std::string property_id;
  std::string method;
  std::uint64_t seed = 0;
  bool success = false;
  double time = 0.0;  // seconds, the timeout for a failed run
  long iterations = 0;
  long restarts = 0;
};

struct BenchConfig {
  double timeout = 100.0;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  unsigned threads = 1;
};

// One record per (property, method, seed), in that lexicographic order.
std::vector<RunRecord> run_benchmark(const std::vector<BenchProperty>& properties,
                                     const std::vector<BenchMethod>& methods,
                                     const BenchConfig& cfg);

// Applies the timeout convention to a raw outcome.
RunRecord make_record(const std::string& property_id, const std::string& method,
                      std::uint64_t seed, const AttackOutcome& outcome, double elapsed,
                      double timeout);

struct MethodMetrics {
  double mean_time = 0.0;
  double pct_timeout = 0.0;
  std::size_t runs = 0;
};

struct CurvePoint {
  double time = 0.0;
  double pct_solved = 0.0;
};

struct MethodSummary {
  std::string method;
  MethodMetrics overall;  // over all records of the method
  std::map<std::uint64_t, MethodMetrics> per_seed;
  MethodMetrics seed_average;  // arithmetic mean of per_seed
  std::vector<CurvePoint> curve;
};

struct BenchSummary {
  double timeout = 0.0;
  std::vector<MethodSummary> methods;  // sorted by name
};

BenchSummary summarize(const std::vector<RunRecord>& records, double timeout);

nlohmann::json summary_to_json(const BenchSummary& summary);
BenchSummary summary_from_json(const nlohmann::json& doc);

nlohmann::json record_to_json(const RunRecord& record);

// Writes summary.csv, summary.json, curve.csv and runs.jsonl into `dir`.
void emit_report(const BenchSummary& summary, const std::vector<RunRecord>& records,
                 const std::filesystem::path& dir);
BenchSummary load_summary(const std::filesystem::path& path);

}  // namespace advgnn
