#include "advgnn/bench.hpp"

#include "advgnn/error.hpp"
#include "advgnn/json_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace advgnn {

BenchMethod make_method(const std::string& name, const MethodOptions& options) {
  if (name == "pgd") {
    const PgdConfig base = options.pgd;
    return {name, [base](const Network& net, const AttackProperty& prop, std::uint64_t seed,
                         Deadline deadline) {
              PgdConfig cfg = base;
              cfg.run.seed = seed;
              cfg.run.restarts = 0;
              cfg.run.deadline = deadline;
              return pgd_attack(net, prop, cfg);
            }};
  }
  if (name == "mifgsm") {
    const MiFgsmConfig base = options.mifgsm;
    return {name, [base](const Network& net, const AttackProperty& prop, std::uint64_t seed,
                         Deadline deadline) {
              MiFgsmConfig cfg = base;
              cfg.run.seed = seed;
              cfg.run.restarts = 0;
              cfg.run.deadline = deadline;
              return mi_fgsm_plus(net, prop, cfg);
            }};
  }
  if (name == "cw") {
    const CwConfig base = options.cw;
    // deterministic; the seed is unused
    return {name, [base](const Network& net, const AttackProperty& prop, std::uint64_t,
                         Deadline deadline) {
              CwConfig cfg = base;
              cfg.max_outer = 0;
              cfg.deadline = deadline;
              return cw_attack(net, prop, cfg);
            }};
  }
  if (name == "advgnn") {
    if (!options.params) throw ConfigError("bench: advgnn needs GNN parameters");
    const GnnParams params = *options.params;
    params.validate();
    const AdvGnnConfig base = options.advgnn;
    return {name, [params, base](const Network& net, const AttackProperty& prop,
                                 std::uint64_t seed, Deadline deadline) {
              AdvGnnConfig cfg = base;
              cfg.run.seed = seed;
              cfg.run.restarts = 0;
              cfg.run.deadline = deadline;
              return advgnn_attack(net, prop, params, cfg);
            }};
  }
  throw ConfigError("bench: unknown method '" + name + "'");
}

RunRecord make_record(const std::string& property_id, const std::string& method,
                      std::uint64_t seed, const AttackOutcome& outcome, double elapsed,
                      double timeout) {
  RunRecord rec{property_id, method, seed, outcome.success, elapsed, outcome.iterations_used,
                outcome.restarts_used};
  if (!rec.success || rec.time > timeout) {
    rec.success = false;
    rec.time = timeout;
  }
  return rec;
}

std::vector<RunRecord> run_benchmark(const std::vector<BenchProperty>& properties,
                                     const std::vector<BenchMethod>& methods,
                                     const BenchConfig& cfg) {
  if (!(cfg.timeout > 0.0)) throw ConfigError("bench: timeout must be > 0");
  if (cfg.seeds.empty()) throw ConfigError("bench: need at least one seed");
  for (const auto& m : methods) {
    if (!m.run) throw ConfigError("bench: method '" + m.name + "' has no attack");
  }
  for (const auto& p : properties) {
    if (!p.net) throw ConfigError("bench: property '" + p.id + "' has no network");
    validate(*p.net, p.prop);
  }

  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t total = properties.size() * methods.size() * n_seeds;
  std::vector<RunRecord> records(total);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t job = next++; job < total; job = next++) {
      const std::size_t s = job % n_seeds;
      const std::size_t m = (job / n_seeds) % methods.size();
      const std::size_t p = job / (n_seeds * methods.size());
      const BenchProperty& prop = properties[p];
      try {
        const auto started = Clock::now();
        const Deadline deadline = started + std::chrono::duration_cast<Clock::duration>(
                                                std::chrono::duration<double>(cfg.timeout));
        const AttackOutcome out = methods[m].run(*prop.net, prop.prop, cfg.seeds[s], deadline);
        const double elapsed = std::chrono::duration<double>(Clock::now() - started).count();
        records[job] = make_record(prop.id, methods[m].name, cfg.seeds[s], out, elapsed, cfg.timeout);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const unsigned n_threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(total)));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return records;
}

namespace {

MethodMetrics metrics_of(const std::vector<const RunRecord*>& runs) {
  MethodMetrics out;
  out.runs = runs.size();
  if (runs.empty()) return out;
  double time = 0.0;
  std::size_t timeouts = 0;
  for (const RunRecord* r : runs) {
    time += r->time;
    if (!r->success) ++timeouts;
  }
  out.mean_time = time / static_cast<double>(runs.size());
  out.pct_timeout = 100.0 * static_cast<double>(timeouts) / static_cast<double>(runs.size());
  return out;
}

std::vector<CurvePoint> curve_of(const std::vector<const RunRecord*>& runs, double timeout) {
  std::vector<double> solved;
  for (const RunRecord* r : runs) {
    if (r->success) solved.push_back(r->time);
  }
  std::sort(solved.begin(), solved.end());
  std::vector<CurvePoint> out;
  if (runs.empty()) return out;
  const double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < solved.size(); ++i) {
    if (i + 1 < solved.size() && solved[i + 1] == solved[i]) continue;
    out.push_back({solved[i], 100.0 * static_cast<double>(i + 1) / n});
  }
  const double final_pct = 100.0 * static_cast<double>(solved.size()) / n;
  if (out.empty() || out.back().time < timeout) out.push_back({timeout, final_pct});
  return out;
}

nlohmann::json metrics_to_json(const MethodMetrics& m) {
  return {{"mean_time", m.mean_time}, {"pct_timeout", m.pct_timeout}, {"runs", m.runs}};
}

MethodMetrics metrics_from_json(const nlohmann::json& j) {
  return {j.at("mean_time").get<double>(), j.at("pct_timeout").get<double>(),
          j.at("runs").get<std::size_t>()};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

BenchSummary summarize(const std::vector<RunRecord>& records, double timeout) {
  BenchSummary out;
  out.timeout = timeout;
  std::map<std::string, std::vector<const RunRecord*>> by_method;
  for (const auto& r : records) by_method[r.method].push_back(&r);
  for (const auto& [name, runs] : by_method) {
    MethodSummary ms;
    ms.method = name;
    ms.overall = metrics_of(runs);
    std::map<std::uint64_t, std::vector<const RunRecord*>> by_seed;
    for (const RunRecord* r : runs) by_seed[r->seed].push_back(r);
    for (const auto& [seed, seed_runs] : by_seed) ms.per_seed[seed] = metrics_of(seed_runs);
    for (const auto& [seed, m] : ms.per_seed) {
      ms.seed_average.mean_time += m.mean_time / static_cast<double>(ms.per_seed.size());
      ms.seed_average.pct_timeout += m.pct_timeout / static_cast<double>(ms.per_seed.size());
      ms.seed_average.runs += m.runs;
    }
    ms.curve = curve_of(runs, timeout);
    out.methods.push_back(std::move(ms));
  }
  return out;
}

nlohmann::json summary_to_json(const BenchSummary& summary) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : summary.methods) {
    nlohmann::json per_seed = nlohmann::json::object();
    for (const auto& [seed, metrics] : m.per_seed) per_seed[std::to_string(seed)] = metrics_to_json(metrics);
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& pt : m.curve) curve.push_back({pt.time, pt.pct_solved});
    methods.push_back({{"method", m.method},
                       {"overall", metrics_to_json(m.overall)},
                       {"per_seed", std::move(per_seed)},
                       {"seed_average", metrics_to_json(m.seed_average)},
                       {"curve", std::move(curve)}});
  }
  return {{"timeout", summary.timeout}, {"methods", std::move(methods)}};
}

BenchSummary summary_from_json(const nlohmann::json& doc) {
  BenchSummary out;
  try {
    out.timeout = doc.at("timeout").get<double>();
    for (const auto& m : doc.at("methods")) {
      MethodSummary ms;
      ms.method = m.at("method").get<std::string>();
      ms.overall = metrics_from_json(m.at("overall"));
      for (const auto& [seed, metrics] : m.at("per_seed").items())
        ms.per_seed[std::stoull(seed)] = metrics_from_json(metrics);
      ms.seed_average = metrics_from_json(m.at("seed_average"));
      for (const auto& pt : m.at("curve")) ms.curve.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      out.methods.push_back(std::move(ms));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bench summary: ") + e.what());
  }
  return out;
}

nlohmann::json record_to_json(const RunRecord& r) {
  return {{"property", r.property_id}, {"method", r.method},    {"seed", r.seed},
          {"success", r.success},      {"time", r.time},        {"iterations", r.iterations},
          {"restarts", r.restarts}};
}

void emit_report(const BenchSummary& summary, const std::vector<RunRecord>& records,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::set<std::uint64_t> seeds;
  for (const auto& m : summary.methods) {
    for (const auto& [seed, metrics] : m.per_seed) seeds.insert(seed);
  }

  auto table = open_out(dir / "summary.csv");
  table << "method,mean_time,pct_timeout,runs";
  for (const auto s : seeds) table << ",seed_" << s << "_mean_time,seed_" << s << "_pct_timeout";
  table << ",seed_avg_mean_time,seed_avg_pct_timeout\n";
  for (const auto& m : summary.methods) {
    table << m.method << ',' << m.overall.mean_time << ',' << m.overall.pct_timeout << ','
          << m.overall.runs;
    for (const auto s : seeds) {
      const auto it = m.per_seed.find(s);
      if (it == m.per_seed.end()) {
        table << ",,";
      } else {
        table << ',' << it->second.mean_time << ',' << it->second.pct_timeout;
      }
    }
    table << ',' << m.seed_average.mean_time << ',' << m.seed_average.pct_timeout << '\n';
  }

  auto curve = open_out(dir / "curve.csv");
  curve << "method,time,pct_solved\n";
  for (const auto& m : summary.methods) {
    for (const auto& pt : m.curve) curve << m.method << ',' << pt.time << ',' << pt.pct_solved << '\n';
  }

  json_io::write_file(dir / "summary.json", summary_to_json(summary));

  auto runs = open_out(dir / "runs.jsonl");
  for (const auto& r : records) runs << record_to_json(r).dump() << '\n';
}

BenchSummary load_summary(const std::filesystem::path& path) {
  return summary_from_json(json_io::read_file(path));
}

}  // namespace advgnn
