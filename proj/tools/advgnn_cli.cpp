#include "advgnn/attacks.hpp"
#include "advgnn/bench.hpp"
#include "advgnn/bounds.hpp"
#include "advgnn/datagen.hpp"
#include "advgnn/error.hpp"
#include "advgnn/gnn.hpp"
#include "advgnn/json_io.hpp"
#include "advgnn/network.hpp"
#include "advgnn/relaxation.hpp"
#include "advgnn/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace advgnn;

void emit(const nlohmann::json& doc, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << doc.dump(2) << '\n';
  } else {
    json_io::write_file(out, doc);
  }
}

FeatureMode mode_of(const std::string& name) { return feature_mode_from_string(name); }

struct AttackArgs {
  std::string net, prop, method = "pgd", params, out, features = "dual";
  std::uint64_t seed = 0;
  double timeout = 100.0;
  std::optional<double> alpha, mu;
  std::optional<long> steps;
  long restarts = 0;
};

int run_attack(const AttackArgs& a) {
  const Network net = load_network(a.net);
  const AttackProperty prop = load_property(net, a.prop);
  const Deadline deadline = deadline_after(a.timeout);
  RunLimits run;
  run.seed = a.seed;
  run.restarts = a.restarts;
  run.deadline = deadline;

  AttackOutcome out;
  if (a.method == "pgd") {
    PgdConfig cfg;
    cfg.alpha = a.alpha.value_or(cfg.alpha);
    cfg.steps = a.steps.value_or(cfg.steps);
    cfg.run = run;
    out = pgd_attack(net, prop, cfg);
  } else if (a.method == "mifgsm") {
    MiFgsmConfig cfg;
    cfg.alpha = a.alpha.value_or(cfg.alpha);
    cfg.steps = a.steps.value_or(cfg.steps);
    cfg.mu = a.mu.value_or(cfg.mu);
    cfg.run = run;
    out = mi_fgsm_plus(net, prop, cfg);
  } else if (a.method == "cw") {
    CwConfig cfg;
    cfg.alpha = a.alpha.value_or(cfg.alpha);
    cfg.steps = a.steps.value_or(cfg.steps);
    cfg.max_outer = 0;
    cfg.deadline = deadline;
    out = cw_attack(net, prop, cfg);
  } else if (a.method == "advgnn") {
    if (a.params.empty()) throw ConfigError("attack: --method advgnn needs --params");
    const GnnParams params = load_params(a.params);
    AdvGnnConfig cfg;
    cfg.alpha = a.alpha.value_or(cfg.alpha);
    cfg.steps = a.steps.value_or(cfg.steps);
    cfg.run = run;
    cfg.feature_mode = mode_of(a.features);
    out = advgnn_attack(net, prop, params, cfg);
  } else {
    throw ConfigError("attack: unknown method '" + a.method + "'");
  }
  nlohmann::json doc = outcome_to_json(out);
  doc["method"] = a.method;
  doc["seed"] = a.seed;
  emit(doc, a.out);
  return 0;
}

int run_bounds(const std::string& net_path, const std::string& prop_path, const std::string& method,
               const std::string& out) {
  const Network net = load_network(net_path);
  const AttackProperty prop = load_property(net, prop_path);
  nlohmann::json doc;
  if (method == "ibp") {
    doc = bounds_to_json(ibp(net, prop.ball));
  } else if (method == "wk") {
    doc = bounds_to_json(wk_bounds(net, prop.ball));
  } else {
    const LayerBounds a = ibp(net, prop.ball);
    const LayerBounds b = wk_bounds(net, prop.ball);
    doc = {{"ibp", bounds_to_json(a)}, {"wk", bounds_to_json(b)}, {"tightest", bounds_to_json(tightest(a, b))}};
  }
  emit(doc, out);
  return 0;
}

int run_relax(const std::string& net_path, const std::string& prop_path, const DualConfig& cfg,
              const std::string& out) {
  const Network net = load_network(net_path);
  const AttackProperty prop = load_property(net, prop_path);
  const DualState dual = supergradient_ascent(net, prop, best_bounds(net, prop.ball), cfg);
  emit(dual_to_json(dual), out);
  return 0;
}

std::vector<TrainingSample> samples_of(const std::vector<PropertyRecord>& records) {
  std::vector<TrainingSample> out;
  for (const auto& r : records) out.push_back(to_training_sample(r));
  return out;
}

int run_train(const std::string& net_path, const std::string& data_path, const std::string& val_path,
              TrainConfig cfg, const std::string& features, const std::string& out,
              std::string loss_log, const std::string& init, double budget) {
  cfg.feature_mode = mode_of(features);
  const Network net = load_network(net_path);
  const auto dataset = samples_of(load_dataset(data_path));
  const auto validation = val_path.empty() ? std::vector<TrainingSample>{} : samples_of(load_dataset(val_path));
  TrainResult result;
  if (init.empty()) {
    result = train(net, dataset, cfg, validation);
  } else {
    result = fine_tune(load_params(init), net, dataset, cfg, budget);
  }
  save_params(result.params, out);
  if (loss_log.empty()) loss_log = std::filesystem::path(out).replace_extension(".loss.csv").string();
  write_loss_log(result.log, loss_log);
  std::cerr << "trained " << result.log.size() << " epochs";
  if (!result.log.empty()) std::cerr << ", last total_loss " << result.log.back().total_loss;
  std::cerr << "\n";
  return 0;
}

int run_gen(const std::string& net_path, const std::string& images_path, std::size_t count,
            const SearchConfig& cfg, std::uint64_t seed, double delta, const std::string& out) {
  const Network net = load_network(net_path);
  auto records = generate_dataset(net, load_images(images_path), count, cfg, seed);
  if (delta > 0.0) records = easy_variant(records, delta);
  for (auto& r : records) r.net_ref = net_path;
  save_dataset(records, out);
  std::cerr << "wrote " << records.size() << " properties to " << out << "\n";
  return 0;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (const char c : s + ",") {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item.push_back(c);
    }
  }
  return out;
}

int run_bench_cmd(const std::string& net_path, const std::string& data_path, const std::string& methods,
                  const std::string& params_path, BenchConfig cfg, const std::string& seeds,
                  std::optional<double> pgd_alpha, const std::string& features, const std::string& out) {
  const Network net = load_network(net_path);
  const auto records = load_dataset(data_path);
  std::vector<BenchProperty> props;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string id = records[i].id.empty() ? "p" + std::to_string(i) : records[i].id;
    props.push_back({id, &net, to_property(net, records[i])});
  }
  cfg.seeds.clear();
  for (const auto& s : split(seeds)) cfg.seeds.push_back(std::stoull(s));

  MethodOptions options;
  options.pgd = pgd_methods_preset();
  if (pgd_alpha) options.pgd.alpha = *pgd_alpha;
  options.advgnn.feature_mode = mode_of(features);
  if (!params_path.empty()) options.params = load_params(params_path);
  std::vector<BenchMethod> list;
  for (const auto& name : split(methods)) list.push_back(make_method(name, options));

  const auto runs = run_benchmark(props, list, cfg);
  const BenchSummary summary = summarize(runs, cfg.timeout);
  emit_report(summary, runs, out);
  for (const auto& m : summary.methods)
    std::cout << m.method << ": mean time " << m.overall.mean_time << " s, timeout "
              << m.overall.pct_timeout << "%\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks with a learned GNN update rule"};
  app.require_subcommand(1);

  AttackArgs attack;
  auto* a = app.add_subcommand("attack", "run one attack on one property");
  a->add_option("--net", attack.net, "network JSON")->required()->check(CLI::ExistingFile);
  a->add_option("--prop", attack.prop, "property JSON")->required()->check(CLI::ExistingFile);
  a->add_option("--method", attack.method)->check(CLI::IsMember({"pgd", "mifgsm", "cw", "advgnn"}));
  a->add_option("--seed", attack.seed);
  a->add_option("--timeout", attack.timeout, "seconds");
  a->add_option("--alpha", attack.alpha);
  a->add_option("--steps", attack.steps);
  a->add_option("--mu", attack.mu);
  a->add_option("--restarts", attack.restarts, "0 restarts until the timeout");
  a->add_option("--params", attack.params, "GNN parameters (advgnn)");
  a->add_option("--features", attack.features)->check(CLI::IsMember({"dual", "wk"}));
  a->add_option("--out", attack.out, "output JSON (default stdout)");

  std::string net, prop, method = "both", out;
  auto* b = app.add_subcommand("bounds", "intermediate bounds of every layer");
  b->add_option("--net", net)->required()->check(CLI::ExistingFile);
  b->add_option("--prop", prop)->required()->check(CLI::ExistingFile);
  b->add_option("--method", method)->check(CLI::IsMember({"ibp", "wk", "both"}));
  b->add_option("--out", out);

  DualConfig dual;
  auto* r = app.add_subcommand("relax", "dual of the relaxed attack problem");
  r->add_option("--net", net)->required()->check(CLI::ExistingFile);
  r->add_option("--prop", prop)->required()->check(CLI::ExistingFile);
  r->add_option("--steps", dual.steps);
  r->add_option("--lr", dual.lr);
  r->add_option("--out", out);

  TrainConfig tcfg;
  std::string dataset, validation, features = "dual", loss_log, init;
  double budget = 900.0;
  auto* t = app.add_subcommand("train-gnn", "train GNN parameters");
  t->add_option("--net", net)->required()->check(CLI::ExistingFile);
  t->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
  t->add_option("--validation", validation)->check(CLI::ExistingFile);
  t->add_option("--epochs", tcfg.epochs);
  t->add_option("--horizon", tcfg.horizon);
  t->add_option("--gamma", tcfg.gamma);
  t->add_option("--starts", tcfg.starts);
  t->add_option("--seed", tcfg.seed);
  t->add_option("--lr", tcfg.lr);
  t->add_option("--alpha", tcfg.alpha, "attack step size inside the rollouts");
  t->add_option("--p", tcfg.p, "embedding width");
  t->add_option("--features", features)->check(CLI::IsMember({"dual", "wk"}));
  t->add_option("--init", init, "fine-tune from these parameters");
  t->add_option("--budget", budget, "fine-tuning wall clock, seconds");
  t->add_option("--loss-log", loss_log, "CSV (default: <out>.loss.csv)");
  t->add_option("--out", out)->required();

  SearchConfig scfg;
  std::string images;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  double delta = 0.0;
  auto* g = app.add_subcommand("gen-dataset", "minimal-epsilon properties by bisection");
  g->add_option("--net", net)->required()->check(CLI::ExistingFile);
  g->add_option("--images", images)->required()->check(CLI::ExistingFile);
  g->add_option("--count", count);
  g->add_option("--eta", scfg.eta);
  g->add_option("--restarts", scfg.restarts);
  g->add_option("--steps", scfg.steps);
  g->add_option("--lr", scfg.lr);
  g->add_option("--seed", seed);
  g->add_option("--easy-delta", delta, "add delta to every epsilon");
  g->add_option("--out", out)->required();

  BenchConfig bcfg;
  std::string methods = "pgd,mifgsm,cw,advgnn", params, seeds = "1,2,3";
  std::optional<double> pgd_alpha;
  auto* h = app.add_subcommand("bench", "timed comparison of attacks");
  h->add_option("--net", net)->required()->check(CLI::ExistingFile);
  h->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
  h->add_option("--methods", methods);
  h->add_option("--params", params)->check(CLI::ExistingFile);
  h->add_option("--timeout", bcfg.timeout);
  h->add_option("--seeds", seeds);
  h->add_option("--threads", bcfg.threads);
  h->add_option("--pgd-alpha", pgd_alpha);
  h->add_option("--features", features)->check(CLI::IsMember({"dual", "wk"}));
  h->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*a) return run_attack(attack);
    if (*b) return run_bounds(net, prop, method, out);
    if (*r) return run_relax(net, prop, dual, out);
    if (*t) return run_train(net, dataset, validation, tcfg, features, out, loss_log, init, budget);
    if (*g) return run_gen(net, images, count, scfg, seed, delta, out);
    if (*h) return run_bench_cmd(net, dataset, methods, params, bcfg, seeds, pgd_alpha, features, out);
  } catch (const advgnn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
