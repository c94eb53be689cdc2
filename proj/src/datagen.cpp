#include "advgnn/datagen.hpp"

#include "advgnn/error.hpp"
#include "advgnn/json_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace advgnn {

namespace {

Index predicted_class(const Network& net, const Vector& x) {
  Index out = 0;
  logits(net, x).maxCoeff(&out);
  return out;
}

double box_radius(const Network& net, const Vector& x) {
  return (x - net.input_lo()).cwiseMax(net.input_hi() - x).maxCoeff();
}

}  // namespace

AttackOutcome pgd_oracle(const Network& net, const Vector& x, Index y, Index y_tar,
                         double epsilon, const SearchConfig& cfg, Deadline deadline) {
  PgdConfig pgd;
  pgd.steps = cfg.steps;
  pgd.alpha = cfg.lr;
  pgd.run.seed = cfg.seed;
  pgd.run.restarts = cfg.restarts;
  pgd.run.deadline = deadline;
  const AttackProperty prop{PerturbationBall::around(net, x, epsilon), y, y_tar, {}};
  return pgd_attack(net, prop, pgd);
}

SearchResult binary_search_epsilon(const Network& net, const Vector& x, Index y, Index y_tar,
                                   const SearchConfig& cfg) {
  if (x.size() != net.input_dim()) throw ShapeError("binary search: x has the wrong length");
  check_classes(net, y, y_tar);
  if (!(cfg.eta > 0.0)) throw ConfigError("binary search: eta must be > 0");
  if (cfg.restarts < 1 || cfg.steps < 1)
    throw ConfigError("binary search: restarts and steps must be >= 1");
  if (!(cfg.eps_lo >= 0.0)) throw ConfigError("binary search: eps_lo must be >= 0");

  SearchResult out;
  if (adversarial_loss(net, x, y, y_tar) >= 0.0) {
    out.trivial = true;
    out.epsilon = out.lo = out.hi = cfg.eps_lo;
    out.point = x;
    return out;
  }
  if (predicted_class(net, x) != y) throw ConfigError("binary search: not a valid property");

  double lo = cfg.eps_lo;
  double hi = cfg.eps_hi.value_or(box_radius(net, x));
  if (!(hi > lo)) throw ConfigError("binary search: need eps_hi > eps_lo");
  AttackOutcome at_hi = pgd_oracle(net, x, y, y_tar, hi, cfg);
  if (!at_hi.success) throw Error("binary search: bracket too small");
  if (lo > 0.0 && pgd_oracle(net, x, y, y_tar, lo, cfg).success)
    throw ConfigError("binary search: attack already succeeds at eps_lo");

  Vector point = *at_hi.adversarial_point;
  while (hi - lo > cfg.eta) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    AttackOutcome r = pgd_oracle(net, x, y, y_tar, mid, cfg);
    if (r.success) {
      hi = mid;
      point = std::move(*r.adversarial_point);
    } else {
      lo = mid;
    }
  }
  out.epsilon = out.hi = hi;
  out.lo = lo;
  out.point = std::move(point);
  return out;
}

std::vector<LabeledImage> load_images(const std::filesystem::path& path) {
  std::vector<nlohmann::json> items;
  const std::string text = [&] {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
  }();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    items = json_io::read_file(path).get<std::vector<nlohmann::json>>();
  } else {
    items = json_io::read_lines(path);
  }
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string src = path.string() + ": image " + std::to_string(i);
    const auto& item = items[i];
    if (!item.is_object() || !item.contains("x")) throw FormatError(src + ": missing 'x'");
    const char* label_key = item.contains("label") ? "label" : "y";
    if (!item.contains(label_key)) throw FormatError(src + ": missing 'label'");
    out.push_back({json_io::vector_from_json(item.at("x"), src + ": x"),
                   item.at(label_key).get<Index>()});
  }
  return out;
}

std::vector<PropertyRecord> generate_dataset(const Network& net,
                                             const std::vector<LabeledImage>& images,
                                             std::size_t count, const SearchConfig& cfg,
                                             std::uint64_t seed) {
  if (net.output_dim() < 2) throw ConfigError("generate_dataset: need at least two classes");
  Rng rng = make_rng(seed);
  std::vector<PropertyRecord> out;
  for (std::size_t i = 0; i < images.size() && out.size() < count; ++i) {
    const LabeledImage& img = images[i];
    if (img.x.size() != net.input_dim()) throw ShapeError("generate_dataset: image has the wrong length");
    if (img.label < 0 || img.label >= net.output_dim() || predicted_class(net, img.x) != img.label)
      continue;
    std::uniform_int_distribution<Index> pick(0, net.output_dim() - 2);
    Index y_tar = pick(rng);
    if (y_tar >= img.label) ++y_tar;
    SearchConfig run = cfg;
    run.seed = rng();
    SearchResult found;
    try {
      found = binary_search_epsilon(net, img.x, img.label, y_tar, run);
    } catch (const Error&) {
      continue;  // no attack found even on the whole box
    }
    if (found.trivial || !(found.epsilon > 0.0)) continue;
    PropertyRecord rec;
    rec.id = "p" + std::to_string(out.size());
    rec.x = img.x;
    rec.y = img.label;
    rec.y_tar = y_tar;
    rec.epsilon = found.epsilon;
    rec.provenance = {run.eta, run.restarts, run.steps, run.lr, run.seed, 0.0};
    out.push_back(std::move(rec));
  }
  if (out.size() < count)
    throw Error("generate_dataset: image source exhausted after " + std::to_string(out.size()) +
                " of " + std::to_string(count) + " properties");
  return out;
}

std::vector<PropertyRecord> easy_variant(const std::vector<PropertyRecord>& dataset, double delta) {
  if (!(delta >= 0.0)) throw ConfigError("easy_variant: delta must be >= 0");
  std::vector<PropertyRecord> out = dataset;
  for (auto& rec : out) {
    rec.epsilon += delta;
    rec.provenance.delta += delta;
  }
  return out;
}

bool replay(const Network& net, const PropertyRecord& record) {
  SearchConfig cfg;
  cfg.eta = record.provenance.eta;
  cfg.restarts = record.provenance.restarts;
  cfg.steps = record.provenance.pgd_steps;
  cfg.lr = record.provenance.pgd_lr;
  cfg.seed = record.provenance.seed;
  const double searched = record.epsilon - record.provenance.delta;
  const AttackOutcome r = pgd_oracle(net, record.x, record.y, record.y_tar, searched, cfg);
  if (!r.success) return false;
  // recomputed independently of the attack's own bookkeeping
  const AttackProperty prop = to_property(net, record);
  return prop.ball.contains(*r.adversarial_point) &&
         adversarial_loss(net, *r.adversarial_point, record.y, record.y_tar) >= 0.0;
}

nlohmann::json record_to_json(const PropertyRecord& record) {
  const Provenance& p = record.provenance;
  nlohmann::json doc = {{"id", record.id},
                        {"x", json_io::vector_to_json(record.x)},
                        {"y", record.y},
                        {"y_tar", record.y_tar},
                        {"epsilon", record.epsilon},
                        {"provenance",
                         {{"eta", p.eta},
                          {"restarts", p.restarts},
                          {"pgd_steps", p.pgd_steps},
                          {"pgd_lr", p.pgd_lr},
                          {"seed", p.seed},
                          {"delta", p.delta}}}};
  if (!record.net_ref.empty()) doc["net"] = record.net_ref;
  return doc;
}

PropertyRecord record_from_json(const nlohmann::json& doc, const std::string& source) {
  if (!doc.is_object()) throw FormatError(source + ": expected a JSON object");
  for (const char* key : {"x", "y", "y_tar", "epsilon"}) {
    if (!doc.contains(key)) throw FormatError(source + ": missing '" + key + "'");
  }
  PropertyRecord rec;
  try {
    rec.id = doc.value("id", std::string{});
    rec.x = json_io::vector_from_json(doc.at("x"), source + ": x");
    rec.y = doc.at("y").get<Index>();
    rec.y_tar = doc.at("y_tar").get<Index>();
    rec.epsilon = doc.at("epsilon").get<double>();
    rec.net_ref = doc.value("net", std::string{});
    if (doc.contains("provenance")) {
      const auto& p = doc.at("provenance");
      rec.provenance.eta = p.value("eta", 1e-3);
      rec.provenance.restarts = p.value("restarts", 0L);
      rec.provenance.pgd_steps = p.value("pgd_steps", 0L);
      rec.provenance.pgd_lr = p.value("pgd_lr", 0.0);
      rec.provenance.seed = p.value("seed", std::uint64_t{0});
      rec.provenance.delta = p.value("delta", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": " + e.what());
  }
  if (!(rec.epsilon > 0.0)) throw FormatError(source + ": epsilon must be > 0");
  return rec;
}

std::vector<PropertyRecord> load_dataset(const std::filesystem::path& path) {
  const auto lines = json_io::read_lines(path);
  std::vector<PropertyRecord> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i)
    out.push_back(record_from_json(lines[i], path.string() + ": record " + std::to_string(i)));
  return out;
}

void save_dataset(const std::vector<PropertyRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& rec : records) out << record_to_json(rec).dump() << '\n';
}

TrainingSample to_training_sample(const PropertyRecord& record) {
  return {record.x, record.y, record.y_tar, record.epsilon, record.net_ref};
}

AttackProperty to_property(const Network& net, const PropertyRecord& record) {
  AttackProperty prop{PerturbationBall::around(net, record.x, record.epsilon), record.y,
                      record.y_tar, record.net_ref};
  validate(net, prop);
  return prop;
}

AttackProperty load_property(const Network& net, const std::filesystem::path& path) {
  return to_property(net, record_from_json(json_io::read_file(path), path.string()));
}

}  // namespace advgnn
