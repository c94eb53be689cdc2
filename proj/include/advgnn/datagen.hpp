#pragma once

#include "advgnn/attacks.hpp"
#include "advgnn/network.hpp"
#include "advgnn/training.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace advgnn {

struct SearchConfig {
  double eta = 1e-3;
  long restarts = 20000;  // R
  long steps = 2000;      // T
  double lr = 1e-2;
  double eps_lo = 0.0;
  // Defaults to the largest l_inf distance from x to a corner of the input box.
  std::optional<double> eps_hi;
  std::uint64_t seed = 0;
};

struct SearchResult {
  double epsilon = 0.0;  // = hi
  double lo = 0.0;
  double hi = 0.0;
  bool trivial = false;  // y_tar already wins at x
  // Adversarial point found at hi (x itself for a trivial property).
  Vector point;
};

// Bisection on epsilon with PGD as the success oracle. Every PGD call uses
// the same seed, so the record replays with the recorded budget.
SearchResult binary_search_epsilon(const Network& net, const Vector& x, Index y, Index y_tar,
                                   const SearchConfig& cfg);

// The PGD run used as the oracle at a given epsilon.
AttackOutcome pgd_oracle(const Network& net, const Vector& x, Index y, Index y_tar,
                         double epsilon, const SearchConfig& cfg, Deadline deadline = {});

struct Provenance {
  double eta = 1e-3;
  long restarts = 0;
  long pgd_steps = 0;
  double pgd_lr = 0.0;
  std::uint64_t seed = 0;
  double delta = 0.0;  // easy-variant shift already added to epsilon
};

struct PropertyRecord {
  std::string id;
  Vector x;
  Index y = 0;
  Index y_tar = 1;
  double epsilon = 0.0;
  std::string net_ref;
  Provenance provenance;
};

struct LabeledImage {
  Vector x;
  Index label = 0;
};

// JSONL of {"x": [...], "label": n}, or a JSON array of the same objects.
std::vector<LabeledImage> load_images(const std::filesystem::path& path);

std::vector<PropertyRecord> generate_dataset(const Network& net,
                                             const std::vector<LabeledImage>& images,
                                             std::size_t count, const SearchConfig& cfg,
                                             std::uint64_t seed);

// epsilon + delta on every record.
std::vector<PropertyRecord> easy_variant(const std::vector<PropertyRecord>& dataset,
                                         double delta = 0.001);

// Replays the PGD oracle at the recorded epsilon and budget.
bool replay(const Network& net, const PropertyRecord& record);

nlohmann::json record_to_json(const PropertyRecord& record);
PropertyRecord record_from_json(const nlohmann::json& doc, const std::string& source);
std::vector<PropertyRecord> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::vector<PropertyRecord>& records, const std::filesystem::path& path);

TrainingSample to_training_sample(const PropertyRecord& record);
AttackProperty to_property(const Network& net, const PropertyRecord& record);

// A property file is either a PropertyRecord object or
// {"x", "y", "y_tar", "epsilon"}; both go through record_from_json.
AttackProperty load_property(const Network& net, const std::filesystem::path& path);

}  // namespace advgnn
