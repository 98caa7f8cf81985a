#pragma once

// Experiment configuration, read from JSON. Every key is optional; unknown
// keys are rejected so typos surface as configuration errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdefense/attacks.hpp"
#include "sdefense/dataset.hpp"
#include "sdefense/lid.hpp"
#include "sdefense/logreg.hpp"
#include "sdefense/model.hpp"

namespace sdefense {

// Raised for anything wrong with the configuration itself (exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { Synthetic, Cifar10Subset };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::Synthetic;
  std::size_t num_classes = 4;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  std::size_t image_side = 32;
  double noise_sigma = 0.04;
  double distractor_amplitude = 0.04;
  // CIFAR only. A limit of 0 keeps every record.
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
};

struct TrainingConfig {
  std::size_t epochs = 6;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
};

inline const std::vector<std::string>& all_detectors() {
  static const std::vector<std::string> names{"InputMFS", "InputPFS", "LayerMFS", "LayerPFS", "LID", "M-D"};
  return names;
}

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;  // seed is derived from master_seed
  TrainingConfig training;
  std::vector<AttackConfig> attacks;
  // Cap on correctly classified test images handed to each attack; 0 = all.
  std::size_t max_attack_samples = 0;
  std::vector<std::string> detectors = all_detectors();
  std::vector<std::size_t> layer_ordinals{3, 5, 7};
  double split_fraction = 0.8;
  LogRegOptions logreg;
  LIDConfig lid;
  std::map<std::string, double> mahalanobis_noise{
      {"FGSM", 0.002}, {"BIM", 0.00005}, {"PGD", 0.00005}, {"DeepFool", 0.00005}, {"CW", 0.0001}};

  std::vector<std::size_t> band_edges{0, 8, 16, 24, 32};
  std::string band_attack = "BIM";
  std::vector<std::vector<std::size_t>> layer_groups{{0}, {1, 2}, {3, 4}, {5, 6}, {7}};
  std::string layer_attack = "BIM";
  std::vector<double> epsilon_grid{0.01, 0.02, 0.03, 0.04, 0.05};
  std::vector<std::string> sweep_attacks{"FGSM", "BIM", "PGD"};
  std::vector<std::string> transfer_attacks{"FGSM", "BIM", "PGD", "DeepFool", "CW"};
  std::vector<std::string> transfer_detectors{"InputMFS", "LayerMFS", "LayerPFS"};

  std::uint64_t master_seed = 0;

  ModelConfig model_config() const {
    ModelConfig m = model;
    m.num_classes = dataset.num_classes;
    m.height = m.width = dataset.kind == DatasetKind::Synthetic ? dataset.image_side : kCifarSide;
    m.channels = 3;
    m.seed = derive_seed(master_seed, "model");
    return m;
  }

  const AttackConfig& attack(const std::string& name) const {
    for (const auto& a : attacks)
      if (a.name() == name) return a;
    throw ConfigError("attack '" + name + "' is not configured");
  }

  void validate() const;
};

inline std::vector<AttackConfig> default_attacks(double epsilon) {
  std::vector<AttackConfig> v;
  for (auto m : {AttackMethod::FGSM, AttackMethod::BIM, AttackMethod::PGD, AttackMethod::DeepFool, AttackMethod::CW})
    v.push_back(AttackConfig::defaults(m, uses_epsilon(m) ? std::optional<double>(epsilon) : std::nullopt));
  return v;
}

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.contains(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline AttackConfig parse_attack(const json& j, std::size_t index) {
  const std::string where = "attacks[" + std::to_string(index) + "]";
  check_keys(j, where,
             {"method", "epsilon", "alpha", "iterations", "cw_c_init", "cw_binary_steps", "cw_inner_steps", "cw_lr",
              "overshoot"});
  std::string method;
  read(j, "method", method, where);
  AttackMethod m;
  try {
    m = parse_attack_method(method);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  std::optional<double> eps;
  if (j.contains("epsilon")) {
    double e = 0.0;
    read(j, "epsilon", e, where);
    eps = e;
  }
  if (eps && !uses_epsilon(m)) throw ConfigError(where + ": epsilon is not used by " + method);
  AttackConfig c = AttackConfig::defaults(m, eps);
  read(j, "alpha", c.alpha, where);
  read(j, "iterations", c.iterations, where);
  read(j, "cw_c_init", c.cw_c_init, where);
  read(j, "cw_binary_steps", c.cw_binary_steps, where);
  read(j, "cw_inner_steps", c.cw_inner_steps, where);
  read(j, "cw_lr", c.cw_lr, where);
  read(j, "overshoot", c.overshoot, where);
  return c;
}

inline json attack_to_json(const AttackConfig& c) {
  json j{{"method", to_string(c.method)}, {"iterations", c.iterations}};
  if (c.epsilon) j["epsilon"] = *c.epsilon;
  if (uses_epsilon(c.method)) j["alpha"] = c.alpha;
  if (c.method == AttackMethod::CW) {
    j["cw_c_init"] = c.cw_c_init;
    j["cw_binary_steps"] = c.cw_binary_steps;
    j["cw_inner_steps"] = c.cw_inner_steps;
    j["cw_lr"] = c.cw_lr;
  }
  if (c.method == AttackMethod::DeepFool) j["overshoot"] = c.overshoot;
  return j;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using detail::read;
  detail::check_keys(j, "config",
                     {"dataset", "model", "training", "attacks", "epsilon", "max_attack_samples", "detectors",
                      "layer_ordinals", "split_fraction", "logreg", "lid", "mahalanobis_noise", "band_edges",
                      "band_attack", "layer_groups", "layer_attack", "epsilon_grid", "sweep_attacks",
                      "transfer_attacks", "transfer_detectors", "master_seed"});
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d, "dataset",
                       {"kind", "num_classes", "train_per_class", "test_per_class", "image_side", "noise_sigma",
                        "distractor_amplitude", "train_path", "test_path", "train_limit", "test_limit"});
    std::string kind = "synthetic";
    read(d, "kind", kind, "dataset");
    if (kind == "synthetic") {
      c.dataset.kind = DatasetKind::Synthetic;
    } else if (kind == "cifar10") {
      c.dataset.kind = DatasetKind::Cifar10Subset;
      c.dataset.num_classes = 10;
    } else {
      throw ConfigError("dataset.kind: expected 'synthetic' or 'cifar10', got '" + kind + "'");
    }
    read(d, "num_classes", c.dataset.num_classes, "dataset");
    read(d, "train_per_class", c.dataset.train_per_class, "dataset");
    read(d, "test_per_class", c.dataset.test_per_class, "dataset");
    read(d, "image_side", c.dataset.image_side, "dataset");
    read(d, "noise_sigma", c.dataset.noise_sigma, "dataset");
    read(d, "distractor_amplitude", c.dataset.distractor_amplitude, "dataset");
    std::string p;
    if (d.contains("train_path")) {
      read(d, "train_path", p, "dataset");
      c.dataset.train_path = p;
    }
    if (d.contains("test_path")) {
      read(d, "test_path", p, "dataset");
      c.dataset.test_path = p;
    }
    read(d, "train_limit", c.dataset.train_limit, "dataset");
    read(d, "test_limit", c.dataset.test_limit, "dataset");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, "model", {"conv_blocks", "hidden_units"});
    if (m.contains("conv_blocks")) {
      std::vector<std::vector<std::size_t>> blocks;
      read(m, "conv_blocks", blocks, "model");
      c.model.conv_blocks.clear();
      for (const auto& b : blocks) {
        if (b.size() != 2) throw ConfigError("model.conv_blocks: each block is [out_channels, layers]");
        c.model.conv_blocks.push_back({b[0], b[1]});
      }
    }
    read(m, "hidden_units", c.model.hidden_units, "model");
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::check_keys(t, "training", {"epochs", "lr", "momentum", "batch_size"});
    read(t, "epochs", c.training.epochs, "training");
    read(t, "lr", c.training.lr, "training");
    read(t, "momentum", c.training.momentum, "training");
    read(t, "batch_size", c.training.batch_size, "training");
  }
  double epsilon = 0.03;
  read(j, "epsilon", epsilon, "config");
  if (j.contains("attacks")) {
    const auto& a = j.at("attacks");
    if (!a.is_array()) throw ConfigError("attacks: expected an array");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].is_string()) {
        nlohmann::json obj{{"method", a[i]}};
        try {
          if (uses_epsilon(parse_attack_method(a[i].get<std::string>()))) obj["epsilon"] = epsilon;
        } catch (const std::invalid_argument& e) {
          throw ConfigError("attacks[" + std::to_string(i) + "]: " + e.what());
        }
        c.attacks.push_back(detail::parse_attack(obj, i));
      } else {
        nlohmann::json obj = a[i];
        if (obj.is_object() && !obj.contains("epsilon") && obj.contains("method") && obj["method"].is_string()) {
          try {
            if (uses_epsilon(parse_attack_method(obj["method"].get<std::string>()))) obj["epsilon"] = epsilon;
          } catch (const std::invalid_argument&) {
          }
        }
        c.attacks.push_back(detail::parse_attack(obj, i));
      }
    }
  } else {
    c.attacks = default_attacks(epsilon);
  }
  read(j, "max_attack_samples", c.max_attack_samples, "config");
  read(j, "detectors", c.detectors, "config");
  read(j, "layer_ordinals", c.layer_ordinals, "config");
  read(j, "split_fraction", c.split_fraction, "config");
  if (j.contains("logreg")) {
    const auto& l = j.at("logreg");
    detail::check_keys(l, "logreg", {"l2_strength", "max_iter", "tol", "standardize"});
    read(l, "l2_strength", c.logreg.l2_strength, "logreg");
    read(l, "max_iter", c.logreg.max_iter, "logreg");
    read(l, "tol", c.logreg.tol, "logreg");
    read(l, "standardize", c.logreg.standardize, "logreg");
  }
  if (j.contains("lid")) {
    const auto& l = j.at("lid");
    detail::check_keys(l, "lid", {"batch_size", "k_neighbors", "batches"});
    read(l, "batch_size", c.lid.batch_size, "lid");
    read(l, "k_neighbors", c.lid.k_neighbors, "lid");
    read(l, "batches", c.lid.batches, "lid");
  }
  if (j.contains("mahalanobis_noise")) {
    std::map<std::string, double> noise;
    read(j, "mahalanobis_noise", noise, "config");
    for (const auto& [k, v] : noise) c.mahalanobis_noise[k] = v;
  }
  read(j, "band_edges", c.band_edges, "config");
  read(j, "band_attack", c.band_attack, "config");
  read(j, "layer_groups", c.layer_groups, "config");
  read(j, "layer_attack", c.layer_attack, "config");
  read(j, "epsilon_grid", c.epsilon_grid, "config");
  read(j, "sweep_attacks", c.sweep_attacks, "config");
  read(j, "transfer_attacks", c.transfer_attacks, "config");
  read(j, "transfer_detectors", c.transfer_detectors, "config");
  read(j, "master_seed", c.master_seed, "config");
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

// Canonical JSON (sorted keys) covering every field; its hash identifies the run.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json d{{"kind", c.dataset.kind == DatasetKind::Synthetic ? "synthetic" : "cifar10"},
         {"num_classes", c.dataset.num_classes}};
  if (c.dataset.kind == DatasetKind::Synthetic) {
    d["train_per_class"] = c.dataset.train_per_class;
    d["test_per_class"] = c.dataset.test_per_class;
    d["image_side"] = c.dataset.image_side;
    d["noise_sigma"] = c.dataset.noise_sigma;
    d["distractor_amplitude"] = c.dataset.distractor_amplitude;
  } else {
    d["train_path"] = c.dataset.train_path.string();
    d["test_path"] = c.dataset.test_path.string();
    d["train_limit"] = c.dataset.train_limit;
    d["test_limit"] = c.dataset.test_limit;
  }
  json blocks = json::array();
  for (const auto& b : c.model.conv_blocks) blocks.push_back({b.out_channels, b.layers});
  json attacks = json::array();
  for (const auto& a : c.attacks) attacks.push_back(detail::attack_to_json(a));
  return json{{"dataset", d},
              {"model", {{"conv_blocks", blocks}, {"hidden_units", c.model.hidden_units}}},
              {"training",
               {{"epochs", c.training.epochs},
                {"lr", c.training.lr},
                {"momentum", c.training.momentum},
                {"batch_size", c.training.batch_size}}},
              {"attacks", attacks},
              {"max_attack_samples", c.max_attack_samples},
              {"detectors", c.detectors},
              {"layer_ordinals", c.layer_ordinals},
              {"split_fraction", c.split_fraction},
              {"logreg",
               {{"l2_strength", c.logreg.l2_strength}, {"max_iter", c.logreg.max_iter}, {"tol", c.logreg.tol}, {"standardize", c.logreg.standardize}}},
              {"lid",
               {{"batch_size", c.lid.batch_size}, {"k_neighbors", c.lid.k_neighbors}, {"batches", c.lid.batches}}},
              {"mahalanobis_noise", c.mahalanobis_noise},
              {"band_edges", c.band_edges},
              {"band_attack", c.band_attack},
              {"layer_groups", c.layer_groups},
              {"layer_attack", c.layer_attack},
              {"epsilon_grid", c.epsilon_grid},
              {"sweep_attacks", c.sweep_attacks},
              {"transfer_attacks", c.transfer_attacks},
              {"transfer_detectors", c.transfer_detectors},
              {"master_seed", c.master_seed}};
}

inline void ExperimentConfig::validate() const {
  if (dataset.num_classes < 2) throw ConfigError("dataset.num_classes must be at least 2");
  if (dataset.kind == DatasetKind::Synthetic) {
    if (dataset.image_side < 8 || (dataset.image_side & (dataset.image_side - 1)) != 0)
      throw ConfigError("dataset.image_side must be a power of two >= 8");
    if (dataset.train_per_class == 0 || dataset.test_per_class == 0)
      throw ConfigError("dataset: train_per_class and test_per_class must be positive");
    if (dataset.noise_sigma < 0.0 || dataset.distractor_amplitude < 0.0)
      throw ConfigError("dataset: noise_sigma and distractor_amplitude must be non-negative");
  } else {
    for (const auto* p : {&dataset.train_path, &dataset.test_path})
      if (p->empty() || !std::filesystem::exists(*p))
        throw ConfigError("dataset: CIFAR file '" + p->string() + "' does not exist");
  }
  try {
    model_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (training.lr <= 0.0 || training.batch_size == 0) throw ConfigError("training: lr and batch_size must be positive");
  if (attacks.empty()) throw ConfigError("attacks: at least one attack required");
  std::set<std::string> names;
  for (const auto& a : attacks) {
    try {
      a.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!names.insert(a.name()).second) throw ConfigError("attacks: '" + a.name() + "' configured twice");
  }
  for (const auto& d : detectors)
    if (std::find(all_detectors().begin(), all_detectors().end(), d) == all_detectors().end())
      throw ConfigError("detectors: unknown detector '" + d + "'");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0,1)");
  const ModelParams layout = build_layout(model_config());
  auto check_ordinals = [&](const std::vector<std::size_t>& ords, const std::string& where) {
    if (ords.empty()) throw ConfigError(where + ": empty ordinal list");
    for (std::size_t o : ords)
      if (o > layout.activation_count())
        throw ConfigError(where + ": ordinal " + std::to_string(o) + " exceeds " +
                          std::to_string(layout.activation_count()) + " activations");
  };
  check_ordinals(layer_ordinals, "layer_ordinals");
  for (const auto& g : layer_groups) check_ordinals(g, "layer_groups");
  try {
    lid.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (logreg.max_iter == 0 || logreg.tol <= 0.0 || logreg.l2_strength < 0.0)
    throw ConfigError("logreg: need max_iter > 0, tol > 0, l2_strength >= 0");
  for (const auto& [k, v] : mahalanobis_noise)
    if (v < 0.0) throw ConfigError("mahalanobis_noise." + k + " must be non-negative");
  if (band_edges.size() < 2) throw ConfigError("band_edges: need at least two edges");
  for (std::size_t i = 1; i < band_edges.size(); ++i)
    if (band_edges[i] <= band_edges[i - 1]) throw ConfigError("band_edges must be strictly increasing");
  const std::size_t side = model_config().height;
  if (band_edges.back() > side) throw ConfigError("band_edges: last edge exceeds image side " + std::to_string(side));
  for (double e : epsilon_grid)
    if (!(e > 0.0 && e <= 1.0))
      throw ConfigError("epsilon_grid: " + std::to_string(e) + " outside (0,1]; epsilon 0 admits no successful attack");
  for (const auto& a : sweep_attacks)
    if (!uses_epsilon(parse_attack_method(a))) throw ConfigError("sweep_attacks: " + a + " has no epsilon");
  for (const auto& d : transfer_detectors)
    if (d == "LID" || d == "M-D" ||
        std::find(all_detectors().begin(), all_detectors().end(), d) == all_detectors().end())
      throw ConfigError("transfer_detectors: '" + d + "' is not a spectral detector");
}

}  // namespace sdefense
