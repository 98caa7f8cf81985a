#pragma once

// Experiment orchestration: dataset and model preparation, paired attack
// datasets, per-detector features and the experiment runners. Intermediate
// artifacts (model checkpoint, paired datasets) are cached in memory and,
// when a cache directory is given, on disk keyed by a hash of everything
// they depend on.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sdefense/checkpoint.hpp"
#include "sdefense/comparators.hpp"
#include "sdefense/experiment_config.hpp"
#include "sdefense/features.hpp"
#include "sdefense/lid.hpp"
#include "sdefense/logreg.hpp"
#include "sdefense/mahalanobis.hpp"
#include "sdefense/metrics.hpp"
#include "sdefense/pairs.hpp"
#include "sdefense/report.hpp"
#include "sdefense/spectral.hpp"

namespace sdefense {

// Benign and adversarial feature rows, aligned with the pair order.
struct PairFeatures {
  FeatureMatrix benign;
  FeatureMatrix adversarial;
  FeatureSetDescriptor descriptor;
};

// What a detector looks at: a detector name plus optional band / layer override.
struct FeatureRequest {
  std::string detector;
  std::optional<FrequencyBand> band;
  std::optional<std::vector<std::size_t>> ordinals;

  std::string key() const {
    std::string s = detector;
    if (band) s += "{" + std::to_string(band->lo) + "," + std::to_string(band->hi) + "}";
    if (ordinals) {
      s += "[";
      for (std::size_t o : *ordinals) s += std::to_string(o) + ",";
      s += "]";
    }
    return s;
  }
};

struct RunResult {
  std::vector<EvalReport> reports;
  std::size_t failed_cells = 0;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig config, std::optional<std::filesystem::path> cache_dir = std::nullopt)
      : config_(std::move(config)), cache_dir_(std::move(cache_dir)) {
    config_.validate();
    config_hash_ = git_blob_hash(to_json(config_).dump());
    if (cache_dir_) std::filesystem::create_directories(*cache_dir_);
  }

  const ExperimentConfig& config() const { return config_; }
  const std::string& config_hash() const { return config_hash_; }

  const LabeledImageSet& train_set() {
    load_data();
    return train_;
  }
  const LabeledImageSet& test_set() {
    load_data();
    return test_;
  }

  const ModelParams& model() {
    if (model_) return *model_;
    const std::string key = model_key();
    if (cache_dir_) {
      const auto ck = *cache_dir_ / "model.sdck";
      const auto kf = *cache_dir_ / "model.key";
      if (std::filesystem::exists(ck) && std::filesystem::exists(kf) && read_file(kf) == key) {
        model_ = load_checkpoint(ck);
        model_hash_ = git_blob_hash(read_file(ck));
        return *model_;
      }
    }
    TrainOptions opt;
    opt.momentum = config_.training.momentum;
    opt.batch_size = config_.training.batch_size;
    model_ = train(config_.model_config(), train_set(), config_.training.epochs, config_.training.lr, &train_log_, opt);
    const std::string bytes = encode_checkpoint(*model_);
    model_hash_ = git_blob_hash(bytes);
    if (cache_dir_) {
      write_file(*cache_dir_ / "model.sdck", bytes);
      write_file(*cache_dir_ / "model.key", key);
    }
    return *model_;
  }

  const std::string& model_hash() {
    model();
    return model_hash_;
  }
  const TrainLog& train_log() const { return train_log_; }

  // Attack configuration with its seed derived from the master seed.
  AttackConfig seeded(AttackConfig a) const {
    a.seed = 0;
    a.seed = derive_seed(config_.master_seed, "attack/" + attack_key(a));
    return a;
  }

  const PairedDataset& pairs(const AttackConfig& raw) {
    const AttackConfig a = seeded(raw);
    const std::string key = attack_key(a);
    if (auto it = pairs_.find(key); it != pairs_.end()) return it->second.data;
    const std::uint64_t key_hash = fnv1a64(model_key() + "|" + key + "|" + std::to_string(config_.max_attack_samples));
    const auto file = cache_dir_ ? std::optional(*cache_dir_ / ("pairs_" + pair_file_stem(a) + ".sdpr")) : std::nullopt;
    if (file && std::filesystem::exists(*file)) {
      std::string bytes = read_file(*file);
      DecodedPairs d = decode_pairs(bytes, to_string(a.method), file->string());
      if (d.key_hash == key_hash) {
        auto& e = pairs_[key];
        e.data = std::move(d.pairs);
        e.hash = git_blob_hash(bytes);
        return e.data;
      }
    }
    PairedDataset p = build_attack_dataset(model(), test_set(), a, config_.max_attack_samples);
    const std::string bytes = encode_pairs(p, key_hash);
    if (file) write_file(*file, bytes);
    auto& e = pairs_[key];
    e.data = std::move(p);
    e.hash = git_blob_hash(bytes);
    return e.data;
  }

  const std::string& pairs_hash(const AttackConfig& a) {
    pairs(a);
    return pairs_.at(attack_key(seeded(a))).hash;
  }

  std::uint64_t split_seed(const AttackConfig& a) const {
    return derive_seed(config_.master_seed, "split/" + attack_key(seeded(a)));
  }

  PairSplit split(const AttackConfig& a) {
    return split_pairs(pairs(a).size(), config_.split_fraction, split_seed(a));
  }

  const MahalanobisStats& mahalanobis_stats() {
    if (!md_stats_) md_stats_ = fit_mahalanobis(model(), train_set(), all_ordinals());
    return *md_stats_;
  }

  std::vector<std::size_t> all_ordinals() {
    std::vector<std::size_t> o(model().activation_count());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = i + 1;
    return o;
  }

  const PairFeatures& features(const AttackConfig& a, const FeatureRequest& req) {
    const std::string key = attack_key(seeded(a)) + "|" + req.key();
    if (auto it = features_.find(key); it != features_.end()) return it->second;
    return features_[key] = compute_features(a, req);
  }

  std::uint64_t cell_seed(const std::string& cell) const { return derive_seed(config_.master_seed, cell); }

  // Provenance shared by every record of this experiment.
  std::map<std::string, std::string> base_provenance(const std::string& experiment) {
    return {{"experiment", experiment},
            {"master_seed", std::to_string(config_.master_seed)},
            {"config_hash", config_hash_},
            {"model_hash", model_hash()},
            {"dataset", config_.dataset.kind == DatasetKind::Synthetic ? "synthetic" : "cifar10"}};
  }

 private:
  struct CachedPairs {
    PairedDataset data;
    std::string hash;
  };

  static std::string pair_file_stem(const AttackConfig& a) {
    std::string s = to_string(a.method);
    if (a.epsilon) {
      char b[32];
      std::snprintf(b, sizeof b, "_eps%g", *a.epsilon);
      s += b;
    }
    return s;
  }

  std::string model_key() const {
    const auto j = to_json(config_);
    nlohmann::json k{{"dataset", j["dataset"]}, {"model", j["model"]}, {"training", j["training"]},
                     {"master_seed", config_.master_seed}};
    return k.dump();
  }

  void load_data() {
    if (data_loaded_) return;
    const DatasetConfig& d = config_.dataset;
    if (d.kind == DatasetKind::Synthetic) {
      SynthOptions o;
      o.num_classes = d.num_classes;
      o.image_side = d.image_side;
      o.noise_sigma = d.noise_sigma;
      o.distractor_amplitude = d.distractor_amplitude;
      o.samples_per_class = d.train_per_class;
      o.seed = derive_seed(config_.master_seed, "data/train");
      train_ = synth_dataset(o);
      o.samples_per_class = d.test_per_class;
      o.seed = derive_seed(config_.master_seed, "data/test");
      test_ = synth_dataset(o);
    } else {
      train_ = ingest_cifar(d.train_path);
      test_ = ingest_cifar(d.test_path);
      auto limit = [](LabeledImageSet& s, std::size_t n) {
        if (n == 0 || s.size() <= n) return;
        s.images.resize(n);
        s.labels.resize(n);
      };
      limit(train_, d.train_limit);
      limit(test_, d.test_limit);
      for (std::size_t l : train_.labels)
        if (l >= d.num_classes) throw ConfigError("CIFAR label " + std::to_string(l) + " >= num_classes");
    }
    data_loaded_ = true;
  }

  using Extractor = std::function<std::vector<double>(const Tensor&)>;

  PairFeatures extract_all(const PairedDataset& p, const Extractor& f, FeatureSetDescriptor d) {
    PairFeatures out;
    out.descriptor = std::move(d);
    for (std::size_t i = 0; i < p.size(); ++i) {
      out.benign.append_row(f(p.benign[i]));
      out.adversarial.append_row(f(p.adversarial[i]));
    }
    return out;
  }

  PairFeatures compute_features(const AttackConfig& a, const FeatureRequest& req) {
    const PairedDataset& p = pairs(a);
    if (p.size() == 0) throw std::runtime_error("no successful " + p.attack + " pairs to extract features from");
    const ModelParams& params = model();
    const std::string& det = req.detector;
    if (det == "InputMFS" || det == "InputPFS" || det == "LayerMFS" || det == "LayerPFS") {
      const SpectrumMode mode = det.ends_with("MFS") ? SpectrumMode::MFS : SpectrumMode::PFS;
      const bool input = det.starts_with("Input");
      if (req.band && !input) throw std::invalid_argument("band masking applies to input features only");
      std::vector<std::size_t> ords = req.ordinals.value_or(config_.layer_ordinals);
      auto fv = [&](const Tensor& x) {
        FeatureVector v = input ? extract_input_features(x, mode) : extract_layer_features(params, x, ords, mode);
        return req.band ? apply_band(v, *req.band) : v;
      };
      FeatureSetDescriptor d;
      d.kind = FeatureKind::Spectral;
      d.spectral = fv(p.benign[0]).descriptor;
      return extract_all(p, [&](const Tensor& x) { return fv(x).values; }, d);
    }
    if (det == "LID") return lid_features(a, p);
    if (det == "M-D") {
      const MahalanobisStats& st = mahalanobis_stats();
      const auto it = config_.mahalanobis_noise.find(p.attack);
      const double noise = it == config_.mahalanobis_noise.end() ? 0.0 : it->second;
      FeatureSetDescriptor d;
      d.kind = FeatureKind::Mahalanobis;
      d.noise_magnitude = noise;
      return extract_all(p, [&](const Tensor& x) { return mahalanobis_scores(params, st, x, noise); }, d);
    }
    throw std::invalid_argument("unknown detector '" + det + "'");
  }

  // Per-layer LID against random batches of the benign training-split pool
  // (channel means of every ReLU output).
  PairFeatures lid_features(const AttackConfig& a, const PairedDataset& p) {
    const ModelParams& params = model();
    const std::vector<std::size_t> ords = all_ordinals();
    std::vector<std::vector<std::vector<double>>> ben(p.size()), adv(p.size());
    auto pooled = [&](const Tensor& x) {
      std::vector<std::vector<double>> out;
      for (const Tensor& m : feature_maps(params, x, ords)) out.push_back(channel_means(m));
      return out;
    };
    for (std::size_t i = 0; i < p.size(); ++i) {
      ben[i] = pooled(p.benign[i]);
      adv[i] = pooled(p.adversarial[i]);
    }
    const PairSplit s = split(a);
    std::vector<FeatureMatrix> pool(ords.size());
    for (std::size_t i : s.train)
      for (std::size_t l = 0; l < ords.size(); ++l) pool[l].append_row(ben[i][l]);
    const std::uint64_t seed = cell_seed("lid/" + attack_key(seeded(a)));
    PairFeatures out;
    out.descriptor.kind = FeatureKind::LID;
    for (std::size_t i = 0; i < p.size(); ++i) {
      // Benign and adversarial members of a pair share reference batches.
      const std::uint64_t si = splitmix64(seed ^ static_cast<std::uint64_t>(i));
      out.benign.append_row(lid_scores(ben[i], pool, config_.lid, si));
      out.adversarial.append_row(lid_scores(adv[i], pool, config_.lid, si));
    }
    return out;
  }

  ExperimentConfig config_;
  std::optional<std::filesystem::path> cache_dir_;
  std::string config_hash_;
  bool data_loaded_ = false;
  LabeledImageSet train_, test_;
  std::optional<ModelParams> model_;
  std::string model_hash_;
  TrainLog train_log_;
  std::map<std::string, CachedPairs> pairs_;
  std::map<std::string, PairFeatures> features_;
  std::optional<MahalanobisStats> md_stats_;
};

namespace detail {

inline LabeledFeatureSet gather(const PairFeatures& f, std::span<const std::size_t> idx, const std::string& attack) {
  LabeledFeatureSet s;
  s.descriptor = f.descriptor;
  s.attack = attack;
  for (std::size_t i : idx) {
    s.features.append_row(f.benign.row(i));
    s.labels.push_back(0);
    s.features.append_row(f.adversarial.row(i));
    s.labels.push_back(1);
  }
  return s;
}

inline std::string fmt(double v) { return format_double(v); }

inline EvalReport failed_cell(std::map<std::string, std::string> prov, const std::string& error) {
  EvalReport r;
  prov["status"] = "failed";
  prov["error"] = error;
  for (const auto& k : required_provenance())
    if (!prov.contains(k)) prov[k] = "unavailable";
  r.provenance = std::move(prov);
  return r;
}

// Runs one cell, converting any exception into a failed record.
template <class F>
void run_cell(RunResult& out, std::map<std::string, std::string> prov, F&& body) {
  try {
    EvalReport r = body(prov);
    prov["status"] = "ok";
    r.provenance = std::move(prov);
    out.reports.push_back(std::move(r));
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out.reports.push_back(failed_cell(std::move(prov), msg));
    ++out.failed_cells;
  }
}

}  // namespace detail

// Trains a logistic-regression detector on the training split of `train_attack`
// and evaluates it on the test split of `eval_attack`.
inline EvalReport evaluate_detector(Experiment& ex, const AttackConfig& train_attack, const AttackConfig& eval_attack,
                                    const FeatureRequest& req, std::map<std::string, std::string>& prov) {
  const PairFeatures& ftrain = ex.features(train_attack, req);
  const PairFeatures& feval = ex.features(eval_attack, req);
  const PairSplit strain = ex.split(train_attack);
  const PairSplit seval = ex.split(eval_attack);
  const LabeledFeatureSet tr = detail::gather(ftrain, strain.train, to_string(train_attack.method));
  const LabeledFeatureSet te = detail::gather(feval, seval.test, to_string(eval_attack.method));
  const LogRegModel m = train_logreg(tr, ex.config().logreg);
  const std::vector<double> scores = predict_scores(m, te);
  EvalReport r = compute_metrics(scores, te.labels);
  prov["feature"] = ftrain.descriptor.name();
  prov["feature_dim"] = std::to_string(tr.features.cols());
  prov["classifier"] = "LR";
  prov["lr_iterations"] = std::to_string(m.iterations);
  prov["lr_converged"] = m.converged ? "1" : "0";
  prov["train_pairs"] = std::to_string(strain.train.size());
  prov["test_pairs"] = std::to_string(seval.test.size());
  prov["split_seed"] = std::to_string(ex.split_seed(eval_attack));
  return r;
}

namespace detail {

inline void add_attack_provenance(Experiment& ex, const AttackConfig& a, std::map<std::string, std::string>& prov,
                                  const std::string& prefix = "") {
  const AttackConfig s = ex.seeded(a);
  prov[prefix + "attack"] = to_string(a.method);
  prov[prefix + "attack_config"] = attack_key(s);
  if (a.epsilon) prov[prefix + "epsilon"] = fmt(*a.epsilon);
  const PairedDataset& p = ex.pairs(a);
  prov[prefix + "pairs"] = std::to_string(p.size());
  prov[prefix + "attempts"] = std::to_string(p.attempts);
  if (p.aborted) prov[prefix + "aborted"] = std::to_string(p.aborted);
  if (auto sr = p.success_rate()) prov[prefix + "success_rate"] = fmt(*sr);
  prov[prefix + "input_hash"] = ex.pairs_hash(a);
}

}  // namespace detail

inline RunResult run_detection_experiment(Experiment& ex) {
  RunResult out;
  const auto base = ex.base_provenance("detection");
  for (const AttackConfig& a : ex.config().attacks) {
    for (const std::string& det : ex.config().detectors) {
      auto prov = base;
      prov["detector"] = det;
      prov["cell_seed"] = std::to_string(ex.cell_seed("detect/" + std::string(to_string(a.method)) + "/" + det));
      if (det.starts_with("Layer")) {
        std::string o;
        for (std::size_t v : ex.config().layer_ordinals) o += (o.empty() ? "" : ",") + std::to_string(v);
        prov["layers"] = o;
      }
      detail::run_cell(out, prov, [&](auto& p) {
        detail::add_attack_provenance(ex, a, p);
        p["input_hash"] = ex.pairs_hash(a);
        return evaluate_detector(ex, a, a, FeatureRequest{det, {}, {}}, p);
      });
    }
  }
  return out;
}

// LR versus k-NN and Gaussian naive Bayes on InputMFS features (accuracy at
// the usual 0.5 threshold; the comparators produce hard labels, so their AUC
// is that of a two-level score).
inline RunResult run_classifier_comparison(Experiment& ex, std::size_t knn_k = 5) {
  RunResult out;
  const auto base = ex.base_provenance("classifiers");
  for (const AttackConfig& a : ex.config().attacks) {
    for (const char* clf : {"LR", "KNN", "GNB"}) {
      auto prov = base;
      prov["detector"] = "InputMFS";
      prov["classifier"] = clf;
      prov["cell_seed"] = std::to_string(ex.cell_seed("classifiers/" + std::string(to_string(a.method))));
      detail::run_cell(out, prov, [&](auto& p) {
        detail::add_attack_provenance(ex, a, p);
        const FeatureRequest req{"InputMFS", {}, {}};
        if (std::string(clf) == "LR") return evaluate_detector(ex, a, a, req, p);
        const PairFeatures& f = ex.features(a, req);
        const PairSplit s = ex.split(a);
        const LabeledFeatureSet tr = detail::gather(f, s.train, p["attack"]);
        const LabeledFeatureSet te = detail::gather(f, s.test, p["attack"]);
        std::vector<double> scores(te.size());
        if (std::string(clf) == "KNN") {
          p["knn_k"] = std::to_string(knn_k);
          for (std::size_t i = 0; i < te.size(); ++i) scores[i] = knn_classify(tr, te.features.row(i), knn_k);
        } else {
          const GaussianNB nb = fit_gnb(tr);
          for (std::size_t i = 0; i < te.size(); ++i) scores[i] = gnb_classify(nb, te.features.row(i));
        }
        p["feature"] = f.descriptor.name();
        p["feature_dim"] = std::to_string(tr.features.cols());
        p["train_pairs"] = std::to_string(s.train.size());
        p["test_pairs"] = std::to_string(s.test.size());
        return compute_metrics(scores, te.labels);
      });
    }
  }
  return out;
}

inline RunResult run_band_ablation(Experiment& ex) {
  RunResult out;
  const auto base = ex.base_provenance("band_ablation");
  const AttackConfig& a = ex.config().attack(ex.config().band_attack);
  const auto& edges = ex.config().band_edges;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    for (std::size_t j = i + 1; j < edges.size(); ++j) {
      const FrequencyBand band{edges[i], edges[j]};
      auto prov = base;
      prov["detector"] = "InputMFS";
      prov["band_lo"] = std::to_string(band.lo);
      prov["band_hi"] = std::to_string(band.hi);
      prov["cell_seed"] = std::to_string(ex.cell_seed("bands/" + std::to_string(band.lo) + "-" + std::to_string(band.hi)));
      detail::run_cell(out, prov, [&](auto& p) {
        detail::add_attack_provenance(ex, a, p);
        return evaluate_detector(ex, a, a, FeatureRequest{"InputMFS", band, {}}, p);
      });
    }
  }
  return out;
}

inline RunResult run_layer_ablation(Experiment& ex) {
  RunResult out;
  const auto base = ex.base_provenance("layer_ablation");
  const AttackConfig& a = ex.config().attack(ex.config().layer_attack);
  for (const auto& group : ex.config().layer_groups) {
    for (const char* det : {"LayerMFS", "LayerPFS"}) {
      std::string o;
      for (std::size_t v : group) o += (o.empty() ? "" : ",") + std::to_string(v);
      auto prov = base;
      prov["detector"] = det;
      prov["layers"] = o;
      prov["cell_seed"] = std::to_string(ex.cell_seed("layers/" + o + "/" + det));
      detail::run_cell(out, prov, [&](auto& p) {
        detail::add_attack_provenance(ex, a, p);
        p["group_dim"] = std::to_string(layer_feature_dimension(ex.model(), group));
        return evaluate_detector(ex, a, a, FeatureRequest{det, {}, group}, p);
      });
    }
  }
  return out;
}

// Attack at a different budget; the step size keeps its ratio to epsilon.
inline AttackConfig with_epsilon(const AttackConfig& a, double eps) {
  if (!uses_epsilon(a.method)) throw std::invalid_argument(std::string(to_string(a.method)) + " has no epsilon");
  if (!(eps > 0.0 && eps <= 1.0)) throw std::invalid_argument("epsilon must lie in (0,1]");
  AttackConfig c = a;
  c.alpha = a.alpha / *a.epsilon * eps;
  c.epsilon = eps;
  return c;
}

inline RunResult run_epsilon_sweep(Experiment& ex) {
  RunResult out;
  const auto base = ex.base_provenance("epsilon_sweep");
  for (const std::string& name : ex.config().sweep_attacks) {
    for (double eps : ex.config().epsilon_grid) {
      auto prov = base;
      prov["detector"] = "InputMFS";
      prov["cell_seed"] = std::to_string(ex.cell_seed("sweep/" + name + "/" + format_double(eps)));
      detail::run_cell(out, prov, [&](auto& p) {
        const AttackConfig a = with_epsilon(ex.config().attack(name), eps);
        detail::add_attack_provenance(ex, a, p);
        return evaluate_detector(ex, a, a, FeatureRequest{"InputMFS", {}, {}}, p);
      });
    }
  }
  return out;
}

inline std::string attack_group(const std::string& attack) {
  return attack == "DeepFool" || attack == "CW" ? "minimal" : "bounded";
}

inline RunResult run_transfer(Experiment& ex) {
  RunResult out;
  const auto base = ex.base_provenance("transfer");
  const auto& names = ex.config().transfer_attacks;
  for (const std::string& det : ex.config().transfer_detectors) {
    for (const std::string& from : names) {
      for (const std::string& to : names) {
        auto prov = base;
        prov["detector"] = det;
        prov["train_attack"] = from;
        prov["eval_attack"] = to;
        prov["same_group"] = attack_group(from) == attack_group(to) ? "1" : "0";
        prov["cell_seed"] = std::to_string(ex.cell_seed("transfer/" + det + "/" + from + "/" + to));
        detail::run_cell(out, prov, [&](auto& p) {
          const AttackConfig& a = ex.config().attack(from);
          const AttackConfig& b = ex.config().attack(to);
          detail::add_attack_provenance(ex, b, p);
          p["train_input_hash"] = ex.pairs_hash(a);
          return evaluate_detector(ex, a, b, FeatureRequest{det, {}, {}}, p);
        });
      }
    }
  }
  return out;
}

// Model training summary: accuracy holds test accuracy.
inline EvalReport training_record(Experiment& ex) {
  EvalReport r;
  const ModelParams& m = ex.model();
  r.accuracy = accuracy(m, ex.test_set());
  r.provenance = ex.base_provenance("train_model");
  r.provenance["cell_seed"] = std::to_string(ex.config().model_config().seed);
  r.provenance["input_hash"] = ex.model_hash();
  r.provenance["train_accuracy"] = format_double(accuracy(m, ex.train_set()));
  r.provenance["parameters"] = std::to_string(m.values.size());
  r.provenance["status"] = "ok";
  for (std::size_t e = 0; e < ex.train_log().epoch_loss.size(); ++e)
    r.provenance["epoch_loss." + std::to_string(e)] = format_double(ex.train_log().epoch_loss[e]);
  return r;
}

// One record per configured attack: success rate and perturbation sizes.
inline RunResult run_attacks(Experiment& ex) {
  RunResult out;
  const auto base = ex.base_provenance("attack");
  for (const AttackConfig& a : ex.config().attacks) {
    auto prov = base;
    prov["cell_seed"] = std::to_string(ex.seeded(a).seed);
    detail::run_cell(out, prov, [&](auto& p) {
      detail::add_attack_provenance(ex, a, p);
      const PairedDataset& pairs = ex.pairs(a);
      double l2 = 0.0, linf = 0.0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        l2 += l2_distance(pairs.adversarial[i], pairs.benign[i]);
        linf = std::max(linf, max_abs_diff(pairs.adversarial[i], pairs.benign[i]));
      }
      if (pairs.size()) p["mean_l2"] = detail::fmt(l2 / static_cast<double>(pairs.size()));
      p["max_linf"] = detail::fmt(linf);
      EvalReport r;
      r.accuracy = pairs.success_rate().value_or(0.0);
      return r;
    });
  }
  return out;
}

}  // namespace sdefense
