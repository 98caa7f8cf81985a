#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "sdefense/experiment.hpp"

using namespace sdefense;
using nlohmann::json;

namespace {

json tiny_json() {
  return json{{"dataset", {{"num_classes", 3}, {"train_per_class", 40}, {"test_per_class", 25}, {"image_side", 16}}},
              {"model", {{"conv_blocks", {{4, 1}, {6, 1}}}, {"hidden_units", 8}}},
              {"training", {{"epochs", 3}, {"lr", 0.02}}},
              {"epsilon", 0.08},
              {"attacks", {"FGSM", "BIM", {{"method", "DeepFool"}, {"iterations", 20}}}},
              {"layer_ordinals", {1, 2}},
              {"layer_groups", {{0}, {1, 2}, {3}}},
              {"band_edges", {0, 4, 8, 12, 16}},
              {"epsilon_grid", {0.04, 0.08}},
              {"sweep_attacks", {"FGSM"}},
              {"transfer_attacks", {"FGSM", "BIM"}},
              {"transfer_detectors", {"InputMFS"}},
              {"lid", {{"batch_size", 10}, {"k_neighbors", 4}, {"batches", 2}}},
              {"master_seed", 5}};
}

ExperimentConfig tiny() { return parse_experiment_config(tiny_json()); }

const EvalReport* find(const RunResult& r, const std::map<std::string, std::string>& match) {
  for (const auto& rep : r.reports) {
    bool ok = true;
    for (const auto& [k, v] : match) ok = ok && rep.provenance.contains(k) && rep.provenance.at(k) == v;
    if (ok) return &rep;
  }
  return nullptr;
}

// One experiment shared by the tests below; training it once keeps the suite fast.
Experiment& shared() {
  static Experiment ex(tiny());
  return ex;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  EXPECT_NO_THROW(parse_experiment_config(json::object()));
  const ExperimentConfig c = parse_experiment_config(json::object());
  EXPECT_EQ(c.attacks.size(), 5u);
  EXPECT_EQ(c.layer_ordinals, (std::vector<std::size_t>{3, 5, 7}));
}

TEST(Config, ErrorsAreConfigErrors) {
  auto bad = [](json patch) {
    json j = tiny_json();
    j.merge_patch(patch);
    return j;
  };
  EXPECT_THROW(parse_experiment_config(bad({{"typo", 1}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"epsilon_grid", {0.0, 0.1}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"epsilon", 0.0}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"layer_ordinals", {9}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"band_edges", {0, 8, 4}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"band_edges", {0, 32}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"attacks", {"FGSM", "FGSM"}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"attacks", {"Nope"}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"attacks", {{{"method", "DeepFool"}, {"epsilon", 0.1}}}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"transfer_detectors", {"LID"}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"detectors", {"Magic"}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"split_fraction", 1.0}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"dataset", {{"image_side", 12}}}})), ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"dataset", {{"kind", "cifar10"}, {"train_path", "/nonexistent"}}}})),
               ConfigError);
  EXPECT_THROW(parse_experiment_config(bad({{"training", {{"epochs", "three"}}}})), ConfigError);
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, CanonicalJsonRoundTrips) {
  const ExperimentConfig c = tiny();
  const json j = to_json(c);
  EXPECT_EQ(to_json(parse_experiment_config(j)), j);
}

TEST(Split, IsPairAtomicAndSeeded) {
  const PairSplit s = split_pairs(25, 0.8, 3);
  EXPECT_EQ(s.train.size(), 20u);
  EXPECT_EQ(s.test.size(), 5u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (std::size_t i : s.test) EXPECT_TRUE(all.insert(i).second) << "pair " << i << " on both sides";
  EXPECT_EQ(all.size(), 25u);
  EXPECT_EQ(split_pairs(25, 0.8, 3).train, s.train);
  EXPECT_NE(split_pairs(25, 0.8, 4).train, s.train);
  EXPECT_THROW(split_pairs(3, 0.8, 1), std::runtime_error);

  // Gathered sets keep both members of each pair on the same side.
  PairFeatures f;
  for (std::size_t i = 0; i < 25; ++i) {
    f.benign.append_row(std::vector<double>{static_cast<double>(i)});
    f.adversarial.append_row(std::vector<double>{static_cast<double>(i) + 0.5});
  }
  const LabeledFeatureSet tr = detail::gather(f, s.train, "X");
  ASSERT_EQ(tr.size(), 40u);
  for (std::size_t r = 0; r < tr.size(); r += 2) {
    EXPECT_EQ(tr.labels[r], 0);
    EXPECT_EQ(tr.labels[r + 1], 1);
    EXPECT_EQ(tr.features.row(r + 1)[0], tr.features.row(r)[0] + 0.5);
  }
}

TEST(Pipeline, PairsSatisfyInvariants) {
  Experiment& ex = shared();
  for (const auto& a : ex.config().attacks) {
    const PairedDataset& p = ex.pairs(a);
    EXPECT_GT(p.size(), 4u) << p.attack;
    EXPECT_FALSE(check_pairs(ex.model(), p).has_value()) << *check_pairs(ex.model(), p);
    if (a.epsilon)
      for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LE(max_abs_diff(p.adversarial[i], p.benign[i]), *a.epsilon + 1e-9);
  }
}

TEST(Pipeline, DetectionProducesEveryCell) {
  Experiment& ex = shared();
  const RunResult r = run_detection_experiment(ex);
  EXPECT_EQ(r.reports.size(), 3u * 6u);
  EXPECT_EQ(r.failed_cells, 0u);
  for (const auto& rep : r.reports) {
    for (const auto& k : required_provenance()) EXPECT_TRUE(rep.provenance.contains(k)) << k;
    EXPECT_EQ(rep.provenance.at("status"), "ok") << rep.provenance.at("error");
    ASSERT_TRUE(rep.auc.has_value());
    EXPECT_GE(*rep.auc, 0.0);
    EXPECT_LE(*rep.auc, 1.0);
  }
  EXPECT_NO_THROW(decode_report(encode_report(r.reports, std::nullopt)));
}

TEST(Pipeline, FullBandEqualsUnmaskedInput) {
  Experiment& ex = shared();
  const AttackConfig& a = ex.config().attack("BIM");
  std::map<std::string, std::string> p1, p2;
  const EvalReport full = evaluate_detector(ex, a, a, FeatureRequest{"InputMFS", FrequencyBand{0, 16}, {}}, p1);
  const EvalReport plain = evaluate_detector(ex, a, a, FeatureRequest{"InputMFS", {}, {}}, p2);
  EXPECT_EQ(full.auc, plain.auc);
  EXPECT_EQ(full.counts, plain.counts);
  EXPECT_EQ(ex.features(a, {"InputMFS", FrequencyBand{0, 16}, {}}).benign,
            ex.features(a, {"InputMFS", {}, {}}).benign);
}

TEST(Pipeline, LayerGroupZeroEqualsInputFeatures) {
  Experiment& ex = shared();
  const AttackConfig& a = ex.config().attack("BIM");
  const std::vector<std::size_t> zero{0};
  for (const char* mode : {"MFS", "PFS"}) {
    const auto& layer = ex.features(a, {std::string("Layer") + mode, {}, zero});
    const auto& input = ex.features(a, {std::string("Input") + mode, {}, {}});
    EXPECT_EQ(layer.benign, input.benign);
    EXPECT_EQ(layer.adversarial, input.adversarial);
  }
}

TEST(Pipeline, AblationsCoverTheirGrids) {
  Experiment& ex = shared();
  const RunResult bands = run_band_ablation(ex);
  EXPECT_EQ(bands.reports.size(), 10u);  // C(5, 2) bands from five edges
  EXPECT_NE(find(bands, {{"band_lo", "4"}, {"band_hi", "12"}}), nullptr);
  const RunResult layers = run_layer_ablation(ex);
  EXPECT_EQ(layers.reports.size(), 3u * 2u);
  const EvalReport* g0 = find(layers, {{"layers", "0"}, {"detector", "LayerMFS"}});
  ASSERT_NE(g0, nullptr);
  EXPECT_EQ(g0->provenance.at("group_dim"), "768");
  EXPECT_EQ(bands.failed_cells + layers.failed_cells, 0u);
}

TEST(Pipeline, TransferDiagonalMatchesDetection) {
  Experiment& ex = shared();
  const RunResult t = run_transfer(ex);
  EXPECT_EQ(t.reports.size(), 4u);
  const RunResult d = run_detection_experiment(ex);
  for (const char* atk : {"FGSM", "BIM"}) {
    const EvalReport* diag = find(t, {{"train_attack", atk}, {"eval_attack", atk}});
    const EvalReport* det = find(d, {{"attack", atk}, {"detector", "InputMFS"}});
    ASSERT_TRUE(diag && det);
    EXPECT_EQ(diag->auc, det->auc);
    EXPECT_EQ(diag->counts, det->counts);
  }
  EXPECT_EQ(find(t, {{"train_attack", "FGSM"}, {"eval_attack", "BIM"}})->provenance.at("same_group"), "1");
}

TEST(Pipeline, EpsilonSweepIsMonotoneInSuccess) {
  Experiment& ex = shared();
  const RunResult s = run_epsilon_sweep(ex);
  ASSERT_EQ(s.reports.size(), 2u);
  const double lo = std::stod(s.reports[0].provenance.at("success_rate"));
  const double hi = std::stod(s.reports[1].provenance.at("success_rate"));
  EXPECT_LE(lo, hi);
}

TEST(Pipeline, NullLabelsGiveChanceAuc) {
  // Benign rows only, labels assigned by a coin flip: nothing to learn.
  Experiment& ex = shared();
  const PairFeatures& f = ex.features(ex.config().attack("FGSM"), {"InputMFS", {}, {}});
  Rng rng(99);
  LabeledFeatureSet tr, te;
  for (std::size_t i = 0; i < f.benign.rows(); ++i) {
    LabeledFeatureSet& s = i % 4 == 0 ? te : tr;
    s.features.append_row(f.benign.row(i));
    s.labels.push_back(static_cast<int>(rng.below(2)));
  }
  for (std::size_t i = 0; i < f.adversarial.rows(); ++i) {
    LabeledFeatureSet& s = i % 4 == 0 ? te : tr;
    s.features.append_row(f.adversarial.row(i));
    s.labels.push_back(static_cast<int>(rng.below(2)));
  }
  const LogRegModel m = train_logreg(tr);
  const auto auc = compute_metrics(predict_scores(m, te), te.labels).auc;
  ASSERT_TRUE(auc.has_value());
  EXPECT_GT(*auc, 0.2);
  EXPECT_LT(*auc, 0.8);
}

TEST(Pipeline, DetectorRejectsFeaturesOfAnotherKind) {
  Experiment& ex = shared();
  const AttackConfig& a = ex.config().attack("FGSM");
  const auto& mfs = ex.features(a, {"InputMFS", {}, {}});
  const auto& pfs = ex.features(a, {"InputPFS", {}, {}});
  const PairSplit s = ex.split(a);
  const LogRegModel m = train_logreg(detail::gather(mfs, s.train, "FGSM"));
  EXPECT_THROW(predict_scores(m, detail::gather(pfs, s.test, "FGSM")), std::invalid_argument);
}

TEST(Pipeline, FailedCellsAreRecordedNotThrown) {
  json j = tiny_json();
  j["attacks"] = {{{"method", "FGSM"}, {"epsilon", 1e-7}}};
  j["detectors"] = {"InputMFS"};
  Experiment ex(parse_experiment_config(j));
  const RunResult r = run_detection_experiment(ex);
  ASSERT_EQ(r.reports.size(), 1u);
  EXPECT_EQ(r.failed_cells, 1u);
  EXPECT_EQ(r.reports[0].provenance.at("status"), "failed");
  EXPECT_FALSE(r.reports[0].auc.has_value());
  EXPECT_NO_THROW(encode_report(r.reports, std::nullopt));
}

TEST(Pipeline, SameSeedSameReports) {
  const auto cache = std::filesystem::temp_directory_path() / "sdefense_test_pipeline_cache";
  std::filesystem::remove_all(cache);
  json j = tiny_json();
  j["detectors"] = {"InputMFS", "LayerPFS", "LID", "M-D"};
  const ExperimentConfig c = parse_experiment_config(j);
  Experiment fresh(c), cached(c, cache), reloaded(c, cache);
  const auto a = run_detection_experiment(fresh).reports;
  const auto b = run_detection_experiment(cached).reports;
  const auto d = run_detection_experiment(reloaded).reports;  // model and pairs read back from disk
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, d);
  EXPECT_EQ(encode_report(a, std::nullopt), encode_report(d, std::nullopt));
  std::filesystem::remove_all(cache);
}
