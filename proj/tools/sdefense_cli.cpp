// Command-line front end. Every subcommand shares --seed, --config and --out;
// intermediate artifacts (model checkpoint, paired datasets) are cached under
// <out>/cache so later subcommands reuse earlier work.
//
// Exit codes: 0 success, 1 configuration error, 2 one or more failed cells.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdefense/experiment.hpp"
#include "sdefense/feature_io.hpp"

namespace fs = std::filesystem;
using namespace sdefense;

namespace {

struct CommonArgs {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = "sdefense-out";
};

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig c = args.config.empty() ? parse_experiment_config(nlohmann::json::object())
                                           : load_experiment_config(args.config);
  if (args.seed) c.master_seed = *args.seed;
  return c;
}

int finish(const RunResult& r, const fs::path& path) {
  write_report(r.reports, path);
  std::cout << "wrote " << r.reports.size() << " records to " << path.string();
  if (r.failed_cells) std::cout << " (" << r.failed_cells << " failed)";
  std::cout << "\n";
  return r.failed_cells ? 2 : 0;
}

std::string auc_text(const EvalReport& r) {
  if (!r.auc) return "   n/a";
  char b[16];
  std::snprintf(b, sizeof b, "%6.3f", *r.auc);
  return b;
}

std::string get(const EvalReport& r, const std::string& key) {
  const auto it = r.provenance.find(key);
  return it == r.provenance.end() ? "" : it->second;
}

void print_summary(const fs::path& file, const std::vector<EvalReport>& reports, std::ostream& os) {
  os << "== " << file.filename().string() << "\n";
  for (const EvalReport& r : reports) {
    const std::string exp = get(r, "experiment");
    os << "  " << exp;
    for (const char* k : {"attack", "train_attack", "eval_attack", "epsilon", "detector", "classifier", "layers"})
      if (const std::string v = get(r, k); !v.empty()) os << " " << k << "=" << v;
    if (const std::string lo = get(r, "band_lo"); !lo.empty()) os << " band=(" << lo << "," << get(r, "band_hi") << ")";
    if (exp == "train_model") {
      os << " test_accuracy=" << r.accuracy;
    } else if (exp == "attack") {
      os << " success_rate=" << r.accuracy << " mean_l2=" << get(r, "mean_l2");
    } else {
      os << " auc=" << auc_text(r) << " acc=" << r.accuracy;
      if (const std::string s = get(r, "success_rate"); !s.empty() && exp == "epsilon_sweep")
        os << " success_rate=" << s;
    }
    if (get(r, "status") == "failed") os << " FAILED: " << get(r, "error");
    os << "\n";
  }
}

// Writes benign/adversarial SDF1 matrices for every (attack, detector) cell.
RunResult run_extract(Experiment& ex, const fs::path& dir) {
  fs::create_directories(dir);
  RunResult out;
  const auto base = ex.base_provenance("extract");
  for (const AttackConfig& a : ex.config().attacks) {
    for (const std::string& det : ex.config().detectors) {
      auto prov = base;
      prov["detector"] = det;
      prov["attack"] = to_string(a.method);
      prov["cell_seed"] = std::to_string(ex.cell_seed("extract/" + std::string(to_string(a.method)) + "/" + det));
      detail::run_cell(out, prov, [&](auto& p) {
        p["input_hash"] = ex.pairs_hash(a);
        const PairFeatures& f = ex.features(a, FeatureRequest{det, {}, {}});
        const FeatureModeTag tag = mode_tag(f.descriptor);
        const std::string stem = std::string(to_string(a.method)) + "_" + det;
        for (const auto& [suffix, m] : {std::pair{"benign", &f.benign}, std::pair{"adversarial", &f.adversarial}}) {
          const fs::path file = dir / (stem + "_" + suffix + ".sdf1");
          const std::string bytes = encode_features(*m, tag);
          write_file(file, bytes);
          p[std::string(suffix) + "_file"] = file.filename().string();
          p[std::string(suffix) + "_hash"] = git_blob_hash(bytes);
        }
        p["feature"] = f.descriptor.name();
        p["rows"] = std::to_string(f.benign.rows());
        p["cols"] = std::to_string(f.benign.cols());
        return EvalReport{};
      });
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral adversarial-example detection experiments"};
  app.require_subcommand(1);
  CommonArgs args;
  bool compare_classifiers = false;
  std::vector<std::string> report_inputs;

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--seed", args.seed, "Master seed (overrides the config)");
    sub->add_option("--config", args.config, "Experiment config (JSON); built-in defaults when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "Output directory")->capture_default_str();
    return sub;
  };
  add("train-model", "Train the classifier and write its checkpoint");
  add("attack", "Build paired benign/adversarial datasets for every configured attack");
  add("extract", "Write per-detector feature matrices (SDF1)");
  add("detect", "Detection grid: attacks x detectors")
      ->add_flag("--compare-classifiers", compare_classifiers, "Also compare LR, KNN and GNB on InputMFS");
  add("ablate-bands", "InputMFS detection per frequency band");
  add("ablate-layers", "LayerMFS/LayerPFS detection per activation group");
  add("sweep-epsilon", "Success rate and InputMFS detection over the epsilon grid");
  add("transfer", "Train on one attack, evaluate on another");
  add("report", "Summarize report files")
      ->add_option("inputs", report_inputs, "Report files (default: every *.report in --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  const fs::path out(args.out);

  try {
    const ExperimentConfig config = load_config(args);
    fs::create_directories(out);

    if (cmd == "report") {
      std::vector<fs::path> files(report_inputs.begin(), report_inputs.end());
      if (files.empty()) {
        for (const auto& e : fs::directory_iterator(out))
          if (e.path().extension() == ".report") files.push_back(e.path());
        std::sort(files.begin(), files.end());
      }
      if (files.empty()) throw ConfigError("no report files found in " + out.string());
      std::size_t failed = 0;
      for (const auto& f : files) {
        const auto reports = read_report(f);
        for (const auto& r : reports) failed += get(r, "status") == "failed";
        print_summary(f, reports, std::cout);
      }
      return failed ? 2 : 0;
    }

    Experiment ex(config, out / "cache");
    if (cmd == "train-model") {
      RunResult r;
      r.reports.push_back(training_record(ex));
      fs::copy_file(out / "cache" / "model.sdck", out / "model.sdck", fs::copy_options::overwrite_existing);
      std::cout << "test accuracy " << r.reports[0].accuracy << ", checkpoint " << (out / "model.sdck").string()
                << "\n";
      return finish(r, out / "train_model.report");
    }
    if (cmd == "attack") return finish(run_attacks(ex), out / "attack.report");
    if (cmd == "extract") return finish(run_extract(ex, out / "features"), out / "extract.report");
    if (cmd == "detect") {
      const int code = finish(run_detection_experiment(ex), out / "detect.report");
      if (!compare_classifiers) return code;
      return std::max(code, finish(run_classifier_comparison(ex), out / "classifiers.report"));
    }
    if (cmd == "ablate-bands") return finish(run_band_ablation(ex), out / "ablate_bands.report");
    if (cmd == "ablate-layers") return finish(run_layer_ablation(ex), out / "ablate_layers.report");
    if (cmd == "sweep-epsilon") return finish(run_epsilon_sweep(ex), out / "sweep_epsilon.report");
    if (cmd == "transfer") return finish(run_transfer(ex), out / "transfer.report");
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
