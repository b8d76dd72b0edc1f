// Command-line front end: run, sweep, gradcheck, synth.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvs/config.hpp"
#include "cvs/errors.hpp"
#include "cvs/gradcheck.hpp"
#include "cvs/runner.hpp"

namespace {

using nlohmann::json;

int error_record(const std::string& kind, const std::string& code, const std::string& message, int status) {
  std::cerr << json{{"error", code}, {"kind", kind}, {"message", message}}.dump() << '\n';
  return status;
}

cvs::RunConfig load_config(const std::string& path) {
  if (path.empty()) return cvs::RunConfig{};
  return cvs::load_run_config(path);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(part, &used));
      cvs::require(used == part.size(), "invalid_arguments", "bad seed '" + part + "'");
    } catch (const std::logic_error&) {
      throw cvs::ContractError("invalid_arguments", "bad seed '" + part + "'");
    }
  }
  cvs::require(!seeds.empty(), "invalid_arguments", "at least one seed is required");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual metric learning with backward-consistent embeddings"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "train every session of one configuration");
  run->add_option("--config", config_path, "JSON run configuration");
  run->add_option("--seed", seed, "run seed (overrides the config)");
  run->add_option("--out", out_dir, "output directory (overrides the config)");

  std::string sweep_config, sweep_out = "sweep", seed_list = "0,1,2,3,4";
  auto* sweep = app.add_subcommand("sweep", "loss ablation matrix over several seeds");
  sweep->add_option("--config", sweep_config, "JSON base configuration");
  sweep->add_option("--seeds", seed_list, "comma-separated seeds");
  sweep->add_option("--out", sweep_out, "output directory");

  cvs::GradCheckConfig gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss term");
  gradcheck->add_option("--instances", gc.instances, "random instances");
  gradcheck->add_option("--seed", gc.seed, "suite seed");
  gradcheck->add_option("--alpha", gc.alpha, "weight of l_m");
  gradcheck->add_option("--beta", gc.beta, "weight of l_d");
  gradcheck->add_option("--step", gc.step, "central-difference step");
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error");

  cvs::SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset (.csv or binary)");
  synth->add_option("--classes", spec.num_classes, "number of classes");
  synth->add_option("--dim", spec.dim, "feature dimension");
  synth->add_option("--per-class", spec.per_class, "items per class");
  synth->add_option("--spread", spec.spread, "within-class standard deviation");
  synth->add_option("--drift", spec.drift, "class-mean drift over arrival order");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--out", synth_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return error_record("usage", "invalid_arguments", e.what(), 64);
  }

  try {
    if (*run) {
      cvs::RunConfig config = load_config(config_path);
      if (seed) config.seed = *seed;
      if (!out_dir.empty()) config.output_dir = out_dir;
      cvs::Experiment experiment(config, cvs::materialize_dataset(config));
      const cvs::RunReport report = experiment.run();
      cvs::write_run_outputs(report, experiment.state(), config.output_dir);
      std::cout << json{{"output_dir", config.output_dir},
                        {"AR@1", report.average_recalls[0]},
                        {"AR@2", report.average_recalls[1]},
                        {"AR@4", report.average_recalls[2]},
                        {"gallery_verified", report.gallery_verified}}
                       .dump()
                << '\n';
      return report.gallery_verified ? 0 : error_record("contract", "gallery_modified",
                                                        "a gallery block changed after it was appended", 2);
    }
    if (*sweep) {
      const cvs::RunConfig base = load_config(sweep_config);
      const auto results = cvs::run_sweep(base, parse_seeds(seed_list));
      std::filesystem::create_directories(sweep_out);
      std::ofstream(std::filesystem::path(sweep_out) / "ablation.csv") << cvs::sweep_csv(results);
      std::map<std::string, std::pair<double, std::size_t>> means;
      for (const auto& r : results) {
        means[r.row].first += r.average_recalls[0];
        ++means[r.row].second;
      }
      json summary;
      for (const auto& [row, acc] : means) summary[row] = acc.first / static_cast<double>(acc.second);
      std::ofstream(std::filesystem::path(sweep_out) / "ablation_summary.json") << summary.dump(2) << '\n';
      std::cout << json{{"mean_AR@1", summary}}.dump() << '\n';
      return 0;
    }
    if (*gradcheck) {
      const cvs::GradCheckReport report = cvs::grad_check_suite(gc);
      json terms = json::array();
      for (const auto& t : report.terms) {
        terms.push_back({{"term", t.term},
                         {"max_relative_error", t.max_relative_error},
                         {"instances", t.instances},
                         {"passed", t.passed}});
      }
      std::cout << json{{"passed", report.passed()}, {"rejected_instances", report.rejected_instances},
                        {"terms", terms}}
                       .dump(2)
                << '\n';
      return report.passed() ? 0 : error_record("check", "gradient_mismatch",
                                                "a loss term exceeded the relative-error tolerance", 1);
    }
    if (*synth) {
      const cvs::Dataset ds = cvs::make_synthetic(spec);
      if (std::filesystem::path(synth_out).extension() == ".csv") {
        cvs::write_dataset_csv(ds, synth_out);
      } else {
        cvs::write_dataset(ds, synth_out);
      }
      std::cout << json{{"items", ds.size()}, {"classes", ds.num_classes()}, {"dim", ds.dim()}, {"out", synth_out}}
                       .dump()
                << '\n';
      return 0;
    }
  } catch (const cvs::ContractError& e) {
    return error_record("contract", e.code(), e.what(), 2);
  } catch (const cvs::FormatError& e) {
    return error_record("format", "format_error", e.what(), 3);
  } catch (const std::exception& e) {
    return error_record("internal", "unexpected", e.what(), 1);
  }
  return 0;
}
