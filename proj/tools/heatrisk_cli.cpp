// heatrisk: run pipeline stages from a config file.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "heatrisk/error.hpp"
#include "heatrisk/io.hpp"
#include "heatrisk/pipeline.hpp"

namespace hp = heatrisk::pipeline;

namespace {

int fail(const std::string& code, const std::string& message) {
  const nlohmann::json j = {{"error", {{"code", code}, {"message", message}}}};
  std::cerr << j.dump() << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heat exposure and mortality risk pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<int> workers;
  std::optional<std::string> method;
  std::optional<double> tau;
  std::optional<int> year;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--seed", seed, "Root seed (overrides config)");
    sub->add_option("--out", out_dir, "Output directory (overrides config)");
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  };

  std::vector<std::pair<std::string, CLI::App*>> stages;
  for (const auto& name : hp::subcommands()) {
    auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
    add_common(sub, true);
    sub->add_option("--method", method, "Restrict to one exposure method")
        ->check(CLI::IsMember({"gqrm", "ggpm", "reanalysis"}));
    sub->add_option("--tau", tau, "Restrict to one quantile level");
    sub->add_option("--year", year, "Restrict to one study year");
    stages.emplace_back(name, sub);
  }

  auto* sim = app.add_subcommand("simulate", "Write a synthetic input bundle and config");
  add_common(sim, false);
  bool null_effects = false;
  sim->add_flag("--null", null_effects, "No injected mortality effects");

  auto* cfg = app.add_subcommand("config", "Config utilities");
  bool print_defaults = false;
  cfg->add_flag("--print-defaults", print_defaults, "Print the default config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what());
  }

  hp::Logger log(std::cerr);
  try {
    if (cfg->parsed()) {
      std::cout << hp::PipelineConfig::defaults().to_json();
      return 0;
    }
    if (sim->parsed()) {
      heatrisk::synthetic::Scenario sc;
      if (null_effects) sc.effects = heatrisk::synthetic::Effects::none();
      const auto s = seed.value_or(1);
      const std::filesystem::path out = out_dir.empty() ? "heatrisk-sim" : out_dir;
      hp::simulate(sc, s, out, log);
      std::cout << (out / "config.json").string() << '\n';
      return 0;
    }
    for (const auto& [name, sub] : stages) {
      if (!sub->parsed()) continue;
      const std::filesystem::path path = config_path;
      auto config = hp::PipelineConfig::from_json(heatrisk::io::read_text(path), path.parent_path());
      if (seed) config.seed = seed;
      if (!out_dir.empty()) config.output_dir = out_dir;
      if (workers) config.workers = *workers;
      hp::RunOptions opt{method, tau, year};
      hp::run(name, config, opt, log);
    }
    return 0;
  } catch (const heatrisk::Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
