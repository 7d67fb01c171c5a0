// Command-line front end: one subcommand per experiment plus `report`.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nvarray/io.hpp"
#include "nvarray/pipeline.hpp"

namespace {

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> parallelism;
  std::vector<std::string> overrides;
};

void add_run_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file (defaults for anything omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed (config key master_seed)");
  cmd->add_option("--out", f.out, "output directory (config key output_dir)");
  cmd->add_option("--parallelism", f.parallelism, "worker threads (config key parallelism)");
  cmd->add_option("--override", f.overrides, "dotted KEY=VALUE, VALUE parsed as JSON when possible");
}

nlohmann::json assemble_config(const Flags& f, const std::string& experiment) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config_path.empty()) {
    try {
      j = nlohmann::json::parse(nvarray::io::read_text(f.config_path), nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(f.config_path + ": " + e.what());
    }
  }
  for (const auto& o : f.overrides) nvarray::apply_override(j, o);
  j["experiment"] = experiment;
  if (f.seed) j["master_seed"] = *f.seed;
  if (f.out) j["output_dir"] = *f.out;
  if (f.parallelism) j["parallelism"] = *f.parallelism;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte-Carlo toolkit for laser-written NV-centre arrays in diamond"};
  app.require_subcommand(1);

  Flags flags;
  for (const auto& name : nvarray::experiments()) {
    auto* cmd = app.add_subcommand(name, "run the " + name + " experiment");
    add_run_flags(cmd, flags);
  }
  std::string report_dir = "out";
  auto* report = app.add_subcommand("report", "summarise the outputs of a previous run");
  report->add_option("--out", report_dir, "directory holding the run outputs")->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  const auto* chosen = app.get_subcommands().front();

  if (chosen == report) {
    try {
      const std::string text = nvarray::render_report(nvarray::load_report_inputs(report_dir));
      nvarray::io::write_text(std::filesystem::path(report_dir) / "report.txt", text);
      std::cout << text;
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  nvarray::RunConfig config;
  try {
    config = nvarray::config_from_json(assemble_config(flags, chosen->get_name()));
    nvarray::validate(config);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    const auto manifest = nvarray::run(config, &std::cerr);
    std::cout << "wrote " << manifest.outputs.size() << " files to " << config.output_dir.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
