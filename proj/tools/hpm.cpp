// hpm <command> --config path [--jobs N] [--out dir]

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "hpm/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Anisotropic H-measure and velocity-averaging experiments"};
  app.require_subcommand(1, 1);
  std::string config;
  std::size_t jobs = 1;
  std::string out;

  for (const auto& name : hpm::runner_commands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "output directory (overrides config and HPM_OUTPUT_DIR)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  std::optional<std::filesystem::path> out_dir;
  if (!out.empty()) out_dir = out;
  const auto r = hpm::run_file(command, config, out_dir, jobs);
  if (r.status != 0) {
    std::cerr << "hpm " << command << ": " << r.message << "\n";
    return r.status;
  }
  std::cout << r.output_dir.string() << "\n";
  for (const auto& f : r.files) std::cout << "  " << f << "\n";
  return 0;
}
