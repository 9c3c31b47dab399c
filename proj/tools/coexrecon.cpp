// coexrecon: command line front end for the reconstruction pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "coex/config.hpp"
#include "coex/errors.hpp"
#include "coex/parallel.hpp"
#include "coex/pipeline.hpp"

namespace {

int run(const std::string& verb, const std::filesystem::path& config_path,
        const std::optional<std::string>& out, const std::optional<long long>& seed,
        bool verbose) {
  auto cfg = coex::config::load_config(config_path);
  if (out) cfg.output_dir = *out;
  if (seed) {
    if (*seed < 0) throw coex::SchemaError("--seed must be non-negative");
    cfg.sample_seed = static_cast<std::uint64_t>(*seed);
  }
  if (verbose) {
    std::cerr << "coexrecon " << coex::pipeline::kVersion << ": " << verb << " with "
              << coex::thread_count() << " thread(s), output " << cfg.output_dir << "\n";
  }
  if (verb == "fit") return coex::pipeline::fit_command(config_path, cfg);
  if (verb == "sample") return coex::pipeline::sample_command(config_path, cfg);
  if (verb == "diagnose") return coex::pipeline::diagnose_command(config_path, cfg);
  return coex::pipeline::validate_command(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayes linear reconstruction of coupled climate fields"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::string> out;
  std::optional<long long> seed;
  std::optional<std::size_t> threads;
  bool verbose = false;

  for (const char* name : {"fit", "sample", "diagnose", "validate"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration file")->required();
    sub->add_option("--out", out, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "sampling seed (overrides sample.seed)");
    sub->add_option("--threads", threads, "worker threads (default COEXRECON_THREADS or 1)");
    sub->add_flag("--verbose", verbose, "report progress on stderr");
  }
  app.get_subcommand("fit")->description("run the full reconstruction and write outputs");
  app.get_subcommand("sample")->description("draw plausible joint samples for a completed run");
  app.get_subcommand("diagnose")->description("write diagnostic tables for a completed run");
  app.get_subcommand("validate")->description("check the config and inputs without computing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(coex::ExitCode::kSchema);
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    if (threads) {
      if (*threads == 0) throw coex::SchemaError("--threads must be at least 1");
      coex::set_thread_count(*threads);
    }
    return run(verb, config_path, out, seed, verbose);
  } catch (const coex::Error& e) {
    std::cerr << "coexrecon " << verb << ": " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "coexrecon " << verb << ": " << e.what() << "\n";
    return static_cast<int>(coex::ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "coexrecon " << verb << ": " << e.what() << "\n";
    return static_cast<int>(coex::ExitCode::kNumerical);
  }
}
