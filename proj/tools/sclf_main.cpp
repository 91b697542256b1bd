#include <sclf/commands.hpp>

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"sub-control Lyapunov function synthesis and deployment"};
  app.require_subcommand(1);

  std::string config_path, artifact_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  int audit_points = 1000;
  std::uint64_t verify_seed = 1;

  auto* synth = app.add_subcommand("synth", "synthesize an SCLF and write the artifact");
  synth->add_option("--config", config_path, "run configuration (JSON)")->required();
  synth->add_option("--out", out_dir, "output directory");
  std::uint64_t seed_value = 0;
  auto* seed_opt = synth->add_option("--seed", seed_value, "override all config seeds");

  auto* verify = app.add_subcommand("verify", "re-audit a stored artifact");
  verify->add_option("--artifact", artifact_path, "artifact path")->required();
  verify->add_option("--points", audit_points, "fresh audit points (0: maximizer only)");
  verify->add_option("--seed", verify_seed, "audit seed");

  auto* simulate = app.add_subcommand("simulate", "closed-loop runs from an artifact");
  simulate->add_option("--artifact", artifact_path, "artifact path")->required();
  simulate->add_option("--config", config_path, "run configuration (JSON)")->required();
  simulate->add_option("--out", out_dir, "output directory");

  auto* compare = app.add_subcommand("compare", "SCLF vs online-MPC comparison");
  compare->add_option("--artifact", artifact_path, "artifact path")->required();
  compare->add_option("--config", config_path, "run configuration (JSON)")->required();
  compare->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sclf::kExitUsage;
  }

  if (seed_opt->count() > 0) seed = seed_value;

  try {
    if (synth->parsed()) return sclf::cmd_synth(config_path, out_dir, seed);
    if (verify->parsed()) return sclf::cmd_verify(artifact_path, audit_points, verify_seed);
    if (simulate->parsed()) return sclf::cmd_simulate(artifact_path, config_path, out_dir);
    if (compare->parsed()) return sclf::cmd_compare(artifact_path, config_path, out_dir);
  } catch (const sclf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 70;
  }
  return sclf::kExitUsage;
}
