// Slow suite: full-basis (N ~ 400) synthesis for the VTOL and drone models
// plus the 10,000-point certificate audit on each. Budgeted in hours; gated
// behind SCLF_ENABLE_SLOW_TESTS.

#include <sclf/artifact.hpp>
#include <sclf/commands.hpp>
#include <sclf/silp.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

using namespace sclf;
namespace fs = std::filesystem;
using wall_clock = std::chrono::steady_clock;

int main() {
  const fs::path configs = SCLF_CONFIG_DIR;
  const fs::path work = fs::temp_directory_path() / "sclf_slow_suite";
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  for (const std::string name : {"vtol_full", "drone_full"}) {
    const auto t0 = wall_clock::now();
    const int rc = cmd_synth(configs / (name + ".json"), work / name);
    const double secs = std::chrono::duration<double>(wall_clock::now() - t0).count();
    bool pass = rc == 0;
    double worst = 0.0;
    if (fs::exists(work / name / "artifact.json")) {
      const SclfArtifact a = load_artifact(work / name / "artifact.json");
      const RunConfig cfg = parse_run_config(a.config_echo);
      const auto sys = make_system(cfg);
      const auto cost = QuadraticCost::diagonal(a.q_diag, a.r_diag);
      const ExpertController expert(sys, cost, a.terminal, a.ocp);
      Rng rng(0x510eull);
      auto ses = expert.session();
      worst = -1e300;
      for (int i = 0; i < 10000; ++i) {
        const Vec x = sys.domain.sample(rng);
        worst = std::max(worst, omega_condition(a.basis, a.alpha, x, ses, cost));
      }
      pass = pass && worst <= 1e-5;
    } else {
      pass = false;
    }
    std::printf("[%s] slow suite %s: exit=%d, wall=%.0f s, 10k-point max omega=%.3g\n",
                pass ? "PASS" : "FAIL", name.c_str(), rc, secs, worst);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  return failures;
}
