#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "cft/scenario.hpp"
#include "cft/util.hpp"

int main(int argc, char** argv) {
  CLI::App app{"peierls-lab: discrete Peierls-bracket workbench on a cylinder spacetime"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* copt = sub->add_option("--config", config_path, "scenario configuration file");
    if (config_required) copt->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed override")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--threads", threads, "worker threads (0 = hardware)");
  };

  const char* names[] = {"el-check", "green", "bracket", "verify", "converge", "wavemap"};
  const char* descs[] = {"Euler-Lagrange residual and directional-derivative check",
                         "impulse responses and dense kernels of the Green operators",
                         "Peierls bracket of two configured functionals",
                         "full invariant suite with a pass/fail table",
                         "convergence table for the configured quantity",
                         "wave-map scenario presets"};
  for (int i = 0; i < 6; ++i) add_common(app.add_subcommand(names[i], descs[i]), i != 3);

  CLI11_PARSE(app, argc, argv);

  cft::ScenarioConfig cfg;
  try {
    cfg = config_path.empty() ? cft::ScenarioConfig::default_free_scalar()
                              : cft::ScenarioConfig::parse_file(config_path);
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  if (seed_set) cfg.seed = seed;
  if (threads > 0) cfg.threads = threads;
  if (const char* env = std::getenv("CFT_THREADS")) cfg.threads = std::atoi(env);
  if (cfg.threads > 0) cft::set_default_threads(cfg.threads);

  const std::string command = app.get_subcommands().front()->get_name();
  return cft::run_command(command, cfg, out_dir);
}
