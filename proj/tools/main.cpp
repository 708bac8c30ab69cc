// kdiff command-line entry point.
#include <iostream>

#include "CLI11.hpp"
#include "kdiff/cli.hpp"

int main(int argc, char** argv) {
  kdiff::Invocation inv;
  CLI::App app{"Knowledge-enhanced diffusion with denoising experts, at desk scale"};
  app.require_subcommand(1);
  std::string config, checkpoint, scales;
  std::uint64_t seed = 0;
  std::int64_t steps = 0, count = 0;

  const char* commands[][2] = {
      {"gen-data", "generate the synthetic shapes corpus"},
      {"train", "train (or resume with --checkpoint)"},
      {"sample", "draw images from a checkpoint"},
      {"eval", "toy-FID and binding accuracy of a checkpoint"},
      {"sweep", "guidance, expert-count or knowledge sweep (sweep.kind)"},
      {"inspect-attn", "capture and render attention maps"},
      {"check-grad", "finite-difference check of the toy training loss"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "flat key = value config file");
    sub->add_option("--set", inv.overrides, "override, key=value (repeatable)")->take_all();
    sub->add_option("--out", inv.out, "root for run directories")->capture_default_str();
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--checkpoint", checkpoint, "checkpoint file");
    sub->add_option("--scales", scales, "comma-separated guidance scales");
    sub->add_option("--steps", steps, "sampling steps");
    sub->add_option("--count", count, "number of items");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error class=ConfigError kind=ConfigError message=\"" << e.what() << "\"\n";
    return kdiff::kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  inv.command = sub->get_name();
  if (sub->count("--config")) inv.config = config;
  if (sub->count("--seed")) inv.seed = seed;
  if (sub->count("--checkpoint")) inv.checkpoint = checkpoint;
  if (sub->count("--scales")) inv.scales = scales;
  if (sub->count("--steps")) inv.steps = steps;
  if (sub->count("--count")) inv.count = count;
  return kdiff::run(inv, std::cout, std::cerr);
}
