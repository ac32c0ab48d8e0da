#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "polyarg/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multilingual argument mining pipeline"};
  app.set_version_flag("--version", std::string(polyarg::kVersion));
  app.require_subcommand(1);

  const std::map<std::string_view, std::string> about{
      {"select", "Apply the selection thresholds and write per-task datasets and stats"},
      {"translate", "Machine-translate the selected datasets into every target language"},
      {"assemble", "Build one training set per language group"},
      {"experiment", "Train the model once per seed and predict every evaluation set"},
      {"evaluate", "Score predictions and write the report tables"},
      {"aggregate", "Filter annotators and aggregate crowd labels"},
      {"bleu", "Round-trip the English test set and score it with BLEU"},
      {"preserve", "Correlate original and translated aggregated labels"},
      {"validate", "Check the configuration and exit"},
  };

  polyarg::RunOptions opts;
  for (auto name : polyarg::kCommands) {
    auto* sub = app.add_subcommand(std::string(name), about.at(name));
    sub->add_option("--config", opts.config, "Pipeline configuration (YAML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory (overrides the config)");
    sub->add_option("--seed-offset", opts.seed_offset, "Added to every configured seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : polyarg::kExitInvalid;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return polyarg::run_command(command, opts, std::cerr);
}
