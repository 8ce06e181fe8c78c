// attnflow command-line entry point.
//
//   attnflow <check-grad|flow|blocks|order|train|resume> [--config file.json] [--KEY VALUE ...]
//
// Every config key is also a flag; flags override the file. On failure a
// single machine-parseable line goes to stderr and the exit code follows the
// contract in attnflow/harness/commands.hpp.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "attnflow/harness/commands.hpp"
#include "attnflow/harness/config.hpp"

namespace {

using attnflow::harness::ExitCode;

// Flag values are read as JSON scalars when they parse as such ("4", "true",
// "[0.2,0.1]") and as strings otherwise ("rk4", "out/run1").
nlohmann::json flag_value(const std::string& raw) {
  try {
    return nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    return raw;
  }
}

}  // namespace

int main(int argc, char** argv) {
  namespace h = attnflow::harness;
  CLI::App app{"Gradient-flow view of attention blocks: gradient certification, flows, block stacks, training"};
  app.require_subcommand(1);
  // "h" is a config key, so help is long-form only.
  app.set_help_flag("--help", "Print this help message and exit");

  std::map<std::string, std::string> config_files;
  std::map<std::string, std::map<std::string, std::string>> flag_values;
  for (const auto& name : h::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->set_help_flag("--help", "Print this help message and exit");
    sub->add_option("--config", config_files[name], "JSON config file");
    for (const auto& key : h::config_keys()) {
      sub->add_option(std::string("--") + key.key, flag_values[name][key.key], key.help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : h::kExitValidation;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();

  h::ExperimentConfig cfg;
  try {
    nlohmann::json file_doc = nlohmann::json::object();
    if (!config_files[command].empty()) file_doc = h::load_json_file(config_files[command]);
    nlohmann::json flags = nlohmann::json::object();
    for (const auto& key : h::config_keys()) {
      if (sub->count(std::string("--") + key.key) > 0) flags[key.key] = flag_value(flag_values[command][key.key]);
    }
    if (command == "resume") file_doc = h::resume_base_config(file_doc, flags);
    cfg = h::parse_config(file_doc, flags, command);
  } catch (const attnflow::ValidationError& e) {
    std::cerr << "attnflow: exit=" << h::kExitValidation << " error=validation message=\"" << e.what() << "\"\n";
    return h::kExitValidation;
  } catch (const attnflow::Error& e) {
    std::cerr << "attnflow: exit=" << h::kExitValidation << " error=validation message=\"" << e.what() << "\"\n";
    return h::kExitValidation;
  }

  const h::CommandResult res = h::run_command(cfg);
  if (res.exit_code != h::kExitOk) {
    std::cerr << "attnflow: exit=" << res.exit_code << " " << res.reason << "\n";
  } else {
    std::cout << command << ": wrote";
    for (const auto& f : res.files) std::cout << " " << f;
    std::cout << " to " << cfg.out << "\n";
  }
  return res.exit_code;
}
