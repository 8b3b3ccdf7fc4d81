#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "curvlab/cli.hpp"

using namespace curvlab;
using namespace curvlab::cli;

namespace {

std::string read_input(const std::string& path) {
  if (path == "-") return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  std::ifstream in(path);
  if (!in) throw CliError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

FamilySpec load_spec(const std::string& path) {
  try {
    return parse_spec(read_input(path));
  } catch (const ParseError& e) {
    throw CliError((path == "-" ? std::string("<stdin>") : path) + ":" + e.what());
  }
}

std::map<std::string, double> parse_params(const std::vector<std::string>& kv) {
  std::map<std::string, double> out;
  for (const auto& s : kv) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw CliError("--set expects key=value, got '" + s + "'");
    std::string key = s.substr(0, eq), val = s.substr(eq + 1);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(val, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != val.size()) throw CliError("--set " + key + ": '" + val + "' is not a number");
    out[key] = v;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curvature conditions, free nilpotent lifting and operator experiments for families of maps"};
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "TOML or INI file supplying any of the flags");
  app.require_subcommand(1);

  std::string format = "json", out_path;
  std::optional<int> order, iterates, budget, grid;
  std::uint64_t seed = 1;
  app.add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  app.add_option("--output,-o", out_path, "Write the report to a file instead of stdout");
  app.add_option("--order", order, "Representation order m (check, lift) or nilpotency step (nilpotent)");
  app.add_option("--iterates", iterates, "Iterate count r for the Jacobian condition");
  app.add_option("--budget", budget, "Bracket length / tau budget (check) or Monte Carlo samples (oplab)");
  app.add_option("--grid", grid, "Grid points per axis for oplab experiments");
  app.add_option("--seed", seed, "Random seed")->capture_default_str();

  auto* check = app.add_subcommand("check", "Curvature verdicts and certificates for a family");
  std::string spec_path;
  check->add_option("spec", spec_path, "Family specification file, '-' for stdin")->required();
  check->fallthrough();

  auto* fmt = app.add_subcommand("format", "Print the canonical form of a family specification");
  fmt->add_option("spec", spec_path, "Family specification file, '-' for stdin")->required();
  fmt->fallthrough();

  auto* nil = app.add_subcommand("nilpotent", "Dump a relatively free nilpotent Lie algebra");
  int generators = 2;
  std::vector<int> degrees;
  nil->add_option("--generators,-p", generators, "Number of generators")->capture_default_str();
  nil->add_option("--degrees,-a", degrees, "Generator degrees (default all 1)")->delimiter(',');
  nil->fallthrough();

  auto* lift = app.add_subcommand("lift", "Lift the exponential representation of a family to a free frame");
  lift->add_option("spec", spec_path, "Family specification file, '-' for stdin")->required();
  lift->fallthrough();

  auto* op = app.add_subcommand("oplab", "Run a named numerical experiment");
  std::string experiment;
  std::vector<std::string> sets;
  op->add_option("experiment", experiment, "Experiment name")->required()->check(CLI::IsMember(experiment_names()));
  op->add_option("--set", sets, "Experiment parameter key=value (repeatable)");
  op->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kError;
  }

  try {
    std::string text;
    int code = kComplete;
    if (*fmt) {
      if (format != "json" && format != "csv") throw CliError("unknown format");
      text = pretty_print(load_spec(spec_path));
    } else {
      Report rep;
      if (*check) {
        auto s = load_spec(spec_path);
        rep = run_check(s, resolve_budgets(s, order, iterates, budget));
      } else if (*nil) {
        if (degrees.empty()) degrees.assign(static_cast<std::size_t>(std::max(generators, 0)), 1);
        rep = run_nilpotent(generators, degrees, order.value_or(2));
      } else if (*lift) {
        rep = run_lift(load_spec(spec_path), order.value_or(2));
      } else {
        ExperimentConfig c;
        c.grid = grid.value_or(0);
        c.seed = seed;
        c.budget = budget.value_or(0);
        c.params = parse_params(sets);
        rep = run_experiment(experiment, c);
      }
      if (format == "csv") {
        if (!rep.result.contains("table")) throw CliError("csv output is only available for experiment tables");
        text = csv(rep.result["table"]);
      } else {
        text = rep.to_json().dump(2) + "\n";
      }
      code = rep.exit_code();
    }
    if (out_path.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(out_path, std::ios::binary);
      if (!(out << text)) throw CliError("cannot write '" + out_path + "'");
    }
    return code;
  } catch (const std::exception& e) {
    std::cerr << "curvlab: " << e.what() << "\n";
    return kError;
  }
}
