// qcdq command line driver.
//
//   qcdq [run] <subcommand> [recipe-name] [--config PATH] [--seed U64]
//        [--threads N] [--out DIR] [--a.b.c VALUE ...]

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qcdq/config.hpp"
#include "qcdq/error.hpp"
#include "qcdq/experiment.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct SplitArgs {
  std::vector<std::string> rest;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Dotted flags (--train.n_regens 2e4 or --train.n_regens=2e4) are config
// overrides; everything else goes to the flag parser.
SplitArgs split_overrides(int argc, char** argv) {
  SplitArgs out;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a.rfind("--", 0) == 0 && a.find('.') != std::string::npos && a.find('.') < a.find('=')) {
      std::string key = a.substr(2), value;
      if (const auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= argc) throw qcdq::ValidationError("override --" + key + " needs a value");
        value = argv[++i];
      }
      out.overrides.emplace_back(key, value);
    } else {
      out.rest.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    SplitArgs args = split_overrides(argc, argv);
    if (!args.rest.empty() && args.rest.front() == "run") args.rest.erase(args.rest.begin());

    CLI::App app{"Bayesian quickest change detection via Q-learning"};
    std::string sub, recipe, config_path, out_dir;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    app.add_option("subcommand", sub, "train|eval|sweep|shiryaev|asymptotics|meanflow|batchmeans|region|recipe")
        ->required();
    app.add_option("recipe", recipe, "recipe name for 'recipe'");
    app.add_option("--config", config_path, "YAML or JSON config (or an artifact with an embedded config)");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output directory");
    std::vector<std::string> rev(args.rest.rbegin(), args.rest.rend());
    try {
      app.parse(rev);
    } catch (const CLI::ParseError& e) {
      const int rc = app.exit(e);
      return rc == 0 ? 0 : kExitValidation;
    }

    qcdq::Json user = qcdq::Json::object();
    if (sub == "recipe") {
      if (recipe.empty()) throw qcdq::ValidationError("recipe needs a name");
      user = qcdq::recipe_config(recipe);
    } else if (!recipe.empty()) {
      throw qcdq::ValidationError("unexpected positional argument '" + recipe + "'");
    }
    if (!config_path.empty()) user.merge_patch(qcdq::load_config_file(config_path));
    for (const auto& [k, v] : args.overrides) qcdq::apply_override(user, k, v);
    if (seed) user["seed"] = *seed;
    if (!out_dir.empty()) user["output_dir"] = out_dir;
    user["threads"] = threads;

    qcdq::RunContext ctx;
    ctx.config = qcdq::merge_with_defaults(user);
    if (ctx.config["seed"].is_null()) throw qcdq::ValidationError("missing required field: seed");
    ctx.threads = threads;
    ctx.out_dir = qcdq::resolve_output_dir(ctx.config, sub);
    const qcdq::Json summary = qcdq::run_subcommand(sub, ctx, recipe);
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const qcdq::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const qcdq::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
