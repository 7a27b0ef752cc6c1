#pragma once

// Experiment driver: turns a resolved config tree into module inputs, runs
// the subcommands and writes their artifacts.

#include <filesystem>
#include <string>
#include <vector>

#include "qcdq/asymptotics.hpp"
#include "qcdq/basis.hpp"
#include "qcdq/config.hpp"
#include "qcdq/eval.hpp"
#include "qcdq/model.hpp"
#include "qcdq/qlearn.hpp"
#include "qcdq/sis.hpp"

namespace qcdq {

ObservationLaw parse_law(const Json& j, const std::string& where);
ChangeTimeLaw parse_change(const Json& j, const std::string& where);
QcdModel parse_model(const Json& cfg);

/// Tail rate used by the asymptotics: "nominal" (geometric parameter, slowest
/// mixture component), "tail" (-log(1 - p)) or an explicit number.
double resolve_rho_a(const Json& cfg, const ChangeTimeLaw& law);

MgfProfile make_profile(const DriftFn& drift, const QcdModel& model, double rho_a, const Json& cfg);

/// SIS spec with every "rstar" shift replaced by the computed optimal shift.
SisSpec parse_sis(const Json& cfg, const QcdModel& model);

TrainConfig parse_train(const Json& cfg);
WidthConvention parse_width_convention(const std::string& s);

/// Basis from basis.file, or fitted by k-means on sampled SIS points.
RbfBasis make_basis_for(const Json& cfg, const QcdModel& model, const SisSpec& spec);

std::vector<std::string> recipe_names();

/// User-level config of a named recipe (before defaults are merged).
Json recipe_config(const std::string& name);

struct RunContext {
  Json config;  ///< resolved
  std::filesystem::path out_dir;
  unsigned threads = 1;
};

/// Resolves the output directory: config output_dir, else $QCDQ_OUTPUT_ROOT/<sub>, else ./qcdq_out/<sub>.
std::filesystem::path resolve_output_dir(const Json& cfg, const std::string& subcommand);

/// Runs a subcommand; returns the summary printed by the CLI.
Json run_subcommand(const std::string& subcommand, const RunContext& ctx, const std::string& recipe_name = "");

}  // namespace qcdq
