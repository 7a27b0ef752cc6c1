#include "qcdq/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>

#include "qcdq/artifacts.hpp"
#include "qcdq/error.hpp"
#include "qcdq/meanflow.hpp"

namespace qcdq {

namespace {

Json law_json(const std::string& kind, Json params) { return Json{{"kind", kind}, {"params", std::move(params)}}; }

const Json& params_of(const Json& j, const std::string& where) {
  require_keys(j, {"kind", "params"}, where);
  if (!j.contains("kind") || !j["kind"].is_string()) throw ValidationError("missing required field: " + where + ".kind");
  if (!j.contains("params")) throw ValidationError("missing required field: " + where + ".params");
  return j["params"];
}

double param(const Json& p, const std::string& key, const std::string& where) {
  if (!p.contains(key)) throw ValidationError("missing required field: " + where + ".params." + key);
  return as_double(p[key], where + ".params." + key);
}

DriftFn parse_drift(const Json& j, const std::string& where) {
  const Json& p = params_of(j, where);
  const std::string kind = j["kind"];
  DriftFn d;
  if (kind == "iid_llr") {
    require_keys(p, {"breve0", "breve1"}, where + ".params");
    if (!p.contains("breve0") || !p.contains("breve1"))
      throw ValidationError("missing required field: " + where + ".params.breve0/breve1");
    d.llr = IidLlr{parse_law(p["breve0"], where + ".params.breve0"), parse_law(p["breve1"], where + ".params.breve1")};
  } else if (kind == "markov_llr") {
    require_keys(p, {"a0", "a1", "innovation"}, where + ".params");
    MarkovLlr m;
    m.a0 = param(p, "a0", where);
    m.a1 = param(p, "a1", where);
    if (!p.contains("innovation")) throw ValidationError("missing required field: " + where + ".params.innovation");
    m.innovation = parse_law(p["innovation"], where + ".params.innovation");
    d.llr = m;
  } else {
    throw ValidationError(where + ".kind must be 'iid_llr' or 'markov_llr'");
  }
  return d;
}

Json gaussian(double mu, double sigma) { return law_json("gaussian", {{"mu", mu}, {"sigma", sigma}}); }
Json laplace(double mu, double b) { return law_json("laplace", {{"mu", mu}, {"b", b}}); }
Json cauchy(double x0, double g) { return law_json("cauchy", {{"x0", x0}, {"gamma", g}}); }

Json iid_component(const Json& b0, const Json& b1) {
  return {{"kind", "cusum"}, {"drift", {{"kind", "iid_llr"}, {"params", {{"breve0", b0}, {"breve1", b1}}}}}, {"shift", "rstar"}};
}

Json markov_component(const Json& innovation) {
  return {{"kind", "cusum"},
          {"drift", {{"kind", "markov_llr"}, {"params", {{"a0", 0.8}, {"a1", 0.5}, {"innovation", innovation}}}}},
          {"shift", "rstar"}};
}

Json model1_base(const Json& sis, bool mixed) {
  Json change = mixed ? law_json("mixture", {{"w", 0.25}, {"p_slow", 0.02}, {"p_fast", 0.2}})
                      : law_json("geometric", {{"p", 0.02}});
  return {{"seed", 1},
          {"model", {{"pre", gaussian(0.0, 1.0)}, {"post", gaussian(0.5, 1.0)}, {"change", change}, {"kappa", 27.0}}},
          {"sis", sis}};
}

Json one(const Json& c) { return Json::array({c}); }

}  // namespace

ObservationLaw parse_law(const Json& j, const std::string& where) {
  const Json& p = params_of(j, where);
  const std::string kind = j["kind"];
  ObservationLaw law;
  if (kind == "gaussian") {
    require_keys(p, {"mu", "sigma"}, where + ".params");
    law = IidGaussian{param(p, "mu", where), param(p, "sigma", where)};
  } else if (kind == "laplace") {
    require_keys(p, {"mu", "b"}, where + ".params");
    law = IidLaplace{param(p, "mu", where), param(p, "b", where)};
  } else if (kind == "cauchy") {
    require_keys(p, {"x0", "gamma"}, where + ".params");
    law = IidCauchy{param(p, "x0", where), param(p, "gamma", where)};
  } else if (kind == "ar1") {
    require_keys(p, {"a", "sigma_w"}, where + ".params");
    law = Ar1{param(p, "a", where), param(p, "sigma_w", where)};
  } else {
    throw ValidationError(where + ".kind must be one of gaussian, laplace, cauchy, ar1");
  }
  validate(law);
  return law;
}

ChangeTimeLaw parse_change(const Json& j, const std::string& where) {
  const Json& p = params_of(j, where);
  const std::string kind = j["kind"];
  ChangeTimeLaw law;
  if (kind == "geometric") {
    require_keys(p, {"p"}, where + ".params");
    law = Geometric{param(p, "p", where)};
  } else if (kind == "mixture") {
    require_keys(p, {"w", "p_slow", "p_fast"}, where + ".params");
    law = Mixture{param(p, "w", where), param(p, "p_slow", where), param(p, "p_fast", where)};
  } else {
    throw ValidationError(where + ".kind must be 'geometric' or 'mixture'");
  }
  validate(law);
  return law;
}

QcdModel parse_model(const Json& cfg) {
  QcdModel m;
  m.pre = parse_law(at_path(cfg, "model.pre"), "model.pre");
  m.post = parse_law(at_path(cfg, "model.post"), "model.post");
  m.change = parse_change(at_path(cfg, "model.change"), "model.change");
  m.kappa = get_double(cfg, "model.kappa");
  validate(m);
  return m;
}

double resolve_rho_a(const Json& cfg, const ChangeTimeLaw& law) {
  const Json& r = at_path(cfg, "asymptotics.rho_a");
  if (r.is_string()) {
    if (r == "nominal") return nominal_rate(law);
    if (r == "tail") return tail_rate(law);
    throw ValidationError("asymptotics.rho_a must be 'nominal', 'tail' or a number");
  }
  const double v = as_double(r, "asymptotics.rho_a");
  if (!(v > 0.0)) throw ValidationError("asymptotics.rho_a must be positive");
  return v;
}

MgfProfile make_profile(const DriftFn& drift, const QcdModel& model, double rho_a, const Json& cfg) {
  MgfProfile p;
  p.drift = drift;
  p.pre_law = model.pre;
  p.post_law = model.post;
  p.rho_a = rho_a;
  p.mc_samples = static_cast<std::size_t>(get_int(cfg, "asymptotics.mc_samples"));
  p.mc_seed = get_u64(cfg, "asymptotics.mc_seed");
  return p;
}

SisSpec parse_sis(const Json& cfg, const QcdModel& model) {
  const Json& arr = at_path(cfg, "sis");
  if (!arr.is_array() || arr.empty()) throw ValidationError("sis must be a nonempty list");
  SisSpec spec;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "sis[" + std::to_string(i) + "]";
    const Json& c = arr[i];
    require_keys(c, {"kind", "drift", "shift"}, where);
    SisComponent comp;
    const std::string kind = c.value("kind", std::string("cusum"));
    if (kind == "cusum") comp.kind = StatKind::kCusum;
    else if (kind == "shiryaev_roberts") comp.kind = StatKind::kShiryaevRoberts;
    else throw ValidationError(where + ".kind must be 'cusum' or 'shiryaev_roberts'");
    if (!c.contains("drift")) throw ValidationError("missing required field: " + where + ".drift");
    comp.drift = parse_drift(c["drift"], where + ".drift");
    const Json shift = c.value("shift", Json(0.0));
    if (shift.is_string()) {
      if (shift != "rstar") throw ValidationError(where + ".shift must be a number or 'rstar'");
      comp.drift.shift = 0.0;
      comp.drift.shift = rstar(make_profile(comp.drift, model, resolve_rho_a(cfg, model.change), cfg));
    } else {
      comp.drift.shift = as_double(shift, where + ".shift");
    }
    spec.components.push_back(comp);
  }
  validate(spec);
  return spec;
}

WidthConvention parse_width_convention(const std::string& s) {
  if (s == "precision") return WidthConvention::kPrecision;
  if (s == "scale") return WidthConvention::kScale;
  throw ValidationError("basis.width_convention must be 'precision' or 'scale'");
}

TrainConfig parse_train(const Json& cfg) {
  TrainConfig t;
  t.n_regens = get_int(cfg, "train.n_regens");
  t.alpha0 = get_double(cfg, "train.alpha0");
  t.rho = get_double(cfg, "train.rho");
  t.gamma = get_double(cfg, "train.gamma");
  t.kappa = get_double(cfg, "model.kappa");
  t.eta = get_double(cfg, "train.eta");
  t.explore_p = get_double(cfg, "train.explore_p");
  t.regen_on_stop = get_bool(cfg, "train.regen_on_stop");
  t.reset_bound = get_double(cfg, "train.reset_bound");
  t.theta0_scale = get_double(cfg, "train.theta0_scale");
  t.averaging = get_bool(cfg, "train.averaging");
  t.episode_cap = get_int(cfg, "train.episode_cap");
  t.log_capacity = static_cast<std::size_t>(get_int(cfg, "train.log_capacity"));
  t.zap.enabled = get_bool(cfg, "train.zap.enabled");
  t.zap.beta0 = get_double(cfg, "train.zap.beta0");
  t.zap.beta_rho = get_double(cfg, "train.zap.beta_rho");
  t.zap.ridge = get_double(cfg, "train.zap.ridge");
  t.zap.refresh_every = get_int(cfg, "train.zap.refresh_every");
  t.seed = get_u64(cfg, "seed");
  validate(t);
  return t;
}

RbfBasis make_basis_for(const Json& cfg, const QcdModel& model, const SisSpec& spec) {
  const std::string file = get_string(cfg, "basis.file");
  if (!file.empty()) {
    const Json j = read_json_file(file);
    RbfBasis b = basis_from_json(j.contains("basis") ? j["basis"] : j);
    if (b.sis_dim() != spec.dim()) throw ValidationError("basis file dimension does not match the SIS");
    return b;
  }
  const std::uint64_t seed = get_u64(cfg, "seed");
  const unsigned threads = static_cast<unsigned>(get_int(cfg, "threads"));
  const Eigen::MatrixXd pts = sample_sis_points(model, spec, static_cast<std::size_t>(get_int(cfg, "basis.n_paths")),
                                                get_double(cfg, "train.eta"), seed, threads);
  Rng rng = make_stream(seed, StreamTag::kBasisFit, 0);
  return fit_centers(pts, get_int(cfg, "basis.K"), get_double(cfg, "basis.b"), rng,
                     parse_width_convention(get_string(cfg, "basis.width_convention")));
}

std::vector<std::string> recipe_names() {
  return {"model1a", "model1b", "model1c", "model1a_mixed", "model2a", "model2b", "model2c", "model3a", "model3b"};
}

Json recipe_config(const std::string& name) {
  const Json g0 = gaussian(0.0, 1.0), g1 = gaussian(0.5, 1.0);
  const Json l0 = laplace(0.0, kMatchedLaplaceB), l1 = laplace(0.5, kMatchedLaplaceB);
  const Json c0 = cauchy(0.0, kMatchedCauchyGamma), c1 = cauchy(0.5, kMatchedCauchyGamma);
  if (name == "model1a") return model1_base(one(iid_component(g0, g1)), false);
  if (name == "model1b") return model1_base(one(iid_component(l0, l1)), false);
  if (name == "model1c") return model1_base(one(iid_component(c0, c1)), false);
  if (name == "model1a_mixed") return model1_base(one(iid_component(g0, g1)), true);
  if (name == "model2a" || name == "model2b" || name == "model2c") {
    const Json innovation = name == "model2a" ? gaussian(0.0, 1.0)
                            : name == "model2b" ? laplace(0.0, kMatchedLaplaceB)
                                                : cauchy(0.0, kMatchedCauchyGamma);
    return {{"seed", 1},
            {"model",
             {{"pre", law_json("ar1", {{"a", 0.8}, {"sigma_w", 1.0}})},
              {"post", law_json("ar1", {{"a", 0.5}, {"sigma_w", 1.0}})},
              {"change", law_json("geometric", {{"p", 0.02}})},
              {"kappa", 27.0}}},
            {"sis", one(markov_component(innovation))}};
  }
  if (name == "model3a" || name == "model3b") {
    Json sis = Json::array();
    if (name == "model3a") {
      sis.push_back(iid_component(l0, l1));
      sis.push_back(iid_component(c0, c1));
    } else {
      sis.push_back(iid_component(g0, g1));
      sis.push_back(iid_component(g0, gaussian(0.1, std::sqrt(1.4))));
    }
    Json cfg = model1_base(sis, false);
    cfg["basis"] = {{"K", 40}};
    cfg["train"] = {{"n_regens", 50'000}};
    return cfg;
  }
  throw ValidationError("unknown recipe '" + name + "'");
}

std::filesystem::path resolve_output_dir(const Json& cfg, const std::string& subcommand) {
  const std::string dir = get_string(cfg, "output_dir");
  if (!dir.empty()) return dir;
  if (const char* root = std::getenv("QCDQ_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / subcommand;
  return std::filesystem::path("qcdq_out") / subcommand;
}

namespace {

McOptions eval_options(const Json& cfg, unsigned threads) {
  McOptions o;
  o.n_paths = static_cast<std::size_t>(get_int(cfg, "eval.n_paths"));
  o.seed = get_u64(cfg, "seed");
  o.threads = threads;
  o.step_cap = get_int(cfg, "eval.step_cap");
  if (o.n_paths < 1) throw ValidationError("eval.n_paths must be >= 1");
  if (o.step_cap < 1) throw ValidationError("eval.step_cap must be >= 1");
  return o;
}

std::vector<double> sweep_grid(const Json& cfg) {
  return uniform_grid(get_double(cfg, "eval.grid.lo"), get_double(cfg, "eval.grid.hi"),
                      static_cast<std::size_t>(get_int(cfg, "eval.grid.n")));
}

ScanGrid scan_grid(const Json& cfg) {
  ScanGrid g;
  g.lo = 0.0;
  g.hi = get_double(cfg, "train.eta");
  g.points = static_cast<std::size_t>(get_int(cfg, "eval.scan_points"));
  return g;
}

SisSpec component_spec(const SisSpec& spec, std::size_t i) {
  SisSpec s;
  s.components.push_back(spec.components[i]);
  return s;
}

Json cusum_star_json(const ThresholdTable& table, const std::vector<double>& kappas) {
  Json arr = Json::array();
  for (double k : kappas) {
    const auto cs = cusum_star(table, k);
    arr.push_back({{"kappa", k}, {"h_star", cs.h}, {"J_star", cs.cost}, {"se", cs.se}});
  }
  return arr;
}

Json shifts_json(const SisSpec& spec) {
  Json arr = Json::array();
  for (const auto& c : spec.components) arr.push_back(c.drift.shift);
  return arr;
}

struct Trained {
  RbfBasis basis;
  TrainResult result;
  Eigen::VectorXd policy_theta;
};

Trained do_train(const RunContext& ctx, const QcdModel& model, const SisSpec& spec, const ArtifactWriter& out) {
  const Json& cfg = ctx.config;
  Trained t;
  t.basis = make_basis_for(cfg, model, spec);
  out.write_json("basis.json", {{"basis", to_json(t.basis)}});
  t.result = train(model, spec, t.basis, parse_train(cfg));
  Json body{{"train", to_json(t.result)}, {"basis", to_json(t.basis)}, {"shifts", shifts_json(spec)}};
  const std::string which = get_string(cfg, "eval.policy");
  if (which != "final" && which != "averaged") throw ValidationError("eval.policy must be 'final' or 'averaged'");
  t.policy_theta = which == "averaged" && t.result.theta_pr ? *t.result.theta_pr : t.result.theta_final;
  if (spec.dim() == 1) {
    body["threshold_final"] = to_json(threshold_of(QFunction{t.basis, t.result.theta_final}, scan_grid(cfg)));
    if (t.result.theta_pr)
      body["threshold_pr"] = to_json(threshold_of(QFunction{t.basis, *t.result.theta_pr}, scan_grid(cfg)));
  }
  out.write_json("train_result.json", body);
  std::vector<std::string> cols{"k"};
  for (Eigen::Index i = 0; i < t.result.theta_final.size(); ++i) cols.push_back("theta" + std::to_string(i));
  out.write_csv("iterate_log.csv", cols, iterate_log_rows(t.result));
  return t;
}

Json run_train(const RunContext& ctx) {
  const QcdModel model = parse_model(ctx.config);
  const SisSpec spec = parse_sis(ctx.config, model);
  ArtifactWriter out(ctx.out_dir, ctx.config);
  const Trained t = do_train(ctx, model, spec, out);
  Json s{{"S", t.result.sample_count}, {"regen_count", t.result.regen_count}, {"reset_count", t.result.reset_count},
         {"out_dir", ctx.out_dir.string()}};
  if (spec.dim() == 1) s["threshold"] = to_json(threshold_of(QFunction{t.basis, t.policy_theta}, scan_grid(ctx.config)));
  return s;
}

Policy load_policy(const Json& cfg, const SisSpec& spec) {
  Policy p{spec, ThresholdRule{}};
  const Json& thr = at_path(cfg, "eval.threshold");
  if (!thr.is_null()) {
    if (thr.is_array()) {
      BoxRule box;
      for (const auto& x : thr) box.h.push_back(as_double(x, "eval.threshold"));
      p.rule = box;
    } else {
      p.rule = ThresholdRule{as_double(thr, "eval.threshold")};
    }
    return p;
  }
  const std::string file = get_string(cfg, "eval.theta_file");
  if (file.empty()) throw ValidationError("eval needs eval.threshold or eval.theta_file");
  const Json j = read_json_file(file);
  const Json& tr = j.contains("train") ? j["train"] : j;
  const bool averaged = get_string(cfg, "eval.policy") == "averaged";
  const Json& th = averaged && tr.contains("theta_pr") && !tr["theta_pr"].is_null() ? tr["theta_pr"] : tr["theta_final"];
  RbfBasis basis;
  if (!get_string(cfg, "basis.file").empty()) {
    const Json bj = read_json_file(get_string(cfg, "basis.file"));
    basis = basis_from_json(bj.contains("basis") ? bj["basis"] : bj);
  } else if (j.contains("basis")) {
    basis = basis_from_json(j["basis"]);
  } else {
    throw ValidationError("eval needs basis.file when the theta file carries no basis");
  }
  p.rule = QFunction{basis, vector_from_json(th, "theta")};
  return p;
}

Json run_eval(const RunContext& ctx) {
  const QcdModel model = parse_model(ctx.config);
  const SisSpec spec = parse_sis(ctx.config, model);
  ArtifactWriter out(ctx.out_dir, ctx.config);
  const Policy policy = load_policy(ctx.config, spec);
  const EvalReport rep = eval_policy(model, policy, model.kappa, eval_options(ctx.config, ctx.threads));
  out.write_json("eval_report.json", {{"report", to_json(rep)}});
  return to_json(rep);
}

Json run_sweep(const RunContext& ctx) {
  const QcdModel model = parse_model(ctx.config);
  const SisSpec spec = parse_sis(ctx.config, model);
  ArtifactWriter out(ctx.out_dir, ctx.config);
  const auto mc = eval_options(ctx.config, ctx.threads);
  const auto kappas = get_double_list(ctx.config, "eval.kappas");
  Json summary = Json::array();
  for (std::size_t i = 0; i < static_cast<std::size_t>(spec.dim()); ++i) {
    const ThresholdTable table = threshold_sweep(model, component_spec(spec, i), sweep_grid(ctx.config), mc);
    const std::string suffix = spec.dim() == 1 ? "" : "_" + std::to_string(i);
    out.write_csv("threshold_table" + suffix + ".csv", {"h", "mde", "mdd", "se_mde", "se_mdd"}, table_rows(table));
    summary.push_back({{"component", i},
                       {"shift", spec.components[i].drift.shift},
                       {"capped_paths", table.capped_paths},
                       {"cusum_star", cusum_star_json(table, kappas)}});
  }
  out.write_json("cusum_star.json", {{"components", summary}});
  return summary;
}

Json run_shiryaev(const RunContext& ctx) {
  const QcdModel model = parse_model(ctx.config);
  ArtifactWriter out(ctx.out_dir, ctx.config);
  ShiryaevOptions so;
  const Json& rho = at_path(ctx.config, "eval.shiryaev_rho");
  if (!rho.is_null()) so.rho = as_double(rho, "eval.shiryaev_rho");
  const auto n = static_cast<std::size_t>(get_int(ctx.config, "eval.shiryaev_grid.n"));
  const ThresholdTable table = shiryaev_sweep(model, uniform_grid(0.0, 1.0, n), eval_options(ctx.config, ctx.threads), so);
  out.write_csv("shiryaev_table.csv", {"h", "mde", "mdd", "se_mde", "se_mdd"}, table_rows(table));
  const Json opt = cusum_star_json(table, get_double_list(ctx.config, "eval.kappas"));
  out.write_json("shiryaev.json", {{"optimal", opt}, {"capped_paths", table.capped_paths}});
  return opt;
}

Json run_asymptotics(const RunContext& ctx) {
  const QcdModel model = parse_model(ctx.config);
  const SisSpec spec = parse_sis(ctx.config, model);
  ArtifactWriter out(ctx.out_dir, ctx.config);
  const double rho_a = resolve_rho_a(ctx.config, model.change);
  const auto kappas = get_double_list(ctx.config, "asymptotics.kappas");
  const Json& anchor_cfg = at_path(ctx.config, "asymptotics.anchor");
  Json comps = Json::array();
  for (const auto& comp : spec.components) {
    const AsymptoticSummary s = summarize(make_profile(comp.drift, model, rho_a, ctx.config));
    Json rec = to_json(s);
    rec["shift"] = comp.drift.shift;
    rec["rho_a"] = rho_a;
    Json table = Json::array();
    for (double k : kappas) {
      Json row{{"kappa", k}, {"h_inf", nullptr}, {"J_inf", nullptr}, {"h_s", nullptr}, {"J_s", nullptr}};
      if (k > 1.0) {
        const auto a = approx_opt(s, k);
        row["h_inf"] = a.h;
        row["J_inf"] = a.cost;
        if (!anchor_cfg["h"].is_null() && !anchor_cfg["J"].is_null()) {
          const Anchor anc{get_double(ctx.config, "asymptotics.anchor.kappa"), get_double(ctx.config, "asymptotics.anchor.h"),
                           get_double(ctx.config, "asymptotics.anchor.J")};
          const auto sh = shifted_approx(s, k, anc);
          row["h_s"] = sh.h;
          row["J_s"] = sh.cost;
        }
      }
      table.push_back(row);
    }
    rec["table"] = table;
    comps.push_back(rec);
  }
  Json body = comps[0];
  body["components"] = comps;
  out.write_json("asymptotics.json", body);
  return body;
}

Json run_meanflow(const RunContext& ctx) {
  const Json& cfg = ctx.config;
  ArtifactWriter out(ctx.out_dir, cfg);
  const std::string mode = get_string(cfg, "meanflow.mode");
  const std::uint64_t seed = get_u64(cfg, "seed");
  const auto n_samples = static_cast<std::size_t>(get_int(cfg, "meanflow.n_samples"));
  const double dt = get_double(cfg, "meanflow.dt");
  const double t_end = get_double(cfg, "meanflow.t_end");
  Json body;
  if (mode == "counterexample") {
    FlowEstimator est = counterexample_instance(get_double(cfg, "meanflow.xi"), n_samples, seed);
    est.n_batches = static_cast<std::size_t>(get_int(cfg, "meanflow.n_batches"));
    Rng rng = make_stream(seed, StreamTag::kAuxiliary, 7);
    Json dirs = Json::array();
    const auto n_dir = get_int(cfg, "meanflow.n_directions");
    for (std::int64_t i = 0; i < n_dir; ++i) {
      Eigen::VectorXd th(est.dim());
      for (Eigen::Index j = 0; j < th.size(); ++j) th(j) = standard_normal(rng);
      th.normalize();
      const auto ip = estimate_theta_dot_barf(est, th);
      dirs.push_back({{"theta", vector_to_json(th)}, {"theta_dot_barf", ip.value}, {"se", ip.std_error}});
    }
    Eigen::VectorXd th0 = Eigen::VectorXd::Ones(est.dim()).normalized();
    const FlowTrajectory tr = integrate_flow(est, th0, dt, t_end);
    double t_hit = -1.0;
    for (std::size_t i = 0; i < tr.t.size(); ++i)
      if (tr.norm[i] >= 1e3) {
        t_hit = tr.t[i];
        break;
      }
    body = {{"mode", mode},
            {"xi", get_double(cfg, "meanflow.xi")},
            {"slope_closed_form", counterexample_slope(est)},
            {"directions", dirs},
            {"trajectory_t", tr.t},
            {"trajectory_norm", tr.norm},
            {"diverged", tr.diverged},
            {"t_norm_1e3", t_hit < 0 ? Json(nullptr) : Json(t_hit)}};
  } else if (mode == "flow") {
    const QcdModel model = parse_model(cfg);
    const SisSpec spec = parse_sis(cfg, model);
    const RbfBasis basis = make_basis_for(cfg, model, spec);
    FlowEstimator est;
    est.source = QcdFlowSource{model, spec, basis, model.kappa, get_double(cfg, "train.eta"),
                               get_bool(cfg, "train.regen_on_stop"), get_int(cfg, "meanflow.burn_in_regens")};
    est.explore_p = get_double(cfg, "meanflow.explore_p");
    est.gamma = get_double(cfg, "meanflow.gamma");
    est.n_samples = n_samples;
    est.n_batches = static_cast<std::size_t>(get_int(cfg, "meanflow.n_batches"));
    est.seed = seed;
    Rng rng = make_stream(seed, StreamTag::kAuxiliary, 8);
    Eigen::VectorXd th0(est.dim());
    for (Eigen::Index j = 0; j < th0.size(); ++j) th0(j) = 50.0 * (2.0 * uniform01(rng) - 1.0);
    const FlowTrajectory tr = integrate_flow(est, th0, dt, t_end);
    const LinearParts lp = estimate_linear_parts(est);
    body = {{"mode", mode},
            {"trajectory_t", tr.t},
            {"trajectory_norm", tr.norm},
            {"theta_end", vector_to_json(tr.theta.back())},
            {"diverged", tr.diverged},
            {"off_block_max", lp.off_block_max},
            {"off_block_max_se", lp.off_block_max_se}};
  } else if (mode == "contraction") {
    const Json& inst = at_path(cfg, "meanflow.instance");
    if (!inst.is_object()) throw ValidationError("meanflow.instance must give P, psi and optionally delta");
    require_keys(inst, {"P", "psi", "delta"}, "meanflow.instance");
    auto matrix = [](const Json& j, const std::string& what) {
      if (!j.is_array() || j.empty()) throw ValidationError(what + " must be a nonempty list of rows");
      Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
      for (std::size_t i = 0; i < j.size(); ++i) {
        const Eigen::VectorXd row = vector_from_json(j[i], what);
        if (row.size() != m.cols()) throw ValidationError(what + " rows have unequal length");
        m.row(static_cast<Eigen::Index>(i)) = row.transpose();
      }
      return m;
    };
    FiniteInstance fi;
    fi.p = matrix(inst.at("P"), "meanflow.instance.P");
    fi.psi = matrix(inst.at("psi"), "meanflow.instance.psi");
    if (inst.contains("delta"))
      for (const auto& x : inst["delta"]) fi.delta.push_back(x.get<bool>());
    body = to_json(contraction_check(fi));
    body["mode"] = mode;
  } else {
    throw ValidationError("meanflow.mode must be 'flow', 'counterexample' or 'contraction'");
  }
  out.write_json("meanflow.json", body);
  return body;
}

Json run_batchmeans(const RunContext& ctx) {
  const QcdModel model = parse_model(ctx.config);
  const SisSpec spec = parse_sis(ctx.config, model);
  ArtifactWriter out(ctx.out_dir, ctx.config);
  const RbfBasis basis = make_basis_for(ctx.config, model, spec);
  BatchOptions bo;
  bo.m = static_cast<std::size_t>(get_int(ctx.config, "batchmeans.M"));
  bo.seed = get_u64(ctx.config, "seed");
  bo.threads = ctx.threads;
  bo.same_seed = get_bool(ctx.config, "batchmeans.same_seed");
  bo.scan = scan_grid(ctx.config);
  const BatchMeansReport rep = batch_means(model, spec, basis, parse_train(ctx.config), bo);
  out.write_json("batch_means.json", {{"batch_means", to_json(rep)}, {"basis", to_json(basis)}});
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rep.threshold_hist.counts.size(); ++i)
    rows.push_back({0.0, rep.threshold_hist.edges[i], rep.threshold_hist.edges[i + 1],
                    static_cast<double>(rep.threshold_hist.counts[i])});
  for (std::size_t c = 0; c < rep.z_hist.size(); ++c)
    for (std::size_t i = 0; i < rep.z_hist[c].counts.size(); ++i)
      rows.push_back({static_cast<double>(c + 1), rep.z_hist[c].edges[i], rep.z_hist[c].edges[i + 1],
                      static_cast<double>(rep.z_hist[c].counts[i])});
  out.write_csv("histogram.csv", {"series", "edge_lo", "edge_hi", "count"}, rows);
  Json s{{"M", rep.m}, {"sigma_valid", rep.sigma_valid}};
  if (rep.sigma_valid) s["sigma_11"] = rep.sigma(0, 0);
  std::size_t failures = 0;
  for (const auto& r : rep.runs) failures += r.ok ? 0 : 1;
  s["failures"] = failures;
  return s;
}

Json run_region(const RunContext& ctx) {
  const QcdModel model = parse_model(ctx.config);
  const SisSpec spec = parse_sis(ctx.config, model);
  if (spec.dim() != 2) throw ValidationError("region needs a two-component SIS");
  ArtifactWriter out(ctx.out_dir, ctx.config);
  const Policy policy = load_policy(ctx.config, spec);
  const auto* qf = std::get_if<QFunction>(&policy.rule);
  if (!qf) throw ValidationError("region needs a trained Q-function (eval.theta_file)");
  double h[2];
  for (int i = 0; i < 2; ++i) {
    const Json& hv = at_path(ctx.config, i == 0 ? "region.h1" : "region.h2");
    if (!hv.is_null()) {
      h[i] = as_double(hv, "region.h");
    } else {
      const ThresholdTable t = threshold_sweep(model, component_spec(spec, static_cast<std::size_t>(i)),
                                               sweep_grid(ctx.config), eval_options(ctx.config, ctx.threads));
      h[i] = cusum_star(t, model.kappa).h;
    }
  }
  Grid2d g{get_double(ctx.config, "region.lo1"), get_double(ctx.config, "region.hi1"),
           get_double(ctx.config, "region.lo2"), get_double(ctx.config, "region.hi2"),
           static_cast<std::size_t>(get_int(ctx.config, "region.n1")),
           static_cast<std::size_t>(get_int(ctx.config, "region.n2"))};
  const auto cells = decision_region(*qf, g, h[0], h[1]);
  std::vector<std::vector<double>> rows;
  for (const auto& c : cells) rows.push_back({c.s1, c.s2, static_cast<double>(c.phi), static_cast<double>(c.box)});
  out.write_csv("region.csv", {"s1", "s2", "phi", "box"}, rows);
  return {{"h1", h[0]}, {"h2", h[1]}, {"cells", cells.size()}};
}

Json run_recipe(const RunContext& ctx, const std::string& name) {
  const Json& cfg = ctx.config;
  const QcdModel model = parse_model(cfg);
  const SisSpec spec = parse_sis(cfg, model);
  ArtifactWriter out(ctx.out_dir, cfg);
  const Trained t = do_train(ctx, model, spec, out);
  const McOptions mc = eval_options(cfg, ctx.threads);
  const EvalReport q = eval_policy(model, Policy{spec, QFunction{t.basis, t.policy_theta}}, model.kappa, mc);
  out.write_json("eval_report.json", {{"report", to_json(q)}});
  Json comps = Json::array();
  double best_star = std::numeric_limits<double>::infinity();
  double best_se = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(spec.dim()); ++i) {
    const ThresholdTable table = threshold_sweep(model, component_spec(spec, i), sweep_grid(cfg), mc);
    const std::string suffix = spec.dim() == 1 ? "" : "_" + std::to_string(i);
    out.write_csv("threshold_table" + suffix + ".csv", {"h", "mde", "mdd", "se_mde", "se_mdd"}, table_rows(table));
    const auto cs = cusum_star(table, model.kappa);
    if (cs.cost < best_star) {
      best_star = cs.cost;
      best_se = cs.se;
    }
    comps.push_back({{"component", i}, {"shift", spec.components[i].drift.shift}, {"h_star", cs.h}, {"J_star", cs.cost},
                     {"se", cs.se}});
  }
  Json summary{{"recipe", name},
               {"kappa", model.kappa},
               {"q_policy", to_json(q)},
               {"cusum_star", comps},
               {"ratio_to_best_cusum_star", q.cost / best_star},
               {"best_cusum_star_se", best_se},
               {"S", t.result.sample_count},
               {"reset_count", t.result.reset_count}};
  if (spec.dim() == 1)
    summary["threshold"] = to_json(threshold_of(QFunction{t.basis, t.policy_theta}, scan_grid(cfg)));
  if (is_iid(model.pre)) {
    ShiryaevOptions so;
    const Json& rho = at_path(cfg, "eval.shiryaev_rho");
    if (!rho.is_null()) so.rho = as_double(rho, "eval.shiryaev_rho");
    else if (!std::holds_alternative<Geometric>(model.change)) so.rho = nominal_rate(model.change);
    const auto n = static_cast<std::size_t>(get_int(cfg, "eval.shiryaev_grid.n"));
    const ThresholdTable st = shiryaev_sweep(model, uniform_grid(0.0, 1.0, n), mc, so);
    out.write_csv("shiryaev_table.csv", {"h", "mde", "mdd", "se_mde", "se_mdd"}, table_rows(st));
    const auto best = cusum_star(st, model.kappa);
    summary["shiryaev"] = {{"h", best.h}, {"J", best.cost}, {"se", best.se}};
  }
  out.write_json("recipe_summary.json", summary);
  return summary;
}

}  // namespace

Json run_subcommand(const std::string& sub, const RunContext& ctx, const std::string& recipe_name) {
  if (sub == "train") return run_train(ctx);
  if (sub == "eval") return run_eval(ctx);
  if (sub == "sweep") return run_sweep(ctx);
  if (sub == "shiryaev") return run_shiryaev(ctx);
  if (sub == "asymptotics") return run_asymptotics(ctx);
  if (sub == "meanflow") return run_meanflow(ctx);
  if (sub == "batchmeans") return run_batchmeans(ctx);
  if (sub == "region") return run_region(ctx);
  if (sub == "recipe") return run_recipe(ctx, recipe_name);
  throw ValidationError("unknown subcommand '" + sub + "'");
}

}  // namespace qcdq
