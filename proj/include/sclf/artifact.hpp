#pragma once

#include <sclf/basis.hpp>
#include <sclf/dynamics.hpp>
#include <sclf/expert.hpp>
#include <sclf/expr.hpp>
#include <sclf/online.hpp>
#include <sclf/silp.hpp>
#include <sclf/types.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sclf {

using Json = nlohmann::json;

struct FingerprintMismatch : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Canonical JSON I/O: sorted keys (nlohmann's ordered std::map), two-space
// indent, LF endings, shortest round-trip floats. Files are written to a temp
// path and renamed into place.

inline std::string canonical_dump(const Json& j) { return j.dump(2) + "\n"; }

inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ArtifactError("cannot open for writing: " + tmp.string());
    os << contents;
  }
  std::filesystem::rename(tmp, path);
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("cannot open: " + path.string());
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    throw ArtifactError("JSON parse failure in " + path.string() + ": " + e.what());
  }
  return j;
}

inline Json vec_to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const Json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline Json mat_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Mat mat_from_json(const Json& rows) {
  const auto nr = rows.size();
  const auto nc = nr ? rows[0].size() : 0;
  Mat m(nr, nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  return m;
}

// ---------------------------------------------------------------------------
// Run configuration

struct SimSection {
  double t_s = 0.05;
  double t_final = 20.0;
  int substeps = 10;
  int x0_count = 20;
  std::uint64_t x0_seed = 0;
  bool has_x0_seed = false;
  std::vector<Vec> x0_set;       // overrides sampling when nonempty
  double x0_sublevel = 0.9;      // fraction of the largest safe V-level
};

struct RunConfig {
  std::string system_name;           // empty for custom systems
  std::optional<Json> custom_system;
  std::optional<Vec> domain_lo, domain_hi;  // optional override for named systems
  Vec q_diag, r_diag;
  OcpConfig ocp;
  int basis_directions = 0;
  std::vector<double> basis_scales;  // empty: default law
  int basis_p = 2;
  std::uint64_t basis_seed = 0;
  SynthConfig synth;
  double eps_n = 1e-6;
  ControlMode online_mode = ControlMode::Explicit;
  double t_on = 0.5;
  SimSection sim;
  Json raw;  // echoed into the artifact
};

inline ControlMode mode_from_string(const std::string& s) {
  if (s == "explicit") return ControlMode::Explicit;
  if (s == "min_distance") return ControlMode::MinDistance;
  if (s == "generic_qp") return ControlMode::GenericQp;
  if (s == "local_refined") return ControlMode::LocalRefined;
  throw ConfigError("unknown controller mode '" + s + "'");
}

namespace detail {

template <typename T>
T require_field(const Json& j, const char* key, const char* where) {
  if (!j.contains(key))
    throw ConfigError(std::string(where) + ": missing required key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string(where) + ": bad value for '" + key + "'");
  }
}

template <typename T>
T optional_field(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
  RunConfig c;
  c.raw = j;

  if (j.contains("system") && j.at("system").is_string())
    c.system_name = j.at("system").get<std::string>();
  else if (j.contains("custom_system"))
    c.custom_system = j.at("custom_system");
  else
    throw ConfigError("config: need 'system' (name) or 'custom_system'");
  if (j.contains("domain_lo") != j.contains("domain_hi"))
    throw ConfigError("config: domain_lo and domain_hi must be given together");
  if (j.contains("domain_lo")) {
    c.domain_lo = vec_from_json(j.at("domain_lo"));
    c.domain_hi = vec_from_json(j.at("domain_hi"));
  }

  const Json& cost = j.contains("cost") ? j.at("cost") : throw ConfigError("config: missing 'cost'");
  c.q_diag = vec_from_json(detail::require_field<Json>(cost, "q_diag", "cost"));
  c.r_diag = vec_from_json(detail::require_field<Json>(cost, "r_diag", "cost"));

  const Json& ocp = j.contains("ocp") ? j.at("ocp") : throw ConfigError("config: missing 'ocp'");
  c.ocp.horizon = detail::require_field<double>(ocp, "horizon", "ocp");
  c.ocp.tau_s = detail::require_field<double>(ocp, "tau_s", "ocp");
  c.ocp.max_iters = detail::optional_field<int>(ocp, "max_iters", 400);
  c.ocp.tol = detail::optional_field<double>(ocp, "tol", 1e-7);
  c.ocp.warm_start = detail::optional_field<bool>(ocp, "warm_start", true);
  c.ocp.steps();  // validates

  const Json& basis = j.contains("basis") ? j.at("basis") : throw ConfigError("config: missing 'basis'");
  c.basis_directions = detail::require_field<int>(basis, "directions", "basis");
  if (basis.contains("scales"))
    for (const auto& s : basis.at("scales")) c.basis_scales.push_back(s.get<double>());
  c.basis_p = detail::optional_field<int>(basis, "p", 2);
  c.basis_seed = detail::require_field<std::uint64_t>(basis, "seed", "basis");

  const Json& synth = j.contains("synth") ? j.at("synth") : throw ConfigError("config: missing 'synth'");
  c.synth.n_g = detail::require_field<int>(synth, "n_g", "synth");
  if (c.synth.n_g < 1) throw ConfigError("synth: n_g must be >= 1");
  c.synth.tol_viol = detail::optional_field<double>(synth, "tol_viol", -1.0);
  c.synth.iter_cap = detail::optional_field<int>(synth, "iter_cap", 500);
  c.synth.wall_cap_s = detail::optional_field<double>(synth, "wall_cap_s", 0.0);
  c.synth.seed = detail::require_field<std::uint64_t>(synth, "seed", "synth");
  c.synth.search.starts = detail::optional_field<int>(synth, "starts", 64);
  c.synth.search.step_min_rel = detail::optional_field<double>(synth, "step_min_rel", 1e-4);
  c.synth.search.max_polls = detail::optional_field<int>(synth, "max_polls", 200);
  c.eps_n = detail::require_field<double>(synth, "eps_n", "synth");

  const Json& online = j.contains("online") ? j.at("online") : throw ConfigError("config: missing 'online'");
  c.online_mode = mode_from_string(detail::require_field<std::string>(online, "mode", "online"));
  c.t_on = detail::optional_field<double>(online, "t_on", 0.5);

  const Json& sim = j.contains("sim") ? j.at("sim") : throw ConfigError("config: missing 'sim'");
  c.sim.t_s = detail::require_field<double>(sim, "t_s", "sim");
  c.sim.t_final = detail::require_field<double>(sim, "t_final", "sim");
  c.sim.substeps = detail::optional_field<int>(sim, "substeps", 10);
  c.sim.x0_sublevel = detail::optional_field<double>(sim, "x0_sublevel", 0.9);
  if (sim.contains("x0_set")) {
    for (const auto& row : sim.at("x0_set")) c.sim.x0_set.push_back(vec_from_json(row));
  } else {
    c.sim.x0_count = detail::require_field<int>(sim, "x0_count", "sim");
    c.sim.x0_seed = detail::require_field<std::uint64_t>(sim, "x0_seed", "sim");
    c.sim.has_x0_seed = true;
  }
  return c;
}

// ---------------------------------------------------------------------------
// System construction (named benchmarks or expression-defined)

inline ControlAffineSystem make_custom_system(const Json& spec) {
  const std::string name = detail::optional_field<std::string>(spec, "name", "custom");
  const int n = detail::require_field<int>(spec, "n", "custom_system");
  const int m = detail::require_field<int>(spec, "m", "custom_system");

  std::vector<Expr> drift_exprs;
  for (const auto& s : detail::require_field<Json>(spec, "drift", "custom_system"))
    drift_exprs.push_back(Expr::parse(s.get<std::string>(), n));
  if (static_cast<int>(drift_exprs.size()) != n)
    throw ConfigError("custom_system: drift needs n expressions");

  std::vector<std::vector<Expr>> b_exprs;
  for (const auto& row : detail::require_field<Json>(spec, "input_map", "custom_system")) {
    std::vector<Expr> r;
    for (const auto& s : row) r.push_back(Expr::parse(s.get<std::string>(), n));
    if (static_cast<int>(r.size()) != m) throw ConfigError("custom_system: input_map row width != m");
    b_exprs.push_back(std::move(r));
  }
  if (static_cast<int>(b_exprs.size()) != n)
    throw ConfigError("custom_system: input_map needs n rows");

  ControlAffineSystem sys;
  sys.name = name;
  sys.n = n;
  sys.m = m;
  sys.drift = [drift_exprs, n](const Vec& x) {
    Vec a(n);
    for (int i = 0; i < n; ++i) a[i] = drift_exprs[i].eval(x);
    return a;
  };
  sys.input_map = [b_exprs, n, m](const Vec& x) {
    Mat b(n, m);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < m; ++k) b(i, k) = b_exprs[i][k].eval(x);
    return b;
  };

  if (spec.contains("u_max")) {
    sys.input_set = InputSet::box(vec_from_json(spec.at("u_max")));
  } else if (spec.contains("vertices")) {
    std::vector<Vec> verts;
    for (const auto& row : spec.at("vertices")) verts.push_back(vec_from_json(row));
    sys.input_set = InputSet::polytope(std::move(verts));
  } else {
    throw ConfigError("custom_system: need 'u_max' or 'vertices'");
  }
  sys.domain = DomainBox(vec_from_json(detail::require_field<Json>(spec, "domain_lo", "custom_system")),
                         vec_from_json(detail::require_field<Json>(spec, "domain_hi", "custom_system")));

  const Vec residual = sys.drift(Vec::Zero(n));
  if (residual.norm() > 1e-9) {
    const auto raw = sys.drift;
    sys.drift = [raw, residual](const Vec& x) { return (raw(x) - residual).eval(); };
    sys.drift_offset = residual;
  } else {
    sys.drift_offset = Vec::Zero(n);
  }
  sys.fingerprint_payload = "custom:" + canonical_dump(spec);
  return sys;
}

inline ControlAffineSystem make_system(const RunConfig& cfg) {
  ControlAffineSystem sys;
  if (cfg.custom_system) {
    sys = make_custom_system(*cfg.custom_system);
  } else if (cfg.system_name == "bioreactor") {
    sys = make_bioreactor();
  } else if (cfg.system_name == "vtol") {
    sys = make_vtol();
  } else if (cfg.system_name == "drone") {
    sys = make_drone();
  } else {
    throw ConfigError("unknown system '" + cfg.system_name + "'");
  }
  if (cfg.domain_lo) {
    if (cfg.domain_lo->size() != sys.n || cfg.domain_hi->size() != sys.n)
      throw ConfigError("domain override length does not match the system dimension");
    sys.domain = DomainBox(*cfg.domain_lo, *cfg.domain_hi);
    std::ostringstream os;
    os.precision(17);
    os << " domain_override=";
    for (int i = 0; i < sys.n; ++i) os << (*cfg.domain_lo)[i] << ":" << (*cfg.domain_hi)[i] << ",";
    sys.fingerprint_payload += os.str();
  }
  return sys;
}

inline std::string fingerprint_hex(const ControlAffineSystem& sys) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(sys.fingerprint()));
  return buf;
}

// ---------------------------------------------------------------------------
// Basis serialization

inline Json basis_to_json(const BasisSet& basis) {
  Json out;
  out["seed"] = basis.seed;
  out["dim"] = basis.dim;
  Json fns = Json::array();
  for (const auto& f : basis.functions) {
    Json jf;
    if (f.type == BasisFunction::Type::QuadraticForm) {
      jf["type"] = "quadratic";
      jf["p_matrix"] = mat_to_json(f.P);
    } else {
      jf["type"] = "power";
      jf["a"] = vec_to_json(f.a);
      jf["p"] = f.p;
    }
    fns.push_back(std::move(jf));
  }
  out["functions"] = std::move(fns);
  return out;
}

inline BasisSet basis_from_json(const Json& j) {
  BasisSet set;
  set.seed = j.at("seed").get<std::uint64_t>();
  set.dim = j.at("dim").get<int>();
  for (const auto& jf : j.at("functions")) {
    const std::string type = jf.at("type").get<std::string>();
    if (type == "quadratic")
      set.functions.push_back(BasisFunction::quadratic(mat_from_json(jf.at("p_matrix"))));
    else if (type == "power")
      set.functions.push_back(
          BasisFunction::power(vec_from_json(jf.at("a")), jf.at("p").get<int>()));
    else
      throw ArtifactError("basis_from_json: unknown function type '" + type + "'");
  }
  if (set.functions.empty() || set.functions.front().type != BasisFunction::Type::QuadraticForm)
    throw ArtifactError("basis_from_json: first function must be the quadratic form");
  return set;
}

// ---------------------------------------------------------------------------
// The artifact: everything needed to redeploy and re-audit a synthesized SCLF.

struct SclfArtifact {
  int format_version = 1;
  std::string system_name;
  std::string system_fingerprint;
  Vec q_diag, r_diag;
  OcpConfig ocp;
  TerminalIngredients terminal;
  BasisSet basis;
  Coefficients alpha;  // full length, pruned entries zeroed
  std::vector<int> kept_indices;
  double eps_n = 0.0;
  SynthesisReport report;
  double verified_tol = 0.0;
  int audit_points = 0;
  double max_audit_omega = 0.0;
  std::uint64_t audit_seed = 0;
  bool verified = false;
  Json config_echo;
};

inline const char* to_string(SynthStatus s) {
  switch (s) {
    case SynthStatus::Verified: return "verified";
    case SynthStatus::Unverified: return "unverified";
    case SynthStatus::InfeasibleLp: return "infeasible_lp";
  }
  return "?";
}

inline SynthStatus synth_status_from_string(const std::string& s) {
  if (s == "verified") return SynthStatus::Verified;
  if (s == "unverified") return SynthStatus::Unverified;
  if (s == "infeasible_lp") return SynthStatus::InfeasibleLp;
  throw ArtifactError("bad synthesis status '" + s + "'");
}

inline Json artifact_to_json(const SclfArtifact& a) {
  Json j;
  j["format_version"] = a.format_version;
  j["system"]["name"] = a.system_name;
  j["system"]["fingerprint"] = a.system_fingerprint;
  j["cost"]["q_diag"] = vec_to_json(a.q_diag);
  j["cost"]["r_diag"] = vec_to_json(a.r_diag);
  j["ocp"]["horizon"] = a.ocp.horizon;
  j["ocp"]["tau_s"] = a.ocp.tau_s;
  j["ocp"]["max_iters"] = a.ocp.max_iters;
  j["ocp"]["tol"] = a.ocp.tol;
  j["ocp"]["warm_start"] = a.ocp.warm_start;
  j["terminal"]["s"] = mat_to_json(a.terminal.S);
  j["terminal"]["k"] = mat_to_json(a.terminal.K);
  j["terminal"]["kappa"] = a.terminal.kappa;
  j["basis"] = basis_to_json(a.basis);
  j["alpha"]["values"] = vec_to_json(a.alpha);
  j["alpha"]["kept_indices"] = a.kept_indices;
  j["alpha"]["eps_n"] = a.eps_n;
  Json rep;
  rep["status"] = to_string(a.report.status);
  rep["iterations"] = a.report.iterations;
  rep["omega_star_trace"] = a.report.omega_star_trace;
  rep["lp_objective_trace"] = a.report.lp_objective_trace;
  rep["wall_time_s"] = a.report.wall_time_s;
  rep["tol_viol"] = a.report.tol_viol;
  rep["n_basis"] = a.report.n_basis;
  rep["pruned_count"] = a.report.pruned_count;
  rep["final_omega_star"] = a.report.final_omega_star;
  Json cuts = Json::array();
  for (const auto& x : a.report.cut_points) cuts.push_back(vec_to_json(x));
  rep["cut_points"] = std::move(cuts);
  Json inits = Json::array();
  for (const auto& x : a.report.initial_points) inits.push_back(vec_to_json(x));
  rep["initial_points"] = std::move(inits);
  j["report"] = std::move(rep);
  j["certificate"]["verified"] = a.verified;
  j["certificate"]["verified_tol"] = a.verified_tol;
  j["certificate"]["audit_points"] = a.audit_points;
  j["certificate"]["max_audit_omega"] = a.max_audit_omega;
  j["certificate"]["audit_seed"] = a.audit_seed;
  j["config_echo"] = a.config_echo;
  return j;
}

inline SclfArtifact artifact_from_json(const Json& j) {
  SclfArtifact a;
  try {
    a.format_version = j.at("format_version").get<int>();
    a.system_name = j.at("system").at("name").get<std::string>();
    a.system_fingerprint = j.at("system").at("fingerprint").get<std::string>();
    a.q_diag = vec_from_json(j.at("cost").at("q_diag"));
    a.r_diag = vec_from_json(j.at("cost").at("r_diag"));
    a.ocp.horizon = j.at("ocp").at("horizon").get<double>();
    a.ocp.tau_s = j.at("ocp").at("tau_s").get<double>();
    a.ocp.max_iters = j.at("ocp").at("max_iters").get<int>();
    a.ocp.tol = j.at("ocp").at("tol").get<double>();
    a.ocp.warm_start = j.at("ocp").at("warm_start").get<bool>();
    a.terminal.S = mat_from_json(j.at("terminal").at("s"));
    a.terminal.K = mat_from_json(j.at("terminal").at("k"));
    a.terminal.kappa = j.at("terminal").at("kappa").get<double>();
    a.basis = basis_from_json(j.at("basis"));
    a.alpha = vec_from_json(j.at("alpha").at("values"));
    a.kept_indices = j.at("alpha").at("kept_indices").get<std::vector<int>>();
    a.eps_n = j.at("alpha").at("eps_n").get<double>();
    const Json& rep = j.at("report");
    a.report.status = synth_status_from_string(rep.at("status").get<std::string>());
    a.report.iterations = rep.at("iterations").get<int>();
    a.report.omega_star_trace = rep.at("omega_star_trace").get<std::vector<double>>();
    a.report.lp_objective_trace = rep.at("lp_objective_trace").get<std::vector<double>>();
    a.report.wall_time_s = rep.at("wall_time_s").get<std::vector<double>>();
    a.report.tol_viol = rep.at("tol_viol").get<double>();
    a.report.n_basis = rep.at("n_basis").get<int>();
    a.report.pruned_count = rep.at("pruned_count").get<int>();
    a.report.final_omega_star = rep.at("final_omega_star").get<double>();
    for (const auto& x : rep.at("cut_points")) a.report.cut_points.push_back(vec_from_json(x));
    for (const auto& x : rep.at("initial_points"))
      a.report.initial_points.push_back(vec_from_json(x));
    a.verified = j.at("certificate").at("verified").get<bool>();
    a.verified_tol = j.at("certificate").at("verified_tol").get<double>();
    a.audit_points = j.at("certificate").at("audit_points").get<int>();
    a.max_audit_omega = j.at("certificate").at("max_audit_omega").get<double>();
    a.audit_seed = j.at("certificate").at("audit_seed").get<std::uint64_t>();
    a.config_echo = j.at("config_echo");
  } catch (const Json::exception& e) {
    throw ArtifactError(std::string("artifact_from_json: ") + e.what());
  }
  return a;
}

inline void save_artifact(const SclfArtifact& a, const std::filesystem::path& path) {
  write_file_atomic(path, canonical_dump(artifact_to_json(a)));
}

inline SclfArtifact load_artifact(const std::filesystem::path& path) {
  return artifact_from_json(read_json_file(path));
}

}  // namespace sclf
