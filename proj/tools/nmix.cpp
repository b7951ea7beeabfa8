// nmix: simulate, fit, evaluate and cross-check N-mixture likelihoods.
//
// Exit codes: 0 ok, 2 configuration or data error, 3 fit flagged (result
// still written), 4 oracle failure or discrepancy above tolerance.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "nmix/estimate.hpp"
#include "nmix/io.hpp"
#include "nmix/likelihood.hpp"
#include "nmix/oracle.hpp"
#include "nmix/simulate.hpp"

namespace fs = std::filesystem;
using namespace nmix;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kFlagged = 3;
constexpr int kOracleFailure = 4;

struct Args {
  std::string model;
  std::string process;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> nmax;
  std::optional<double> tol;
  std::string out;
  std::string config;
  std::string data;
  std::string params;
  std::string covariates;
  std::optional<std::size_t> max_evals;
  bool exclude_constants = false;
  bool no_multistart = false;
};

class Timer {
 public:
  void lap(const std::string& phase) {
    const auto now = std::chrono::steady_clock::now();
    laps_.emplace_back(phase, std::chrono::duration<double>(now - last_).count());
    last_ = now;
  }
  const auto& laps() const { return laps_; }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, double>> laps_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

json optional_config(const Args& a) {
  if (a.config.empty()) return json::object();
  json j = read_json_file(a.config);
  if (!j.is_object()) throw ConfigError("", a.config + ": expected a JSON object");
  return j;
}

// Flag value, else config key, else fallback.
template <class T>
T resolve(const std::optional<T>& flag, const json& cfg, const char* key, T fallback) {
  if (flag) return *flag;
  if (cfg.contains(key)) {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(key, "wrong type");
    }
  }
  return fallback;
}

std::string resolve_string(const std::string& flag, const json& cfg, const char* key) {
  if (!flag.empty()) return flag;
  if (cfg.contains(key)) {
    if (!cfg.at(key).is_string()) throw ConfigError(key, "expected a string");
    return cfg.at(key).get<std::string>();
  }
  return {};
}

struct LoadedData {
  Dataset data;
  std::string digest;
};

Protocol protocol_from_flags(const std::string& model, const std::string& process) {
  if (model.empty()) throw ConfigError("model", "missing (use --model)");
  auto proto = parse_protocol(model, Visits::Single);
  if (!proto) throw ConfigError("model", "unknown model '" + model + "'");
  if (!process.empty()) {
    auto proc = parse_process(process);
    if (!proc) throw ConfigError("process", "unknown process '" + process + "' (binomial or poisson)");
    proto->process = *proc;
  }
  return *proto;
}

// Protocol from --model / --process, checked against the loaded data.
LoadedData load(const std::string& dir, const std::string& model, const std::string& process) {
  if (dir.empty()) throw ConfigError("data", "missing (use --data)");
  const Protocol declared = protocol_from_flags(model, process);
  Dataset d = load_dataset(dir, declared);
  if (model.find(':') != std::string::npos && d.protocol.visits != declared.visits)
    throw ConfigError("model", "model " + declared.name() + " does not match data with J = " +
                                   std::to_string(d.occasions()));
  require_valid(d);
  for (const auto& w : boundary_warnings(d))
    std::cerr << "warning: " << w.message << "\n";
  const std::string bytes = slurp(fs::path(dir) / "counts.csv") +
                            (d.protocol.records_times() ? slurp(fs::path(dir) / "times.csv") : "");
  return {std::move(d), hex64(fnv1a64(bytes))};
}

void emit(const std::string& out, const json& payload, RunManifest& manifest) {
  const std::string text = payload.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
    std::cerr << manifest.to_json().dump() << "\n";
    return;
  }
  write_text_file(out, text);
  manifest.outputs.push_back(out);
  write_text_file(out + ".manifest.json", manifest.to_json().dump(2) + "\n");
}

int cmd_simulate(const Args& a) {
  Timer timer;
  if (a.config.empty()) throw ConfigError("config", "missing (use --config)");
  if (a.out.empty()) throw ConfigError("out", "missing output directory (use --out)");
  json cfg = read_json_file(a.config);
  if (!cfg.is_object()) throw ConfigError("", a.config + ": expected a JSON object");
  if (!a.model.empty()) cfg["protocol"] = a.model;
  if (!a.process.empty()) {
    if (!cfg.contains("protocol")) throw ConfigError("protocol", "missing");
    const std::size_t J = cfg.contains("J") && cfg["J"].is_number_integer() ? cfg["J"].get<std::size_t>() : 1;
    Protocol p = protocol_from_json(cfg["protocol"], J);
    auto proc = parse_process(a.process);
    if (!proc) throw ConfigError("process", "unknown process '" + a.process + "'");
    cfg["protocol"] = {{"family", std::string(to_string(p.family))},
                       {"process", std::string(to_string(*proc))}};
  }
  if (a.seed) cfg["seed"] = *a.seed;
  SimulationSetup setup = simulation_from_json(cfg);
  timer.lap("configure");

  const Dataset d = simulate_dataset(setup.config);
  timer.lap("simulate");

  const fs::path dir(a.out);
  save_dataset(dir, d);
  timer.lap("write");

  RunManifest m;
  m.command = "simulate";
  m.resolved_config = setup.resolved;
  m.config_digest = digest_hex(setup.resolved);
  m.outputs = {(dir / "counts.csv").string(), (dir / "times.csv").string()};
  m.timings = timer.laps();
  write_text_file(dir / "manifest.json", m.to_json().dump(2) + "\n");
  std::cerr << "simulated " << d.sites() << " sites x " << d.occasions() << " occasions ("
            << d.protocol.name() << ") into " << dir.string() << "\n";
  return kOk;
}

int cmd_fit(const Args& a) {
  Timer timer;
  const json cfg = optional_config(a);
  const std::string model = resolve_string(a.model, cfg, "model");
  const std::string process = resolve_string(a.process, cfg, "process");
  const std::string data_dir = resolve_string(a.data, cfg, "data");
  const std::string cov_path = resolve_string(a.covariates, cfg, "covariates");
  LoadedData loaded = load(data_dir, model, process);
  const Dataset& d = loaded.data;

  FitOptions opts;
  opts.tol = resolve(a.tol, cfg, "tol", opts.tol);
  opts.max_evals = resolve(a.max_evals, cfg, "max_evals", opts.max_evals);
  opts.seed = resolve(a.seed, cfg, "seed", opts.seed);
  opts.fallback_multistart = !a.no_multistart && resolve<bool>(std::nullopt, cfg, "multistart", true);
  if (!(opts.tol > 0.0)) throw ConfigError("tol", "must be > 0");

  LinkModel link;
  std::string cov_digest;
  if (!cov_path.empty()) {
    std::ifstream in(cov_path, std::ios::binary);
    if (!in) throw DataError(cov_path, 0, "cannot open file");
    auto [X, names] = read_site_covariates(in, d.sites(), cov_path);
    link.abundance = std::move(X);
    link.abundance_names = std::move(names);
    cov_digest = hex64(fnv1a64(slurp(cov_path)));
  }
  timer.lap("load");

  const FitResult r = fit(d, link, std::nullopt, opts);
  timer.lap("fit");

  json resolved = {{"command", "fit"},     {"model", d.protocol.name()},
                   {"data_digest", loaded.digest}, {"covariates_digest", cov_digest},
                   {"tol", opts.tol},      {"max_evals", opts.max_evals},
                   {"seed", opts.seed},    {"multistart", opts.fallback_multistart},
                   {"hessian_step", opts.hessian_step}, {"condition_limit", opts.condition_limit}};
  json payload = fit_result_to_json(r);
  payload["model"] = d.protocol.name();
  const int code = r.converged && !r.hessian_flagged ? kOk : kFlagged;

  RunManifest m;
  m.command = "fit";
  m.resolved_config = resolved;
  m.config_digest = digest_hex(resolved);
  m.exit_code = code;
  m.timings = timer.laps();
  emit(a.out, payload, m);
  for (const auto& msg : r.messages) std::cerr << "note: " << msg << "\n";
  return code;
}

Parameterization load_params(const std::string& path, const Dataset& d) {
  if (path.empty()) throw ConfigError("params", "missing (use --params)");
  return params_from_json(read_json_file(path), d.sites(), d.occasions());
}

int cmd_loglik(const Args& a) {
  Timer timer;
  const json cfg = optional_config(a);
  LoadedData loaded = load(resolve_string(a.data, cfg, "data"), resolve_string(a.model, cfg, "model"),
                           resolve_string(a.process, cfg, "process"));
  const std::string params_path = resolve_string(a.params, cfg, "params");
  const Parameterization p = load_params(params_path, loaded.data);
  timer.lap("load");

  LikelihoodOptions lo;
  lo.include_constants = !a.exclude_constants;
  const LogLik ll = total_loglik(loaded.data, p, lo);
  timer.lap("evaluate");

  json payload;
  payload["model"] = loaded.data.protocol.name();
  payload["loglik"] = ll.total;
  payload["constants_included"] = ll.irrelevant_constant_included;
  payload["per_site"] = ll.per_site;
  if (!ll.fallback_sites.empty()) {
    json sites = json::array();
    for (auto s : ll.fallback_sites) sites.push_back(s + 1);
    payload["series_fallback_sites"] = sites;
  }
  json resolved = {{"command", "loglik"}, {"model", loaded.data.protocol.name()},
                   {"data_digest", loaded.digest}, {"params_digest", hex64(fnv1a64(slurp(params_path)))},
                   {"include_constants", lo.include_constants}};
  RunManifest m;
  m.command = "loglik";
  m.resolved_config = resolved;
  m.config_digest = digest_hex(resolved);
  m.timings = timer.laps();
  emit(a.out, payload, m);
  return kOk;
}

int cmd_validate(const Args& a) {
  Timer timer;
  const json cfg = optional_config(a);
  LoadedData loaded = load(resolve_string(a.data, cfg, "data"), resolve_string(a.model, cfg, "model"),
                           resolve_string(a.process, cfg, "process"));
  const Dataset& d = loaded.data;
  const std::string params_path = resolve_string(a.params, cfg, "params");
  const Parameterization p = load_params(params_path, d);
  const double tol = resolve(a.tol, cfg, "tol", 1e-8);
  OracleConfig oc;
  oc.n_max = resolve(a.nmax, cfg, "nmax", default_n_max(d, p));
  timer.lap("load");

  const LogLik exact = total_loglik(d, p);
  json sites = json::array();
  double max_diff = 0.0;
  std::size_t worst = 0;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < d.sites(); ++i) {
    json row = {{"site", i + 1}, {"exact", exact.per_site[i]}};
    try {
      const OracleResult o = oracle_site_loglik(oracle_site(d, p, i), oc);
      const double diff = std::abs(exact.per_site[i] - o.log_value);
      const double shown = exact.per_site[i] == o.log_value ? 0.0 : diff;
      row["oracle"] = o.log_value;
      row["terms"] = o.terms;
      row["abs_diff"] = std::isfinite(shown) ? json(shown) : json(nullptr);
      if (!(shown <= max_diff)) {
        max_diff = std::isfinite(shown) ? shown : std::numeric_limits<double>::infinity();
        worst = i + 1;
      }
    } catch (const OracleError& e) {
      ++failures;
      row["oracle_error"] = e.what();
      row["oracle_error_kind"] = e.kind() == OracleError::Kind::Support ? "support" : "not_converged";
    }
    sites.push_back(row);
  }
  timer.lap("compare");

  json report;
  report["model"] = d.protocol.name();
  report["n_max"] = *oc.n_max;
  report["tolerance"] = tol;
  report["max_abs_discrepancy"] = std::isfinite(max_diff) ? json(max_diff) : json(nullptr);
  report["worst_site"] = worst;
  report["oracle_failures"] = failures;
  if (d.protocol.times_uninformative())
    report["note"] =
        "time terms excluded from the parameter kernel: under the Poisson process the recorded "
        "times carry no information on lambda or gamma";
  report["sites"] = sites;

  const bool ok = failures == 0 && max_diff < tol;
  json resolved = {{"command", "validate"}, {"model", d.protocol.name()},
                   {"data_digest", loaded.digest}, {"params_digest", hex64(fnv1a64(slurp(params_path)))},
                   {"nmax", *oc.n_max}, {"tol", tol},
                   {"tail_tol", oc.tail_tol}};
  RunManifest m;
  m.command = "validate";
  m.resolved_config = resolved;
  m.config_digest = digest_hex(resolved);
  m.exit_code = ok ? kOk : kOracleFailure;
  m.timings = timer.laps();
  emit(a.out, report, m);

  if (failures > 0) {
    for (const auto& s : sites)
      if (s.contains("oracle_error")) std::cerr << "oracle: " << s["oracle_error"].get<std::string>() << "\n";
  }
  if (d.protocol.times_uninformative()) std::cerr << "note: " << report["note"].get<std::string>() << "\n";
  std::cerr << "max |exact - oracle| = " << max_diff << " (tolerance " << tol << ")\n";
  return ok ? kOk : kOracleFailure;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
  } catch (const InvalidDataset& e) {
    std::cerr << "invalid data: " << e.what() << "\n";
    for (const auto& v : e.violations()) std::cerr << "  " << v.message << "\n";
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
  } catch (const LikelihoodError& e) {
    std::cerr << "likelihood error: " << e.what() << "\n";
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
  } catch (const OracleError& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return kOracleFailure;
  }
  return kInputError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"N-mixture likelihoods: simulate, fit, evaluate and cross-check"};
  app.require_subcommand(1);
  Args a;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--model", a.model, "protocol, e.g. Count:M, CountT1:S, PCountT:M");
    sub->add_option("--process", a.process, "binomial or poisson (overrides a P prefix)");
    sub->add_option("--config", a.config, "JSON file; flags take precedence");
    sub->add_option("--out", a.out, "output path");
  };

  auto* sim = app.add_subcommand("simulate", "simulate a dataset from a JSON configuration");
  common(sim);
  sim->add_option("--seed", a.seed, "random seed");

  auto* fitc = app.add_subcommand("fit", "maximum-likelihood fit");
  common(fitc);
  fitc->add_option("--data", a.data, "directory with counts.csv and times.csv");
  fitc->add_option("--seed", a.seed, "multistart seed");
  fitc->add_option("--tol", a.tol, "simplex convergence tolerance");
  fitc->add_option("--max-evals", a.max_evals, "likelihood evaluation budget");
  fitc->add_option("--site-covariates", a.covariates, "CSV site,<name>,... for log lambda");
  fitc->add_flag("--no-multistart", a.no_multistart, "skip the jittered restarts");

  auto* llc = app.add_subcommand("loglik", "evaluate the log-likelihood at given parameters");
  common(llc);
  llc->add_option("--data", a.data, "directory with counts.csv and times.csv");
  llc->add_option("--params", a.params, "parameter JSON");
  llc->add_flag("--exclude-constants", a.exclude_constants, "drop parameter-free terms");

  auto* val = app.add_subcommand("validate", "compare closed forms with the truncated-sum oracle");
  common(val);
  val->add_option("--data", a.data, "directory with counts.csv and times.csv");
  val->add_option("--params", a.params, "parameter JSON");
  val->add_option("--nmax", a.nmax, "oracle truncation point");
  val->add_option("--tol", a.tol, "allowed absolute discrepancy (default 1e-8)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kInputError;
  }

  if (sim->parsed()) return guarded([&] { return cmd_simulate(a); });
  if (fitc->parsed()) return guarded([&] { return cmd_fit(a); });
  if (llc->parsed()) return guarded([&] { return cmd_loglik(a); });
  return guarded([&] { return cmd_validate(a); });
}
