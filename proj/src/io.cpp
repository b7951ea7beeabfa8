#include "nmix/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <system_error>
#include <tuple>

namespace nmix {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
  return v;
}

struct CsvReader {
  CsvReader(std::istream& in, std::string file) : is(in), name(std::move(file)) {}

  std::istream& is;
  std::string name;
  std::size_t line_no = 0;
  std::string line;

  // Next non-empty line; false at end of input.
  bool next() {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw DataError(name, line_no, what); }

  void expect_header(std::string_view header) {
    if (!next()) throw DataError(name, 1, "missing header '" + std::string(header) + "'");
    if (line != header) fail("expected header '" + std::string(header) + "', got '" + line + "'");
  }

  std::vector<std::string_view> fields(std::size_t n) {
    auto f = split(line);
    if (f.size() != n)
      fail("expected " + std::to_string(n) + " columns, got " + std::to_string(f.size()));
    return f;
  }

  std::size_t index(std::string_view s, const char* what) const {
    auto v = parse_number<long long>(s);
    if (!v || *v < 1) fail(std::string(what) + " must be a positive integer, got '" + std::string(s) + "'");
    return static_cast<std::size_t>(*v);
  }

  double real(std::string_view s, const char* what) const {
    auto v = parse_number<double>(s);
    if (!v || !std::isfinite(*v)) fail(std::string(what) + " must be a finite number, got '" + std::string(s) + "'");
    return *v;
  }
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const json* find_any(const json& j, std::initializer_list<const char*> keys, std::string* which) {
  const json* found = nullptr;
  for (const char* k : keys) {
    if (j.contains(k)) {
      if (found) throw ConfigError(k, "given together with '" + *which + "'");
      found = &j.at(k);
      *which = k;
    }
  }
  return found;
}

double number_at(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field, "expected a number");
  const double x = v.get<double>();
  if (std::isnan(x)) throw ConfigError(field, "expected a number");
  return x;
}

// Scalar, flat or nested rows x cols matrix, or (when allowed) one row that
// repeats for every site. Scalars stay size 1.
std::vector<double> values_of(const json& v, const std::string& field, std::size_t rows,
                              std::size_t cols, bool allow_row_vector) {
  if (v.is_number()) return {number_at(v, field)};
  if (!v.is_array()) throw ConfigError(field, "expected a number or an array");
  std::vector<double> out;
  if (!v.empty() && v.front().is_array()) {
    if (v.size() != rows)
      throw ConfigError(field, "expected " + std::to_string(rows) + " rows, got " + std::to_string(v.size()));
    for (std::size_t r = 0; r < v.size(); ++r) {
      const auto& row = v[r];
      if (!row.is_array() || row.size() != cols)
        throw ConfigError(field, "row " + std::to_string(r + 1) + " must have " + std::to_string(cols) + " entries");
      for (const auto& x : row) out.push_back(number_at(x, field));
    }
    return out;
  }
  for (const auto& x : v) out.push_back(number_at(x, field));
  if (out.size() == rows * cols) return out;
  if (allow_row_vector && out.size() == cols) {
    std::vector<double> full;
    for (std::size_t r = 0; r < rows; ++r) full.insert(full.end(), out.begin(), out.end());
    return full;
  }
  throw ConfigError(field, "expected 1, " + (allow_row_vector ? std::to_string(cols) + ", " : std::string()) +
                               "or " + std::to_string(rows * cols) + " values, got " + std::to_string(out.size()));
}

std::vector<double> logs_of(std::vector<double> v, const std::string& field, bool allow_zero) {
  for (double& x : v) {
    if (x < 0.0 || (x == 0.0 && !allow_zero) || !std::isfinite(x))
      throw ConfigError(field, allow_zero ? "values must be finite and >= 0" : "values must be finite and > 0");
    x = std::log(x);
  }
  return v;
}

json values_json(const std::vector<double>& v) {
  if (v.size() == 1) return v.front();
  json arr = json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

std::size_t positive_int(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(key, "missing");
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1) throw ConfigError(key, "must be a positive integer");
  return static_cast<std::size_t>(v.get<long long>());
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_counts_csv(std::ostream& os, const Dataset& d) {
  os << kCountsHeader << '\n';
  for (std::size_t i = 0; i < d.sites(); ++i)
    for (std::size_t j = 0; j < d.occasions(); ++j)
      os << i + 1 << ',' << j + 1 << ',' << format_double(d.design.search_time(i, j)) << ','
         << d.records[i].y[j] << '\n';
}

void write_times_csv(std::ostream& os, const Dataset& d) {
  os << kTimesHeader << '\n';
  for (std::size_t i = 0; i < d.sites(); ++i) {
    const auto& rec = d.records[i];
    for (std::size_t j = 0; j < rec.times.size(); ++j)
      for (std::size_t k = 0; k < rec.times[j].size(); ++k)
        os << i + 1 << ',' << j + 1 << ',' << k + 1 << ',' << format_double(rec.times[j][k]) << '\n';
  }
}

Dataset read_dataset(std::istream& counts, std::istream* times, Protocol protocol,
                     const std::string& counts_name, const std::string& times_name) {
  struct Cell {
    double T;
    Count y;
    std::size_t line;
  };
  std::map<std::pair<std::size_t, std::size_t>, Cell> cells;
  std::size_t R = 0;
  std::size_t J = 0;

  CsvReader cr{counts, counts_name};
  cr.expect_header(kCountsHeader);
  while (cr.next()) {
    const auto f = cr.fields(4);
    const std::size_t site = cr.index(f[0], "site");
    const std::size_t occ = cr.index(f[1], "occasion");
    const double T = cr.real(f[2], "search_time");
    if (!(T > 0.0)) cr.fail("search_time must be > 0");
    const auto y = parse_number<long long>(f[3]);
    if (!y || *y < 0) cr.fail("count must be a non-negative integer, got '" + std::string(f[3]) + "'");
    if (!cells.emplace(std::pair{site, occ}, Cell{T, *y, cr.line_no}).second)
      cr.fail("duplicate row for site " + std::to_string(site) + " occasion " + std::to_string(occ));
    R = std::max(R, site);
    J = std::max(J, occ);
  }
  if (cells.empty()) throw DataError(counts_name, cr.line_no + 1, "no data rows");
  if (cells.size() != R * J) {
    for (std::size_t i = 1; i <= R; ++i)
      for (std::size_t j = 1; j <= J; ++j)
        if (!cells.count({i, j}))
          throw DataError(counts_name, cr.line_no + 1,
                          "missing row for site " + std::to_string(i) + " occasion " + std::to_string(j));
  }

  std::vector<double> T(R * J);
  std::vector<SiteRecord> records(R);
  for (std::size_t i = 0; i < R; ++i) {
    records[i].site_id = i;
    records[i].y.resize(J);
    records[i].times.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      const Cell& c = cells.at({i + 1, j + 1});
      T[i * J + j] = c.T;
      records[i].y[j] = c.y;
    }
  }

  if (times) {
    CsvReader tr{*times, times_name};
    tr.expect_header(kTimesHeader);
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> seen;
    while (tr.next()) {
      const auto f = tr.fields(4);
      const std::size_t site = tr.index(f[0], "site");
      const std::size_t occ = tr.index(f[1], "occasion");
      const std::size_t k = tr.index(f[2], "detection_index");
      const double t = tr.real(f[3], "time");
      if (site > R || occ > J)
        tr.fail("site " + std::to_string(site) + " occasion " + std::to_string(occ) + " not in the counts file");
      if (!seen.emplace(std::tuple{site, occ, k}, t).second) tr.fail("duplicate detection_index");
      auto& ts = records[site - 1].times[occ - 1];
      if (k != ts.size() + 1)
        tr.fail("detection_index " + std::to_string(k) + " out of sequence (expected " +
                std::to_string(ts.size() + 1) + ")");
      ts.push_back(t);
    }
  }

  protocol.visits = J == 1 ? Visits::Single : Visits::Multiple;
  return Dataset{protocol, SurveyDesign(R, J, std::move(T)), std::move(records)};
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  std::ostringstream counts;
  std::ostringstream times;
  write_counts_csv(counts, d);
  write_times_csv(times, d);
  write_text_file(dir / "counts.csv", counts.str());
  write_text_file(dir / "times.csv", times.str());
}

Dataset load_dataset(const std::filesystem::path& dir, Protocol protocol) {
  const auto counts_path = dir / "counts.csv";
  const auto times_path = dir / "times.csv";
  std::ifstream counts(counts_path, std::ios::binary);
  if (!counts) throw DataError(counts_path.string(), 0, "cannot open file");
  if (!protocol.records_times())
    return read_dataset(counts, nullptr, protocol, counts_path.string(), times_path.string());
  std::ifstream times(times_path, std::ios::binary);
  if (!times)
    throw DataError(times_path.string(), 0, "cannot open file; protocol " + protocol.name() + " records times");
  return read_dataset(counts, &times, protocol, counts_path.string(), times_path.string());
}

std::pair<Eigen::MatrixXd, std::vector<std::string>> read_site_covariates(
    std::istream& is, std::size_t sites, const std::string& name) {
  CsvReader r{is, name};
  if (!r.next()) throw DataError(name, 1, "missing header");
  auto header = split(r.line);
  if (header.size() < 2 || header[0] != "site") r.fail("header must be 'site,<name>,...'");
  const std::size_t cols = header.size() - 1;
  std::vector<std::string> names{"log_lambda[intercept]"};
  for (std::size_t c = 1; c < header.size(); ++c) names.push_back("log_lambda[" + std::string(header[c]) + "]");

  Eigen::MatrixXd X = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(sites),
                                                static_cast<Eigen::Index>(cols + 1),
                                                std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> filled(sites, false);
  while (r.next()) {
    const auto f = r.fields(cols + 1);
    const std::size_t site = r.index(f[0], "site");
    if (site > sites) r.fail("site " + std::to_string(site) + " not in the data");
    if (filled[site - 1]) r.fail("duplicate site " + std::to_string(site));
    filled[site - 1] = true;
    const auto row = static_cast<Eigen::Index>(site - 1);
    X(row, 0) = 1.0;
    for (std::size_t c = 0; c < cols; ++c) X(row, static_cast<Eigen::Index>(c + 1)) = r.real(f[c + 1], "covariate");
  }
  for (std::size_t i = 0; i < sites; ++i)
    if (!filled[i]) throw DataError(name, r.line_no + 1, "missing site " + std::to_string(i + 1));
  return {X, names};
}

Parameterization params_from_json(const json& j, std::size_t sites, std::size_t occasions) {
  if (!j.is_object()) throw ConfigError("", "parameters must be a JSON object");
  Parameterization p;
  std::string which;
  if (const json* v = find_any(j, {"log_lambda", "lambda"}, &which)) {
    auto vals = values_of(*v, which, sites, 1, false);
    p.log_lambda = which == "lambda" ? logs_of(vals, which, true) : vals;
  } else {
    throw ConfigError("log_lambda", "missing (give log_lambda or lambda)");
  }
  which.clear();
  if (const json* v = find_any(j, {"log_rate", "rate"}, &which)) {
    auto vals = values_of(*v, which, sites, occasions, true);
    p.log_rate = which == "rate" ? logs_of(vals, which, false) : vals;
  } else {
    throw ConfigError("log_rate", "missing (give log_rate or rate)");
  }
  if (auto problems = check_parameters(p, SurveyDesign::constant(sites, occasions, 1.0)); !problems.empty())
    throw ConfigError("", problems.front());
  return p;
}

json params_to_json(const Parameterization& p) {
  json j;
  j["log_lambda"] = values_json(p.log_lambda);
  j["log_rate"] = values_json(p.log_rate);
  return j;
}

Protocol protocol_from_json(const json& j, std::size_t occasions) {
  const Visits visits = occasions == 1 ? Visits::Single : Visits::Multiple;
  if (j.is_string()) {
    auto p = parse_protocol(j.get<std::string>(), visits);
    if (!p) throw ConfigError("protocol", "unknown model '" + j.get<std::string>() + "'");
    return *p;
  }
  if (!j.is_object()) throw ConfigError("protocol", "expected a string or an object");
  if (!j.contains("family") || !j.at("family").is_string()) throw ConfigError("protocol.family", "missing");
  auto p = parse_protocol(j.at("family").get<std::string>(), visits);
  if (!p) throw ConfigError("protocol.family", "unknown family '" + j.at("family").get<std::string>() + "'");
  if (j.contains("process")) {
    if (!j.at("process").is_string()) throw ConfigError("protocol.process", "expected a string");
    auto proc = parse_process(j.at("process").get<std::string>());
    if (!proc) throw ConfigError("protocol.process", "unknown process '" + j.at("process").get<std::string>() + "'");
    p->process = *proc;
  }
  return *p;
}

SimulationSetup simulation_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("", "configuration must be a JSON object");
  const std::size_t R = positive_int(j, "R");
  const std::size_t J = positive_int(j, "J");
  if (!j.contains("protocol")) throw ConfigError("protocol", "missing");
  Protocol proto = protocol_from_json(j.at("protocol"), J);
  proto.visits = J == 1 ? Visits::Single : Visits::Multiple;

  if (!j.contains("T")) throw ConfigError("T", "missing");
  auto T = values_of(j.at("T"), "T", R, J, true);
  if (T.size() == 1) T.assign(R * J, T.front());
  for (double t : T)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("T", "search times must be finite and > 0");

  const Parameterization params = params_from_json(j, R, J);

  std::uint64_t seed = 1;
  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
      throw ConfigError("seed", "must be a non-negative integer");
    seed = s.get<std::uint64_t>();
  }

  SimulationSetup out{SimConfig{SurveyDesign(R, J, T), proto, params, seed}, json::object()};
  json& r = out.resolved;
  r["protocol"] = {{"family", std::string(to_string(proto.family))},
                   {"process", std::string(to_string(proto.process))},
                   {"visits", J == 1 ? "single" : "multiple"}};
  r["R"] = R;
  r["J"] = J;
  r["T"] = values_json(T);
  r["log_lambda"] = values_json(params.log_lambda);
  r["log_rate"] = values_json(params.log_rate);
  r["seed"] = seed;
  return out;
}

json parse_json_text(const std::string& text, const std::string& name) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("", name + ": line " + std::to_string(line) + " column " +
                              std::to_string(col) + ": invalid JSON");
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("", e.what());
  }
  return parse_json_text(text, path.string());
}

json fit_result_to_json(const FitResult& r) {
  json j;
  auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json coefs = json::array();
  for (std::size_t i = 0; i < r.coefficients.size(); ++i)
    coefs.push_back({{"name", r.names[i]},
                     {"estimate", num(r.coefficients[i])},
                     {"std_error", r.free[i] ? num(r.std_errors[i]) : json(nullptr)},
                     {"fixed", !r.free[i]}});
  j["coefficients"] = coefs;
  j["estimates"] = params_to_json(r.estimates);
  j["loglik"] = num(r.loglik);
  j["aic"] = num(r.aic);
  j["free_coefficients"] = r.free_count();
  json cov = json::array();
  for (Eigen::Index a = 0; a < r.covariance.rows(); ++a) {
    json row = json::array();
    for (Eigen::Index b = 0; b < r.covariance.cols(); ++b) row.push_back(num(r.covariance(a, b)));
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["hessian_condition"] = num(r.hessian_condition);
  j["hessian_flagged"] = r.hessian_flagged;
  j["converged"] = r.converged;
  j["n_evals"] = r.n_evals;
  j["messages"] = r.messages;
  return j;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string digest_hex(const json& resolved) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(resolved.dump());
  return os.str();
}

json RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_digest"] = config_digest;
  j["resolved_config"] = resolved_config;
  j["outputs"] = outputs;
  json t = json::object();
  for (const auto& [phase, secs] : timings) t[phase] = secs;
  j["timings_seconds"] = t;
  j["exit_code"] = exit_code;
  return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace nmix
