#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "nmix/estimate.hpp"
#include "nmix/model.hpp"
#include "nmix/simulate.hpp"

namespace nmix {

using json = nlohmann::ordered_json;

// Malformed data file; line is 1-based (the header is line 1).
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        file_(file), line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

// Unusable configuration; field names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field.empty() ? what : "field '" + field + "': " + what),
        field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

inline constexpr std::string_view kCountsHeader = "site,occasion,search_time,count";
inline constexpr std::string_view kTimesHeader = "site,occasion,detection_index,time";

// Shortest text that reads back to the same double.
std::string format_double(double v);

void write_counts_csv(std::ostream& os, const Dataset& d);
void write_times_csv(std::ostream& os, const Dataset& d);

// Parses the long-format files. The grid size comes from the largest site and
// occasion seen; every cell must appear exactly once. `times` may be null
// when the protocol records no times. Visits are set from J.
Dataset read_dataset(std::istream& counts, std::istream* times, Protocol protocol,
                     const std::string& counts_name = "counts.csv",
                     const std::string& times_name = "times.csv");

// <dir>/counts.csv and <dir>/times.csv.
void save_dataset(const std::filesystem::path& dir, const Dataset& d);
// times.csv is read only when the protocol records times.
Dataset load_dataset(const std::filesystem::path& dir, Protocol protocol);

// Site covariate file `site,<name>,...`; returns an R x (1 + columns) design
// with a leading intercept, plus coefficient names.
std::pair<Eigen::MatrixXd, std::vector<std::string>> read_site_covariates(
    std::istream& is, std::size_t sites, const std::string& name = "covariates.csv");

// {"log_lambda" | "lambda": scalar or R-vector,
//  "log_rate" | "rate": scalar or R x J matrix (nested or flat)}
Parameterization params_from_json(const json& j, std::size_t sites, std::size_t occasions);
json params_to_json(const Parameterization& p);

// Protocol as "CountT:M" or {"family": ..., "process": ..., "visits": ...}.
Protocol protocol_from_json(const json& j, std::size_t occasions);

struct SimulationSetup {
  SimConfig config;
  json resolved;  // canonical form, used for the manifest digest
};

// Keys: protocol, R, J, T (scalar, J-vector or R x J), lambda | log_lambda,
// rate | log_rate, seed.
SimulationSetup simulation_from_json(const json& j);

// Reads JSON, reporting syntax errors with line and column.
json read_json_file(const std::filesystem::path& path);
json parse_json_text(const std::string& text, const std::string& name);

json fit_result_to_json(const FitResult& r);

std::uint64_t fnv1a64(std::string_view bytes);
std::string digest_hex(const json& resolved);

struct RunManifest {
  std::string command;
  std::string config_digest;
  json resolved_config;
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, double>> timings;  // seconds
  int exit_code = 0;

  json to_json() const;
};

// Writes text with LF line endings, replacing the file atomically.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace nmix
