#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace nmix {

using Count = std::int64_t;

enum class Family { Binary, BinaryT1, Count, CountT, CountT1 };
enum class Process { BinomialCount, PoissonProcess };
enum class Visits { Single, Multiple };

struct Protocol {
  Family family = Family::Count;
  Process process = Process::BinomialCount;
  Visits visits = Visits::Single;

  bool binary_response() const {
    return family == Family::Binary || family == Family::BinaryT1;
  }
  bool records_times() const {
    return family == Family::BinaryT1 || family == Family::CountT ||
           family == Family::CountT1;
  }
  bool first_time_only() const {
    return family == Family::BinaryT1 || family == Family::CountT1;
  }
  // Detection times add no parameter information under double counting.
  bool times_uninformative() const {
    return process == Process::PoissonProcess &&
           (family == Family::CountT || family == Family::CountT1);
  }

  // "Count:M", "PBinaryT1:S", ...
  std::string name() const;

  friend bool operator==(const Protocol&, const Protocol&) = default;
};

std::string_view to_string(Family f);
std::string_view to_string(Process p);
std::optional<Family> parse_family(std::string_view s);
std::optional<Process> parse_process(std::string_view s);

// Accepts "Count", "CountT1:M", "PCount", "PBinaryT1:S". A leading 'P'
// selects the Poisson process; visits default to `visits` when no suffix.
std::optional<Protocol> parse_protocol(std::string_view s,
                                       Visits visits = Visits::Single);

class SurveyDesign {
 public:
  SurveyDesign() = default;
  // search_times is row-major R x J; every entry must be > 0.
  SurveyDesign(std::size_t sites, std::size_t occasions,
               std::vector<double> search_times);
  static SurveyDesign constant(std::size_t sites, std::size_t occasions,
                               double search_time);

  std::size_t sites() const { return sites_; }
  std::size_t occasions() const { return occasions_; }
  double search_time(std::size_t i, std::size_t j) const {
    return search_times_[i * occasions_ + j];
  }
  const std::vector<double>& search_times() const { return search_times_; }

 private:
  std::size_t sites_ = 0;
  std::size_t occasions_ = 0;
  std::vector<double> search_times_;
};

struct SiteRecord {
  std::size_t site_id = 0;
  std::vector<Count> y;
  // One sorted vector of detection times per occasion.
  std::vector<std::vector<double>> times;
};

struct Dataset {
  Protocol protocol;
  SurveyDesign design;
  std::vector<SiteRecord> records;

  std::size_t sites() const { return design.sites(); }
  std::size_t occasions() const { return design.occasions(); }
};

struct Violation {
  std::size_t site = 0;
  std::optional<std::size_t> occasion;
  std::string message;
};

// Every invariant violation in the dataset; empty means valid. Coordinates
// in messages are 1-based.
std::vector<Violation> validate_dataset(const Dataset& d);

// Detection times sitting exactly on the search-time boundary. These are
// accepted, but reported so ingestion can warn.
std::vector<Violation> boundary_warnings(const Dataset& d);

class InvalidDataset : public std::runtime_error {
 public:
  explicit InvalidDataset(std::vector<Violation> v);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

// Throws InvalidDataset carrying every violation.
void require_valid(const Dataset& d);

// Abundance on the log scale per site, detection hazard (or Poisson rate) on
// the log scale per site and occasion. Scalar forms broadcast.
struct Parameterization {
  std::vector<double> log_lambda;  // size 1 or R
  std::vector<double> log_rate;    // size 1 or R*J, row-major

  static Parameterization constant(double log_lambda, double log_rate) {
    return {{log_lambda}, {log_rate}};
  }

  double log_lambda_at(std::size_t i) const {
    return log_lambda.size() == 1 ? log_lambda[0] : log_lambda[i];
  }
  double log_rate_at(std::size_t i, std::size_t j, std::size_t J) const {
    return log_rate.size() == 1 ? log_rate[0] : log_rate[i * J + j];
  }
};

// Shape problems and non-finite rates; empty when usable with `design`.
// log_lambda = -inf (an empty population) is allowed.
std::vector<std::string> check_parameters(const Parameterization& p,
                                          const SurveyDesign& design);

// Log-linear links: log lambda = X beta (R x p), log rate = Z alpha
// ((R*J) x q, rows ordered site-major). Absent matrices mean a single
// intercept.
struct LinkModel {
  std::optional<Eigen::MatrixXd> abundance;
  std::optional<Eigen::MatrixXd> detection;
  std::vector<std::string> abundance_names;
  std::vector<std::string> detection_names;

  std::size_t abundance_coefs() const {
    return abundance ? static_cast<std::size_t>(abundance->cols()) : 1;
  }
  std::size_t detection_coefs() const {
    return detection ? static_cast<std::size_t>(detection->cols()) : 1;
  }
  std::size_t size() const { return abundance_coefs() + detection_coefs(); }

  std::vector<std::string> coefficient_names() const;

  // coefs = [beta..., alpha...]
  Parameterization parameters(std::span<const double> coefs) const;
};

// Derived per-site quantities shared by the closed-form kernels.
struct SiteWorkspace {
  std::size_t site = 0;
  std::size_t occasions = 0;
  std::vector<Count> y;
  std::vector<double> rate;          // h_j or gamma_j
  std::vector<double> search_time;   // T_j
  std::vector<double> effort;        // h_j T_j
  std::vector<double> p;             // 1 - exp(-h_j T_j)
  std::vector<double> first_time;    // t_j(1), NaN when y_j == 0
  std::vector<double> time_sum;      // sum_d t_jd
  Count kappa = 0;
  Count y_max = 0;
  Count y_plus = 0;
  double w_zero = 0.0;               // sum of h_j T_j over y_j == 0
  std::vector<double> w_detect;      // h_j T_j over y_j > 0
  double w_time = 0.0;               // sum h_j t_j(1) + sum_{y_j=0} h_j T_j
  bool has_first_times = false;
};

SiteWorkspace build_workspace(const Dataset& d, const Parameterization& p,
                              std::size_t site);

}  // namespace nmix
