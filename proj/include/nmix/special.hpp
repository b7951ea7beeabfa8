#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmix {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kDefaultTol = 1e-13;
inline constexpr std::size_t kPfqMaxTerms = 10000;

// Raised when a series or sum fails to settle. Carries what was accumulated.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double partial_log_sum,
                 std::size_t terms)
      : std::runtime_error(what), partial_log_sum_(partial_log_sum),
        terms_(terms) {}
  double partial_log_sum() const { return partial_log_sum_; }
  std::size_t terms() const { return terms_; }

 private:
  double partial_log_sum_;
  std::size_t terms_;
};

// log(e^a + e^b), exact for -inf operands.
double log_add_exp(double a, double b);

// log(e^a - e^b) for a >= b; -inf when a == b.
double log_sub_exp(double a, double b);

// log sum exp(xs); -inf for empty or all -inf input.
double log_sum_exp(std::span<const double> xs);

// Streaming accumulator for positive terms given on the log scale.
class LogSumAccumulator {
 public:
  void add(double log_term);
  double value() const;
  std::size_t size() const { return n_; }

 private:
  double max_ = kNegInf;
  double scaled_ = 0.0;  // sum of exp(term - max_)
  std::size_t n_ = 0;
};

// Triangular table of log S(n, k), the Stirling numbers of the second kind.
// S(0,0) = 1; S(n,0) = 0 (stored -inf) for n > 0.
class Stirling2Table {
 public:
  explicit Stirling2Table(std::size_t max_n = 0);

  std::size_t max_n() const { return rows_.size() - 1; }
  void extend(std::size_t max_n);

  // Requires k <= n <= max_n().
  double log_value(std::size_t n, std::size_t k) const { return rows_[n][k]; }
  std::span<const double> row(std::size_t n) const { return rows_[n]; }

 private:
  std::vector<std::vector<double>> rows_;
  std::vector<long double> last_row_;
};

// log S(n, k) from a process-wide table that grows on demand. Safe to call
// concurrently. Throws std::invalid_argument for k > n or negative input.
double log_stirling2(std::int64_t n, std::int64_t k);

// Makes sure the shared table covers n <= max_n.
void reserve_stirling2(std::size_t max_n);

// log sum_{k=0}^{m} S(m,k) mu^k, i.e. the log of the m-th raw moment of a
// Poisson(mu) variable.
double log_poisson_raw_moment(std::int64_t m, double log_mu);

struct PfqResult {
  double log_value = 0.0;
  std::size_t terms = 0;
};

// log qFq(a; b; z) = log sum_n prod (a_i)_n / prod (b_i)_n z^n / n! for
// positive integer parameters with a.size() == b.size(). The series is summed
// until a geometric bound on the remaining tail falls below tol relative to
// the running sum. Throws NumericalError after max_terms terms.
PfqResult log_pfq_equal_order(std::span<const std::int64_t> a,
                              std::span<const std::int64_t> b, double z,
                              double tol = kDefaultTol,
                              std::size_t max_terms = kPfqMaxTerms);

// log of the binomial coefficient C(n, k).
double log_choose(std::int64_t n, std::int64_t k);

// log(n!)
double log_factorial(std::int64_t n);

}  // namespace nmix
