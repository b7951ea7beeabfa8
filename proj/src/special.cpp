#include "nmix/special.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <mutex>
#include <shared_mutex>

namespace nmix {

double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

double log_sub_exp(double a, double b) {
  if (b > a) throw std::domain_error("log_sub_exp: negative difference");
  if (b == kNegInf) return a;
  if (a == b) return kNegInf;
  const double d = b - a;
  // log(1 - e^d): pick the branch that keeps precision.
  return a + (d > -M_LN2 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d)));
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (m == kNegInf) return kNegInf;
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

void LogSumAccumulator::add(double log_term) {
  ++n_;
  if (log_term == kNegInf) return;
  if (log_term <= max_) {
    scaled_ += std::exp(log_term - max_);
  } else {
    scaled_ = scaled_ * std::exp(max_ - log_term) + 1.0;
    max_ = log_term;
  }
}

double LogSumAccumulator::value() const {
  if (max_ == kNegInf) return kNegInf;
  return max_ + std::log(scaled_);
}

namespace {

long double log_add_exp_l(long double a, long double b) {
  constexpr long double ninf = -std::numeric_limits<long double>::infinity();
  if (a < b) std::swap(a, b);
  if (b == ninf) return a;
  return a + std::log1p(std::exp(b - a));
}

}  // namespace

Stirling2Table::Stirling2Table(std::size_t max_n) {
  rows_.push_back({0.0});
  last_row_ = {0.0L};
  extend(max_n);
}

void Stirling2Table::extend(std::size_t max_n) {
  // Rows are rebuilt from the previous row in extended precision so that
  // rounding does not build up along the recurrence.
  constexpr long double ninf = -std::numeric_limits<long double>::infinity();
  std::vector<long double>& prev = last_row_;
  for (std::size_t n = rows_.size(); n <= max_n; ++n) {
    std::vector<long double> cur(n + 1, ninf);
    for (std::size_t k = 1; k <= n; ++k) {
      const long double stay =
          k < n ? std::log(static_cast<long double>(k)) + prev[k] : ninf;
      cur[k] = log_add_exp_l(stay, prev[k - 1]);
    }
    rows_.emplace_back(cur.begin(), cur.end());
    prev = std::move(cur);
  }
}

namespace {

// Rows live in a deque so growing the table never moves existing rows.
struct SharedStirling {
  std::shared_mutex mutex;
  std::deque<std::vector<double>> rows;
  Stirling2Table table{0};

  void grow(std::size_t max_n) {
    table.extend(max_n);
    for (std::size_t n = rows.size(); n <= table.max_n(); ++n) {
      auto r = table.row(n);
      rows.emplace_back(r.begin(), r.end());
    }
  }
};

SharedStirling& shared_stirling() {
  static SharedStirling s;
  return s;
}

template <typename F>
auto with_stirling_row(std::size_t n, F&& f) {
  auto& s = shared_stirling();
  {
    std::shared_lock lock(s.mutex);
    if (n < s.rows.size()) return f(std::span<const double>(s.rows[n]));
  }
  std::unique_lock lock(s.mutex);
  if (n >= s.rows.size()) s.grow(std::max<std::size_t>(n, 2 * s.rows.size()));
  return f(std::span<const double>(s.rows[n]));
}

}  // namespace

void reserve_stirling2(std::size_t max_n) {
  with_stirling_row(max_n, [](std::span<const double>) { return 0; });
}

double log_stirling2(std::int64_t n, std::int64_t k) {
  if (n < 0 || k < 0 || k > n)
    throw std::invalid_argument("log_stirling2 requires 0 <= k <= n");
  return with_stirling_row(static_cast<std::size_t>(n),
                           [k](std::span<const double> row) { return row[k]; });
}

double log_poisson_raw_moment(std::int64_t m, double log_mu) {
  if (m < 0) throw std::invalid_argument("raw moment order must be >= 0");
  if (m == 0) return 0.0;
  if (log_mu == kNegInf) return kNegInf;
  return with_stirling_row(static_cast<std::size_t>(m), [&](std::span<const double> row) {
    LogSumAccumulator acc;
    for (std::int64_t k = 1; k <= m; ++k)
      acc.add(row[static_cast<std::size_t>(k)] + static_cast<double>(k) * log_mu);
    return acc.value();
  });
}

PfqResult log_pfq_equal_order(std::span<const std::int64_t> a,
                              std::span<const std::int64_t> b, double z,
                              double tol, std::size_t max_terms) {
  if (a.size() != b.size())
    throw std::invalid_argument("pFq needs as many upper as lower parameters");
  if (!(tol > 0.0)) throw std::invalid_argument("pFq tolerance must be > 0");
  if (!(z >= 0.0) || !std::isfinite(z))
    throw std::invalid_argument("pFq argument must be finite and >= 0");
  for (auto v : a)
    if (v <= 0) throw std::invalid_argument("pFq upper parameters must be positive");
  for (auto v : b)
    if (v <= 0) throw std::invalid_argument("pFq lower parameters must be positive");
  if (z == 0.0) return {0.0, 1};

  // Matching upper/lower pairs cancel term by term.
  std::vector<std::int64_t> up(a.begin(), a.end()), lo(b.begin(), b.end());
  std::sort(up.begin(), up.end());
  std::sort(lo.begin(), lo.end());
  std::vector<std::int64_t> upper, lower;
  std::set_difference(up.begin(), up.end(), lo.begin(), lo.end(),
                      std::back_inserter(upper));
  std::set_difference(lo.begin(), lo.end(), up.begin(), up.end(),
                      std::back_inserter(lower));

  if (upper.empty()) return {z, 1};  // 0F0(;;z) = e^z

  const double log_z = std::log(z);
  const double log_tol = std::log(tol);

  // Each factor (u+m)/(l+m) moves monotonically toward 1 as m grows, so
  // prod max(1, (u+m)/(l+m)) * z/(m+1) bounds every later term ratio.
  auto log_ratio_bound = [&](double m) {
    double r = log_z - std::log(m + 1.0);
    for (std::size_t k = 0; k < upper.size(); ++k) {
      const double u = static_cast<double>(upper[k]);
      const double l = static_cast<double>(lower[k]);
      if (u > l) r += std::log((u + m) / (l + m));
    }
    return r;
  };

  LogSumAccumulator acc;
  double log_term = 0.0;
  acc.add(log_term);
  for (std::size_t n = 0; n + 1 < max_terms; ++n) {
    const double m = static_cast<double>(n);
    double step = log_z - std::log(m + 1.0);
    for (std::size_t k = 0; k < upper.size(); ++k) {
      step += std::log(static_cast<double>(upper[k]) + m) -
              std::log(static_cast<double>(lower[k]) + m);
    }
    log_term += step;
    acc.add(log_term);

    const double bound = log_ratio_bound(m + 1.0);
    if (bound < 0.0) {
      const double log_tail = log_term + bound - std::log(-std::expm1(bound));
      if (log_tail < log_tol + acc.value()) return {acc.value(), n + 2};
    }
  }
  throw NumericalError("hypergeometric series did not converge", acc.value(),
                       max_terms);
}

double log_factorial(std::int64_t n) {
  if (n < 0) throw std::invalid_argument("log_factorial of negative value");
  return std::lgamma(static_cast<double>(n) + 1.0);
}

double log_choose(std::int64_t n, std::int64_t k) {
  if (k < 0 || k > n) return kNegInf;
  return log_factorial(n) - log_factorial(k) - log_factorial(n - k);
}

}  // namespace nmix
