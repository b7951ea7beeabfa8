#include "nmix/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

namespace nmix {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// log(1 - e^-x) for x > 0.
double log_one_minus_exp_neg(double x) {
  return x < M_LN2 ? std::log(-std::expm1(-x)) : std::log1p(-std::exp(-x));
}

// log(e^x - 1) for x > 0.
double log_expm1(double x) { return x + log_one_minus_exp_neg(x); }

// -lambda (1 - e^-w) written to stay accurate for small w.
double zero_detection(double lambda, double w) {
  return lambda == 0.0 ? 0.0 : lambda * std::expm1(-w);
}

double total_effort(const SiteWorkspace& ws) {
  double s = 0.0;
  for (double e : ws.effort) s += e;
  return s;
}

// Positive mixture series for the Binary likelihood,
//   log sum_{n>=1} Pois(n|lambda) e^{-n W0} prod_j (1 - e^{-n w_j}).
double binary_series(const SiteWorkspace& ws, double log_lambda) {
  const double lambda = std::exp(log_lambda);
  LogSumAccumulator acc;
  double prev = kNegInf;
  const std::size_t cap = 100000;
  for (std::size_t n = 1; n < cap; ++n) {
    const double nd = static_cast<double>(n);
    double term = nd * log_lambda - std::lgamma(nd + 1.0) - nd * ws.w_zero;
    for (double w : ws.w_detect) term += log_one_minus_exp_neg(nd * w);
    acc.add(term);
    // Past the mode the term ratio only shrinks, so it bounds the tail.
    if (nd > lambda && term < prev) {
      const double log_ratio = term - prev;
      const double log_tail = term + log_ratio - std::log(-std::expm1(log_ratio));
      if (log_tail < std::log(1e-16) + acc.value()) return acc.value() - lambda;
    }
    prev = term;
  }
  throw NumericalError("binary mixture series did not converge", acc.value() - lambda, cap);
}

}  // namespace

double site_loglik_binary(const SiteWorkspace& ws, double log_lambda,
                          const KernelOptions& opts, KernelDiagnostics* diag) {
  const std::size_t detections = ws.w_detect.size();
  const double lambda = std::exp(log_lambda);
  if (detections == 0) return zero_detection(lambda, ws.w_zero);
  if (lambda == 0.0) return kNegInf;
  if (detections > opts.max_subset_occasions)
    throw std::length_error("occasions too numerous for exact expansion");

  // Subsets are split by parity. Using expm1 drops the constant terms, which
  // cancel exactly because sum_S (-1)^|S| = 0.
  const std::size_t subsets = std::size_t{1} << detections;
  LogSumAccumulator even, odd;
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    double w = ws.w_zero;
    int parity = 0;
    for (std::size_t j = 0; j < detections; ++j) {
      if (mask & (std::size_t{1} << j)) {
        w += ws.w_detect[j];
        parity ^= 1;
      }
    }
    const double x = lambda * std::exp(-w);
    const double log_term = x > 0.0 ? log_expm1(x) : kNegInf;
    (parity ? odd : even).add(log_term);
  }

  const double log_pos = even.value();
  const double log_neg = odd.value();
  const double rel_mass = log_neg < log_pos ? -std::expm1(log_neg - log_pos) : 0.0;
  const double est_error = 4.0 * static_cast<double>(subsets) * kEps / rel_mass;
  if (!(rel_mass > 0.0) || est_error > opts.max_cancellation_error) {
    if (diag) diag->series_fallback = true;
    return binary_series(ws, log_lambda);
  }
  return -lambda + log_sub_exp(log_pos, log_neg);
}

double site_loglik_binary_t1(const SiteWorkspace& ws, double log_lambda) {
  const double lambda = std::exp(log_lambda);
  const auto detections = static_cast<std::int64_t>(ws.w_detect.size());
  if (detections == 0) return zero_detection(lambda, ws.w_zero);
  if (!ws.has_first_times)
    throw std::invalid_argument("times/response mismatch: detection without a time");

  double log_rates = 0.0;
  for (std::size_t j = 0; j < ws.occasions; ++j)
    if (ws.y[j] > 0) log_rates += std::log(ws.rate[j]);
  return log_rates + zero_detection(lambda, ws.w_time) +
         log_poisson_raw_moment(detections, log_lambda - ws.w_time);
}

double site_loglik_count_s(Count y, double log_lambda, double log_h, double T) {
  if (y < 0) throw std::invalid_argument("negative count");
  const double p = -std::expm1(-std::exp(log_h) * T);
  const double mean = std::exp(log_lambda) * p;
  if (y == 0) return -mean;
  if (mean == 0.0) return kNegInf;
  return static_cast<double>(y) * (log_lambda + std::log(p)) - mean - log_factorial(y);
}

double site_loglik_count_m(const SiteWorkspace& ws, double log_lambda,
                           const KernelOptions& opts) {
  const double lambda = std::exp(log_lambda);
  const double effort = total_effort(ws);
  if (ws.y_max == 0) return zero_detection(lambda, effort);
  if (lambda == 0.0) return kNegInf;

  // The last occasion reaching y_max anchors the J-1 binomial factors.
  std::size_t anchor = 0;
  for (std::size_t j = 0; j < ws.occasions; ++j)
    if (ws.y[j] == ws.y_max) anchor = j;

  const double log_z = log_lambda - effort;
  double out = -lambda + static_cast<double>(ws.y_max) * log_z - log_factorial(ws.y_max);
  std::vector<std::int64_t> upper, lower;
  upper.reserve(ws.occasions);
  lower.reserve(ws.occasions);
  for (std::size_t j = 0; j < ws.occasions; ++j) {
    const Count y = ws.y[j];
    if (y > 0) {
      // y log(p / (1 - p)) with log(1 - p) = -hT.
      out += static_cast<double>(y) * (log_one_minus_exp_neg(ws.effort[j]) + ws.effort[j]);
    }
    if (j == anchor) continue;
    out += log_choose(ws.y_max, y);
    upper.push_back(ws.y_max + 1);
    lower.push_back(ws.y_max - y + 1);
  }
  return out + log_pfq_equal_order(upper, lower, std::exp(log_z), opts.pfq_tol).log_value;
}

double time_factor_count_t(const SiteWorkspace& ws, bool include_constants) {
  double out = 0.0;
  for (std::size_t j = 0; j < ws.occasions; ++j) {
    const Count y = ws.y[j];
    if (y == 0) continue;
    const double yd = static_cast<double>(y);
    out += yd * std::log(ws.rate[j]) - ws.rate[j] * ws.time_sum[j] -
           yd * log_one_minus_exp_neg(ws.effort[j]);
    if (include_constants) out += log_factorial(y);
  }
  return out;
}

double time_factor_count_t1(const SiteWorkspace& ws, bool include_constants) {
  double out = 0.0;
  for (std::size_t j = 0; j < ws.occasions; ++j) {
    const Count y = ws.y[j];
    if (y == 0) continue;
    const double h = ws.rate[j];
    const double t = ws.first_time[j];
    if (std::isnan(t))
      throw std::invalid_argument("times/response mismatch: count without a first time");
    const double yd = static_cast<double>(y);
    out += std::log(h) - h * t - yd * log_one_minus_exp_neg(ws.effort[j]);
    if (y > 1) {
      const double gap = h * (ws.search_time[j] - t);
      if (!(gap > 0.0))
        throw std::domain_error("first detection time at or beyond the search time with y > 1");
      // log(e^{-ht} - e^{-hT})
      out += (yd - 1.0) * (-h * t + log_one_minus_exp_neg(gap));
    }
    if (include_constants) out += std::log(yd);
  }
  return out;
}

double site_loglik_pcount(const SiteWorkspace& ws, double log_lambda) {
  const double lambda = std::exp(log_lambda);
  const double effort = total_effort(ws);
  double out = zero_detection(lambda, effort);
  if (ws.y_plus == 0) return out;
  for (std::size_t j = 0; j < ws.occasions; ++j) {
    const Count y = ws.y[j];
    if (y > 0) out += static_cast<double>(y) * std::log(ws.effort[j]) - log_factorial(y);
  }
  return out + log_poisson_raw_moment(ws.y_plus, log_lambda - effort);
}

double poisson_time_constant(const SiteWorkspace& ws, Family family) {
  double out = 0.0;
  for (std::size_t j = 0; j < ws.occasions; ++j) {
    const Count y = ws.y[j];
    if (y == 0) continue;
    const double T = ws.search_time[j];
    const double yd = static_cast<double>(y);
    if (family == Family::CountT) {
      out += log_factorial(y) - yd * std::log(T);
    } else if (family == Family::CountT1) {
      const double t = ws.first_time[j];
      out += std::log(yd) - std::log(T);
      if (y > 1) {
        if (!(t < T))
          throw std::domain_error("first detection time at or beyond the search time with y > 1");
        out += (yd - 1.0) * std::log1p(-t / T);
      }
    }
  }
  return out;
}

namespace {

double dispatch(const Dataset& d, const SiteWorkspace& ws, double log_lambda,
                const LikelihoodOptions& opts, KernelDiagnostics* diag) {
  const auto& proto = d.protocol;
  const bool poisson = proto.process == Process::PoissonProcess;
  const auto count_kernel = [&] {
    if (poisson) return site_loglik_pcount(ws, log_lambda);
    if (ws.occasions == 1)
      return site_loglik_count_s(ws.y[0], log_lambda, std::log(ws.rate[0]),
                                 ws.search_time[0]);
    return site_loglik_count_m(ws, log_lambda, opts.kernel);
  };

  switch (proto.family) {
    case Family::Binary:
      return site_loglik_binary(ws, log_lambda, opts.kernel, diag);
    case Family::BinaryT1:
      return site_loglik_binary_t1(ws, log_lambda);
    case Family::Count:
      return count_kernel();
    case Family::CountT:
    case Family::CountT1: {
      double times = 0.0;
      if (poisson) {
        if (opts.include_constants) times = poisson_time_constant(ws, proto.family);
      } else if (proto.family == Family::CountT) {
        times = time_factor_count_t(ws, opts.include_constants);
      } else {
        times = time_factor_count_t1(ws, opts.include_constants);
      }
      return times + count_kernel();
    }
  }
  return kNegInf;
}

void reserve_tables(const Dataset& d) {
  Count most = 0;
  for (const auto& rec : d.records) {
    Count s = 0;
    for (Count y : rec.y) s += y;
    most = std::max(most, s);
  }
  reserve_stirling2(static_cast<std::size_t>(std::max<Count>(most, d.occasions())));
}

void check_inputs(const Dataset& d, const Parameterization& p) {
  auto problems = check_parameters(p, d.design);
  if (!problems.empty()) throw std::invalid_argument("parameters: " + problems.front());
  if (d.records.size() != d.sites())
    throw std::invalid_argument("dataset has the wrong number of site records");
}

LogLik assemble(std::vector<double> per_site, std::vector<char> fallback,
                const LikelihoodOptions& opts) {
  LogLik out;
  out.irrelevant_constant_included = opts.include_constants;
  for (std::size_t i = 0; i < per_site.size(); ++i) {
    out.total += per_site[i];
    if (fallback[i]) out.fallback_sites.push_back(i);
  }
  out.per_site = std::move(per_site);
  return out;
}

}  // namespace

double site_loglik(const Dataset& d, const Parameterization& p, std::size_t site,
                   const LikelihoodOptions& opts, KernelDiagnostics* diag) {
  try {
    const auto ws = build_workspace(d, p, site);
    return dispatch(d, ws, p.log_lambda_at(site), opts, diag);
  } catch (const LikelihoodError&) {
    throw;
  } catch (const std::exception& e) {
    throw LikelihoodError(site, e.what());
  }
}

LogLik total_loglik_serial(const Dataset& d, const Parameterization& p,
                           const LikelihoodOptions& opts) {
  check_inputs(d, p);
  const std::size_t R = d.sites();
  std::vector<double> per_site(R);
  std::vector<char> fallback(R, 0);
  for (std::size_t i = 0; i < R; ++i) {
    KernelDiagnostics diag;
    per_site[i] = site_loglik(d, p, i, opts, &diag);
    fallback[i] = diag.series_fallback;
  }
  return assemble(std::move(per_site), std::move(fallback), opts);
}

LogLik total_loglik(const Dataset& d, const Parameterization& p,
                    const LikelihoodOptions& opts) {
  check_inputs(d, p);
  reserve_tables(d);
  const auto R = static_cast<std::ptrdiff_t>(d.sites());
  std::vector<double> per_site(static_cast<std::size_t>(R));
  std::vector<char> fallback(static_cast<std::size_t>(R), 0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(R));

#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < R; ++i) {
    const auto site = static_cast<std::size_t>(i);
    try {
      KernelDiagnostics diag;
      per_site[site] = site_loglik(d, p, site, opts, &diag);
      fallback[site] = diag.series_fallback;
    } catch (...) {
      errors[site] = std::current_exception();
    }
  }

  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return assemble(std::move(per_site), std::move(fallback), opts);
}

double site_loglik_response(const Dataset& d, const Parameterization& p,
                            std::size_t site, const KernelOptions& opts) {
  try {
    auto ws = build_workspace(d, p, site);
    const double log_lambda = p.log_lambda_at(site);
    if (d.protocol.binary_response()) return site_loglik_binary(ws, log_lambda, opts);
    if (d.protocol.process == Process::PoissonProcess)
      return site_loglik_pcount(ws, log_lambda);
    return site_loglik_count_m(ws, log_lambda, opts);
  } catch (const std::exception& e) {
    throw LikelihoodError(site, e.what());
  }
}

}  // namespace nmix
