#include "nmix/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "nmix/special.hpp"

namespace nmix {

namespace {

double lgam(double x) { return std::lgamma(x); }

// log C(n, y) for real-valued n >= y >= 0.
double lchoose(double n, double y) { return lgam(n + 1) - lgam(y + 1) - lgam(n - y + 1); }

// Log density/probability of one occasion's observations given n.
double occasion_term(const Protocol& proto, double n, Count y_count,
                     const std::vector<double>& ts, double rate, double T,
                     bool constants) {
  const double y = static_cast<double>(y_count);
  const bool poisson = proto.process == Process::PoissonProcess;

  switch (proto.family) {
    case Family::Binary:
      // Same form under either process with rate in place of hazard.
      if (y_count == 0) return -n * rate * T;
      return n == 0 ? kNegInf : std::log(-std::expm1(-n * rate * T));

    case Family::BinaryT1:
      if (y_count == 0) return -n * rate * T;
      return n == 0 ? kNegInf : std::log(n * rate) - n * rate * ts.front();

    case Family::Count:
      if (poisson) {
        if (n == 0) return y_count == 0 ? 0.0 : kNegInf;
        return y * std::log(n * rate * T) - n * rate * T - lgam(y + 1);
      }
      return lchoose(n, y) + (y_count > 0 ? y * std::log(-std::expm1(-rate * T)) : 0.0) -
             (n - y) * rate * T;

    case Family::CountT: {
      if (poisson) {
        // Event times of a rate n*gamma process on (0, T].
        if (n == 0) return y_count == 0 ? 0.0 : kNegInf;
        double out = y * std::log(n * rate) - n * rate * T;
        if (!constants) out -= lgam(y + 1) - y * std::log(T);
        return out;
      }
      // Choose the detected individuals; each contributes its arrival density,
      // the rest arrive after T. The y! orderings give the sorted vector.
      double out = lchoose(n, y) - (n - y) * rate * T;
      for (double t : ts) out += std::log(rate) - rate * t;
      if (constants) out += lgam(y + 1);
      return out;
    }

    case Family::CountT1: {
      if (y_count == 0) return -n * rate * T;
      const double t = ts.front();
      if (poisson) {
        if (n == 0) return kNegInf;
        // First event at t, then y-1 events in (t, T].
        const double mu = n * rate;
        double out = std::log(mu) - mu * t - mu * (T - t) - lgam(y);
        if (y_count > 1) out += (y - 1) * std::log(mu * (T - t));
        if (!constants) {
          out -= std::log(y) - std::log(T);
          if (y_count > 1) out -= (y - 1) * std::log1p(-t / T);
        }
        return out;
      }
      // One of the y detected is first at t, the other y-1 arrive in (t, T].
      double out = lchoose(n, y) + std::log(y) + std::log(rate) - rate * t -
                   (n - y) * rate * T;
      if (y_count > 1)
        out += (y - 1) * std::log(std::exp(-rate * t) - std::exp(-rate * T));
      if (!constants) out -= std::log(y);
      return out;
    }
  }
  return kNegInf;
}

}  // namespace

OracleSite oracle_site(const Dataset& d, const Parameterization& p,
                       std::size_t site) {
  if (site >= d.sites() || site >= d.records.size())
    throw std::out_of_range("site index out of range");
  const std::size_t J = d.occasions();
  OracleSite s;
  s.protocol = d.protocol;
  s.site = site;
  s.y = d.records[site].y;
  s.times = d.records[site].times;
  s.log_lambda = p.log_lambda_at(site);
  for (std::size_t j = 0; j < J; ++j) {
    s.search_time.push_back(d.design.search_time(site, j));
    s.log_rate.push_back(p.log_rate_at(site, j, J));
  }
  return s;
}

Count oracle_support_min(const OracleSite& s) {
  Count most = 0;
  for (Count y : s.y) most = std::max(most, y);
  if (s.protocol.process == Process::PoissonProcess) return most > 0 ? 1 : 0;
  return most;
}

std::size_t default_n_max(const Dataset& d, const Parameterization& p) {
  Count kappa = 0;
  for (const auto& rec : d.records)
    for (Count y : rec.y) kappa = std::max(kappa, y);
  double lambda_max = 0.0;
  for (std::size_t i = 0; i < d.sites(); ++i)
    lambda_max = std::max(lambda_max, std::exp(p.log_lambda_at(i)));
  return static_cast<std::size_t>(kappa) +
         static_cast<std::size_t>(std::ceil(lambda_max + 12.0 * std::sqrt(lambda_max) + 50.0));
}

OracleResult oracle_site_loglik(const OracleSite& s, const OracleConfig& cfg,
                                bool include_constants) {
  const Count kappa = oracle_support_min(s);
  const double lambda = std::exp(s.log_lambda);
  const std::size_t n_max =
      cfg.n_max ? *cfg.n_max
                : static_cast<std::size_t>(kappa) +
                      static_cast<std::size_t>(std::ceil(lambda + 12.0 * std::sqrt(lambda) + 50.0));
  if (n_max < static_cast<std::size_t>(kappa))
    throw OracleError(OracleError::Kind::Support, s.site,
                      "n_max " + std::to_string(n_max) +
                          " below the smallest supported abundance " +
                          std::to_string(kappa));

  std::vector<double> rate(s.log_rate.size());
  for (std::size_t j = 0; j < rate.size(); ++j) rate[j] = std::exp(s.log_rate[j]);

  const auto term_at = [&](std::size_t n) {
    const double nd = static_cast<double>(n);
    double out = lambda == 0.0 ? (n == 0 ? 0.0 : kNegInf)
                               : nd * s.log_lambda - lambda - lgam(nd + 1);
    for (std::size_t j = 0; j < s.y.size() && out != kNegInf; ++j)
      out += occasion_term(s.protocol, nd, s.y[j], s.times[j], rate[j],
                           s.search_time[j], include_constants);
    return out;
  };

  LogSumAccumulator acc;
  double prev = kNegInf;
  const double log_tol = std::log(cfg.tail_tol);
  std::size_t terms = 0;
  for (std::size_t n = static_cast<std::size_t>(kappa); n <= n_max; ++n) {
    if (++terms > cfg.per_site_cap)
      throw OracleError(OracleError::Kind::NotConverged, s.site,
                        "oracle exceeded its iteration cap", acc.value());
    const double term = term_at(n);
    acc.add(term);
    if (lambda == 0.0) return {acc.value(), terms};
    // Past the Poisson mode the term ratio keeps shrinking, so the current
    // ratio gives a geometric bound on everything that is left.
    if (static_cast<double>(n) > lambda && term < prev) {
      const double log_ratio = term - prev;
      const double log_tail = term + log_ratio - std::log(-std::expm1(log_ratio));
      if (log_tail < log_tol + acc.value()) return {acc.value(), terms};
    }
    // Zero-probability data: nothing has accumulated past the mode.
    if (acc.value() == kNegInf && static_cast<double>(n) > lambda + 1.0 &&
        n > static_cast<std::size_t>(kappa))
      return {kNegInf, terms};
    prev = term;
  }
  throw OracleError(OracleError::Kind::NotConverged, s.site,
                    "tail bound not reached by n_max = " + std::to_string(n_max),
                    acc.value());
}

OracleResult oracle_site_loglik(const Dataset& d, const Parameterization& p,
                                std::size_t site, const OracleConfig& cfg,
                                bool include_constants) {
  OracleConfig resolved = cfg;
  if (!resolved.n_max) resolved.n_max = default_n_max(d, p);
  return oracle_site_loglik(oracle_site(d, p, site), resolved, include_constants);
}

std::vector<double> oracle_loglik(const Dataset& d, const Parameterization& p,
                                  const OracleConfig& cfg, bool include_constants) {
  OracleConfig resolved = cfg;
  if (!resolved.n_max) resolved.n_max = default_n_max(d, p);
  const auto R = static_cast<std::ptrdiff_t>(d.sites());
  std::vector<double> out(static_cast<std::size_t>(R));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(R));
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < R; ++i) {
    const auto site = static_cast<std::size_t>(i);
    try {
      out[site] = oracle_site_loglik(oracle_site(d, p, site), resolved, include_constants).log_value;
    } catch (...) {
      errors[site] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace nmix
