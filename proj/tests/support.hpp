// Shared helpers for the test executables.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nmix/model.hpp"
#include "nmix/simulate.hpp"

namespace testsupport {

using nmix::Count;
using nmix::Family;
using nmix::Process;
using nmix::Protocol;

inline std::vector<Protocol> all_protocols() {
  std::vector<Protocol> out;
  for (auto pr : {Process::BinomialCount, Process::PoissonProcess})
    for (auto f : {Family::Binary, Family::BinaryT1, Family::Count, Family::CountT, Family::CountT1})
      for (auto v : {nmix::Visits::Single, nmix::Visits::Multiple}) out.push_back({f, pr, v});
  return out;
}

// Probability or density of one occasion given n individuals, in linear
// space, with the natural constants (sorted detection-time vectors).
inline long double occasion_prob(const Protocol& proto, long double n, Count yc,
                                 const std::vector<double>& ts, long double r, long double T) {
  const long double y = static_cast<long double>(yc);
  const bool pois = proto.process == Process::PoissonProcess;
  auto falling = [](long double a, long double k) {  // a (a-1) ... (a-k+1)
    long double out = 1.0L;
    for (long double i = 0; i < k; ++i) out *= a - i;
    return out;
  };
  auto fact = [&](long double k) { return falling(k, k); };
  if (yc > static_cast<Count>(n) && !pois && proto.family != Family::Binary &&
      proto.family != Family::BinaryT1)
    return 0.0L;
  switch (proto.family) {
    case Family::Binary:
      return yc == 0 ? std::exp(-n * r * T) : 1.0L - std::exp(-n * r * T);
    case Family::BinaryT1:
      return yc == 0 ? std::exp(-n * r * T) : n * r * std::exp(-n * r * ts.at(0));
    case Family::Count: {
      if (pois) return std::pow(n * r * T, y) * std::exp(-n * r * T) / fact(y);
      const long double p = 1.0L - std::exp(-r * T);
      return falling(n, y) / fact(y) * std::pow(p, y) * std::pow(1.0L - p, n - y);
    }
    case Family::CountT: {
      if (pois) return std::pow(n * r, y) * std::exp(-n * r * T);
      long double out = falling(n, y) * std::exp(-(n - y) * r * T);
      for (double t : ts) out *= r * std::exp(-r * t);
      return out;
    }
    case Family::CountT1: {
      if (yc == 0) return std::exp(-n * r * T);
      const long double t = ts.at(0);
      if (pois)
        return n * r * std::exp(-n * r * T) * std::pow(n * r * (T - t), y - 1) / fact(y - 1);
      return falling(n, y) / fact(y - 1) * r * std::exp(-r * t) *
             std::pow(std::exp(-r * t) - std::exp(-r * T), y - 1) * std::exp(-(n - y) * r * T);
    }
  }
  return 0.0L;
}

// Observed-data constants dropped when constants are excluded.
inline double dropped_constant(const Protocol& proto, Count y, const std::vector<double>& ts, double T) {
  if (y == 0) return 0.0;
  const double yd = static_cast<double>(y);
  const bool pois = proto.process == Process::PoissonProcess;
  if (proto.family == Family::CountT)
    return pois ? std::lgamma(yd + 1) - yd * std::log(T) : std::lgamma(yd + 1);
  if (proto.family == Family::CountT1)
    return pois ? std::log(yd) - std::log(T) + (yd - 1) * std::log1p(-ts.at(0) / T) : std::log(yd);
  return 0.0;
}

// Direct mixture sum sum_n Pois(n) prod_j obs_j(n) in long double, no logs
// until the end. Only for small lambda.
inline double brute_site_loglik(const nmix::Dataset& d, const nmix::Parameterization& p,
                                std::size_t site, bool include_constants, int n_max = 400) {
  const std::size_t J = d.occasions();
  const auto& rec = d.records[site];
  const long double lambda = std::exp(static_cast<long double>(p.log_lambda_at(site)));
  long double total = 0.0L;
  long double pois = std::exp(-lambda);  // Pois(0)
  for (int n = 0; n <= n_max; ++n) {
    if (n > 0) pois *= lambda / n;
    long double term = pois;
    for (std::size_t j = 0; j < J && term > 0.0L; ++j)
      term *= occasion_prob(d.protocol, n, rec.y[j], rec.times[j],
                            std::exp(static_cast<long double>(p.log_rate_at(site, j, J))),
                            d.design.search_time(site, j));
    total += term;
  }
  double out = static_cast<double>(std::log(total));
  if (!include_constants)
    for (std::size_t j = 0; j < J; ++j)
      out -= dropped_constant(d.protocol, rec.y[j], rec.times[j], d.design.search_time(site, j));
  return out;
}

struct Instance {
  nmix::Dataset data;
  nmix::Parameterization params;
};

// Random small instance: R <= 5, J <= 4 (J = 1 for single visits),
// lambda in [0.1, 5], hT in [0.1, 3], varying T and rates by occasion.
inline Instance random_instance(const Protocol& proto, std::mt19937_64& rng, std::size_t max_sites = 5,
                                std::size_t max_occasions = 4) {
  std::uniform_int_distribution<std::size_t> rs(1, max_sites);
  std::uniform_int_distribution<std::size_t> js(2, max_occasions);
  std::uniform_real_distribution<double> lam(0.1, 5.0);
  std::uniform_real_distribution<double> eff(0.1, 3.0);
  std::uniform_real_distribution<double> tt(0.5, 2.0);
  const std::size_t R = rs(rng);
  const std::size_t J = proto.visits == nmix::Visits::Single ? 1 : js(rng);
  std::vector<double> T(R * J);
  for (auto& t : T) t = tt(rng);
  nmix::Parameterization p;
  for (std::size_t i = 0; i < R; ++i) p.log_lambda.push_back(std::log(lam(rng)));
  for (std::size_t k = 0; k < R * J; ++k) p.log_rate.push_back(std::log(eff(rng) / T[k]));
  nmix::SimConfig cfg{nmix::SurveyDesign(R, J, T), proto, p, rng()};
  return {nmix::simulate_dataset_serial(cfg), p};
}

}  // namespace testsupport
