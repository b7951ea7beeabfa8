#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmix/model.hpp"

namespace nmix {

// Reference likelihood: the mixture over the latent abundance n summed term
// by term, log sum_{n=kappa}^{n_max} [prod_j obs(y_j, t_j | n)] Pois(n | lambda).
// Slow on purpose; it shares nothing with the closed-form kernels beyond
// log-sum-exp plumbing.
struct OracleConfig {
  std::optional<std::size_t> n_max;  // unset: default_n_max()
  double tail_tol = 1e-14;
  std::size_t per_site_cap = 1'000'000;
};

struct OracleResult {
  double log_value = 0.0;
  std::size_t terms = 0;
};

class OracleError : public std::runtime_error {
 public:
  enum class Kind { Support, NotConverged };
  OracleError(Kind kind, std::size_t site, const std::string& what,
              double partial = 0.0)
      : std::runtime_error("site " + std::to_string(site + 1) + ": " + what),
        kind_(kind), site_(site), partial_(partial) {}
  Kind kind() const { return kind_; }
  std::size_t site() const { return site_; }
  double partial_log_value() const { return partial_; }

 private:
  Kind kind_;
  std::size_t site_;
  double partial_;
};

// Everything the oracle needs about one site.
struct OracleSite {
  Protocol protocol;
  std::size_t site = 0;
  std::vector<Count> y;
  std::vector<std::vector<double>> times;
  std::vector<double> search_time;
  double log_lambda = 0.0;
  std::vector<double> log_rate;
};

OracleSite oracle_site(const Dataset& d, const Parameterization& p,
                       std::size_t site);

// Smallest abundance with positive probability: max y for the binomial
// process, 1 when anything is detected under the Poisson process.
Count oracle_support_min(const OracleSite& s);

// max(kappa) + ceil(lambda_max + 12 sqrt(lambda_max) + 50).
std::size_t default_n_max(const Dataset& d, const Parameterization& p);

// Throws OracleError: Support when n_max < kappa, NotConverged when the tail
// bound is not met before n_max or the iteration cap.
OracleResult oracle_site_loglik(const OracleSite& s, const OracleConfig& cfg,
                                bool include_constants = false);

OracleResult oracle_site_loglik(const Dataset& d, const Parameterization& p,
                                std::size_t site, const OracleConfig& cfg,
                                bool include_constants = false);

// Per-site oracle values, sites evaluated in parallel.
std::vector<double> oracle_loglik(const Dataset& d, const Parameterization& p,
                                  const OracleConfig& cfg,
                                  bool include_constants = false);

}  // namespace nmix
