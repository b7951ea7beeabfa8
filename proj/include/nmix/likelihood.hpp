#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmix/model.hpp"
#include "nmix/special.hpp"

namespace nmix {

// A kernel failed at a specific site.
class LikelihoodError : public std::runtime_error {
 public:
  LikelihoodError(std::size_t site, const std::string& what)
      : std::runtime_error("site " + std::to_string(site + 1) + ": " + what),
        site_(site) {}
  std::size_t site() const { return site_; }

 private:
  std::size_t site_;
};

struct KernelOptions {
  // Binary:M enumerates 2^J1 subsets of detection occasions.
  std::size_t max_subset_occasions = 20;
  // Estimated relative rounding error of the signed subset expansion above
  // which the positive mixture series is used instead.
  double max_cancellation_error = 1e-10;
  double pfq_tol = kDefaultTol;
};

struct KernelDiagnostics {
  bool series_fallback = false;
};

// Detection/non-detection, any J. Signed inclusion-exclusion over subsets S
// of the detection occasions:
//   g = e^-lambda sum_S (-1)^|S| exp(lambda e^-(W0 + sum_{j in S} w_j)).
double site_loglik_binary(const SiteWorkspace& ws, double log_lambda,
                          const KernelOptions& opts = {},
                          KernelDiagnostics* diag = nullptr);

// Detection/non-detection with the time to first detection on every
// occasion with a detection. Reads first-detection times from the workspace.
double site_loglik_binary_t1(const SiteWorkspace& ws, double log_lambda);

// Thinned Poisson pmf for a single visit.
double site_loglik_count_s(Count y, double log_lambda, double log_h, double T);

// Binomial N-mixture pmf for any J via the qFq series; J == 1 agrees with
// site_loglik_count_s.
double site_loglik_count_m(const SiteWorkspace& ws, double log_lambda,
                           const KernelOptions& opts = {});

// Log density of every detection time given the counts (times treated as
// labelled; include_constants adds log y_j! for the sorted-vector density).
double time_factor_count_t(const SiteWorkspace& ws, bool include_constants = false);

// Log density of the first detection time given each positive count;
// include_constants adds log y_j. Throws std::domain_error when y_j > 1 and
// t_j(1) >= T_j.
double time_factor_count_t1(const SiteWorkspace& ws, bool include_constants = false);

// Counts under the Poisson detection process (double counting), any J.
double site_loglik_pcount(const SiteWorkspace& ws, double log_lambda);

// Parameter-free log density of the recorded times given the counts under
// the Poisson process: sum log y! - y log T (all times) or
// log y - log T + (y-1) log(1 - t/T) (first time only).
double poisson_time_constant(const SiteWorkspace& ws, Family family);

struct LikelihoodOptions {
  bool include_constants = false;
  KernelOptions kernel;
};

struct LogLik {
  double total = 0.0;
  std::vector<double> per_site;
  bool irrelevant_constant_included = false;
  // Sites where a signed expansion was replaced by the positive series.
  std::vector<std::size_t> fallback_sites;
};

// Per-site log-likelihood dispatched on the dataset protocol. Kernel failures
// surface as LikelihoodError carrying the site.
double site_loglik(const Dataset& d, const Parameterization& p,
                   std::size_t site, const LikelihoodOptions& opts = {},
                   KernelDiagnostics* diag = nullptr);

// Sites evaluated in parallel (OpenMP); the total is reduced in site order so
// the result matches total_loglik_serial bit for bit.
LogLik total_loglik(const Dataset& d, const Parameterization& p,
                    const LikelihoodOptions& opts = {});

// Single-threaded reference.
LogLik total_loglik_serial(const Dataset& d, const Parameterization& p,
                           const LikelihoodOptions& opts = {});

// Log probability of the response pattern alone (times marginalized out).
double site_loglik_response(const Dataset& d, const Parameterization& p,
                            std::size_t site, const KernelOptions& opts = {});

}  // namespace nmix
