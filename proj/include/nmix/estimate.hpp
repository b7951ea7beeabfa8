#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nmix/likelihood.hpp"
#include "nmix/model.hpp"

namespace nmix {

struct NelderMeadOptions {
  std::size_t max_evals = 20000;
  double ftol = 1e-10;        // relative spread of vertex values
  double xtol = 1e-7;         // largest vertex distance from the best one
  double initial_step = 0.5;
  std::size_t max_restarts = 10;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  std::size_t evals = 0;
  bool converged = false;
};

// Minimizes f. Non-finite values count as +inf. After the simplex collapses
// the search restarts from the best point until a restart stops improving.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, const NelderMeadOptions& opts = {});

struct FitOptions {
  std::size_t max_evals = 20000;
  double tol = 1e-10;
  bool fallback_multistart = true;
  std::size_t multistart_runs = 5;
  double jitter_sd = 0.5;
  std::uint64_t seed = 20160601;
  double hessian_step = 1e-4;          // relative to max(1, |coef|)
  double condition_limit = 1e10;
  bool compute_hessian = true;
  KernelOptions kernel;
};

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> coefficients;    // all coefficients, fixed ones included
  std::vector<bool> free;
  Parameterization estimates;
  double loglik = 0.0;                 // constants included
  double aic = 0.0;
  Eigen::MatrixXd hessian;             // free coefficients only
  Eigen::MatrixXd covariance;          // free coefficients only; NaN if singular
  std::vector<double> std_errors;      // per coefficient; 0 for fixed ones
  double hessian_condition = 0.0;
  bool hessian_flagged = false;
  bool converged = false;
  std::size_t n_evals = 0;
  std::vector<std::string> messages;

  std::size_t free_count() const;
};

// Method-of-moments start. With design matrices the first column of each is
// taken to be the intercept; other coefficients start at zero.
std::vector<double> default_init(const Dataset& d, const LinkModel& link = {});

// Maximizes the log-likelihood over the coefficients of `link` whose entry in
// `fixed` is empty. Fails with LikelihoodError when the start cannot be
// evaluated; later non-convergence and Hessian trouble only add messages.
FitResult fit(const Dataset& d, const LinkModel& link,
              std::optional<std::vector<double>> init, const FitOptions& opts = {},
              std::span<const std::optional<double>> fixed = {});

// Intercept-only model.
FitResult fit(const Dataset& d, const FitOptions& opts = {});

struct ProfilePoint {
  double value = 0.0;
  std::optional<double> loglik;        // empty when the fit failed
  std::vector<double> coefficients;
  std::string message;
};

// Maximum log-likelihood with coefficient `index` held at each grid value.
// Points are fitted in grid order, each starting from the previous optimum.
std::vector<ProfilePoint> profile_loglik(const Dataset& d, const LinkModel& link,
                                         std::size_t index, std::span<const double> grid,
                                         std::optional<std::vector<double>> init,
                                         const FitOptions& opts = {});

}  // namespace nmix
