#include "nmix/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace nmix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_g(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// Negative log-likelihood over the free coefficients.
class Objective {
 public:
  Objective(const Dataset& d, const LinkModel& link, std::vector<double> base,
            std::vector<std::size_t> free_idx, const KernelOptions& kernel)
      : d_(d), link_(link), base_(std::move(base)), free_(std::move(free_idx)) {
    opts_.include_constants = true;
    opts_.kernel = kernel;
  }

  std::vector<double> expand(std::span<const double> x) const {
    std::vector<double> coefs = base_;
    for (std::size_t k = 0; k < free_.size(); ++k) coefs[free_[k]] = x[k];
    return coefs;
  }

  LogLik evaluate(std::span<const double> x) const {
    return total_loglik(d_, link_.parameters(expand(x)), opts_);
  }

  double operator()(std::span<const double> x) {
    ++evals_;
    for (double v : x)
      if (!std::isfinite(v)) return kInf;
    try {
      const double ll = evaluate(x).total;
      return std::isfinite(ll) ? -ll : kInf;
    } catch (const std::exception&) {
      return kInf;
    }
  }

  std::size_t evals() const { return evals_; }

 private:
  const Dataset& d_;
  const LinkModel& link_;
  std::vector<double> base_;
  std::vector<std::size_t> free_;
  LikelihoodOptions opts_;
  std::size_t evals_ = 0;
};

struct HessianInfo {
  Eigen::MatrixXd hessian;
  Eigen::MatrixXd covariance;
  double condition = kInf;
  bool flagged = false;
  std::vector<std::string> messages;
};

// Central differences of the log-likelihood. Eigenvalues of -H below the
// rounding floor of the differences are treated as zero.
HessianInfo hessian_at(Objective& obj, const std::vector<double>& x, double fx,
                       double abs_scale, const FitOptions& opts) {
  const std::size_t k = x.size();
  HessianInfo info;
  info.hessian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k),
                                       static_cast<Eigen::Index>(k));
  info.covariance = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(k),
                                              static_cast<Eigen::Index>(k), kNaN);
  if (k == 0) {
    info.condition = 1.0;
    return info;
  }

  std::vector<double> step(k);
  for (std::size_t i = 0; i < k; ++i)
    step[i] = opts.hessian_step * std::max(1.0, std::abs(x[i]));

  // f is the negative log-likelihood; H below is of the log-likelihood.
  auto f_at = [&](std::size_t i, double di, std::size_t j, double dj) {
    std::vector<double> z = x;
    z[i] += di;
    z[j] += dj;
    return obj(z);
  };
  for (std::size_t i = 0; i < k; ++i) {
    const double h = step[i];
    const double fp = f_at(i, h, i, 0.0);
    const double fm = f_at(i, -h, i, 0.0);
    info.hessian(i, i) = -(fp - 2.0 * fx + fm) / (h * h);
    for (std::size_t j = 0; j < i; ++j) {
      const double hj = step[j];
      const double fpp = f_at(i, h, j, hj);
      const double fpm = f_at(i, h, j, -hj);
      const double fmp = f_at(i, -h, j, hj);
      const double fmm = f_at(i, -h, j, -hj);
      const double v = -(fpp - fpm - fmp + fmm) / (4.0 * h * hj);
      info.hessian(i, j) = v;
      info.hessian(j, i) = v;
    }
  }

  if (!info.hessian.allFinite()) {
    info.flagged = true;
    info.messages.push_back("Hessian could not be evaluated at the optimum");
    return info;
  }

  const double min_step = *std::min_element(step.begin(), step.end());
  const double eps_f = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + abs_scale);
  const double floor = 4.0 * eps_f / (min_step * min_step);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-info.hessian);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  const double smallest = ev.minCoeff();
  const bool definite = smallest > floor;

  if (definite) {
    info.condition = largest / smallest;
    info.covariance = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                      eig.eigenvectors().transpose();
    info.covariance = 0.5 * (info.covariance + info.covariance.transpose()).eval();
  } else {
    info.condition = kInf;
  }

  if (smallest < -floor) {
    info.flagged = true;
    info.messages.push_back("Hessian is not negative definite at the optimum");
  } else if (!definite) {
    info.flagged = true;
    info.messages.push_back(
        "near-singular Hessian: condition number exceeds " + format_g(opts.condition_limit) +
        " (smallest eigenvalue within rounding noise " + format_g(floor) + ")");
  } else if (info.condition > opts.condition_limit) {
    info.flagged = true;
    info.messages.push_back("near-singular Hessian: condition number " +
                            format_g(info.condition) + " exceeds " +
                            format_g(opts.condition_limit));
  }
  return info;
}

double detection_fraction(const Dataset& d) {
  std::size_t cells = 0;
  std::size_t hits = 0;
  for (const auto& rec : d.records)
    for (Count y : rec.y) {
      ++cells;
      hits += y > 0;
    }
  return cells ? static_cast<double>(hits) / static_cast<double>(cells) : 0.0;
}

}  // namespace

std::size_t FitResult::free_count() const {
  return static_cast<std::size_t>(std::count(free.begin(), free.end(), true));
}

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, const NelderMeadOptions& opts) {
  const std::size_t n = x0.size();
  NelderMeadResult out;
  auto eval = [&](const std::vector<double>& x) {
    ++out.evals;
    const double v = f(x);
    return std::isfinite(v) ? v : kInf;
  };
  if (n == 0) {
    out.x = x0;
    out.value = eval(x0);
    out.converged = true;
    return out;
  }

  std::vector<double> best = x0;
  double best_value = eval(x0);
  double step = opts.initial_step;

  for (std::size_t restart = 0; restart <= opts.max_restarts; ++restart) {
    std::vector<std::vector<double>> simplex(n + 1, best);
    std::vector<double> fv(n + 1, best_value);
    for (std::size_t i = 0; i < n; ++i) {
      simplex[i + 1][i] += step;
      fv[i + 1] = eval(simplex[i + 1]);
    }

    std::vector<std::size_t> order(n + 1);
    bool collapsed = false;
    while (out.evals < opts.max_evals) {
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
      const std::size_t lo = order.front();
      const std::size_t hi = order.back();
      const std::size_t next_hi = order[n - 1];

      double xspread = 0.0;
      for (std::size_t v = 0; v <= n; ++v)
        for (std::size_t i = 0; i < n; ++i)
          xspread = std::max(xspread, std::abs(simplex[v][i] - simplex[lo][i]));
      const double fspread = fv[hi] - fv[lo];
      if (std::isfinite(fv[lo]) && fspread <= opts.ftol * (1.0 + std::abs(fv[lo])) &&
          xspread <= opts.xtol) {
        collapsed = true;
        break;
      }

      std::vector<double> centroid(n, 0.0);
      for (std::size_t v = 0; v <= n; ++v)
        if (v != hi)
          for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[v][i] / static_cast<double>(n);
      auto along = [&](double t) {
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = centroid[i] + t * (simplex[hi][i] - centroid[i]);
        return x;
      };

      auto xr = along(-1.0);
      const double fr = eval(xr);
      if (fr < fv[lo]) {
        auto xe = along(-2.0);
        const double fe = eval(xe);
        if (fe < fr) {
          simplex[hi] = std::move(xe);
          fv[hi] = fe;
        } else {
          simplex[hi] = std::move(xr);
          fv[hi] = fr;
        }
        continue;
      }
      if (fr < fv[next_hi]) {
        simplex[hi] = std::move(xr);
        fv[hi] = fr;
        continue;
      }
      const bool outside = fr < fv[hi];
      auto xc = along(outside ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fv[hi])) {
        simplex[hi] = std::move(xc);
        fv[hi] = fc;
        continue;
      }
      for (std::size_t v = 0; v <= n; ++v) {
        if (v == lo) continue;
        for (std::size_t i = 0; i < n; ++i)
          simplex[v][i] = simplex[lo][i] + 0.5 * (simplex[v][i] - simplex[lo][i]);
        fv[v] = eval(simplex[v]);
      }
    }

    const auto lo = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    const double previous = best_value;
    if (fv[lo] <= best_value) {
      best = simplex[lo];
      best_value = fv[lo];
    }
    if (!collapsed) break;
    if (restart > 0 && previous - best_value <= opts.ftol * (1.0 + std::abs(best_value))) {
      out.converged = true;
      break;
    }
    step = std::max(10.0 * opts.xtol, 0.1 * step);
  }
  out.x = std::move(best);
  out.value = best_value;
  return out;
}

std::vector<double> default_init(const Dataset& d, const LinkModel& link) {
  const std::size_t R = d.records.size();
  double max_sum = 0.0;
  double y_sum = 0.0;
  std::size_t cells = 0;
  for (const auto& rec : d.records) {
    Count m = 0;
    for (Count y : rec.y) {
      m = std::max(m, y);
      y_sum += static_cast<double>(y);
      ++cells;
    }
    max_sum += static_cast<double>(m);
  }
  const auto& ts = d.design.search_times();
  const double mean_T = ts.empty() ? 1.0 : std::accumulate(ts.begin(), ts.end(), 0.0) / static_cast<double>(ts.size());
  const double lambda0 = (R ? max_sum / static_cast<double>(R) : 0.0) + 0.5;

  double rate0;
  if (d.protocol.process == Process::PoissonProcess && !d.protocol.binary_response()) {
    const double mean_y = cells ? y_sum / static_cast<double>(cells) : 0.0;
    rate0 = std::max(mean_y, 1e-3) / (lambda0 * mean_T);
  } else {
    const double miss = std::clamp(1.0 - detection_fraction(d), 1e-3, 1.0 - 1e-3);
    rate0 = -std::log(miss) / mean_T;
  }

  std::vector<double> coefs(link.size(), 0.0);
  coefs[0] = std::log(lambda0);
  coefs[link.abundance_coefs()] = std::log(rate0);
  return coefs;
}

FitResult fit(const Dataset& d, const LinkModel& link, std::optional<std::vector<double>> init,
              const FitOptions& opts, std::span<const std::optional<double>> fixed) {
  const std::size_t k = link.size();
  std::vector<double> start = init ? *init : default_init(d, link);
  if (start.size() != k) throw std::invalid_argument("initial coefficient vector has wrong length");
  if (!fixed.empty() && fixed.size() != k)
    throw std::invalid_argument("fixed-coefficient vector has wrong length");
  for (double v : start)
    if (!std::isfinite(v)) throw std::invalid_argument("initial coefficients must be finite");

  FitResult res;
  res.names = link.coefficient_names();
  res.free.assign(k, true);
  std::vector<std::size_t> free_idx;
  for (std::size_t i = 0; i < k; ++i) {
    if (!fixed.empty() && fixed[i]) {
      if (!std::isfinite(*fixed[i])) throw std::invalid_argument("fixed coefficients must be finite");
      start[i] = *fixed[i];
      res.free[i] = false;
    } else {
      free_idx.push_back(i);
    }
  }

  Objective obj(d, link, start, free_idx, opts.kernel);
  std::vector<double> x0;
  for (std::size_t i : free_idx) x0.push_back(start[i]);

  // Fails loudly, with the site, when the start is unusable.
  {
    const LogLik ll0 = obj.evaluate(x0);
    for (std::size_t i = 0; i < ll0.per_site.size(); ++i)
      if (!std::isfinite(ll0.per_site[i]))
        throw LikelihoodError(i, "log-likelihood at the starting point is not finite");
  }

  NelderMeadOptions nm;
  nm.max_evals = opts.max_evals;
  nm.ftol = opts.tol;
  auto run = [&](std::vector<double> x) {
    return nelder_mead([&](std::span<const double> z) { return obj(z); }, std::move(x), nm);
  };

  NelderMeadResult best = run(x0);
  auto scale_at = [&](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : obj.evaluate(x).per_site) s += std::abs(v);
    return s;
  };
  HessianInfo hess;
  if (opts.compute_hessian && best.converged)
    hess = hessian_at(obj, best.x, best.value, scale_at(best.x), opts);

  if (opts.fallback_multistart && (!best.converged || hess.flagged) && opts.multistart_runs > 0) {
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> jitter(0.0, opts.jitter_sd);
    std::size_t best_run = 0;
    for (std::size_t r = 1; r <= opts.multistart_runs; ++r) {
      std::vector<double> x = x0;
      for (double& v : x) v += jitter(rng);
      NelderMeadResult cand = run(std::move(x));
      if (cand.value < best.value || (!best.converged && cand.converged && cand.value <= best.value + opts.tol)) {
        best = std::move(cand);
        best_run = r;
      }
    }
    res.messages.push_back("multistart: " + std::to_string(opts.multistart_runs) +
                           " jittered starts, best from " +
                           (best_run == 0 ? std::string("the initial start")
                                          : "start " + std::to_string(best_run)));
    if (opts.compute_hessian && best.converged)
      hess = hessian_at(obj, best.x, best.value, scale_at(best.x), opts);
  }

  res.converged = best.converged;
  if (!best.converged)
    res.messages.push_back("simplex search did not converge within " +
                           std::to_string(opts.max_evals) + " evaluations");
  res.coefficients = obj.expand(best.x);
  res.estimates = link.parameters(res.coefficients);
  res.loglik = -best.value;
  res.aic = 2.0 * static_cast<double>(free_idx.size()) - 2.0 * res.loglik;

  res.std_errors.assign(k, 0.0);
  if (opts.compute_hessian && best.converged) {
    res.hessian = hess.hessian;
    res.covariance = hess.covariance;
    res.hessian_condition = hess.condition;
    res.hessian_flagged = hess.flagged;
    for (auto& m : hess.messages) res.messages.push_back(std::move(m));
    for (std::size_t a = 0; a < free_idx.size(); ++a) {
      const double v = hess.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
      res.std_errors[free_idx[a]] = std::isfinite(v) && v >= 0.0 ? std::sqrt(v) : kNaN;
    }
  } else {
    const auto n = static_cast<Eigen::Index>(free_idx.size());
    res.covariance = Eigen::MatrixXd::Constant(n, n, kNaN);
    res.hessian_condition = kNaN;
    for (std::size_t i : free_idx) res.std_errors[i] = kNaN;
  }
  res.n_evals = obj.evals();
  return res;
}

FitResult fit(const Dataset& d, const FitOptions& opts) {
  return fit(d, LinkModel{}, std::nullopt, opts);
}

std::vector<ProfilePoint> profile_loglik(const Dataset& d, const LinkModel& link,
                                         std::size_t index, std::span<const double> grid,
                                         std::optional<std::vector<double>> init,
                                         const FitOptions& opts) {
  if (index >= link.size()) throw std::out_of_range("profiled coefficient index out of range");
  for (double g : grid)
    if (!std::isfinite(g)) throw std::invalid_argument("profile grid values must be finite");

  FitOptions point_opts = opts;
  point_opts.compute_hessian = false;
  point_opts.fallback_multistart = false;

  std::vector<double> start = init ? *init : default_init(d, link);
  std::vector<std::optional<double>> fixed(link.size());
  std::vector<ProfilePoint> curve;
  curve.reserve(grid.size());
  for (double g : grid) {
    ProfilePoint pt;
    pt.value = g;
    fixed[index] = g;
    try {
      FitResult r = fit(d, link, start, point_opts, fixed);
      pt.loglik = r.loglik;
      pt.coefficients = r.coefficients;
      if (!r.converged) pt.message = "did not converge";
      start = r.coefficients;
    } catch (const std::exception& e) {
      pt.message = e.what();
    }
    curve.push_back(std::move(pt));
  }
  return curve;
}

}  // namespace nmix
