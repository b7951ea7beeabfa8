#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "nmix/estimate.hpp"
#include "nmix/simulate.hpp"

using namespace nmix;

namespace {

Dataset simulate(const char* model, std::size_t R, std::size_t J, double lambda, double h,
                 std::uint64_t seed, double T = 1.0) {
  return simulate_dataset(SimConfig{SurveyDesign::constant(R, J, T), *parse_protocol(model),
                                    Parameterization::constant(std::log(lambda), std::log(h)), seed});
}

double loglik_at(const Dataset& d, std::vector<double> coefs) {
  LikelihoodOptions o;
  o.include_constants = true;
  return total_loglik(d, LinkModel{}.parameters(coefs), o).total;
}

Dataset rescale_time(Dataset d, double c) {
  std::vector<double> T = d.design.search_times();
  for (auto& t : T) t *= c;
  d.design = SurveyDesign(d.sites(), d.occasions(), T);
  for (auto& r : d.records)
    for (auto& ts : r.times)
      for (auto& t : ts) t *= c;
  return d;
}

}  // namespace

TEST_CASE("Nelder-Mead finds the minimum of smooth test functions") {
  auto quad = [](std::span<const double> x) {
    return (x[0] - 1.5) * (x[0] - 1.5) + 10 * (x[1] + 0.5) * (x[1] + 0.5) + 3.0;
  };
  auto r = nelder_mead(quad, {0.0, 0.0});
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(1.5).epsilon(1e-5));
  CHECK(r.x[1] == doctest::Approx(-0.5).epsilon(1e-5));
  CHECK(r.value == doctest::Approx(3.0).epsilon(1e-12));

  auto rosen = [](std::span<const double> x) {
    return 100 * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]) + (1 - x[0]) * (1 - x[0]);
  };
  r = nelder_mead(rosen, {-1.2, 1.0});
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-4));

  // Infeasible region is treated as +inf.
  auto walled = [](std::span<const double> x) { return x[0] < 0 ? std::nan("") : (x[0] - 2) * (x[0] - 2); };
  r = nelder_mead(walled, {0.5});
  CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-5));

  NelderMeadOptions tight;
  tight.max_evals = 10;
  CHECK_FALSE(nelder_mead(rosen, {-1.2, 1.0}, tight).converged);
}

TEST_CASE("Count:M fit recovers the truth and reports consistent diagnostics") {
  const auto d = simulate("Count:M", 200, 4, 2.0, 1.0, 101);
  const auto r = fit(d);
  REQUIRE(r.converged);
  CHECK_FALSE(r.hessian_flagged);
  CHECK(r.names == std::vector<std::string>{"log_lambda", "log_rate"});
  CHECK(std::abs(r.coefficients[0] - std::log(2.0)) < 3 * r.std_errors[0]);
  CHECK(std::abs(r.coefficients[1] - std::log(1.0)) < 3 * r.std_errors[1]);
  CHECK(r.aic == doctest::Approx(2 * 2 - 2 * r.loglik).epsilon(1e-15));
  CHECK(r.loglik == doctest::Approx(loglik_at(d, r.coefficients)).epsilon(1e-14));
  CHECK(r.covariance.rows() == 2);
  CHECK((r.covariance - r.covariance.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.covariance(0, 0) >= 0.0);
  CHECK(r.covariance(1, 1) >= 0.0);
  CHECK(r.hessian_condition < 1e6);
  CHECK(r.n_evals > 10);
  CHECK(r.estimates.log_lambda[0] == r.coefficients[0]);
}

TEST_CASE("optimum is no worse than the truth") {
  for (const char* model : {"Binary:M", "BinaryT1:M", "CountT1:M", "PCount:M", "PCountT:M"}) {
    CAPTURE(model);
    const auto d = simulate(model, 100, 3, 2.0, 0.7, 7);
    const std::vector<double> truth{std::log(2.0), std::log(0.7)};
    const auto r = fit(d, LinkModel{}, truth);
    CHECK(r.loglik >= loglik_at(d, truth));
  }
}

TEST_CASE("constant-parameter single-visit fits flag a near-singular Hessian") {
  for (const char* model : {"Binary:S", "Count:S"}) {
    CAPTURE(model);
    const auto d = simulate(model, 200, 1, 3.0, 0.5, 11);
    const auto r = fit(d);
    CHECK(r.hessian_flagged);
    CHECK(r.hessian_condition > 1e8);
    const bool mentioned = std::any_of(r.messages.begin(), r.messages.end(), [](const std::string& m) {
      return m.find("near-singular Hessian") != std::string::npos;
    });
    CHECK(mentioned);
  }
}

TEST_CASE("Count:S profile over log lambda is flat; CountT:S has an interior peak") {
  const auto dt = simulate("CountT:S", 300, 1, 3.0, 0.5, 12);
  Dataset dc = dt;
  dc.protocol.family = Family::Count;
  for (auto& r : dc.records) r.times = {{}};
  double ybar = 0;
  for (const auto& r : dc.records) ybar += static_cast<double>(r.y[0]);
  ybar /= static_cast<double>(dc.records.size());

  std::vector<double> grid;
  for (int k = 0; k < 9; ++k) grid.push_back(std::log(ybar * 1.6) + 0.25 * k);
  const auto flat = profile_loglik(dc, LinkModel{}, 0, grid, std::nullopt);
  double lo = 1e300, hi = -1e300;
  for (const auto& pt : flat) {
    REQUIRE(pt.loglik);
    lo = std::min(lo, *pt.loglik);
    hi = std::max(hi, *pt.loglik);
  }
  CHECK(hi - lo < 0.01);

  const auto curved = profile_loglik(dt, LinkModel{}, 0, grid, std::nullopt);
  std::vector<double> v;
  for (const auto& pt : curved) {
    REQUIRE(pt.loglik);
    v.push_back(*pt.loglik);
  }
  const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  CHECK(best > 0);
  CHECK(best + 1 < v.size());
  CHECK(v[best] - v.front() > 0.5);
  CHECK(v[best] - v.back() > 0.5);
}

TEST_CASE("single-point profile at the optimum equals the fit") {
  const auto d = simulate("CountT1:M", 150, 3, 2.0, 1.0, 13);
  const auto r = fit(d);
  const std::vector<double> grid{r.coefficients[0]};
  const auto prof = profile_loglik(d, LinkModel{}, 0, grid, r.coefficients);
  REQUIRE(prof.size() == 1);
  REQUIRE(prof[0].loglik);
  CHECK(std::abs(*prof[0].loglik - r.loglik) < 1e-6);
}

TEST_CASE("profile reports failures as gaps") {
  // Two detections with the first at the end of the search cannot happen.
  Dataset d{*parse_protocol("CountT1:S"), SurveyDesign::constant(2, 1, 1.0),
            {SiteRecord{0, {1}, {{0.5}}}, SiteRecord{1, {2}, {{1.0}}}}};
  const std::vector<double> grid{0.0, 1.0};
  const auto prof = profile_loglik(d, LinkModel{}, 0, grid, std::vector<double>{0.0, 0.0});
  REQUIRE(prof.size() == 2);
  for (const auto& pt : prof) {
    CHECK_FALSE(pt.loglik);
    CHECK(pt.message.find("site 2") != std::string::npos);
  }
}

TEST_CASE("changing time units only shifts log h") {
  const double c = 60.0;
  const auto d = simulate("Count:M", 150, 3, 2.0, 1.0, 15);
  const auto a = fit(d);
  const auto b = fit(rescale_time(d, c));
  CHECK(std::abs(b.coefficients[1] - (a.coefficients[1] - std::log(c))) < 1e-6);
  CHECK(std::abs(b.coefficients[0] - a.coefficients[0]) < 1e-6);
  CHECK(std::abs(b.loglik - a.loglik) < 1e-6);
  CHECK(std::abs(b.aic - a.aic) < 1e-6);

  // Time densities change by the Jacobian of the unit change, one factor of
  // 1/c per recorded time; estimates still only shift log h.
  const auto dt = simulate("CountT:M", 150, 3, 2.0, 1.0, 16);
  std::size_t n_times = 0;
  for (const auto& r : dt.records)
    for (const auto& ts : r.times) n_times += ts.size();
  const auto at = fit(dt);
  const auto bt = fit(rescale_time(dt, c));
  CHECK(std::abs(bt.coefficients[1] - (at.coefficients[1] - std::log(c))) < 1e-6);
  CHECK(std::abs(bt.coefficients[0] - at.coefficients[0]) < 1e-6);
  CHECK(std::abs(bt.loglik - (at.loglik - static_cast<double>(n_times) * std::log(c))) < 1e-6);
}

TEST_CASE("adding a site covariate never lowers the maximum") {
  const auto d = simulate("Count:M", 120, 3, 2.0, 1.0, 17);
  LinkModel full;
  Eigen::MatrixXd X(120, 2);
  for (int i = 0; i < 120; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = std::sin(0.37 * i);
  }
  full.abundance = X;
  const auto reduced = fit(d);
  const auto r = fit(d, full, std::nullopt);
  CHECK(r.coefficients.size() == 3);
  CHECK(r.loglik >= reduced.loglik - 1e-9);
  CHECK(r.aic == doctest::Approx(2 * 3 - 2 * r.loglik).epsilon(1e-15));
}

TEST_CASE("fixed coefficients are held and excluded from k") {
  const auto d = simulate("Count:M", 100, 3, 2.0, 1.0, 18);
  const std::vector<std::optional<double>> fixed{std::nullopt, 0.0};
  const auto r = fit(d, LinkModel{}, std::nullopt, {}, fixed);
  CHECK(r.coefficients[1] == 0.0);
  CHECK(r.free == std::vector<bool>{true, false});
  CHECK(r.free_count() == 1);
  CHECK(r.std_errors[1] == 0.0);
  CHECK(r.covariance.rows() == 1);
  CHECK(r.aic == doctest::Approx(2 - 2 * r.loglik).epsilon(1e-15));
}

TEST_CASE("an unusable start fails with the offending site") {
  Dataset d{*parse_protocol("CountT1:S"), SurveyDesign::constant(3, 1, 1.0),
            {SiteRecord{0, {1}, {{0.5}}}, SiteRecord{1, {0}, {{}}}, SiteRecord{2, {2}, {{1.0}}}}};
  try {
    (void)fit(d);
    FAIL("expected LikelihoodError");
  } catch (const LikelihoodError& e) {
    CHECK(e.site() == 2);
  }
  const std::vector<double> bad{std::nan(""), 0.0};
  CHECK_THROWS_AS(fit(simulate("Count:M", 10, 2, 1, 1, 1), LinkModel{}, bad), std::invalid_argument);
}

TEST_CASE("default start") {
  Dataset d{*parse_protocol("Binary:M"), SurveyDesign::constant(2, 2, 2.0),
            {SiteRecord{0, {1, 0}, {{}, {}}}, SiteRecord{1, {0, 0}, {{}, {}}}}};
  const auto init = default_init(d);
  CHECK(init[0] == doctest::Approx(std::log(0.5 + 0.5)));
  CHECK(init[1] == doctest::Approx(std::log(-std::log(0.75) / 2.0)));
  for (auto& r : d.records) r.y = {0, 0};
  CHECK(std::isfinite(default_init(d)[1]));
}
