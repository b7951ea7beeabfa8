#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "nmix/likelihood.hpp"
#include "nmix/simulate.hpp"
#include "support.hpp"

using namespace nmix;

namespace {

SimConfig config(const char* model, std::size_t R, std::size_t J, double lambda, double rate,
                 double T = 1.0, std::uint64_t seed = 1) {
  return SimConfig{SurveyDesign::constant(R, J, T), *parse_protocol(model),
                   Parameterization::constant(std::log(lambda), std::log(rate)), seed};
}

bool same(const Dataset& a, const Dataset& b) {
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i)
    if (a.records[i].y != b.records[i].y || a.records[i].times != b.records[i].times) return false;
  return true;
}

// Kolmogorov-Smirnov distance of a sample from a continuous CDF.
template <class F>
double ks_distance(std::vector<double> xs, F cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double f = cdf(xs[k]);
    d = std::max({d, f - k / n, (k + 1) / n - f});
  }
  return d;
}

}  // namespace

TEST_CASE("parallel and serial simulation are identical") {
  for (const auto& proto : testsupport::all_protocols()) {
    const std::size_t J = proto.visits == Visits::Single ? 1 : 3;
    SimConfig cfg{SurveyDesign::constant(500, J, 1.3), proto,
                  Parameterization::constant(std::log(3.0), std::log(0.7)), 42};
    CHECK(same(simulate_dataset(cfg), simulate_dataset_serial(cfg)));
  }
}

TEST_CASE("simulated data always validate") {
  std::mt19937_64 rng(1);
  for (const auto& proto : testsupport::all_protocols()) {
    CAPTURE(proto.name());
    for (int rep = 0; rep < 20; ++rep) {
      auto inst = testsupport::random_instance(proto, rng, 50, 4);
      CHECK(validate_dataset(inst.data).empty());
      CHECK(inst.data.protocol == proto);
    }
  }
}

TEST_CASE("seeds control the streams") {
  const auto a = simulate_dataset(config("CountT:M", 200, 3, 3.0, 1.0, 1.0, 5));
  const auto b = simulate_dataset(config("CountT:M", 200, 3, 3.0, 1.0, 1.0, 5));
  const auto c = simulate_dataset(config("CountT:M", 200, 3, 3.0, 1.0, 1.0, 6));
  CHECK(same(a, b));
  CHECK_FALSE(same(a, c));
  CHECK(site_stream_seed(1, 0) != site_stream_seed(1, 1));
  CHECK(site_stream_seed(1, 0) != site_stream_seed(2, 0));
}

TEST_CASE("an empty population is never detected") {
  SimConfig cfg{SurveyDesign::constant(100, 2, 1.0), *parse_protocol("PCountT:M"),
                Parameterization{{-std::numeric_limits<double>::infinity()}, {0.0}}, 3};
  for (const auto& r : simulate_dataset(cfg).records) CHECK(r.y == std::vector<Count>{0, 0});
}

TEST_CASE("mean count matches lambda p") {
  const double lambda = 2.0, h = 0.8, T = 1.5;
  const auto d = simulate_dataset(config("Count:S", 200000, 1, lambda, h, T, 9));
  double s = 0, s2 = 0;
  for (const auto& r : d.records) {
    s += r.y[0];
    s2 += static_cast<double>(r.y[0] * r.y[0]);
  }
  const double n = static_cast<double>(d.records.size());
  const double mean = s / n;
  const double mu = lambda * (1 - std::exp(-h * T));
  // Thinned Poisson: variance equals mean.
  CHECK(std::abs(mean - mu) < 4.5 * std::sqrt(mu / n));
  CHECK(std::abs((s2 / n - mean * mean) - mu) < 0.03);
}

TEST_CASE("pattern frequencies match the closed form") {
  struct Cell {
    const char* model;
    double lambda, rate;
    std::vector<Count> pattern;
  };
  const std::vector<Cell> cells = {
      {"Binary:M", 2.0, 0.6, {1, 0, 1}},  {"Count:M", 2.0, 1.0, {1, 2, 0}},
      {"PCount:M", 1.5, 0.8, {0, 2, 1}},  {"PBinary:S", 3.0, 0.3, {1}},
      {"CountT1:M", 2.5, 0.5, {1, 1, 0}}, {"Count:S", 4.0, 0.2, {1}}};
  for (const auto& c : cells) {
    CAPTURE(c.model);
    const std::size_t J = c.pattern.size();
    const auto r = empirical_pmf_check(config(c.model, 1, J, c.lambda, c.rate, 1.0, 17), c.pattern, 200000);
    CHECK(r.draws == 200000);
    CHECK(r.exact > 0.0);
    CHECK(std::abs(r.z_score) < 4.5);
  }
}

TEST_CASE("zero-probability patterns are rejected") {
  SimConfig cfg{SurveyDesign::constant(1, 1, 1.0), *parse_protocol("Count:S"),
                Parameterization{{-std::numeric_limits<double>::infinity()}, {0.0}}, 1};
  CHECK_THROWS_AS(empirical_pmf_check(cfg, std::vector<Count>{1}, 10), std::invalid_argument);
  CHECK_THROWS_AS(empirical_pmf_check(config("Count:M", 1, 2, 1, 1), std::vector<Count>{1}, 10),
                  std::invalid_argument);
}

TEST_CASE("CountT times follow the truncated exponential") {
  const double h = 1.3, T = 1.0;
  const auto d = simulate_dataset(config("CountT:S", 20000, 1, 3.0, h, T, 21));
  std::vector<double> ts;
  for (const auto& r : d.records) ts.insert(ts.end(), r.times[0].begin(), r.times[0].end());
  REQUIRE(ts.size() > 10000);
  const double D = ks_distance(ts, [&](double t) { return std::expm1(-h * t) / std::expm1(-h * T); });
  // 0.1% critical value.
  CHECK(D < 1.95 / std::sqrt(static_cast<double>(ts.size())));
}

TEST_CASE("PCountT times are uniform and BinaryT1 first times follow the minimum") {
  const double T = 2.0;
  auto d = simulate_dataset(config("PCountT:S", 20000, 1, 2.0, 0.5, T, 22));
  std::vector<double> ts;
  for (const auto& r : d.records) ts.insert(ts.end(), r.times[0].begin(), r.times[0].end());
  REQUIRE(ts.size() > 10000);
  CHECK(ks_distance(ts, [&](double t) { return t / T; }) < 1.95 / std::sqrt(static_cast<double>(ts.size())));

  // Given n individuals the first detection is exponential with rate n h; with
  // lambda small almost every detected site has n = 1.
  const double h = 0.9;
  d = simulate_dataset(config("BinaryT1:S", 400000, 1, 0.02, h, T, 23));
  ts.clear();
  for (const auto& r : d.records)
    if (r.y[0] == 1) ts.push_back(r.times[0][0]);
  REQUIRE(ts.size() > 3000);
  // Mixture over n >= 1 of truncated Exp(n h): weights Pois(n) (1 - e^{-n h T}).
  auto cdf = [&](double t) {
    double num = 0, den = 0, pn = std::exp(-0.02);
    for (int n = 1; n < 30; ++n) {
      pn *= 0.02 / n;
      num += pn * -std::expm1(-n * h * t);
      den += pn * -std::expm1(-n * h * T);
    }
    return num / den;
  };
  CHECK(ks_distance(ts, cdf) < 1.95 / std::sqrt(static_cast<double>(ts.size())));
}
