#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "nmix/model.hpp"

using namespace nmix;

namespace {

Dataset one_site(Protocol proto, std::vector<Count> y, std::vector<std::vector<double>> times,
                 double T = 1.0) {
  const std::size_t J = y.size();
  return Dataset{proto, SurveyDesign::constant(1, J, T), {SiteRecord{0, std::move(y), std::move(times)}}};
}

bool mentions(const std::vector<Violation>& v, const std::string& text) {
  for (const auto& x : v)
    if (x.message.find(text) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("protocol names round-trip through the parser") {
  for (auto f : {Family::Binary, Family::BinaryT1, Family::Count, Family::CountT, Family::CountT1})
    for (auto pr : {Process::BinomialCount, Process::PoissonProcess})
      for (auto v : {Visits::Single, Visits::Multiple}) {
        Protocol p{f, pr, v};
        auto back = parse_protocol(p.name());
        REQUIRE(back);
        CHECK(*back == p);
      }
  CHECK(parse_protocol("PCountT1:M")->process == Process::PoissonProcess);
  CHECK(parse_protocol("PCountT1:M")->family == Family::CountT1);
  CHECK(parse_protocol("Count", Visits::Multiple)->visits == Visits::Multiple);
  CHECK_FALSE(parse_protocol("Counts"));
  CHECK_FALSE(parse_protocol("Count:X"));
  CHECK_FALSE(parse_protocol("P"));
  CHECK(Protocol{Family::CountT, Process::BinomialCount, Visits::Multiple}.name() == "CountT:M");
  CHECK(parse_process("poisson") == Process::PoissonProcess);
  CHECK_FALSE(parse_process("negbin"));
}

TEST_CASE("protocol predicates") {
  Protocol p{Family::CountT1, Process::BinomialCount, Visits::Single};
  CHECK(p.records_times());
  CHECK(p.first_time_only());
  CHECK_FALSE(p.binary_response());
  CHECK_FALSE(p.times_uninformative());
  p.process = Process::PoissonProcess;
  CHECK(p.times_uninformative());
  CHECK_FALSE(Protocol{Family::BinaryT1, Process::PoissonProcess, Visits::Single}.times_uninformative());
}

TEST_CASE("survey design checks its search times") {
  CHECK_THROWS_AS(SurveyDesign(2, 2, {1.0, 1.0, 0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(SurveyDesign(2, 2, {1.0, 1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(SurveyDesign(0, 2, {}), std::invalid_argument);
  const SurveyDesign d(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(d.search_time(1, 0) == 4.0);
  CHECK(d.search_time(0, 2) == 3.0);
}

TEST_CASE("binary response above one is rejected with 1-based coordinates") {
  auto d = one_site(*parse_protocol("Binary:S"), {2}, {{}});
  const auto v = validate_dataset(d);
  REQUIRE(v.size() == 1);
  CHECK(v[0].message == "binary response out of range at site 1 occasion 1");
  CHECK_THROWS_AS(require_valid(d), InvalidDataset);
}

TEST_CASE("CountT times must match counts") {
  auto d = one_site(*parse_protocol("CountT:S"), {3}, {{0.2, 0.5}});
  const auto v = validate_dataset(d);
  REQUIRE_FALSE(v.empty());
  CHECK(mentions(v, "times length 2 != expected 3 at site 1 occasion 1"));
}

TEST_CASE("time ordering and range") {
  const auto proto = *parse_protocol("CountT:S");
  CHECK(mentions(validate_dataset(one_site(proto, {2}, {{0.5, 0.2}})), "not strictly increasing"));
  CHECK(mentions(validate_dataset(one_site(proto, {2}, {{0.5, 0.5}})), "not strictly increasing"));
  CHECK(mentions(validate_dataset(one_site(proto, {1}, {{1.5}})), "outside (0, T]"));
  CHECK(mentions(validate_dataset(one_site(proto, {1}, {{0.0}})), "outside (0, T]"));
  CHECK(validate_dataset(one_site(proto, {2}, {{0.2, 1.0}})).empty());
  // t == T is allowed but reported.
  const auto w = boundary_warnings(one_site(proto, {2}, {{0.2, 1.0}}));
  REQUIRE(w.size() == 1);
  CHECK(w[0].occasion == 0u);
}

TEST_CASE("first-time protocols carry exactly one time per positive count") {
  const auto proto = *parse_protocol("CountT1:M");
  CHECK(validate_dataset(one_site(proto, {3, 0}, {{0.1}, {}})).empty());
  CHECK(mentions(validate_dataset(one_site(proto, {3, 0}, {{0.1, 0.2}, {}})), "times length 2"));
  CHECK(mentions(validate_dataset(one_site(proto, {0, 1}, {{}, {}})), "times length 0 != expected 1"));
  CHECK(mentions(validate_dataset(one_site(*parse_protocol("Count:M"), {1, 1}, {{0.3}, {}})),
                 "none expected"));
}

TEST_CASE("visits must agree with J") {
  CHECK(mentions(validate_dataset(one_site(*parse_protocol("Count:S"), {1, 2}, {{}, {}})),
                 "single-visit protocol with J > 1"));
  CHECK(mentions(validate_dataset(one_site(*parse_protocol("Count:M"), {1}, {{}})),
                 "multiple-visit protocol with J == 1"));
}

TEST_CASE("every violation is reported, not only the first") {
  Dataset d{*parse_protocol("Binary:M"), SurveyDesign::constant(2, 2, 1.0),
            {SiteRecord{0, {2, 0}, {{}, {}}}, SiteRecord{1, {0, 3}, {{}, {}}}}};
  const auto v = validate_dataset(d);
  CHECK(v.size() == 2);
  CHECK(v[1].site == 1);
  try {
    require_valid(d);
  } catch (const InvalidDataset& e) {
    CHECK(e.violations().size() == 2);
  }
}

TEST_CASE("parameter shape checks") {
  const auto design = SurveyDesign::constant(3, 2, 1.0);
  CHECK(check_parameters(Parameterization::constant(0.0, 0.0), design).empty());
  CHECK(check_parameters({{-std::numeric_limits<double>::infinity()}, {0.0}}, design).empty());
  CHECK_FALSE(check_parameters({{0.0, 1.0}, {0.0}}, design).empty());
  CHECK_FALSE(check_parameters({{0.0}, {0.0, 1.0}}, design).empty());
  CHECK_FALSE(check_parameters({{0.0}, {-std::numeric_limits<double>::infinity()}}, design).empty());
  CHECK_FALSE(check_parameters({{std::nan("")}, {0.0}}, design).empty());
  const Parameterization p{{0.1, 0.2, 0.3}, {1, 2, 3, 4, 5, 6}};
  CHECK(p.log_lambda_at(2) == 0.3);
  CHECK(p.log_rate_at(1, 1, 2) == 4.0);
}

TEST_CASE("link model maps coefficients to parameters") {
  LinkModel link;
  CHECK(link.size() == 2);
  CHECK(link.coefficient_names() == std::vector<std::string>{"log_lambda", "log_rate"});
  auto p = link.parameters(std::vector<double>{0.5, -1.0});
  CHECK(p.log_lambda == std::vector<double>{0.5});
  CHECK(p.log_rate == std::vector<double>{-1.0});

  Eigen::MatrixXd X(3, 2);
  X << 1, 0.0, 1, 1.0, 1, 2.0;
  link.abundance = X;
  CHECK(link.size() == 3);
  CHECK(link.coefficient_names()[1] == "log_lambda[1]");
  p = link.parameters(std::vector<double>{0.5, 0.25, -1.0});
  CHECK(p.log_lambda == std::vector<double>{0.5, 0.75, 1.0});
  CHECK_THROWS(link.parameters(std::vector<double>{0.5, -1.0}));
}

TEST_CASE("workspace quantities") {
  Dataset d{*parse_protocol("CountT1:M"), SurveyDesign(1, 3, {1.0, 2.0, 0.5}),
            {SiteRecord{0, {2, 0, 1}, {{0.3}, {}, {0.1}}}}};
  const auto ws = build_workspace(d, Parameterization::constant(0.0, std::log(2.0)), 0);
  CHECK(ws.y_max == 2);
  CHECK(ws.y_plus == 3);
  CHECK(ws.kappa == 2);
  CHECK(ws.effort[1] == doctest::Approx(4.0));
  CHECK(ws.p[0] == doctest::Approx(1.0 - std::exp(-2.0)));
  CHECK(ws.w_zero == doctest::Approx(4.0));
  CHECK(ws.w_detect.size() == 2);
  CHECK(ws.w_time == doctest::Approx(2.0 * 0.3 + 4.0 + 2.0 * 0.1));
  CHECK(ws.has_first_times);
  CHECK(std::isnan(ws.first_time[1]));
  CHECK_THROWS_AS(build_workspace(d, Parameterization::constant(0.0, 0.0), 1), std::out_of_range);
}
