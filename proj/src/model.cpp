#include "nmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nmix {

namespace {

std::string at(std::size_t site, std::size_t occasion) {
  std::ostringstream os;
  os << " at site " << site + 1 << " occasion " << occasion + 1;
  return os.str();
}

}  // namespace

std::string_view to_string(Family f) {
  switch (f) {
    case Family::Binary: return "Binary";
    case Family::BinaryT1: return "BinaryT1";
    case Family::Count: return "Count";
    case Family::CountT: return "CountT";
    case Family::CountT1: return "CountT1";
  }
  return "?";
}

std::string_view to_string(Process p) {
  return p == Process::BinomialCount ? "binomial" : "poisson";
}

std::optional<Family> parse_family(std::string_view s) {
  for (auto f : {Family::Binary, Family::BinaryT1, Family::Count,
                 Family::CountT, Family::CountT1}) {
    if (s == to_string(f)) return f;
  }
  return std::nullopt;
}

std::optional<Process> parse_process(std::string_view s) {
  if (s == "binomial" || s == "binomial-count" || s == "BinomialCount")
    return Process::BinomialCount;
  if (s == "poisson" || s == "poisson-process" || s == "PoissonProcess")
    return Process::PoissonProcess;
  return std::nullopt;
}

std::string Protocol::name() const {
  std::string out;
  if (process == Process::PoissonProcess) out += 'P';
  out += to_string(family);
  out += visits == Visits::Single ? ":S" : ":M";
  return out;
}

std::optional<Protocol> parse_protocol(std::string_view s, Visits visits) {
  Protocol proto;
  proto.visits = visits;
  if (auto colon = s.find(':'); colon != std::string_view::npos) {
    auto suffix = s.substr(colon + 1);
    if (suffix == "S")
      proto.visits = Visits::Single;
    else if (suffix == "M")
      proto.visits = Visits::Multiple;
    else
      return std::nullopt;
    s = s.substr(0, colon);
  }
  if (auto f = parse_family(s)) {
    proto.family = *f;
    return proto;
  }
  if (s.size() > 1 && s.front() == 'P') {
    if (auto f = parse_family(s.substr(1))) {
      proto.family = *f;
      proto.process = Process::PoissonProcess;
      return proto;
    }
  }
  return std::nullopt;
}

SurveyDesign::SurveyDesign(std::size_t sites, std::size_t occasions,
                           std::vector<double> search_times)
    : sites_(sites), occasions_(occasions),
      search_times_(std::move(search_times)) {
  if (sites_ == 0 || occasions_ == 0)
    throw std::invalid_argument("survey design needs at least one site and one occasion");
  if (search_times_.size() != sites_ * occasions_)
    throw std::invalid_argument("search time matrix is not R x J");
  for (double t : search_times_) {
    if (!(t > 0.0) || !std::isfinite(t))
      throw std::invalid_argument("search times must be finite and > 0");
  }
}

SurveyDesign SurveyDesign::constant(std::size_t sites, std::size_t occasions,
                                    double search_time) {
  return SurveyDesign(sites, occasions,
                      std::vector<double>(sites * occasions, search_time));
}

std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  const auto& proto = d.protocol;
  const std::size_t R = d.design.sites();
  const std::size_t J = d.design.occasions();

  if ((proto.visits == Visits::Single) != (J == 1)) {
    out.push_back({0, std::nullopt,
                   proto.visits == Visits::Single
                       ? "single-visit protocol with J > 1"
                       : "multiple-visit protocol with J == 1"});
  }
  if (d.records.size() != R) {
    std::ostringstream os;
    os << "expected " << R << " site records, found " << d.records.size();
    out.push_back({0, std::nullopt, os.str()});
  }

  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& rec = d.records[i];
    if (rec.site_id != i) {
      std::ostringstream os;
      os << "record " << i + 1 << " carries site id " << rec.site_id + 1;
      out.push_back({i, std::nullopt, os.str()});
    }
    if (rec.y.size() != J || rec.times.size() != J) {
      std::ostringstream os;
      os << "record shape does not match J = " << J << " at site " << i + 1;
      out.push_back({i, std::nullopt, os.str()});
      continue;
    }
    for (std::size_t j = 0; j < J; ++j) {
      const Count y = rec.y[j];
      const auto& ts = rec.times[j];
      if (y < 0) {
        out.push_back({i, j, "negative count" + at(i, j)});
        continue;
      }
      if (proto.binary_response() && y > 1)
        out.push_back({i, j, "binary response out of range" + at(i, j)});

      std::size_t expected = 0;
      if (proto.family == Family::CountT)
        expected = static_cast<std::size_t>(y);
      else if (proto.first_time_only())
        expected = y > 0 ? 1 : 0;
      if (ts.size() != expected) {
        std::ostringstream os;
        os << "times length " << ts.size() << " != "
           << (proto.records_times() ? "expected " : "none expected, ")
           << expected << at(i, j);
        out.push_back({i, j, os.str()});
      }

      const double T = i < R ? d.design.search_time(i, j) : 0.0;
      for (std::size_t k = 0; k < ts.size(); ++k) {
        const double t = ts[k];
        if (!std::isfinite(t) || !(t > 0.0) || (i < R && t > T)) {
          std::ostringstream os;
          os << "detection time " << t << " outside (0, T]" << at(i, j);
          out.push_back({i, j, os.str()});
        }
        if (k > 0 && !(ts[k - 1] < t))
          out.push_back({i, j, "detection times not strictly increasing" + at(i, j)});
      }
    }
  }
  return out;
}

std::vector<Violation> boundary_warnings(const Dataset& d) {
  std::vector<Violation> out;
  const std::size_t R = std::min(d.records.size(), d.design.sites());
  for (std::size_t i = 0; i < R; ++i) {
    const auto& rec = d.records[i];
    for (std::size_t j = 0; j < rec.times.size() && j < d.design.occasions(); ++j) {
      for (double t : rec.times[j]) {
        if (t == d.design.search_time(i, j))
          out.push_back({i, j, "detection time equals search time" + at(i, j)});
      }
    }
  }
  return out;
}

namespace {

std::string summarize(const std::vector<Violation>& v) {
  std::string msg = "invalid dataset";
  if (!v.empty()) msg += ": " + v.front().message;
  if (v.size() > 1) msg += " (+" + std::to_string(v.size() - 1) + " more)";
  return msg;
}

}  // namespace

InvalidDataset::InvalidDataset(std::vector<Violation> v)
    : std::runtime_error(summarize(v)), violations_(std::move(v)) {}

void require_valid(const Dataset& d) {
  auto v = validate_dataset(d);
  if (!v.empty()) throw InvalidDataset(std::move(v));
}

std::vector<std::string> check_parameters(const Parameterization& p,
                                          const SurveyDesign& design) {
  std::vector<std::string> out;
  const std::size_t R = design.sites();
  const std::size_t J = design.occasions();
  if (p.log_lambda.size() != 1 && p.log_lambda.size() != R)
    out.push_back("log_lambda must be scalar or length R");
  if (p.log_rate.size() != 1 && p.log_rate.size() != R * J)
    out.push_back("log_rate must be scalar or R x J");
  for (double v : p.log_lambda) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity() ||
        !std::isfinite(std::exp(v)))
      out.push_back("abundance intensity is not finite");
  }
  for (double v : p.log_rate) {
    const double r = std::exp(v);
    if (!std::isfinite(v) || !std::isfinite(r) || !(r > 0.0))
      out.push_back("detection rate is not finite and positive");
  }
  return out;
}

std::vector<std::string> LinkModel::coefficient_names() const {
  std::vector<std::string> names;
  const auto add = [&](const std::vector<std::string>& given, std::size_t n,
                       const char* prefix) {
    for (std::size_t k = 0; k < n; ++k) {
      if (k < given.size())
        names.push_back(given[k]);
      else if (n == 1)
        names.emplace_back(prefix);
      else
        names.push_back(std::string(prefix) + "[" + std::to_string(k) + "]");
    }
  };
  add(abundance_names, abundance_coefs(), "log_lambda");
  add(detection_names, detection_coefs(), "log_rate");
  return names;
}

Parameterization LinkModel::parameters(std::span<const double> coefs) const {
  if (coefs.size() != size())
    throw std::invalid_argument("coefficient vector has wrong length");
  Parameterization p;
  const std::size_t na = abundance_coefs();
  if (abundance) {
    Eigen::Map<const Eigen::VectorXd> beta(coefs.data(), static_cast<Eigen::Index>(na));
    Eigen::VectorXd eta = (*abundance) * beta;
    p.log_lambda.assign(eta.data(), eta.data() + eta.size());
  } else {
    p.log_lambda = {coefs[0]};
  }
  if (detection) {
    Eigen::Map<const Eigen::VectorXd> alpha(coefs.data() + na,
                                            static_cast<Eigen::Index>(detection_coefs()));
    Eigen::VectorXd eta = (*detection) * alpha;
    p.log_rate.assign(eta.data(), eta.data() + eta.size());
  } else {
    p.log_rate = {coefs[na]};
  }
  return p;
}

SiteWorkspace build_workspace(const Dataset& d, const Parameterization& p,
                              std::size_t site) {
  if (site >= d.design.sites() || site >= d.records.size())
    throw std::out_of_range("site index out of range");
  const std::size_t J = d.design.occasions();
  const auto& rec = d.records[site];

  SiteWorkspace ws;
  ws.site = site;
  ws.occasions = J;
  ws.y = rec.y;
  ws.rate.resize(J);
  ws.search_time.resize(J);
  ws.effort.resize(J);
  ws.p.resize(J);
  ws.first_time.assign(J, std::numeric_limits<double>::quiet_NaN());
  ws.time_sum.assign(J, 0.0);
  ws.has_first_times = d.protocol.records_times();

  for (std::size_t j = 0; j < J; ++j) {
    const double rate = std::exp(p.log_rate_at(site, j, J));
    const double T = d.design.search_time(site, j);
    ws.rate[j] = rate;
    ws.search_time[j] = T;
    ws.effort[j] = rate * T;
    ws.p[j] = -std::expm1(-ws.effort[j]);

    const Count y = rec.y[j];
    ws.y_max = std::max(ws.y_max, y);
    ws.y_plus += y;
    const auto& ts = rec.times[j];
    for (double t : ts) ws.time_sum[j] += t;

    if (y > 0) {
      ws.w_detect.push_back(ws.effort[j]);
      if (!ts.empty()) {
        ws.first_time[j] = ts.front();
        ws.w_time += rate * ts.front();
      } else {
        ws.has_first_times = false;
      }
    } else {
      ws.w_zero += ws.effort[j];
      ws.w_time += ws.effort[j];
    }
  }
  ws.kappa = ws.y_max;
  return ws;
}

}  // namespace nmix
