#include "nmix/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nmix/likelihood.hpp"

namespace nmix {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform on (0, 1].
double open_uniform(std::mt19937_64& rng) {
  return 1.0 - std::generate_canonical<double, 64>(rng);
}

Count draw_poisson(double mean, std::mt19937_64& rng) {
  if (!(mean > 0.0)) return 0;
  return std::poisson_distribution<Count>(mean)(rng);
}

// Arrival time of an exponential(rate) individual conditioned on t <= T.
double truncated_exponential(double rate, double T, double p, std::mt19937_64& rng) {
  const double t = -std::log1p(-open_uniform(rng) * p) / rate;
  return std::min(t, T);
}

void check_config(const SimConfig& cfg) {
  auto problems = check_parameters(cfg.params, cfg.design);
  if (!problems.empty()) throw std::invalid_argument("simulation parameters: " + problems.front());
}

std::vector<double> row(const SurveyDesign& d, std::size_t i) {
  std::vector<double> out(d.occasions());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = d.search_time(i, j);
  return out;
}

std::vector<double> rate_row(const Parameterization& p, std::size_t i, std::size_t J) {
  std::vector<double> out(J);
  for (std::size_t j = 0; j < J; ++j) out[j] = p.log_rate_at(i, j, J);
  return out;
}

Protocol with_visits(Protocol proto, std::size_t J) {
  proto.visits = J == 1 ? Visits::Single : Visits::Multiple;
  return proto;
}

}  // namespace

std::uint64_t site_stream_seed(std::uint64_t seed, std::uint64_t site) {
  return splitmix64(splitmix64(seed) ^ splitmix64(site + 0x632be59bd9b4e019ULL));
}

SiteRecord simulate_site(const Protocol& protocol, std::span<const double> search_time,
                         double log_lambda, std::span<const double> log_rate,
                         std::mt19937_64& rng) {
  const std::size_t J = search_time.size();
  SiteRecord rec;
  rec.y.assign(J, 0);
  rec.times.assign(J, {});

  // Abundance stays fixed across occasions.
  const Count n = draw_poisson(std::exp(log_lambda), rng);
  const double nd = static_cast<double>(n);
  const bool poisson = protocol.process == Process::PoissonProcess;

  for (std::size_t j = 0; j < J; ++j) {
    const double rate = std::exp(log_rate[j]);
    const double T = search_time[j];
    auto& ts = rec.times[j];

    if (poisson) {
      // Detections form a rate n*gamma process; given their number, times are
      // uniform order statistics on (0, T].
      const Count k = draw_poisson(nd * rate * T, rng);
      std::vector<double> events;
      if (protocol.records_times()) {
        events.resize(static_cast<std::size_t>(k));
        for (auto& t : events) t = T * open_uniform(rng);
        std::sort(events.begin(), events.end());
      }
      switch (protocol.family) {
        case Family::Binary: rec.y[j] = k > 0; break;
        case Family::BinaryT1:
          rec.y[j] = k > 0;
          if (k > 0) ts.push_back(events.front());
          break;
        case Family::Count: rec.y[j] = k; break;
        case Family::CountT:
          rec.y[j] = k;
          ts = std::move(events);
          break;
        case Family::CountT1:
          rec.y[j] = k;
          if (k > 0) ts.push_back(events.front());
          break;
      }
      continue;
    }

    if (n == 0) continue;
    const double p = -std::expm1(-rate * T);
    switch (protocol.family) {
      case Family::Binary:
        rec.y[j] = open_uniform(rng) <= -std::expm1(-nd * rate * T);
        break;
      case Family::BinaryT1: {
        // First of n exponential arrivals is exponential with rate n*h.
        const double t = std::exponential_distribution<double>(nd * rate)(rng);
        if (t <= T && t > 0.0) {
          rec.y[j] = 1;
          ts.push_back(t);
        }
        break;
      }
      case Family::Count:
      case Family::CountT:
      case Family::CountT1: {
        const Count y = std::binomial_distribution<Count>(n, p)(rng);
        rec.y[j] = y;
        if (protocol.family == Family::Count || y == 0) break;
        std::vector<double> arrivals(static_cast<std::size_t>(y));
        for (auto& t : arrivals) t = truncated_exponential(rate, T, p, rng);
        std::sort(arrivals.begin(), arrivals.end());
        if (protocol.family == Family::CountT)
          ts = std::move(arrivals);
        else
          ts.push_back(arrivals.front());
        break;
      }
    }
  }
  return rec;
}

Dataset simulate_dataset_serial(const SimConfig& cfg) {
  check_config(cfg);
  const std::size_t R = cfg.design.sites();
  const std::size_t J = cfg.design.occasions();
  Dataset d{with_visits(cfg.protocol, J), cfg.design, std::vector<SiteRecord>(R)};
  for (std::size_t i = 0; i < R; ++i) {
    std::mt19937_64 rng(site_stream_seed(cfg.seed, i));
    const auto T = row(cfg.design, i);
    const auto lr = rate_row(cfg.params, i, J);
    d.records[i] = simulate_site(d.protocol, T, cfg.params.log_lambda_at(i), lr, rng);
    d.records[i].site_id = i;
  }
  return d;
}

Dataset simulate_dataset(const SimConfig& cfg) {
  check_config(cfg);
  const std::size_t J = cfg.design.occasions();
  const auto R = static_cast<std::ptrdiff_t>(cfg.design.sites());
  Dataset d{with_visits(cfg.protocol, J), cfg.design,
            std::vector<SiteRecord>(static_cast<std::size_t>(R))};
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < R; ++i) {
    const auto site = static_cast<std::size_t>(i);
    std::mt19937_64 rng(site_stream_seed(cfg.seed, site));
    const auto T = row(cfg.design, site);
    const auto lr = rate_row(cfg.params, site, J);
    d.records[site] = simulate_site(d.protocol, T, cfg.params.log_lambda_at(site), lr, rng);
    d.records[site].site_id = site;
  }
  return d;
}

PmfCheck empirical_pmf_check(const SimConfig& cfg, std::span<const Count> pattern,
                             std::size_t n_draws) {
  check_config(cfg);
  const std::size_t J = cfg.design.occasions();
  if (pattern.size() != J) throw std::invalid_argument("pattern length must equal J");
  if (n_draws == 0) throw std::invalid_argument("n_draws must be positive");

  const auto T = row(cfg.design, 0);
  const auto lr = rate_row(cfg.params, 0, J);
  const double log_lambda = cfg.params.log_lambda_at(0);

  // Closed-form probability of the pattern on a one-site dataset.
  Protocol response = with_visits(cfg.protocol, J);
  response.family = response.binary_response() ? Family::Binary : Family::Count;
  Dataset one{response, SurveyDesign(1, J, T), {SiteRecord{0, {pattern.begin(), pattern.end()},
                                                           std::vector<std::vector<double>>(J)}}};
  Parameterization p1{{log_lambda}, lr};
  double exact = std::exp(site_loglik_response(one, p1, 0));
  if (!(exact > 0.0)) throw std::invalid_argument("pattern has zero probability");
  exact = std::min(exact, 1.0);

  const auto draws = static_cast<std::ptrdiff_t>(n_draws);
  const Protocol proto = with_visits(cfg.protocol, J);
  std::size_t matches = 0;
#pragma omp parallel for schedule(static) reduction(+ : matches)
  for (std::ptrdiff_t i = 0; i < draws; ++i) {
    std::mt19937_64 rng(site_stream_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    const auto rec = simulate_site(proto, T, log_lambda, lr, rng);
    if (std::equal(rec.y.begin(), rec.y.end(), pattern.begin())) ++matches;
  }

  PmfCheck out;
  out.draws = n_draws;
  out.matches = matches;
  out.exact = exact;
  out.empirical = static_cast<double>(matches) / static_cast<double>(n_draws);
  const double se = std::sqrt(exact * (1.0 - exact) / static_cast<double>(n_draws));
  if (se > 0.0)
    out.z_score = (out.empirical - exact) / se;
  else
    out.z_score = out.empirical == exact ? 0.0 : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace nmix
