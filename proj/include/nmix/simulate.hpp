#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include "nmix/model.hpp"

namespace nmix {

struct SimConfig {
  SurveyDesign design;
  Protocol protocol;
  Parameterization params;
  std::uint64_t seed = 1;
};

// Seed of the random stream owned by one site. Streams depend only on
// (seed, site), so results do not depend on how sites are scheduled.
std::uint64_t site_stream_seed(std::uint64_t seed, std::uint64_t site);

// One site's records given its own parameters and search times.
SiteRecord simulate_site(const Protocol& protocol, std::span<const double> search_time,
                         double log_lambda, std::span<const double> log_rate,
                         std::mt19937_64& rng);

// Sites generated in parallel; output is identical to the serial version.
Dataset simulate_dataset(const SimConfig& cfg);
Dataset simulate_dataset_serial(const SimConfig& cfg);

struct PmfCheck {
  double empirical = 0.0;
  double exact = 0.0;
  double z_score = 0.0;
  std::size_t matches = 0;
  std::size_t draws = 0;
};

// Simulates n_draws independent copies of site 0 of cfg and compares the
// relative frequency of the response pattern with its closed-form
// probability (times marginalized). Throws std::invalid_argument when the
// pattern has zero probability.
PmfCheck empirical_pmf_check(const SimConfig& cfg, std::span<const Count> pattern,
                             std::size_t n_draws);

}  // namespace nmix
