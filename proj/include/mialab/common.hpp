// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mialab {

// Clamp applied wherever a log of a probability is taken. Keeps cross-entropy,
// KL terms, logit transforms and logit reconstruction finite.
inline constexpr double kProbEpsilon = 1e-12;

// Default floor for fitted confidence variances (degenerate shadow ensembles).
inline constexpr double kDefaultVarFloor = 1e-6;

// Invalid sizes, parameters out of range, malformed config files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension mismatches between tensors, datasets and model specs.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during an optimization loop; carries the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& msg, std::size_t step)
      : std::runtime_error(msg), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// A pipeline stage was asked for an artifact an earlier stage never produced.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Seeds an engine from one or more 64-bit seeds via std::seed_seq so that
// derived streams (e.g. per-shadow samplers) are decorrelated and the mapping
// from seeds to draws is fixed for a given binary.
std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> seeds);

double clamp_prob(double p);       // [eps, 1], for logs of a chosen class prob
double clamp_prob_open(double p);  // [eps, 1-eps], for logit-style transforms

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(std::string_view text);

std::uint64_t fnv1a64(std::string_view text);

// Shortest decimal form that round-trips a double (used by every text artifact
// so repeated runs are byte-identical).
std::string format_double(double v);

}  // namespace mialab
