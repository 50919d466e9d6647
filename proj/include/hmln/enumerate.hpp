#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hmln/core.hpp"
#include "hmln/errors.hpp"

namespace hmln {

inline constexpr std::size_t kMaxEnumerationAtoms = 20;

struct ExactResult {
  double log_z = 0.0;
  std::vector<double> marginals;  // P(atom = 1), indexed like model atoms
};

inline double log_sum_exp(const std::vector<double>& xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

namespace detail {

inline void check_enumerable(const HmlnModel& model) {
  const std::size_t n = model.free_atoms().size();
  if (n > kMaxEnumerationAtoms) {
    throw GuardError("exact enumeration refused: " + std::to_string(n) +
                     " free atoms exceeds the limit of " +
                     std::to_string(kMaxEnumerationAtoms));
  }
}

inline void load_mask(const HmlnModel& model, std::uint64_t mask, World& w) {
  const auto& free = model.free_atoms();
  for (std::size_t k = 0; k < free.size(); ++k) {
    w.set(free[k], ((mask >> k) & 1U) != 0);
  }
}

}  // namespace detail

// Visits every world consistent with the evidence together with its
// normalized probability: fn(const World&, double probability). Returns log Z.
template <typename Fn>
double for_each_world(const HmlnModel& model, Fn&& fn) {
  detail::check_enumerable(model);
  const std::uint64_t count = std::uint64_t{1} << model.free_atoms().size();
  World w = model.make_world(false);
  std::vector<double> log_weights(count);
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    detail::load_mask(model, mask, w);
    log_weights[mask] = unnormalized_log_prob(model, w);
  }
  const double log_z = log_sum_exp(log_weights);
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    detail::load_mask(model, mask, w);
    fn(static_cast<const World&>(w), std::exp(log_weights[mask] - log_z));
  }
  return log_z;
}

inline double log_partition(const HmlnModel& model) {
  detail::check_enumerable(model);
  const std::uint64_t count = std::uint64_t{1} << model.free_atoms().size();
  World w = model.make_world(false);
  std::vector<double> log_weights(count);
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    detail::load_mask(model, mask, w);
    log_weights[mask] = unnormalized_log_prob(model, w);
  }
  return log_sum_exp(log_weights);
}

// Exact log partition function and per-atom marginals by brute force over all
// 2^n assignments of the free atoms.
inline ExactResult enumerate_exact(const HmlnModel& model) {
  ExactResult r;
  r.marginals.assign(model.num_atoms(), 0.0);
  r.log_z = for_each_world(model, [&](const World& w, double p) {
    for (std::size_t i : model.free_atoms()) {
      if (w[i]) r.marginals[i] += p;
    }
  });
  for (std::size_t i = 0; i < model.num_atoms(); ++i) {
    if (auto e = model.evidence(i)) r.marginals[i] = *e ? 1.0 : 0.0;
  }
  return r;
}

// E[f(world)] under the exact distribution.
template <typename Fn>
double exact_expectation(const HmlnModel& model, Fn&& f) {
  double total = 0.0;
  for_each_world(model, [&](const World& w, double p) { total += p * f(w); });
  return total;
}

}  // namespace hmln
