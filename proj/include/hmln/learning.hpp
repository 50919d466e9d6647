#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hmln/core.hpp"
#include "hmln/enumerate.hpp"
#include "hmln/errors.hpp"
#include "hmln/random.hpp"
#include "hmln/sampler.hpp"

namespace hmln {

inline constexpr double kWeightDivergenceLimit = 1e6;

struct LearningConfig {
  double learning_rate = 0.01;
  std::size_t iterations = 100;
  std::size_t cd_samples = 5;  // Gibbs sweeps from the data per instance
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("learning_rate must be a finite non-negative number");
    }
    if (iterations < 1) throw ValidationError("iterations must be >= 1");
    if (cd_samples < 1) throw ValidationError("cd_samples must be >= 1");
  }
};

// One training example: the caption's atoms observed 1, explicitly listed
// negatives observed 0, every other model atom observed 0 (closed world over
// the grounded slice). Real terms override the model's g for the listed atoms.
struct TrainingInstance {
  std::string instance_id;
  std::map<std::size_t, bool> observed;
  std::map<std::size_t, double> real_terms;
};

namespace detail {

struct PreparedInstance {
  HmlnModel conditioned;  // model with the instance's real terms
  World observed;         // full observed assignment
};

inline PreparedInstance prepare(const HmlnModel& model,
                                const TrainingInstance& inst) {
  std::vector<double> g = model.real_terms();
  for (const auto& [atom, value] : inst.real_terms) {
    if (atom >= model.num_atoms()) {
      throw ValidationError("instance '" + inst.instance_id +
                            "' references an atom outside the model");
    }
    g[atom] = value;
  }
  PreparedInstance p{model.with_real_terms(g), model.make_world(false)};
  for (const auto& [atom, value] : inst.observed) {
    if (atom >= model.num_atoms()) {
      throw ValidationError("instance '" + inst.instance_id +
                            "' references an atom outside the model");
    }
    if (!model.is_evidence(atom)) p.observed.set(atom, value);
  }
  return p;
}

inline std::vector<PreparedInstance> prepare_all(
    const HmlnModel& model, std::span<const TrainingInstance> instances) {
  std::vector<PreparedInstance> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(prepare(model, inst));
  return out;
}

inline void add_feature_values(const HmlnModel& model, const World& w,
                               std::vector<double>& acc, double scale) {
  const auto& fs = model.features();
  for (std::size_t k = 0; k < fs.size(); ++k) {
    acc[k] += scale * feature_value(fs[k], w);
  }
}

inline void check_weights(std::span<const double> weights) {
  for (double w : weights) {
    if (!std::isfinite(w) || std::abs(w) > kWeightDivergenceLimit) {
      throw GuardError("weight learning diverged (|theta| > 1e6 or non-finite)");
    }
  }
}

inline std::vector<double> empirical(const std::vector<PreparedInstance>& prepared,
                                     std::size_t num_features) {
  std::vector<double> e(num_features, 0.0);
  const double scale = 1.0 / static_cast<double>(prepared.size());
  for (const auto& p : prepared) {
    add_feature_values(p.conditioned, p.observed, e, scale);
  }
  return e;
}

inline std::vector<double> contrastive_model_expectation(
    const std::vector<PreparedInstance>& prepared, const LearningConfig& config,
    std::size_t step, std::size_t num_features) {
  std::vector<double> e(num_features, 0.0);
  const double scale = 1.0 / (static_cast<double>(prepared.size()) *
                              static_cast<double>(config.cd_samples));
  const std::uint64_t step_seed = derive_seed(config.seed, step);
  for (std::size_t m = 0; m < prepared.size(); ++m) {
    const auto& p = prepared[m];
    GibbsChain chain(p.conditioned, p.observed, derive_seed(step_seed, m));
    for (std::size_t s = 0; s < config.cd_samples; ++s) {
      chain.sweep();
      add_feature_values(p.conditioned, chain.current(), e, scale);
    }
  }
  return e;
}

}  // namespace detail

// Average over instances of s_i at the observed assignment, with each
// instance's own real terms.
inline std::vector<double> empirical_expectations(
    const HmlnModel& model, std::span<const TrainingInstance> instances) {
  if (instances.empty()) {
    throw ValidationError("empirical expectation needs at least one instance");
  }
  return detail::empirical(detail::prepare_all(model, instances),
                           model.features().size());
}

inline double empirical_expectation(const HmlnModel& model,
                                    std::span<const TrainingInstance> instances,
                                    std::size_t feature) {
  if (feature >= model.features().size()) {
    throw ValidationError("feature index out of range");
  }
  return empirical_expectations(model, instances)[feature];
}

// One contrastive-divergence update. The model expectation is a Monte-Carlo
// estimate from config.cd_samples Gibbs sweeps started at each instance's data
// and run under the current weights. All weights move together from the same
// samples. `step` selects the RNG stream so successive steps differ.
inline std::vector<double> cd_step(const HmlnModel& model,
                                   std::span<const TrainingInstance> instances,
                                   const LearningConfig& config,
                                   std::size_t step = 0) {
  config.validate();
  if (instances.empty()) {
    throw ValidationError("cd_step needs at least one training instance");
  }
  detail::check_weights(model.weights());
  const auto prepared = detail::prepare_all(model, instances);
  const std::size_t k = model.features().size();
  const auto data = detail::empirical(prepared, k);
  const auto expected =
      detail::contrastive_model_expectation(prepared, config, step, k);
  std::vector<double> w = model.weights();
  for (std::size_t i = 0; i < k; ++i) {
    w[i] += config.learning_rate * (data[i] - expected[i]);
  }
  detail::check_weights(w);
  return w;
}

// Mean conditional log-likelihood (1/M) sum_m log P(y[m] | x[m]) by exact
// enumeration. Refuses models over the enumeration guard.
inline double exact_cll(const HmlnModel& model,
                        std::span<const TrainingInstance> instances) {
  if (instances.empty()) {
    throw ValidationError("exact_cll needs at least one instance");
  }
  double total = 0.0;
  for (const auto& inst : instances) {
    const auto p = detail::prepare(model, inst);
    const double log_z = log_partition(p.conditioned);
    total += unnormalized_log_prob(p.conditioned, p.observed) - log_z;
  }
  return total / static_cast<double>(instances.size());
}

// Gradient of exact_cll: mean over instances of observed minus exact expected
// feature values.
inline std::vector<double> exact_gradient(
    const HmlnModel& model, std::span<const TrainingInstance> instances) {
  if (instances.empty()) {
    throw ValidationError("exact_gradient needs at least one instance");
  }
  const std::size_t k = model.features().size();
  const auto prepared = detail::prepare_all(model, instances);
  std::vector<double> grad = detail::empirical(prepared, k);
  const double scale = 1.0 / static_cast<double>(prepared.size());
  for (const auto& p : prepared) {
    for_each_world(p.conditioned, [&](const World& w, double prob) {
      detail::add_feature_values(p.conditioned, w, grad, -scale * prob);
    });
  }
  return grad;
}

struct FitOptions {
  // Record exact CLL every n iterations (0 disables). Needs an enumerable model.
  std::size_t trace_every = 0;
  std::function<void(std::size_t iteration, double cll)> on_trace;
};

struct FitResult {
  HmlnModel model;
  std::vector<double> cll_trace;  // (iteration order) when tracing is enabled
};

// Iterates cd_step from the model's current weights.
inline FitResult fit(const HmlnModel& model,
                     std::span<const TrainingInstance> instances,
                     const LearningConfig& config, const FitOptions& options = {}) {
  config.validate();
  if (instances.empty()) {
    throw ValidationError("fit needs at least one training instance");
  }
  FitResult result{model, {}};
  auto prepared = detail::prepare_all(model, instances);
  const std::size_t k = model.features().size();
  const auto data = detail::empirical(prepared, k);
  std::vector<double> w = model.weights();
  detail::check_weights(w);
  for (std::size_t t = 0; t < config.iterations; ++t) {
    for (auto& p : prepared) p.conditioned.set_weights(w);
    const auto expected =
        detail::contrastive_model_expectation(prepared, config, t, k);
    for (std::size_t i = 0; i < k; ++i) {
      w[i] += config.learning_rate * (data[i] - expected[i]);
    }
    detail::check_weights(w);
    if (options.trace_every != 0 && (t + 1) % options.trace_every == 0) {
      result.model.set_weights(w);
      const double cll = exact_cll(result.model, instances);
      result.cll_trace.push_back(cll);
      if (options.on_trace) options.on_trace(t + 1, cll);
    }
  }
  result.model.set_weights(w);
  return result;
}

}  // namespace hmln
