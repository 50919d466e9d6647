#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hmln/core.hpp"
#include "hmln/errors.hpp"
#include "hmln/random.hpp"

namespace hmln {

// Burn-in and thinning are counted in full sweeps; one sweep resamples every
// free atom once.
struct SamplerConfig {
  std::size_t burn_in = 500;
  std::size_t thinning_interval = 10;
  std::size_t total_samples = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (thinning_interval < 1) {
      throw ValidationError("sampler thinning_interval must be >= 1");
    }
    if (total_samples < 1) {
      throw ValidationError("sampler total_samples must be >= 1");
    }
  }
};

// Change in the exponent when `atom` flips from 0 to 1, given the rest of the
// world. Only the atom's Markov blanket is read.
inline double flip_delta(const HmlnModel& model, const World& world,
                         std::size_t atom) {
  double delta = 0.0;
  for (std::size_t k : model.features_of(atom)) {
    const FeaturePair& f = model.features()[k];
    const std::size_t partner = f.atoms[0] == atom ? f.atoms[1] : f.atoms[0];
    if (!world.is_set(partner)) {
      throw ContractViolation("Markov blanket of atom '" +
                              model.atoms()[atom].id + "' is not assigned");
    }
    // partner = 1: conj if atom = 1, xor if atom = 0.
    // partner = 0: xor if atom = 1, nothing if atom = 0.
    delta += world[partner] ? f.weight * (f.conj_value - f.xor_value)
                            : f.weight * f.xor_value;
  }
  return delta;
}

// P(atom = 1 | all other atoms).
inline double conditional(const HmlnModel& model, const World& world,
                          std::size_t atom) {
  if (atom >= model.num_atoms()) {
    throw ContractViolation("atom index out of range");
  }
  if (model.is_evidence(atom)) {
    throw ContractViolation("conditional requested for evidence atom '" +
                            model.atoms()[atom].id + "'");
  }
  return sigmoid(flip_delta(model, world, atom));
}

struct ChainState {
  World current;
  std::size_t step_count = 0;  // completed sweeps
  CounterRng rng;

  friend bool operator==(const ChainState&, const ChainState&) = default;
};

// Single-site Gibbs chain over the free atoms of a model. Each sweep visits
// the free atoms in a fresh random permutation drawn from the chain RNG.
class GibbsChain {
 public:
  // Starts from a uniformly random assignment of the free atoms.
  GibbsChain(const HmlnModel& model, std::uint64_t seed)
      : model_(&model), state_{model.make_world(), 0, CounterRng(seed)} {
    for (std::size_t i : model.free_atoms()) {
      state_.current.set(i, state_.rng.bernoulli(0.5));
    }
  }

  // Starts from a given world; evidence atoms are reset to their evidence.
  GibbsChain(const HmlnModel& model, World start, std::uint64_t seed)
      : model_(&model), state_{std::move(start), 0, CounterRng(seed)} {
    check_start();
  }

  // Resumes a checkpointed chain.
  GibbsChain(const HmlnModel& model, ChainState state)
      : model_(&model), state_(std::move(state)) {
    check_start();
  }

  void sweep() {
    order_ = model_->free_atoms();
    state_.rng.shuffle(std::span<std::size_t>(order_));
    for (std::size_t atom : order_) {
      const double p = sigmoid(flip_delta(*model_, state_.current, atom));
      state_.current.set(atom, state_.rng.uniform() < p);
    }
    ++state_.step_count;
  }

  void sweeps(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) sweep();
  }

  const World& current() const { return state_.current; }
  std::size_t step_count() const { return state_.step_count; }
  const ChainState& state() const { return state_; }

 private:
  void check_start() {
    if (state_.current.size() != model_->num_atoms()) {
      throw ContractViolation("chain start world does not match the model");
    }
    for (std::size_t i = 0; i < model_->num_atoms(); ++i) {
      if (auto e = model_->evidence(i)) {
        state_.current.set(i, *e);
      } else if (!state_.current.is_set(i)) {
        throw ContractViolation("chain start leaves atom '" +
                                model_->atoms()[i].id + "' unassigned");
      }
    }
  }

  const HmlnModel* model_;
  ChainState state_;
  std::vector<std::size_t> order_;
};

struct ChainRun {
  std::size_t samples = 0;
  std::optional<std::string> diagnostic;
};

// Runs burn_in sweeps, then emits total_samples worlds with thinning_interval
// sweeps before each one: visit(const World&). Deterministic given the seed.
template <typename Visitor>
ChainRun run_chain(const HmlnModel& model, const SamplerConfig& config,
                   Visitor&& visit) {
  config.validate();
  if (model.free_atoms().empty()) {
    return {0, "no free atoms to sample; every atom is evidence"};
  }
  GibbsChain chain(model, config.seed);
  chain.sweeps(config.burn_in);
  for (std::size_t t = 0; t < config.total_samples; ++t) {
    chain.sweeps(config.thinning_interval);
    visit(chain.current());
  }
  return {config.total_samples, std::nullopt};
}

inline std::vector<World> sample_worlds(const HmlnModel& model,
                                        const SamplerConfig& config) {
  std::vector<World> out;
  out.reserve(config.total_samples);
  run_chain(model, config, [&](const World& w) { out.push_back(w); });
  return out;
}

// Per-atom frequency of 1 over a set of samples.
inline std::vector<double> empirical_marginals(const HmlnModel& model,
                                               const std::vector<World>& samples) {
  std::vector<double> m(model.num_atoms(), 0.0);
  if (samples.empty()) return m;
  for (const World& w : samples) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += w[i] ? 1.0 : 0.0;
  }
  for (double& v : m) v /= static_cast<double>(samples.size());
  return m;
}

}  // namespace hmln
