#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hmln/core.hpp"
#include "hmln/errors.hpp"
#include "hmln/sampler.hpp"
#include "hmln/similarity.hpp"

namespace hmln {

// kCap bounds each weight from above at the clip threshold. kFloor applies
// max(w, threshold) instead, for comparison runs.
enum class ClipMode { kCap, kFloor };

struct BacktraceConfig {
  double relevance_threshold = 0.75;
  double clip_threshold = 1.0;  // +infinity disables clipping in kCap mode
  ClipMode clip_mode = ClipMode::kCap;
  SamplerConfig sampler;

  void validate() const {
    if (!(relevance_threshold > 0.0 && relevance_threshold <= 1.0)) {
      throw ValidationError("relevance_threshold must lie in (0, 1]");
    }
    if (!(clip_threshold > 0.0)) {
      throw ValidationError("clip_threshold must be positive");
    }
    sampler.validate();
  }
};

struct TrainingExample {
  std::string id;
  std::vector<GroundPredicate> predicates;  // g holds the training image's terms
};

struct WeightedSample {
  World world;
  double raw_weight = 0.0;
  double clipped_weight = 0.0;
};

struct ExampleDensity {
  std::string example_id;
  double density = 0.0;
};

struct ContrastiveResult {
  std::vector<ExampleDensity> per_example;  // in the order given
  std::string maximal;
  std::string minimal;
  double hellinger = 0.0;
  double log_joint = 0.0;  // sum of log densities (mean-field joint)
  std::size_t samples = 0;
};

inline double clip_weight(double w, double threshold, ClipMode mode) {
  return mode == ClipMode::kCap ? std::min(w, threshold)
                                : std::max(w, threshold);
}

// Hellinger distance between Bernoulli(p) and Bernoulli(q).
inline double hellinger_bernoulli(double p, double q) {
  if (!(p >= 0.0 && p <= 1.0 && q >= 0.0 && q <= 1.0)) {
    throw ValidationError("hellinger_bernoulli needs probabilities in [0, 1]");
  }
  if (p == q) return 0.0;
  const double bc = std::sqrt(p * q) + std::sqrt((1.0 - p) * (1.0 - q));
  return std::clamp(std::sqrt(std::max(0.0, 1.0 - bc)), 0.0, 1.0);
}

// -log(sigmoid(avg_sim)), the x-coordinate used when plotting the contrastive
// distance against image/caption similarity.
inline double similarity_report_x(double avg_sim) {
  return neg_log_sigmoid(avg_sim);
}

////////////////////////////////////////////////////////////////////////////////
// Contextual relevance and indicators
////////////////////////////////////////////////////////////////////////////////

// Relevant iff every predicate of the example has a generated predicate with
// equivalence score strictly above the threshold. Examples without predicates
// are never relevant.
inline bool is_contextually_relevant(const TrainingExample& example,
                                     std::span<const GroundPredicate> generated,
                                     const SimilarityTable& sim,
                                     double threshold) {
  if (example.predicates.empty()) return false;
  for (const auto& x : example.predicates) {
    bool matched = false;
    for (const auto& y : generated) {
      if (semantic_equivalence(x, y, sim) > threshold) {
        matched = true;
        break;
      }
    }
    if (!matched) return false;
  }
  return true;
}

inline std::vector<TrainingExample> contextually_relevant(
    std::span<const TrainingExample> train,
    std::span<const GroundPredicate> generated, const SimilarityTable& sim,
    double threshold) {
  std::vector<TrainingExample> out;
  for (const auto& ex : train) {
    if (is_contextually_relevant(ex, generated, sim, threshold)) out.push_back(ex);
  }
  return out;
}

// Precomputed I_X[y]: for each predicate of the example, the model atoms that
// are semantically equivalent to it above the threshold.
class IndicatorMatcher {
 public:
  IndicatorMatcher(const HmlnModel& model, const TrainingExample& example,
                   const SimilarityTable& sim, double threshold) {
    equivalents_.reserve(example.predicates.size());
    for (const auto& x : example.predicates) {
      std::vector<std::size_t> eq;
      for (std::size_t a = 0; a < model.num_atoms(); ++a) {
        if (semantic_equivalence(x, model.atoms()[a], sim) > threshold) {
          eq.push_back(a);
        }
      }
      equivalents_.push_back(std::move(eq));
    }
  }

  bool operator()(const World& world) const {
    for (const auto& eq : equivalents_) {
      bool any = false;
      for (std::size_t a : eq) {
        if (world[a]) {
          any = true;
          break;
        }
      }
      if (!any) return false;
    }
    return true;
  }

  const std::vector<std::vector<std::size_t>>& equivalents() const {
    return equivalents_;
  }

 private:
  std::vector<std::vector<std::size_t>> equivalents_;
};

inline bool indicator(const HmlnModel& model, const TrainingExample& example,
                      const World& sample, const SimilarityTable& sim,
                      double threshold) {
  return IndicatorMatcher(model, example, sim, threshold)(sample);
}

////////////////////////////////////////////////////////////////////////////////
// Importance weights
////////////////////////////////////////////////////////////////////////////////

// exp(U(sample; train terms) - U(sample; test terms)): the ratio of the
// un-normalized conditional probabilities under the two sets of real terms.
inline double importance_weight(const HmlnModel& model, const World& sample,
                                std::span<const double> test_terms,
                                std::span<const double> train_terms) {
  if (test_terms.size() != model.num_atoms() ||
      train_terms.size() != model.num_atoms()) {
    throw ValidationError("importance weight needs real terms for every atom");
  }
  const double u_train =
      unnormalized_log_prob(model.with_real_terms(train_terms), sample);
  const double u_test =
      unnormalized_log_prob(model.with_real_terms(test_terms), sample);
  return std::exp(u_train - u_test);
}

// Incremental form of importance_weight for a fixed pair of term vectors:
// only features whose potentials change are revisited per sample.
class ImportanceWeigher {
 public:
  ImportanceWeigher(const HmlnModel& test_model,
                    std::span<const double> train_terms) {
    if (train_terms.size() != test_model.num_atoms()) {
      throw ValidationError("importance weight needs real terms for every atom");
    }
    const double eps = test_model.epsilon();
    const auto& atoms = test_model.atoms();
    for (const FeaturePair& f : test_model.features()) {
      const double g1 = train_terms[f.atoms[0]];
      const double g2 = train_terms[f.atoms[1]];
      const double t1 = atoms[f.atoms[0]].g;
      const double t2 = atoms[f.atoms[1]].g;
      const double dc =
          conjunctive_potential(g1, g2, eps) - conjunctive_potential(t1, t2, eps);
      const double dr = xor_penalty(g1, g2) - xor_penalty(t1, t2);
      if (dc != 0.0 || dr != 0.0) {
        deltas_.push_back({f.atoms[0], f.atoms[1], f.weight * dc, f.weight * dr});
      }
    }
  }

  double log_weight(const World& w) const {
    double s = 0.0;
    for (const auto& d : deltas_) {
      const bool x = w[d.a];
      const bool y = w[d.b];
      if (x && y) {
        s += d.conj;
      } else if (x != y) {
        s += d.excl;
      }
    }
    return s;
  }

  double weight(const World& w) const { return std::exp(log_weight(w)); }

 private:
  struct Delta {
    std::size_t a;
    std::size_t b;
    double conj;
    double excl;
  };
  std::vector<Delta> deltas_;
};

////////////////////////////////////////////////////////////////////////////////
// Density estimation
////////////////////////////////////////////////////////////////////////////////

using SampleObserver =
    std::function<void(std::size_t example, const WeightedSample& sample)>;

// Estimates P(example | generated caption) for each relevant example from one
// shared stream of thinned Gibbs samples of the test-conditioned model:
//   sum_t clip(w_t) I[y_t] / sum_t clip(w_t)
// where w_t reweights the sample towards the example's own real terms (its
// predicates' g override the test terms). Selects the most and least likely
// examples, ties going to the smaller id.
inline ContrastiveResult estimate_densities(
    const HmlnModel& conditioned, std::span<const TrainingExample> relevant,
    const SimilarityTable& sim, const BacktraceConfig& config,
    const SampleObserver& observer = {}) {
  config.validate();
  if (relevant.empty()) {
    throw ValidationError("no contextually relevant training examples");
  }
  // Potentials recomputed from g so sampling and weighting agree.
  const HmlnModel test_model = conditioned.with_real_terms(conditioned.real_terms());
  if (test_model.free_atoms().empty()) {
    throw ValidationError("back-tracing needs at least one free atom to sample");
  }
  std::vector<ImportanceWeigher> weighers;
  std::vector<IndicatorMatcher> matchers;
  weighers.reserve(relevant.size());
  matchers.reserve(relevant.size());
  for (const auto& ex : relevant) {
    weighers.emplace_back(test_model,
                          override_real_terms(test_model, ex.predicates));
    matchers.emplace_back(test_model, ex, sim, config.relevance_threshold);
  }

  std::vector<double> num(relevant.size(), 0.0);
  std::vector<double> den(relevant.size(), 0.0);
  const auto run = run_chain(test_model, config.sampler, [&](const World& y) {
    for (std::size_t i = 0; i < relevant.size(); ++i) {
      const double raw = weighers[i].weight(y);
      const double clipped =
          clip_weight(raw, config.clip_threshold, config.clip_mode);
      if (matchers[i](y)) num[i] += clipped;
      den[i] += clipped;
      if (observer) observer(i, WeightedSample{y, raw, clipped});
    }
  });

  ContrastiveResult r;
  r.samples = run.samples;
  r.per_example.reserve(relevant.size());
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (!(den[i] > 0.0) || !std::isfinite(den[i]) || !std::isfinite(num[i])) {
      throw GuardError("importance weights for example '" + relevant[i].id +
                       "' are zero or non-finite");
    }
    r.per_example.push_back({relevant[i].id, num[i] / den[i]});
  }

  const ExampleDensity* hi = &r.per_example.front();
  const ExampleDensity* lo = hi;
  for (const auto& e : r.per_example) {
    if (e.density > hi->density ||
        (e.density == hi->density && e.example_id < hi->example_id)) {
      hi = &e;
    }
    if (e.density < lo->density ||
        (e.density == lo->density && e.example_id < lo->example_id)) {
      lo = &e;
    }
  }
  r.maximal = hi->example_id;
  r.minimal = lo->example_id;
  r.hellinger = hellinger_bernoulli(hi->density, lo->density);
  for (const auto& e : r.per_example) r.log_joint += std::log(e.density);
  return r;
}

}  // namespace hmln
