#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmln/backtrace.hpp"
#include "hmln/core.hpp"
#include "hmln/io.hpp"
#include "hmln/learning.hpp"
#include "hmln/map_inference.hpp"
#include "hmln/random.hpp"

namespace hmln {

// Streams derived from the root seed.
inline constexpr std::uint64_t kLearningStream = 1;
inline constexpr std::uint64_t kBacktraceStream = 2;

inline std::uint64_t learning_seed(std::uint64_t root) {
  return derive_seed(root, kLearningStream);
}

// Sampler seed for the k-th test record.
inline std::uint64_t backtrace_seed(std::uint64_t root, std::size_t record) {
  return derive_seed(derive_seed(root, kBacktraceStream), record);
}

inline std::vector<GroundingInstance> grounding_instances(
    std::span<const io::DatasetRecord> records) {
  std::vector<GroundingInstance> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.instance_id, r.predicates});
  return out;
}

// Caption atoms observed 1 with their own g; everything else observed 0.
inline std::vector<TrainingInstance> training_instances(
    const HmlnModel& model, std::span<const io::DatasetRecord> records) {
  std::vector<TrainingInstance> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainingInstance inst{r.instance_id, {}, {}};
    for (const auto& p : r.predicates) {
      const std::size_t a = model.atom_index(p.id);
      inst.observed[a] = true;
      inst.real_terms[a] = p.g;
    }
    out.push_back(std::move(inst));
  }
  return out;
}

inline std::vector<TrainingExample> training_examples(
    std::span<const io::DatasetRecord> records) {
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.instance_id, r.predicates});
  return out;
}

// Adds the listed predicates that the model lacks as unconnected atoms.
inline HmlnModel with_atoms(const HmlnModel& model,
                            std::span<const GroundPredicate> predicates) {
  std::vector<GroundPredicate> atoms = model.atoms();
  bool added = false;
  for (const auto& p : predicates) {
    if (model.find_atom(p.id)) continue;
    bool dup = false;
    for (std::size_t i = model.num_atoms(); i < atoms.size(); ++i) {
      dup = dup || atoms[i].id == p.id;
    }
    if (!dup) {
      atoms.push_back(p);
      added = true;
    }
  }
  if (!added) return model;
  HmlnModel out(std::move(atoms), model.features(), model.epsilon());
  for (std::size_t i = 0; i < model.num_atoms(); ++i) {
    if (auto e = model.evidence(i)) out.set_evidence(i, *e);
  }
  return out;
}

// The model extended with the caption's atoms and carrying the caption's g.
inline HmlnModel condition_on(const HmlnModel& model,
                              std::span<const GroundPredicate> caption) {
  const HmlnModel extended = with_atoms(model, caption);
  return extended.with_real_terms(override_real_terms(extended, caption));
}

struct BacktraceRecord {
  std::string instance_id;
  std::vector<std::string> relevant;  // ids of contextually relevant examples
  std::optional<ContrastiveResult> result;  // empty when nothing is relevant
  std::optional<double> avg_caption_similarity;
};

inline BacktraceRecord backtrace_record(const HmlnModel& model,
                                        const io::DatasetRecord& test,
                                        std::span<const TrainingExample> train,
                                        const SimilarityTable& sim,
                                        BacktraceConfig config) {
  BacktraceRecord out;
  out.instance_id = test.instance_id;
  out.avg_caption_similarity = test.avg_caption_similarity;
  const auto relevant =
      contextually_relevant(train, test.predicates, sim, config.relevance_threshold);
  for (const auto& ex : relevant) out.relevant.push_back(ex.id);
  if (relevant.empty()) return out;
  out.result = estimate_densities(condition_on(model, test.predicates), relevant,
                                  sim, config);
  return out;
}

// Back-traces every test record with the seed schedule used by the CLI.
inline std::vector<BacktraceRecord> backtrace_all(
    const HmlnModel& model, std::span<const io::DatasetRecord> test,
    std::span<const io::DatasetRecord> train, const SimilarityTable& sim,
    BacktraceConfig config, std::uint64_t root_seed) {
  const auto examples = training_examples(train);
  std::vector<BacktraceRecord> out;
  out.reserve(test.size());
  for (std::size_t k = 0; k < test.size(); ++k) {
    config.sampler.seed = backtrace_seed(root_seed, k);
    out.push_back(backtrace_record(model, test[k], examples, sim, config));
  }
  return out;
}

// MAP score of one test record. Reference atoms outside the model are added;
// all of the record's predicates supply real terms, the generated ones last.
inline HmlnModel map_conditioned(const HmlnModel& model,
                                 const io::DatasetRecord& test) {
  std::vector<GroundPredicate> both = test.reference_predicates;
  both.insert(both.end(), test.predicates.begin(), test.predicates.end());
  const HmlnModel extended = with_atoms(model, both);
  return extended.with_real_terms(override_real_terms(extended, both));
}

inline MapScore map_record(const HmlnModel& model, const io::DatasetRecord& test,
                           const SimilarityTable& sim, const MapOptions& options) {
  const HmlnModel conditioned = map_conditioned(model, test);
  return map_inference(conditioned, test.predicates, test.reference_predicates,
                       sim, options);
}

}  // namespace hmln
