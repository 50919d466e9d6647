#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hmln/errors.hpp"

namespace hmln {

inline constexpr double kDefaultEpsilon = 0.3;

////////////////////////////////////////////////////////////////////////////////
// Potentials
////////////////////////////////////////////////////////////////////////////////

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// -log(sigmoid(z)) without overflow for large |z|.
inline double neg_log_sigmoid(double z) {
  return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// Conjunctive potential: the soft inequality g >= epsilon scored for each atom,
// keeping the weaker of the two.
inline double conjunctive_potential(double g1, double g2, double epsilon) {
  return std::min(neg_log_sigmoid(epsilon - g1), neg_log_sigmoid(epsilon - g2));
}

// Exclusive-or penalty: Gaussian in the gap between the two similarities.
inline double xor_penalty(double g1, double g2) {
  const double d = g1 - g2;
  return -(d * d);
}

////////////////////////////////////////////////////////////////////////////////
// Domain types
////////////////////////////////////////////////////////////////////////////////

// A (subject, relation, object) relation instance and the cosine similarity g
// between the source image and the predicate's text rendering. Unary
// attributes use relation "is" with the attribute as object.
struct GroundPredicate {
  std::string id;
  std::string subject;
  std::string relation;
  std::string object;
  double g = 0.0;

  friend bool operator==(const GroundPredicate&, const GroundPredicate&) = default;
};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

// Canonical atom id, e.g. "riding(man,horse)".
inline std::string canonical_id(std::string_view subject,
                                std::string_view relation,
                                std::string_view object) {
  std::string id = to_lower(relation);
  id += '(';
  id += to_lower(subject);
  id += ',';
  id += to_lower(object);
  id += ')';
  return id;
}

inline GroundPredicate make_predicate(std::string_view subject,
                                      std::string_view relation,
                                      std::string_view object, double g) {
  return GroundPredicate{canonical_id(subject, relation, object),
                         to_lower(subject), to_lower(relation),
                         to_lower(object), g};
}

inline void validate(const GroundPredicate& p) {
  if (p.id.empty()) throw ValidationError("ground predicate has an empty id");
  if (p.subject.empty() || p.relation.empty()) {
    throw ValidationError("ground predicate '" + p.id +
                          "' needs a non-empty subject and relation");
  }
  if (!std::isfinite(p.g) || p.g < -1.0 || p.g > 1.0) {
    throw ValidationError("ground predicate '" + p.id +
                          "' has similarity g outside [-1, 1]");
  }
}

// Two predicates may be chained when they share a subject or object token
// (case-insensitive exact match).
inline bool shares_term(const GroundPredicate& a, const GroundPredicate& b) {
  const std::array<std::string, 2> ta{to_lower(a.subject), to_lower(a.object)};
  const std::array<std::string, 2> tb{to_lower(b.subject), to_lower(b.object)};
  for (const auto& x : ta) {
    if (x.empty()) continue;
    for (const auto& y : tb) {
      if (x == y) return true;
    }
  }
  return false;
}

// One grounding of the conjunctive template together with its paired XOR
// template. Both share the single weight.
struct FeaturePair {
  std::size_t id = 0;
  std::array<std::size_t, 2> atoms{};  // indices into HmlnModel::atoms()
  double weight = 0.0;
  double conj_value = 0.0;
  double xor_value = 0.0;  // always <= 0

  friend bool operator==(const FeaturePair&, const FeaturePair&) = default;
};

// Assignment over all atoms of a model. Evidence atoms carry their observed
// value and are never changed by inference; free atoms may be kUnset until
// assigned.
class World {
 public:
  static constexpr std::uint8_t kUnset = 0xff;

  World() = default;
  explicit World(std::size_t num_atoms, std::uint8_t fill = kUnset)
      : values_(num_atoms, fill) {}

  std::size_t size() const { return values_.size(); }
  bool is_set(std::size_t atom) const { return values_[atom] != kUnset; }
  bool operator[](std::size_t atom) const { return values_[atom] == 1; }
  std::uint8_t raw(std::size_t atom) const { return values_[atom]; }
  void set(std::size_t atom, bool value) { values_[atom] = value ? 1 : 0; }
  std::span<const std::uint8_t> values() const { return values_; }

  friend bool operator==(const World&, const World&) = default;

 private:
  std::vector<std::uint8_t> values_;
};

////////////////////////////////////////////////////////////////////////////////
// Model
////////////////////////////////////////////////////////////////////////////////

class HmlnModel {
 public:
  HmlnModel() = default;

  HmlnModel(std::vector<GroundPredicate> atoms,
            std::vector<FeaturePair> features,
            double epsilon = kDefaultEpsilon)
      : atoms_(std::move(atoms)),
        features_(std::move(features)),
        epsilon_(epsilon),
        evidence_(atoms_.size()) {
    if (!std::isfinite(epsilon_)) {
      throw ValidationError("epsilon must be finite");
    }
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      validate(atoms_[i]);
      if (!index_.emplace(atoms_[i].id, i).second) {
        throw ValidationError("duplicate atom id '" + atoms_[i].id + "'");
      }
    }
    for (const FeaturePair& f : features_) {
      const auto [a, b] = f.atoms;
      if (a >= atoms_.size() || b >= atoms_.size()) {
        throw ValidationError("feature " + std::to_string(f.id) +
                              " references an atom outside the model");
      }
      if (a == b) {
        throw ValidationError("feature " + std::to_string(f.id) +
                              " must join two distinct atoms");
      }
      if (!shares_term(atoms_[a], atoms_[b])) {
        throw ValidationError("feature " + std::to_string(f.id) + " joins '" +
                              atoms_[a].id + "' and '" + atoms_[b].id +
                              "' which share no subject/object term");
      }
      if (!std::isfinite(f.weight) || !std::isfinite(f.conj_value) ||
          !std::isfinite(f.xor_value) || f.xor_value > 0.0) {
        throw ValidationError("feature " + std::to_string(f.id) +
                              " has a non-finite value or positive XOR term");
      }
    }
    rebuild_adjacency();
  }

  const std::vector<GroundPredicate>& atoms() const { return atoms_; }
  const std::vector<FeaturePair>& features() const { return features_; }
  std::size_t num_atoms() const { return atoms_.size(); }
  double epsilon() const { return epsilon_; }

  std::optional<std::size_t> find_atom(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t atom_index(std::string_view id) const {
    if (auto idx = find_atom(id)) return *idx;
    throw ValidationError("unknown atom '" + std::string(id) + "'");
  }

  // Features whose grounding mentions `atom` (its Markov blanket).
  std::span<const std::size_t> features_of(std::size_t atom) const {
    return adjacency_[atom];
  }

  std::optional<bool> evidence(std::size_t atom) const {
    return evidence_[atom];
  }
  bool is_evidence(std::size_t atom) const {
    return evidence_[atom].has_value();
  }
  void set_evidence(std::size_t atom, bool value) {
    evidence_.at(atom) = value;
    rebuild_free_list();
  }
  void clear_evidence(std::size_t atom) {
    evidence_.at(atom).reset();
    rebuild_free_list();
  }

  // Non-evidence atoms in ascending index order.
  const std::vector<std::size_t>& free_atoms() const { return free_; }

  std::vector<double> weights() const {
    std::vector<double> w;
    w.reserve(features_.size());
    for (const auto& f : features_) w.push_back(f.weight);
    return w;
  }

  void set_weights(std::span<const double> weights) {
    if (weights.size() != features_.size()) {
      throw ValidationError("weight vector size does not match feature count");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
      features_[i].weight = weights[i];
    }
  }

  std::vector<double> real_terms() const {
    std::vector<double> g;
    g.reserve(atoms_.size());
    for (const auto& a : atoms_) g.push_back(a.g);
    return g;
  }

  // Copy of the model with every atom's g replaced and the feature potentials
  // recomputed from the new similarities.
  HmlnModel with_real_terms(std::span<const double> g) const {
    if (g.size() != atoms_.size()) {
      throw ValidationError("real-term vector covers " +
                            std::to_string(g.size()) + " atoms, model has " +
                            std::to_string(atoms_.size()));
    }
    HmlnModel out = *this;
    for (std::size_t i = 0; i < g.size(); ++i) {
      out.atoms_[i].g = g[i];
      validate(out.atoms_[i]);
    }
    for (auto& f : out.features_) {
      const double g1 = g[f.atoms[0]];
      const double g2 = g[f.atoms[1]];
      f.conj_value = conjunctive_potential(g1, g2, epsilon_);
      f.xor_value = xor_penalty(g1, g2);
    }
    return out;
  }

  // A world with evidence applied and every free atom unset.
  World make_world() const {
    World w(atoms_.size());
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      if (evidence_[i]) w.set(i, *evidence_[i]);
    }
    return w;
  }

  // A world with evidence applied and every free atom set to `fill`.
  World make_world(bool fill) const {
    World w = make_world();
    for (std::size_t i : free_) w.set(i, fill);
    return w;
  }

 private:
  void rebuild_adjacency() {
    adjacency_.assign(atoms_.size(), {});
    for (std::size_t k = 0; k < features_.size(); ++k) {
      adjacency_[features_[k].atoms[0]].push_back(k);
      adjacency_[features_[k].atoms[1]].push_back(k);
    }
    rebuild_free_list();
  }

  void rebuild_free_list() {
    free_.clear();
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      if (!evidence_[i]) free_.push_back(i);
    }
  }

  std::vector<GroundPredicate> atoms_;
  std::vector<FeaturePair> features_;
  double epsilon_ = kDefaultEpsilon;
  std::vector<std::optional<bool>> evidence_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::vector<std::size_t> free_;
};

// Feature pair whose potentials are computed from the atoms' g values.
inline FeaturePair make_feature(std::size_t id, std::size_t a, std::size_t b,
                                double weight,
                                std::span<const GroundPredicate> atoms,
                                double epsilon) {
  return FeaturePair{id,
                     {a, b},
                     weight,
                     conjunctive_potential(atoms[a].g, atoms[b].g, epsilon),
                     xor_penalty(atoms[a].g, atoms[b].g)};
}

////////////////////////////////////////////////////////////////////////////////
// Evaluation
////////////////////////////////////////////////////////////////////////////////

// s_i(x): conjunctive term when both atoms hold, XOR penalty when exactly one
// holds, zero otherwise.
inline double feature_value(const FeaturePair& pair, const World& world) {
  const auto [a, b] = pair.atoms;
  if (a >= world.size() || b >= world.size() || !world.is_set(a) ||
      !world.is_set(b)) {
    throw ContractViolation("feature " + std::to_string(pair.id) +
                            " evaluated on an unassigned atom");
  }
  const bool x = world[a];
  const bool y = world[b];
  if (x && y) return pair.conj_value;
  if (x != y) return pair.xor_value;
  return 0.0;
}

// The exponent sum_i theta_i s_i(x) of the log-linear distribution.
inline double unnormalized_log_prob(const HmlnModel& model, const World& world) {
  if (world.size() != model.num_atoms()) {
    throw ContractViolation("world size does not match the model");
  }
  double total = 0.0;
  for (const FeaturePair& f : model.features()) {
    total += f.weight * feature_value(f, world);
  }
  return total;
}

////////////////////////////////////////////////////////////////////////////////
// Grounding
////////////////////////////////////////////////////////////////////////////////

struct GroundingInstance {
  std::string image_id;
  std::vector<GroundPredicate> predicates;
};

// A conjunctive/XOR pair grounded inside one instance; ids are ordered.
struct PairSkeleton {
  std::string image_id;
  std::array<std::string, 2> atom_ids;

  friend auto operator<=>(const PairSkeleton&, const PairSkeleton&) = default;
};

// Slot-fills the two-predicate chain template within each instance. Output is
// sorted, so it does not depend on instance or predicate order.
inline std::vector<PairSkeleton> ground_templates(
    std::span<const GroundingInstance> instances) {
  std::vector<PairSkeleton> out;
  for (const GroundingInstance& inst : instances) {
    std::set<std::string> seen;
    for (const auto& p : inst.predicates) {
      if (!seen.insert(p.id).second) {
        throw ValidationError("instance '" + inst.image_id +
                              "' repeats predicate id '" + p.id + "'");
      }
    }
    const auto& ps = inst.predicates;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = i + 1; j < ps.size(); ++j) {
        if (!shares_term(ps[i], ps[j])) continue;
        auto ids = std::minmax(ps[i].id, ps[j].id);
        out.push_back({inst.image_id, {ids.first, ids.second}});
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Builds a model from grounded instances: one atom per distinct predicate id
// (g averaged over its occurrences), one weighted pair per distinct atom pair
// regardless of how many instances ground it. Atoms and features are ordered
// by id.
inline HmlnModel build_model(std::span<const GroundingInstance> instances,
                             double epsilon = kDefaultEpsilon,
                             double initial_weight = 0.0) {
  struct Accum {
    GroundPredicate first;
    double sum = 0.0;
    std::size_t count = 0;
  };
  std::map<std::string, Accum> by_id;
  for (const auto& inst : instances) {
    for (const auto& p : inst.predicates) {
      validate(p);
      auto [it, inserted] = by_id.try_emplace(p.id, Accum{p});
      if (!inserted) {
        const auto& f = it->second.first;
        if (to_lower(f.subject) != to_lower(p.subject) ||
            to_lower(f.relation) != to_lower(p.relation) ||
            to_lower(f.object) != to_lower(p.object)) {
          throw ValidationError("predicate id '" + p.id +
                                "' is used for two different triples");
        }
      }
      it->second.sum += p.g;
      ++it->second.count;
    }
  }
  std::vector<GroundPredicate> atoms;
  atoms.reserve(by_id.size());
  for (auto& [id, acc] : by_id) {
    GroundPredicate a = acc.first;
    a.g = acc.sum / static_cast<double>(acc.count);
    atoms.push_back(std::move(a));
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < atoms.size(); ++i) index.emplace(atoms[i].id, i);

  std::set<std::array<std::string, 2>> pairs;
  for (const auto& sk : ground_templates(instances)) pairs.insert(sk.atom_ids);

  std::vector<FeaturePair> features;
  features.reserve(pairs.size());
  for (const auto& ids : pairs) {
    features.push_back(make_feature(features.size(), index.at(ids[0]),
                                    index.at(ids[1]), initial_weight, atoms,
                                    epsilon));
  }
  return HmlnModel(std::move(atoms), std::move(features), epsilon);
}

// Real-term vector of `model` with the g of every listed predicate that is a
// model atom overridden. Predicates outside the model are ignored.
inline std::vector<double> override_real_terms(
    const HmlnModel& model, std::span<const GroundPredicate> predicates) {
  std::vector<double> g = model.real_terms();
  for (const auto& p : predicates) {
    if (auto idx = model.find_atom(p.id)) g[*idx] = p.g;
  }
  return g;
}

}  // namespace hmln
