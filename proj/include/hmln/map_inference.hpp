#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmln/core.hpp"
#include "hmln/errors.hpp"
#include "hmln/similarity.hpp"

namespace hmln {

inline constexpr double kDefaultSoftEvidenceFloor = 0.35;
inline constexpr std::size_t kMaxExactMapVariables = 40;

// Weighted biconditional between a generated-caption atom and a
// reference-caption atom.
struct SoftEvidence {
  std::size_t left = 0;   // atom from the generated caption
  std::size_t right = 0;  // atom from the reference caption
  double score = 0.0;     // in [0, 1]

  friend bool operator==(const SoftEvidence&, const SoftEvidence&) = default;
};

// Pairs every generated predicate with every reference predicate and scores
// the pair by semantic equivalence. Pairs scoring below `floor` are dropped,
// as are pairs that name the same atom (the biconditional is a tautology).
inline std::vector<SoftEvidence> build_soft_evidence(
    const HmlnModel& model, std::span<const GroundPredicate> generated,
    std::span<const GroundPredicate> reference, const SimilarityTable& sim,
    double floor = kDefaultSoftEvidenceFloor) {
  std::vector<SoftEvidence> out;
  for (const auto& y : generated) {
    const std::size_t left = model.atom_index(y.id);
    for (const auto& ref : reference) {
      const std::size_t right = model.atom_index(ref.id);
      const double score = semantic_equivalence(y, ref, sim);
      if (left == right || score < floor) continue;
      out.push_back({left, right, score});
    }
  }
  return out;
}

////////////////////////////////////////////////////////////////////////////////
// MILP encoding
////////////////////////////////////////////////////////////////////////////////

enum class VarKind { kAtom, kConjunction, kExclusive, kEquivalence };
enum class Sense { kLessEqual, kGreaterEqual };

struct MapVariable {
  std::string name;
  VarKind kind = VarKind::kAtom;
  double objective = 0.0;
  std::size_t source = 0;  // atom, feature, or soft-evidence index
};

struct LinearTerm {
  std::size_t var = 0;
  double coef = 0.0;
};

struct LinearConstraint {
  std::string name;
  std::vector<LinearTerm> terms;
  Sense sense = Sense::kLessEqual;
  double rhs = 0.0;
};

// Binary program whose optimum is the MAP assignment. Atom variables come
// first, ordered by atom id; every auxiliary a carries the linearization of
// a <=> f for its formula f. Evidence atoms are substituted as constants.
struct MapProblem {
  std::vector<MapVariable> variables;
  std::size_t num_atom_vars = 0;
  std::vector<LinearConstraint> constraints;
  std::vector<std::string> atom_ids;                  // per model atom
  std::vector<std::optional<bool>> fixed;             // evidence per model atom
  std::vector<std::optional<std::size_t>> atom_var;   // variable per model atom
};

namespace detail {

inline std::string padded_name(char prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%06zu", prefix, n);
  return buf;
}

class ConstraintBuilder {
 public:
  ConstraintBuilder(MapProblem& p, std::size_t aux) : p_(p), aux_(aux) {}

  // Adds: aux + sum(coef_i * atom_i) <sense> rhs.
  void add(std::initializer_list<std::pair<std::size_t, double>> atoms,
           Sense sense, double rhs) {
    LinearConstraint c;
    c.name = padded_name('k', p_.constraints.size());
    c.terms.push_back({aux_, 1.0});
    for (const auto& [atom, coef] : atoms) {
      if (auto v = p_.atom_var[atom]) {
        c.terms.push_back({*v, coef});
      } else {
        rhs -= coef * (*p_.fixed[atom] ? 1.0 : 0.0);
      }
    }
    c.sense = sense;
    c.rhs = rhs;
    p_.constraints.push_back(std::move(c));
  }

 private:
  MapProblem& p_;
  std::size_t aux_;
};

inline std::size_t add_aux(MapProblem& p, char prefix, VarKind kind,
                           double objective, std::size_t source) {
  p.variables.push_back({padded_name(prefix, source), kind, objective, source});
  return p.variables.size() - 1;
}

}  // namespace detail

// Encodes MAP over the model's free atoms with the given soft evidence. The
// real-valued terms are constants here: each feature contributes
// theta*f_c on its conjunction auxiliary and theta*f_r on its XOR auxiliary.
inline MapProblem encode(const HmlnModel& model,
                         std::span<const SoftEvidence> soft) {
  MapProblem p;
  const std::size_t n = model.num_atoms();
  p.atom_ids.reserve(n);
  p.fixed.resize(n);
  p.atom_var.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.atom_ids.push_back(model.atoms()[i].id);
    p.fixed[i] = model.evidence(i);
  }
  std::vector<std::size_t> free = model.free_atoms();
  std::sort(free.begin(), free.end(), [&](std::size_t a, std::size_t b) {
    return p.atom_ids[a] < p.atom_ids[b];
  });
  for (std::size_t atom : free) {
    p.atom_var[atom] = p.variables.size();
    p.variables.push_back(
        {detail::padded_name('x', p.variables.size()), VarKind::kAtom, 0.0, atom});
  }
  p.num_atom_vars = p.variables.size();

  for (std::size_t k = 0; k < model.features().size(); ++k) {
    const FeaturePair& f = model.features()[k];
    const auto [x1, x2] = f.atoms;

    const std::size_t c = detail::add_aux(p, 'c', VarKind::kConjunction,
                                          f.weight * f.conj_value, k);
    detail::ConstraintBuilder conj(p, c);
    conj.add({{x1, -1.0}}, Sense::kLessEqual, 0.0);
    conj.add({{x2, -1.0}}, Sense::kLessEqual, 0.0);
    conj.add({{x1, -1.0}, {x2, -1.0}}, Sense::kGreaterEqual, -1.0);

    const std::size_t r = detail::add_aux(p, 'r', VarKind::kExclusive,
                                          f.weight * f.xor_value, k);
    detail::ConstraintBuilder excl(p, r);
    excl.add({{x1, -1.0}, {x2, 1.0}}, Sense::kGreaterEqual, 0.0);
    excl.add({{x1, 1.0}, {x2, -1.0}}, Sense::kGreaterEqual, 0.0);
    excl.add({{x1, -1.0}, {x2, -1.0}}, Sense::kLessEqual, 0.0);
    excl.add({{x1, 1.0}, {x2, 1.0}}, Sense::kLessEqual, 2.0);
  }

  for (std::size_t s = 0; s < soft.size(); ++s) {
    const SoftEvidence& ev = soft[s];
    if (ev.left >= n || ev.right >= n) {
      throw ValidationError("soft evidence references an atom outside the model");
    }
    if (ev.left == ev.right) {
      throw ValidationError("soft evidence must link two distinct atoms");
    }
    if (!std::isfinite(ev.score) || ev.score < 0.0 || ev.score > 1.0) {
      throw ValidationError("soft evidence score must lie in [0, 1]");
    }
    const std::size_t e =
        detail::add_aux(p, 'e', VarKind::kEquivalence, ev.score, s);
    detail::ConstraintBuilder eq(p, e);
    eq.add({{ev.left, 1.0}, {ev.right, -1.0}}, Sense::kLessEqual, 1.0);
    eq.add({{ev.left, -1.0}, {ev.right, 1.0}}, Sense::kLessEqual, 1.0);
    eq.add({{ev.left, -1.0}, {ev.right, -1.0}}, Sense::kGreaterEqual, -1.0);
    eq.add({{ev.left, 1.0}, {ev.right, 1.0}}, Sense::kGreaterEqual, 1.0);
  }
  return p;
}

// Encodes with additional hard evidence applied on top of the model's own.
inline MapProblem encode(const HmlnModel& model,
                         std::span<const std::pair<std::size_t, bool>> evidence,
                         std::span<const SoftEvidence> soft) {
  HmlnModel m = model;
  std::vector<std::optional<bool>> seen(model.num_atoms());
  for (const auto& [atom, value] : evidence) {
    if (atom >= model.num_atoms()) {
      throw ValidationError("evidence references an atom outside the model");
    }
    const auto prior = seen[atom] ? seen[atom] : model.evidence(atom);
    if (prior && *prior != value) {
      throw ValidationError("inconsistent hard evidence for atom '" +
                            model.atoms()[atom].id + "'");
    }
    seen[atom] = value;
    m.set_evidence(atom, value);
  }
  return encode(m, soft);
}

////////////////////////////////////////////////////////////////////////////////
// Exact branch-and-bound
////////////////////////////////////////////////////////////////////////////////

enum class Proof { kOptimal, kNodeLimit };

struct SolveOptions {
  std::size_t max_binary_vars = kMaxExactMapVariables;
  std::size_t node_limit = 0;  // 0 = unlimited
};

struct MapSolution {
  World assignment;  // every model atom, evidence included
  double objective_value = 0.0;
  Proof proof = Proof::kOptimal;
  std::size_t nodes = 0;
};

inline bool constraint_holds(const LinearConstraint& c,
                             std::span<const std::int8_t> values) {
  constexpr double kTol = 1e-9;
  double lhs = 0.0;
  for (const auto& t : c.terms) lhs += t.coef * values[t.var];
  return c.sense == Sense::kLessEqual ? lhs <= c.rhs + kTol
                                      : lhs >= c.rhs - kTol;
}

inline double problem_objective(const MapProblem& p,
                                std::span<const std::int8_t> values) {
  double total = 0.0;
  for (std::size_t v = 0; v < p.variables.size(); ++v) {
    total += p.variables[v].objective * values[v];
  }
  return total;
}

namespace detail {

// Depth-first search over the atom variables in id order, 0 before 1.
// Auxiliaries are fixed by their constraints once every atom they mention is
// fixed. The bound adds every positive coefficient not yet fixed.
class BranchAndBound {
 public:
  BranchAndBound(const MapProblem& p, const SolveOptions& opts)
      : p_(p), opts_(opts) {
    const std::size_t nv = p.variables.size();
    const std::size_t na = p.num_atom_vars;
    aux_constraints_.resize(nv);
    for (std::size_t c = 0; c < p.constraints.size(); ++c) {
      std::optional<std::size_t> aux;
      for (const auto& t : p.constraints[c].terms) {
        if (t.var >= na) {
          if (aux && *aux != t.var) {
            throw ContractViolation("constraint links two auxiliaries");
          }
          aux = t.var;
        }
      }
      if (!aux) throw ContractViolation("constraint without an auxiliary");
      aux_constraints_[*aux].push_back(c);
    }
    // ready_[level + 1]: auxiliaries determined once atom vars [0, level] are
    // fixed; level -1 is the root.
    ready_.resize(na + 1);
    for (std::size_t v = na; v < nv; ++v) {
      std::ptrdiff_t level = -1;
      for (std::size_t c : aux_constraints_[v]) {
        for (const auto& t : p.constraints[c].terms) {
          if (t.var < na) level = std::max<std::ptrdiff_t>(level, t.var);
        }
      }
      ready_[static_cast<std::size_t>(level + 1)].push_back(v);
    }
    // optimistic_[d]: best-case gain from variables still open after atom
    // vars [0, d) are fixed (and their auxiliaries determined).
    optimistic_.assign(na + 1, 0.0);
    for (std::size_t d = 0; d <= na; ++d) {
      double s = 0.0;
      for (std::size_t a = d; a < na; ++a) {
        s += std::max(0.0, p.variables[a].objective);
      }
      for (std::size_t lvl = d + 1; lvl <= na; ++lvl) {
        for (std::size_t v : ready_[lvl]) {
          s += std::max(0.0, p.variables[v].objective);
        }
      }
      optimistic_[d] = s;
    }
    values_.assign(nv, 0);
  }

  std::optional<std::vector<std::int8_t>> run(Proof& proof, std::size_t& nodes) {
    double obj = 0.0;
    if (determine(ready_[0], obj)) dfs(0, obj);
    proof = stopped_ ? Proof::kNodeLimit : Proof::kOptimal;
    nodes = nodes_;
    return best_;
  }

 private:
  bool determine(const std::vector<std::size_t>& auxes, double& obj) {
    for (std::size_t v : auxes) {
      std::optional<std::int8_t> chosen;
      for (std::int8_t val : {std::int8_t{0}, std::int8_t{1}}) {
        values_[v] = val;
        bool ok = true;
        for (std::size_t c : aux_constraints_[v]) {
          if (!constraint_holds(p_.constraints[c], values_)) {
            ok = false;
            break;
          }
        }
        if (ok && (!chosen || p_.variables[v].objective > 0.0)) chosen = val;
      }
      if (!chosen) return false;
      values_[v] = *chosen;
      obj += p_.variables[v].objective * *chosen;
    }
    return true;
  }

  void dfs(std::size_t depth, double obj) {
    if (stopped_) return;
    ++nodes_;
    if (opts_.node_limit != 0 && nodes_ > opts_.node_limit) {
      stopped_ = true;
      return;
    }
    if (depth == p_.num_atom_vars) {
      if (!best_ || obj > best_obj_ + kImprove) {
        best_ = values_;
        best_obj_ = obj;
      }
      return;
    }
    for (std::int8_t val : {std::int8_t{0}, std::int8_t{1}}) {
      values_[depth] = val;
      double next = obj + p_.variables[depth].objective * val;
      if (!determine(ready_[depth + 1], next)) continue;
      if (best_ && next + optimistic_[depth + 1] <= best_obj_ + kImprove) {
        continue;
      }
      dfs(depth + 1, next);
    }
  }

  static constexpr double kImprove = 1e-12;

  const MapProblem& p_;
  SolveOptions opts_;
  std::vector<std::vector<std::size_t>> aux_constraints_;
  std::vector<std::vector<std::size_t>> ready_;
  std::vector<double> optimistic_;
  std::vector<std::int8_t> values_;
  std::optional<std::vector<std::int8_t>> best_;
  double best_obj_ = -std::numeric_limits<double>::infinity();
  std::size_t nodes_ = 0;
  bool stopped_ = false;
};

}  // namespace detail

// Exact MAP by branch-and-bound. Among co-optimal assignments the
// lexicographically smallest one (atoms ordered by id) is returned.
inline MapSolution solve(const MapProblem& problem,
                         const SolveOptions& options = {}) {
  if (problem.num_atom_vars > options.max_binary_vars) {
    throw GuardError("MAP program has " + std::to_string(problem.num_atom_vars) +
                     " binary atom variables, over the exact-solver limit of " +
                     std::to_string(options.max_binary_vars) +
                     "; write it with export-lp and use an external MILP solver");
  }
  detail::BranchAndBound bnb(problem, options);
  MapSolution sol;
  auto best = bnb.run(sol.proof, sol.nodes);
  if (!best) {
    if (sol.proof == Proof::kNodeLimit) {
      throw GuardError("node limit reached before any feasible MAP assignment");
    }
    throw ValidationError("MAP program is infeasible");
  }
  sol.assignment = World(problem.atom_ids.size());
  for (std::size_t i = 0; i < problem.atom_ids.size(); ++i) {
    if (problem.fixed[i]) {
      sol.assignment.set(i, *problem.fixed[i]);
    } else {
      sol.assignment.set(i, (*best)[*problem.atom_var[i]] == 1);
    }
  }
  sol.objective_value = problem_objective(problem, *best);
  return sol;
}

////////////////////////////////////////////////////////////////////////////////
// Abductive scoring
////////////////////////////////////////////////////////////////////////////////

struct MapOptions {
  double soft_evidence_floor = kDefaultSoftEvidenceFloor;
  // Fix every atom outside the generated and reference captions to 0 so only
  // the query slice is searched.
  bool closed_world_slice = false;
  SolveOptions solve;
};

struct MapScore {
  MapSolution solution;
  std::vector<SoftEvidence> soft;
};

// Generated-caption atoms are observed true; reference-caption atoms and the
// rest of the model are MAP variables tied to the generated ones by soft
// evidence. The model should already carry the test image's real terms.
inline MapScore map_inference(const HmlnModel& model,
                              std::span<const GroundPredicate> generated,
                              std::span<const GroundPredicate> reference,
                              const SimilarityTable& sim,
                              const MapOptions& options = {}) {
  MapScore out;
  out.soft = build_soft_evidence(model, generated, reference, sim,
                                 options.soft_evidence_floor);
  std::vector<std::pair<std::size_t, bool>> evidence;
  for (const auto& y : generated) evidence.emplace_back(model.atom_index(y.id), true);
  if (options.closed_world_slice) {
    std::vector<bool> in_slice(model.num_atoms(), false);
    for (const auto& y : generated) in_slice[model.atom_index(y.id)] = true;
    for (const auto& y : reference) in_slice[model.atom_index(y.id)] = true;
    for (std::size_t i = 0; i < model.num_atoms(); ++i) {
      if (!in_slice[i] && !model.is_evidence(i)) evidence.emplace_back(i, false);
    }
  }
  out.solution = solve(encode(model, evidence, out.soft), options.solve);
  return out;
}

inline double map_score(const HmlnModel& model,
                        std::span<const GroundPredicate> generated,
                        std::span<const GroundPredicate> reference,
                        const SimilarityTable& sim,
                        const MapOptions& options = {}) {
  return map_inference(model, generated, reference, sim, options)
      .solution.objective_value;
}

struct MapQuery {
  HmlnModel model;  // conditioned on the test image
  std::vector<GroundPredicate> generated;
  std::vector<GroundPredicate> reference;
};

// Average MAP objective over a batch of test captions.
inline double mean_map_score(std::span<const MapQuery> queries,
                             const SimilarityTable& sim,
                             const MapOptions& options = {}) {
  if (queries.empty()) throw ValidationError("no MAP queries to score");
  double total = 0.0;
  for (const auto& q : queries) {
    total += map_score(q.model, q.generated, q.reference, sim, options);
  }
  return total / static_cast<double>(queries.size());
}

}  // namespace hmln
