#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "hmln/core.hpp"
#include "hmln/errors.hpp"

namespace hmln {

// Symmetric token-pair similarity in [0, 1]. A token is always fully similar
// to itself. Tokens are compared case-insensitively.
class SimilarityTable {
 public:
  enum class MissingPolicy { kError, kZero };

  explicit SimilarityTable(MissingPolicy missing = MissingPolicy::kError)
      : missing_(missing) {}

  // Adds (a, b). Adding a pair again, in either order, must repeat the same
  // score.
  void add(std::string_view a, std::string_view b, double score) {
    if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
      throw ValidationError("similarity for (" + std::string(a) + ", " +
                            std::string(b) + ") is outside [0, 1]");
    }
    auto key = make_key(a, b);
    if (key.first == key.second) {
      if (score != 1.0) {
        throw ValidationError("self-similarity of '" + key.first +
                              "' must be 1");
      }
      return;
    }
    auto [it, inserted] = entries_.emplace(key, score);
    if (!inserted && it->second != score) {
      throw ValidationError("similarity table is not symmetric for (" +
                            key.first + ", " + key.second + ")");
    }
  }

  std::optional<double> find(std::string_view a, std::string_view b) const {
    auto key = make_key(a, b);
    if (key.first == key.second) return 1.0;
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  double lookup(std::string_view a, std::string_view b) const {
    if (auto v = find(a, b)) return *v;
    if (missing_ == MissingPolicy::kZero) return 0.0;
    throw ValidationError("similarity table has no entry for (" +
                          std::string(a) + ", " + std::string(b) + ")");
  }

  MissingPolicy missing_policy() const { return missing_; }
  void set_missing_policy(MissingPolicy p) { missing_ = p; }

  // Entries keyed by (smaller token, larger token).
  const std::map<std::pair<std::string, std::string>, double>& entries() const {
    return entries_;
  }

 private:
  static std::pair<std::string, std::string> make_key(std::string_view a,
                                                      std::string_view b) {
    std::string x = to_lower(a);
    std::string y = to_lower(b);
    if (y < x) std::swap(x, y);
    return {std::move(x), std::move(y)};
  }

  MissingPolicy missing_;
  std::map<std::pair<std::string, std::string>, double> entries_;
};

// Semantic equivalence of two predicates: the smaller of the subject and
// object similarities.
inline double semantic_equivalence(const GroundPredicate& a,
                                   const GroundPredicate& b,
                                   const SimilarityTable& sim) {
  return std::min(sim.lookup(a.subject, b.subject),
                  sim.lookup(a.object, b.object));
}

}  // namespace hmln
