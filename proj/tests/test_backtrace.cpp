#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hmln/backtrace.hpp"
#include "hmln/enumerate.hpp"
#include "hmln/io.hpp"
#include "hmln/pipeline.hpp"
#include "test_support.hpp"

namespace hmln {
namespace {

using testing::bit;

// Similarity over the random-model vocabulary: "s" plus o00..o(n-1).
SimilarityTable random_table(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SimilarityTable t;
  for (std::size_t i = 0; i < n; ++i) {
    char a[32];
    std::snprintf(a, sizeof(a), "o%02zu", i);
    t.add("s", a, 0.05);
    for (std::size_t j = i + 1; j < n; ++j) {
      char b[32];
      std::snprintf(b, sizeof(b), "o%02zu", j);
      t.add(a, b, u(rng));
    }
  }
  return t;
}

TrainingExample example_of(const HmlnModel& m, std::initializer_list<std::size_t> atoms,
                           std::string id, double shift = 0.0) {
  TrainingExample ex{std::move(id), {}};
  for (std::size_t a : atoms) {
    GroundPredicate p = m.atoms()[a];
    p.g = std::clamp(p.g + shift, -1.0, 1.0);
    ex.predicates.push_back(p);
  }
  return ex;
}

TEST(Hellinger, Values) {
  EXPECT_EQ(hellinger_bernoulli(0.3, 0.3), 0.0);
  EXPECT_EQ(hellinger_bernoulli(0.0, 1.0), 1.0);
  const double p = 0.5;
  const double q = 0.1;
  const double direct = std::sqrt(0.5 * (std::pow(std::sqrt(p) - std::sqrt(q), 2) +
                                         std::pow(std::sqrt(1 - p) - std::sqrt(1 - q), 2)));
  EXPECT_NEAR(hellinger_bernoulli(p, q), direct, 1e-15);
  EXPECT_THROW(hellinger_bernoulli(1.2, 0.1), ValidationError);
}

TEST(SimilarityReport, Values) {
  EXPECT_NEAR(similarity_report_x(0.0), 0.6931471805599453, 1e-15);
  EXPECT_LT(similarity_report_x(30.0), 1e-12);
  EXPECT_NEAR(similarity_report_x(-1.0), 1.0 + std::log1p(std::exp(-1.0)), 1e-14);
  EXPECT_NEAR(similarity_report_x(-1.0), 1.3132616875182228, 1e-14);
}

TEST(Relevance, IdenticalCaptionKept) {
  SimilarityTable sim;
  sim.add("man", "horse", 0.1);
  const auto p = make_predicate("man", "riding", "horse", 0.3);
  const TrainingExample ex{"e", {p}};
  const std::vector<GroundPredicate> gen{p};
  EXPECT_TRUE(is_contextually_relevant(ex, gen, sim, 0.999999));
}

TEST(Relevance, UnmatchedPredicateExcludes) {
  SimilarityTable sim;
  sim.add("man", "dog", 0.2);
  sim.add("horse", "ball", 0.2);
  const TrainingExample ex{"e",
                           {make_predicate("man", "riding", "horse", 0.3),
                            make_predicate("dog", "chasing", "ball", 0.3)}};
  const std::vector<GroundPredicate> gen{make_predicate("man", "riding", "horse", 0.3)};
  EXPECT_FALSE(is_contextually_relevant(ex, gen, sim, 0.75));
  EXPECT_FALSE(is_contextually_relevant(TrainingExample{"empty", {}}, gen, sim, 0.75));
}

TEST(Relevance, FixtureCorpusKeptSets) {
  const auto train = io::load_dataset(HMLN_FIXTURES "/train.jsonl");
  const auto test = io::load_dataset(HMLN_FIXTURES "/test.jsonl");
  const auto sim = io::load_similarity(HMLN_FIXTURES "/similarity.tsv");
  const auto examples = training_examples(train);
  const std::vector<std::vector<std::string>> expected{
      {"tr01", "tr02", "tr09"}, {"tr03"}, {"tr04", "tr08"}, {}};
  ASSERT_EQ(test.size(), expected.size());
  for (std::size_t k = 0; k < test.size(); ++k) {
    std::vector<std::string> got;
    for (const auto& ex : contextually_relevant(examples, test[k].predicates, sim, 0.75)) {
      got.push_back(ex.id);
    }
    EXPECT_EQ(got, expected[k]) << test[k].instance_id;
  }
}

TEST(ImportanceWeight, IdentityWhenTermsEqual) {
  std::mt19937_64 rng(1);
  const HmlnModel m = testing::random_model(rng, {});
  const auto g = m.real_terms();
  const ImportanceWeigher weigher(m, g);
  for (std::uint64_t mask = 0; mask < 256; ++mask) {
    const World w = testing::world_from_mask(8, mask);
    EXPECT_EQ(importance_weight(m, w, g, g), 1.0);
    EXPECT_EQ(weigher.weight(w), 1.0);
  }
}

TEST(ImportanceWeight, SinglePairAlgebra) {
  std::vector<GroundPredicate> atoms{make_predicate("man", "riding", "horse", 0.5),
                                     make_predicate("horse", "on", "beach", 0.6)};
  const double theta = 1.7;
  const HmlnModel m(atoms, {make_feature(0, 0, 1, theta, atoms, 0.3)});
  const std::vector<double> test{0.5, 0.6};
  const std::vector<double> train{0.1, 0.4};
  const double expected =
      std::exp(theta * (testing::oracle_fc(0.1, 0.4, 0.3) - testing::oracle_fc(0.5, 0.6, 0.3)));
  const World both = testing::world_from_mask(2, 3);
  EXPECT_NEAR(importance_weight(m, both, test, train), expected, 1e-12);
  EXPECT_NEAR(ImportanceWeigher(m, train).weight(both), expected, 1e-12);
  EXPECT_EQ(importance_weight(m, testing::world_from_mask(2, 0), test, train), 1.0);
}

TEST(ImportanceWeight, IncrementalMatchesDirect) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const HmlnModel m = testing::random_model(rng, {});
    std::vector<double> train = m.real_terms();
    for (double& g : train) g = u(rng);
    const ImportanceWeigher weigher(m, train);
    for (std::uint64_t mask = 0; mask < 256; mask += 5) {
      const World w = testing::world_from_mask(8, mask);
      EXPECT_NEAR(weigher.weight(w), importance_weight(m, w, m.real_terms(), train),
                  1e-12);
    }
  }
}

TEST(Indicator, PresentAndAbsent) {
  std::vector<GroundPredicate> atoms{make_predicate("man", "riding", "horse", 0.3),
                                     make_predicate("horse", "on", "beach", 0.3)};
  const HmlnModel m(atoms, {});
  SimilarityTable sim;
  sim.add("man", "horse", 0.1);
  sim.add("horse", "beach", 0.1);
  sim.add("man", "beach", 0.1);
  const TrainingExample ex{"e", atoms};
  EXPECT_TRUE(indicator(m, ex, testing::world_from_mask(2, 3), sim, 0.75));
  EXPECT_FALSE(indicator(m, ex, testing::world_from_mask(2, 1), sim, 0.75));
}

TEST(Indicator, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, 7);
  for (int trial = 0; trial < 10; ++trial) {
    const HmlnModel m = testing::random_model(rng, {});
    const SimilarityTable sim = random_table(rng, 8);
    const TrainingExample ex = example_of(m, {pick(rng), pick(rng)}, "e");
    std::vector<GroundPredicate> unique;
    for (const auto& p : ex.predicates) {
      if (unique.empty() || unique.front().id != p.id) unique.push_back(p);
    }
    const TrainingExample dedup{"e", unique};
    const IndicatorMatcher match(m, dedup, sim, 0.6);
    for (std::uint64_t mask = 0; mask < 256; ++mask) {
      EXPECT_EQ(match(testing::world_from_mask(8, mask)),
                testing::oracle_indicator(m, dedup.predicates, sim, 0.6, mask));
    }
  }
}

BacktraceConfig config(std::size_t samples, std::uint64_t seed) {
  BacktraceConfig c;
  c.sampler.total_samples = samples;
  c.sampler.seed = seed;
  return c;
}

TEST(Densities, AlwaysTrueIndicatorGivesOne) {
  std::mt19937_64 rng(4);
  HmlnModel m = testing::random_model(rng, {});
  m.set_evidence(2, true);
  SimilarityTable sim = random_table(rng, 8);
  const std::vector<TrainingExample> rel{example_of(m, {2}, "e", 0.1)};
  const auto r = estimate_densities(m, rel, sim, config(500, 1));
  EXPECT_EQ(r.per_example[0].density, 1.0);
}

TEST(Densities, UnweightedReducesToFrequency) {
  std::mt19937_64 rng(5);
  const HmlnModel m = testing::random_model(rng, {});
  SimilarityTable sim = random_table(rng, 8);
  const std::vector<TrainingExample> rel{example_of(m, {0, 3}, "a"),
                                         example_of(m, {5}, "b")};
  const auto cfg = config(10000, 21);
  const auto r = estimate_densities(m, rel, sim, cfg);
  const auto samples = sample_worlds(m, cfg.sampler);
  for (std::size_t i = 0; i < rel.size(); ++i) {
    const IndicatorMatcher match(m, rel[i], sim, cfg.relevance_threshold);
    double hits = 0.0;
    for (const auto& w : samples) hits += match(w) ? 1.0 : 0.0;
    EXPECT_EQ(r.per_example[i].density, hits / static_cast<double>(samples.size()));
    const double exact = testing::oracle_clipped_ratio(
        m, m.real_terms(),
        [&](std::uint64_t mask) {
          return testing::oracle_indicator(m, rel[i].predicates, sim, 0.75, mask);
        },
        1.0, true);
    EXPECT_NEAR(r.per_example[i].density, exact, 0.05);
  }
}

TEST(Densities, NestedExamplesOrdered) {
  std::mt19937_64 rng(6);
  const HmlnModel m = testing::random_model(rng, {});
  SimilarityTable sim = random_table(rng, 8);
  const std::vector<TrainingExample> rel{example_of(m, {1, 4, 6}, "super"),
                                         example_of(m, {1, 4}, "sub")};
  const auto r = estimate_densities(m, rel, sim, config(2000, 3));
  EXPECT_LE(r.per_example[0].density, r.per_example[1].density);
  EXPECT_EQ(r.maximal, "sub");
  EXPECT_EQ(r.minimal, "super");
}

TEST(Densities, ClippedWeightsRespectThreshold) {
  std::mt19937_64 rng(7);
  const HmlnModel m = testing::random_model(rng, {});
  SimilarityTable sim = random_table(rng, 8);
  const std::vector<TrainingExample> rel{example_of(m, {0, 1}, "a", 0.2),
                                         example_of(m, {2}, "b", -0.2)};
  auto cfg = config(1000, 4);
  cfg.clip_threshold = 1.0;
  std::size_t seen = 0;
  estimate_densities(m, rel, sim, cfg, [&](std::size_t, const WeightedSample& s) {
    EXPECT_LE(s.clipped_weight, 1.0);
    EXPECT_EQ(s.clipped_weight, std::min(s.raw_weight, 1.0));
    ++seen;
  });
  EXPECT_EQ(seen, 2000u);

  cfg.clip_mode = ClipMode::kFloor;
  estimate_densities(m, rel, sim, cfg, [&](std::size_t, const WeightedSample& s) {
    EXPECT_GE(s.clipped_weight, 1.0);
  });
}

TEST(Densities, InfiniteThresholdEqualsUnclipped) {
  std::mt19937_64 rng(8);
  const HmlnModel m = testing::random_model(rng, {});
  SimilarityTable sim = random_table(rng, 8);
  const std::vector<TrainingExample> rel{example_of(m, {0, 1}, "a", 0.2),
                                         example_of(m, {2}, "b", -0.2)};
  auto cfg = config(2000, 4);
  cfg.clip_threshold = std::numeric_limits<double>::infinity();
  const auto r = estimate_densities(m, rel, sim, cfg);
  const auto samples = sample_worlds(m, cfg.sampler);
  for (std::size_t i = 0; i < rel.size(); ++i) {
    const auto train_g = override_real_terms(m, rel[i].predicates);
    const IndicatorMatcher match(m, rel[i], sim, cfg.relevance_threshold);
    double num = 0.0;
    double den = 0.0;
    for (const auto& w : samples) {
      const double wt = importance_weight(m, w, m.real_terms(), train_g);
      den += wt;
      if (match(w)) num += wt;
    }
    EXPECT_NEAR(r.per_example[i].density, num / den, 1e-12);
  }
}

TEST(Densities, RequiresRelevantExamplesAndFreeAtoms) {
  std::mt19937_64 rng(9);
  HmlnModel m = testing::random_model(rng, {});
  SimilarityTable sim = random_table(rng, 8);
  EXPECT_THROW(estimate_densities(m, {}, sim, config(10, 1)), ValidationError);
  for (std::size_t i = 0; i < m.num_atoms(); ++i) m.set_evidence(i, false);
  const std::vector<TrainingExample> rel{example_of(m, {0}, "a")};
  EXPECT_THROW(estimate_densities(m, rel, sim, config(10, 1)), ValidationError);
}

}  // namespace
}  // namespace hmln
