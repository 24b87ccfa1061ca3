#include <doctest.h>

#include <sstream>

#include "acl/ocw.hpp"
#include "oracles.hpp"

using namespace acl;

namespace {

const LabelId A{0}, B{1}, C{2};

Distribution dist(std::initializer_list<std::pair<const LabelId, double>> v) { return Distribution(std::map(v)); }

Distribution random_dist(Rng& rng, const LabelSet& labels) {
  std::map<LabelId, double> m;
  double s = 0;
  for (LabelId y : labels) s += m[y] = rng.uniform01() + 1e-3;
  for (auto& [y, v] : m) v /= s;
  return Distribution(m);
}

}  // namespace

TEST_CASE("tracker cold start and EMA") {
  ClassAccuracyTracker t(0.99);
  CHECK(t.cold_start_length() == 100);
  CHECK(ClassAccuracyTracker(0.9).cold_start_length() == 10);
  CHECK(ClassAccuracyTracker(0.0).cold_start_length() == 1);

  t.update(A, true, false);
  CHECK(t.find(A)->tuned == 1.0);
  CHECK(t.find(A)->frozen == 0.0);
  CHECK(t.find(A)->n_seen == 1);

  t.set(B, {0.5, 0.5, 100});
  t.update(B, false, true);
  CHECK(t.find(B)->tuned == doctest::Approx(0.495).epsilon(1e-14));
  CHECK(t.find(B)->frozen == doctest::Approx(0.505).epsilon(1e-14));

  ClassAccuracyTracker alt(0.99);
  for (int i = 0; i < 100; ++i) alt.update(C, i % 2 == 0, true);
  CHECK(std::abs(alt.find(C)->tuned - 0.5) <= 0.005);
  CHECK(alt.find(C)->frozen == 1.0);
  CHECK_FALSE(alt.tracked(A));
  CHECK_THROWS_AS(ClassAccuracyTracker(1.0), ConfigError);
}

TEST_CASE("running mean matches the arithmetic mean during cold start") {
  Rng rng(3);
  ClassAccuracyTracker t(0.99);
  double hits = 0;
  for (int i = 0; i < 100; ++i) {
    const bool ok = rng.uniform01() < 0.3;
    hits += ok;
    t.update(A, ok, !ok);
    CHECK(t.find(A)->tuned == doctest::Approx(hits / (i + 1)).epsilon(1e-12));
  }
}

TEST_CASE("estimates stay inside [0, 1] for random indicator sequences") {
  Rng rng(10);
  for (int seq = 0; seq < 10000; ++seq) {
    ClassAccuracyTracker t(rng.uniform01() * 0.999);
    const int len = 1 + static_cast<int>(rng.uniform_index(150));
    for (int i = 0; i < len; ++i) t.update(A, rng.uniform01() < 0.5, rng.uniform01() < 0.9);
    const auto* e = t.find(A);
    REQUIRE(e != nullptr);
    CHECK(e->tuned >= 0.0);
    CHECK(e->tuned <= 1.0);
    CHECK(e->frozen >= 0.0);
    CHECK(e->frozen <= 1.0);
  }
}

TEST_CASE("alpha rules") {
  ClassAccuracyTracker t(0.99, 1e-8);
  t.set(A, {0.8, 0.8, 10});
  t.set(B, {0.0, 0.0, 10});
  const LabelSet seen{A, B};

  auto a = alpha(t, A, seen, false);
  CHECK(a.tuned == doctest::Approx(0.8 / (1.6 + 1e-8)).epsilon(1e-15));
  CHECK(a.tuned + a.frozen == 1.0);
  CHECK(alpha(t, B, seen, false).tuned == 0.0);
  CHECK(alpha(t, C, seen, false).tuned == 0.0);
  CHECK(alpha(t, C, seen, false).frozen == 1.0);
  CHECK(alpha(t, A, seen, true).tuned == 1.0);
  CHECK(alpha(t, A, seen, true).frozen == 0.0);
  // seen by the store but not yet tracked behaves as unseen
  CHECK(alpha(t, C, {A, B, C}, false).tuned == 0.0);

  // p_other modifier scales c_t
  const auto m = alpha(t, A, seen, false, 0.5);
  CHECK(m.tuned == doctest::Approx(0.4 / (1.2 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("alpha is monotone in c_t and insensitive to a common scale") {
  for (int j = 0; j <= 20; ++j) {
    const double co = j / 20.0;
    double prev = -1;
    for (int i = 0; i <= 20; ++i) {
      ClassAccuracyTracker t;
      t.set(A, {i / 20.0, co, 5});
      const double at = alpha(t, A, {A}, false).tuned;
      CHECK(at >= prev);
      prev = at;
    }
  }
  // eps shifts alpha by about eps / (c_t + c_o); keeping the scaled sum above
  // 0.1 bounds that at 1e-7
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const double ct = 0.2 + 0.8 * rng.uniform01(), co = 0.2 + 0.8 * rng.uniform01(), s = 0.25 + 0.75 * rng.uniform01();
    ClassAccuracyTracker t1, t2;
    t1.set(A, {ct, co, 5});
    t2.set(A, {ct * s, co * s, 5});
    CHECK(std::abs(alpha(t1, A, {A}, false).tuned - alpha(t2, A, {A}, false).tuned) <= 1e-7);
  }
}

TEST_CASE("mixing and combined prediction") {
  const auto pt = dist({{A, 0.9}, {B, 0.1}});
  const auto po = dist({{A, 0.2}, {B, 0.8}});

  const auto half = mix_predictions(pt, po, {{A, 0.5}, {B, 0.5}});
  CHECK(half[A] == doctest::Approx(0.55).epsilon(1e-14));
  CHECK(half[B] == doctest::Approx(0.45).epsilon(1e-14));
  CHECK(mix_predictions(pt, po, {{A, 0.0}, {B, 0.0}}) == po);
  CHECK(mix_predictions(pt, po, {{A, 1.0}, {B, 1.0}}) == pt);
  CHECK_THROWS_AS(mix_predictions(pt, dist({{A, 0.5}, {C, 0.5}}), {{A, 0.5}, {B, 0.5}}), ArgumentError);

  ClassAccuracyTracker t;
  t.set(A, {0.9, 0.5, 50});
  // only A seen: B keeps its frozen weighting, A is mixed, result renormalized
  const auto c = combined_prediction(pt, po, t, {A});
  const double at = 0.9 / (1.4 + 1e-8);
  const double va = at * 0.9 + (1 - at) * 0.2, vb = 0.8;
  CHECK(c[A] == doctest::Approx(va / (va + vb)).epsilon(1e-12));
  CHECK(c[B] == doctest::Approx(vb / (va + vb)).epsilon(1e-12));
  // all candidates seen -> tuned prediction
  t.set(B, {0.1, 0.9, 50});
  CHECK(combined_prediction(pt, po, t, {A, B}) == pt);
}

TEST_CASE("combined prediction is always a valid distribution and never forgets unseen-only suites") {
  Rng rng(21);
  const LabelSet labels{LabelId{0}, LabelId{1}, LabelId{2}, LabelId{3}, LabelId{4}};
  for (int trial = 0; trial < 2000; ++trial) {
    ClassAccuracyTracker t;
    LabelSet seen;
    for (LabelId y : labels)
      if (rng.uniform01() < 0.5) {
        seen.insert(y);
        t.set(y, {rng.uniform01(), rng.uniform01(), 1 + static_cast<std::int64_t>(rng.uniform_index(200))});
      }
    const auto pt = random_dist(rng, labels), po = random_dist(rng, labels);
    const auto c = combined_prediction(pt, po, t, seen);
    double s = 0;
    for (const auto& [y, v] : c.probs()) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);

    LabelSet unseen;
    for (LabelId y : labels)
      if (!seen.count(y)) unseen.insert(y);
    if (unseen.empty()) continue;
    const Distribution qo = random_dist(rng, unseen), qt = random_dist(rng, unseen);
    CHECK(combined_prediction(qt, qo, t, seen) == qo);
  }
}

TEST_CASE("AIM alpha") {
  const auto po = dist({{A, 0.3}, {B, 0.7}});
  CHECK(aim_alpha(po, {C}) == 0.0);
  CHECK(aim_alpha(po, {A, B}) == doctest::Approx(1.0));
  CHECK(aim_alpha(po, {A}) == doctest::Approx(0.3));
}

TEST_CASE("leave-one-out nearest neighbour confidence") {
  using Ex = std::vector<std::pair<Eigen::VectorXd, LabelId>>;
  SUBCASE("separated tight clusters") {
    Rng rng(1);
    Ex ex;
    for (int i = 0; i < 5; ++i) {
      ex.push_back({Eigen::Vector3d(1, 0, 0) + 0.01 * oracle::random_matrix(rng, 3, 1), A});
      ex.push_back({Eigen::Vector3d(0, 1, 0) + 0.01 * oracle::random_matrix(rng, 3, 1), B});
    }
    const auto c = nn_loo_confidence(ex);
    CHECK(c.at(A) == 1.0);
    CHECK(c.at(B) == 1.0);
  }
  SUBCASE("displaced class") {
    Rng rng(2);
    Ex ex;
    for (int i = 0; i < 4; ++i) ex.push_back({Eigen::Vector3d(1, 0, 0) + 0.05 * oracle::random_matrix(rng, 3, 1), A});
    for (int i = 0; i < 4; ++i) ex.push_back({ex[static_cast<std::size_t>(i)].first, B});  // B sits on top of A
    const auto c = nn_loo_confidence(ex);
    CHECK(c.at(B) == 0.0);
  }
  SUBCASE("random points against an exhaustive scan") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      Ex ex;
      for (int i = 0; i < 10; ++i) ex.push_back({oracle::random_matrix(rng, 4, 1), LabelId{int(rng.uniform_index(2))}});
      std::map<LabelId, std::pair<int, int>> tally;
      for (std::size_t i = 0; i < ex.size(); ++i) {
        std::size_t best = 0;
        double best_cos = -2;
        for (std::size_t j = 0; j < ex.size(); ++j) {
          if (j == i) continue;
          const double cs = oracle::cosine(oracle::to_vec(ex[i].first), oracle::to_vec(ex[j].first));
          if (cs > best_cos) best_cos = cs, best = j;
        }
        auto& t = tally[ex[i].second];
        t.second++;
        t.first += ex[best].second == ex[i].second;
      }
      const auto got = nn_loo_confidence(ex);
      for (const auto& [y, t] : tally) {
        if (t.second < 2) {
          CHECK(got.count(y) == 0);
        } else {
          CHECK(got.at(y) == double(t.first) / t.second);
        }
      }
    }
  }
  CHECK(nn_loo_confidence({{Eigen::Vector2d(1, 0), A}}).empty());
}

TEST_CASE("other-class probability") {
  AugmentedLogits z{{A, B}, Eigen::Vector3d(0.0, -1.0, -1e4)};
  CHECK(p_other(z) < 1e-30);
  AugmentedLogits one{{A}, Eigen::Vector2d(3.0, 3.0)};
  CHECK(p_other(one) == doctest::Approx(0.5).epsilon(1e-15));
  AugmentedLogits two{{A, B}, Eigen::Vector3d(1.0, 2.0, 0.0)};
  const double expected = 1.0 / (std::exp(1.0) + std::exp(2.0) + 1.0);
  CHECK(p_other(two) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(std::abs(p_other(two) - 0.0900) < 5e-5);
}

TEST_CASE("tracker CSV round trip") {
  ClassAccuracyTracker t(0.99);
  Rng rng(4);
  for (int i = 0; i < 300; ++i) t.update(LabelId{int(rng.uniform_index(5))}, rng.uniform01() < 0.7, rng.uniform01() < 0.4);
  std::stringstream ss;
  ss << "# config_hash=abc;seed=1\n";
  t.write_csv(ss);
  const auto back = ClassAccuracyTracker::read_csv(ss);
  REQUIRE(back.entries().size() == t.entries().size());
  for (const auto& [y, e] : t.entries()) {
    CHECK(back.find(y)->tuned == e.tuned);
    CHECK(back.find(y)->frozen == e.frozen);
    CHECK(back.find(y)->n_seen == e.n_seen);
  }
  std::stringstream bad("label,c_t,c_o,n_seen\n1,1.5,0.2,3\n");
  CHECK_THROWS_AS(ClassAccuracyTracker::read_csv(bad), FormatError);
  std::stringstream header("lbl,x\n");
  CHECK_THROWS_AS(ClassAccuracyTracker::read_csv(header), FormatError);
}

TEST_CASE("weighting strategy names round trip") {
  for (auto w : {WeightingStrategy::OCW, WeightingStrategy::OCW01, WeightingStrategy::AIM, WeightingStrategy::NNLOO,
                 WeightingStrategy::FrozenOnly, WeightingStrategy::TunedOnly})
    CHECK(parse_weighting_strategy(to_string(w)) == w);
  CHECK_THROWS_AS(parse_weighting_strategy("vote"), ConfigError);
}
