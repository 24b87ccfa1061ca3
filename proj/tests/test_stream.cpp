#include <doctest.h>

#include <algorithm>
#include <set>

#include "acl/errors.hpp"
#include "acl/stream.hpp"
#include "fixtures.hpp"

using namespace acl;

namespace {

// Tiny dataset whose samples carry nothing but labels and a split.
Dataset label_only(int classes, int per_class) {
  Dataset ds;
  ds.table = LabelEmbeddingTable(2);
  for (int c = 0; c < classes; ++c) {
    ds.table.insert(LabelId{c}, Embedding(Eigen::Vector2f(1.0f, float(c))));
    for (int i = 0; i < per_class; ++i)
      ds.samples.push_back({LabelId{c}, Split::Train, TokenMatrix(Eigen::MatrixXf::Ones(2, 2))});
  }
  return ds;
}

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.num_classes = 6;
  s.samples_per_class = 12;
  s.test_samples_per_class = 8;
  s.dim = 16;
  s.num_tokens = 4;
  s.sigma = 0.2;
  s.seed = seed;
  return s;
}

EngineConfig small_engine(WeightingStrategy w) {
  EngineConfig e;
  e.weighting = w;
  e.sampler.batch_size = 8;
  e.seed = 3;
  return e;
}

EvalSuite test_suite(const Dataset& ds, std::string name, const LabelSet& classes, const LabelSet& candidates) {
  EvalSuite s{std::move(name), {}, candidates};
  for (std::size_t i : ds.indices(Split::Test))
    if (classes.count(ds.samples[i].label)) s.samples.push_back(i);
  return s;
}

LabelSet all_labels(const Dataset& ds) {
  LabelSet out;
  for (const auto& [id, t] : ds.task_of) out.insert(id);
  if (out.empty())
    for (const auto& s : ds.samples) out.insert(s.label);
  return out;
}

std::vector<std::size_t> sizes(const std::vector<StreamStage>& st) {
  std::vector<std::size_t> out;
  for (const auto& s : st) out.push_back(s.samples.size());
  return out;
}

}  // namespace

// ---- stream construction --------------------------------------------------

TEST_CASE("data-incremental stages follow the cumulative fraction schedule") {
  const Dataset ds = label_only(4, 25);
  const auto stream = build_stream(ds, Protocol::DataIncremental, {}, 0);
  CHECK(sizes(stream) == std::vector<std::size_t>{2, 2, 4, 8, 16, 32, 36});
  std::set<std::size_t> seen;
  for (const auto& st : stream) seen.insert(st.samples.begin(), st.samples.end());
  CHECK(seen.size() == 100);
  for (std::size_t i = 0; i < stream.size(); ++i) CHECK(stream[i].index == int(i) + 1);
}

TEST_CASE("class-incremental stages hold sorted class groups") {
  const Dataset ds = label_only(10, 3);
  const auto stream = build_stream(ds, Protocol::ClassIncremental, {}, 1);
  REQUIRE(stream.size() == 5);
  for (std::size_t g = 0; g < 5; ++g) {
    std::set<std::int32_t> labels;
    for (std::size_t i : stream[g].samples) labels.insert(ds.samples[i].label.value);
    CHECK(labels == std::set<std::int32_t>{int(2 * g), int(2 * g + 1)});
    CHECK(stream[g].samples.size() == 6);
  }
}

TEST_CASE("uneven class groups put the extra classes first") {
  const Dataset ds = label_only(7, 1);
  StreamConfig cfg;
  cfg.class_groups = 3;
  CHECK(sizes(build_stream(ds, Protocol::ClassIncremental, cfg, 0)) == std::vector<std::size_t>{3, 2, 2});
}

TEST_CASE("task-incremental stages follow the task partition") {
  SyntheticSpec spec = small_spec(2);
  spec.num_tasks = 3;
  const Dataset ds = generate(spec);
  const auto stream = build_stream(ds, Protocol::TaskIncremental, {}, 0);
  REQUIRE(stream.size() == 3);
  for (std::int32_t t = 0; t < 3; ++t)
    for (std::size_t i : stream[std::size_t(t)].samples) CHECK(ds.task_of.at(ds.samples[i].label) == t);
  CHECK_THROWS_AS(build_stream(label_only(2, 2), Protocol::TaskIncremental, {}, 0), ConfigError);
}

TEST_CASE("streams drop excluded labels and test samples") {
  const Dataset ds = generate(small_spec(3));
  StreamConfig cfg;
  cfg.train_labels = {LabelId{0}, LabelId{1}};
  for (Protocol p : {Protocol::DataIncremental, Protocol::ClassIncremental, Protocol::UnionDataIncremental})
    for (const auto& st : build_stream(ds, p, cfg, 0))
      for (std::size_t i : st.samples) {
        CHECK(ds.samples[i].split == Split::Train);
        CHECK(cfg.train_labels.count(ds.samples[i].label) == 1);
      }
}

TEST_CASE("stream order is a function of the seed") {
  const Dataset ds = label_only(5, 20);
  for (Protocol p : {Protocol::DataIncremental, Protocol::ClassIncremental}) {
    const auto a = build_stream(ds, p, {}, 9);
    const auto b = build_stream(ds, p, {}, 9);
    const auto c = build_stream(ds, p, {}, 10);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].samples == b[i].samples);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].samples != c[i].samples;
    CHECK(differs);
  }
}

TEST_CASE("bad fraction schedules are configuration errors") {
  const Dataset ds = label_only(2, 5);
  for (std::vector<int> f : std::vector<std::vector<int>>{{}, {50, 40, 100}, {10, 10, 100}, {10, 90}, {0, 100}}) {
    StreamConfig cfg;
    cfg.fractions_percent = f;
    CHECK_THROWS_AS(build_stream(ds, Protocol::DataIncremental, cfg, 0), ConfigError);
  }
  StreamConfig cfg;
  cfg.class_groups = 0;
  CHECK_THROWS_AS(build_stream(ds, Protocol::ClassIncremental, cfg, 0), ConfigError);
  CHECK_THROWS_AS(parse_protocol("bogus"), ConfigError);
  for (Protocol p : {Protocol::DataIncremental, Protocol::ClassIncremental, Protocol::TaskIncremental,
                     Protocol::UnionDataIncremental})
    CHECK(parse_protocol(to_string(p)) == p);
}

// ---- running a stream -----------------------------------------------------

TEST_CASE("an empty stream only evaluates stage zero") {
  const Dataset ds = generate(small_spec(4));
  const auto suites = std::vector<EvalSuite>{test_suite(ds, "all", all_labels(ds), all_labels(ds))};
  const MetricsRecord rec = run_stream(ds, {}, suites, small_engine(WeightingStrategy::OCW));
  CHECK(rec.num_stages() == 1);
  CHECK(rec.rows.size() == 1);
}

TEST_CASE("reported accuracy matches a direct count of the predictions") {
  const Dataset ds = generate(small_spec(5));
  const auto stream = build_stream(ds, Protocol::ClassIncremental, {}, 5);
  const auto suites = std::vector<EvalSuite>{test_suite(ds, "all", all_labels(ds), all_labels(ds)),
                                             test_suite(ds, "early", {LabelId{0}, LabelId{1}}, all_labels(ds))};
  const MetricsRecord rec = run_stream(ds, stream, suites, small_engine(WeightingStrategy::OCW));
  CHECK(rec.num_stages() == int(stream.size()) + 1);
  for (const auto& row : rec.rows) {
    const auto& suite = row.suite == "all" ? suites[0] : suites[1];
    REQUIRE(row.predictions.size() == suite.samples.size());
    std::size_t hits = 0;
    for (std::size_t k = 0; k < suite.samples.size(); ++k)
      hits += row.predictions[k] == ds.samples[suite.samples[k]].label;
    CHECK(row.accuracy == double(hits) / double(suite.samples.size()));
  }
  CHECK_THROWS_AS(rec.accuracy(99, "all"), LookupError);
}

TEST_CASE("frozen-only runs report the same accuracy at every stage") {
  const Dataset ds = generate(small_spec(6));
  const auto stream = build_stream(ds, Protocol::DataIncremental, {}, 6);
  const auto suites = std::vector<EvalSuite>{test_suite(ds, "all", all_labels(ds), all_labels(ds))};
  const MetricsRecord rec = run_stream(ds, stream, suites, small_engine(WeightingStrategy::FrozenOnly));
  for (int s = 1; s < rec.num_stages(); ++s) CHECK(rec.accuracy(s, "all") == rec.accuracy(0, "all"));
}

TEST_CASE("running the same stream twice gives identical records") {
  const Dataset ds = generate(small_spec(7));
  const auto stream = build_stream(ds, Protocol::ClassIncremental, {}, 7);
  const auto suites = std::vector<EvalSuite>{test_suite(ds, "all", all_labels(ds), all_labels(ds))};
  const auto a = run_stream(ds, stream, suites, small_engine(WeightingStrategy::OCW));
  const auto b = run_stream(ds, stream, suites, small_engine(WeightingStrategy::OCW));
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].accuracy == b.rows[i].accuracy);
    CHECK(a.rows[i].predictions == b.rows[i].predictions);
  }
}

TEST_CASE("training on the target classes does not hurt them") {
  SyntheticSpec spec = small_spec(8);
  spec.domain_shift = 1.0;
  const Dataset ds = generate(spec);
  const auto stream = build_stream(ds, Protocol::DataIncremental, {}, 8);
  const auto suites = std::vector<EvalSuite>{test_suite(ds, "all", all_labels(ds), all_labels(ds))};
  const auto rec = run_stream(ds, stream, suites, small_engine(WeightingStrategy::OCW));
  CHECK(rec.accuracy(rec.num_stages() - 1, "all") >= rec.accuracy(0, "all"));
}

TEST_CASE("combined predictions on never-trained labels equal the frozen model's") {
  SyntheticSpec spec = small_spec(9);
  spec.num_tasks = 3;
  spec.domain_shift = 0.8;
  const Dataset ds = generate(spec);
  const LabelSet unseen{LabelId{4}, LabelId{5}};
  StreamConfig cfg;
  for (const auto& [id, t] : ds.task_of)
    if (!unseen.count(id)) cfg.train_labels.insert(id);
  const auto stream = build_stream(ds, Protocol::TaskIncremental, cfg, 9);
  const EvalSuite novel = test_suite(ds, "novel", unseen, unseen);
  int stages = 0;
  run_stream(ds, stream, {novel}, small_engine(WeightingStrategy::OCW), [&](int, const AnytimeEngine& engine) {
    ++stages;
    for (std::size_t i : novel.samples) {
      const TokenMatrix t = materialize(ds.samples[i].payload);
      REQUIRE(engine.predict(t, unseen) == engine.predict_frozen(t, unseen));
    }
  });
  CHECK(stages == 4);
}

// ---- MTIL -----------------------------------------------------------------

TEST_CASE("MTIL metrics of a 2x2 matrix expand by definition") {
  Eigen::MatrixXd m(2, 2);
  const double a = 0.7, z = 0.4, b = 0.65, c = 0.9;
  m << a, z, b, c;
  const MtilMetrics r = mtil_metrics(m);
  CHECK(r.transfer == doctest::Approx(z));
  CHECK(r.last == doctest::Approx((b + c) / 2));
  CHECK(r.avg == doctest::Approx(((a + b) / 2 + (z + c) / 2) / 2));
  CHECK(r.avg_grand_mean == doctest::Approx((a + b + c + z) / 4));
}

TEST_CASE("a constant accuracy matrix yields that constant everywhere") {
  const MtilMetrics r = mtil_metrics(Eigen::MatrixXd::Constant(4, 4, 0.625));
  CHECK(r.transfer == doctest::Approx(0.625));
  CHECK(r.avg == doctest::Approx(0.625));
  CHECK(r.last == doctest::Approx(0.625));
  CHECK(r.transfer_grand_mean == doctest::Approx(0.625));
}

TEST_CASE("the published MTIL table reproduces its margins") {
  const MtilMetrics r = mtil_metrics(fixture::mtil_order_one());
  CHECK(std::abs(r.transfer - fixture::kMtilTransfer) <= 0.05);
  CHECK(std::abs(r.avg - fixture::kMtilAvg) <= 0.05);
  CHECK(std::abs(r.last - fixture::kMtilLast) <= 0.05);
}

TEST_CASE("MTIL metrics need a square matrix") {
  CHECK_THROWS_AS(mtil_metrics(Eigen::MatrixXd::Zero(2, 3)), ArgumentError);
  CHECK_THROWS_AS(mtil_metrics(Eigen::MatrixXd(0, 0)), ArgumentError);
  const MtilMetrics one = mtil_metrics(Eigen::MatrixXd::Constant(1, 1, 0.5));
  CHECK(one.last == 0.5);
  CHECK(one.transfer == 0.0);
}
