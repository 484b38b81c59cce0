#include <doctest.h>

#include <cmath>

#include "collapse_lab/error.hpp"
#include "collapse_lab/retrain.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace collapse_lab;

namespace {

TrainConfig full_batch(double lr, std::size_t steps) {
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.steps = steps;
  cfg.batch_size = 0;
  return cfg;
}

LinearClassifier random_classifier(CounterRng& r, std::size_t classes, std::size_t n) {
  auto clf = LinearClassifier::zeros(classes, n);
  for (Eigen::Index i = 0; i < clf.weights.size(); ++i) clf.weights.data()[i] = r.normal();
  for (Eigen::Index i = 0; i < clf.bias.size(); ++i) clf.bias(i) = r.normal();
  return clf;
}

EmbeddingDataset separable_2d() {
  return testing::make_dataset({{3, 1}, {4, -1}, {5, 0.5}, {-3, 1}, {-4, 0}, {-2.5, -2}},
                               {1, 1, 1, 0, 0, 0});
}

}  // namespace

TEST_CASE("unit weights are bit-identical to no plan") {
  const auto d = testing::random_dataset(1, 120, 5, 3);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.seed = 4;
  const auto a = train_linear(d, cfg);
  const auto b = train_linear(d, cfg, TrainingPlan::from_weights(std::vector<double>(120, 1.0)));
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);
}

TEST_CASE("full-batch GD fits separable 2D data") {
  const auto d = separable_2d();
  const auto clf = train_linear(d, full_batch(0.01, 10000));
  const auto rep = evaluate(clf, d);
  CHECK(rep.average_accuracy == 1.0);
  const std::vector<double> ones(d.size(), 1.0);
  CHECK(cross_entropy(clf, d.features(), d.class_labels(), ones).loss < 1e-2);
}

TEST_CASE("zero steps give the zero classifier") {
  const auto d = separable_2d();
  const auto one = train_linear(d, full_batch(0.01, 1));
  CHECK(one.weights.norm() > 0);
  const auto z = train_linear(d, full_batch(0.01, 0));
  CHECK(z.weights.norm() == 0.0);
  CHECK(z.bias.norm() == 0.0);
  for (auto y : z.predict(d.features())) CHECK(y == 0);
  CHECK(z.scores(d.features()).norm() == 0.0);
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.learning_rate = 0.1;
  cfg.steps = 5;
  cfg.validate();
  cfg.epochs = 2;
  cfg.batch_size = 32;
  CHECK(cfg.total_steps(100) == 8);
  cfg.batch_size = 0;
  CHECK(cfg.total_steps(100) == 2);
}

TEST_CASE("plan length mismatch") {
  const auto d = separable_2d();
  CHECK_THROWS_AS(train_linear(d, full_batch(0.1, 5), TrainingPlan::from_weights({1.0, 2.0})),
                  ValidationError);
}

TEST_CASE("divergence raises a numerical error") {
  const auto d = testing::make_dataset({{1e200, 0}, {-1e200, 0}}, {1, 0});
  CHECK_THROWS_AS(train_linear(d, full_batch(1e10, 50)), NumericalError);
}

TEST_CASE("training is deterministic given seed") {
  const auto d = testing::random_dataset(2, 90, 4, 2);
  TrainConfig cfg;
  cfg.steps = 100;
  cfg.seed = 11;
  const auto up = plan_upsampling(d, BalanceAxis::class_label);
  const auto a = train_linear(d, cfg, TrainingPlan::from(up));
  const auto b = train_linear(d, cfg, TrainingPlan::from(up));
  CHECK(a.weights == b.weights);
  cfg.seed = 12;
  CHECK(train_linear(d, cfg, TrainingPlan::from(up)).weights != a.weights);
}

TEST_CASE("weighted gradient equals the expected gradient under upsampling") {
  CounterRng r(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = testing::random_dataset(trial, 10 + r.below(30), 3, 2 + r.below(2));
    const auto clf = random_classifier(r, d.num_classes(), 3);
    const auto wt = plan_upweighting(d, BalanceAxis::class_label);
    const auto up = plan_upsampling(d, BalanceAxis::class_label);
    const auto weighted = cross_entropy(clf, d.features(), d.class_labels(), wt.values);
    RowMatrix expected = RowMatrix::Zero(clf.weights.rows(), clf.weights.cols());
    Vector expected_b = Vector::Zero(clf.bias.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::vector<std::size_t> one{i};
      const auto di = d.select(one);
      const auto g = cross_entropy(clf, di.features(), di.class_labels(), std::vector<double>{1.0});
      expected += up.values[i] * g.grad_weights;
      expected_b += up.values[i] * g.grad_bias;
    }
    CHECK((weighted.grad_weights - expected).norm() <= 1e-10);
    CHECK((weighted.grad_bias - expected_b).norm() <= 1e-10);
  }
}

TEST_CASE("full-batch loss is non-increasing at a small step") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto d = testing::random_dataset(s, 60, 4, 3);
    const std::vector<double> ones(d.size(), 1.0);
    double last = INFINITY;
    bool monotone = true;
    train_linear(d, full_batch(1e-3, 300), {}, [&](std::size_t, const LinearClassifier& c) {
      const double l = cross_entropy(c, d.features(), d.class_labels(), ones).loss;
      monotone &= l <= last + 1e-15;
      last = l;
    });
    CHECK(monotone);
  }
}

TEST_CASE("evaluate on a hand-built dataset") {
  // Decision boundary x0 = 0, class 1 on the right.
  const auto d = testing::make_dataset({{1, 0}, {2, 0}, {-1, 0}, {-1, 1}, {1, 1}, {-2, 1}},
                                       {1, 1, 1, 0, 0, 0}, {0, 0, 1, 2, 3, 2}, {1, 1, 0, 0});
  BinaryLinear b;
  b.theta = Vector::Zero(2);
  b.theta(0) = 1;
  const auto clf = from_binary(b);
  const auto rep = evaluate(clf, d);
  CHECK(*rep.group_accuracy[0] == 1.0);
  CHECK(*rep.group_accuracy[1] == 0.0);
  CHECK(*rep.group_accuracy[2] == 1.0);
  CHECK(*rep.group_accuracy[3] == 0.0);
  CHECK(rep.worst_group_accuracy == 0.0);
  CHECK(rep.average_accuracy == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  const auto o = oracle::evaluate(clf.weights, clf.bias, d);
  CHECK(rep.average_accuracy == o.aa);
}

TEST_CASE("evaluate with a perfect classifier and an empty group") {
  const auto d = testing::make_dataset({{1}, {-1}}, {1, 0}, {1, 0}, {0, 1, 1});
  BinaryLinear b;
  b.theta = Vector::Ones(1);
  const auto rep = evaluate(from_binary(b), d);
  CHECK(rep.worst_group_accuracy == 1.0);
  CHECK(rep.average_accuracy == 1.0);
  CHECK_FALSE(rep.group_accuracy[2].has_value());
  CHECK_FALSE(rep.warnings.empty());
}

TEST_CASE("evaluate matches the oracle and is scale invariant") {
  CounterRng r(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = testing::random_dataset(trial, 30 + r.below(50), 3, 2 + r.below(3), 2.0, 2);
    const auto clf = random_classifier(r, d.num_classes(), 3);
    const auto rep = evaluate(clf, d);
    const auto o = oracle::evaluate(clf.weights, clf.bias, d);
    CHECK(std::abs(rep.average_accuracy - o.aa) <= 1e-10);
    CHECK(std::abs(rep.worst_group_accuracy - o.wga) <= 1e-10);
    CHECK(rep.worst_group_accuracy <= rep.average_accuracy + 1e-15);
    const auto scaled = evaluate(clf.scaled(3.7), d);
    CHECK(scaled.group_correct == rep.group_correct);
  }
}

TEST_CASE("minimum group margins") {
  const auto d = testing::make_dataset({{2, 0}, {0.5, 0}, {-1, 0}}, {1, 1, 0});
  BinaryLinear b;
  b.theta = Vector::Zero(2);
  b.theta(0) = 1;
  const auto m = min_group_margins(b, d);
  CHECK(*m[1] == 0.5);
  CHECK(*m[0] == 1.0);
  b.theta(0) = -1;
  const auto none = min_group_margins(b, d);
  CHECK_FALSE(none[0].has_value());
  CHECK_FALSE(none[1].has_value());
  b.theta(0) = 2.5;
  b.bias = 0.25;
  const auto base = min_group_margins(BinaryLinear{b.theta / 2.5, 0.1}, d);
  const auto scaled = min_group_margins(b, d);
  for (std::size_t g = 0; g < 2; ++g) CHECK(*scaled[g] == doctest::Approx(2.5 * *base[g]).epsilon(1e-15));
}

TEST_CASE("margins match the oracle") {
  CounterRng r(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = testing::random_dataset(trial, 20 + r.below(20), 2, 2, 2.0, 2);
    BinaryLinear b{Vector::Random(2), r.normal()};
    const auto got = min_group_margins(b, d);
    const auto want = oracle::margins(b.theta, b.bias, d);
    REQUIRE(got.size() == want.size());
    for (std::size_t g = 0; g < got.size(); ++g) {
      CHECK(got[g].has_value() == want[g].has_value());
      if (got[g] && want[g]) CHECK(std::abs(*got[g] - *want[g]) <= 1e-10);
    }
  }
}

TEST_CASE("pearson") {
  const std::vector<double> x{1, 2, 3};
  CHECK(pearson(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(x, std::vector<double>{-1, -2, -3}) == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<double> y{2, 4, 7};
  CHECK(pearson(x, y) == doctest::Approx(*oracle::pearson(x, y)).epsilon(1e-14));
  CHECK(pearson(x, y) == doctest::Approx(0.99340).epsilon(1e-5));
  CHECK_THROWS_AS(pearson(x, std::vector<double>{5, 5, 5}), ValidationError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), ValidationError);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), ValidationError);
}

TEST_CASE("binary conversion is exact") {
  CounterRng r(3);
  const auto clf = random_classifier(r, 2, 4);
  const auto b = to_binary(clf);
  CHECK(b.theta == Vector(clf.weights.row(1).transpose() - clf.weights.row(0).transpose()));
  CHECK(b.bias == clf.bias(1) - clf.bias(0));
  const auto back = to_binary(from_binary(b));
  CHECK(back.theta == b.theta);
  CHECK(back.bias == b.bias);
}

TEST_CASE("checkpoint round trip") {
  CounterRng r(6);
  const auto clf = random_classifier(r, 3, 5);
  const auto dir = testing::scratch_dir("retrain_ckpt");
  save_classifier(clf, dir / "clf");
  const auto back = load_classifier(dir / "clf.json");
  CHECK(back.weights == clf.weights);
  CHECK(back.bias == clf.bias);
}

TEST_CASE("report serialization") {
  const auto d = separable_2d();
  const auto rep = evaluate(LinearClassifier::zeros(2, 2), d);
  const auto j = to_json(rep);
  CHECK(j.contains("worst_group_accuracy"));
  const auto csv = to_csv(rep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.rfind("# schema=1", 0) == 0);
}
