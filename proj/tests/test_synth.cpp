#include <doctest.h>

#include <cmath>
#include <memory>

#include "collapse_lab/error.hpp"
#include "collapse_lab/linalg_ops.hpp"
#include "collapse_lab/nc1.hpp"
#include "collapse_lab/retrain.hpp"
#include "collapse_lab/rng.hpp"
#include "collapse_lab/synth.hpp"
#include "oracles.hpp"

using namespace collapse_lab;

TEST_CASE("counts match the request") {
  SpuriousSpec spec;
  spec.group_counts = {30, 4, 7, 11};
  const auto d = generate_spurious(spec);
  CHECK(d.size() == 52);
  CHECK(group_stats(d).group_counts == spec.group_counts);

  SpuriousSpec ratio;
  ratio.majority_count = 500;
  ratio.group_ratio = 0.05;
  const auto r = generate_spurious(ratio);
  CHECK(group_stats(r).group_counts == std::vector<std::size_t>{500, 25, 25, 500});
  CHECK(ratio.resolved_counts() == std::vector<std::size_t>{500, 25, 25, 500});
  CHECK(group_stats(r).class_group_ratio[0] == 0.05);
}

TEST_CASE("generation is deterministic given seed") {
  SpuriousSpec spec;
  spec.majority_count = 50;
  spec.seed = 3;
  const auto a = generate_spurious(spec);
  const auto b = generate_spurious(spec);
  CHECK(a.features() == b.features());
  CHECK(a.group_labels() == b.group_labels());
  spec.seed = 4;
  CHECK(generate_spurious(spec).features() != a.features());
  CHECK(generate_collapsed(8, 2, 5, 0.1, 1).features() == generate_collapsed(8, 2, 5, 0.1, 1).features());
}

TEST_CASE("empirical group means are close to the specified means") {
  for (std::size_t classes : {2u, 3u}) {
    SpuriousSpec spec;
    spec.dim = 16;
    spec.num_classes = classes;
    spec.majority_count = 400;
    spec.group_ratio = 0.25;
    spec.noise = 1.5;
    spec.seed = 11;
    const auto d = generate_spurious(spec);
    const auto means = spurious_group_means(spec);
    const auto counts = spec.resolved_counts();
    RowMatrix sum = RowMatrix::Zero(means.rows(), means.cols());
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = 0; j < d.dim(); ++j) sum(d.group_labels()[i], static_cast<Eigen::Index>(j)) += d.row(i)[j];
    }
    for (Eigen::Index g = 0; g < means.rows(); ++g) {
      const double c = static_cast<double>(counts[static_cast<std::size_t>(g)]);
      for (Eigen::Index j = 0; j < means.cols(); ++j) {
        CHECK(std::abs(sum(g, j) / c - means(g, j)) <= 4 * spec.noise / std::sqrt(c));
      }
    }
  }
}

TEST_CASE("binary group means follow the core and spurious axes") {
  SpuriousSpec spec;
  spec.dim = 4;
  const auto m = spurious_group_means(spec);
  // Group 0: class 0 majority (y=-1, s=-1); group 3: class 1 majority (y=+1, s=+1).
  CHECK(m(0, 0) == -1.0);
  CHECK(m(0, 1) == -3.0);
  CHECK(m(1, 0) == -1.0);
  CHECK(m(1, 1) == 3.0);
  CHECK(m(3, 0) == 1.0);
  CHECK(m(3, 1) == 3.0);
  CHECK(spec.majority_group_of(0) == 0);
  CHECK(spec.majority_group_of(1) == 3);
}

TEST_CASE("balanced testbed with equal strengths is fair along the core axis") {
  SpuriousSpec spec;
  spec.dim = 4;
  spec.core_strength = 1.0;
  spec.spurious_strength = 1.0;
  spec.majority_count = 20000;
  spec.seed = 2;
  const auto d = generate_spurious(spec);
  std::vector<double> hit(4, 0), tot(4, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto g = d.group_labels()[i];
    tot[g] += 1;
    hit[g] += (d.row(i)[0] > 0) == (d.class_labels()[i] == 1);
  }
  const double p = 0.5 * std::erfc(-1.0 / std::sqrt(2.0));  // P(N(1,1) > 0)
  for (std::size_t g = 0; g < 4; ++g) {
    CHECK(std::abs(hit[g] / tot[g] - p) <= 4 * std::sqrt(p * (1 - p) / tot[g]));
  }
}

TEST_CASE("imbalanced testbed opens a worst-group gap for plain logistic regression") {
  SpuriousSpec train;
  train.group_ratio = 0.05;
  train.seed = 1;
  SpuriousSpec test;
  test.majority_count = 1000;
  test.seed = 2;
  TrainConfig cfg;
  cfg.batch_size = 0;
  cfg.learning_rate = 0.1;
  cfg.steps = 2000;
  const auto clf = train_linear(generate_spurious(train), cfg);
  const auto rep = evaluate(clf, generate_spurious(test));
  const double majority = std::min(*rep.group_accuracy[0], *rep.group_accuracy[3]);
  const double minority = std::max(*rep.group_accuracy[1], *rep.group_accuracy[2]);
  CHECK(majority - minority >= 0.2);
}

TEST_CASE("collapsed generator") {
  const auto exact = generate_collapsed(32, 4, 10, 0.0, 0);
  CHECK(exact.size() == 40);
  CHECK(nc1_exact(exact).value == 0.0);
  CovarianceOperators ops(std::make_shared<const EmbeddingDataset>(exact));
  CounterRng r(1);
  for (int k = 0; k < 10; ++k) {
    Vector x(32);
    for (Eigen::Index i = 0; i < 32; ++i) x(i) = r.normal();
    CHECK(ops.apply_sigma_a(x).norm() == 0.0);
  }
  const auto jittered = generate_collapsed(64, 2, 50, 0.1, 5);
  const double v = nc1_exact(jittered).value;
  CHECK(v > 0.0);
  CHECK(v == doctest::Approx(oracle::nc1(jittered)).epsilon(1e-8));
  for (std::size_t i = 0; i < jittered.size(); ++i) {
    for (std::size_t j = 0; j < 64; ++j) {
      const double base = j == jittered.class_labels()[i] ? exact.row(0)[0] : 0.0;
      CHECK(std::abs(jittered.row(i)[j] - base) <= 0.1);
    }
  }
}

TEST_CASE("testbed settings validation") {
  auto bad = [](auto mutate) {
    SpuriousSpec s;
    mutate(s);
    return s;
  };
  CHECK_THROWS_AS(bad([](SpuriousSpec& s) { s.num_classes = 1; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](SpuriousSpec& s) { s.noise = 0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](SpuriousSpec& s) { s.core_strength = -1; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](SpuriousSpec& s) { s.group_ratio = 0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](SpuriousSpec& s) { s.group_counts = {1, 0, 1, 1}; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](SpuriousSpec& s) { s.group_counts = {1, 1}; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](SpuriousSpec& s) { s.dim = 1; }).validate(), ValidationError);
  CHECK_THROWS_AS(generate_collapsed(2, 3, 1, 0, 0), ValidationError);
  CHECK_THROWS_AS(generate_collapsed(4, 2, 1, -0.5, 0), ValidationError);
}
