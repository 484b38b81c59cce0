#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>

#include "collapse_lab/error.hpp"
#include "collapse_lab/nc1.hpp"
#include "collapse_lab/synth.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace collapse_lab;

TEST_CASE("exact NC1 on hand geometries") {
  const double eps = 0.1;
  SUBCASE("within-class spread orthogonal to the mean axis") {
    const auto d = testing::make_dataset({{1, eps}, {1, -eps}, {-1, eps}, {-1, -eps}}, {0, 0, 1, 1});
    CHECK(std::abs(nc1_exact(d).value) < 1e-15);
  }
  SUBCASE("within-class spread along the mean axis") {
    const auto d = testing::make_dataset({{1 + eps, 0}, {1 - eps, 0}, {-1 + eps, 0}, {-1 - eps, 0}},
                                         {0, 0, 1, 1});
    const auto r = nc1_exact(d);
    CHECK(r.value == doctest::Approx(eps * eps / 2).epsilon(1e-12));
    CHECK(r.value == doctest::Approx(oracle::nc1(d)).epsilon(1e-12));
    CHECK(r.mode == "exact");
  }
  SUBCASE("collapsed features") {
    CHECK(nc1_exact(generate_collapsed(16, 4, 10, 0.0, 3)).value == 0.0);
  }
  SUBCASE("coincident class means") {
    const auto d = testing::make_dataset({{1, 0}, {-1, 0}, {1, 0}, {-1, 0}}, {0, 0, 1, 1});
    const auto r = nc1_exact(d);
    CHECK(r.value == 0.0);
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("dimension over the dense limit") {
    CHECK_THROWS_AS(nc1_exact(testing::random_dataset(1, 10, 8, 2), 4), ValidationError);
  }
}

TEST_CASE("exact NC1 matches the oracle on random data") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto d = testing::random_dataset(s, 80 + 10 * s, 3 + s, 2 + s % 3);
    CHECK(nc1_exact(d).value == doctest::Approx(oracle::nc1(d)).epsilon(1e-8));
  }
}

TEST_CASE("hutchinson on the identity operator has zero variance") {
  const auto id = [](const Matrix& m) { return m; };
  const auto s = hutchinson_samples(37, id, 25, ProbeDistribution::rademacher, 4);
  CHECK(s.size() == 25);
  for (double v : s) CHECK(v == 37.0);
}

TEST_CASE("hutchinson report invariants") {
  const auto d = testing::random_dataset(5, 300, 20, 3);
  HutchinsonOptions o;
  o.probes = 17;
  o.seed = 9;
  const auto r = nc1_hutchinson(d, o);
  CHECK(r.samples.size() == 17);
  CHECK(r.probes == 17);
  CHECK(r.mode == "hutchinson");
  CHECK(r.std_error >= 0.0);
  CHECK(r.value == std::accumulate(r.samples.begin(), r.samples.end(), 0.0) / 17.0 / 3.0);
  CHECK(r.all_converged());

  o.probes = 0;
  CHECK_THROWS_AS(nc1_hutchinson(d, o), ValidationError);
}

TEST_CASE("hutchinson is deterministic and mode independent") {
  auto d = std::make_shared<const EmbeddingDataset>(testing::random_dataset(6, 250, 24, 4));
  HutchinsonOptions o;
  o.probes = 12;
  o.seed = 77;
  CovarianceOperators ops(d);
  const auto block = nc1_hutchinson(ops, o);
  CHECK(nc1_hutchinson(ops, o).samples == block.samples);
  o.block = false;
  const auto seq = nc1_hutchinson(ops, o);
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(seq.samples[j] == doctest::Approx(block.samples[j]).epsilon(1e-12));
  }
  o.block = true;
  o.distribution = ProbeDistribution::gaussian;
  const auto g = nc1_hutchinson(ops, o);
  CHECK(g.samples != block.samples);
  CHECK(parse_probe_distribution(to_string(ProbeDistribution::gaussian)) == ProbeDistribution::gaussian);
  CHECK_THROWS_AS(parse_probe_distribution("uniform"), ValidationError);
}

TEST_CASE("collapsed data gives zero samples") {
  const auto d = generate_collapsed(32, 3, 20, 0.0, 1);
  const auto r = nc1_hutchinson(d, {});
  for (double s : r.samples) CHECK(std::abs(s) < 1e-12);
  CHECK(r.value == 0.0);
}

TEST_CASE("hutchinson mean is within three standard errors most of the time") {
  int inside = 0;
  const auto d = testing::random_dataset(8, 200, 32, 3, 1.5);
  const double exact = nc1_exact(d).value;
  auto ops = CovarianceOperators(std::make_shared<const EmbeddingDataset>(d));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    HutchinsonOptions o;
    o.probes = 1000;
    o.seed = seed;
    const auto r = nc1_hutchinson(ops, o);
    inside += std::abs(r.value - exact) <= 3 * r.std_error;
  }
  CHECK(inside >= 19);
}

TEST_CASE("standard error shrinks like one over root K") {
  const auto d = testing::random_dataset(10, 200, 24, 3, 1.5);
  auto ops = CovarianceOperators(std::make_shared<const EmbeddingDataset>(d));
  const std::vector<std::size_t> ks{10, 30, 100, 300, 1000};
  std::vector<double> lx, ly;
  for (auto k : ks) {
    double se = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      HutchinsonOptions o;
      o.probes = k;
      o.seed = seed;
      se += nc1_hutchinson(ops, o).std_error;
    }
    lx.push_back(std::log(static_cast<double>(k)));
    ly.push_back(std::log(se / 8));
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / 5;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / 5;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  CHECK(sxy / sxx == doctest::Approx(-0.5).epsilon(0.2));
}

TEST_CASE("relative sample variance falls with the feature dimension") {
  // Matched geometry: orthogonal class means with one class per 8 dimensions.
  auto rel_var = [](std::size_t n) {
    const auto d = generate_collapsed(n, n / 8, 10, 0.5, 3);
    HutchinsonOptions o;
    o.probes = 200;
    const auto r = nc1_hutchinson(d, o);
    const double tr = nc1_exact(d).value * static_cast<double>(d.num_classes());
    double ss = 0;
    for (double s : r.samples) ss += (s / tr - 1) * (s / tr - 1);
    return ss / static_cast<double>(r.samples.size() - 1);
  };
  CHECK(rel_var(512) < rel_var(64));
}

TEST_CASE("exact NC1 invariances") {
  const auto d = testing::random_dataset(12, 120, 6, 3);
  const double base = nc1_exact(d).value;
  for (double c : {0.5, 2.0, 10.0}) {
    CHECK(nc1_exact(d.scaled(c)).value == doctest::Approx(base).epsilon(1e-8));
  }
  Eigen::HouseholderQR<Matrix> qr(Matrix::Random(6, 6));
  const Matrix q = qr.householderQ();
  const RowMatrix rotated = d.features() * q;
  const EmbeddingDataset rd(rotated, d.class_labels(), d.group_labels(), d.group_to_class(), 3);
  CHECK(nc1_exact(rd).value == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("memory table") {
  const auto a = memory_requirements(100352);
  CHECK(a.exact_gib == "150.06 GiB");
  CHECK(a.streaming_mib == "2.297 MiB");
  const auto b = memory_requirements(168960);
  CHECK(b.exact_gib == "425.4 GiB");
  CHECK(b.streaming_mib == "3.867 MiB");
  const auto c = memory_requirements(98304);
  CHECK(c.exact_gib == "144 GiB");
  CHECK(c.streaming_mib == "2.25 MiB");
  for (std::uint64_t n : {3u, 100u, 98304u, 168960u}) {
    const auto e = memory_requirements(n);
    CHECK(e.exact_bytes == 16 * n * n);
    CHECK(e.streaming_bytes == 24 * n);
    CHECK(static_cast<double>(e.exact_bytes) / static_cast<double>(e.streaming_bytes) ==
          doctest::Approx(static_cast<double>(n) / 1.5).epsilon(1e-15));
  }
  CHECK_THROWS_AS(memory_requirements(0), ValidationError);
}

TEST_CASE("compact formatting") {
  CHECK(format_compact(144.0) == "144");
  CHECK(format_compact(2.25) == "2.25");
  CHECK(format_compact(0.5) == "0.5");
}
