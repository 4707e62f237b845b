#include "support.hpp"

#include "tocoad/inference.hpp"
#include "tocoad/metrics.hpp"

#include <doctest.h>

#include <iostream>
#include <sstream>

using namespace testing;

namespace {

using Labels = std::vector<std::uint8_t>;

// Every (positive, negative) pair: 1 for a win, 1/2 for a tie.
double pair_count_oracle(const std::vector<double>& s, const Labels& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

// Random instance with both classes present; `levels` > 0 quantizes scores to force ties.
std::pair<std::vector<double>, Labels> random_instance(Rng& rng, std::size_t n, int levels) {
  std::vector<double> s(n);
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = uniform(rng, 0, 1);
    if (levels > 0) s[i] = std::floor(s[i] * levels) / levels;
    y[i] = static_cast<std::uint8_t>(bernoulli(rng, 0.3));
  }
  y[0] = 1;
  y[1] = 0;
  return {s, y};
}

ImageSample sample(int label, Mask mask) {
  ImageSample s;
  s.pixels = Image(3, mask.rows(), mask.cols(), 0.5);
  s.label = label;
  s.mask = std::move(mask);
  return s;
}

ScoreMap flat_map(Index h, Index w, Scalar value) {
  ScoreMap m;
  m.patch_scores = Plane::Constant(2, 2, value);
  m.pixel_map = Plane::Constant(h, w, value);
  m.image_score = value;
  return m;
}

}  // namespace

TEST_CASE("trivial AUROC values") {
  const std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  CHECK(auroc(s, Labels{1, 1, 0, 0}) == 1.0);
  CHECK(auroc(s, Labels{0, 0, 1, 1}) == 0.0);
  CHECK(auroc(std::vector<double>(6, 0.3), Labels{1, 0, 1, 0, 0, 1}) == 0.5);
  CHECK(auroc(std::vector<float>{0.1f, 0.4f, 0.35f, 0.8f}, Labels{0, 0, 1, 1}) == 0.75);
}

TEST_CASE("AUROC equals pair counting") {
  Rng rng(30);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    const int levels = trial % 3 == 0 ? 0 : 1 + static_cast<int>(rng() % 8);
    const auto [s, y] = random_instance(rng, n, levels);
    CHECK(std::abs(auroc(s, y) - pair_count_oracle(s, y)) < 1e-9);
  }
  const auto [s, y] = random_instance(rng, 200, 0);
  CHECK(std::abs(auroc(s, y) - pair_count_oracle(s, y)) < 1e-9);
}

TEST_CASE("AUROC is invariant under strictly increasing transforms") {
  Rng rng(31);
  const auto [s, y] = random_instance(rng, 150, 5);
  const double base = auroc(s, y);
  for (int t = 0; t < 20; ++t) {
    const double a = uniform(rng, 0.1, 5), b = uniform(rng, -3, 3), p = uniform(rng, 0.2, 3);
    std::vector<double> u(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) u[i] = t % 2 ? a * std::pow(s[i], p) + b : std::exp(a * s[i]) + b;
    CHECK(auroc(u, y) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("flipping labels complements tie-free AUROC") {
  Rng rng(32);
  for (int t = 0; t < 50; ++t) {
    auto [s, y] = random_instance(rng, 40, 0);
    Labels flipped(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = static_cast<std::uint8_t>(1 - y[i]);
    CHECK(auroc(s, y) + auroc(s, flipped) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("AUROC input errors") {
  CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, Labels{1, 1}), MetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, Labels{0, 0}), MetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{1, 2, 3}, Labels{0, 1}), MetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{1, 2}, Labels{0, 2}), MetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{}, Labels{}), MetricError);
}

TEST_CASE("category evaluation pools pixels across images") {
  DatasetSplit test;
  test.category = "toy";
  Mask defect = Mask::Zero(4, 6);
  defect.block(1, 1, 2, 2).setOnes();
  test.samples.push_back(sample(0, Mask::Zero(4, 6)));
  test.samples.push_back(sample(0, Mask::Zero(4, 6)));
  test.samples.push_back(sample(1, defect));

  std::vector<ScoreMap> maps{flat_map(4, 6, 0), flat_map(4, 6, 0), flat_map(4, 6, 0)};
  maps[2].image_score = 0.7;
  maps[2].pixel_map(1, 1) = 0.9;
  maps[2].pixel_map(0, 5) = 0.4;

  const EvalResult r = evaluate_category(test, maps);
  CHECK(r.category == "toy");
  CHECK(r.n_images == 3);
  CHECK(r.n_anomalous == 1);
  CHECK(r.image_auroc == 1.0);
  REQUIRE(r.pixel_auroc);

  std::vector<double> pooled;
  Labels labels;
  for (std::size_t i = 0; i < 3; ++i)
    for (Index k = 0; k < 24; ++k) {
      pooled.push_back(maps[i].pixel_map.data()[k]);
      labels.push_back(test.samples[i].mask->data()[k]);
    }
  CHECK(pooled.size() == 72);
  CHECK(*r.pixel_auroc == doctest::Approx(pair_count_oracle(pooled, labels)).epsilon(1e-12));

  maps.pop_back();
  CHECK_THROWS_AS(evaluate_category(test, maps), ArgumentError);
}

TEST_CASE("pixel AUROC is omitted without anomalous pixels") {
  DatasetSplit test;
  test.category = "nomask";
  test.samples.push_back(sample(0, Mask::Zero(4, 4)));
  ImageSample defect = sample(1, Mask::Zero(4, 4));
  defect.mask.reset();
  test.samples.push_back(defect);
  std::vector<ScoreMap> maps{flat_map(4, 4, 0.1), flat_map(4, 4, 0.5)};

  std::ostringstream captured;
  auto* old = std::clog.rdbuf(captured.rdbuf());
  const EvalResult r = evaluate_category(test, maps);
  std::clog.rdbuf(old);
  CHECK(r.image_auroc == 1.0);
  CHECK_FALSE(r.pixel_auroc);
  CHECK(captured.str().find("pixel AUROC omitted") != std::string::npos);
}

TEST_CASE("results csv round-trips with fixed formatting") {
  std::vector<EvalResult> rs(3);
  rs[0].category = "stripes";
  rs[0].image_auroc = 0.987654321;
  rs[0].pixel_auroc = 0.9;
  rs[1].category = "dots";
  rs[1].image_auroc = 1.0;
  rs[1].pixel_auroc = 0.912345678;
  rs[2].category = "plain";
  rs[2].image_auroc = 0.5;
  const std::string csv = results_csv(rs);
  CHECK(csv == "category,image_auroc,pixel_auroc\nstripes,0.987654,0.900000\ndots,1.000000,0.912346\nplain,0.500000,\n");
  const auto back = parse_results_csv(csv);
  REQUIRE(back.size() == 3);
  CHECK(back[0].image_auroc == 0.987654);
  CHECK(*back[1].pixel_auroc == 0.912346);
  CHECK_FALSE(back[2].pixel_auroc);
  CHECK(results_csv(back) == csv);
  CHECK_THROWS_AS(parse_results_csv("cat,img\n"), MetricError);
  CHECK_THROWS_AS(parse_results_csv("category,image_auroc,pixel_auroc\nbroken\n"), MetricError);
}

TEST_CASE("results table closes with the average row") {
  std::vector<EvalResult> rs(2);
  rs[0].category = "a";
  rs[0].image_auroc = 0.99;
  rs[0].pixel_auroc = 0.97;
  rs[1].category = "b";
  rs[1].image_auroc = 0.95;
  rs[1].pixel_auroc = 0.93;
  const std::string table = results_table(rs);
  const auto last = table.rfind("Total avg.");
  REQUIRE(last != std::string::npos);
  std::istringstream row(table.substr(last + std::string("Total avg.").size()));
  double image = 0, pixel = 0;
  row >> image >> pixel;
  CHECK(image == doctest::Approx(97.00));
  CHECK(pixel == doctest::Approx(95.00));

  rs[1].pixel_auroc.reset();
  CHECK(results_table(rs).find("Total avg.            97.00      97.00") != std::string::npos);
}
