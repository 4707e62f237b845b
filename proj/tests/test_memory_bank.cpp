#include "support.hpp"

#include "tocoad/config.hpp"
#include "tocoad/fixture.hpp"
#include "tocoad/inference.hpp"

#include <doctest.h>

#include <fstream>
#include <limits>

using namespace testing;

namespace {

using Points = RowMatrix<Scalar>;

Points random_points(Index n, Index d, Rng& rng) {
  Points p(n, d);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = uniform(rng, -1, 1);
  return p;
}

// Textbook greedy: explicit double loop, Euclidean distances, first maximum wins.
std::vector<Index> greedy_oracle(const Points& p, Index k, Index start) {
  std::vector<Index> chosen{start};
  while (static_cast<Index>(chosen.size()) < k) {
    Index best = -1;
    Scalar best_d = -1;
    for (Index i = 0; i < p.rows(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      Scalar nearest = std::numeric_limits<Scalar>::infinity();
      for (Index c : chosen) {
        Scalar s = 0;
        for (Index j = 0; j < p.cols(); ++j) s += (p(i, j) - p(c, j)) * (p(i, j) - p(c, j));
        nearest = std::min(nearest, std::sqrt(s));
      }
      if (nearest > best_d) {
        best_d = nearest;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

Scalar optimal_radius(const Points& p, Index k) {
  const Index n = p.rows();
  Scalar best = std::numeric_limits<Scalar>::infinity();
  std::vector<Index> subset(static_cast<std::size_t>(k));
  std::function<void(Index, Index)> recurse = [&](Index from, Index depth) {
    if (depth == k) {
      best = std::min(best, covering_radius(p, subset));
      return;
    }
    for (Index i = from; i < n; ++i) {
      subset[static_cast<std::size_t>(depth)] = i;
      recurse(i + 1, depth + 1);
    }
  };
  recurse(0, 0);
  return best;
}

Scalar score_oracle(const Points& bank, const Eigen::RowVectorXd& p, Index b) {
  std::vector<Scalar> d;
  for (Index r = 0; r < bank.rows(); ++r) d.push_back((bank.row(r) - p).norm());
  const Index star = std::min_element(d.begin(), d.end()) - d.begin();
  std::vector<std::pair<Scalar, Index>> from_star;
  for (Index r = 0; r < bank.rows(); ++r) from_star.push_back({r == star ? -1.0 : (bank.row(r) - bank.row(star)).norm(), r});
  std::sort(from_star.begin(), from_star.end());
  Scalar denom = 0;
  for (Index j = 0; j < b; ++j) denom += std::exp(d[static_cast<std::size_t>(from_star[static_cast<std::size_t>(j)].second)]);
  const Scalar s = d[static_cast<std::size_t>(star)];
  return (1 - std::exp(s) / denom) * s;
}

bool is_row_of(const auto& row, const Points& set) {
  for (Index r = 0; r < set.rows(); ++r)
    if ((set.row(r).template cast<typename std::decay_t<decltype(row)>::Scalar>() - row).cwiseAbs().maxCoeff() == 0) return true;
  return false;
}

}  // namespace

TEST_CASE("coreset size") {
  CHECK(coreset_size(100, 0.1) == 10);
  CHECK(coreset_size(101, 0.1) == 11);
  CHECK(coreset_size(20, 0.25) == 5);
  CHECK(coreset_size(3, 0.01) == 1);
  CHECK(coreset_size(7, 1.0) == 7);
  CHECK_THROWS_AS(coreset_size(10, 0), ArgumentError);
  CHECK_THROWS_AS(coreset_size(10, 1.5), ArgumentError);
}

TEST_CASE("greedy k-center matches the brute-force greedy sequence") {
  Rng rng(11);
  SUBCASE("20 planar points, ratio 0.25") {
    const Points p = random_points(20, 2, rng);
    const Index k = coreset_size(20, 0.25);
    for (Index start : {0, 7, 19}) CHECK(greedy_k_center(p, k, start) == greedy_oracle(p, k, start));
  }
  SUBCASE("random instances") {
    for (int trial = 0; trial < 50; ++trial) {
      const Index n = 1 + static_cast<Index>(rng() % 20);
      const Points p = random_points(n, 1 + static_cast<Index>(rng() % 5), rng);
      const Index k = 1 + static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
      const Index start = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
      CHECK(greedy_k_center(p, k, start) == greedy_oracle(p, k, start));
    }
  }
}

TEST_CASE("greedy radius is within twice the optimum") {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const Index n = 5 + static_cast<Index>(rng() % 8);
    const Index k = 1 + static_cast<Index>(rng() % 4);
    const Points p = random_points(n, 2, rng);
    const Scalar greedy = covering_radius(p, greedy_k_center(p, k, static_cast<Index>(rng() % static_cast<std::uint64_t>(n))));
    CHECK(greedy <= 2 * optimal_radius(p, k) + 1e-12);
  }
}

TEST_CASE("greedy preconditions") {
  const Points p = Points::Zero(4, 2);
  CHECK_THROWS_AS(greedy_k_center(p, 0, 0), ArgumentError);
  CHECK_THROWS_AS(greedy_k_center(p, 5, 0), ArgumentError);
  CHECK_THROWS_AS(greedy_k_center(p, 2, 4), ArgumentError);
  CHECK_THROWS_AS(greedy_k_center(Points(0, 2), 1, 0), ArgumentError);
}

TEST_CASE("bank construction edge cases and membership") {
  Rng rng(13);
  const Points p = random_points(30, 4, rng);
  const auto full = build_bank<Scalar>(p, 1.0, 5, 3);
  CHECK(full.size() == 30);
  std::vector<int> seen(30, 0);
  for (Index r = 0; r < full.size(); ++r)
    for (Index i = 0; i < 30; ++i)
      if ((full.coreset().row(r) - p.row(i)).cwiseAbs().maxCoeff() == 0) ++seen[static_cast<std::size_t>(i)];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));

  const Points one = random_points(1, 4, rng);
  const auto single = build_bank<Scalar>(one, 0.1, 0, 9);
  CHECK(single.size() == 1);
  CHECK(single.coreset().row(0) == one.row(0));
  CHECK(single.neighbor_count() == 1);

  const auto sub = build_bank<Scalar>(p, 0.2, 5, 3);
  CHECK(sub.size() == 6);
  CHECK(sub.full_size() == 30);
  for (Index r = 0; r < sub.size(); ++r) CHECK(is_row_of(sub.coreset().row(r), p));
  CHECK(sub.coreset().row(0) == p.row(sub.start_index()));

  CHECK_THROWS_AS(build_bank<Scalar>(Points(0, 4), 0.1, 0, 9), ArgumentError);
}

TEST_CASE("bank construction is seeded") {
  Rng rng(14);
  const Points p = random_points(200, 8, rng);
  const auto a = build_bank<Scalar>(p, 0.1, 42, 9), b = build_bank<Scalar>(p, 0.1, 42, 9);
  CHECK(a.start_index() == b.start_index());
  CHECK((a.coreset().array() == b.coreset().array()).all());
  bool differs = false;
  for (std::uint64_t s = 0; s < 8 && !differs; ++s) differs = build_bank<Scalar>(p, 0.1, s, 9).start_index() != a.start_index();
  CHECK(differs);
}

TEST_CASE("neighbor lists start with the row itself") {
  Rng rng(15);
  const MemoryBank<Scalar> bank(random_points(25, 3, rng), 25, 1.0, 5, "x");
  for (Index r = 0; r < bank.size(); ++r) {
    const auto nb = bank.neighbors(r, 5);
    REQUIRE(nb.size() == 5);
    CHECK(nb.front() == r);
    for (std::size_t j = 2; j < nb.size(); ++j)
      CHECK((bank.coreset().row(nb[j - 1]) - bank.coreset().row(r)).norm() <= (bank.coreset().row(nb[j]) - bank.coreset().row(r)).norm());
  }
  const auto five = bank.neighbors(3, 5);
  CHECK(bank.neighbors(3, 2) == std::vector<Index>(five.begin(), five.begin() + 2));
  CHECK_THROWS_AS(bank.neighbors(0, 26), ArgumentError);
}

TEST_CASE("two-point scoring example") {
  Points c(2, 2);
  c << 0, 0, 10, 0;
  const MemoryBank<Scalar> bank(c, 2, 1.0, 2, "x");
  Eigen::RowVector2d p(1, 0);
  const auto s = score_patch(p, bank, 2);
  const Scalar e = std::exp(1.0);
  CHECK(s.nearest_distance == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.nearest == 0);
  CHECK(std::abs(s.score - (1 - e / (e + std::exp(9.0)))) < 1e-12);
  CHECK(std::abs(s.score - 0.99966) < 1e-5);
}

TEST_CASE("scoring matches a direct evaluation on random banks") {
  Rng rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 3 + static_cast<Index>(rng() % 15);
    const Points c = random_points(n, 4, rng);
    const Index b = 2 + static_cast<Index>(rng() % static_cast<std::uint64_t>(n - 1));
    const MemoryBank<Scalar> bank(c, n, 1.0, b, "x");
    const Eigen::RowVectorXd p = random_points(1, 4, rng).row(0) * 1.5;
    CHECK(std::abs(score_patch(p, bank, b).score - score_oracle(c, p, b)) < 1e-12);
  }
}

TEST_CASE("scores of bank members vanish and b = 1 collapses everything") {
  Rng rng(17);
  const Points c = random_points(12, 3, rng);
  const MemoryBank<Scalar> bank(c, 12, 1.0, 9, "x");
  for (Index r = 0; r < 12; ++r) CHECK(score_patch(c.row(r), bank, 9).score == 0);
  for (int t = 0; t < 20; ++t) {
    const Eigen::RowVectorXd p = random_points(1, 3, rng).row(0) * 3;
    CHECK(score_patch(p, bank, 1).score == 0);
    CHECK(score_patch(p, bank, 9).score >= 0);
  }
  CHECK_THROWS_AS(ScoringConfig{1}.validate(12), ConfigError);
  CHECK_THROWS_AS(ScoringConfig{13}.validate(12), ConfigError);
  CHECK_NOTHROW(ScoringConfig{9}.validate(12));

  RunConfig cfg;
  cfg.categories = {"a"};
  cfg.scoring.b = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK_THROWS_AS(score_patch(Eigen::RowVector2d(0, 0), bank, 9), ArgumentError);
}

TEST_CASE("scores are invariant under bank row order") {
  Rng rng(18);
  const Points c = random_points(15, 5, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(15);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 15, rng);
  const Points shuffled = perm * c;
  const MemoryBank<Scalar> a(c, 15, 1.0, 4, "x"), b(shuffled, 15, 1.0, 4, "x");
  for (int t = 0; t < 30; ++t) {
    const Eigen::RowVectorXd p = random_points(1, 5, rng).row(0);
    CHECK(score_patch(p, a, 4).score == doctest::Approx(score_patch(p, b, 4).score).epsilon(1e-12));
  }
}

TEST_CASE("nearest distance grows as a patch moves away from a single cluster") {
  Rng rng(19);
  const Points c = random_points(10, 3, rng) * 0.1;
  const MemoryBank<Scalar> bank(c, 10, 1.0, 3, "x");
  const Eigen::RowVector3d centre = c.colwise().mean();
  const Eigen::RowVector3d dir = Eigen::RowVector3d(0.3, -0.8, 0.5).normalized();
  Scalar previous = 0;
  for (int step = 1; step <= 30; ++step) {
    const Scalar d = score_patch(centre + step * 0.2 * dir, bank, 3).nearest_distance;
    CHECK(d >= previous);
    previous = d;
  }
}

TEST_CASE("large distances stay finite") {
  Points c(3, 1);
  c << 0, 1, 2;
  const MemoryBank<Scalar> bank(c, 3, 1.0, 3, "x");
  Eigen::Matrix<Scalar, 1, 1> far;
  far << 5000;
  const auto s = score_patch(far, bank, 3);
  CHECK(std::isfinite(s.score));
  CHECK(s.score > 0);
  CHECK(s.score <= s.nearest_distance);
}

TEST_CASE("float and double banks agree") {
  Rng rng(20);
  const Points c = random_points(40, 6, rng);
  const auto bd = build_bank<Scalar>(c, 0.5, 3, 5);
  const auto bf = build_bank<float>(RowMatrix<float>(c.cast<float>()), 0.5, 3, 5);
  REQUIRE(bd.size() == bf.size());
  CHECK((bd.coreset().cast<float>().array() == bf.coreset().array()).all());
  const Eigen::RowVectorXd p = random_points(1, 6, rng).row(0);
  CHECK(score_patch(p, bd, 5).score == doctest::Approx(score_patch(p, bf, 5).score).epsilon(1e-5));
}

TEST_CASE("bank files round-trip and reject foreign data") {
  const auto dir = scratch("bank_io");
  Rng rng(21);
  const RowMatrix<float> c = random_points(17, 5, rng).cast<float>();
  const MemoryBank<float> bank(c, 170, 0.1, 4, "0123456789abcdef", 33);
  bank.save(dir / "bank.bin");
  const auto back = MemoryBank<float>::load(dir / "bank.bin");
  CHECK((back.coreset().array() == bank.coreset().array()).all());
  CHECK(back.full_size() == 170);
  CHECK(back.ratio() == 0.1);
  CHECK(back.neighbor_count() == 4);
  CHECK(back.start_index() == 33);
  CHECK(back.extractor_hash() == "0123456789abcdef");
  CHECK(std::filesystem::file_size(dir / "bank.bin") == 8 + 4 + 4 + 8 + 8 + 8 + 4 + 4 + 8 + 16 + 17 * 5 * 4);

  std::ofstream(dir / "junk.bin", std::ios::binary) << "NOTABANK and some more bytes";
  CHECK_THROWS_AS(MemoryBank<float>::load(dir / "junk.bin"), IntegrityError);
  std::filesystem::resize_file(dir / "bank.bin", 100);
  CHECK_THROWS_AS(MemoryBank<float>::load(dir / "bank.bin"), IntegrityError);
  CHECK_THROWS_AS(MemoryBank<float>::load(dir / "absent.bin"), IntegrityError);
}

TEST_CASE("patches that are all in the bank score zero everywhere") {
  Rng rng(22);
  PatchFeatureSet patches;
  patches.grid_h = 4;
  patches.grid_w = 5;
  patches.features = random_points(20, 6, rng);
  const Bank bank(patches.features.cast<float>(), 20, 1.0, 9, "x");
  const ScoreMap map = score_patches(patches, bank, ScoringConfig{}, 40, 50);
  CHECK(map.patch_scores.rows() == 4);
  CHECK(map.patch_scores.cols() == 5);
  CHECK(map.pixel_map.rows() == 40);
  CHECK(map.pixel_map.cols() == 50);
  CHECK(map.image_score == 0);
  CHECK(map.pixel_map.abs().maxCoeff() == 0);
  CHECK_THROWS_AS(score_patches(patches, bank, ScoringConfig{21}, 40, 50), ConfigError);
}

TEST_CASE("image score is the largest patch score before smoothing") {
  Rng rng(23);
  PatchFeatureSet patches;
  patches.grid_h = patches.grid_w = 6;
  patches.features = random_points(36, 4, rng);
  const Bank bank(random_points(30, 4, rng).cast<float>(), 30, 1.0, 9, "x");
  const ScoreMap map = score_patches(patches, bank, ScoringConfig{9, 2}, 48, 48);
  CHECK(map.image_score == map.patch_scores.maxCoeff());
  CHECK(map.pixel_map.maxCoeff() <= map.image_score + 1e-12);
  CHECK((map.patch_scores >= 0).all());
}

TEST_CASE("desk fixture: the heat maximum falls on the planted defect") {
  RunConfig cfg = RunConfig::load(source_dir() / "configs" / "desk.ini");
  const auto root = source_dir() / cfg.dataset_root;
  const DatasetSplit train = preprocess(load_category(root, "stripes", SplitKind::train), cfg.resize, cfg.crop);
  const DatasetSplit test = preprocess(load_category(root, "stripes", SplitKind::test), cfg.resize, cfg.crop);
  const Backbone bb(cfg.backbone, cfg.seed);
  const Bank bank = build_bank(train, bb, BankOptions{cfg.coreset_ratio, cfg.scoring.b, cfg.neighborhood}, cfg.seed, "desk");
  const auto maps = score_split(test, bank, bb, cfg.scoring, cfg.neighborhood);
  REQUIRE(maps.size() == test.size());

  // One patch stride of tolerance around the mask.
  const Index radius = cfg.crop / 16;
  int hits = 0, defects = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(maps[i].pixel_map.rows() == cfg.crop);
    if (test.samples[i].label == 0) continue;
    ++defects;
    Index y = 0, x = 0;
    maps[i].pixel_map.maxCoeff(&y, &x);
    const Mask& m = *test.samples[i].mask;
    const Index y0 = std::max<Index>(0, y - radius), x0 = std::max<Index>(0, x - radius);
    const Index y1 = std::min<Index>(m.rows() - 1, y + radius), x1 = std::min<Index>(m.cols() - 1, x + radius);
    if (m.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).cast<int>().sum() > 0) ++hits;
  }
  MESSAGE("heat maximum on the defect in " << hits << " of " << defects << " images");
  CHECK(defects == 12);
  CHECK(hits == defects);

  const EvalResult r = evaluate_category(test, maps);
  CHECK(r.image_auroc >= 0.9);
  REQUIRE(r.pixel_auroc);
  CHECK(*r.pixel_auroc >= 0.9);
}
