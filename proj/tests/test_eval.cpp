#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "checks.hpp"
#include "gme/eval.hpp"

using namespace gme;

namespace {

struct World {
  Dataset old;
  BaseModel theta;
  ReverseIndex index;
  AdAttributes attrs;
  WarmupPartition part;
};

const World& world() {
  static const World w = [] {
    SyntheticSpec sp;
    sp.n_ads = 120;
    sp.n_new_ads = 30;
    sp.samples_per_ad = 60;
    sp.new_samples_per_ad = 30;
    sp.seed = 4;
    auto ds = gen_synthetic(sp);
    auto split = split_old_new(ds, 50);
    BaseTrainConfig bc;
    bc.epochs = 2;
    bc.seed = 4;
    bc.model.hidden = {16, 8};
    auto m = train_base(split.old_ads, bc).model;
    auto idx = build_reverse_index(split.old_ads);
    auto attrs = ad_attributes(split.old_ads);
    auto part = partition_new_ads(split.new_ads, 2, 5);
    return World{std::move(split.old_ads), std::move(m), std::move(idx), std::move(attrs), std::move(part)};
  }();
  return w;
}

}  // namespace

TEST(Auc, Examples) {
  std::vector<double> s{0.9, 0.1}, y{1, 0};
  EXPECT_EQ(auc(s, y), 1.0);
  std::vector<double> flat(6, 0.3), y2{1, 0, 1, 0, 0, 1};
  EXPECT_EQ(auc(flat, y2), 0.5);
  std::vector<double> rev{0.1, 0.9};
  EXPECT_EQ(auc(rev, y), 0.0);
}

TEST(Auc, SingleClassIsUndefined) {
  std::vector<double> s{0.2, 0.4}, y{1, 1};
  EXPECT_THROW(auc(s, y), metric_error);
  std::vector<double> short_y{1};
  EXPECT_THROW(auc(s, short_y), shape_error);
}

TEST(Auc, MatchesPairCounting) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto [s, y] = test::random_scored(seed);
    EXPECT_NEAR(auc(s, y), test::auc_pairs(s, y), 1e-12) << seed;
  }
}

TEST(Auc, InvariantToMonotoneTransformAndOrder) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [s, y] = test::random_scored(seed);
    const double base = auc(s, y);
    std::vector<double> t = s;
    for (auto& v : t) v = std::exp(3.0 * v) - 7.0;
    EXPECT_EQ(auc(t, y), base);
    std::vector<std::size_t> perm(s.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(seed, "test-perm");
    shuffle(perm, rng);
    std::vector<double> ps, py;
    for (auto i : perm) {
      ps.push_back(s[i]);
      py.push_back(y[i]);
    }
    EXPECT_NEAR(auc(ps, py), base, 1e-15);
  }
}

TEST(Warmup, ZeroEpochsEqualsCold) {
  const auto& w = world();
  NeighborContext ctx{&w.index, &w.attrs, 10, 1};
  Rng rng = make_rng(1, "psi-init");
  auto psi = init_generator(Variant::GmeG, w.theta.dim, 3 * w.theta.dim, 1.0, rng);
  WarmupConfig cfg;
  cfg.epochs = 0;
  auto res = run_warmup(w.part.rounds, w.part.test, w.theta, psi, ctx, cfg);
  auto cold = eval_cold(w.part.test, w.theta, psi, ctx);
  ASSERT_EQ(res.size(), 3u);
  for (const auto& r : res) {
    EXPECT_EQ(r.auc, cold.auc);
    EXPECT_EQ(r.loss, cold.loss);
    EXPECT_EQ(r.variant, "GME-G");
  }
  EXPECT_EQ(res[1].phase, "warm-1");
}

TEST(Warmup, TrainsOnlyNewEmbeddingsAndLeavesThetaAlone) {
  const auto& w = world();
  const auto before = w.theta.hash();
  NeighborContext ctx{&w.index, &w.attrs, 10, 1};
  GeneratorParams rnd{Variant::RndEmb, 1.0, true, {}, {}, {}};
  WarmupConfig cfg;
  cfg.adam.lr = 0.05;
  auto res = run_warmup(w.part.rounds, w.part.test, w.theta, rnd, ctx, cfg);
  EXPECT_EQ(w.theta.hash(), before);
  EXPECT_NE(res[2].loss, res[0].loss);
  EXPECT_LT(res[2].loss, res[0].loss);
  EXPECT_EQ(res[0].samples, w.part.test.size());
}

TEST(Warmup, NeedsARound) {
  const auto& w = world();
  GeneratorParams rnd{Variant::RndEmb, 1.0, true, {}, {}, {}};
  EXPECT_THROW(run_warmup({}, w.part.test, w.theta, rnd, NeighborContext{}, WarmupConfig{}), config_error);
}

TEST(Eval, ColdIsDeterministic) {
  const auto& w = world();
  NeighborContext ctx{&w.index, &w.attrs, 10, 1};
  Rng rng = make_rng(1, "psi-init");
  auto psi = init_generator(Variant::GmeA, w.theta.dim, 3 * w.theta.dim, 1.0, rng);
  auto a = eval_cold(w.part.test, w.theta, psi, ctx);
  auto b = eval_cold(w.part.test, w.theta, psi, ctx);
  EXPECT_EQ(a.auc, b.auc);
  EXPECT_GT(a.auc, 0.5);
}

TEST(Eval, ResultsCsv) {
  std::ostringstream os;
  write_results_csv({{"cold", "GME-A", 0.75, 0.5, 10, 3}}, os);
  EXPECT_EQ(os.str(), "variant,phase,seed,auc,loss\nGME-A,cold,3,0.75,0.5\n");
}
