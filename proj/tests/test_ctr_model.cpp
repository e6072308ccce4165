#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "checks.hpp"
#include "gme/checkpoint.hpp"
#include "gme/ctr_model.hpp"
#include "gme/eval.hpp"
#include "gme/meta.hpp"

using namespace gme;
namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> all_rows(const Dataset& ds) {
  std::vector<std::size_t> r(ds.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gme_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(BaseModel, AllZeroParamsPredictHalf) {
  auto ds = test::tiny_corpus(1);
  auto m = test::tiny_model(ds, 1);
  for (auto* p : m.mutable_params()) p->storage().assign(p->size(), 0.0);
  for (double p : score(m, ds, all_rows(ds))) EXPECT_EQ(p, 0.5);
}

TEST(BaseModel, ZeroedFieldCarriesNoSignal) {
  auto ds = test::tiny_corpus(2);
  auto m = test::tiny_model(ds, 2);
  const auto uf = ds.schema().index_of("user_id");
  auto& t = m.tables[uf];
  t.storage().assign(t.size(), 0.0);
  // Rows of the same ad differ only in user fields; zeroing user_id leaves user_group.
  std::vector<std::size_t> same;
  for (std::size_t i = 0; i < ds.size() && same.size() < 2; ++i) {
    if (ds.ad(i) != ds.ad(0)) continue;
    if (!same.empty() && ds.field(i, uf)[0] == ds.field(same[0], uf)[0]) continue;
    if (!same.empty() && ds.field(i, uf + 1)[0] != ds.field(same[0], uf + 1)[0]) continue;
    same.push_back(i);
  }
  ASSERT_EQ(same.size(), 2u);
  auto p = score(m, ds, same);
  EXPECT_EQ(p[0], p[1]);
}

TEST(BaseModel, SubstitutingTheOwnIdRowIsBitExact) {
  auto ds = test::tiny_corpus(3);
  auto m = test::tiny_model(ds, 3);
  const auto ad = ds.ads()[2];
  auto rows = ds.rows_by_ad().at(ad);
  auto row = m.id_table().row(ad);
  Tensor r0 = Tensor::vector(std::vector<double>(row.begin(), row.end()));
  EXPECT_EQ(score(m, ds, rows), score(m, ds, rows, &r0));
}

TEST(BaseModel, WrongIdEmbeddingShapeRejected) {
  auto ds = test::tiny_corpus(3);
  auto m = test::tiny_model(ds, 3);
  Tensor bad({m.dim + 1});
  auto rows = all_rows(ds);
  EXPECT_THROW(score(m, ds, rows, &bad), shape_error);
}

TEST(Loss, Examples) {
  std::vector<double> half(4, 0.5), y{1, 0, 1, 0};
  EXPECT_NEAR(loss_eq1(half, y), std::log(2.0), 1e-15);
  std::vector<double> p{0.9, 0.2}, y2{1, 0};
  EXPECT_NEAR(loss_eq1(p, y2), (-std::log(0.9) - std::log(0.8)) / 2.0, 1e-15);
  EXPECT_NEAR(loss_eq1(p, y2), 0.1643, 5e-5);
  std::vector<double> sure{1.0, 0.0};
  EXPECT_LE(loss_eq1(sure, y2), -std::log(1.0 - 1e-12) + 1e-18);
  std::vector<double> bad{0.5};
  EXPECT_THROW(loss_eq1(bad, std::vector<double>{2}), contract_violation);
}

TEST(IdSlotBatch, MatchesTapeReference) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto ds = test::tiny_corpus(seed);
    auto m = test::tiny_model(ds, seed);
    Rng rng = make_rng(seed, "test");
    auto rows = test::pick_rows(ds, 15, rng);
    auto r0 = test::random_tensor({m.dim}, rng);
    const IdSlotBatch batch(m, ds, rows);
    const auto fast = batch.loss_and_grad(r0);
    const auto ref = cold_loss(m, ds, rows, r0);
    EXPECT_NEAR(fast.loss, ref.loss, 1e-12);
    EXPECT_LT(test::rel_err(fast.grad, ref.grad), 1e-12);
    auto p = batch.predict(r0);
    auto q = score(m, ds, rows, &r0);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-14);
  }
}

TEST(IdSlotBatch, RejectsEmptyBatch) {
  auto ds = test::tiny_corpus(1);
  auto m = test::tiny_model(ds, 1);
  EXPECT_THROW(IdSlotBatch(m, ds, {}), contract_violation);
}

TEST(BaseModel, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) EXPECT_LT(test::base_model_grad_error(seed), 1e-4) << seed;
}

TEST(TrainBase, ZeroEpochsReturnsInitialization) {
  auto ds = test::tiny_corpus(4);
  BaseTrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 4;
  Rng rng = make_rng(4, "init");
  auto init = init_base_model(ds.schema(), ds.vocab(), cfg.model, rng);
  EXPECT_EQ(train_base(ds, cfg).model.hash(), init.hash());
}

TEST(TrainBase, LearnsPlantedSignalDeterministically) {
  SyntheticSpec sp;
  sp.n_ads = 150;
  sp.samples_per_ad = 60;
  sp.seed = 5;
  auto ds = gen_synthetic(sp);
  BaseTrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  auto a = train_base(ds, cfg);
  auto rows = all_rows(ds);
  EXPECT_GT(auc(score(a.model, ds, rows), labels_of(ds, rows)), 0.65);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
  EXPECT_EQ(train_base(ds, cfg).model.hash(), a.model.hash());
}

TEST(TrainBase, EmptyTrainingSetRejected) {
  auto ds = test::tiny_corpus(1);
  EXPECT_THROW(train_base(ds.subset({}), BaseTrainConfig{}), config_error);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto ds = test::tiny_corpus(6);
  auto m = test::tiny_model(ds, 6);
  auto dir = temp_dir("ckpt");
  save_base_model(m, (dir / "base.ckpt").string());
  auto back = load_base_model((dir / "base.ckpt").string(), ds.schema());
  EXPECT_EQ(back.hash(), m.hash());
  EXPECT_FALSE(fs::exists(dir / "base.ckpt.tmp"));
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  auto ds = test::tiny_corpus(6);
  auto m = test::tiny_model(ds, 6);
  const auto bytes = serialize(to_checkpoint(m));
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(deserialize(bytes.substr(0, cut)), checkpoint_error) << cut;
}

TEST(Checkpoint, ForeignSchemaIsRejected) {
  auto ds = test::tiny_corpus(6);
  auto m = test::tiny_model(ds, 6);
  auto other = synthetic_schema(3);
  EXPECT_THROW(from_checkpoint(to_checkpoint(m), other), checkpoint_error);
}

TEST(Checkpoint, MissingFileIsRejected) {
  EXPECT_THROW(load_checkpoint_file("/nonexistent/base.ckpt"), checkpoint_error);
}
