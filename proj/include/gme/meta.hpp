#pragma once

// Meta-training of generator parameters with the base model frozen.
//
// Per task (one old ad with disjoint minibatches D_a, D_b):
//   r0   = generator(ad)
//   l_a  = BCE over D_a with r0 in the ID slot,   g_a = dl_a/dr0
//   r0'  = r0 - eta * g_a
//   l_b  = BCE over D_b with r0' in the ID slot,  g_b = dl_b/dr0'
//   l    = beta * l_a + (1 - beta) * l_b
// dl/dr0 = beta * g_a + (1 - beta) * (g_b - eta * H_a g_b), H_a the Hessian of
// l_a at r0 (symmetric). The H_a g_b product comes from central differences
// of g_a; first-order mode drops it. The result is pulled back through the
// generator to W, V, a.

#include <iostream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gme/ctr_model.hpp"
#include "gme/generators.hpp"
#include "gme/graph.hpp"
#include "gme/optim.hpp"

namespace gme {

enum class MetaGradMode { ExactHvp, FirstOrder };

struct MetaConfig {
  double beta = 0.1;
  double eta = 0.1;
  std::size_t minibatch = 20;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  MetaGradMode mode = MetaGradMode::ExactHvp;
  bool verbose = false;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw config_error("beta must lie in [0, 1]");
    if (!(eta > 0.0)) throw config_error("eta must be positive");
    if (minibatch == 0) throw config_error("minibatch size must be positive");
  }
};

/// Mean BCE over `rows` with `r0` substituted for the ad's ID embedding, and its gradient in r0.
/// Reference path through the tape; IdSlotBatch computes the same quantities faster.
inline ColdLoss cold_loss(const BaseModel& theta, const Dataset& ds, std::span<const std::size_t> rows,
                          const Tensor& r0) {
  Tape tape;
  auto mv = bind(tape, theta, false);
  Var r = tape.leaf(r0);
  Var loss = tape.bce(predict(tape, mv, ds, rows, r), labels_of(ds, rows));
  auto g = tape.backward(loss);
  return {loss.value()[0], g[r]};
}

inline Tensor inner_adapt(const Tensor& r0, const Tensor& grad, double eta) {
  Tensor out = r0;
  axpy(-eta, grad, out);
  return out;
}

struct MetaTask {
  std::uint32_t ad = 0;
  std::vector<std::size_t> a, b;  // D_a, D_b rows
  GeneratorInput input;
};

struct MetaLoss {
  double l = 0.0, l_a = 0.0, l_b = 0.0;
};

inline MetaLoss meta_loss(const MetaTask& task, const GeneratorParams& psi, const BaseModel& theta, const Dataset& ds,
                          const MetaConfig& cfg) {
  const IdSlotBatch da(theta, ds, task.a), db(theta, ds, task.b);
  const Tensor r0 = generate(psi, task.input);
  const auto ca = da.loss_and_grad(r0);
  const Tensor r1 = inner_adapt(r0, ca.grad, cfg.eta);
  const auto cb = db.loss_and_grad(r1);
  return {cfg.beta * ca.loss + (1.0 - cfg.beta) * cb.loss, ca.loss, cb.loss};
}

struct MetaGrad {
  PsiGrad grad;
  MetaLoss loss;
};

inline MetaGrad meta_grad(const MetaTask& task, const GeneratorParams& psi, const BaseModel& theta, const Dataset& ds,
                          const MetaConfig& cfg) {
  const IdSlotBatch da(theta, ds, task.a), db(theta, ds, task.b);
  const Tensor r0 = generate(psi, task.input);
  const auto ca = da.loss_and_grad(r0);
  const Tensor r1 = inner_adapt(r0, ca.grad, cfg.eta);
  const auto cb = db.loss_and_grad(r1);

  Tensor through_b = cb.grad;
  if (cfg.mode == MetaGradMode::ExactHvp && cfg.eta != 0.0) {
    auto grad_a = [&](const Tensor& x) { return da.loss_and_grad(x).grad; };
    axpy(-cfg.eta, hvp_fd(grad_a, r0, cb.grad), through_b);
  }
  Tensor u = cfg.beta * ca.grad;
  axpy(1.0 - cfg.beta, through_b, u);
  if (!u.all_finite()) throw numeric_overflow("meta_grad: non-finite gradient for ad " + std::to_string(task.ad));

  MetaGrad out{pullback(psi, task.input, u), {cfg.beta * ca.loss + (1.0 - cfg.beta) * cb.loss, ca.loss, cb.loss}};
  for (const Tensor* t : {&out.grad.W, &out.grad.V, &out.grad.a})
    if (!t->all_finite()) throw numeric_overflow("meta_grad: non-finite parameter gradient");
  return out;
}

/// Retrieval settings shared by meta-training and evaluation.
struct NeighborContext {
  const ReverseIndex* index = nullptr;
  const AdAttributes* old_attributes = nullptr;
  std::size_t n = 10;
  std::uint64_t seed = 1;  // graph-ties stream
};

/// Generator input for `ad`: attributes from `attrs`, neighbors from the old-ad index (the ad itself excluded).
inline GeneratorInput make_input(std::uint32_t ad, const AttributeRecord& attrs, const BaseModel& theta,
                                 const NeighborContext& ctx) {
  GeneratorInput in;
  in.dim = theta.dim;
  in.z0 = attribute_vector(attrs, theta);
  in.fallback_seed = stream_seed(ctx.seed, "rnd-emb", ad);
  if (ctx.index && ctx.n > 0) {
    Rng rng = make_rng(ctx.seed, "graph-ties", ad);
    auto nbrs = retrieve_neighbors(ad, attrs, *ctx.index, ctx.n, rng);
    auto t = neighbor_tensors(nbrs, *ctx.old_attributes, theta);
    in.p = std::move(t.id_embeddings);
    in.z = std::move(t.attributes);
  }
  return in;
}

struct MetaCurvePoint {
  std::size_t epoch = 0;
  std::size_t tasks = 0;
  double l = 0.0, l_a = 0.0, l_b = 0.0;
};

struct MetaTrainResult {
  GeneratorParams psi;
  std::vector<MetaCurvePoint> curve;
  std::size_t skipped_ads = 0;
};

inline void write_curve_csv(const std::vector<MetaCurvePoint>& curve, std::ostream& out) {
  out << "epoch,task_count,mean_l,mean_l_a,mean_l_b\n";
  out.precision(17);
  for (const auto& c : curve) out << c.epoch << ',' << c.tasks << ',' << c.l << ',' << c.l_a << ',' << c.l_b << '\n';
}

/// Adam on Psi, one update per task, tasks in a freshly shuffled order each epoch.
/// Minibatches for (epoch, ad) come from their own stream, independent of task order.
inline MetaTrainResult train_meta(const Dataset& old, const BaseModel& theta, GeneratorParams psi,
                                  const NeighborContext& ctx, const MetaConfig& cfg) {
  cfg.validate();
  const std::string theta_before = theta.hash();
  MetaTrainResult res{std::move(psi), {}, 0};
  if (!is_trainable(res.psi.variant)) return res;

  const auto by_ad = old.rows_by_ad();
  const auto attrs = ad_attributes(old);
  std::vector<std::uint32_t> eligible;
  std::vector<GeneratorInput> inputs;
  for (auto ad : old.ads()) {
    if (by_ad.at(ad).size() < 2 * cfg.minibatch) {
      ++res.skipped_ads;
      continue;
    }
    eligible.push_back(ad);
    inputs.push_back(make_input(ad, attrs.at(ad), theta, ctx));
  }
  if (eligible.empty())
    throw config_error("train_meta: no old ad has the " + std::to_string(2 * cfg.minibatch) + " samples a task needs");
  if (res.skipped_ads && cfg.verbose)
    std::cerr << "train-meta: " << res.skipped_ads << " ads skipped for lack of samples\n";

  AdamState sW(res.psi.W.shape(), cfg.adam), sV, sa;
  if (res.psi.V.size()) sV = AdamState(res.psi.V.shape(), cfg.adam);
  if (res.psi.a.size()) sa = AdamState(res.psi.a.shape(), cfg.adam);

  Rng order_rng = make_rng(cfg.seed, "task-shuffle");
  std::vector<std::size_t> order(eligible.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, order_rng);
    MetaCurvePoint pt{epoch + 1, 0, 0.0, 0.0, 0.0};
    for (auto k : order) {
      const auto ad = eligible[k];
      Rng rng = make_rng(cfg.seed, "minibatch", (static_cast<std::uint64_t>(epoch) << 32) | ad);
      auto batches = sample_disjoint_minibatches(by_ad.at(ad), cfg.minibatch, rng);
      MetaTask task{ad, std::move(batches->a), std::move(batches->b), inputs[k]};
      MetaGrad mg;
      try {
        mg = meta_grad(task, res.psi, theta, old, cfg);
      } catch (const numeric_overflow& e) {
        throw numeric_overflow(std::string("train_meta aborted: ") + e.what());
      }
      adam_step(res.psi.W, mg.grad.W, sW);
      if (res.psi.V.size()) adam_step(res.psi.V, mg.grad.V, sV);
      if (res.psi.a.size()) adam_step(res.psi.a, mg.grad.a, sa);
      pt.l += mg.loss.l;
      pt.l_a += mg.loss.l_a;
      pt.l_b += mg.loss.l_b;
      ++pt.tasks;
    }
    const double n = static_cast<double>(pt.tasks);
    pt.l /= n;
    pt.l_a /= n;
    pt.l_b /= n;
    res.curve.push_back(pt);
    if (cfg.verbose)
      std::cerr << "train-meta " << res.psi.label() << " epoch " << pt.epoch << " l " << pt.l << '\n';
  }
  if (theta.hash() != theta_before) throw contract_violation("train_meta modified the frozen base model");
  return res;
}

}  // namespace gme
