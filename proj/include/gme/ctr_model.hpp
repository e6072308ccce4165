#pragma once

// The base DNN click model: per-field embedding lookup (multi-valued fields
// mean-pooled), concatenation in schema order, a tanh MLP and a sigmoid output
// trained with mean binary cross-entropy.

#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gme/data.hpp"
#include "gme/digest.hpp"
#include "gme/optim.hpp"
#include "gme/random.hpp"
#include "gme/tape.hpp"

namespace gme {

struct ModelConfig {
  std::size_t dim = 10;
  std::vector<std::size_t> hidden{128, 64};
  double embedding_init = 0.01;
};

struct BaseModel {
  FieldSchema schema;
  std::size_t dim = 0;
  std::vector<Tensor> tables;   // per field, [vocab rows incl. OOV, dim]
  std::vector<Tensor> weights;  // per hidden layer, [in, out]
  std::vector<Tensor> biases;   // per hidden layer, [out]
  Tensor out_w;                 // [last hidden]
  Tensor out_b;                 // [1]

  std::size_t input_width() const { return schema.size() * dim; }
  const Tensor& id_table() const { return tables[schema.id_field()]; }

  /// Every parameter with a stable name, in a fixed order.
  std::vector<std::pair<std::string, const Tensor*>> named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (std::size_t f = 0; f < tables.size(); ++f) out.emplace_back("table/" + schema[f].name, &tables[f]);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.emplace_back("fc" + std::to_string(l) + "/w", &weights[l]);
      out.emplace_back("fc" + std::to_string(l) + "/b", &biases[l]);
    }
    out.emplace_back("out/w", &out_w);
    out.emplace_back("out/b", &out_b);
    return out;
  }

  std::vector<Tensor*> mutable_params() {
    std::vector<Tensor*> out;
    for (auto& t : tables) out.push_back(&t);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(&weights[l]);
      out.push_back(&biases[l]);
    }
    out.push_back(&out_w);
    out.push_back(&out_b);
    return out;
  }

  /// SHA-256 over every parameter's bytes; used to prove the model stayed frozen.
  std::string hash() const {
    Sha256 h;
    for (const auto& [name, t] : named()) h.update(name).update(t->data());
    return h.hex();
  }

  bool all_finite() const {
    for (const auto& [name, t] : named())
      if (!t->all_finite()) return false;
    return true;
  }
};

/// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = uniform(rng, -b, b);
  return t;
}

inline BaseModel init_base_model(const FieldSchema& schema, const Vocabulary& vocab, const ModelConfig& cfg, Rng& rng) {
  if (cfg.dim == 0) throw config_error("embedding dimension must be positive");
  BaseModel m{schema, cfg.dim, {}, {}, {}, {}, {}};
  for (std::size_t f = 0; f < schema.size(); ++f) {
    Tensor t({vocab.rows(f), cfg.dim});
    for (auto& v : t.storage()) v = uniform(rng, -cfg.embedding_init, cfg.embedding_init);
    m.tables.push_back(std::move(t));
  }
  std::size_t in = m.input_width();
  for (auto width : cfg.hidden) {
    if (width == 0) throw config_error("hidden layer width must be positive");
    m.weights.push_back(fan_in_uniform({in, width}, in, rng));
    m.biases.emplace_back(Shape{width});
    in = width;
  }
  m.out_w = fan_in_uniform({in}, in, rng);
  m.out_b = Tensor({1});
  return m;
}

/// The model's parameters recorded on a tape, either as leaves (training) or
/// as constants (frozen use).
struct ModelVars {
  const BaseModel* model = nullptr;
  std::vector<std::optional<Var>> tables;  // empty for frozen tables; lookups become constants
  std::vector<Var> weights, biases;
  Var out_w, out_b;
  bool trainable = false;
};

inline ModelVars bind(Tape& tape, const BaseModel& m, bool trainable) {
  ModelVars v;
  v.model = &m;
  v.trainable = trainable;
  auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  for (const auto& t : m.tables) v.tables.push_back(trainable ? std::optional<Var>(tape.leaf(t)) : std::nullopt);
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    v.weights.push_back(put(m.weights[l]));
    v.biases.push_back(put(m.biases[l]));
  }
  v.out_w = put(m.out_w);
  v.out_b = put(m.out_b);
  return v;
}

/// Click probabilities for `rows` of `ds`. With `id_embedding` set, that vector
/// replaces the table lookup in the ad-identity slot for every row.
inline Var predict(Tape& tape, const ModelVars& mv, const Dataset& ds, std::span<const std::size_t> rows,
                   std::optional<Var> id_embedding = std::nullopt) {
  const BaseModel& m = *mv.model;
  if (!(ds.schema() == m.schema)) throw contract_violation("predict: dataset schema differs from model schema");
  if (rows.empty()) throw contract_violation("predict: empty batch");
  std::vector<Var> parts;
  for (std::size_t f = 0; f < m.schema.size(); ++f) {
    if (id_embedding && f == m.schema.id_field()) {
      if (id_embedding->shape() != Shape{m.dim})
        throw shape_error("id embedding has shape " + shape_str(id_embedding->shape()) + ", expected (" +
                          std::to_string(m.dim) + ")");
      parts.push_back(tape.repeat_rows(*id_embedding, rows.size()));
      continue;
    }
    BagIndices bags;
    for (auto r : rows) bags.push_row(ds.field(r, f));
    parts.push_back(mv.tables[f] ? tape.embedding_bag(*mv.tables[f], std::move(bags))
                                 : tape.constant(pool_rows(m.tables[f], bags)));
  }
  Var h = tape.concat_cols(parts);
  for (std::size_t l = 0; l < m.weights.size(); ++l)
    h = tape.tanh(tape.add_row_bias(tape.matmul(h, mv.weights[l]), mv.biases[l]));
  Var logit = tape.add_scalar(tape.matvec(h, mv.out_w), mv.out_b);
  return tape.sigmoid(logit);
}

inline std::vector<double> labels_of(const Dataset& ds, std::span<const std::size_t> rows) {
  std::vector<double> y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(ds.label(r));
  return y;
}

/// Mean binary cross-entropy with predictions clamped to [1e-12, 1-1e-12].
inline double loss_eq1(std::span<const double> pred, std::span<const double> labels) {
  if (pred.size() != labels.size() || pred.empty()) throw shape_error("loss: predictions and labels differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw contract_violation("loss: labels must be 0 or 1");
    const double p = std::clamp(pred[i], kBceClamp, 1.0 - kBceClamp);
    s += labels[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
  }
  return s / static_cast<double>(pred.size());
}

/// Scores rows without keeping a tape around; `id_embedding` as in predict().
inline std::vector<double> score(const BaseModel& m, const Dataset& ds, std::span<const std::size_t> rows,
                                 const Tensor* id_embedding = nullptr) {
  std::vector<double> out;
  out.reserve(rows.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t lo = 0; lo < rows.size(); lo += kChunk) {
    auto chunk = rows.subspan(lo, std::min(kChunk, rows.size() - lo));
    Tape tape;
    auto mv = bind(tape, m, false);
    std::optional<Var> r0;
    if (id_embedding) r0 = tape.constant(*id_embedding);
    Var p = predict(tape, mv, ds, chunk, r0);
    out.insert(out.end(), p.value().storage().begin(), p.value().storage().end());
  }
  return out;
}

struct ColdLoss {
  double loss = 0.0;
  Tensor grad;  // d loss / d r0
};

/// A fixed batch scored by a frozen model where only the ad-ID embedding varies.
/// The non-ID part of the first layer's pre-activation is computed once, so each
/// evaluation costs one d-wide product plus the remaining layers.
class IdSlotBatch {
 public:
  IdSlotBatch(const BaseModel& m, const Dataset& ds, std::span<const std::size_t> rows)
      : m_(&m), labels_(labels_of(ds, rows)) {
    if (rows.empty()) throw contract_violation("IdSlotBatch: empty batch");
    if (m.weights.empty()) throw contract_violation("IdSlotBatch: model has no hidden layer");
    const std::size_t d = m.dim, idf = m.schema.id_field();
    const Tensor& W1 = m.weights[0];
    const std::size_t h = W1.cols();
    pre_ = Tensor({rows.size(), h});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto out = pre_.row(i);
      std::copy(m.biases[0].storage().begin(), m.biases[0].storage().end(), out.begin());
      for (std::size_t f = 0; f < m.schema.size(); ++f) {
        if (f == idf) continue;
        BagIndices bag;
        bag.push_row(ds.field(rows[i], f));
        const Tensor x = pool_rows(m.tables[f], bag);
        for (std::size_t c = 0; c < d; ++c) {
          const double xc = x[c];
          auto w = W1.row(f * d + c);
          for (std::size_t j = 0; j < h; ++j) out[j] += xc * w[j];
        }
      }
    }
  }

  std::size_t size() const { return labels_.size(); }

  std::vector<double> predict(const Tensor& r0) const {
    std::vector<Tensor> acts;
    return forward(r0, acts);
  }

  ColdLoss loss_and_grad(const Tensor& r0) const {
    std::vector<Tensor> acts;
    const auto p = forward(r0, acts);
    const BaseModel& m = *m_;
    const std::size_t n = p.size(), L = m.weights.size();
    ColdLoss out{loss_eq1(p, labels_), Tensor({m.dim})};
    // delta over the last hidden activation, then back through each tanh layer
    Tensor delta({n, acts[L - 1].cols()});
    for (std::size_t i = 0; i < n; ++i) {
      const double pc = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
      const double dlogit = pc == p[i] ? (p[i] - labels_[i]) / static_cast<double>(n) : 0.0;
      auto row = delta.row(i);
      auto a = acts[L - 1].row(i);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = dlogit * m.out_w[j] * (1.0 - a[j] * a[j]);
    }
    for (std::size_t l = L - 1; l > 0; --l) {
      const Tensor& W = m.weights[l];  // [in, out]
      Tensor prev({n, W.rows()});
      for (std::size_t i = 0; i < n; ++i) {
        auto dr = delta.row(i);
        auto a = acts[l - 1].row(i);
        auto pr = prev.row(i);
        for (std::size_t q = 0; q < W.rows(); ++q) pr[q] = gme::dot(W.row(q), dr) * (1.0 - a[q] * a[q]);
      }
      delta = std::move(prev);
    }
    const Tensor& W1 = m.weights[0];
    const std::size_t base = m.schema.id_field() * m.dim;
    for (std::size_t c = 0; c < m.dim; ++c) {
      auto w = W1.row(base + c);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += gme::dot(w, delta.row(i));
      out.grad[c] = s;
    }
    if (!out.grad.all_finite() || !std::isfinite(out.loss)) throw numeric_overflow("cold loss: non-finite value");
    return out;
  }

 private:
  std::vector<double> forward(const Tensor& r0, std::vector<Tensor>& acts) const {
    const BaseModel& m = *m_;
    if (r0.shape() != Shape{m.dim}) throw shape_error("id embedding has shape " + shape_str(r0.shape()));
    const Tensor& W1 = m.weights[0];
    const std::size_t n = pre_.rows(), h = W1.cols(), base = m.schema.id_field() * m.dim;
    Tensor a = pre_;
    for (std::size_t i = 0; i < n; ++i) {
      auto out = a.row(i);
      for (std::size_t c = 0; c < m.dim; ++c) {
        auto w = W1.row(base + c);
        for (std::size_t j = 0; j < h; ++j) out[j] += r0[c] * w[j];
      }
      for (auto& v : out) v = std::tanh(v);
    }
    acts.push_back(a);
    for (std::size_t l = 1; l < m.weights.size(); ++l) {
      const Tensor& W = m.weights[l];
      Tensor next({n, W.cols()});
      for (std::size_t i = 0; i < n; ++i) {
        auto out = next.row(i);
        std::copy(m.biases[l].storage().begin(), m.biases[l].storage().end(), out.begin());
        auto in = acts.back().row(i);
        for (std::size_t q = 0; q < W.rows(); ++q) {
          const double x = in[q];
          auto w = W.row(q);
          for (std::size_t j = 0; j < out.size(); ++j) out[j] += x * w[j];
        }
        for (auto& v : out) v = std::tanh(v);
      }
      acts.push_back(std::move(next));
    }
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = Tape::sigmoid_fn(gme::dot(acts.back().row(i), m.out_w.data()) + m.out_b[0]);
    return p;
  }

  const BaseModel* m_;
  std::vector<double> labels_;
  Tensor pre_;
};

struct BaseTrainConfig {
  ModelConfig model;
  std::size_t epochs = 5;
  std::size_t batch_size = 256;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct BaseTrainResult {
  BaseModel model;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// Minibatch Adam on mean cross-entropy. Deterministic for a fixed seed.
inline BaseTrainResult train_base(const Dataset& old, const BaseTrainConfig& cfg) {
  if (old.empty()) throw config_error("train_base: empty training set");
  if (cfg.batch_size == 0) throw config_error("train_base: batch size must be positive");
  Rng init_rng = make_rng(cfg.seed, "init");
  BaseTrainResult res{init_base_model(old.schema(), old.vocab(), cfg.model, init_rng), {}};
  BaseModel& m = res.model;
  auto params = m.mutable_params();
  std::vector<AdamState> states;
  for (auto* p : params) states.emplace_back(p->shape(), cfg.adam);

  Rng order_rng = make_rng(cfg.seed, "base-shuffle");
  std::vector<std::size_t> order(old.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, order_rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      std::span<const std::size_t> batch(order.data() + lo, std::min(cfg.batch_size, order.size() - lo));
      Tape tape;
      auto mv = bind(tape, m, true);
      Var loss;
      try {
        loss = tape.bce(predict(tape, mv, old, batch), labels_of(old, batch));
      } catch (const numeric_overflow& e) {
        throw numeric_overflow(std::string("train_base diverged: ") + e.what());
      }
      auto grads = tape.backward(loss);
      std::vector<Var> leaves;
      for (auto& t : mv.tables) leaves.push_back(*t);
      for (std::size_t l = 0; l < mv.weights.size(); ++l) {
        leaves.push_back(mv.weights[l]);
        leaves.push_back(mv.biases[l]);
      }
      leaves.push_back(mv.out_w);
      leaves.push_back(mv.out_b);
      for (std::size_t k = 0; k < params.size(); ++k) adam_step(*params[k], grads[leaves[k]], states[k]);
      total += loss.value()[0];
      ++batches;
    }
    res.epoch_loss.push_back(total / static_cast<double>(batches));
    if (!m.all_finite()) throw numeric_overflow("train_base diverged: non-finite parameters after epoch");
    if (cfg.verbose)
      std::cerr << "train-base epoch " << epoch + 1 << " loss " << res.epoch_loss.back() << '\n';
  }
  return res;
}

}  // namespace gme
