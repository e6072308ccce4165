#pragma once

// Metrics and the cold-start / warm-up evaluation protocol.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gme/meta.hpp"

namespace gme {

struct metric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// ROC AUC by the rank-sum statistic with midranks for tied scores.
inline double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw shape_error("auc: scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] > 0.5) {
        rank_sum += midrank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw metric_error("auc is undefined when only one class is present");
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline std::string phase_name(std::size_t round) { return round == 0 ? "cold" : "warm-" + std::to_string(round); }

struct PhaseResult {
  std::string phase;
  std::string variant;
  double auc = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

using EmbeddingMap = std::map<std::uint32_t, Tensor>;

/// Initial embeddings for every ad in `ds`, built from attributes and neighbors only.
inline EmbeddingMap initial_embeddings(const Dataset& ds, const BaseModel& theta, const GeneratorParams& psi,
                                       const NeighborContext& ctx) {
  EmbeddingMap out;
  for (const auto& [ad, rec] : ad_attributes(ds)) out.emplace(ad, generate(psi, make_input(ad, rec, theta, ctx)));
  return out;
}

/// Scores every test row with its ad's embedding, then pools all rows into one AUC and loss.
inline PhaseResult evaluate(const Dataset& test, const BaseModel& theta, const EmbeddingMap& emb) {
  std::vector<double> scores, labels;
  scores.reserve(test.size());
  labels.reserve(test.size());
  const auto by_ad = test.rows_by_ad();
  for (auto ad : test.ads()) {
    const auto& rows = by_ad.at(ad);
    auto s = score(theta, test, rows, &emb.at(ad));
    scores.insert(scores.end(), s.begin(), s.end());
    for (auto r : rows) labels.push_back(test.label(r));
  }
  PhaseResult r;
  r.auc = auc(scores, labels);
  r.loss = loss_eq1(scores, labels);
  r.samples = scores.size();
  return r;
}

inline PhaseResult eval_cold(const Dataset& test, const BaseModel& theta, const GeneratorParams& psi,
                             const NeighborContext& ctx) {
  auto r = evaluate(test, theta, initial_embeddings(test, theta, psi, ctx));
  r.phase = "cold";
  r.variant = psi.label();
  r.seed = ctx.seed;
  return r;
}

struct WarmupConfig {
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  /// Passes over each ad's round samples; 0 disables warm-up training.
  std::size_t epochs = 1;
  std::size_t batch_size = 10;
};

/// Cold result followed by one result per warm-up round. Only the new ads' ID
/// embeddings are trained; embeddings and their Adam state carry across rounds.
inline std::vector<PhaseResult> run_warmup(const std::vector<Dataset>& rounds, const Dataset& test,
                                           const BaseModel& theta, const GeneratorParams& psi,
                                           const NeighborContext& ctx, const WarmupConfig& cfg) {
  if (rounds.empty()) throw config_error("run_warmup: at least one round is required");
  if (cfg.batch_size == 0) throw config_error("warm-up batch size must be positive");
  const std::string theta_before = theta.hash();
  EmbeddingMap emb = initial_embeddings(test, theta, psi, ctx);
  for (const auto& r : rounds)
    for (const auto& [ad, e] : initial_embeddings(r, theta, psi, ctx)) emb.try_emplace(ad, e);
  std::map<std::uint32_t, AdamState> states;

  std::vector<PhaseResult> out;
  auto record = [&](std::size_t round) {
    auto r = evaluate(test, theta, emb);
    r.phase = phase_name(round);
    r.variant = psi.label();
    r.seed = ctx.seed;
    out.push_back(r);
  };
  record(0);
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const auto& data = rounds[k];
    const auto by_ad = data.rows_by_ad();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch)
      for (auto ad : data.ads()) {
        const auto& rows = by_ad.at(ad);
        auto& e = emb.at(ad);
        auto& st = states.try_emplace(ad, AdamState(e.shape(), cfg.adam)).first->second;
        for (std::size_t lo = 0; lo < rows.size(); lo += cfg.batch_size) {
          std::span<const std::size_t> batch(rows.data() + lo, std::min(cfg.batch_size, rows.size() - lo));
          adam_step(e, IdSlotBatch(theta, data, batch).loss_and_grad(e).grad, st);
        }
      }
    record(k + 1);
  }
  if (theta.hash() != theta_before) throw contract_violation("warm-up modified the frozen base model");
  return out;
}

inline void write_results_csv(const std::vector<PhaseResult>& results, std::ostream& out) {
  out << "variant,phase,seed,auc,loss\n";
  out.precision(17);
  for (const auto& r : results) out << r.variant << ',' << r.phase << ',' << r.seed << ',' << r.auc << ',' << r.loss << '\n';
}

}  // namespace gme
