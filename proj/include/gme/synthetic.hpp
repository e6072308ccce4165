#pragma once

// Seeded synthetic click corpus. Each ad belongs to a hidden cluster; its
// attribute tokens are noisy indicators of that cluster, and click logits mix
// a cluster effect, per-token effects, an ad-specific residual, a user bias
// and a user-group x cluster interaction. Ads sharing attributes therefore
// tend to share click behaviour, which is what neighbor-aware initializers
// can exploit.

#include <string>
#include <vector>

#include "gme/data.hpp"
#include "gme/random.hpp"

namespace gme {

struct SyntheticSpec {
  std::size_t n_ads = 1200;
  std::size_t samples_per_ad = 60;
  /// The last n_new_ads ads get new_samples_per_ad samples instead.
  std::size_t n_new_ads = 0;
  std::size_t new_samples_per_ad = 40;
  std::size_t n_attr_fields = 3;
  std::size_t attr_cardinality = 40;
  std::size_t n_users = 400;
  std::size_t n_user_groups = 4;
  std::size_t n_clusters = 24;
  /// Probability that an attribute token is drawn from the ad's cluster block.
  double attr_purity = 0.7;
  /// Overall scale of the planted weights; 0 gives coin-flip labels.
  double signal = 1.0;
  double cluster_scale = 1.0;
  double token_scale = 0.3;
  double residual_scale = 0.5;
  double user_scale = 0.5;
  double interaction_scale = 0.7;
  std::uint64_t seed = 1;
};

inline FieldSchema synthetic_schema(std::size_t n_attr_fields) {
  std::vector<FieldDesc> fields{{"ad_id", FieldRole::AdId, Arity::Single}};
  for (std::size_t f = 0; f < n_attr_fields; ++f)
    fields.push_back({"attr" + std::to_string(f), FieldRole::AdAttribute, Arity::Single});
  fields.push_back({"user_id", FieldRole::Other, Arity::Single});
  fields.push_back({"user_group", FieldRole::Other, Arity::Single});
  return FieldSchema(std::move(fields));
}

inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_ads == 0 || spec.samples_per_ad == 0 || spec.n_attr_fields == 0 || spec.attr_cardinality == 0 ||
      spec.n_users == 0 || spec.n_user_groups == 0 || spec.n_clusters == 0 || spec.n_new_ads > spec.n_ads)
    throw config_error("synthetic corpus: counts must be positive");
  Rng rng(stream_seed(spec.seed, "synthetic"));
  const std::size_t K = spec.n_attr_fields, C = spec.attr_cardinality, Q = spec.n_clusters;

  std::vector<double> cluster_bias(Q);
  for (auto& b : cluster_bias) b = spec.cluster_scale * normal(rng);
  std::vector<std::vector<double>> token_bias(K, std::vector<double>(C));
  for (auto& field : token_bias)
    for (auto& b : field) b = spec.token_scale * normal(rng);
  std::vector<double> user_bias(spec.n_users);
  std::vector<std::size_t> user_group(spec.n_users);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    user_bias[u] = spec.user_scale * normal(rng);
    user_group[u] = uniform_index(rng, spec.n_user_groups);
  }
  std::vector<std::vector<double>> interaction(spec.n_user_groups, std::vector<double>(Q));
  for (auto& g : interaction)
    for (auto& v : g) v = spec.interaction_scale * normal(rng);

  const std::size_t block = std::max<std::size_t>(1, C / Q);
  std::vector<RawSample> raw;
  for (std::size_t a = 0; a < spec.n_ads; ++a) {
    const std::size_t q = uniform_index(rng, Q);
    std::vector<std::string> attrs(K);
    double ad_logit = cluster_bias[q] + spec.residual_scale * normal(rng);
    for (std::size_t f = 0; f < K; ++f) {
      std::size_t tok;
      if (uniform01(rng) < spec.attr_purity)
        tok = (q * C / Q + uniform_index(rng, block)) % C;
      else
        tok = uniform_index(rng, C);
      attrs[f] = "f" + std::to_string(f) + "_" + std::to_string(tok);
      ad_logit += token_bias[f][tok];
    }
    const bool is_new = a >= spec.n_ads - spec.n_new_ads;
    const std::size_t n = is_new ? spec.new_samples_per_ad : spec.samples_per_ad;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t u = uniform_index(rng, spec.n_users);
      const double logit =
          spec.signal * (ad_logit + user_bias[u] + interaction[user_group[u]][q]);
      RawSample r;
      r.label = uniform01(rng) < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;
      r.tokens.push_back({"a" + std::to_string(a)});
      for (const auto& t : attrs) r.tokens.push_back({t});
      r.tokens.push_back({"u" + std::to_string(u)});
      r.tokens.push_back({"g" + std::to_string(user_group[u])});
      raw.push_back(std::move(r));
    }
  }
  shuffle(raw, rng);
  return build_dataset(synthetic_schema(K), raw);
}

}  // namespace gme
