#pragma once

// Initial ID-embedding generators for new ads.
//
// Building blocks: the embedding generator g = gamma * tanh(W z) and a
// single-head graph attention layer whose coefficients are
//   alpha_0j = softmax_j( LeakyReLU_0.2( a . [V x_0 || V x_j] ) ),  j = 0..n
// with x_0 the node itself, and whose output is ELU(sum_j alpha_0j V x_j).
//
// Variants:
//   RndEmb   uniform noise in [-0.01, 0.01]
//   MetaEmb  g(z_0)
//   NgbEmb   gamma * tanh(W mean(p_i))
//   GME-P    attend from g(z_0) over pre-trained neighbor ID embeddings p_i
//   GME-G    attend from g(z_0) over generated neighbor embeddings g(z_i)
//   GME-A    attend from z_0 over neighbor attribute vectors z_i, then g(.)

#include <optional>
#include <string>
#include <vector>

#include "gme/checkpoint.hpp"
#include "gme/random.hpp"
#include "gme/tape.hpp"

namespace gme {

enum class Variant { RndEmb, MetaEmb, NgbEmb, GmeP, GmeG, GmeA };

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::RndEmb, Variant::MetaEmb, Variant::NgbEmb,
                                      Variant::GmeP,   Variant::GmeG,    Variant::GmeA};
  return v;
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::RndEmb: return "RndEmb";
    case Variant::MetaEmb: return "MetaEmb";
    case Variant::NgbEmb: return "NgbEmb";
    case Variant::GmeP: return "GME-P";
    case Variant::GmeG: return "GME-G";
    case Variant::GmeA: return "GME-A";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : all_variants())
    if (variant_name(v) == s) return v;
  throw config_error("unknown variant '" + s + "'");
}

inline bool is_trainable(Variant v) { return v != Variant::RndEmb; }
inline bool uses_attention(Variant v) { return v == Variant::GmeP || v == Variant::GmeG || v == Variant::GmeA; }
inline bool uses_neighbors(Variant v) { return v == Variant::NgbEmb || uses_attention(v); }

inline double default_gamma(Variant v) {
  return v == Variant::GmeP || v == Variant::NgbEmb ? 0.25 : 1.0;
}

inline constexpr double kRndEmbBound = 0.01;

/// Generator parameters {W, V, a}; unused members stay empty.
struct GeneratorParams {
  Variant variant = Variant::RndEmb;
  double gamma = 1.0;
  /// false replaces attention with uniform weights over self and neighbors.
  bool attention = true;
  Tensor W, V, a;

  std::string label() const { return variant_name(variant) + (attention || !uses_attention(variant) ? "" : "\\GAT"); }
  std::string hash() const {
    Sha256 h;
    h.update(label());
    for (const Tensor* t : {&W, &V, &a}) h.update(t->data());
    return h.hex();
  }
};

inline GeneratorParams init_generator(Variant v, std::size_t dim, std::size_t attr_width, double gamma, Rng& rng,
                                      bool attention = true) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw config_error("gamma must lie in (0, 1]");
  GeneratorParams p{v, gamma, attention, {}, {}, {}};
  switch (v) {
    case Variant::RndEmb: break;
    case Variant::MetaEmb: p.W = fan_in_uniform({dim, attr_width}, attr_width, rng); break;
    case Variant::NgbEmb: p.W = fan_in_uniform({dim, dim}, dim, rng); break;
    case Variant::GmeP:
    case Variant::GmeG:
      p.W = fan_in_uniform({dim, attr_width}, attr_width, rng);
      p.V = fan_in_uniform({dim, dim}, dim, rng);
      p.a = Tensor({2 * dim});
      break;
    case Variant::GmeA:
      p.V = fan_in_uniform({attr_width, attr_width}, attr_width, rng);
      p.a = Tensor({2 * attr_width});
      p.W = fan_in_uniform({dim, attr_width}, attr_width, rng);
      break;
  }
  return p;
}

/// What a generator sees of one ad: its attribute vector z_0 and its neighbors'
/// pre-trained ID embeddings p_i and attribute vectors z_i. No labels.
struct GeneratorInput {
  Tensor z0;
  std::vector<Tensor> p;
  std::vector<Tensor> z;
  std::size_t dim = 0;
  /// Seeds RndEmb, and NgbEmb when the ad has no neighbors.
  std::uint64_t fallback_seed = 0;
};

inline Tensor rnd_emb(std::size_t dim, Rng& rng) {
  Tensor t({dim});
  for (auto& v : t.storage()) v = uniform(rng, -kRndEmbBound, kRndEmbBound);
  return t;
}

/// Generator parameters recorded on a tape as leaves.
struct PsiVars {
  std::optional<Var> W, V, a;
};

inline PsiVars bind(Tape& tape, const GeneratorParams& p) {
  PsiVars v;
  if (p.W.size()) v.W = tape.leaf(p.W);
  if (p.V.size()) v.V = tape.leaf(p.V);
  if (p.a.size()) v.a = tape.leaf(p.a);
  return v;
}

inline Var eg_generate(Tape& tape, Var z, Var W, double gamma) {
  return tape.scale(tape.tanh(tape.matvec(W, z)), gamma);
}

/// Attention weights over {query, keys...}; index 0 is the query itself.
inline Var gat_attention(Tape& tape, Var query, const std::vector<Var>& keys, Var V, Var a) {
  Var vq = tape.matvec(V, query);
  std::vector<Var> scores;
  scores.push_back(tape.dot(a, tape.concat({vq, vq})));
  for (auto k : keys) scores.push_back(tape.dot(a, tape.concat({vq, tape.matvec(V, k)})));
  return tape.softmax(tape.leaky_relu(tape.concat(scores)));
}

inline Var uniform_weights(Tape& tape, std::size_t n) {
  return tape.constant(Tensor({n}, 1.0 / static_cast<double>(n)));
}

/// ELU(sum_j w_j V v_j).
inline Var gat_aggregate(Tape& tape, Var weights, const std::vector<Var>& values, Var V) {
  if (weights.value().size() != values.size())
    throw shape_error("gat_aggregate: " + std::to_string(weights.value().size()) + " weights for " +
                      std::to_string(values.size()) + " values");
  std::vector<Var> rows;
  rows.reserve(values.size());
  for (auto v : values) rows.push_back(tape.matvec(V, v));
  return tape.elu(tape.vecmat(weights, tape.stack(rows)));
}

namespace detail {
inline Var attend(Tape& tape, const GeneratorParams& p, const PsiVars& psi, Var self, const std::vector<Var>& others) {
  std::vector<Var> values{self};
  values.insert(values.end(), others.begin(), others.end());
  Var w = p.attention ? gat_attention(tape, self, others, *psi.V, *psi.a) : uniform_weights(tape, values.size());
  return gat_aggregate(tape, w, values, *psi.V);
}
}  // namespace detail

/// r_0 for one ad, recorded on `tape` so that gradients reach the Psi leaves.
inline Var generate(Tape& tape, const GeneratorParams& p, const PsiVars& psi, const GeneratorInput& in) {
  auto consts = [&](const std::vector<Tensor>& ts) {
    std::vector<Var> out;
    for (const auto& t : ts) out.push_back(tape.constant(t));
    return out;
  };
  switch (p.variant) {
    case Variant::RndEmb: {
      Rng rng(in.fallback_seed);
      return tape.constant(rnd_emb(in.dim, rng));
    }
    case Variant::MetaEmb:
      return eg_generate(tape, tape.constant(in.z0), *psi.W, p.gamma);
    case Variant::NgbEmb: {
      if (in.p.empty()) {
        Rng rng(in.fallback_seed);
        return tape.constant(rnd_emb(in.dim, rng));
      }
      Var mean = tape.vecmat(uniform_weights(tape, in.p.size()), tape.stack(consts(in.p)));
      return eg_generate(tape, mean, *psi.W, p.gamma);
    }
    case Variant::GmeP: {
      Var g0 = eg_generate(tape, tape.constant(in.z0), *psi.W, p.gamma);
      return detail::attend(tape, p, psi, g0, consts(in.p));
    }
    case Variant::GmeG: {
      Var g0 = eg_generate(tape, tape.constant(in.z0), *psi.W, p.gamma);
      std::vector<Var> gs;
      for (const auto& z : in.z) gs.push_back(eg_generate(tape, tape.constant(z), *psi.W, p.gamma));
      return detail::attend(tape, p, psi, g0, gs);
    }
    case Variant::GmeA: {
      Var refined = detail::attend(tape, p, psi, tape.constant(in.z0), consts(in.z));
      return eg_generate(tape, refined, *psi.W, p.gamma);
    }
  }
  throw contract_violation("unknown variant");
}

/// Convenience: r_0 as a plain tensor.
inline Tensor generate(const GeneratorParams& p, const GeneratorInput& in) {
  Tape tape;
  auto psi = bind(tape, p);
  return generate(tape, p, psi, in).value();
}

/// Gradient of sum_k seed_k * r0_k with respect to W, V and a (empty where unused).
struct PsiGrad {
  Tensor W, V, a;
};

inline PsiGrad pullback(const GeneratorParams& p, const GeneratorInput& in, const Tensor& seed) {
  Tape tape;
  auto psi = bind(tape, p);
  Var r0 = generate(tape, p, psi, in);
  if (r0.value().shape() != seed.shape())
    throw shape_error("pullback: seed " + shape_str(seed.shape()) + " vs output " + shape_str(r0.value().shape()));
  auto g = tape.backward(tape.dot(r0, tape.constant(seed)));
  PsiGrad out;
  if (psi.W) out.W = g[*psi.W];
  if (psi.V) out.V = g[*psi.V];
  if (psi.a) out.a = g[*psi.a];
  return out;
}

inline Checkpoint to_checkpoint(const GeneratorParams& p, std::uint64_t schema_hash) {
  Checkpoint ck{schema_hash, p.label(), {}};
  ck.params.emplace_back("gamma", Tensor::scalar(p.gamma));
  ck.params.emplace_back("attention", Tensor::scalar(p.attention ? 1.0 : 0.0));
  if (p.W.size()) ck.params.emplace_back("W", p.W);
  if (p.V.size()) ck.params.emplace_back("V", p.V);
  if (p.a.size()) ck.params.emplace_back("a", p.a);
  return ck;
}

inline GeneratorParams generator_from_checkpoint(const Checkpoint& ck, std::uint64_t schema_hash) {
  if (ck.schema_hash != schema_hash) throw checkpoint_error("generator checkpoint was written for a different schema");
  auto name = ck.tag;
  if (auto pos = name.find("\\GAT"); pos != std::string::npos) name.resize(pos);
  GeneratorParams p;
  p.variant = parse_variant(name);
  p.gamma = ck.get("gamma")[0];
  p.attention = ck.get("attention")[0] != 0.0;
  if (ck.has("W")) p.W = ck.get("W");
  if (ck.has("V")) p.V = ck.get("V");
  if (ck.has("a")) p.a = ck.get("a");
  return p;
}

}  // namespace gme
