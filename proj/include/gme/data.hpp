#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gme/random.hpp"
#include "gme/tensor.hpp"

namespace gme {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FieldRole { AdId, AdAttribute, Other };
enum class Arity { Single, Multi };

inline const char* role_name(FieldRole r) {
  switch (r) {
    case FieldRole::AdId: return "ad-identity";
    case FieldRole::AdAttribute: return "ad-attribute";
    case FieldRole::Other: return "other";
  }
  return "?";
}

struct FieldDesc {
  std::string name;
  FieldRole role = FieldRole::Other;
  Arity arity = Arity::Single;

  bool operator==(const FieldDesc&) const = default;
};

class FieldSchema {
 public:
  FieldSchema() = default;
  explicit FieldSchema(std::vector<FieldDesc> fields) : fields_(std::move(fields)) {
    std::size_t ids = 0;
    for (std::size_t f = 0; f < fields_.size(); ++f) {
      switch (fields_[f].role) {
        case FieldRole::AdId:
          ++ids;
          id_field_ = f;
          if (fields_[f].arity != Arity::Single) throw config_error("ad-identity field must be single-valued");
          break;
        case FieldRole::AdAttribute: attr_fields_.push_back(f); break;
        case FieldRole::Other: other_fields_.push_back(f); break;
      }
    }
    if (ids != 1) throw config_error("schema needs exactly one ad-identity field, got " + std::to_string(ids));
    if (attr_fields_.empty()) throw config_error("schema needs at least one ad-attribute field");
  }

  std::size_t size() const { return fields_.size(); }
  const FieldDesc& operator[](std::size_t f) const { return fields_[f]; }
  const std::vector<FieldDesc>& fields() const { return fields_; }
  std::size_t id_field() const { return id_field_; }
  const std::vector<std::size_t>& attribute_fields() const { return attr_fields_; }
  const std::vector<std::size_t>& other_fields() const { return other_fields_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t f = 0; f < fields_.size(); ++f)
      if (fields_[f].name == name) return f;
    throw config_error("no field named '" + name + "'");
  }

  /// Stable textual fingerprint; checkpoints embed it to reject foreign schemas.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("gme-schema");
    for (const auto& f : fields_) {
      h = fnv1a(f.name, h);
      h = fnv1a(role_name(f.role), h);
      h = fnv1a(f.arity == Arity::Multi ? "multi" : "single", h);
    }
    return h;
  }

  bool operator==(const FieldSchema& o) const { return fields_ == o.fields_; }

 private:
  std::vector<FieldDesc> fields_;
  std::size_t id_field_ = 0;
  std::vector<std::size_t> attr_fields_;
  std::vector<std::size_t> other_fields_;
};

/// Per-field token dictionaries. Indices are contiguous from 0; the OOV index
/// of a field equals its token count (one past the last real token).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::size_t n_fields) : tokens_(n_fields), lookup_(n_fields) {}

  std::size_t fields() const { return tokens_.size(); }
  std::size_t tokens(std::size_t f) const { return tokens_[f].size(); }
  /// Rows an embedding table needs for this field, OOV included.
  std::size_t rows(std::size_t f) const { return tokens_[f].size() + 1; }
  std::uint32_t oov(std::size_t f) const { return static_cast<std::uint32_t>(tokens_[f].size()); }

  std::uint32_t add(std::size_t f, const std::string& tok) {
    auto [it, fresh] = lookup_[f].try_emplace(tok, static_cast<std::uint32_t>(tokens_[f].size()));
    if (fresh) tokens_[f].push_back(tok);
    return it->second;
  }

  std::uint32_t encode(std::size_t f, const std::string& tok) const {
    auto it = lookup_[f].find(tok);
    return it == lookup_[f].end() ? oov(f) : it->second;
  }

  std::optional<std::uint32_t> find(std::size_t f, const std::string& tok) const {
    auto it = lookup_[f].find(tok);
    if (it == lookup_[f].end()) return std::nullopt;
    return it->second;
  }

  const std::string& decode(std::size_t f, std::uint32_t idx) const {
    static const std::string kOov = "<oov>";
    return idx < tokens_[f].size() ? tokens_[f][idx] : kOov;
  }

 private:
  std::vector<std::vector<std::string>> tokens_;
  std::vector<std::unordered_map<std::string, std::uint32_t>> lookup_;
};

/// One labeled impression with raw tokens; tokens[f] holds one entry for
/// single-valued fields and any number for multi-valued ones.
struct RawSample {
  int label = 0;
  std::vector<std::vector<std::string>> tokens;
};

struct EncodedSample {
  int label = 0;
  std::vector<std::vector<std::uint32_t>> fields;
};

/// Unknown tokens map to the field's OOV index. An empty field encodes as [OOV].
inline EncodedSample encode(const RawSample& s, const FieldSchema& schema, const Vocabulary& vocab) {
  if (s.tokens.size() != schema.size())
    throw data_error("sample has " + std::to_string(s.tokens.size()) + " fields, schema has " +
                     std::to_string(schema.size()));
  EncodedSample out{s.label, std::vector<std::vector<std::uint32_t>>(schema.size())};
  for (std::size_t f = 0; f < schema.size(); ++f) {
    for (const auto& t : s.tokens[f]) out.fields[f].push_back(vocab.encode(f, t));
    if (out.fields[f].empty()) out.fields[f].push_back(vocab.oov(f));
  }
  return out;
}

inline RawSample decode(const EncodedSample& s, const Vocabulary& vocab) {
  RawSample out{s.label, std::vector<std::vector<std::string>>(s.fields.size())};
  for (std::size_t f = 0; f < s.fields.size(); ++f)
    for (auto idx : s.fields[f]) out.tokens[f].push_back(vocab.decode(f, idx));
  return out;
}

class Dataset;

/// Non-owning view of one row of a Dataset.
class SampleView {
 public:
  SampleView(const Dataset* ds, std::size_t row) : ds_(ds), row_(row) {}
  int label() const;
  std::uint32_t ad() const;
  std::span<const std::uint32_t> field(std::size_t f) const;
  std::size_t row() const { return row_; }
  EncodedSample materialize() const;

 private:
  const Dataset* ds_;
  std::size_t row_;
};

/// Immutable-after-build columnar store of encoded samples. Every field is kept
/// in CSR form so multi-valued fields need no per-row allocation.
class Dataset {
 public:
  Dataset() = default;
  Dataset(FieldSchema schema, std::shared_ptr<const Vocabulary> vocab)
      : schema_(std::move(schema)), vocab_(std::move(vocab)), offsets_(schema_.size(), {0}), indices_(schema_.size()) {
    if (vocab_->fields() != schema_.size()) throw data_error("vocabulary and schema disagree on field count");
  }

  const FieldSchema& schema() const { return schema_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  SampleView operator[](std::size_t i) const { return SampleView(this, i); }
  int label(std::size_t i) const { return labels_[i]; }
  std::uint32_t ad(std::size_t i) const { return field(i, schema_.id_field())[0]; }
  std::span<const std::uint32_t> field(std::size_t i, std::size_t f) const {
    const auto& off = offsets_[f];
    return std::span<const std::uint32_t>(indices_[f]).subspan(off[i], off[i + 1] - off[i]);
  }

  void append(const EncodedSample& s) {
    if (s.fields.size() != schema_.size()) throw data_error("encoded sample does not match schema");
    if (s.label != 0 && s.label != 1) throw data_error("label must be 0 or 1");
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      if (s.fields[f].empty()) throw data_error("field '" + schema_[f].name + "' is empty");
      if (schema_[f].arity == Arity::Single && s.fields[f].size() != 1)
        throw data_error("single-valued field '" + schema_[f].name + "' holds several tokens");
      for (auto idx : s.fields[f])
        if (idx > vocab_->oov(f)) throw data_error("index outside vocabulary in field '" + schema_[f].name + "'");
      indices_[f].insert(indices_[f].end(), s.fields[f].begin(), s.fields[f].end());
      offsets_[f].push_back(static_cast<std::uint32_t>(indices_[f].size()));
    }
    labels_.push_back(static_cast<std::uint8_t>(s.label));
    ++ad_counts_[ad(size() - 1)];
  }

  void append_row(const Dataset& src, std::size_t i) {
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      auto v = src.field(i, f);
      indices_[f].insert(indices_[f].end(), v.begin(), v.end());
      offsets_[f].push_back(static_cast<std::uint32_t>(indices_[f].size()));
    }
    labels_.push_back(static_cast<std::uint8_t>(src.label(i)));
    ++ad_counts_[ad(size() - 1)];
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out(schema_, vocab_);
    for (auto r : rows) out.append_row(*this, r);
    return out;
  }

  const std::unordered_map<std::uint32_t, std::size_t>& ad_counts() const { return ad_counts_; }

  /// Ad ids in ascending order.
  std::vector<std::uint32_t> ads() const {
    std::vector<std::uint32_t> out;
    out.reserve(ad_counts_.size());
    for (const auto& [a, n] : ad_counts_) out.push_back(a);
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Row indices per ad, in corpus order.
  std::unordered_map<std::uint32_t, std::vector<std::size_t>> rows_by_ad() const {
    std::unordered_map<std::uint32_t, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < size(); ++i) out[ad(i)].push_back(i);
    return out;
  }

  double positive_rate() const {
    if (labels_.empty()) return 0.0;
    std::size_t pos = 0;
    for (auto y : labels_) pos += y;
    return static_cast<double>(pos) / static_cast<double>(labels_.size());
  }

 private:
  FieldSchema schema_;
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<std::uint8_t> labels_;
  std::vector<std::vector<std::uint32_t>> offsets_;
  std::vector<std::vector<std::uint32_t>> indices_;
  std::unordered_map<std::uint32_t, std::size_t> ad_counts_;
};

inline int SampleView::label() const { return ds_->label(row_); }
inline std::uint32_t SampleView::ad() const { return ds_->ad(row_); }
inline std::span<const std::uint32_t> SampleView::field(std::size_t f) const { return ds_->field(row_, f); }
inline EncodedSample SampleView::materialize() const {
  EncodedSample s{label(), {}};
  for (std::size_t f = 0; f < ds_->schema().size(); ++f) {
    auto v = field(f);
    s.fields.emplace_back(v.begin(), v.end());
  }
  return s;
}

/// Builds the vocabulary from a corpus in first-appearance order, then encodes it.
inline Dataset build_dataset(const FieldSchema& schema, const std::vector<RawSample>& raw) {
  auto vocab = std::make_shared<Vocabulary>(schema.size());
  for (const auto& s : raw) {
    if (s.tokens.size() != schema.size()) throw data_error("raw sample does not match schema");
    for (std::size_t f = 0; f < schema.size(); ++f)
      for (const auto& t : s.tokens[f]) vocab->add(f, t);
  }
  Dataset ds(schema, vocab);
  for (const auto& s : raw) ds.append(encode(s, schema, *vocab));
  return ds;
}

struct OldNewSplit {
  Dataset old_ads;
  Dataset new_ads;
};

/// Ads with strictly more than `threshold` samples are old; the rest are new.
inline OldNewSplit split_old_new(const Dataset& ds, std::size_t threshold) {
  std::vector<std::size_t> old_rows, new_rows;
  const auto& counts = ds.ad_counts();
  for (std::size_t i = 0; i < ds.size(); ++i)
    (counts.at(ds.ad(i)) > threshold ? old_rows : new_rows).push_back(i);
  if (old_rows.empty()) throw config_error("old/new split: no ad has more than " + std::to_string(threshold) + " samples");
  return {ds.subset(old_rows), ds.subset(new_rows)};
}

struct WarmupPartition {
  std::vector<Dataset> rounds;
  Dataset test;
};

/// Per new ad, the first rounds*per_round samples (corpus order) become warm-up
/// data when the ad has at least one sample left over for testing.
inline WarmupPartition partition_new_ads(const Dataset& ds, std::size_t rounds, std::size_t per_round) {
  std::vector<std::vector<std::size_t>> round_rows(rounds);
  std::vector<std::size_t> test_rows;
  const std::size_t need = rounds * per_round;
  const auto by_ad = ds.rows_by_ad();
  for (auto a : ds.ads()) {
    const auto& rows = by_ad.at(a);
    const bool eligible = rounds > 0 && rows.size() >= need + 1;
    std::size_t k = 0;
    if (eligible)
      for (; k < need; ++k) round_rows[k / per_round].push_back(rows[k]);
    for (; k < rows.size(); ++k) test_rows.push_back(rows[k]);
  }
  WarmupPartition out;
  for (auto& r : round_rows) {
    std::sort(r.begin(), r.end());
    out.rounds.push_back(ds.subset(r));
  }
  std::sort(test_rows.begin(), test_rows.end());
  out.test = ds.subset(test_rows);
  return out;
}

struct MinibatchPair {
  std::vector<std::size_t> a;
  std::vector<std::size_t> b;
};

/// Draws 2M distinct rows from `ad_rows` without replacement; the first M form
/// D_a and the rest D_b. Returns nothing when the ad has fewer than 2M rows.
inline std::optional<MinibatchPair> sample_disjoint_minibatches(std::span<const std::size_t> ad_rows, std::size_t m,
                                                                Rng& rng) {
  if (m == 0) throw contract_violation("minibatch size must be positive");
  if (ad_rows.size() < 2 * m) return std::nullopt;
  std::vector<std::size_t> pool(ad_rows.begin(), ad_rows.end());
  for (std::size_t i = 0; i < 2 * m; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  MinibatchPair out;
  out.a.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
  out.b.assign(pool.begin() + static_cast<std::ptrdiff_t>(m), pool.begin() + static_cast<std::ptrdiff_t>(2 * m));
  return out;
}

}  // namespace gme
