#pragma once

// Attribute-sharing ad graph built lazily through a reverse index: for a
// query ad, candidates are the old ads found in the postings of the query's
// attribute tokens, scored by how many attribute fields they share.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "gme/ctr_model.hpp"
#include "gme/data.hpp"
#include "gme/random.hpp"

namespace gme {

/// Attribute tokens of one ad, one token list per ad-attribute field (schema order).
struct AttributeRecord {
  std::vector<std::vector<std::uint32_t>> slots;
};

using AdAttributes = std::map<std::uint32_t, AttributeRecord>;

/// Attributes of every ad in `ds`, taken from the ad's first sample.
inline AdAttributes ad_attributes(const Dataset& ds) {
  AdAttributes out;
  const auto& attr = ds.schema().attribute_fields();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto a = ds.ad(i);
    if (out.count(a)) continue;
    AttributeRecord rec;
    for (auto f : attr) {
      auto v = ds.field(i, f);
      rec.slots.emplace_back(v.begin(), v.end());
    }
    out.emplace(a, std::move(rec));
  }
  return out;
}

struct GraphConfig {
  /// Postings shared by more than this fraction of old ads are dropped.
  double max_posting_fraction = 0.2;
  /// Attribute slots that take part in retrieval; empty means all.
  std::vector<std::size_t> slots;
};

class ReverseIndex {
 public:
  using Key = std::pair<std::uint32_t, std::uint32_t>;  // (attribute slot, token)

  std::size_t old_ads() const { return n_old_; }
  std::size_t slot_count() const { return n_slots_; }
  const std::map<Key, std::vector<std::uint32_t>>& postings() const { return postings_; }
  const std::set<Key>& dropped() const { return dropped_; }
  bool uses_slot(std::size_t k) const { return slot_used_.empty() || slot_used_.at(k); }

  const std::vector<std::uint32_t>* find(std::uint32_t slot, std::uint32_t token) const {
    auto it = postings_.find({slot, token});
    return it == postings_.end() ? nullptr : &it->second;
  }

  bool operator==(const ReverseIndex&) const = default;

 private:
  friend ReverseIndex build_reverse_index(const AdAttributes&, const std::vector<std::uint32_t>&, std::size_t,
                                          const GraphConfig&);
  std::size_t n_old_ = 0;
  std::size_t n_slots_ = 0;
  std::vector<bool> slot_used_;
  std::map<Key, std::vector<std::uint32_t>> postings_;
  std::set<Key> dropped_;
};

/// `oov` holds each slot's OOV token; OOV tokens carry no identity and are not indexed.
inline ReverseIndex build_reverse_index(const AdAttributes& old_ads, const std::vector<std::uint32_t>& oov,
                                        std::size_t n_slots, const GraphConfig& cfg = {}) {
  ReverseIndex idx;
  idx.n_old_ = old_ads.size();
  idx.n_slots_ = n_slots;
  if (!cfg.slots.empty()) {
    idx.slot_used_.assign(n_slots, false);
    for (auto k : cfg.slots) idx.slot_used_.at(k) = true;
  }
  for (const auto& [ad, rec] : old_ads) {
    if (rec.slots.size() != n_slots) throw contract_violation("attribute record does not match slot count");
    for (std::uint32_t k = 0; k < n_slots; ++k) {
      if (!idx.uses_slot(k)) continue;
      for (auto tok : rec.slots[k]) {
        if (tok == oov.at(k)) continue;
        auto& p = idx.postings_[{k, tok}];
        if (p.empty() || p.back() != ad) p.push_back(ad);  // ads visited in ascending order
      }
    }
  }
  const double limit = cfg.max_posting_fraction * static_cast<double>(idx.n_old_);
  for (auto it = idx.postings_.begin(); it != idx.postings_.end();) {
    if (static_cast<double>(it->second.size()) > limit) {
      idx.dropped_.insert(it->first);
      it = idx.postings_.erase(it);
    } else {
      ++it;
    }
  }
  return idx;
}

inline std::vector<std::uint32_t> attribute_oov(const FieldSchema& schema, const Vocabulary& vocab) {
  std::vector<std::uint32_t> out;
  for (auto f : schema.attribute_fields()) out.push_back(vocab.oov(f));
  return out;
}

inline ReverseIndex build_reverse_index(const Dataset& old, const GraphConfig& cfg = {}) {
  return build_reverse_index(ad_attributes(old), attribute_oov(old.schema(), old.vocab()),
                             old.schema().attribute_fields().size(), cfg);
}

struct Neighbor {
  std::uint32_t ad = 0;
  std::uint32_t score = 0;
  bool operator==(const Neighbor&) const = default;
};

struct NeighborSet {
  std::uint32_t query = 0;
  std::vector<Neighbor> entries;
};

/// Shared-attribute scores for every candidate reachable through the index:
/// one point per attribute slot in which the candidate holds any query token.
inline std::map<std::uint32_t, std::uint32_t> candidate_scores(const AttributeRecord& query, const ReverseIndex& index,
                                                               std::optional<std::uint32_t> exclude) {
  std::map<std::uint32_t, std::uint32_t> score;
  std::vector<std::uint32_t> hit;
  for (std::uint32_t k = 0; k < query.slots.size(); ++k) {
    hit.clear();
    for (auto tok : query.slots[k])
      if (auto* p = index.find(k, tok)) hit.insert(hit.end(), p->begin(), p->end());
    std::sort(hit.begin(), hit.end());
    hit.erase(std::unique(hit.begin(), hit.end()), hit.end());
    for (auto ad : hit)
      if (!exclude || ad != *exclude) ++score[ad];
  }
  return score;
}

/// Top-N candidates by score; ties at every score level are ordered uniformly at random.
inline NeighborSet retrieve_neighbors(std::uint32_t query_ad, const AttributeRecord& query, const ReverseIndex& index,
                                      std::size_t n, Rng& rng) {
  NeighborSet out{query_ad, {}};
  if (n == 0) return out;
  auto scores = candidate_scores(query, index, query_ad);
  std::vector<Neighbor> cand;
  cand.reserve(scores.size());
  for (const auto& [ad, s] : scores) cand.push_back({ad, s});
  shuffle(cand, rng);
  std::stable_sort(cand.begin(), cand.end(), [](const Neighbor& a, const Neighbor& b) { return a.score > b.score; });
  if (cand.size() > n) cand.resize(n);
  out.entries = std::move(cand);
  return out;
}

/// Sorted "field:token<TAB>id,id,..." lines, one per posting list.
inline void dump_index(const ReverseIndex& index, const FieldSchema& schema, const Vocabulary& vocab, std::ostream& out) {
  const auto& attr = schema.attribute_fields();
  const auto idf = schema.id_field();
  std::vector<std::string> lines;
  for (const auto& [key, ads] : index.postings()) {
    const auto f = attr[key.first];
    std::string line = schema[f].name + ":" + vocab.decode(f, key.second) + "\t";
    for (std::size_t i = 0; i < ads.size(); ++i) line += (i ? "," : "") + vocab.decode(idf, ads[i]);
    lines.push_back(std::move(line));
  }
  std::sort(lines.begin(), lines.end());
  for (const auto& l : lines) out << l << '\n';
}

/// Generator-side view of an ad: its own attribute vector and its neighbors' data.
struct NeighborTensors {
  std::vector<Tensor> id_embeddings;  // p_i
  std::vector<Tensor> attributes;     // z_i
};

/// Concatenation of the pooled attribute-field embeddings of an ad, in schema order.
inline Tensor attribute_vector(const AttributeRecord& rec, const BaseModel& m) {
  const auto& attr = m.schema.attribute_fields();
  std::vector<double> z;
  z.reserve(attr.size() * m.dim);
  for (std::size_t k = 0; k < attr.size(); ++k) {
    BagIndices bag;
    bag.push_row(rec.slots.at(k));
    const Tensor pooled = pool_rows(m.tables[attr[k]], bag);
    z.insert(z.end(), pooled.storage().begin(), pooled.storage().end());
  }
  return Tensor::vector(std::move(z));
}

inline NeighborTensors neighbor_tensors(const NeighborSet& nbrs, const AdAttributes& attributes, const BaseModel& m) {
  NeighborTensors out;
  const auto& ids = m.id_table();
  for (const auto& e : nbrs.entries) {
    if (e.ad >= ids.rows()) throw contract_violation("neighbor " + std::to_string(e.ad) + " has no ID embedding row");
    auto row = ids.row(e.ad);
    out.id_embeddings.push_back(Tensor::vector(std::vector<double>(row.begin(), row.end())));
    auto it = attributes.find(e.ad);
    if (it == attributes.end()) throw contract_violation("neighbor " + std::to_string(e.ad) + " has no attributes");
    out.attributes.push_back(attribute_vector(it->second, m));
  }
  return out;
}

}  // namespace gme
