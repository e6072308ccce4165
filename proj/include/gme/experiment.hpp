#pragma once

// Experiment configuration and the staged, resumable pipeline:
//   ingest -> train-base -> build-graph -> train-meta -> evaluate -> report
//
// Layout of the output directory:
//   MANIFEST.json               config, config hash, per-stage status and file digests
//   data/schema.json            field schema
//   data/corpus.csv             the full corpus as ingested
//   graph/index.tsv             reverse index over old ads
//   seed-<s>/base.ckpt          frozen base model
//   seed-<s>/base_loss.csv
//   seed-<s>/psi/<variant>.ckpt generator parameters
//   seed-<s>/curves/<variant>.csv
//   seed-<s>/metrics.csv
//   metrics.csv, report.txt
//
// A stage is skipped when the manifest records it complete under the same key
// (its config section plus the digests of its inputs), every output still has
// its recorded digest, and no earlier stage ran in this invocation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gme/dataset_io.hpp"
#include "gme/eval.hpp"
#include "gme/movielens.hpp"
#include "gme/synthetic.hpp"

namespace gme {

inline constexpr int kConfigVersion = 1;

struct stage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A generator variant plus the attention switch; "GME-A\GAT" is GME-A with uniform pooling.
struct VariantSpec {
  Variant variant = Variant::RndEmb;
  bool attention = true;

  std::string label() const { return variant_name(variant) + (attention || !uses_attention(variant) ? "" : "\\GAT"); }
  bool operator==(const VariantSpec&) const = default;
};

inline VariantSpec parse_variant_spec(const std::string& s) {
  const auto pos = s.find("\\GAT");
  if (pos == std::string::npos) return {parse_variant(s), true};
  if (pos + 4 != s.size()) throw config_error("unknown variant '" + s + "'");
  VariantSpec v{parse_variant(s.substr(0, pos)), false};
  if (!uses_attention(v.variant)) throw config_error("variant '" + s + "' has no attention to ablate");
  return v;
}

/// File-name form of a label ("GME-A\GAT" -> "GME-A_noGAT").
inline std::string file_label(const std::string& label) {
  const auto pos = label.find("\\GAT");
  return pos == std::string::npos ? label : label.substr(0, pos) + "_noGAT";
}

struct SourceConfig {
  std::string kind = "synthetic";  // "synthetic" | "movielens"
  std::string movielens_dir;       // holds ratings.dat, movies.dat, users.dat
  SyntheticSpec synthetic{};
};

struct ExperimentConfig {
  SourceConfig source;
  std::size_t threshold = 50;
  ModelConfig model;
  std::size_t base_epochs = 5;
  std::size_t base_batch = 256;
  AdamConfig base_adam{};
  std::size_t neighbors = 10;
  double max_posting_fraction = 0.2;
  std::vector<std::string> graph_fields;  // attribute fields used for retrieval; empty = all
  std::map<std::string, double> gamma;    // per variant name; missing entries use the default
  MetaConfig meta;
  WarmupConfig warmup;
  std::size_t warm_rounds = 2;
  std::size_t warm_per_round = 5;
  std::vector<std::string> variants{"RndEmb", "MetaEmb", "NgbEmb", "GME-P", "GME-G", "GME-A"};
  bool gat_ablation = true;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out_dir = "runs/default";

  double gamma_for(Variant v) const {
    auto it = gamma.find(variant_name(v));
    return it == gamma.end() ? default_gamma(v) : it->second;
  }

  /// Requested variants followed by the attention-ablated copies when enabled.
  std::vector<VariantSpec> variant_specs() const {
    std::vector<VariantSpec> out;
    for (const auto& s : variants) {
      auto v = parse_variant_spec(s);
      if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    if (gat_ablation)
      for (const auto& s : variants) {
        auto v = parse_variant_spec(s);
        if (!uses_attention(v.variant) || !v.attention) continue;
        v.attention = false;
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
      }
    return out;
  }

  void validate() const {
    namespace fs = std::filesystem;
    if (source.kind == "movielens") {
      for (const char* f : {"ratings.dat", "movies.dat", "users.dat"})
        if (!fs::exists(fs::path(source.movielens_dir) / f))
          throw config_error("source.movielens_dir: missing " + (fs::path(source.movielens_dir) / f).string());
    } else if (source.kind != "synthetic") {
      throw config_error("source.kind must be 'synthetic' or 'movielens'");
    }
    if (threshold < 1) throw config_error("threshold must be at least 1");
    if (model.dim == 0) throw config_error("model.dim must be positive");
    for (auto h : model.hidden)
      if (h == 0) throw config_error("model.hidden widths must be positive");
    if (base_batch == 0) throw config_error("base.batch_size must be positive");
    if (!(max_posting_fraction > 0.0 && max_posting_fraction <= 1.0))
      throw config_error("graph.max_posting_fraction must lie in (0, 1]");
    for (const auto& [name, g] : gamma) {
      parse_variant(name);
      if (!(g > 0.0 && g <= 1.0)) throw config_error("gamma for " + name + " must lie in (0, 1]");
    }
    meta.validate();
    for (const AdamConfig* a : {&base_adam, &meta.adam, &warmup.adam})
      if (!(a->lr > 0.0) || !(a->beta1 >= 0.0 && a->beta1 < 1.0) || !(a->beta2 >= 0.0 && a->beta2 < 1.0) ||
          !(a->eps > 0.0))
        throw config_error("optimizer settings out of range");
    if (warmup.batch_size == 0) throw config_error("warmup.batch_size must be positive");
    if (warm_rounds > 0 && warm_per_round == 0) throw config_error("warmup.per_round must be positive");
    if (variants.empty()) throw config_error("variants must not be empty");
    variant_specs();
    if (seeds.empty()) throw config_error("seeds must not be empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw config_error("seeds must be distinct");
    if (out_dir.empty()) throw config_error("out_dir must not be empty");
  }
};

// ---- JSON ---------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline json adam_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

/// Reads keys from a JSON object into typed slots and rejects unknown keys.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw config_error(where_ + ": expected an object");
  }
  /// Call after the last get(); any key not asked for is a typo.
  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw config_error(where_ + ": unknown key '" + k + "'");
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw config_error(where_ + "." + key + ": wrong type");
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_adam(const json& j, const std::string& where, AdamConfig& a) {
  ConfigReader r(j, where);
  r.get("lr", a.lr);
  r.get("beta1", a.beta1);
  r.get("beta2", a.beta2);
  r.get("eps", a.eps);
  r.done();
}

inline json synthetic_json(const SyntheticSpec& s) {
  return {{"n_ads", s.n_ads},
          {"samples_per_ad", s.samples_per_ad},
          {"n_new_ads", s.n_new_ads},
          {"new_samples_per_ad", s.new_samples_per_ad},
          {"n_attr_fields", s.n_attr_fields},
          {"attr_cardinality", s.attr_cardinality},
          {"n_users", s.n_users},
          {"n_user_groups", s.n_user_groups},
          {"n_clusters", s.n_clusters},
          {"attr_purity", s.attr_purity},
          {"signal", s.signal},
          {"cluster_scale", s.cluster_scale},
          {"token_scale", s.token_scale},
          {"residual_scale", s.residual_scale},
          {"user_scale", s.user_scale},
          {"interaction_scale", s.interaction_scale},
          {"seed", s.seed}};
}

inline void read_synthetic(const json& j, SyntheticSpec& s) {
  ConfigReader r(j, "source.synthetic");
  r.get("n_ads", s.n_ads);
  r.get("samples_per_ad", s.samples_per_ad);
  r.get("n_new_ads", s.n_new_ads);
  r.get("new_samples_per_ad", s.new_samples_per_ad);
  r.get("n_attr_fields", s.n_attr_fields);
  r.get("attr_cardinality", s.attr_cardinality);
  r.get("n_users", s.n_users);
  r.get("n_user_groups", s.n_user_groups);
  r.get("n_clusters", s.n_clusters);
  r.get("attr_purity", s.attr_purity);
  r.get("signal", s.signal);
  r.get("cluster_scale", s.cluster_scale);
  r.get("token_scale", s.token_scale);
  r.get("residual_scale", s.residual_scale);
  r.get("user_scale", s.user_scale);
  r.get("interaction_scale", s.interaction_scale);
  r.get("seed", s.seed);
  r.done();
}

}  // namespace detail

/// Every setting, defaults included.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  using detail::adam_json;
  nlohmann::json source{{"kind", c.source.kind}};
  if (c.source.kind == "movielens")
    source["movielens_dir"] = c.source.movielens_dir;
  else
    source["synthetic"] = detail::synthetic_json(c.source.synthetic);
  nlohmann::json gamma = nlohmann::json::object();
  for (auto v : all_variants())
    if (is_trainable(v)) gamma[variant_name(v)] = c.gamma_for(v);
  return {
      {"version", kConfigVersion},
      {"source", source},
      {"threshold", c.threshold},
      {"model", {{"dim", c.model.dim}, {"hidden", c.model.hidden}, {"embedding_init", c.model.embedding_init}}},
      {"base", {{"epochs", c.base_epochs}, {"batch_size", c.base_batch}, {"adam", adam_json(c.base_adam)}}},
      {"graph",
       {{"neighbors", c.neighbors}, {"max_posting_fraction", c.max_posting_fraction}, {"fields", c.graph_fields}}},
      {"gamma", gamma},
      {"meta",
       {{"beta", c.meta.beta},
        {"eta", c.meta.eta},
        {"minibatch", c.meta.minibatch},
        {"epochs", c.meta.epochs},
        {"mode", c.meta.mode == MetaGradMode::ExactHvp ? "exact-hvp" : "first-order"},
        {"adam", adam_json(c.meta.adam)}}},
      {"warmup",
       {{"rounds", c.warm_rounds},
        {"per_round", c.warm_per_round},
        {"epochs", c.warmup.epochs},
        {"batch_size", c.warmup.batch_size},
        {"adam", adam_json(c.warmup.adam)}}},
      {"variants", c.variants},
      {"gat_ablation", c.gat_ablation},
      {"seeds", c.seeds},
      {"out_dir", c.out_dir},
  };
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::ConfigReader;
  ExperimentConfig c;
  ConfigReader r(j, "config");
  int version = 0;
  r.get("version", version);
  if (version != kConfigVersion)
    throw config_error("config version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kConfigVersion) + ")");
  if (auto* s = r.child("source")) {
    ConfigReader rs(*s, "source");
    rs.get("kind", c.source.kind);
    rs.get("movielens_dir", c.source.movielens_dir);
    if (auto* syn = rs.child("synthetic")) detail::read_synthetic(*syn, c.source.synthetic);
    rs.done();
  }
  r.get("threshold", c.threshold);
  if (auto* m = r.child("model")) {
    ConfigReader rm(*m, "model");
    rm.get("dim", c.model.dim);
    rm.get("hidden", c.model.hidden);
    rm.get("embedding_init", c.model.embedding_init);
    rm.done();
  }
  if (auto* b = r.child("base")) {
    ConfigReader rb(*b, "base");
    rb.get("epochs", c.base_epochs);
    rb.get("batch_size", c.base_batch);
    if (auto* a = rb.child("adam")) detail::read_adam(*a, "base.adam", c.base_adam);
    rb.done();
  }
  if (auto* g = r.child("graph")) {
    ConfigReader rg(*g, "graph");
    rg.get("neighbors", c.neighbors);
    rg.get("max_posting_fraction", c.max_posting_fraction);
    rg.get("fields", c.graph_fields);
    rg.done();
  }
  if (auto* g = r.child("gamma")) {
    if (!g->is_object()) throw config_error("gamma: expected an object");
    for (const auto& [k, v] : g->items()) {
      if (!v.is_number()) throw config_error("gamma." + k + ": expected a number");
      c.gamma[k] = v.get<double>();
    }
  }
  if (auto* m = r.child("meta")) {
    ConfigReader rm(*m, "meta");
    rm.get("beta", c.meta.beta);
    rm.get("eta", c.meta.eta);
    rm.get("minibatch", c.meta.minibatch);
    rm.get("epochs", c.meta.epochs);
    std::string mode = "exact-hvp";
    rm.get("mode", mode);
    if (mode == "exact-hvp")
      c.meta.mode = MetaGradMode::ExactHvp;
    else if (mode == "first-order")
      c.meta.mode = MetaGradMode::FirstOrder;
    else
      throw config_error("meta.mode must be 'exact-hvp' or 'first-order'");
    if (auto* a = rm.child("adam")) detail::read_adam(*a, "meta.adam", c.meta.adam);
    rm.done();
  }
  if (auto* w = r.child("warmup")) {
    ConfigReader rw(*w, "warmup");
    rw.get("rounds", c.warm_rounds);
    rw.get("per_round", c.warm_per_round);
    rw.get("epochs", c.warmup.epochs);
    rw.get("batch_size", c.warmup.batch_size);
    if (auto* a = rw.child("adam")) detail::read_adam(*a, "warmup.adam", c.warmup.adam);
    rw.done();
  }
  r.get("variants", c.variants);
  r.get("gat_ablation", c.gat_ablation);
  r.get("seeds", c.seeds);
  r.get("out_dir", c.out_dir);
  r.done();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error("config " + path + ": " + e.what());
  }
  auto c = config_from_json(j);
  // relative dataset paths are taken relative to the config file
  if (c.source.kind == "movielens" && !c.source.movielens_dir.empty() &&
      std::filesystem::path(c.source.movielens_dir).is_relative())
    c.source.movielens_dir = (std::filesystem::path(path).parent_path() / c.source.movielens_dir).string();
  return c;
}

inline std::string config_hash(const ExperimentConfig& c) { return sha256_hex(to_json(c).dump()); }

// ---- files --------------------------------------------------------------

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw stage_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw stage_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw stage_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- results ------------------------------------------------------------

struct ReportRow {
  std::string variant;
  std::vector<std::string> phases;
  std::vector<double> auc, loss;  // seed means, one per phase
  std::size_t seeds = 0;
};

/// Seed-averaged AUC and loss per (variant, phase), variants in first-seen order.
inline std::vector<ReportRow> summarize(const std::vector<PhaseResult>& results) {
  std::vector<ReportRow> rows;
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> acc;
  for (const auto& r : results) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& x) { return x.variant == r.variant; });
    if (it == rows.end()) {
      rows.push_back({r.variant, {}, {}, {}, 0});
      it = rows.end() - 1;
    }
    if (std::find(it->phases.begin(), it->phases.end(), r.phase) == it->phases.end()) it->phases.push_back(r.phase);
    auto& [a, l] = acc[{r.variant, r.phase}];
    a.push_back(r.auc);
    l.push_back(r.loss);
  }
  for (auto& row : rows) {
    for (const auto& ph : row.phases) {
      const auto& [a, l] = acc.at({row.variant, ph});
      row.auc.push_back(std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size()));
      row.loss.push_back(std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size()));
      row.seeds = a.size();
    }
  }
  return rows;
}

inline std::string render_report(const std::vector<ReportRow>& rows) {
  std::vector<std::string> phases;
  for (const auto& r : rows)
    for (const auto& p : r.phases)
      if (std::find(phases.begin(), phases.end(), p) == phases.end()) phases.push_back(p);
  std::ostringstream out;
  out << std::left << std::setw(12) << "variant";
  for (const auto& p : phases) out << std::setw(12) << (p + " AUC") << std::setw(10) << "loss";
  out << "seeds\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << std::setw(12) << r.variant;
    for (const auto& p : phases) {
      auto it = std::find(r.phases.begin(), r.phases.end(), p);
      if (it == r.phases.end()) {
        out << std::setw(12) << "-" << std::setw(10) << "-";
        continue;
      }
      const auto k = static_cast<std::size_t>(it - r.phases.begin());
      out << std::setw(12) << r.auc[k] << std::setw(10) << r.loss[k];
    }
    out << r.seeds << '\n';
  }
  return out.str();
}

inline std::vector<PhaseResult> read_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "variant,phase,seed,auc,loss") throw stage_error("metrics CSV has an unexpected header");
  std::vector<PhaseResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = split(line, ',');
    if (c.size() != 5) throw stage_error("metrics CSV: malformed row");
    PhaseResult r;
    r.variant = c[0];
    r.phase = c[1];
    r.seed = std::stoull(c[2]);
    r.auc = std::stod(c[3]);
    r.loss = std::stod(c[4]);
    out.push_back(r);
  }
  return out;
}

// ---- pipeline -----------------------------------------------------------

enum class Stage { Ingest, TrainBase, BuildGraph, TrainMeta, Evaluate, Report };

inline const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::Ingest,    Stage::TrainBase, Stage::BuildGraph,
                                    Stage::TrainMeta, Stage::Evaluate,  Stage::Report};
  return s;
}

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::TrainBase: return "train-base";
    case Stage::BuildGraph: return "build-graph";
    case Stage::TrainMeta: return "train-meta";
    case Stage::Evaluate: return "evaluate";
    case Stage::Report: return "report";
  }
  return "?";
}

inline std::optional<Stage> parse_stage(const std::string& s) {
  for (auto st : all_stages())
    if (stage_name(st) == s) return st;
  return std::nullopt;
}

/// The corpus as later stages see it, always re-read from the ingested files.
struct Corpus {
  Dataset full;
  OldNewSplit split;
  WarmupPartition partition;
  AdAttributes old_attributes;
  ReverseIndex index;
};

struct SweepRow {
  std::string axis_value;
  std::string variant;
  std::uint64_t seed = 0;
  double auc = 0.0, loss = 0.0;
};

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg, std::ostream* log = nullptr)
      : cfg_(std::move(cfg)), root_(cfg_.out_dir), log_(log) {
    cfg_.validate();
    load_manifest();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& root() const { return root_; }
  /// Stages that actually ran (were not skipped) in this invocation.
  const std::vector<Stage>& executed() const { return executed_; }

  /// Runs every stage up to and including `last`, skipping the up-to-date ones.
  void run_until(Stage last) {
    for (auto s : all_stages()) {
      run_stage(s);
      if (s == last) break;
    }
  }
  void run_all() { run_until(Stage::Report); }

  std::string report_text() const { return read_file(root_ / "report.txt"); }

  /// One train-meta + cold evaluation per value, variant and seed. Written to sweep-<axis>.csv.
  std::vector<SweepRow> sweep(const std::string& axis, const std::vector<std::string>& values) {
    if (axis != "gamma" && axis != "neighbors" && axis != "gat")
      throw config_error("sweep axis must be gamma, neighbors or gat");
    if (values.empty()) throw config_error("sweep needs at least one value");
    run_until(Stage::BuildGraph);
    const Corpus& c = corpus();
    std::vector<VariantSpec> specs;
    for (const auto& s : cfg_.variants) {
      auto v = parse_variant_spec(s);
      if (!is_trainable(v.variant)) continue;
      if (axis == "gat" && !uses_attention(v.variant)) continue;
      if (axis == "neighbors" && !uses_neighbors(v.variant)) continue;
      if (std::find(specs.begin(), specs.end(), v) == specs.end()) specs.push_back(v);
    }
    if (specs.empty()) throw config_error("no configured variant is affected by the " + axis + " axis");
    std::vector<SweepRow> rows;
    for (const auto& value : values) {
      std::optional<double> gamma;
      std::size_t n = cfg_.neighbors;
      std::optional<bool> attention;
      try {
        if (axis == "gamma") {
          gamma = std::stod(value);
          if (!(*gamma > 0.0 && *gamma <= 1.0)) throw config_error("gamma must lie in (0, 1]");
        } else if (axis == "neighbors") {
          n = static_cast<std::size_t>(std::stoul(value));
        } else if (value == "on" || value == "off") {
          attention = value == "on";
        } else {
          throw config_error("gat sweep values are 'on' and 'off'");
        }
      } catch (const std::logic_error&) {
        throw config_error("bad " + axis + " sweep value '" + value + "'");
      }
      for (auto seed : cfg_.seeds) {
        const BaseModel theta = load_base(seed);
        NeighborContext ctx{&c.index, &c.old_attributes, n, seed};
        for (auto spec : specs) {
          if (attention) spec.attention = *attention;
          auto psi = train_generator(c, theta, spec, gamma.value_or(cfg_.gamma_for(spec.variant)), ctx, seed).psi;
          auto r = eval_cold(c.partition.test, theta, psi, ctx);
          rows.push_back({value, spec.label(), seed, r.auc, r.loss});
          say("sweep " + axis + "=" + value + " " + spec.label() + " seed " + std::to_string(seed) + " auc " +
              std::to_string(r.auc));
        }
      }
    }
    std::ostringstream out;
    out.precision(17);
    out << "axis_value,variant,seed,auc,loss\n";
    for (const auto& r : rows) out << r.axis_value << ',' << r.variant << ',' << r.seed << ',' << r.auc << ',' << r.loss << '\n';
    write_file_atomic(root_ / ("sweep-" + axis + ".csv"), out.str());
    return rows;
  }

  /// Runs `s` unless the manifest shows it up to date. Returns whether it ran.
  bool run_stage(Stage s) {
    const std::string name = stage_name(s);
    const std::string key = stage_key(s);
    if (executed_.empty() && up_to_date(name, key)) {
      say(name + ": up to date");
      return false;
    }
    auto& entry = manifest_["stages"][name];
    entry = {{"status", "running"}, {"key", key}};
    save_manifest();
    std::vector<std::filesystem::path> outputs;
    try {
      outputs = execute(s);
    } catch (const config_error&) {
      entry["status"] = "failed";
      save_manifest();
      throw;
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
      save_manifest();
      throw stage_error(name + ": " + e.what());
    }
    nlohmann::json files = nlohmann::json::object();
    for (const auto& p : outputs) files[std::filesystem::relative(p, root_).generic_string()] = file_sha256(p.string());
    entry = {{"status", "complete"}, {"key", key}, {"outputs", files}};
    save_manifest();
    executed_.push_back(s);
    say(name + ": done");
    return true;
  }

 private:
  // -- manifest

  void load_manifest() {
    const auto path = root_ / "MANIFEST.json";
    manifest_ = nlohmann::json::object();
    if (std::filesystem::exists(path)) {
      try {
        manifest_ = nlohmann::json::parse(read_file(path));
      } catch (const nlohmann::json::exception&) {
        manifest_ = nlohmann::json::object();  // unreadable manifest: nothing is trusted
      }
    }
    if (!manifest_.contains("stages") || !manifest_["stages"].is_object())
      manifest_["stages"] = nlohmann::json::object();
    manifest_["config"] = to_json(cfg_);
    manifest_["config_hash"] = config_hash(cfg_);
  }

  void save_manifest() const { write_file_atomic(root_ / "MANIFEST.json", manifest_.dump(2) + "\n"); }

  bool up_to_date(const std::string& name, const std::string& key) const {
    const auto& stages = manifest_["stages"];
    if (!stages.contains(name)) return false;
    const auto& e = stages[name];
    if (e.value("status", "") != "complete" || e.value("key", "") != key || !e.contains("outputs")) return false;
    for (const auto& [rel, digest] : e["outputs"].items()) {
      const auto p = root_ / rel;
      if (!std::filesystem::exists(p) || file_sha256(p.string()) != digest.get<std::string>()) return false;
    }
    return true;
  }

  std::string digest_or_missing(const std::filesystem::path& p) const {
    return std::filesystem::exists(p) ? file_sha256(p.string()) : "missing";
  }

  /// Hash of the stage's config section and the digests of the files it reads.
  std::string stage_key(Stage s) const {
    const auto j = to_json(cfg_);
    nlohmann::json k{{"stage", stage_name(s)}};
    switch (s) {
      case Stage::Ingest: k["source"] = j["source"]; break;
      case Stage::TrainBase:
        k["cfg"] = {j["threshold"], j["model"], j["base"], j["seeds"]};
        k["corpus"] = digest_or_missing(root_ / "data/corpus.csv");
        break;
      case Stage::BuildGraph:
        k["cfg"] = {j["threshold"], j["graph"]};
        k["corpus"] = digest_or_missing(root_ / "data/corpus.csv");
        break;
      case Stage::TrainMeta:
        k["cfg"] = {j["gamma"], j["meta"], j["graph"], j["variants"], j["gat_ablation"], j["seeds"]};
        k["index"] = digest_or_missing(root_ / "graph/index.tsv");
        for (auto seed : cfg_.seeds) k["base"].push_back(digest_or_missing(seed_dir(seed) / "base.ckpt"));
        break;
      case Stage::Evaluate:
        k["cfg"] = {j["warmup"], j["graph"], j["variants"], j["gat_ablation"], j["seeds"]};
        for (auto seed : cfg_.seeds) {
          k["base"].push_back(digest_or_missing(seed_dir(seed) / "base.ckpt"));
          for (const auto& v : cfg_.variant_specs()) k["psi"].push_back(digest_or_missing(psi_path(seed, v)));
        }
        break;
      case Stage::Report:
        for (auto seed : cfg_.seeds) k["metrics"].push_back(digest_or_missing(seed_dir(seed) / "metrics.csv"));
        break;
    }
    return sha256_hex(k.dump());
  }

  // -- paths

  std::filesystem::path seed_dir(std::uint64_t seed) const { return root_ / ("seed-" + std::to_string(seed)); }
  std::filesystem::path psi_path(std::uint64_t seed, const VariantSpec& v) const {
    return seed_dir(seed) / "psi" / (file_label(v.label()) + ".ckpt");
  }

  void say(const std::string& msg) const {
    if (log_) *log_ << msg << '\n';
  }

  // -- data

  FieldSchema read_schema() const {
    try {
      return schema_from_json(nlohmann::json::parse(read_file(root_ / "data/schema.json")));
    } catch (const nlohmann::json::exception& e) {
      throw stage_error(std::string("data/schema.json: ") + e.what());
    }
  }

  const Corpus& corpus() {
    if (corpus_) return *corpus_;
    if (!std::filesystem::exists(root_ / "data/corpus.csv")) throw stage_error("corpus missing; run ingest first");
    const auto schema = read_schema();
    Corpus c{read_csv(schema, (root_ / "data/corpus.csv").string()), {}, {}, {}, {}};
    c.split = split_old_new(c.full, cfg_.threshold);
    if (c.split.new_ads.size() == 0) throw config_error("old/new split: no new ads at threshold " + std::to_string(cfg_.threshold));
    c.partition = partition_new_ads(c.split.new_ads, cfg_.warm_rounds, cfg_.warm_per_round);
    c.old_attributes = ad_attributes(c.split.old_ads);
    c.index = build_reverse_index(c.split.old_ads, graph_config(schema));
    corpus_ = std::move(c);
    return *corpus_;
  }

  GraphConfig graph_config(const FieldSchema& schema) const {
    GraphConfig g;
    g.max_posting_fraction = cfg_.max_posting_fraction;
    const auto& attr = schema.attribute_fields();
    for (const auto& name : cfg_.graph_fields) {
      auto f = schema.index_of(name);
      auto it = std::find(attr.begin(), attr.end(), f);
      if (it == attr.end()) throw config_error("graph.fields: '" + name + "' is not an ad-attribute field");
      g.slots.push_back(static_cast<std::size_t>(it - attr.begin()));
    }
    return g;
  }

  BaseModel load_base(std::uint64_t seed) const {
    return load_base_model((seed_dir(seed) / "base.ckpt").string(), read_schema());
  }

  MetaTrainResult train_generator(const Corpus& c, const BaseModel& theta, const VariantSpec& spec, double gamma,
                                  const NeighborContext& ctx, std::uint64_t seed) const {
    Rng rng = make_rng(seed, "psi-init");
    const std::size_t attr_width = theta.schema.attribute_fields().size() * theta.dim;
    auto psi = init_generator(spec.variant, theta.dim, attr_width, gamma, rng, spec.attention);
    MetaConfig mc = cfg_.meta;
    mc.seed = seed;
    return train_meta(c.split.old_ads, theta, std::move(psi), ctx, mc);
  }

  // -- stages

  std::vector<std::filesystem::path> execute(Stage s) {
    switch (s) {
      case Stage::Ingest: return ingest();
      case Stage::TrainBase: return train_base_stage();
      case Stage::BuildGraph: return build_graph_stage();
      case Stage::TrainMeta: return train_meta_stage();
      case Stage::Evaluate: return evaluate_stage();
      case Stage::Report: return report_stage();
    }
    return {};
  }

  std::vector<std::filesystem::path> ingest() {
    Dataset ds = [&] {
      if (cfg_.source.kind == "synthetic") return gen_synthetic(cfg_.source.synthetic);
      movielens::LoadReport rep;
      const std::filesystem::path dir(cfg_.source.movielens_dir);
      auto d = movielens::load((dir / "ratings.dat").string(), (dir / "movies.dat").string(),
                               (dir / "users.dat").string(), &rep);
      if (rep.skipped) say("ingest: skipped " + std::to_string(rep.skipped) + " malformed rows");
      return d;
    }();
    const auto schema_path = root_ / "data/schema.json", corpus_path = root_ / "data/corpus.csv";
    write_file_atomic(schema_path, schema_to_json(ds.schema()).dump(2) + "\n");
    std::ostringstream csv;
    write_csv(ds, csv);
    write_file_atomic(corpus_path, csv.str());
    corpus_.reset();
    const auto& c = corpus();
    say("ingest: " + std::to_string(c.full.size()) + " samples, " + std::to_string(c.split.old_ads.ads().size()) +
        " old ads, " + std::to_string(c.split.new_ads.ads().size()) + " new ads");
    return {schema_path, corpus_path};
  }

  std::vector<std::filesystem::path> train_base_stage() {
    const auto& c = corpus();
    std::vector<std::filesystem::path> out;
    for (auto seed : cfg_.seeds) {
      BaseTrainConfig bc;
      bc.model = cfg_.model;
      bc.epochs = cfg_.base_epochs;
      bc.batch_size = cfg_.base_batch;
      bc.adam = cfg_.base_adam;
      bc.seed = seed;
      auto res = train_base(c.split.old_ads, bc);
      const auto ckpt = seed_dir(seed) / "base.ckpt", loss = seed_dir(seed) / "base_loss.csv";
      std::filesystem::create_directories(seed_dir(seed));
      save_base_model(res.model, ckpt.string());
      std::ostringstream csv;
      csv.precision(17);
      csv << "epoch,loss\n";
      for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) csv << e + 1 << ',' << res.epoch_loss[e] << '\n';
      write_file_atomic(loss, csv.str());
      say("train-base: seed " + std::to_string(seed) + " final loss " + std::to_string(res.epoch_loss.back()));
      out.push_back(ckpt);
      out.push_back(loss);
    }
    return out;
  }

  std::vector<std::filesystem::path> build_graph_stage() {
    const auto& c = corpus();
    std::ostringstream dump;
    dump_index(c.index, c.full.schema(), c.full.vocab(), dump);
    const auto path = root_ / "graph/index.tsv";
    write_file_atomic(path, dump.str());
    say("build-graph: " + std::to_string(c.index.postings().size()) + " postings, " +
        std::to_string(c.index.dropped().size()) + " dropped as too common");
    return {path};
  }

  std::vector<std::filesystem::path> train_meta_stage() {
    const auto& c = corpus();
    std::vector<std::filesystem::path> out;
    for (auto seed : cfg_.seeds) {
      const BaseModel theta = load_base(seed);
      NeighborContext ctx{&c.index, &c.old_attributes, cfg_.neighbors, seed};
      for (const auto& spec : cfg_.variant_specs()) {
        auto res = train_generator(c, theta, spec, cfg_.gamma_for(spec.variant), ctx, seed);
        const auto ckpt = psi_path(seed, spec);
        std::filesystem::create_directories(ckpt.parent_path());
        save_checkpoint(to_checkpoint(res.psi, theta.schema.hash()), ckpt.string());
        out.push_back(ckpt);
        if (!res.curve.empty()) {
          std::ostringstream csv;
          write_curve_csv(res.curve, csv);
          const auto curve = seed_dir(seed) / "curves" / (file_label(spec.label()) + ".csv");
          write_file_atomic(curve, csv.str());
          out.push_back(curve);
          say("train-meta: seed " + std::to_string(seed) + " " + spec.label() + " l " +
              std::to_string(res.curve.front().l) + " -> " + std::to_string(res.curve.back().l));
        }
      }
    }
    return out;
  }

  std::vector<std::filesystem::path> evaluate_stage() {
    const auto& c = corpus();
    std::vector<std::filesystem::path> out;
    for (auto seed : cfg_.seeds) {
      const BaseModel theta = load_base(seed);
      NeighborContext ctx{&c.index, &c.old_attributes, cfg_.neighbors, seed};
      std::vector<PhaseResult> results;
      for (const auto& spec : cfg_.variant_specs()) {
        const auto psi = generator_from_checkpoint(load_checkpoint_file(psi_path(seed, spec).string()), theta.schema.hash());
        if (cfg_.warm_rounds == 0) {
          results.push_back(eval_cold(c.partition.test, theta, psi, ctx));
        } else {
          auto r = run_warmup(c.partition.rounds, c.partition.test, theta, psi, ctx, cfg_.warmup);
          results.insert(results.end(), r.begin(), r.end());
        }
        say("evaluate: seed " + std::to_string(seed) + " " + spec.label() + " cold auc " +
            std::to_string(results[results.size() - 1 - cfg_.warm_rounds].auc));
      }
      std::ostringstream csv;
      write_results_csv(results, csv);
      const auto path = seed_dir(seed) / "metrics.csv";
      write_file_atomic(path, csv.str());
      out.push_back(path);
    }
    return out;
  }

  std::vector<std::filesystem::path> report_stage() {
    std::vector<PhaseResult> all;
    for (auto seed : cfg_.seeds) {
      auto r = read_results_csv(read_file(seed_dir(seed) / "metrics.csv"));
      all.insert(all.end(), r.begin(), r.end());
    }
    std::ostringstream csv;
    write_results_csv(all, csv);
    const auto metrics = root_ / "metrics.csv", report = root_ / "report.txt";
    write_file_atomic(metrics, csv.str());
    write_file_atomic(report, render_report(summarize(all)));
    return {metrics, report};
  }

  ExperimentConfig cfg_;
  std::filesystem::path root_;
  std::ostream* log_;
  nlohmann::json manifest_;
  std::optional<Corpus> corpus_;
  std::vector<Stage> executed_;
};

}  // namespace gme
