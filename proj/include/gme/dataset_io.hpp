#pragma once

// Text formats for datasets: a CSV body (label, ad id, then the remaining
// fields in schema order; multi-valued cells joined by '|') and a JSON schema
// sidecar that carries field roles.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gme/data.hpp"

namespace gme {

inline nlohmann::json schema_to_json(const FieldSchema& schema) {
  nlohmann::json fields = nlohmann::json::array();
  for (const auto& f : schema.fields())
    fields.push_back({{"name", f.name}, {"role", role_name(f.role)}, {"arity", f.arity == Arity::Multi ? "multi" : "single"}});
  return {{"version", 1}, {"fields", fields}};
}

inline FieldSchema schema_from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != 1) throw data_error("unsupported schema version");
  std::vector<FieldDesc> fields;
  for (const auto& f : j.at("fields")) {
    FieldDesc d;
    d.name = f.at("name").get<std::string>();
    const auto role = f.at("role").get<std::string>();
    if (role == "ad-identity") d.role = FieldRole::AdId;
    else if (role == "ad-attribute") d.role = FieldRole::AdAttribute;
    else if (role == "other") d.role = FieldRole::Other;
    else throw data_error("unknown field role '" + role + "'");
    d.arity = f.at("arity").get<std::string>() == "multi" ? Arity::Multi : Arity::Single;
    fields.push_back(std::move(d));
  }
  return FieldSchema(std::move(fields));
}

/// Column order used by the CSV format: the ad-identity field first, then the rest.
inline std::vector<std::size_t> csv_column_order(const FieldSchema& schema) {
  std::vector<std::size_t> order{schema.id_field()};
  for (std::size_t f = 0; f < schema.size(); ++f)
    if (f != schema.id_field()) order.push_back(f);
  return order;
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  const auto& schema = ds.schema();
  const auto order = csv_column_order(schema);
  out << "label";
  for (auto f : order) out << ',' << schema[f].name;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.label(i);
    for (auto f : order) {
      out << ',';
      bool first = true;
      for (auto idx : ds.field(i, f)) {
        if (idx == ds.vocab().oov(f)) continue;
        const auto& tok = ds.vocab().decode(f, idx);
        if (tok.find_first_of(",|\n\r") != std::string::npos)
          throw data_error("token '" + tok + "' cannot be written to CSV");
        out << (first ? "" : "|") << tok;
        first = false;
      }
    }
    out << '\n';
  }
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path);
  write_csv(ds, out);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline Dataset read_csv(const FieldSchema& schema, std::istream& in) {
  const auto order = csv_column_order(schema);
  std::string line;
  if (!std::getline(in, line)) throw data_error("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  if (header.size() != order.size() + 1 || header[0] != "label") throw data_error("CSV header does not match schema");
  for (std::size_t c = 0; c < order.size(); ++c)
    if (header[c + 1] != schema[order[c]].name)
      throw data_error("CSV column '" + header[c + 1] + "' where '" + schema[order[c]].name + "' was expected");
  std::vector<RawSample> raw;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != order.size() + 1) throw data_error("CSV line " + std::to_string(lineno) + ": wrong column count");
    RawSample s;
    s.label = cells[0] == "1" ? 1 : 0;
    if (cells[0] != "0" && cells[0] != "1") throw data_error("CSV line " + std::to_string(lineno) + ": bad label");
    s.tokens.resize(schema.size());
    for (std::size_t c = 0; c < order.size(); ++c) {
      const auto& cell = cells[c + 1];
      if (cell.empty()) continue;
      s.tokens[order[c]] = schema[order[c]].arity == Arity::Multi ? split(cell, '|') : std::vector<std::string>{cell};
    }
    raw.push_back(std::move(s));
  }
  return build_dataset(schema, raw);
}

inline Dataset read_csv(const FieldSchema& schema, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot read " + path);
  return read_csv(schema, in);
}

}  // namespace gme
