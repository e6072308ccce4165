#pragma once

// MovieLens-1M ingestion. Movies play the role of ads; a rating of 4 or 5 is a
// positive label. Files are "::"-separated and read as raw bytes (Latin-1).

#include <cctype>
#include <fstream>
#include <iostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gme/data.hpp"

namespace gme::movielens {

inline FieldSchema schema() {
  return FieldSchema({
      {"movie_id", FieldRole::AdId, Arity::Single},
      {"year", FieldRole::AdAttribute, Arity::Single},
      {"title", FieldRole::AdAttribute, Arity::Multi},
      {"genres", FieldRole::AdAttribute, Arity::Multi},
      {"user_id", FieldRole::Other, Arity::Single},
      {"gender", FieldRole::Other, Arity::Single},
      {"age", FieldRole::Other, Arity::Single},
      {"occupation", FieldRole::Other, Arity::Single},
  });
}

inline std::vector<std::string> split_colons(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find("::", start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 2;
  }
}

struct ParsedTitle {
  std::string year;
  std::vector<std::string> tokens;
};

/// "Toy Story (1995)" -> year "1995", tokens {"toy", "story"}.
inline ParsedTitle parse_title(std::string_view title) {
  ParsedTitle out;
  while (!title.empty() && std::isspace(static_cast<unsigned char>(title.back()))) title.remove_suffix(1);
  if (title.size() >= 6 && title.back() == ')' && title[title.size() - 6] == '(') {
    auto year = title.substr(title.size() - 5, 4);
    bool digits = true;
    for (char c : year) digits = digits && std::isdigit(static_cast<unsigned char>(c));
    if (digits) {
      out.year = std::string(year);
      title.remove_suffix(6);
    }
  }
  std::string cur;
  for (char ch : title) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
      if (!cur.empty()) out.tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!cur.empty()) out.tokens.push_back(std::move(cur));
  return out;
}

inline int label_from_rating(int rating) { return rating >= 4 ? 1 : 0; }

struct LoadReport {
  std::size_t ratings = 0;
  std::size_t skipped = 0;
};

namespace detail {
inline std::ifstream open(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot read " + path);
  return in;
}
inline void chomp(std::string& s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
}
}  // namespace detail

inline Dataset load(const std::string& ratings_path, const std::string& movies_path, const std::string& users_path,
                    LoadReport* report = nullptr) {
  struct Movie {
    std::string year;
    std::vector<std::string> title;
    std::vector<std::string> genres;
  };
  struct User {
    std::string gender, age, occupation;
  };
  LoadReport rep;
  std::unordered_map<std::string, Movie> movies;
  std::unordered_map<std::string, User> users;
  std::string line;

  auto movies_in = detail::open(movies_path);
  while (std::getline(movies_in, line)) {
    detail::chomp(line);
    if (line.empty()) continue;
    auto cols = split_colons(line);
    if (cols.size() != 3) {
      ++rep.skipped;
      continue;
    }
    auto t = parse_title(cols[1]);
    Movie m{t.year, std::move(t.tokens), {}};
    std::size_t start = 0;
    const auto& g = cols[2];
    while (start <= g.size()) {
      auto pos = g.find('|', start);
      if (pos == std::string::npos) pos = g.size();
      if (pos > start) m.genres.push_back(g.substr(start, pos - start));
      start = pos + 1;
    }
    movies.emplace(cols[0], std::move(m));
  }

  auto users_in = detail::open(users_path);
  while (std::getline(users_in, line)) {
    detail::chomp(line);
    if (line.empty()) continue;
    auto cols = split_colons(line);
    if (cols.size() != 5) {
      ++rep.skipped;
      continue;
    }
    users.emplace(cols[0], User{cols[1], cols[2], cols[3]});
  }

  std::vector<RawSample> raw;
  raw.reserve(1'000'209);
  auto ratings_in = detail::open(ratings_path);
  while (std::getline(ratings_in, line)) {
    detail::chomp(line);
    if (line.empty()) continue;
    auto cols = split_colons(line);
    int rating = 0;
    try {
      if (cols.size() != 4) throw data_error("columns");
      rating = std::stoi(cols[2]);
    } catch (const std::exception&) {
      ++rep.skipped;
      continue;
    }
    auto m = movies.find(cols[1]);
    auto u = users.find(cols[0]);
    if (m == movies.end() || u == users.end()) {
      ++rep.skipped;
      continue;
    }
    RawSample s;
    s.label = label_from_rating(rating);
    s.tokens = {{cols[1]},
                m->second.year.empty() ? std::vector<std::string>{} : std::vector<std::string>{m->second.year},
                m->second.title,
                m->second.genres,
                {cols[0]},
                {u->second.gender},
                {u->second.age},
                {u->second.occupation}};
    raw.push_back(std::move(s));
    ++rep.ratings;
  }
  if (rep.skipped) std::cerr << "movielens: skipped " << rep.skipped << " malformed rows\n";
  if (report) *report = rep;
  return build_dataset(schema(), raw);
}

}  // namespace gme::movielens
