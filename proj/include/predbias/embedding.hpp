/* Copyright 2026 The predbias Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef PREDBIAS_EMBEDDING_HPP_
#define PREDBIAS_EMBEDDING_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "predbias/corpus.hpp"
#include "predbias/error.hpp"
#include "predbias/io.hpp"
#include "predbias/random.hpp"

namespace predbias {

using Vector = std::vector<double>;

inline constexpr double kCosineClamp = 1e-6;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector normalized(std::span<const double> a) {
  const double n = norm(a);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorKind::kValidation, "cannot normalize a zero or non-finite vector");
  Vector out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : sentence) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

}  // namespace detail

// Reference featurizer: signed feature hashing of word unigrams and bigrams,
// L2-normalized. Deterministic in (sentence, dim, seed).
inline Vector featurize(std::string_view sentence, std::size_t dim, std::uint64_t seed) {
  if (dim < 2) throw Error(ErrorKind::kValidation, "embedding dim must be at least 2");
  const auto tokens = detail::tokenize(sentence);
  if (tokens.empty()) throw Error(ErrorKind::kValidation, "cannot featurize an empty sentence");

  Vector v(dim, 0.0);
  auto add = [&](std::string_view feature) {
    const std::uint64_t h = derive_seed(seed, detail::fnv1a(feature));
    const std::size_t bucket = static_cast<std::size_t>(h % dim);
    v[bucket] += (h >> 63) ? 1.0 : -1.0;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add(tokens[i]);
    if (i + 1 < tokens.size()) add(tokens[i] + ' ' + tokens[i + 1]);
  }
  if (norm(v) == 0.0)
    throw Error(ErrorKind::kValidation, "features of '" + std::string(sentence) + "' cancel to zero");
  return normalized(v);
}

// Cosine similarity clamped to [-1+eps, 1-eps] so arccos stays differentiable.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kValidation, "dimension mismatch");
  const double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorKind::kValidation, "cosine of a zero vector");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0 + kCosineClamp, 1.0 - kCosineClamp);
}

inline double arc_angle(std::span<const double> a, std::span<const double> b) {
  return std::acos(cosine_similarity(a, b));
}

// Base sentence embeddings keyed by relation id.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<RelationId, Vector> rows;

  const Vector& at(RelationId id) const {
    auto it = rows.find(id);
    if (it == rows.end())
      throw Error(ErrorKind::kCoverage, "no embedding for relation " + std::to_string(id));
    return it->second;
  }

  bool operator==(const EmbeddingTable&) const = default;
};

// Header line is "relation_id,dim=<L>"; returns L.
inline std::size_t parse_embedding_header(std::string_view line) {
  const auto fields = split_csv(line);
  constexpr std::string_view kPrefix = "dim=";
  std::int64_t dim = 0;
  if (fields.size() != 2 || fields[0] != "relation_id" || !fields[1].starts_with(kPrefix) ||
      !try_parse_int(fields[1].substr(kPrefix.size()), dim) || dim < 2)
    throw Error(ErrorKind::kParse, "embedding header must be \"relation_id,dim=<L>\" with L >= 2");
  return static_cast<std::size_t>(dim);
}

// Leading lines starting with '#' are comments (the exporter records its
// model and pooling there).
inline EmbeddingTable parse_embeddings(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (!header_seen) {
      if (t.front() == '#') continue;
      try {
        table.dim = parse_embedding_header(t);
      } catch (const Error& e) {
        throw Error(ErrorKind::kParse, where + ": " + e.message());
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv(t);
    if (fields.size() != table.dim + 1)
      throw Error(ErrorKind::kParse, where + ": expected " + std::to_string(table.dim) + " values");
    std::int64_t id = 0;
    if (!try_parse_int(fields[0], id)) throw Error(ErrorKind::kParse, where + ": bad relation_id");
    Vector v(table.dim);
    for (std::size_t i = 0; i < table.dim; ++i) {
      if (!try_parse_double(fields[i + 1], v[i]) || !std::isfinite(v[i]))
        throw Error(ErrorKind::kParse, where + ": bad value '" + std::string(fields[i + 1]) + "'");
    }
    if (!table.rows.emplace(id, std::move(v)).second)
      throw Error(ErrorKind::kValidation, where + ": duplicate relation_id " + std::to_string(id));
  }
  if (!header_seen) throw Error(ErrorKind::kParse, "missing embedding header");
  return table;
}

inline EmbeddingTable load_external_embeddings(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return parse_embeddings(in);
  } catch (const Error& e) {
    throw e.with_context(path.string());
  }
}

inline void write_embeddings(std::ostream& out, const EmbeddingTable& table,
                             std::string_view comment = {}) {
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "relation_id,dim=" << table.dim << '\n';
  for (const auto& [id, v] : table.rows) {
    out << id;
    for (double x : v) out << ',' << format_double(x);
    out << '\n';
  }
}

// Featurizes every annotated relation of the dataset.
inline EmbeddingTable featurize_dataset(const Dataset& ds, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable table;
  table.dim = dim;
  for (const auto& r : ds.relations)
    table.rows.emplace(r.relation_id, featurize(triplet_to_sentence(r, ds.vocab), dim, seed));
  return table;
}

}  // namespace predbias

#endif  // PREDBIAS_EMBEDDING_HPP_
