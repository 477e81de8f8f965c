#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "xmodal/retrieval.hpp"

namespace xmodal::oracle {

// Full scan: score every candidate, sort everything, keep the first k.
inline std::vector<RankedItem> brute_force_ranking(const EmbeddingIndex& index, const std::vector<double>& unit_query,
                                                   std::size_t target, std::size_t k,
                                                   std::optional<std::uint32_t> exclude = std::nullopt) {
  std::vector<RankedItem> all;
  for (const IndexEntry& e : index.entries(target)) {
    if (exclude && *exclude == e.tuple_id) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < e.z.size(); ++i) s += unit_query[i] * e.z[i];
    all.push_back({e.tuple_id, s});
  }
  std::stable_sort(all.begin(), all.end(), [](const RankedItem& a, const RankedItem& b) {
    return a.score > b.score || (a.score == b.score && a.tuple_id < b.tuple_id);
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// Index whose vectors are drawn from a small integer lattice, so exact score ties are common.
inline EmbeddingIndex lattice_index(std::size_t entries, std::size_t dim, std::mt19937_64& rng) {
  EmbeddingIndex index(1, dim);
  std::uniform_int_distribution<int> coord(-1, 1);
  // Ids are inserted in scrambled order so the tie rule cannot lean on insertion order.
  std::vector<std::uint32_t> ids(entries);
  for (std::size_t i = 0; i < entries; ++i) ids[i] = static_cast<std::uint32_t>(i * 7 + 3);
  std::shuffle(ids.begin(), ids.end(), rng);
  for (std::uint32_t id : ids) {
    std::vector<double> z(dim, 0.0);
    do {
      for (double& v : z) v = coord(rng);
    } while (std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; }));
    index.insert(0, id, z, {0});
  }
  return index;
}

}  // namespace xmodal::oracle
