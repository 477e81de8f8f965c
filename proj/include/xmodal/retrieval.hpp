#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmodal/data.hpp"
#include "xmodal/model.hpp"

namespace xmodal {

struct IndexEntry {
  std::uint32_t tuple_id = 0;
  std::vector<double> z;  // unit norm unless the raw embedding was degenerate
  LabelSet labels;

  bool operator==(const IndexEntry&) const = default;
};

class EmbeddingIndex {
 public:
  EmbeddingIndex(std::size_t num_modalities, std::size_t dim);

  // Normalizes `z` before storing. Duplicate ids within a modality are a ContractError.
  void insert(std::size_t modality, std::uint32_t tuple_id, std::span<const double> z, LabelSet labels);

  const std::vector<IndexEntry>& entries(std::size_t modality) const;
  const IndexEntry* find(std::size_t modality, std::uint32_t tuple_id) const;
  std::size_t num_modalities() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t degenerate_count() const { return degenerate_; }

  bool operator==(const EmbeddingIndex&) const = default;

 private:
  std::size_t dim_;
  std::size_t degenerate_ = 0;
  std::vector<std::vector<IndexEntry>> entries_;
  std::vector<std::unordered_map<std::uint32_t, std::size_t>> positions_;
};

// Every record of `ds` embedded with `params`, normalized and inserted.
EmbeddingIndex build_index(const ModelParams& params, const TupleDataset& ds);

struct RankedItem {
  std::uint32_t tuple_id = 0;
  double score = 0.0;

  bool operator==(const RankedItem&) const = default;
};

struct RankedResult {
  std::size_t target_modality = 0;
  std::size_t k = 0;
  std::vector<RankedItem> items;  // score descending, ties by ascending tuple id
  bool short_result = false;      // fewer than k candidates were available
};

// Exact top-k by cosine. `exclude_tuple` drops that id from the candidates.
RankedResult retrieve(const EmbeddingIndex& index, std::span<const double> query, std::size_t target_modality,
                      std::size_t k, std::optional<std::uint32_t> exclude_tuple = std::nullopt);

// Dice overlap 2|A n B| / (|A| + |B|). Query labels must be non-empty.
double pair_f1(const LabelSet& query_labels, const LabelSet& item_labels);
// |A n B| / |A u B|, 0 for two empty sets.
double jaccard(const LabelSet& a, const LabelSet& b);
// DCG of the first k relevances over the DCG of the same values sorted descending; 0 when that is 0.
double ndcg_at_k(const std::vector<double>& relevances, std::size_t k);

struct QueryMetrics {
  std::uint32_t query_id = 0;
  double f1 = 0.0;
  double ndcg = 0.0;
};

struct MetricsReport {
  std::size_t source = 0;
  std::size_t target = 0;
  std::size_t k = 0;
  double mean_f1 = 0.0;
  double mean_ndcg = 0.0;
  std::vector<QueryMetrics> rows;

  std::string direction() const;
};

// Each query entry of modality `source` retrieves from `candidates` in modality `target`.
// F1@k is the mean pair_f1 over the retrieved items; NDCG@k uses Jaccard relevances.
MetricsReport evaluate_cross_modal(const EmbeddingIndex& candidates, const EmbeddingIndex& queries,
                                   std::size_t source, std::size_t target, std::size_t k = 8,
                                   bool exclude_self_tuple = true);

// Mean over entries of the fraction of their k nearest same-modality neighbours that share a label.
double neighbor_purity(const EmbeddingIndex& index, std::size_t modality, std::size_t k = 8);

// query_id,direction,f1_at_k,ndcg_at_k; then one "mean" row per report and an "average" row.
std::string metrics_csv(const std::vector<MetricsReport>& reports);
std::string summary_table(const std::vector<MetricsReport>& reports);

// query_id,rank,candidate_id,score with rank starting at 1.
std::string ranked_csv(std::uint32_t query_id, const RankedResult& result);

}  // namespace xmodal
