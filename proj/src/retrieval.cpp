#include "xmodal/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

bool ranks_before(const RankedItem& a, const RankedItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tuple_id < b.tuple_id;
}

std::size_t intersection_size(const LabelSet& a, const LabelSet& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n, ++i, ++j;
    }
  }
  return n;
}

std::string fixed(double v, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

std::string full_precision(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace

EmbeddingIndex::EmbeddingIndex(std::size_t num_modalities, std::size_t dim)
    : dim_(dim), entries_(num_modalities), positions_(num_modalities) {
  if (dim == 0) throw ContractError("EmbeddingIndex: dimension must be positive");
}

void EmbeddingIndex::insert(std::size_t modality, std::uint32_t tuple_id, std::span<const double> z,
                            LabelSet labels) {
  if (modality >= entries_.size()) throw IndexError("EmbeddingIndex: modality out of range");
  if (z.size() != dim_) {
    throw ContractError("EmbeddingIndex: embedding has " + std::to_string(z.size()) + " values, index holds " +
                        std::to_string(dim_));
  }
  if (find(modality, tuple_id)) {
    throw ContractError("EmbeddingIndex: tuple " + std::to_string(tuple_id) + " already present in modality " +
                        std::to_string(modality));
  }
  IndexEntry e{tuple_id, {z.begin(), z.end()}, std::move(labels)};
  if (!l2_normalize_inplace(e.z)) ++degenerate_;
  positions_[modality].emplace(tuple_id, entries_[modality].size());
  entries_[modality].push_back(std::move(e));
}

const std::vector<IndexEntry>& EmbeddingIndex::entries(std::size_t modality) const {
  if (modality >= entries_.size()) throw IndexError("EmbeddingIndex: modality out of range");
  return entries_[modality];
}

const IndexEntry* EmbeddingIndex::find(std::size_t modality, std::uint32_t tuple_id) const {
  if (modality >= entries_.size()) throw IndexError("EmbeddingIndex: modality out of range");
  const auto it = positions_[modality].find(tuple_id);
  return it == positions_[modality].end() ? nullptr : &entries_[modality][it->second];
}

EmbeddingIndex build_index(const ModelParams& params, const TupleDataset& ds) {
  if (ds.num_modalities != params.config.num_modalities || (ds.size() > 0 && ds.dims() != params.config.input_dims)) {
    throw ContractError("build_index: dataset widths " + format_size_list(ds.dims()) +
                        " do not match model input_dims " + format_size_list(params.config.input_dims));
  }
  EmbeddingIndex index(ds.num_modalities, params.config.embedding_dim);
  for (std::size_t j = 0; j < ds.num_modalities; ++j) {
    if (ds.size() == 0) break;
    const Tensor z = embed(params, j, ds.features(j));
    for (std::size_t i = 0; i < ds.size(); ++i) index.insert(j, ds.tuples[i].tuple_id, z.row(i), ds.tuples[i].labels);
  }
  return index;
}

RankedResult retrieve(const EmbeddingIndex& index, std::span<const double> query, std::size_t target_modality,
                      std::size_t k, std::optional<std::uint32_t> exclude_tuple) {
  if (k < 1) throw ContractError("retrieve: k must be at least 1");
  if (query.size() != index.dim()) throw ContractError("retrieve: query dimension does not match index");
  std::vector<double> q(query.begin(), query.end());
  l2_normalize_inplace(q);

  const auto& entries = index.entries(target_modality);
  std::vector<RankedItem> scored;
  scored.reserve(entries.size());
  for (const IndexEntry& e : entries) {
    if (exclude_tuple && e.tuple_id == *exclude_tuple) continue;
    scored.push_back({e.tuple_id, dot(q, e.z)});
  }
  RankedResult result;
  result.target_modality = target_modality;
  result.k = k;
  result.short_result = scored.size() < k;
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), ranks_before);
  scored.resize(n);
  result.items = std::move(scored);
  return result;
}

double pair_f1(const LabelSet& query_labels, const LabelSet& item_labels) {
  if (query_labels.empty()) throw ContractError("pair_f1: query label set is empty");
  if (item_labels.empty()) return 0.0;
  return 2.0 * static_cast<double>(intersection_size(query_labels, item_labels)) /
         static_cast<double>(query_labels.size() + item_labels.size());
}

double jaccard(const LabelSet& a, const LabelSet& b) {
  const std::size_t inter = intersection_size(a, b);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double ndcg_at_k(const std::vector<double>& relevances, std::size_t k) {
  if (relevances.empty()) throw ContractError("ndcg_at_k: need at least one relevance");
  for (double r : relevances) {
    if (!(r >= 0.0)) throw ContractError("ndcg_at_k: relevances must be non-negative");
  }
  auto dcg = [k](const std::vector<double>& rel) {
    double s = 0.0;
    for (std::size_t p = 0; p < std::min(k, rel.size()); ++p) s += rel[p] / std::log2(static_cast<double>(p) + 2.0);
    return s;
  };
  std::vector<double> ideal = relevances;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  return idcg == 0.0 ? 0.0 : dcg(relevances) / idcg;
}

std::string MetricsReport::direction() const { return std::to_string(source) + "->" + std::to_string(target); }

MetricsReport evaluate_cross_modal(const EmbeddingIndex& candidates, const EmbeddingIndex& queries,
                                   std::size_t source, std::size_t target, std::size_t k, bool exclude_self_tuple) {
  if (source == target) throw ContractError("evaluate_cross_modal: source and target modality must differ");
  const auto& query_entries = queries.entries(source);
  if (query_entries.empty()) throw ContractError("evaluate_cross_modal: no queries");

  MetricsReport report;
  report.source = source;
  report.target = target;
  report.k = k;
  for (const IndexEntry& q : query_entries) {
    const RankedResult r = retrieve(candidates, q.z, target, k,
                                    exclude_self_tuple ? std::optional<std::uint32_t>(q.tuple_id) : std::nullopt);
    QueryMetrics m;
    m.query_id = q.tuple_id;
    if (!r.items.empty()) {
      std::vector<double> relevances;
      double f1 = 0.0;
      for (const RankedItem& item : r.items) {
        const IndexEntry* e = candidates.find(target, item.tuple_id);
        f1 += pair_f1(q.labels, e->labels);
        relevances.push_back(jaccard(q.labels, e->labels));
      }
      m.f1 = f1 / static_cast<double>(r.items.size());
      m.ndcg = ndcg_at_k(relevances, k);
    }
    report.mean_f1 += m.f1;
    report.mean_ndcg += m.ndcg;
    report.rows.push_back(m);
  }
  report.mean_f1 /= static_cast<double>(report.rows.size());
  report.mean_ndcg /= static_cast<double>(report.rows.size());
  return report;
}

double neighbor_purity(const EmbeddingIndex& index, std::size_t modality, std::size_t k) {
  const auto& entries = index.entries(modality);
  if (entries.size() < 2) throw ContractError("neighbor_purity: need at least 2 entries");
  double total = 0.0;
  for (const IndexEntry& q : entries) {
    const RankedResult r = retrieve(index, q.z, modality, k, q.tuple_id);
    std::size_t shared = 0;
    for (const RankedItem& item : r.items) {
      if (intersection_size(q.labels, index.find(modality, item.tuple_id)->labels) > 0) ++shared;
    }
    total += static_cast<double>(shared) / static_cast<double>(r.items.size());
  }
  return total / static_cast<double>(entries.size());
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "query_id,direction,f1_at_k,ndcg_at_k\n";
  for (const MetricsReport& r : reports) {
    for (const QueryMetrics& m : r.rows) {
      out += std::to_string(m.query_id) + "," + r.direction() + "," + full_precision(m.f1) + "," +
             full_precision(m.ndcg) + "\n";
    }
  }
  double f1 = 0.0, ndcg = 0.0;
  for (const MetricsReport& r : reports) {
    out += "mean," + r.direction() + "," + full_precision(r.mean_f1) + "," + full_precision(r.mean_ndcg) + "\n";
    f1 += r.mean_f1;
    ndcg += r.mean_ndcg;
  }
  if (!reports.empty()) {
    const double n = static_cast<double>(reports.size());
    out += "average,all," + full_precision(f1 / n) + "," + full_precision(ndcg / n) + "\n";
  }
  return out;
}

std::string summary_table(const std::vector<MetricsReport>& reports) {
  auto row = [](const std::string& dir, const std::string& f1, const std::string& ndcg) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-10s %10s %10s\n", dir.c_str(), f1.c_str(), ndcg.c_str());
    return std::string(buf);
  };
  const std::string k = reports.empty() ? "k" : std::to_string(reports.front().k);
  std::string out = row("direction", "F1@" + k, "NDCG@" + k);
  double f1 = 0.0, ndcg = 0.0;
  for (const MetricsReport& r : reports) {
    out += row(r.direction(), fixed(r.mean_f1, 4), fixed(r.mean_ndcg, 4));
    f1 += r.mean_f1;
    ndcg += r.mean_ndcg;
  }
  if (!reports.empty()) {
    const double n = static_cast<double>(reports.size());
    out += row("average", fixed(f1 / n, 4), fixed(ndcg / n, 4));
  }
  return out;
}

std::string ranked_csv(std::uint32_t query_id, const RankedResult& result) {
  std::string out = "query_id,rank,candidate_id,score\n";
  for (std::size_t i = 0; i < result.items.size(); ++i) {
    out += std::to_string(query_id) + "," + std::to_string(i + 1) + "," + std::to_string(result.items[i].tuple_id) +
           "," + full_precision(result.items[i].score) + "\n";
  }
  return out;
}

}  // namespace xmodal
