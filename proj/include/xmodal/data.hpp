#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

using LabelSet = std::vector<std::uint32_t>;  // sorted, unique

// One image of one modality, as stored on disk.
struct SampleRecord {
  std::uint32_t tuple_id = 0;
  std::uint32_t modality = 0;
  std::vector<double> features;
  LabelSet labels;
};

// N co-registered samples sharing an id and a label set.
struct Tuple {
  std::uint32_t tuple_id = 0;
  LabelSet labels;
  std::vector<std::vector<double>> features;  // indexed by modality

  bool operator==(const Tuple&) const = default;
};

struct TupleDataset {
  std::size_t num_modalities = 0;
  std::vector<Tuple> tuples;
  std::vector<std::string> label_vocabulary;

  std::size_t size() const { return tuples.size(); }
  // Feature width of modality j (0 when empty).
  std::size_t dim(std::size_t modality) const;
  std::vector<std::size_t> dims() const;

  // Throws ValidationError on misaligned tuples, ragged widths, duplicate ids or unknown labels.
  void validate() const;

  std::vector<SampleRecord> records() const;
  static TupleDataset from_records(std::size_t num_modalities, std::vector<std::string> vocabulary,
                                   const std::vector<SampleRecord>& records);

  // Rows `indices` of modality j stacked into a [indices.size() x dim] matrix.
  Tensor features(std::size_t modality, const std::vector<std::size_t>& indices) const;
  Tensor features(std::size_t modality) const;

  bool operator==(const TupleDataset&) const = default;
};

struct SynthConfig {
  std::size_t num_modalities = 2;
  std::size_t num_classes = 8;
  bool multi_label = false;
  std::size_t labels_min = 1;
  std::size_t labels_max = 3;
  std::size_t latent_dim = 16;
  double latent_sigma = 0.5;
  std::vector<std::size_t> input_dims{32, 32};
  double noise_sigma = 0.1;
  std::size_t num_tuples = 2000;
  std::uint64_t seed = 0;

  void validate() const;
  static SynthConfig from_config(KeyValueConfig& kv);
  void write_to(KeyValueConfig& kv) const;

  bool operator==(const SynthConfig&) const = default;
};

// Latent = sum of class prototypes + N(0, latent_sigma^2) jitter; modality j sees
// tanh(A_j latent) + N(0, noise_sigma^2) with A_j entries ~ N(0, 1/latent_dim).
TupleDataset generate_synthetic(const SynthConfig& config);

struct SplitFractions {
  double train = 0.52;
  double val = 0.24;
  double test = 0.24;

  bool operator==(const SplitFractions&) const = default;
};

struct DatasetSplit {
  TupleDataset train;
  TupleDataset val;
  TupleDataset test;
};

// Tuple-level shuffle keyed by seed. val/test sizes are floor(f * M), the remainder goes to train.
DatasetSplit split(const TupleDataset& ds, const SplitFractions& fractions, std::uint64_t seed);

// Index batches for one epoch, reshuffled per (seed, epoch). A trailing batch with fewer
// than 2 tuples is dropped.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t num_tuples, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch);
inline std::vector<std::vector<std::size_t>> batch_iter(const TupleDataset& ds, std::size_t batch_size,
                                                        std::uint64_t seed, std::uint64_t epoch) {
  return batch_iter(ds.size(), batch_size, seed, epoch);
}

// Line format:
//   #xmodal-dataset v1 N=<n> dim=<d> labels=<vocab size>
//   tuple_id \t modality \t f1,...,fd \t l1,...
// dim is a comma list when modalities differ in width.
std::string format_dataset(const TupleDataset& ds);
TupleDataset parse_dataset(const std::string& text);
void save_dataset(const TupleDataset& ds, const std::filesystem::path& path);
TupleDataset load_dataset(const std::filesystem::path& path);

// Independent 64-bit stream for a (seed, purpose, index) triple.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0);

}  // namespace xmodal
