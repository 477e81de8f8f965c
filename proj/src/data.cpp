#include "xmodal/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string_view>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

constexpr std::uint64_t kPrototypeStream = 1;
constexpr std::uint64_t kMapStream = 2;
constexpr std::uint64_t kSampleStream = 3;
constexpr std::uint64_t kSplitStream = 4;
constexpr std::uint64_t kBatchStream = 5;

constexpr std::string_view kMagic = "#xmodal-dataset";

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

void append_double(std::string& out, double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

std::vector<std::size_t> parse_dims(std::string_view s, std::size_t line) {
  std::vector<std::size_t> dims;
  for (std::string_view part : split_on(s, ',')) {
    std::size_t d = 0;
    if (!parse_number(part, d) || d == 0) throw ParseError(line, "bad dim '" + std::string(s) + "'");
    dims.push_back(d);
  }
  return dims;
}

// "key=value" header token.
std::string_view header_value(std::string_view token, std::string_view key, std::size_t line) {
  if (token.size() <= key.size() + 1 || token.substr(0, key.size()) != key || token[key.size()] != '=') {
    throw ParseError(line, "expected header field '" + std::string(key) + "=', got '" + std::string(token) + "'");
  }
  return token.substr(key.size() + 1);
}

std::vector<std::string> default_vocabulary(std::size_t n) {
  std::vector<std::string> vocab;
  for (std::size_t c = 0; c < n; ++c) vocab.push_back("class" + std::to_string(c));
  return vocab;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

std::size_t TupleDataset::dim(std::size_t modality) const {
  if (modality >= num_modalities) throw IndexError("modality " + std::to_string(modality) + " out of range");
  return tuples.empty() ? 0 : tuples.front().features.at(modality).size();
}

std::vector<std::size_t> TupleDataset::dims() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < num_modalities; ++j) out.push_back(dim(j));
  return out;
}

void TupleDataset::validate() const {
  if (num_modalities < 1) throw ValidationError("dataset has no modalities");
  const auto widths = dims();
  std::set<std::uint32_t> seen;
  for (const Tuple& t : tuples) {
    const std::string where = "tuple " + std::to_string(t.tuple_id);
    if (!seen.insert(t.tuple_id).second) throw ValidationError(where + ": duplicate tuple id");
    if (t.features.size() != num_modalities) {
      throw ValidationError(where + ": has " + std::to_string(t.features.size()) + " modalities, expected " +
                            std::to_string(num_modalities));
    }
    for (std::size_t j = 0; j < num_modalities; ++j) {
      if (t.features[j].size() != widths[j]) {
        throw ValidationError(where + ": modality " + std::to_string(j) + " has width " +
                              std::to_string(t.features[j].size()) + ", expected " + std::to_string(widths[j]));
      }
      for (double v : t.features[j]) {
        if (!std::isfinite(v)) throw ValidationError(where + ": non-finite feature");
      }
    }
    if (!std::is_sorted(t.labels.begin(), t.labels.end()) ||
        std::adjacent_find(t.labels.begin(), t.labels.end()) != t.labels.end()) {
      throw ValidationError(where + ": labels must be sorted and unique");
    }
    for (std::uint32_t l : t.labels) {
      if (l >= label_vocabulary.size()) throw ValidationError(where + ": label " + std::to_string(l) + " not in vocabulary");
    }
  }
}

std::vector<SampleRecord> TupleDataset::records() const {
  std::vector<SampleRecord> out;
  out.reserve(tuples.size() * num_modalities);
  for (const Tuple& t : tuples) {
    for (std::size_t j = 0; j < t.features.size(); ++j) {
      out.push_back({t.tuple_id, static_cast<std::uint32_t>(j), t.features[j], t.labels});
    }
  }
  return out;
}

TupleDataset TupleDataset::from_records(std::size_t num_modalities, std::vector<std::string> vocabulary,
                                        const std::vector<SampleRecord>& records) {
  TupleDataset ds;
  ds.num_modalities = num_modalities;
  ds.label_vocabulary = std::move(vocabulary);
  std::map<std::uint32_t, std::size_t> slot;
  std::vector<std::vector<bool>> present;
  for (const SampleRecord& r : records) {
    const std::string where = "tuple " + std::to_string(r.tuple_id);
    if (r.modality >= num_modalities) {
      throw ValidationError(where + ": modality " + std::to_string(r.modality) + " out of range");
    }
    auto [it, inserted] = slot.try_emplace(r.tuple_id, ds.tuples.size());
    if (inserted) {
      ds.tuples.push_back({r.tuple_id, r.labels, std::vector<std::vector<double>>(num_modalities)});
      present.emplace_back(num_modalities, false);
    }
    Tuple& t = ds.tuples[it->second];
    if (present[it->second][r.modality]) {
      throw ValidationError(where + ": modality " + std::to_string(r.modality) + " appears twice");
    }
    if (t.labels != r.labels) throw ValidationError(where + ": label sets differ between modalities");
    present[it->second][r.modality] = true;
    t.features[r.modality] = r.features;
  }
  for (std::size_t i = 0; i < ds.tuples.size(); ++i) {
    for (std::size_t j = 0; j < num_modalities; ++j) {
      if (!present[i][j]) {
        throw ValidationError("tuple " + std::to_string(ds.tuples[i].tuple_id) + ": missing modality " +
                              std::to_string(j));
      }
    }
  }
  ds.validate();
  return ds;
}

Tensor TupleDataset::features(std::size_t modality, const std::vector<std::size_t>& indices) const {
  const std::size_t d = dim(modality);
  std::vector<double> data;
  data.reserve(indices.size() * d);
  for (std::size_t i : indices) {
    if (i >= tuples.size()) throw IndexError("tuple index " + std::to_string(i) + " out of range");
    const auto& f = tuples[i].features[modality];
    data.insert(data.end(), f.begin(), f.end());
  }
  return Tensor::matrix(indices.size(), d, std::move(data));
}

Tensor TupleDataset::features(std::size_t modality) const {
  std::vector<std::size_t> all(tuples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return features(modality, all);
}

void SynthConfig::validate() const {
  if (num_modalities < 2) throw ConfigError("num_modalities", "need at least 2 modalities");
  if (num_classes < 2) throw ConfigError("num_classes", "need at least 2 classes");
  if (num_tuples < 10) throw ConfigError("num_tuples", "need at least 10 tuples");
  if (latent_dim < 1) throw ConfigError("latent_dim", "must be positive");
  if (!(latent_sigma >= 0.0) || !std::isfinite(latent_sigma)) throw ConfigError("latent_sigma", "must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma", "must be >= 0");
  if (input_dims.size() != num_modalities) {
    throw ConfigError("input_dims", "expected " + std::to_string(num_modalities) + " entries");
  }
  for (std::size_t d : input_dims) {
    if (d == 0) throw ConfigError("input_dims", "dimensions must be positive");
  }
  if (multi_label) {
    if (labels_min < 1) throw ConfigError("labels_min", "must be at least 1");
    if (labels_max < labels_min) throw ConfigError("labels_max", "must be >= labels_min");
    if (labels_max > num_classes) throw ConfigError("labels_max", "cannot exceed num_classes");
  }
}

SynthConfig SynthConfig::from_config(KeyValueConfig& kv) {
  SynthConfig c;
  c.num_modalities = kv.get_uint("num_modalities", c.num_modalities);
  c.num_classes = kv.get_uint("num_classes", c.num_classes);
  c.multi_label = kv.get_bool("multi_label", c.multi_label);
  c.labels_min = kv.get_uint("labels_min", c.labels_min);
  c.labels_max = kv.get_uint("labels_max", c.labels_max);
  c.latent_dim = kv.get_uint("latent_dim", c.latent_dim);
  c.latent_sigma = kv.get_double("latent_sigma", c.latent_sigma);
  c.input_dims = kv.get_size_list("input_dims", std::vector<std::size_t>(c.num_modalities, 32));
  if (c.input_dims.size() == 1 && c.num_modalities > 1) c.input_dims.assign(c.num_modalities, c.input_dims[0]);
  c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
  c.num_tuples = kv.get_uint("num_tuples", c.num_tuples);
  c.seed = kv.get_uint("seed", c.seed);
  c.validate();
  return c;
}

void SynthConfig::write_to(KeyValueConfig& kv) const {
  kv.set("num_modalities", std::to_string(num_modalities));
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("multi_label", multi_label ? "true" : "false");
  kv.set("labels_min", std::to_string(labels_min));
  kv.set("labels_max", std::to_string(labels_max));
  kv.set("latent_dim", std::to_string(latent_dim));
  kv.set("latent_sigma", format_double(latent_sigma));
  kv.set("input_dims", format_size_list(input_dims));
  kv.set("noise_sigma", format_double(noise_sigma));
  kv.set("num_tuples", std::to_string(num_tuples));
  kv.set("seed", std::to_string(seed));
}

TupleDataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  const std::size_t c = config.num_classes;
  const std::size_t l = config.latent_dim;
  std::normal_distribution<double> normal(0.0, 1.0);

  std::mt19937_64 proto_rng(derive_seed(config.seed, kPrototypeStream));
  std::vector<std::vector<double>> prototypes(c, std::vector<double>(l));
  for (auto& p : prototypes) {
    for (double& v : p) v = normal(proto_rng);
  }

  // A_j stored row-major [input_dim x latent_dim].
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(l));
  std::vector<std::vector<double>> maps;
  for (std::size_t j = 0; j < config.num_modalities; ++j) {
    std::mt19937_64 map_rng(derive_seed(config.seed, kMapStream, j));
    std::vector<double> a(config.input_dims[j] * l);
    for (double& v : a) v = map_scale * normal(map_rng);
    maps.push_back(std::move(a));
  }

  std::mt19937_64 rng(derive_seed(config.seed, kSampleStream));
  std::vector<std::uint32_t> classes(c);
  std::iota(classes.begin(), classes.end(), 0u);

  TupleDataset ds;
  ds.num_modalities = config.num_modalities;
  ds.label_vocabulary = default_vocabulary(c);
  ds.tuples.reserve(config.num_tuples);
  std::vector<double> latent(l);
  for (std::size_t i = 0; i < config.num_tuples; ++i) {
    std::size_t count = 1;
    if (config.multi_label) {
      count = std::uniform_int_distribution<std::size_t>(config.labels_min, config.labels_max)(rng);
    }
    // Partial Fisher-Yates: the first `count` entries become the label set.
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t pick = std::uniform_int_distribution<std::size_t>(k, c - 1)(rng);
      std::swap(classes[k], classes[pick]);
    }
    Tuple t;
    t.tuple_id = static_cast<std::uint32_t>(i);
    t.labels.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(t.labels.begin(), t.labels.end());

    for (std::size_t d = 0; d < l; ++d) latent[d] = config.latent_sigma * normal(rng);
    for (std::uint32_t label : t.labels) {
      for (std::size_t d = 0; d < l; ++d) latent[d] += prototypes[label][d];
    }
    for (std::size_t j = 0; j < config.num_modalities; ++j) {
      const std::size_t width = config.input_dims[j];
      std::vector<double> f(width);
      for (std::size_t r = 0; r < width; ++r) {
        double acc = 0.0;
        for (std::size_t d = 0; d < l; ++d) acc += maps[j][r * l + d] * latent[d];
        f[r] = std::tanh(acc) + config.noise_sigma * normal(rng);
      }
      t.features.push_back(std::move(f));
    }
    ds.tuples.push_back(std::move(t));
  }
  return ds;
}

DatasetSplit split(const TupleDataset& ds, const SplitFractions& fractions, std::uint64_t seed) {
  const double parts[] = {fractions.train, fractions.val, fractions.test};
  for (double f : parts) {
    if (!(f > 0.0) || !std::isfinite(f)) throw ContractError("split: fractions must be positive");
  }
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    throw ContractError("split: fractions must sum to 1");
  }
  const std::size_t m = ds.size();
  const auto floor_count = [m](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(m) + 1e-9));
  };
  const std::size_t n_val = floor_count(fractions.val);
  const std::size_t n_test = floor_count(fractions.test);
  if (n_val == 0 || n_test == 0 || n_val + n_test >= m) {
    throw ContractError("split: " + std::to_string(m) + " tuples leave an empty part");
  }
  const std::size_t n_train = m - n_val - n_test;

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, kSplitStream));
  std::shuffle(order.begin(), order.end(), rng);

  auto take = [&](std::size_t from, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(from),
                                 order.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(idx.begin(), idx.end());
    TupleDataset part;
    part.num_modalities = ds.num_modalities;
    part.label_vocabulary = ds.label_vocabulary;
    for (std::size_t i : idx) part.tuples.push_back(ds.tuples[i]);
    return part;
  };
  return {take(0, n_train), take(n_train, n_val), take(n_train + n_val, n_test)};
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t num_tuples, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch) {
  if (batch_size < 2) throw ContractError("batch_iter: batch size must be at least 2");
  std::vector<std::size_t> order(num_tuples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, kBatchStream, epoch));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_tuples; start += batch_size) {
    const std::size_t end = std::min(num_tuples, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::string format_dataset(const TupleDataset& ds) {
  ds.validate();
  const auto widths = ds.dims();
  const bool uniform = std::adjacent_find(widths.begin(), widths.end(), std::not_equal_to<>()) == widths.end();
  std::string out(kMagic);
  out += " v1 N=" + std::to_string(ds.num_modalities);
  out += " dim=" + (uniform ? std::to_string(widths.empty() ? 0 : widths[0]) : format_size_list(widths));
  out += " labels=" + std::to_string(ds.label_vocabulary.size()) + "\n";
  for (const SampleRecord& r : ds.records()) {
    out += std::to_string(r.tuple_id);
    out += '\t';
    out += std::to_string(r.modality);
    out += '\t';
    for (std::size_t i = 0; i < r.features.size(); ++i) {
      if (i) out += ',';
      append_double(out, r.features[i]);
    }
    out += '\t';
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(r.labels[i]);
    }
    out += '\n';
  }
  return out;
}

TupleDataset parse_dataset(const std::string& text) {
  if (text.empty()) throw ParseError(1, "empty dataset file");
  std::vector<std::string_view> lines = split_on(text, '\n');
  // A well-formed file ends with a newline, leaving an empty final element.
  if (!lines.back().empty()) {
    const std::size_t n = lines.size();
    throw ParseError(n, "truncated record (no line terminator); last good line is " + std::to_string(n - 1));
  }
  lines.pop_back();

  const auto head = split_on(lines.front(), ' ');
  if (head.size() != 5 || head[0] != kMagic) throw ParseError(1, "missing '#xmodal-dataset' header");
  if (head[1] != "v1") throw ParseError(1, "unsupported version '" + std::string(head[1]) + "'");
  std::size_t n = 0;
  std::size_t vocab = 0;
  if (!parse_number(header_value(head[2], "N", 1), n) || n == 0) throw ParseError(1, "bad modality count");
  std::vector<std::size_t> widths = parse_dims(header_value(head[3], "dim", 1), 1);
  if (!parse_number(header_value(head[4], "labels", 1), vocab)) throw ParseError(1, "bad label count");
  if (widths.size() == 1) widths.assign(n, widths[0]);
  if (widths.size() != n) throw ParseError(1, "dim list does not match N");

  std::vector<SampleRecord> records;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const std::size_t line = k + 1;
    const auto fields = split_on(lines[k], '\t');
    if (fields.size() != 4) {
      throw ParseError(line, "expected 4 tab-separated fields, got " + std::to_string(fields.size()) +
                                 "; last good line is " + std::to_string(line - 1));
    }
    SampleRecord r;
    if (!parse_number(fields[0], r.tuple_id)) throw ParseError(line, "bad tuple id '" + std::string(fields[0]) + "'");
    if (!parse_number(fields[1], r.modality) || r.modality >= n) {
      throw ParseError(line, "bad modality '" + std::string(fields[1]) + "'");
    }
    for (std::string_view v : split_on(fields[2], ',')) {
      double x = 0.0;
      if (!parse_number(v, x)) throw ParseError(line, "bad feature value '" + std::string(v) + "'");
      r.features.push_back(x);
    }
    if (r.features.size() != widths[r.modality]) {
      throw ParseError(line, "expected " + std::to_string(widths[r.modality]) + " features, got " +
                                 std::to_string(r.features.size()) + "; last good line is " +
                                 std::to_string(line - 1));
    }
    if (!fields[3].empty()) {
      for (std::string_view v : split_on(fields[3], ',')) {
        std::uint32_t label = 0;
        if (!parse_number(v, label) || label >= vocab) throw ParseError(line, "bad label '" + std::string(v) + "'");
        r.labels.push_back(label);
      }
    }
    std::sort(r.labels.begin(), r.labels.end());
    r.labels.erase(std::unique(r.labels.begin(), r.labels.end()), r.labels.end());
    records.push_back(std::move(r));
  }
  return TupleDataset::from_records(n, default_vocabulary(vocab), records);
}

void save_dataset(const TupleDataset& ds, const std::filesystem::path& path) {
  const std::string text = format_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

TupleDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace xmodal
