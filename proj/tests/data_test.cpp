#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "xmodal/data.hpp"
#include "xmodal/errors.hpp"

namespace xmodal {
namespace {

SynthConfig tiny_config() {
  SynthConfig c;
  c.num_classes = 5;
  c.num_tuples = 100;
  c.input_dims = {6, 4};
  c.latent_dim = 5;
  c.seed = 11;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("xmodal_data_test_" + name);
}

TEST(SynthTest, CountsAndShapes) {
  const TupleDataset ds = generate_synthetic(tiny_config());
  EXPECT_EQ(ds.size(), 100u);
  EXPECT_EQ(ds.records().size(), 200u);
  EXPECT_EQ(ds.label_vocabulary.size(), 5u);
  EXPECT_EQ(ds.dims(), (std::vector<std::size_t>{6, 4}));
  for (const Tuple& t : ds.tuples) {
    ASSERT_EQ(t.labels.size(), 1u);
    EXPECT_LT(t.labels[0], 5u);
  }
  EXPECT_NO_THROW(ds.validate());
}

TEST(SynthTest, DeterministicInSeed) {
  EXPECT_EQ(generate_synthetic(tiny_config()), generate_synthetic(tiny_config()));
  SynthConfig other = tiny_config();
  other.seed = 12;
  EXPECT_FALSE(generate_synthetic(tiny_config()) == generate_synthetic(other));
}

TEST(SynthTest, MultiLabelSetsWithinRange) {
  SynthConfig c = tiny_config();
  c.multi_label = true;
  c.labels_min = 1;
  c.labels_max = 3;
  const TupleDataset ds = generate_synthetic(c);
  std::set<std::size_t> sizes;
  for (const Tuple& t : ds.tuples) {
    sizes.insert(t.labels.size());
    EXPECT_TRUE(std::is_sorted(t.labels.begin(), t.labels.end()));
    EXPECT_EQ(std::set<std::uint32_t>(t.labels.begin(), t.labels.end()).size(), t.labels.size());
  }
  EXPECT_EQ(sizes, (std::set<std::size_t>{1, 2, 3}));
}

double pair_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

TEST(SynthTest, NoiselessFeaturesClusterByClass) {
  SynthConfig c = tiny_config();
  c.noise_sigma = 0.0;
  const TupleDataset ds = generate_synthetic(c);
  for (std::size_t j = 0; j < 2; ++j) {
    double within = 0.0, across = 0.0;
    std::size_t n_within = 0, n_across = 0;
    for (std::size_t a = 0; a < ds.size(); ++a) {
      for (std::size_t b = a + 1; b < ds.size(); ++b) {
        const double d = pair_distance(ds.tuples[a].features[j], ds.tuples[b].features[j]);
        if (ds.tuples[a].labels == ds.tuples[b].labels) {
          within += d, ++n_within;
        } else {
          across += d, ++n_across;
        }
      }
    }
    EXPECT_LT(within / n_within, across / n_across) << "modality " << j;
  }
}

TEST(SynthTest, RejectsBadConfig) {
  SynthConfig c = tiny_config();
  c.num_classes = 1;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = tiny_config();
  c.num_tuples = 9;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = tiny_config();
  c.noise_sigma = -0.1;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(SynthTest, ConfigFromKeyValues) {
  KeyValueConfig kv = KeyValueConfig::parse("num_classes = 5\nnum_tuples=100\ninput_dims=6,4\nlatent_dim=5\nseed=11\n");
  const SynthConfig c = SynthConfig::from_config(kv);
  EXPECT_NO_THROW(kv.require_all_consumed());
  EXPECT_EQ(c, tiny_config());
  KeyValueConfig round;
  c.write_to(round);
  EXPECT_EQ(SynthConfig::from_config(round), c);

  KeyValueConfig bad = KeyValueConfig::parse("num_clases = 5\n");
  SynthConfig::from_config(bad);
  try {
    bad.require_all_consumed();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "num_clases");
  }
}

TEST(SplitTest, PaperRatiosOnHundredTuples) {
  const DatasetSplit s = split(generate_synthetic(tiny_config()), {0.52, 0.24, 0.24}, 3);
  EXPECT_EQ(s.train.size(), 52u);
  EXPECT_EQ(s.val.size(), 24u);
  EXPECT_EQ(s.test.size(), 24u);
}

TEST(SplitTest, PartitionsTupleSet) {
  const TupleDataset ds = generate_synthetic(tiny_config());
  const DatasetSplit s = split(ds, {0.5, 0.3, 0.2}, 9);
  std::multiset<std::uint32_t> ids;
  for (const TupleDataset* part : {&s.train, &s.val, &s.test}) {
    for (const Tuple& t : part->tuples) {
      ids.insert(t.tuple_id);
      EXPECT_EQ(t, ds.tuples[t.tuple_id]);
    }
  }
  std::multiset<std::uint32_t> expected;
  for (const Tuple& t : ds.tuples) expected.insert(t.tuple_id);
  EXPECT_EQ(ids, expected);
}

TEST(SplitTest, DeterministicAndSeedDependent) {
  const TupleDataset ds = generate_synthetic(tiny_config());
  EXPECT_EQ(split(ds, {}, 1).test, split(ds, {}, 1).test);
  EXPECT_FALSE(split(ds, {}, 1).test == split(ds, {}, 2).test);
}

TEST(SplitTest, RejectsDegenerateFractions) {
  const TupleDataset ds = generate_synthetic(tiny_config());
  EXPECT_THROW(split(ds, {1.0, 0.0, 0.0}, 0), ContractError);
  EXPECT_THROW(split(ds, {0.5, 0.3, 0.3}, 0), ContractError);
  EXPECT_THROW(split(ds, {0.996, 0.002, 0.002}, 0), ContractError);  // floor(0.2) == 0
  EXPECT_EQ(split(ds, {0.98, 0.01, 0.01}, 0).test.size(), 1u);
}

TEST(BatchTest, SizesAndDroppedRemainder) {
  auto sizes = [](std::size_t m, std::size_t t) {
    std::vector<std::size_t> out;
    for (const auto& b : batch_iter(m, t, 0, 0)) out.push_back(b.size());
    return out;
  };
  EXPECT_EQ(sizes(10, 4), (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(sizes(9, 4), (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(sizes(256, 256), (std::vector<std::size_t>{256}));
  EXPECT_THROW(batch_iter(10, 1, 0, 0), ContractError);
}

TEST(BatchTest, KeyedBySeedAndEpoch) {
  EXPECT_EQ(batch_iter(50, 8, 3, 1), batch_iter(50, 8, 3, 1));
  EXPECT_NE(batch_iter(50, 8, 3, 1), batch_iter(50, 8, 3, 2));
  EXPECT_NE(batch_iter(50, 8, 3, 1), batch_iter(50, 8, 4, 1));
  std::set<std::size_t> seen;
  for (const auto& b : batch_iter(50, 8, 3, 1)) {
    for (std::size_t i : b) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(seen.size(), 50u);
}

TEST(DatasetIoTest, RoundTripIsExact) {
  SynthConfig c = tiny_config();
  c.multi_label = true;
  const TupleDataset ds = generate_synthetic(c);
  const auto path = temp_file("roundtrip.tsv");
  save_dataset(ds, path);
  EXPECT_EQ(load_dataset(path), ds);
  std::filesystem::remove(path);
}

TEST(DatasetIoTest, HeaderAndRecordLayout) {
  TupleDataset ds;
  ds.num_modalities = 2;
  ds.label_vocabulary = {"class0", "class1", "class2"};
  ds.tuples.push_back({7, {0, 2}, {{0.1, -2.0}, {1.0 / 3.0, 5e-300}}});
  const std::string text = format_dataset(ds);
  EXPECT_EQ(text,
            "#xmodal-dataset v1 N=2 dim=2 labels=3\n"
            "7\t0\t0.10000000000000001,-2\t0,2\n"
            "7\t1\t0.33333333333333331,5e-300\t0,2\n");
  EXPECT_EQ(parse_dataset(text), ds);
}

const std::string kValid =
    "#xmodal-dataset v1 N=2 dim=2 labels=3\n"
    "0\t0\t1,2\t1\n"
    "0\t1\t3,4\t1\n"
    "1\t0\t5,6\t0,2\n"
    "1\t1\t7,8\t0,2\n";

TEST(DatasetIoTest, ParsesValidText) {
  const TupleDataset ds = parse_dataset(kValid);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.tuples[1].features[1], (std::vector<double>{7, 8}));
  EXPECT_EQ(ds.tuples[1].labels, (LabelSet{0, 2}));
}

TEST(DatasetIoTest, UnknownFieldIsRejectedWithLine) {
  std::string text = kValid;
  text.replace(text.find("3,4\t1\n"), 6, "3,4\t1\textra\n");
  try {
    parse_dataset(text);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(DatasetIoTest, TruncatedFileNamesLastGoodLine) {
  const std::string cut = kValid.substr(0, kValid.size() - 4);  // "7,8\t0,2\n" loses its tail
  try {
    parse_dataset(cut);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5u);
    EXPECT_NE(std::string(e.what()).find("last good line is 4"), std::string::npos) << e.what();
  }
}

TEST(DatasetIoTest, MissingModalityIsValidationError) {
  std::string text = kValid;
  text.erase(text.find("1\t1\t7,8"));
  EXPECT_THROW(parse_dataset(text), ValidationError);
}

TEST(DatasetIoTest, MismatchedLabelsIsValidationError) {
  std::string text = kValid;
  text.replace(text.find("7,8\t0,2"), 7, "7,8\t0,1");
  EXPECT_THROW(parse_dataset(text), ValidationError);
}

TEST(DatasetIoTest, MalformedValuesAreParseErrors) {
  for (const std::string& bad : {std::string("0\t0\t1,x\t1\n"), std::string("0\t0\t1\t1\n"),
                                 std::string("0\t5\t1,2\t1\n"), std::string("0\t0\t1,2\t9\n")}) {
    EXPECT_THROW(parse_dataset("#xmodal-dataset v1 N=2 dim=2 labels=3\n" + bad), ParseError) << bad;
  }
  EXPECT_THROW(parse_dataset("#xmodal-dataset v2 N=2 dim=2 labels=3\n"), ParseError);
  EXPECT_THROW(parse_dataset("garbage\n"), ParseError);
}

TEST(DatasetTest, FeatureMatrixGathersRows) {
  const TupleDataset ds = parse_dataset(kValid);
  EXPECT_EQ(ds.features(0, {1, 0}), Tensor::matrix({{5, 6}, {1, 2}}));
  EXPECT_EQ(ds.features(1), Tensor::matrix({{3, 4}, {7, 8}}));
  EXPECT_THROW(ds.features(2), IndexError);
}

}  // namespace
}  // namespace xmodal
