#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "effnet/dataset.hpp"
#include "support.hpp"

using namespace effnet;
using namespace effnet::testkit;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::multiset<std::string> paths(const DatasetManifest& m) {
  std::multiset<std::string> out;
  for (const auto& r : m.records) out.insert(r.path);
  return out;
}

} // namespace

TEST(Manifest, DerivesSortedVocabulary) {
  auto m = make_manifest({{"a.ppm", "skin"}, {"b.ppm", "brain"}, {"c.ppm", "skin"}});
  EXPECT_EQ(m.classes, (std::vector<std::string>{"brain", "skin"}));
  EXPECT_EQ(m.class_index("skin"), 1u);
  EXPECT_THROW(m.class_index("lung"), ArgumentError);
}

TEST(Manifest, RejectsDuplicatePaths) {
  EXPECT_THROW(make_manifest({{"a.ppm", "x"}, {"a.ppm", "y"}}), ArgumentError);
}

TEST(Manifest, CsvRoundTripWithQuotingAndRelativePaths) {
  const std::string dir = make_temp_dir("manifest");
  std::filesystem::create_directories(dir + "/sub");
  auto m = make_manifest({{dir + "/img, one.ppm", "class \"a\""}, {dir + "/sub/two.ppm", "b"}}, dir);
  write_manifest(dir + "/m.csv", m);
  const std::string text = read_file(dir + "/m.csv");
  EXPECT_EQ(text.substr(0, 11), "path,label\n");
  EXPECT_NE(text.find("sub/two.ppm"), std::string::npos);
  EXPECT_EQ(text.find(dir), std::string::npos);

  auto back = read_manifest(dir + "/m.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.records[0].label, "class \"a\"");
  EXPECT_EQ(std::filesystem::weakly_canonical(back.resolve(back.records[1])),
            std::filesystem::weakly_canonical(dir + "/sub/two.ppm"));
}

TEST(Manifest, ReadErrors) {
  const std::string dir = make_temp_dir("manifest_bad");
  std::ofstream(dir + "/bad.csv") << "file,class\nx,y\n";
  EXPECT_THROW(read_manifest(dir + "/bad.csv"), FormatError);
  std::ofstream(dir + "/quote.csv") << "path,label\n\"x,y\n";
  EXPECT_THROW(read_manifest(dir + "/quote.csv"), FormatError);
  EXPECT_THROW(read_manifest(dir + "/missing.csv"), FormatError);
}

TEST(Split, SizesFollowLargestRemainder) {
  EXPECT_EQ(split_sizes(10, {0.8, 0.1, 0.1, 0}), (std::array<std::size_t, 3>{8, 1, 1}));
  EXPECT_EQ(split_sizes(1, {0.7, 0.15, 0.15, 0}), (std::array<std::size_t, 3>{1, 0, 0}));
  EXPECT_EQ(split_sizes(3, {1.0 / 3, 1.0 / 3, 1.0 / 3, 0}), (std::array<std::size_t, 3>{1, 1, 1}));
  EXPECT_EQ(split_sizes(4, {1.0 / 3, 1.0 / 3, 1.0 / 3, 0}), (std::array<std::size_t, 3>{2, 1, 1}));
  EXPECT_EQ(split_sizes(0, {}), (std::array<std::size_t, 3>{0, 0, 0}));
}

TEST(Split, RejectsBadFractions) {
  EXPECT_THROW(validate_split({0.7, 0.2, 0.2, 0}), ArgumentError);
  EXPECT_THROW(validate_split({1.1, -0.1, 0.0, 0}), ArgumentError);
}

TEST(Split, TenRecordsEightOneOne) {
  auto m = synthetic_manifest({5, 5});
  auto s = stratified_split(m, {0.8, 0.1, 0.1, 3});
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_LE(max_class_deviation(m, s), 1.0);
}

TEST(Split, SingleRecordGoesToTrain) {
  auto m = synthetic_manifest({1});
  auto s = stratified_split(m, {0.7, 0.15, 0.15, 0});
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_EQ(s.val.size(), 0u);
  EXPECT_EQ(s.test.size(), 0u);
}

TEST(Split, ExactCountsAreReproduced) {
  for (const auto& c : split_cases()) {
    auto m = synthetic_manifest(c.class_sizes);
    const auto spec = SplitSpec::from_counts(c.train, c.val, c.test, 42);
    auto s = stratified_split(m, spec);
    EXPECT_EQ(s.train.size(), c.train) << c.name;
    EXPECT_EQ(s.val.size(), c.val) << c.name;
    EXPECT_EQ(s.test.size(), c.test) << c.name;
    EXPECT_LE(max_class_deviation(m, s), 1.0) << c.name;
  }
}

TEST(Split, IsAPartitionAndDeterministic) {
  auto m = synthetic_manifest({37, 11, 5, 2});
  const SplitSpec spec{0.6, 0.25, 0.15, 9};
  auto a = stratified_split(m, spec);
  auto b = stratified_split(m, spec);
  EXPECT_EQ(a.train.records, b.train.records);
  EXPECT_EQ(a.test.records, b.test.records);
  auto c = stratified_split(m, SplitSpec{0.6, 0.25, 0.15, 10});
  EXPECT_NE(a.train.records, c.train.records);

  std::multiset<std::string> all = paths(a.train);
  for (const auto& p : paths(a.val)) all.insert(p);
  for (const auto& p : paths(a.test)) all.insert(p);
  EXPECT_EQ(all, paths(m));
  EXPECT_EQ(a.train.classes, m.classes);
}

TEST(Split, ManyRandomMixesStayWithinOneRecord) {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::size_t> sizes(1 + rng.below(6));
    for (auto& s : sizes) s = 1 + rng.below(60);
    auto m = synthetic_manifest(sizes);
    const double tr = rng.uniform(0.3, 0.8);
    const double va = rng.uniform(0.0, 1.0 - tr);
    SplitSpec spec{tr, va, 1.0 - tr - va, rng.next()};
    auto s = stratified_split(m, spec);
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), m.size());
    const std::array<std::size_t, 3> got{s.train.size(), s.val.size(), s.test.size()};
    EXPECT_EQ(got, split_sizes(m.size(), spec));
    EXPECT_LE(max_class_deviation(m, s), 1.0) << "trial " << trial;
  }
}

TEST(Split, WritesCsvsAndSummary) {
  const std::string dir = make_temp_dir("split_out");
  auto m = synthetic_manifest({6, 4});
  const SplitSpec spec{0.5, 0.25, 0.25, 1};
  write_split(dir, stratified_split(m, spec), spec);
  for (const char* f : {"train.csv", "val.csv", "test.csv", "split.json"})
    EXPECT_TRUE(std::filesystem::exists(dir + "/" + f)) << f;
  EXPECT_EQ(read_manifest(dir + "/train.csv").size(), 5u);
  EXPECT_NE(read_file(dir + "/split.json").find("\"seed\""), std::string::npos);
}

TEST(OneHot, SingleHotEntry) {
  auto v = one_hot<double>(2, 4);
  EXPECT_EQ(v.shape(), (Shape{4}));
  EXPECT_EQ(v.values(), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_THROW(one_hot(4, 4), ArgumentError);
}

TEST(Synthetic, DeterministicAndLoadable) {
  const std::string a = make_temp_dir("synth_a");
  const std::string b = make_temp_dir("synth_b");
  auto ma = generate_synthetic_dataset(3, 4, 16, 5, a);
  generate_synthetic_dataset(3, 4, 16, 5, b);
  EXPECT_EQ(ma.size(), 12u);
  EXPECT_EQ(ma.classes.size(), 3u);
  for (const auto& r : ma.records) {
    const std::string rel = std::filesystem::relative(ma.resolve(r), a).string();
    EXPECT_EQ(read_file(a + "/" + rel), read_file(b + "/" + rel)) << rel;
  }
  EXPECT_EQ(read_file(a + "/manifest.csv"), read_file(b + "/manifest.csv"));

  PreprocessConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  auto data = load_images(read_manifest(a + "/manifest.csv"), ma.classes, cfg);
  ASSERT_EQ(data.size(), 12u);
  EXPECT_EQ(data.images[0].shape(), (Shape{8, 8, 3}));
  std::vector<std::size_t> idx{0, 5};
  EXPECT_EQ(stack_batch(data.images, idx).shape(), (Shape{2, 8, 8, 3}));
  std::map<std::size_t, int> per_label;
  for (auto l : data.labels) ++per_label[l];
  EXPECT_EQ(per_label.size(), 3u);
}
