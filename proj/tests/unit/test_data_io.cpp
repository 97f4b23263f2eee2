#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "aode/aode.hpp"

using namespace aode;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "aode_data_io";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Three 2x2 images with known bytes.
struct IdxFixture {
  fs::path images = scratch("img.idx3");
  fs::path labels = scratch("lab.idx1");
  std::vector<std::uint8_t> pixels{0, 255, 128, 1, 10, 20, 30, 40, 255, 255, 0, 0};
  std::vector<std::uint8_t> labs{7, 0, 9};
  IdxFixture() { write_mnist_idx(images.string(), labels.string(), pixels, labs, 2, 2); }
};

}  // namespace

TEST(Generators, GaussianClassificationIsDeterministicAndLabelled) {
  const Dataset a = gen_gaussian_classification(400, 11);
  const Dataset b = gen_gaussian_classification(400, 11);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == gen_gaussian_classification(400, 12));
  ASSERT_EQ(a.size(), 400u);
  EXPECT_EQ(a.input_dim(), 2u);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const bool pos = a.inputs(0, c) > 0.0;
    EXPECT_EQ(a.targets(0, c), pos ? 1.0 : -1.0);
    EXPECT_EQ(a.targets(1, c), 0.0);
    EXPECT_EQ(a.labels[i], pos ? 1 : 0);
    positives += pos;
  }
  // Standard normal sample: mean near 0, variance near 1, classes roughly balanced.
  EXPECT_NEAR(a.inputs.row(0).mean(), 0.0, 0.2);
  EXPECT_NEAR(a.inputs.row(1).squaredNorm() / 400.0, 1.0, 0.25);
  EXPECT_NEAR(static_cast<double>(positives) / 400.0, 0.5, 0.1);
  // Prefix stability of the counter-based stream.
  EXPECT_TRUE(gen_gaussian_classification(10, 11).inputs == a.inputs.leftCols(10));
  EXPECT_THROW(gen_gaussian_classification(0, 1), ConfigError);
}

TEST(Generators, ParabolaLiesOnCurve) {
  const Dataset d = gen_parabola(300, 4, -2.0, 1.0);
  EXPECT_TRUE(d == gen_parabola(300, 4, -2.0, 1.0));
  EXPECT_TRUE(d.inputs == d.targets);
  for (Eigen::Index i = 0; i < d.inputs.cols(); ++i) {
    EXPECT_GE(d.inputs(0, i), -2.0);
    EXPECT_LT(d.inputs(0, i), 1.0);
    EXPECT_EQ(d.inputs(1, i), d.inputs(0, i) * d.inputs(0, i));
  }
  EXPECT_THROW(gen_parabola(0, 1), ConfigError);
  EXPECT_THROW(gen_parabola(5, 1, 1.0, 1.0), ConfigError);
}

TEST(Idx, FixtureDecodesExactly) {
  const IdxFixture f;
  const Dataset d = load_mnist_idx(f.images.string(), f.labels.string());
  ASSERT_EQ(d.size(), 3u);
  ASSERT_EQ(d.input_dim(), 4u);
  EXPECT_EQ(d.labels, (std::vector<int>{7, 0, 9}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p)
      EXPECT_EQ(d.inputs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)), f.pixels[4 * i + p] / 255.0);
  EXPECT_TRUE(d.inputs == d.targets);
  EXPECT_EQ(d.normalization, "divide_by_255");
  EXPECT_EQ(load_mnist_idx(f.images.string(), f.labels.string(), 2).size(), 2u);
}

TEST(Idx, Errors) {
  const IdxFixture f;
  auto img = io::read_file(f.images.string());
  auto lab = io::read_file(f.labels.string());

  auto bad = img;
  bad[3] = 0x01;
  write_bytes(scratch("bad.idx3"), bad);
  EXPECT_THROW(load_mnist_idx(scratch("bad.idx3").string(), f.labels.string()), BadMagic);
  EXPECT_THROW(load_mnist_idx(f.labels.string(), f.labels.string()), BadMagic);

  auto cut = img;
  cut.resize(cut.size() - 3);
  write_bytes(scratch("cut.idx3"), cut);
  EXPECT_THROW(load_mnist_idx(scratch("cut.idx3").string(), f.labels.string()), TruncatedFile);

  write_mnist_idx(scratch("two.idx3").string(), scratch("two.idx1").string(),
                  std::vector<std::uint8_t>(f.pixels.begin(), f.pixels.begin() + 8), {1, 2}, 2, 2);
  EXPECT_THROW(load_mnist_idx(f.images.string(), scratch("two.idx1").string()), CountMismatch);
  EXPECT_THROW(load_mnist_idx(scratch("missing.idx3").string(), f.labels.string()), Error);
}

TEST(Idx, ShippedSubsetIfPresent) {
  const fs::path dir = fs::path(AODE_SOURCE_DIR) / "data" / "mnist";
  if (!fs::exists(dir / "images.idx3-ubyte")) GTEST_SKIP() << "MNIST files not present";
  const Dataset d = load_mnist_idx((dir / "images.idx3-ubyte").string(), (dir / "labels.idx1-ubyte").string());
  EXPECT_EQ(d.size(), 1000u);
  EXPECT_EQ(d.input_dim(), 784u);
  EXPECT_GE(d.inputs.minCoeff(), 0.0);
  EXPECT_LE(d.inputs.maxCoeff(), 1.0);
  std::vector<int> per_class(10, 0);
  for (int l : d.labels) ++per_class[static_cast<std::size_t>(l)];
  for (int c : per_class) EXPECT_EQ(c, 100);
}

TEST(DatasetContainer, RoundTripIsBitwise) {
  Dataset d = gen_gaussian_classification(17, 3);
  d.inputs(0, 0) = -0.0;
  d.inputs(1, 2) = 1e-310;
  const Dataset back = decode_dataset(encode_dataset(d));
  EXPECT_TRUE(back == d);
  EXPECT_TRUE(std::signbit(back.inputs(0, 0)));

  const fs::path p = scratch("d.aodd");
  save_dataset(p.string(), d, false);
  EXPECT_TRUE(load_dataset(p.string()) == d);
}

TEST(DatasetContainer, CorruptionIsDetected) {
  const auto bytes = encode_dataset(gen_parabola(5, 1));
  auto flipped = bytes;
  flipped[40] ^= 0x10;
  EXPECT_THROW(decode_dataset(flipped), ChecksumMismatch);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_dataset(magic), BadMagic);
  auto version = bytes;
  version[4] = 2;
  EXPECT_THROW(decode_dataset(version), VersionUnsupported);
  EXPECT_THROW(decode_dataset(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10)), TruncatedFile);
}

TEST(DatasetCsv, RoundTrip) {
  const Dataset d = gen_parabola(9, 8);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "x0,x1,y0,y1,label");
  const Dataset back = read_dataset_csv(ss, d.kind, d.name);
  EXPECT_TRUE(back.inputs == d.inputs);
  EXPECT_TRUE(back.targets == d.targets);
  EXPECT_EQ(back.labels, d.labels);

  const fs::path p = scratch("d.csv");
  save_dataset(p.string(), d, true);
  EXPECT_TRUE(load_dataset(p.string()).inputs == d.inputs);
}

TEST(DatasetCsv, MalformedInput) {
  std::stringstream a("x0,z,label\n1,2,0\n");
  EXPECT_THROW(read_dataset_csv(a, Dataset::Kind::reconstruction, "t"), FormatError);
  std::stringstream b("x0,y0,label\n1,2\n");
  EXPECT_THROW(read_dataset_csv(b, Dataset::Kind::reconstruction, "t"), FormatError);
  std::stringstream c("x0,y0,label\n1,abc,0\n");
  EXPECT_THROW(read_dataset_csv(c, Dataset::Kind::reconstruction, "t"), FormatError);
  std::stringstream e("");
  EXPECT_THROW(read_dataset_csv(e, Dataset::Kind::reconstruction, "t"), FormatError);
}

TEST(Embed, PadsAndChecksShape) {
  // U-net [2, 1, 2]: input width 2 inside a 3-dimensional state.
  const LayerSchedule s = build_unet_schedule({2, 1, 2}, TimeGrid::from_steps(3, 0.1));
  ASSERT_EQ(s.dim(), 3u);
  const Dataset d = gen_parabola(4, 2);
  const ParticleBatch b = embed(d, s);
  ASSERT_EQ(b.inputs.rows(), 3);
  EXPECT_TRUE(b.inputs.topRows(2) == d.inputs);
  EXPECT_TRUE(b.inputs.row(2).isZero(0.0));
  EXPECT_TRUE(b.targets.row(2).isZero(0.0));
  const TimeGrid g = TimeGrid::from_steps(4, 0.1);
  EXPECT_THROW(embed(d, build_plain_schedule(1, g)), ShapeError);
  EXPECT_THROW(embed(d, build_plain_schedule(3, g)), ShapeError);
}

TEST(Dataset, SliceAndValidate) {
  const Dataset d = gen_gaussian_classification(10, 1);
  const Dataset s = d.slice(3, 4);
  EXPECT_EQ(s.size(), 4u);
  EXPECT_TRUE(s.inputs == d.inputs.middleCols(3, 4));
  EXPECT_THROW(d.slice(8, 5), IndexError);
  Dataset bad = d;
  bad.labels.pop_back();
  EXPECT_THROW(bad.validate(), ShapeError);
  bad = d;
  bad.inputs(0, 0) = std::nan("");
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(Features, VarianceOrder) {
  Eigen::MatrixXd x(4, 3);
  x << 0, 0, 0,   // variance 0
      0, 1, 2,    // 2/3
      5, 5, 5,    // 0
      0, 3, 0;    // 2
  EXPECT_EQ(variance_order(x), (std::vector<int>{3, 1, 0, 2}));
}

TEST(Features, PermutationRoundTrip) {
  const Dataset d = gen_parabola(6, 3);
  const Dataset p = permute_features(d, {1, 0});
  EXPECT_TRUE(p.inputs.row(0) == d.inputs.row(1));
  EXPECT_TRUE(p.targets.row(1) == d.targets.row(0));
  EXPECT_TRUE(permute_features(p, {1, 0}) == d);
  EXPECT_THROW(permute_features(d, {0, 0}), ShapeError);
  EXPECT_THROW(permute_features(d, {0}), ShapeError);
  EXPECT_THROW(permute_features(gen_gaussian_classification(3, 1), {2, 0}), ShapeError);
}
