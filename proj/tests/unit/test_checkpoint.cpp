#include <gtest/gtest.h>

#include <filesystem>

#include "aode/aode.hpp"
#include "oracle.hpp"

using namespace aode;

namespace {

Checkpoint sample(std::uint64_t seed, int kind) {
  const oracle::Instance in = oracle::random_instance(seed, kind);
  return {in.net, 1e-3 * static_cast<double>(seed), in.theta, {seed, "0badc0de", "{\"task\": \"x\"}"}};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  for (std::uint64_t seed = 0; seed < 9; ++seed) {
    const Checkpoint c = sample(seed, static_cast<int>(seed % 3));
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    EXPECT_TRUE(back == c) << "seed " << seed;
    EXPECT_EQ(encode_checkpoint(back), bytes);
  }
}

TEST(Checkpoint, AutoencoderAndUnetSchedulesSurvive) {
  const TimeGrid g = TimeGrid::from_steps(21, 0.1);
  const Network ae(g, build_autoencoder_schedule({{2, 7}, {1, 7}}, 0, {{2, 7}}, g), Activation::smooth_leaky_relu(0.1, 10));
  const TimeGrid gu = TimeGrid::from_steps(6, 0.1);
  const Network un(gu, build_unet_schedule({4, 2, 4}, gu), Activation::smooth_relu(3));
  for (const Network& net : {ae, un}) {
    ControlParams th = ControlParams::zeros(net);
    th.W[0](0, 0) = 0.25;
    const Checkpoint c{net, 0.0, th, {}};
    const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
    EXPECT_TRUE(back == c);
    EXPECT_EQ(back.net.schedule.reset_at(14 % net.n_steps()), net.schedule.reset_at(14 % net.n_steps()));
    EXPECT_EQ(back.net.schedule.output_set(), net.schedule.output_set());
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = encode_checkpoint(sample(4, 1));
  for (std::size_t pos : {std::size_t{12}, bytes.size() / 2, bytes.size() - 5}) {
    auto b = bytes;
    b[pos] ^= 0x01;
    EXPECT_THROW(decode_checkpoint(b), ChecksumMismatch) << "byte " << pos;
  }
  auto v = bytes;
  v[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  EXPECT_THROW(decode_checkpoint(v), VersionUnsupported);
  auto m = bytes;
  m[1] = 'Z';
  EXPECT_THROW(decode_checkpoint(m), BadMagic);
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 6)), TruncatedFile);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "aode_ckpt_test.bin";
  const Checkpoint c = sample(7, 2);
  save_checkpoint(path.string(), c);
  EXPECT_TRUE(load_checkpoint(path.string()) == c);
  EXPECT_THROW(load_checkpoint((path.string() + ".missing")), Error);
}
