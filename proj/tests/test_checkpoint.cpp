#include <gtest/gtest.h>

#include <fstream>

#include "chromaprop/checkpoint.hpp"
#include "test_util.hpp"

using namespace chromaprop;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Checkpoint, RoundTripBothSections) {
  testutil::TempDir dir("ckpt");
  Checkpoint c;
  c.backbone = build_toy_backbone(3, {6, false});
  c.ffm = make_ffm({6, 5, 2}, {4, false, false});
  save_checkpoint(dir.path() / "m.ckpt", c);
  const auto back = load_checkpoint(dir.path() / "m.ckpt");
  ASSERT_TRUE(back.backbone && back.ffm);
  EXPECT_EQ(*back.backbone, *c.backbone);
  EXPECT_EQ(*back.ffm, *c.ffm);
  EXPECT_EQ(checksum(*back.backbone), checksum(*c.backbone));
}

TEST(Checkpoint, OptionalSections) {
  testutil::TempDir dir("ckpt");
  Checkpoint c;
  c.backbone = build_toy_backbone(1, {4, false});
  save_checkpoint(dir.path() / "b.ckpt", c);
  const auto back = load_checkpoint(dir.path() / "b.ckpt");
  EXPECT_TRUE(back.backbone.has_value());
  EXPECT_FALSE(back.ffm.has_value());
}

TEST(Checkpoint, ChecksumSeesEveryWeight) {
  auto b = build_toy_backbone(2, {4, false});
  const auto before = checksum(b);
  b.head().bias[1] = std::nextafter(b.head().bias[1], 1.0);
  EXPECT_NE(checksum(b), before);
}

TEST(Checkpoint, CorruptFilesRejected) {
  testutil::TempDir dir("ckpt");
  const auto good = dir.path() / "g.ckpt";
  Checkpoint c;
  c.backbone = build_toy_backbone(1, {4, false});
  c.ffm = make_ffm({4, 5, 2});
  save_checkpoint(good, c);
  const auto bytes = slurp(good);
  const auto bad = dir.path() / "bad.ckpt";

  auto magic = bytes;
  magic[0] = 'X';
  spit(bad, magic);
  EXPECT_THROW(load_checkpoint(bad), FormatError);

  auto version = bytes;
  version[8] = 9;
  spit(bad, version);
  EXPECT_THROW(load_checkpoint(bad), FormatError);

  for (std::size_t cut : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    spit(bad, std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
    EXPECT_THROW(load_checkpoint(bad), FormatError) << cut;
  }

  auto trailing = bytes;
  trailing.push_back(0);
  spit(bad, trailing);
  EXPECT_THROW(load_checkpoint(bad), FormatError);

  EXPECT_THROW(load_checkpoint(dir.path() / "absent.ckpt"), std::runtime_error);
}

TEST(Checkpoint, UnknownSectionRejected) {
  testutil::TempDir dir("ckpt");
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u32(1);
  w.str("mystery");
  w.i64(4);
  w.u32(0);
  std::vector<char> bytes(w.bytes.begin(), w.bytes.end());
  spit(dir.path() / "u.ckpt", bytes);
  EXPECT_THROW(load_checkpoint(dir.path() / "u.ckpt"), FormatError);
}
