#include <cstring>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "pointbrush/frameset_io.hpp"
#include "pointbrush/synthetic.hpp"
#include "test_util.hpp"

namespace pb = pointbrush;
using pbtest::TempDir;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const pb::Error& e) {
    return e.what();
  }
  return "<no error>";
}

// Independent encoder: memcpy of host floats, valid on little-endian hosts.
pb::Bytes le_f32(float v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  return {b[0], b[1], b[2], b[3]};
}

pb::PointCloud float_exact_cloud(std::mt19937_64& rng, std::size_t n) {
  std::vector<pb::Point> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = pbtest::random_vec(rng, -3, 3);
    using pbtest::to_float_precision;
    const pb::Vec3 narrowed(to_float_precision(p.x()), to_float_precision(p.y()), to_float_precision(p.z()));
    pts.push_back({narrowed, pbtest::random_rgb(rng)});
  }
  return pb::PointCloud(std::move(pts));
}

}  // namespace

TEST(WriteFrame, EmptyCloudIsBareHeader) {
  const auto bytes = pb::write_frame(pb::PointCloud{}, 0);
  const pb::Bytes expected{'P', 'C', 'F', 'B', 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(bytes, expected);
}

TEST(WriteFrame, SinglePointByteLayout) {
  const pb::PointCloud cloud({{{1.0, 2.0, 3.0}, {255, 0, 0}}});
  const auto bytes = pb::write_frame(cloud, 0);
  ASSERT_EQ(bytes.size(), 40u);
  // Hand-assembled: 1.0f = 0x3F800000, 2.0f = 0x40000000, 3.0f = 0x40400000.
  const pb::Bytes body{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0xFF, 0x00, 0x00, 0x00};
  EXPECT_EQ(pb::Bytes(bytes.begin() + 24, bytes.end()), body);
  EXPECT_EQ(pb::Bytes(bytes.begin() + 24, bytes.begin() + 28), le_f32(1.0f));
  // point_count = 1
  EXPECT_EQ(bytes[8], 1);
}

TEST(WriteFrame, TimestampLittleEndian) {
  const auto bytes = pb::write_frame(pb::PointCloud{}, 0x0102030405060708ull);
  const pb::Bytes ts(bytes.begin() + 16, bytes.end());
  EXPECT_EQ(ts, (pb::Bytes{8, 7, 6, 5, 4, 3, 2, 1}));
}

TEST(WriteFrame, Deterministic) {
  std::mt19937_64 rng(1);
  const auto cloud = pbtest::random_cloud(rng, 200);
  EXPECT_EQ(pb::write_frame(cloud, 5), pb::write_frame(cloud, 5));
}

TEST(ReadFrame, RoundTripAtFloatPrecision) {
  std::mt19937_64 rng(2);
  const auto cloud = pbtest::random_cloud(rng, 1000, -10, 10);
  const auto bytes = pb::write_frame(cloud, 1234);
  EXPECT_EQ(bytes.size(), pb::frame_file_size(1000));
  const auto frame = pb::read_frame(bytes);
  EXPECT_EQ(frame.timestamp_us, 1234u);
  ASSERT_EQ(frame.cloud.size(), cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      EXPECT_EQ(frame.cloud[i].position[a], static_cast<double>(static_cast<float>(cloud[i].position[a])));
    }
    EXPECT_EQ(frame.cloud[i].color, cloud[i].color);
  }
}

TEST(ReadFrame, FloatExactCloudRoundTripsExactly) {
  std::mt19937_64 rng(3);
  const auto cloud = float_exact_cloud(rng, 500);
  const auto back = pb::read_frame(pb::write_frame(cloud, 0)).cloud;
  ASSERT_EQ(back.size(), cloud.size());
  EXPECT_EQ(back, cloud);
}

TEST(ReadFrame, HeaderOnlyIsEmptyCloud) {
  const auto frame = pb::read_frame(pb::write_frame(pb::PointCloud{}, 0));
  EXPECT_TRUE(frame.cloud.empty());
}

TEST(ReadFrame, Truncated) {
  std::mt19937_64 rng(4);
  auto bytes = pb::write_frame(pbtest::random_cloud(rng, 10), 0);
  bytes.resize(24 + 5 * 16);
  EXPECT_EQ(error_of([&] { pb::read_frame(bytes); }), "unexpected end of file, expected 184 bytes");
  EXPECT_EQ(error_of([&] { pb::read_frame(pb::Bytes{'P', 'C', 'F', 'B', 1}); }),
            "unexpected end of file, expected 24 bytes");
}

TEST(ReadFrame, BadMagicAndVersion) {
  auto bytes = pb::write_frame(pb::PointCloud{}, 0);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(error_of([&] { pb::read_frame(bad); }), "not a frame file");
  EXPECT_EQ(error_of([&] { pb::read_frame(pb::write_mask(pb::LabelMask(3))); }), "not a frame file");
  bad = bytes;
  bad[4] = 2;
  EXPECT_TRUE(error_of([&] { pb::read_frame(bad); }).starts_with("unsupported version"));
}

TEST(ReadFrame, TrailingBytesRejected) {
  auto bytes = pb::write_frame(pb::PointCloud{}, 0);
  bytes.push_back(0);
  EXPECT_TRUE(error_of([&] { pb::read_frame(bytes); }).starts_with("trailing data"));
}

TEST(Mask, AllUnlabeledBody) {
  const auto bytes = pb::write_mask(pb::LabelMask(3));
  ASSERT_EQ(bytes.size(), 30u);
  EXPECT_EQ(pb::Bytes(bytes.begin(), bytes.begin() + 4), (pb::Bytes{'P', 'C', 'L', 'B'}));
  EXPECT_EQ(pb::Bytes(bytes.begin() + 24, bytes.end()), (pb::Bytes{0, 0, 0, 0, 0, 0}));
}

TEST(Mask, HandAssembledBody) {
  const auto bytes = pb::write_mask(pb::LabelMask(std::vector<pb::LabelId>{1, 2, 65535}));
  EXPECT_EQ(pb::Bytes(bytes.begin() + 24, bytes.end()), (pb::Bytes{0x01, 0x00, 0x02, 0x00, 0xFF, 0xFF}));
  // reserved timestamp field is zero
  EXPECT_EQ(pb::Bytes(bytes.begin() + 16, bytes.begin() + 24), pb::Bytes(8, 0));
}

TEST(Mask, RoundTripProperty) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> label(0, 65535);
  std::uniform_int_distribution<int> len(0, 2000);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<pb::LabelId> l(trial == 0 ? 10000 : len(rng));
    for (auto& v : l) v = static_cast<pb::LabelId>(label(rng));
    const pb::LabelMask mask(l);
    const auto bytes = pb::write_mask(mask);
    EXPECT_EQ(bytes.size(), pb::mask_file_size(mask.size()));
    EXPECT_EQ(pb::read_mask(bytes), mask);
  }
}

TEST(Mask, ErrorClasses) {
  EXPECT_EQ(error_of([&] { pb::read_mask(pb::write_frame(pb::PointCloud{}, 0)); }), "not a mask file");
  auto bytes = pb::write_mask(pb::LabelMask(4));
  bytes.pop_back();
  EXPECT_EQ(error_of([&] { pb::read_mask(bytes); }), "unexpected end of file, expected 32 bytes");
}

TEST(LoadSequence, LexicographicWithoutManifest) {
  TempDir dir("lex");
  for (const char* name : {"frame_000002.pcb", "frame_000000.pcb", "frame_000001.pcb"}) {
    pb::write_file(dir.path() / name, pb::write_frame(pb::PointCloud{}, 0));
  }
  pb::write_file(dir.path() / "notes.txt", pb::Bytes{'x'});
  const auto seq = pb::load_sequence(dir.path());
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq.frames[0].name, "frame_000000.pcb");
  EXPECT_EQ(seq.frames[1].name, "frame_000001.pcb");
  EXPECT_EQ(seq.frames[2].name, "frame_000002.pcb");
  EXPECT_EQ(seq.nominal_fps, 30.0);
  // zero header timestamps are synthesized from the nominal rate
  EXPECT_EQ(seq.frames[1].timestamp_us, 33333u);
  EXPECT_EQ(seq.frames[2].timestamp_us, 66667u);
  EXPECT_EQ(seq.mask_path(1).filename(), "frame_000001.lbl");
}

TEST(LoadSequence, ManifestOrderAndFps) {
  TempDir dir("manifest");
  for (const char* name : {"b.pcb", "a.pcb"}) pb::write_file(dir.path() / name, pb::write_frame(pb::PointCloud{}, 0));
  pb::write_manifest(dir.path(), 30.0, {"b.pcb", "a.pcb"});
  const auto seq = pb::load_sequence(dir.path());
  ASSERT_EQ(seq.size(), 2u);
  EXPECT_EQ(seq.frames[0].name, "b.pcb");
  EXPECT_EQ(seq.nominal_fps, 30.0);
}

TEST(LoadSequence, Errors) {
  TempDir dir("errors");
  EXPECT_EQ(error_of([&] { pb::load_sequence(dir.path()); }), "empty sequence");
  pb::write_manifest(dir.path(), 30.0, {"frame_000000.pcb"});
  EXPECT_EQ(error_of([&] { pb::load_sequence(dir.path()); }), "missing frame frame_000000.pcb");
}

TEST(LoadSequence, HeaderTimestampsKeptAndMustIncrease) {
  TempDir dir("ts");
  pb::write_file(dir.path() / "frame_0.pcb", pb::write_frame(pb::PointCloud{}, 10));
  pb::write_file(dir.path() / "frame_1.pcb", pb::write_frame(pb::PointCloud{}, 50));
  EXPECT_EQ(pb::load_sequence(dir.path()).frames[1].timestamp_us, 50u);
  pb::write_file(dir.path() / "frame_2.pcb", pb::write_frame(pb::PointCloud{}, 20));
  EXPECT_TRUE(error_of([&] { pb::load_sequence(dir.path()); }).starts_with("timestamps not strictly increasing"));
}

TEST(LoadSequence, PureFunctionOfContents) {
  TempDir dir("pure");
  std::mt19937_64 rng(6);
  std::vector<pb::PointCloud> clouds{pbtest::random_cloud(rng, 5), pbtest::random_cloud(rng, 7)};
  const std::vector<std::uint64_t> ts{0, 33333};
  pb::write_sequence(dir.path(), clouds, ts, 30.0);
  const auto a = pb::load_sequence(dir.path());
  const auto b = pb::load_sequence(dir.path());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.frames[i].name, b.frames[i].name);
    EXPECT_EQ(a.frames[i].timestamp_us, b.frames[i].timestamp_us);
    EXPECT_EQ(a.frames[i].point_count, b.frames[i].point_count);
  }
  EXPECT_EQ(a.frames[1].point_count, 7u);
  EXPECT_EQ(std::filesystem::file_size(a.frame_path(1)), pb::frame_file_size(7));
}

// ---- synthetic generator ----------------------------------------------------

namespace {

pb::SceneSpec one_object(pb::Vec3 velocity) {
  pb::SceneSpec spec;
  pb::SceneObject obj;
  obj.points = 300;
  obj.translation_per_frame = velocity;
  spec.objects.push_back(obj);
  return spec;
}

}  // namespace

TEST(Synthetic, StaticObjectFramesIdentical) {
  const auto gen = pb::generate_synthetic_sequence(one_object(pb::Vec3::Zero()), 3, 42);
  ASSERT_EQ(gen.clouds.size(), 3u);
  const auto first = pb::write_frame(gen.clouds[0], 0);
  for (std::size_t f = 1; f < 3; ++f) {
    EXPECT_EQ(pb::write_frame(gen.clouds[f], 0), first);
    EXPECT_EQ(gen.truth_masks[f], gen.truth_masks[0]);
  }
}

TEST(Synthetic, TranslatingCentroidOracle) {
  const auto gen = pb::generate_synthetic_sequence(one_object({0.1, 0, 0}), 5, 7);
  const pb::Vec3 c0 = pb::centroid(gen.clouds[0].positions());
  for (std::size_t k = 0; k < 5; ++k) {
    // Written and re-read through the file format, as a consumer would see it.
    const auto cloud = pb::read_frame(pb::write_frame(gen.clouds[k], 0)).cloud;
    const pb::Vec3 ck = pb::centroid(cloud.positions());
    const pb::Vec3 d = ck - pb::centroid(pb::read_frame(pb::write_frame(gen.clouds[0], 0)).cloud.positions());
    EXPECT_NEAR(d.x(), 0.1 * k, 1e-6);
    EXPECT_NEAR(d.y(), 0.0, 1e-6);
    EXPECT_NEAR(d.z(), 0.0, 1e-6);
    EXPECT_NEAR((pb::centroid(gen.clouds[k].positions()) - c0).x(), 0.1 * k, 1e-9);
  }
}

TEST(Synthetic, SameSeedSameBytes) {
  pb::SceneSpec spec = one_object({0.01, 0.02, 0});
  spec.objects[0].rotation_per_frame_deg = {0, 0, 5};
  spec.background = pb::SceneBackground{200, {-1, -1, -1}, {1, -1, 1}, {100, 100, 100}, 10};
  spec.shuffle = true;
  const auto a = pb::generate_synthetic_sequence(spec, 4, 99);
  const auto b = pb::generate_synthetic_sequence(spec, 4, 99);
  for (std::size_t f = 0; f < 4; ++f) {
    EXPECT_EQ(pb::write_frame(a.clouds[f], a.timestamps[f]), pb::write_frame(b.clouds[f], b.timestamps[f]));
    EXPECT_EQ(a.truth_masks[f], b.truth_masks[f]);
  }
  const auto c = pb::generate_synthetic_sequence(spec, 4, 100);
  EXPECT_NE(pb::write_frame(a.clouds[0], 0), pb::write_frame(c.clouds[0], 0));
}

TEST(Synthetic, TruthMotionMapsObjectPoints) {
  pb::SceneSpec spec = one_object({0.02, 0, 0.01});
  spec.objects[0].rotation_per_frame_deg = {3, 0, 4};
  spec.objects[0].position = {0.5, 0.2, 1.0};
  spec.shuffle = true;
  const auto gen = pb::generate_synthetic_sequence(spec, 4, 3);
  const auto idx0 = gen.truth_masks[0].indices_of(1);
  for (std::size_t f = 1; f < 4; ++f) {
    const auto& t = gen.truth_motions[f].at(1);
    // Every moved frame-0 object point exists in frame f.
    const pb::KdTree tree(gen.clouds[f]);
    for (const std::size_t i : idx0) {
      const auto nn = tree.nearest(t(gen.clouds[0][i].position));
      EXPECT_LT(nn.distance(), 1e-9);
      EXPECT_EQ(gen.truth_masks[f][nn.index], 1);
    }
  }
}

TEST(Synthetic, ExitFrameRemovesObject) {
  pb::SceneSpec spec = one_object(pb::Vec3::Zero());
  pb::SceneObject other;
  other.label = 2;
  other.points = 100;
  other.exit_frame = 2;
  spec.objects.push_back(other);
  const auto gen = pb::generate_synthetic_sequence(spec, 3, 1);
  EXPECT_EQ(gen.clouds[1].size(), 400u);
  EXPECT_EQ(gen.clouds[2].size(), 300u);
  EXPECT_TRUE(gen.truth_masks[2].indices_of(2).empty());
}

TEST(Synthetic, EmptySceneRejected) {
  EXPECT_EQ(error_of([] { pb::generate_synthetic_sequence(pb::SceneSpec{}, 3, 0); }), "empty scene");
}

TEST(Synthetic, ParsesJsonDescription) {
  const auto j = nlohmann::json::parse(R"({
    "fps": 15, "shuffle": true,
    "objects": [{"label": 3, "points": 50, "shape": "pin", "size": [0.08, 0.08, 0.4],
                 "color": [10, 20, 30], "position": [0, 1, 2], "translation_per_frame": [0.01, 0, 0],
                 "rotation_per_frame_deg": [0, 10, 0], "exit_frame": 4}],
    "background": {"points": 10, "min": [-1, -1, -1], "max": [1, 1, -0.9]}
  })");
  const auto spec = pb::parse_scene_spec(j);
  EXPECT_EQ(spec.fps, 15.0);
  EXPECT_TRUE(spec.shuffle);
  ASSERT_EQ(spec.objects.size(), 1u);
  EXPECT_EQ(spec.objects[0].label, 3);
  EXPECT_EQ(spec.objects[0].shape, pb::ShapeKind::Pin);
  EXPECT_EQ(spec.objects[0].color, (pb::Rgb{10, 20, 30}));
  EXPECT_EQ(*spec.objects[0].exit_frame, 4u);
  ASSERT_TRUE(spec.background);
  EXPECT_EQ(spec.background->points, 10u);
  EXPECT_THROW(pb::parse_scene_spec(nlohmann::json::parse(R"({"objects": [{"shape": "cone"}]})")), pb::Error);
}
