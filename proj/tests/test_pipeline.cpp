#include <gtest/gtest.h>

#include <fstream>

#include "chromaprop/pipeline.hpp"
#include "test_util.hpp"

using namespace chromaprop;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.height = 16;
  s.width = 20;
  s.frames = 7;
  s.background = {40.0, 10.0, -20.0};
  s.background_texture = 5.0;
  s.pan_dx = 1;
  SynthObject o;
  o.color = {60.0, 40.0, 30.0};
  o.width = 6;
  o.height = 5;
  o.x = 3;
  o.y = 4;
  o.dx = 1;
  o.dy = -1;
  o.stripes = Stripes::vertical;
  o.texture = 6.0;
  s.objects.push_back(o);
  return s;
}

}  // namespace

TEST(PlanIntervals, SmallCases) {
  EXPECT_EQ(plan_intervals(5, 3), (std::vector<IntervalSpan>{{1, 3}, {3, 5}}));
  EXPECT_EQ(plan_intervals(6, 3), (std::vector<IntervalSpan>{{1, 3}, {3, 5}, {5, 6}}));
  EXPECT_EQ(plan_intervals(2, 17), (std::vector<IntervalSpan>{{1, 2}}));
  EXPECT_THROW(plan_intervals(1, 3), std::invalid_argument);
  EXPECT_THROW(plan_intervals(5, 1), std::invalid_argument);
}

TEST(PlanIntervals, CoverEveryFrameWithSharedAnchors) {
  for (int t = 2; t <= 64; ++t)
    for (int n = 2; n <= 64; ++n) {
      const auto plan = plan_intervals(t, n);
      ASSERT_FALSE(plan.empty());
      EXPECT_EQ(plan.front().start, 1);
      EXPECT_EQ(plan.back().end, t);
      for (std::size_t k = 0; k < plan.size(); ++k) {
        EXPECT_GE(plan[k].size(), 2);
        EXPECT_LE(plan[k].size(), n);
        if (k + 1 < plan.size()) {
          EXPECT_EQ(plan[k].size(), n);
          EXPECT_EQ(plan[k].end, plan[k + 1].start);
        }
      }
    }
}

TEST(Synthetic, ExactFlowMapsVisiblePixels) {
  const auto spec = small_spec();
  const auto v = generate_synthetic(spec, 3);
  ASSERT_EQ(v.flows.fw.size(), 6u);
  for (std::size_t i = 0; i + 1 < v.color.size(); ++i) {
    const auto cur = rgb_to_unit_tensor(v.color[i]);
    const auto next = rgb_to_unit_tensor(v.color[i + 1]);
    const auto from_next = warp(next, v.flows.bw[i]).warped;
    const auto from_prev = warp(cur, v.flows.fw[i]).warped;
    int visible = 0;
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          if (v.visible_bw[i](0, y, x) == 1.0) EXPECT_EQ(from_next(c, y, x), cur(c, y, x));
          if (v.visible_fw[i](0, y, x) == 1.0) EXPECT_EQ(from_prev(c, y, x), next(c, y, x));
        }
        visible += static_cast<int>(v.visible_bw[i](0, y, x));
      }
    EXPECT_GT(visible, spec.height * spec.width / 2);
  }
}

TEST(Synthetic, GrayFramesCarryOnlyLuminance) {
  const auto v = generate_synthetic(small_spec(), 1);
  for (const auto& g : v.gray)
    for (std::size_t p = 0; p < g.pixels(); ++p) {
      EXPECT_EQ(g.data[3 * p], g.data[3 * p + 1]);
      EXPECT_EQ(g.data[3 * p], g.data[3 * p + 2]);
    }
  EXPECT_EQ(v.lum.size(), v.color.size());
  EXPECT_EQ(v.chroma.front().channels(), 2);
}

TEST(Synthetic, SeedIsDeterministic) {
  const auto a = generate_synthetic(small_spec(), 5), b = generate_synthetic(small_spec(), 5);
  EXPECT_EQ(a.color, b.color);
  EXPECT_EQ(a.flows.bw, b.flows.bw);
}

TEST(Synthetic, SpecTextRoundTrip) {
  auto spec = random_world(12);
  const auto back = synth_spec_from_config(Config::parse_string(to_config_text(spec)));
  EXPECT_EQ(to_config_text(back), to_config_text(spec));
  EXPECT_EQ(generate_synthetic(back, 2).color, generate_synthetic(spec, 2).color);
}

TEST(Synthetic, ValidationNamesTheProblem) {
  auto spec = small_spec();
  spec.objects[0].dx = 5;
  try {
    spec.validate();
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("leaves the canvas"), std::string::npos);
  }
  spec = small_spec();
  spec.frames = 1;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Synthetic, RandomWorldsAreValid) {
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_NO_THROW(random_world(s).validate());
}

TEST(Pipeline, EnsembleOfOneEqualsSingleRun) {
  const auto v = generate_synthetic(small_spec(), 2);
  const auto bb = build_toy_backbone(1, {4, false});
  const auto ffm = make_ffm({4, 6, 3}, {1, false, false});
  const auto single = colorize_chroma(v.lum, bb, ffm, v.flows, 4);
  EXPECT_EQ(ensemble_chroma(v.lum, bb, ffm, v.flows, {4}), single);
  const auto two = ensemble_chroma(v.lum, bb, ffm, v.flows, {3, 4});
  const auto three = colorize_chroma(v.lum, bb, ffm, v.flows, 3);
  for (std::size_t i = 0; i < two.size(); ++i)
    for (std::size_t k = 0; k < two[i].size(); ++k) EXPECT_NEAR(two[i][k], 0.5 * (single[i][k] + three[i][k]), 1e-15);
  EXPECT_THROW(ensemble_chroma(v.lum, bb, ffm, v.flows, {}), std::invalid_argument);
}

TEST(Pipeline, AnchorFramesMatchBackbone) {
  const auto v = generate_synthetic(small_spec(), 2);
  const auto bb = build_toy_backbone(1, {4, false});
  const auto ffm = make_ffm({4, 6, 3}, {7, false, false});
  const auto c = colorize_chroma(v.lum, bb, ffm, v.flows, 3);
  ASSERT_EQ(c.size(), 7u);
  for (int i : {0, 2, 4, 6}) EXPECT_EQ(c[i], bb.predict(v.lum[i])) << i;
}

TEST(Pipeline, OutputKeepsInputLuminance) {
  const auto v = generate_synthetic(small_spec(), 2);
  const auto bb = build_toy_backbone(1, {4, false});
  const auto out = colorize_video(v.lum, bb, make_ffm({4, 6, 3}), v.flows, 4);
  ASSERT_EQ(out.rgb.size(), v.lum.size());
  for (std::size_t i = 0; i < out.rgb.size(); ++i) {
    const auto l = frame_from_rgb(out.rgb[i]);
    EXPECT_LT(max_abs_diff(l, v.lum[i]), 0.01);
  }
}

TEST(Pipeline, MissingFlowsRejected) {
  const auto v = generate_synthetic(small_spec(), 2);
  auto flows = v.flows;
  flows.bw.pop_back();
  EXPECT_THROW(colorize_chroma(v.lum, build_toy_backbone(1, {4, false}), make_ffm({4, 6, 3}), flows, 3),
               std::invalid_argument);
}

TEST(Pipeline, PngRoundTrip) {
  testutil::TempDir dir("png");
  std::mt19937_64 rng(1);
  const std::vector<RgbImage> frames = {testutil::random_rgb(5, 7, rng), testutil::random_rgb(5, 7, rng)};
  write_frame_dir(dir.path(), frames);
  EXPECT_EQ(read_frame_dir(dir.path()), frames);
  EXPECT_THROW(read_frame_dir(dir.path() / "nope"), std::runtime_error);
}

TEST(Pipeline, SequenceOnDiskAndFlowLookup) {
  testutil::TempDir dir("seq");
  const auto spec = small_spec();
  const auto v = generate_synthetic(spec, 4);
  write_synthetic(dir.path() / "a", spec, 4, v);
  const auto s = load_sequence(dir.path() / "a");
  EXPECT_EQ(s.frames, v.lum);
  EXPECT_EQ(s.flows.bw, v.flows.bw);
  EXPECT_EQ(s.chroma.size(), v.color.size());

  // Without .flo files the spec is the oracle.
  std::filesystem::remove_all(dir.path() / "a" / "flow_fw");
  std::filesystem::remove_all(dir.path() / "a" / "flow_bw");
  const auto oracle = find_flows(dir.path() / "a" / "gray", std::nullopt, 6, spec.height, spec.width);
  EXPECT_EQ(oracle.flows.fw, v.flows.fw);
  EXPECT_EQ(oracle.source.rfind("oracle:", 0), 0u);

  std::filesystem::remove(dir.path() / "a" / kSynthSpecFile);
  EXPECT_THROW(find_flows(dir.path() / "a" / "gray", std::nullopt, 6, spec.height, spec.width), std::runtime_error);
  EXPECT_THROW(find_flows(dir.path() / "a", dir.path() / "missing", 6, spec.height, spec.width), FormatError);

  write_flow_dir(dir.path() / "f", v.flows);
  EXPECT_THROW(find_flows(dir.path() / "a", dir.path() / "f", 6, spec.height + 1, spec.width), DimensionError);
}

TEST(TrainingSetup, ParsesAndRejects) {
  const auto s = training_setup_from_config(Config::parse_string(
      "interval_len_train = 6\nbatch = 3\niterations = 10\nlr0 = 1e-3\nwarp_distances = 1, 3\nhidden = 8\n"
      "objective = ground_truth_l2\nbackbone_checkpoint = bb.ckpt\n"));
  EXPECT_EQ(s.train.interval_len_train, 6);
  EXPECT_EQ(s.train.batch, 3);
  EXPECT_EQ(s.train.lr0, 1e-3);
  EXPECT_EQ(s.train.warp_distances, (std::vector<int>{1, 3}));
  EXPECT_EQ(s.train.objective, Objective::ground_truth_l2);
  EXPECT_EQ(s.ffm.hidden, 8);
  EXPECT_EQ(s.backbone_checkpoint, "bb.ckpt");
  EXPECT_THROW(training_setup_from_config(Config::parse_string("batchsize = 2\n")), ConfigError);
  EXPECT_THROW(training_setup_from_config(Config::parse_string("objective = magic\n")), ConfigError);
  EXPECT_THROW(training_setup_from_config(Config::parse_string("interval_len_train = 2\n")), std::invalid_argument);
}
