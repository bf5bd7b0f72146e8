// Acceptance runner: one PASS/FAIL line per criterion, exit code 1 if any
// criterion fails. Criteria 5-8 share one trained model.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "chromaprop/chromaprop.hpp"
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include "gradcheck.hpp"
#include "test_util.hpp"

#ifndef CHROMAPROP_CLI_PATH
#define CHROMAPROP_CLI_PATH "chromaprop_cli"
#endif

using namespace chromaprop;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

void require(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + what;
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

FlowField constant_flow(int h, int w, float u, float v) {
  FlowField f(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.uv(0, y, x) = u;
      f.uv(1, y, x) = v;
    }
  return f;
}

// ---------------------------------------------------------------------------

Outcome warp_oracles() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const auto src = testutil::random_tensor(3, 48, 40, rng);
    require(o, warp(src, FlowField(48, 40)).warped == src, "zero flow is not the identity");

    const int du = static_cast<int>(rng() % 7) - 3, dv = static_cast<int>(rng() % 7) - 3;
    const auto w = warp(src, constant_flow(48, 40, static_cast<float>(du), static_cast<float>(dv))).warped;
    double worst = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int y = 4; y < 44; ++y)
        for (int x = 4; x < 36; ++x) {
          // Brute-force bilinear lookup at (x+du, y+dv).
          const double sx = x + du, sy = y + dv;
          const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
          const double ax = sx - x0, ay = sy - y0;
          const double ref = (1 - ax) * (1 - ay) * src(c, y0, x0) +
                             (ax > 0 ? ax * (1 - ay) * src(c, y0, x0 + 1) : 0.0) +
                             (ay > 0 ? (1 - ax) * ay * src(c, y0 + 1, x0) : 0.0) +
                             (ax > 0 && ay > 0 ? ax * ay * src(c, y0 + 1, x0 + 1) : 0.0);
          worst = std::max(worst, std::abs(w(c, y, x) - ref));
        }
    require(o, worst <= 1e-6, "integer shift deviates by " + fmt("%.3g", worst));

    const auto a = testutil::random_tensor(2, 20, 24, rng), b = testutil::random_tensor(2, 20, 24, rng);
    const auto flow = gradcheck::random_flow(20, 24, rng, 5.0);
    const double alpha = nn::uniform(rng, -2, 2), beta = nn::uniform(rng, -2, 2);
    Tensor<double> combo(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) combo[i] = alpha * a[i] + beta * b[i];
    const auto wa = warp(a, flow).warped, wb = warp(b, flow).warped, wc = warp(combo, flow).warped;
    double lin = 0.0;
    for (std::size_t i = 0; i < wc.size(); ++i) lin = std::max(lin, std::abs(wc[i] - (alpha * wa[i] + beta * wb[i])));
    require(o, lin <= 1e-12, "warp is not linear (" + fmt("%.3g", lin) + ")");
  }
  const double t = seconds_since(t0);
  require(o, t < 10.0, "took " + fmt("%.1f s", t));
  if (o.pass) o.detail = "20 trials, " + fmt("%.2f s", t);
  return o;
}

Outcome gradient_checks() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_tw = 0.0, worst_fuse = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    worst_tw = std::max(worst_tw, gradcheck::temporal_loss_error(seed, 8));
    worst_fuse = std::max(worst_fuse, gradcheck::fuse_error(seed, {}, 8));
  }
  const double t = seconds_since(t0);
  require(o, worst_tw <= 1e-4, "temporal warping loss relative error " + fmt("%.3g", worst_tw));
  require(o, worst_fuse <= 1e-4, "fusion relative error " + fmt("%.3g", worst_fuse));
  require(o, t < 120.0, "took " + fmt("%.1f s", t));
  if (o.pass)
    o.detail = "20 seeds, worst rel. error " + fmt("%.2e", worst_tw) + " (loss) / " + fmt("%.2e", worst_fuse) +
               " (fusion), " + fmt("%.1f s", t);
  return o;
}

Outcome metric_identities() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);

  const std::vector<RgbImage> constant(12, testutil::random_rgb(16, 16, rng));
  require(o, cdc(constant) == 0.0, "CDC of a constant video is " + fmt("%.3g", cdc(constant)));

  std::vector<RgbImage> alternating;
  for (int i = 0; i < 12; ++i)
    alternating.push_back(i % 2 ? testutil::solid(8, 8, 250, 250, 250) : testutil::solid(8, 8, 5, 5, 5));
  const double alt = cdc(alternating);
  require(o, std::abs(alt - std::numbers::ln2 / 3.0) <= 1e-9, "alternating CDC " + fmt("%.12f", alt));

  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_hist = [&] {
    ColorHistogram h{};
    double total = 0.0;
    const int support = 1 + static_cast<int>(rng() % 64);
    for (int k = 0; k < support; ++k) {
      const double v = u(rng) + 1e-3;
      h[rng() % 256] += v;
      total += v;
    }
    for (auto& v : h) v /= total;
    return h;
  };
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_hist(), q = random_hist();
    const double a = js_divergence(p, q), b = js_divergence(q, p);
    if (a != b || a < 0.0 || a > std::numbers::ln2 + 1e-12) {
      require(o, false, "JS property violated at pair " + std::to_string(i));
      break;
    }
  }

  auto gray = testutil::random_rgb(16, 16, rng);
  for (std::size_t p = 0; p < gray.pixels(); ++p) gray.data[3 * p + 1] = gray.data[3 * p + 2] = gray.data[3 * p];
  require(o, colorfulness(gray) == 0.0, "gray colorfulness " + fmt("%.3g", colorfulness(gray)));

  const double red = colorfulness(testutil::solid(16, 16, 255, 0, 0));
  const double formula = 0.3 * std::sqrt(255.0 * 255.0 + 127.5 * 127.5);
  require(o, std::abs(red - formula) <= 0.01, "solid red colorfulness " + fmt("%.4f", red));

  const double t = seconds_since(t0);
  require(o, t < 30.0, "took " + fmt("%.1f s", t));
  if (o.pass)
    o.detail = "alternating CDC " + fmt("%.12f", alt) + ", red colorfulness " + fmt("%.4f", red) +
               " (closed form 85.5296), " + fmt("%.2f s", t);
  return o;
}

Outcome anchor_invariance() {
  Outcome o;
  const auto bb = build_toy_backbone(41);
  WorldOptions wo;
  wo.frames = 17;
  const auto video = generate_synthetic(random_world(44, wo), 44);
  const auto first = bb.predict(video.lum.front()), last = bb.predict(video.lum.back());
  int bad = 0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    FfmConfig cfg;
    cfg.hidden = 8;
    cfg.projection = 4;
    const auto ffm = make_ffm(cfg, {1000 + k, false, false});
    const auto c = colorize_chroma(video.lum, bb, ffm, video.flows, 17);
    if (!(c.front() == first) || !(c.back() == last)) ++bad;
  }
  require(o, bad == 0, std::to_string(bad) + " of 100 modules changed an anchor");
  if (o.pass) o.detail = "100 random modules, anchors bit-identical";
  return o;
}

// ---------------------------------------------------------------------------
// Synthetic world experiment shared by criteria 5-8.

struct WorldSetup {
  int train_sequences = 40;
  int train_frames = 24;
  int test_sequences = 16;
  int test_frames = 33;
  int backbone_steps = 600;
  int hidden = 16;
  int projection = 8;
  TrainConfig train;

  WorldSetup() {
    train.interval_len_train = 8;
    train.batch = 2;
    train.patch = 32;
    train.iterations = 2000;
    train.lr0 = 1.5e-3;
    train.lr_halving_period = 800;
    train.alpha = 50.0;
    train.seed = 5;
  }
};

struct WorldResult {
  bool ok = false;
  std::string error;
  double seconds = 0.0;
  double baseline = 0.0, untrained = 0.0, trained = 0.0, unidirectional = 0.0, n3 = 0.0, n9 = 0.0;
  std::uint64_t checksum_before = 0, checksum_after = 0;
  int iterations = 0;
  int sequences = 0;
};

double mean_cdc(const std::vector<SyntheticVideo>& videos,
                const std::function<std::vector<ChromaMap>(const SyntheticVideo&)>& colorize) {
  double s = 0.0;
  for (const auto& v : videos) s += cdc(assemble_rgb(v.lum, colorize(v)));
  return s / static_cast<double>(videos.size());
}

WorldResult run_world(const WorldSetup& setup) {
  WorldResult r;
  const auto t0 = Clock::now();
  try {
    WorldOptions train_opts;
    train_opts.frames = setup.train_frames;
    WorldOptions test_opts = train_opts;
    test_opts.frames = setup.test_frames;

    std::vector<SyntheticVideo> train, test;
    for (int k = 0; k < setup.train_sequences; ++k) train.push_back(generate_synthetic(random_world(1000 + k, train_opts), 1000 + k));
    for (int k = 0; k < setup.test_sequences; ++k)
      test.push_back(generate_synthetic(random_world(900000 + k, test_opts), 900000 + k));

    std::vector<ColorSample> samples;
    for (const auto& v : train)
      for (std::size_t i = 0; i < v.lum.size(); ++i) samples.push_back({v.lum[i], v.chroma[i]});
    BackboneTrainOptions bo;
    bo.steps = setup.backbone_steps;
    bo.batch = 4;
    bo.learning_rate = 2e-3;
    const auto backbone = train_toy_backbone(build_toy_backbone(7), samples, bo).backbone;

    FfmConfig fc;
    fc.feature_channels = backbone.feature_channels();
    fc.hidden = setup.hidden;
    fc.projection = setup.projection;
    const auto ffm0 = make_ffm(fc, {3});

    std::vector<TrainingSequence> data;
    for (const auto& v : train) data.push_back({v.lum, v.flows, {}});
    r.checksum_before = checksum(backbone);
    const auto trained = train_fusion(backbone, ffm0, data, setup.train);
    r.checksum_after = checksum(backbone);
    r.iterations = setup.train.iterations;
    r.sequences = setup.train_sequences;

    r.baseline = mean_cdc(test, [&](const SyntheticVideo& v) { return per_frame_chroma(v.lum, backbone); });
    r.untrained = mean_cdc(test, [&](const SyntheticVideo& v) { return colorize_chroma(v.lum, backbone, ffm0, v.flows, 17); });
    r.trained = mean_cdc(test, [&](const SyntheticVideo& v) { return colorize_chroma(v.lum, backbone, trained.ffm, v.flows, 17); });
    r.seconds = seconds_since(t0);
    r.unidirectional = mean_cdc(test, [&](const SyntheticVideo& v) {
      return colorize_chroma(v.lum, backbone, trained.ffm, v.flows, 17, unidirectional());
    });
    r.n3 = mean_cdc(test, [&](const SyntheticVideo& v) { return colorize_chroma(v.lum, backbone, trained.ffm, v.flows, 3); });
    r.n9 = mean_cdc(test, [&](const SyntheticVideo& v) { return colorize_chroma(v.lum, backbone, trained.ffm, v.flows, 9); });
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

Outcome world_trend(const WorldResult& w) {
  Outcome o;
  if (!w.ok) return {false, "experiment failed: " + w.error};
  const double vs_base = 1.0 - w.trained / w.baseline, vs_untrained = 1.0 - w.trained / w.untrained;
  require(o, w.sequences >= 40, "fewer than 40 training sequences");
  require(o, w.iterations <= 2000, "more than 2000 iterations");
  require(o, vs_base >= 0.10, "trained vs per-frame improvement " + fmt("%.1f%%", 100 * vs_base));
  require(o, vs_untrained >= 0.10, "trained vs untrained improvement " + fmt("%.1f%%", 100 * vs_untrained));
  require(o, w.seconds < 1200.0, "took " + fmt("%.0f s", w.seconds));
  const std::string numbers = "CDC per-frame " + fmt("%.5f", w.baseline) + ", untrained " + fmt("%.5f", w.untrained) +
                              ", trained " + fmt("%.5f", w.trained) + " (" + fmt("%.1f%%", 100 * vs_base) + " / " +
                              fmt("%.1f%%", 100 * vs_untrained) + " lower), " + fmt("%.0f s", w.seconds);
  o.detail = o.pass ? numbers : o.detail + "; " + numbers;
  return o;
}

Outcome unidirectional_worse(const WorldResult& w) {
  if (!w.ok) return {false, "experiment failed: " + w.error};
  Outcome o;
  require(o, w.unidirectional >= w.trained, "unidirectional CDC is lower");
  o.detail += (o.detail.empty() ? "" : "; ") + std::string("unidirectional ") + fmt("%.5f", w.unidirectional) +
              " vs bidirectional " + fmt("%.5f", w.trained);
  return o;
}

Outcome longer_intervals_not_worse(const WorldResult& w) {
  if (!w.ok) return {false, "experiment failed: " + w.error};
  Outcome o;
  require(o, w.n9 <= w.n3, "N=9 CDC exceeds N=3");
  o.detail += (o.detail.empty() ? "" : "; ") + std::string("N=9 ") + fmt("%.5f", w.n9) + " vs N=3 " + fmt("%.5f", w.n3);
  return o;
}

Outcome backbone_frozen(const WorldResult& w) {
  if (!w.ok) return {false, "experiment failed: " + w.error};
  Outcome o;
  require(o, w.checksum_before == w.checksum_after, "backbone checksum changed");
  char buf[64];
  std::snprintf(buf, sizeof buf, "checksum %016llx before and after", static_cast<unsigned long long>(w.checksum_after));
  if (o.pass) o.detail = buf;
  return o;
}

// ---------------------------------------------------------------------------

Outcome flo_round_trip() {
  Outcome o;
  testutil::TempDir dir("accept_flo");
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<float> d(-100.0f, 100.0f);
  int bad = 0;
  for (int i = 0; i < 100; ++i) {
    FlowField f(1 + static_cast<int>(rng() % 40), 1 + static_cast<int>(rng() % 40));
    for (auto& v : f.uv.values()) v = d(rng);
    const auto p = dir.path() / "f.flo";
    write_flo(p, f);
    if (!(read_flo(p) == f)) ++bad;
  }
  require(o, bad == 0, std::to_string(bad) + " fields changed on round trip");
  write_flo(dir.path() / "small.flo", FlowField(2, 2));
  const auto size = fs::file_size(dir.path() / "small.flo");
  require(o, size == 44, "2x2 file is " + std::to_string(size) + " bytes");
  if (o.pass) o.detail = "100 fields bit-exact, 2x2 file 44 bytes";
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Outcome cli_determinism() {
  Outcome o;
  testutil::TempDir dir("accept_cli");
  WorldOptions wo;
  wo.frames = 20;
  const auto spec = random_world(77, wo);
  write_synthetic(dir.path() / "seq", spec, 77, generate_synthetic(spec, 77));
  Checkpoint ck;
  ck.backbone = build_toy_backbone(5, {16, false});
  ck.ffm = make_ffm({16, 8, 4}, {6, false, false});
  save_checkpoint(dir.path() / "model.ckpt", ck);

  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("\"") + CHROMAPROP_CLI_PATH + "\" colorize \"" + (dir.path() / "seq").string() +
                            "\" --ckpt \"" + (dir.path() / "model.ckpt").string() + "\" --N 7 --out \"" +
                            (dir.path() / run).string() + "\" > /dev/null";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      require(o, false, "colorize exited with " + std::to_string(rc));
      return o;
    }
  }
  int frames = 0, differing = 0;
  for (int i = 1;; ++i) {
    const auto a = dir.path() / "a" / indexed_name(i, ".png"), b = dir.path() / "b" / indexed_name(i, ".png");
    if (!fs::exists(a)) break;
    ++frames;
    if (!fs::exists(b) || slurp(a) != slurp(b)) ++differing;
  }
  require(o, frames == 20, "expected 20 output frames, found " + std::to_string(frames));
  require(o, differing == 0, std::to_string(differing) + " frames differ between runs");
  if (o.pass) o.detail = "20 PNGs byte-identical across two runs";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large scratch buffers on the heap; otherwise every conv maps and
  // unmaps fresh pages and the kernel time rivals the arithmetic.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  // `--skip-world` leaves out the long synthetic-world experiment (5-8).
  bool skip_world = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--skip-world") skip_world = true;

  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail << std::endl;
    failures += !o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "warp oracles", guarded(warp_oracles));
  report(2, "gradient checks", guarded(gradient_checks));
  report(3, "metric identities", guarded(metric_identities));
  report(4, "anchor invariance", guarded(anchor_invariance));
  if (!skip_world) {
    const auto world = run_world(WorldSetup{});
    report(5, "synthetic world CDC trend", world_trend(world));
    report(6, "unidirectional ablation", unidirectional_worse(world));
    report(7, "interval length trend", longer_intervals_not_worse(world));
    report(8, "backbone frozen", backbone_frozen(world));
  }
  report(9, "flo round trip", guarded(flo_round_trip));
  report(10, "CLI determinism", guarded(cli_determinism));
  return failures == 0 ? 0 : 1;
}
