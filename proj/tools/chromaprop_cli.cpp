// Command line front end: colorize, train, train-backbone, evaluate, synth,
// world. Errors end the process with one diagnostic line and exit code 1
// (2 for bad arguments).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chromaprop/chromaprop.hpp"
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fs = std::filesystem;
using namespace chromaprop;

namespace {

std::vector<fs::path> expand_sequence_list(const std::vector<std::string>& args) {
  // A single regular file is read as a list of directories, one per line.
  if (args.size() == 1 && fs::is_regular_file(args.front())) {
    std::ifstream is(args.front());
    std::vector<fs::path> out;
    std::string line;
    const fs::path base = fs::path(args.front()).parent_path();
    while (std::getline(is, line)) {
      const auto t = detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      const fs::path p(t);
      out.push_back(p.is_absolute() ? p : base / p);
    }
    if (out.empty()) throw std::runtime_error("sequence list " + args.front() + " is empty");
    return out;
  }
  return {args.begin(), args.end()};
}

ToyBackbone require_backbone(const Checkpoint& c, const std::string& path) {
  if (!c.backbone) throw FormatError(path + ": checkpoint has no backbone section");
  return *c.backbone;
}

struct ColorizeArgs {
  std::string frames, ckpt, flow_dir, out;
  int n = 17;
  std::vector<int> ensemble;
};

int run_colorize(const ColorizeArgs& a) {
  const auto ckpt = load_checkpoint(a.ckpt);
  const auto backbone = require_backbone(ckpt, a.ckpt);
  if (!ckpt.ffm) throw FormatError(a.ckpt + ": checkpoint has no ffm section");
  const fs::path frames_dir = frames_dir_of(a.frames);
  const auto images = read_frame_dir(frames_dir);
  const auto lum = luminance_of(images);
  std::optional<fs::path> flow_dir;
  if (!a.flow_dir.empty()) flow_dir = a.flow_dir;
  const auto flows = lum.size() > 1 ? find_flows(frames_dir, flow_dir, static_cast<int>(lum.size()) - 1,
                                                 images.front().height, images.front().width)
                                    : FlowLookup{};
  std::vector<RgbImage> out;
  if (lum.size() == 1) {
    out = assemble_rgb(lum, {backbone.predict(lum.front())});
  } else if (!a.ensemble.empty()) {
    out = ensemble_colorize(lum, backbone, *ckpt.ffm, flows.flows, a.ensemble).rgb;
  } else {
    out = colorize_video(lum, backbone, *ckpt.ffm, flows.flows, a.n).rgb;
  }
  write_frame_dir(a.out, out);
  std::cout << "colorized " << out.size() << " frames into " << a.out
            << (flows.source.empty() ? "" : " (flow " + flows.source + ")") << '\n';
  return 0;
}

struct TrainArgs {
  std::vector<std::string> sequences;
  std::string config, out_ckpt, backbone;
};

int run_train(const TrainArgs& a) {
  const auto cfg = Config::load(a.config);
  auto setup = training_setup_from_config(cfg);
  const std::string backbone_path = a.backbone.empty() ? setup.backbone_checkpoint : a.backbone;
  if (backbone_path.empty())
    throw ConfigError(a.config + ": set backbone_checkpoint or pass --backbone");
  const auto backbone = require_backbone(load_checkpoint(backbone_path), backbone_path);
  const auto before = checksum(backbone);

  std::vector<TrainingSequence> data;
  for (const auto& seq : expand_sequence_list(a.sequences)) data.push_back(load_sequence(seq));
  setup.ffm.feature_channels = backbone.feature_channels();
  auto ffm = make_ffm(setup.ffm, setup.init);

  const int every = std::max(1, setup.train.iterations / 20);
  auto result = train_fusion(backbone, std::move(ffm), data, setup.train, [&](const LossRecord& r) {
    if (r.iteration % every == 0 || r.iteration + 1 == setup.train.iterations)
      std::cout << "iteration " << r.iteration << " loss " << r.loss << " lr " << r.lr << '\n';
  });
  if (checksum(backbone) != before) throw std::logic_error("backbone weights changed during training");
  if (!setup.loss_csv.empty()) write_loss_csv(setup.loss_csv, result.curve);
  save_checkpoint(a.out_ckpt, {backbone, result.ffm});
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(before));
  std::cout << "wrote " << a.out_ckpt << " (backbone checksum " << sum << ")\n";
  return 0;
}

int run_train_backbone(const TrainArgs& a) {
  const auto cfg = Config::load(a.config);
  BackboneTrainOptions opts;
  opts.steps = cfg.get_as<int>("steps", opts.steps);
  opts.batch = cfg.get_as<int>("batch", opts.batch);
  opts.learning_rate = cfg.get_as<double>("lr", opts.learning_rate);
  opts.seed = cfg.get_as<std::uint64_t>("seed", opts.seed);
  ToyBackboneOptions arch;
  arch.channels = cfg.get_as<int>("channels", arch.channels);
  const auto init_seed = cfg.get_as<std::uint64_t>("init_seed", 0);
  const auto loss_csv = cfg.get("loss_csv", "");
  cfg.reject_unused();
  if (opts.steps < 0 || opts.batch < 1 || !(opts.learning_rate > 0.0) || arch.channels < 1)
    throw ConfigError(a.config + ": steps >= 0, batch >= 1, lr > 0 and channels >= 1 required");

  std::vector<ColorSample> samples;
  for (const auto& seq : expand_sequence_list(a.sequences)) {
    if (!fs::is_directory(seq / "color")) throw FormatError(seq.string() + ": needs a color/ directory");
    const auto lum = luminance_of(read_frame_dir(frames_dir_of(seq)));
    const auto chroma = chroma_of(read_frame_dir(seq / "color"));
    if (lum.size() != chroma.size()) throw FormatError(seq.string() + ": color/ and gray/ frame counts differ");
    for (std::size_t i = 0; i < lum.size(); ++i) samples.push_back({lum[i], chroma[i]});
  }
  auto result = train_toy_backbone(build_toy_backbone(init_seed, arch), samples, opts);
  if (!loss_csv.empty()) {
    std::vector<LossRecord> curve;
    for (std::size_t i = 0; i < result.loss.size(); ++i)
      curve.push_back({static_cast<std::int64_t>(i), result.loss[i], opts.learning_rate});
    write_loss_csv(loss_csv, curve);
  }
  save_checkpoint(a.out_ckpt, {result.backbone, std::nullopt});
  std::cout << "wrote " << a.out_ckpt << " (" << samples.size() << " frames, final loss "
            << (result.loss.empty() ? 0.0 : result.loss.back()) << ")\n";
  return 0;
}

struct EvaluateArgs {
  std::string pred, gt, flow_dir, report, psnr_space = "rgb";
};

bool has_frames(const fs::path& d) { return fs::exists(frames_dir_of(d) / indexed_name(1, ".png")); }

fs::path gt_frames_dir(const fs::path& d) { return fs::is_directory(d / "color") ? d / "color" : d; }

int run_evaluate(const EvaluateArgs& a) {
  MetricsReport report;
  if (a.psnr_space == "lab")
    report.psnr_space = PsnrSpace::lab;
  else if (a.psnr_space != "rgb")
    throw std::invalid_argument("--psnr-space must be rgb or lab");

  // One video, or one subdirectory per video matched by name.
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> jobs;
  if (has_frames(a.pred)) {
    jobs.push_back({fs::path(a.pred).filename().string(), {a.pred, a.gt}});
  } else {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(a.pred))
      if (e.is_directory() && has_frames(e.path())) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("no frames found under " + a.pred);
    for (const auto& d : dirs) jobs.push_back({d.filename().string(), {d, fs::path(a.gt) / d.filename()}});
  }

  std::vector<std::string> sources;
  for (const auto& [name, paths] : jobs) {
    const auto pred = read_frame_dir(frames_dir_of(paths.first));
    const auto gt = read_frame_dir(gt_frames_dir(paths.second));
    auto m = evaluate_video(name, pred, gt, report.psnr_space);
    std::optional<fs::path> flow_dir;
    if (!a.flow_dir.empty()) flow_dir = jobs.size() == 1 ? fs::path(a.flow_dir) : fs::path(a.flow_dir) / name;
    std::optional<FlowLookup> flows;
    try {
      flows = find_flows(gt_frames_dir(paths.second), flow_dir, static_cast<int>(pred.size()) - 1,
                         pred.front().height, pred.front().width);
    } catch (const std::runtime_error&) {
      if (flow_dir) throw;  // an explicit flow directory must be usable
    }
    if (flows) {
      const auto we = warp_error(pred, flows->flows);
      m.warp_error = we.value;
      m.skipped_pairs = we.skipped_pairs;
      sources.push_back(flows->source.substr(0, flows->source.find(':')));
    } else {
      sources.push_back("none");
    }
    report.videos.push_back(std::move(m));
  }
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  report.flow_source.clear();
  for (const auto& s : sources) report.flow_source += (report.flow_source.empty() ? "" : "+") + s;

  std::ofstream js(a.report);
  if (!js) throw std::runtime_error("cannot write " + a.report);
  js << to_json(report).dump(2) << '\n';
  const auto table = to_table(report);
  fs::path txt(a.report);
  txt.replace_extension(".txt");
  std::ofstream(txt) << table;
  std::cout << table;
  return 0;
}

int run_synth(const std::string& spec_file, std::uint64_t seed, const std::string& out) {
  const auto cfg = Config::load(spec_file);
  const auto spec = synth_spec_from_config(cfg);
  cfg.reject_unused();
  write_synthetic(out, spec, seed, generate_synthetic(spec, seed));
  std::cout << "wrote " << spec.frames << " frames to " << out << '\n';
  return 0;
}

int run_world(int count, std::uint64_t seed, int frames, const std::string& out) {
  if (count < 1) throw std::invalid_argument("--count must be >= 1");
  WorldOptions opts;
  opts.frames = frames;
  std::ofstream list(fs::path(out) / "sequences.txt");
  for (int k = 0; k < count; ++k) {
    const std::uint64_t s = seed * 1000003ULL + static_cast<std::uint64_t>(k);
    const auto spec = random_world(s, opts);
    char name[32];
    std::snprintf(name, sizeof name, "seq_%04d", k);
    write_synthetic(fs::path(out) / name, spec, s, generate_synthetic(spec, s));
    list << name << '\n';
  }
  std::cout << "wrote " << count << " sequences to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large scratch buffers on the heap; otherwise every conv maps and
  // unmaps fresh pages and the kernel time rivals the arithmetic.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"chromaprop: temporally consistent video colorization"};
  app.require_subcommand(1);

  ColorizeArgs col;
  auto* c = app.add_subcommand("colorize", "Colorize a directory of grayscale frames");
  c->add_option("frames_dir", col.frames, "Directory with 00001.png, ...")->required();
  c->add_option("--ckpt", col.ckpt, "Checkpoint with backbone and ffm sections")->required();
  c->add_option("--N", col.n, "Interval length")->check(CLI::Range(2, 1 << 20));
  c->add_option("--ensemble", col.ensemble, "Comma separated interval lengths to average")->delimiter(',');
  c->add_option("--flow-dir", col.flow_dir, "Directory holding flow_fw/ and flow_bw/");
  c->add_option("--out", col.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the fusion module with the temporal warping loss");
  t->add_option("sequences", tr.sequences, "Sequence directories, or one file listing them")->required();
  t->add_option("--config", tr.config, "key = value training config")->required();
  t->add_option("--out-ckpt", tr.out_ckpt, "Output checkpoint")->required();
  t->add_option("--backbone", tr.backbone, "Backbone checkpoint (overrides backbone_checkpoint)");

  TrainArgs tb;
  auto* b = app.add_subcommand("train-backbone", "Fit the toy backbone on color sequences");
  b->add_option("sequences", tb.sequences, "Sequence directories with color/, or one file listing them")->required();
  b->add_option("--config", tb.config, "key = value config")->required();
  b->add_option("--out-ckpt", tb.out_ckpt, "Output checkpoint")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Compute video metrics against ground truth");
  e->add_option("pred_dir", ev.pred, "Predicted frames (or one subdirectory per video)")->required();
  e->add_option("gt_dir", ev.gt, "Ground-truth frames, matching layout")->required();
  e->add_option("--flow-dir", ev.flow_dir, "Directory holding flow_fw/ and flow_bw/");
  e->add_option("--report", ev.report, "Output JSON report")->required();
  e->add_option("--psnr-space", ev.psnr_space, "rgb or lab");

  std::string spec_file, synth_out;
  std::uint64_t synth_seed = 0;
  auto* s = app.add_subcommand("synth", "Render a synthetic sequence with oracle flow");
  s->add_option("spec_file", spec_file, "key = value scene description")->required();
  s->add_option("--seed", synth_seed, "Seed for texture and grain")->required();
  s->add_option("--out", synth_out, "Output directory")->required();

  int world_count = 40, world_frames = 24;
  std::uint64_t world_seed = 0;
  std::string world_out;
  auto* w = app.add_subcommand("world", "Render a set of random synthetic sequences");
  w->add_option("--count", world_count, "Number of sequences");
  w->add_option("--frames", world_frames, "Frames per sequence");
  w->add_option("--seed", world_seed, "Base seed")->required();
  w->add_option("--out", world_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }

  try {
    if (*c) return run_colorize(col);
    if (*t) return run_train(tr);
    if (*b) return run_train_backbone(tb);
    if (*e) return run_evaluate(ev);
    if (*s) return run_synth(spec_file, synth_seed, synth_out);
    if (*w) {
      fs::create_directories(world_out);
      return run_world(world_count, world_seed, world_frames, world_out);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
