#pragma once

// Per-video metric records, their means, and the two output forms: JSON and
// a fixed-width table (Warp Error, CDC, PSNR, L2, Colorfulness).

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chromaprop/metrics.hpp"

namespace chromaprop {

struct VideoMetrics {
  std::string name;
  int frames = 0;
  std::optional<double> warp_error;  // absent without flow
  std::vector<int> skipped_pairs;    // warp error pairs with an empty mask
  double cdc = 0.0;
  double cdc_1 = 0.0, cdc_2 = 0.0, cdc_4 = 0.0;
  double psnr = 0.0;
  double lab_l2 = 0.0;
  double colorfulness = 0.0;  // mean over frames of the prediction
};

struct MetricsReport {
  std::vector<VideoMetrics> videos;
  PsnrSpace psnr_space = PsnrSpace::rgb;
  std::string flow_source = "none";

  /// Mean of each column over the videos; warp error over those that have it.
  VideoMetrics mean() const {
    VideoMetrics m;
    m.name = "mean";
    if (videos.empty()) return m;
    double we = 0.0;
    int with_flow = 0;
    for (const auto& v : videos) {
      m.frames += v.frames;
      m.cdc += v.cdc;
      m.cdc_1 += v.cdc_1;
      m.cdc_2 += v.cdc_2;
      m.cdc_4 += v.cdc_4;
      m.psnr += v.psnr;
      m.lab_l2 += v.lab_l2;
      m.colorfulness += v.colorfulness;
      if (v.warp_error) {
        we += *v.warp_error;
        ++with_flow;
      }
    }
    const double n = static_cast<double>(videos.size());
    m.cdc /= n;
    m.cdc_1 /= n;
    m.cdc_2 /= n;
    m.cdc_4 /= n;
    m.psnr /= n;
    m.lab_l2 /= n;
    m.colorfulness /= n;
    if (with_flow > 0) m.warp_error = we / with_flow;
    return m;
  }
};

/// Everything except warp error, which needs flow.
inline VideoMetrics evaluate_video(const std::string& name, const std::vector<RgbImage>& pred,
                                   const std::vector<RgbImage>& gt, PsnrSpace space = PsnrSpace::rgb) {
  if (pred.size() != gt.size())
    throw std::invalid_argument(name + ": " + std::to_string(pred.size()) + " predicted frames vs " +
                                std::to_string(gt.size()) + " ground-truth frames");
  if (pred.size() <= 4) throw std::invalid_argument(name + ": CDC needs more than 4 frames");
  VideoMetrics m;
  m.name = name;
  m.frames = static_cast<int>(pred.size());
  m.cdc_1 = cdc_t(pred, 1);
  m.cdc_2 = cdc_t(pred, 2);
  m.cdc_4 = cdc_t(pred, 4);
  m.cdc = (m.cdc_1 + m.cdc_2 + m.cdc_4) / 3.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    m.psnr += psnr(pred[i], gt[i], space);
    m.lab_l2 += lab_l2(pred[i], gt[i]);
    m.colorfulness += colorfulness(pred[i]);
  }
  const double n = static_cast<double>(pred.size());
  m.psnr /= n;
  m.lab_l2 /= n;
  m.colorfulness /= n;
  return m;
}

inline nlohmann::json to_json(const VideoMetrics& v) {
  nlohmann::json j;
  j["name"] = v.name;
  j["frames"] = v.frames;
  j["warp_error"] = v.warp_error ? nlohmann::json(*v.warp_error) : nlohmann::json(nullptr);
  j["warp_error_skipped_pairs"] = v.skipped_pairs;
  j["cdc"] = v.cdc;
  j["cdc_t"] = {{"1", v.cdc_1}, {"2", v.cdc_2}, {"4", v.cdc_4}};
  j["psnr"] = v.psnr;
  j["lab_l2"] = v.lab_l2;
  j["colorfulness"] = v.colorfulness;
  return j;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["provenance"] = {{"psnr_color_space", to_string(r.psnr_space)},
                     {"psnr_cap_db", kPsnrCap},
                     {"flow_source", r.flow_source},
                     {"histogram_bins", 256},
                     {"js_log_base", "e"}};
  j["videos"] = nlohmann::json::array();
  for (const auto& v : r.videos) j["videos"].push_back(to_json(v));
  auto mean = to_json(r.mean());
  mean.erase("name");
  mean.erase("warp_error_skipped_pairs");
  j["mean"] = mean;
  return j;
}

inline std::string to_table(const MetricsReport& r) {
  std::size_t name_w = 5;
  for (const auto& v : r.videos) name_w = std::max(name_w, v.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %12s  %12s  %10s  %10s  %12s\n", static_cast<int>(name_w), "Video",
                "Warp Error", "CDC", "PSNR", "L2", "Colorfulness");
  out += buf;
  auto row = [&](const VideoMetrics& v) {
    char we[32];
    if (v.warp_error)
      std::snprintf(we, sizeof we, "%12.6f", *v.warp_error);
    else
      std::snprintf(we, sizeof we, "%12s", "-");
    std::snprintf(buf, sizeof buf, "%-*s  %s  %12.6f  %10.4f  %10.4f  %12.4f\n", static_cast<int>(name_w),
                  v.name.c_str(), we, v.cdc, v.psnr, v.lab_l2, v.colorfulness);
    out += buf;
  };
  for (const auto& v : r.videos) row(v);
  if (r.videos.size() > 1) row(r.mean());
  out += std::string("psnr: ") + to_string(r.psnr_space) + ", flow: " + r.flow_source + "\n";
  return out;
}

}  // namespace chromaprop
