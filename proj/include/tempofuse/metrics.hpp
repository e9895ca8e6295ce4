#pragma once

#include <string>
#include <vector>

#include "tempofuse/grid.hpp"

namespace tempofuse {

inline constexpr double kMinValidDisparity = 1.0;
inline constexpr double kMaxValidDisparity = 210.0;
inline constexpr double kMaxSceneFlow = 210.0;
inline constexpr double kTepeEpsilon = 1e-3;

/// 1 where 1 <= d_gt <= 210 and the scene-flow vector norm is <= 210 px.
/// `scene_flow` may have any channel count (2 for optical, 3 for du,dv,dd)
/// or be empty to skip the flow test.
Mask validity_mask(const Map& d_gt, const Map& scene_flow = {});

struct TracedPair {
    int u = 0, v = 0;            // pixel at t-1
    double u_next = 0, v_next = 0;  // ground-truth position at t
    double d_pred_prev = 0, d_pred_curr = 0;
    double d_gt_prev = 0, d_gt_curr = 0;
    double delta() const { return d_pred_curr - d_pred_prev; }
    double delta_gt() const { return d_gt_curr - d_gt_prev; }
};

/// Follow every pixel of t-1 along ground-truth optical flow (H x W x >=2)
/// into t, sampling t-side maps bilinearly. Pixels outside `valid_prev`, or
/// whose bilinear taps leave the image or `valid_curr`, are dropped.
/// Empty masks accept everything.
std::vector<TracedPair> trace(const Map& flow_gt, const Map& d_pred_prev, const Map& d_pred_curr,
                              const Map& d_gt_prev, const Map& d_gt_curr, const Mask& valid_prev = {},
                              const Mask& valid_curr = {});

struct TemporalMetrics {
    double tepe = 0;
    double tepe_3px = 0;     // fraction with |dd - dd_gt| > 3
    double tepe_r = 0;
    double tepe_r_100pct = 0;  // fraction with relative error > 1
    long count = 0;
};

/// Throws EmptyPairSet.
TemporalMetrics tepe(const std::vector<TracedPair>& pairs);

struct DisparityMetrics {
    double epe = 0;
    double d3px = 0;
    long count = 0;
};

/// Throws EmptyMask. An empty mask means every pixel.
DisparityMetrics epe(const Map& d_pred, const Map& d_gt, const Mask& mask = {});

enum class FlowKind { Optical, Scene };

struct FlowMetrics {
    double fepe = 0;
    double d1px = 0;  // fraction with end-point error > 1
    long count = 0;
};

/// Mean end-point norm over the first 2 (optical) or 3 (scene) channels.
FlowMetrics fepe(const Map& flow_pred, const Map& flow_gt, const Mask& mask, FlowKind kind);

/// Scene-flow error in metres converted to pixels through fx / z at each
/// pixel (z = camera depth of the point). Threshold applies to pixels.
FlowMetrics fepe_scene_px(const Map& flow_pred_m, const Map& flow_gt_m, const Map& depth, double fx,
                          const Mask& mask);

struct MetricReport {
    double tepe = 0, tepe_3px = 0, tepe_r = 0, tepe_r_100pct = 0;
    double epe = 0, d3px = 0;
    double fepe_of = 0, fepe_of_1px = 0;
    double fepe_sf = 0, fepe_sf_1px = 0;        // metres
    double fepe_sf_px = 0, fepe_sf_px_1px = 0;  // pixel-normalised
    long temporal_count = 0, pixel_count = 0, flow_count = 0;
    std::vector<MetricReport> frames;  // per-frame breakdown (not nested further)

    void set_temporal(const TemporalMetrics& m);
    void set_disparity(const DisparityMetrics& m);
    void set_optical_flow(const FlowMetrics& m);
    void set_scene_flow(const FlowMetrics& metres, const FlowMetrics& pixels);
};

/// Count-weighted means of every metric; per-frame breakdowns are
/// concatenated. Deterministic in input order.
MetricReport aggregate(const std::vector<MetricReport>& reports);

std::string report_to_json(const MetricReport& report, bool include_frames = true);
std::string report_csv_header();
std::string report_csv_row(const std::string& method, const std::string& sequence, const MetricReport& report);

}  // namespace tempofuse
