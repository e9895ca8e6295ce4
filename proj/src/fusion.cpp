#include "tempofuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tempofuse {
namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

double correlate(const Map& a, int ar, int ac, const Map& b, int br, int bc, Correlation kind) {
    const int nc = a.channels();
    double acc = 0;
    for (int k = 0; k < nc; ++k) {
        const double x = a(ar, ac, k), y = b(br, bc, k);
        acc += kind == Correlation::L1 ? std::abs(x - y) : x * y;
    }
    return nc ? acc / nc : 0.0;
}

void check_patch(int patch_size, int dilation) {
    if (patch_size < 1 || patch_size % 2 == 0) throw InvalidConfig("patch size must be odd and >= 1");
    if (dilation < 1) throw InvalidConfig("dilation must be >= 1");
}

void copy_channels(Map& dst, int offset, const Map& src) {
    for (int r = 0; r < src.height(); ++r)
        for (int c = 0; c < src.width(); ++c)
            for (int k = 0; k < src.channels(); ++k) dst(r, c, offset + k) = src(r, c, k);
}

}  // namespace

Map self_correlation(const Map& map, Correlation kind, int patch_size, int dilation) {
    check_patch(patch_size, dilation);
    const int h = map.height(), w = map.width(), half = patch_size / 2;
    Map out(h, w, patch_size * patch_size - 1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            int k = 0;
            for (int i = -half; i <= half; ++i)
                for (int j = -half; j <= half; ++j) {
                    if (!i && !j) continue;
                    const int nr = clampi(r + i * dilation, 0, h - 1);
                    const int nc = clampi(c + j * dilation, 0, w - 1);
                    out(r, c, k++) = correlate(map, r, c, map, nr, nc, kind);
                }
        }
    return out;
}

Map cross_correlation(const Map& current, const Map& previous, const Mask& previous_visible,
                      Correlation kind, int patch_size, int dilation) {
    check_patch(patch_size, dilation);
    require_same_shape(current, previous, "cross_correlation");
    require_same_shape(current, previous_visible, "cross_correlation");
    if (current.channels() != previous.channels())
        throw DimensionMismatch("cross_correlation: channel counts differ");
    const int h = current.height(), w = current.width(), half = patch_size / 2;
    const double sentinel = kind == Correlation::L1 ? kInvisibleL1 : kInvisibleDot;
    Map out(h, w, patch_size * patch_size);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            int k = 0;
            for (int i = -half; i <= half; ++i)
                for (int j = -half; j <= half; ++j) {
                    const int nr = clampi(r + i * dilation, 0, h - 1);
                    const int nc = clampi(c + j * dilation, 0, w - 1);
                    out(r, c, k++) = previous_visible(nr, nc)
                                         ? correlate(current, r, c, previous, nr, nc, kind)
                                         : sentinel;
                }
        }
    return out;
}

const std::vector<std::string>& CueStack::channel_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (int k = 0; k < 3; ++k) n.push_back("stereo_conf_" + std::to_string(k - 1));
        for (int k = 0; k < 3; ++k) n.push_back("motion_conf_" + std::to_string(k - 1));
        for (int k = 0; k < 8; ++k) n.push_back("disp_self_" + std::to_string(k));
        for (int k = 0; k < 8; ++k) n.push_back("feat_self_" + std::to_string(k));
        for (int k = 0; k < 9; ++k) n.push_back("disp_cross_" + std::to_string(k));
        for (int k = 0; k < 9; ++k) n.push_back("feat_cross_" + std::to_string(k));
        n.push_back("flow_magnitude");
        n.push_back("flow_confidence");
        n.push_back("visibility");
        for (int k = 0; k < kFeatureChannels; ++k) n.push_back("feature_" + std::to_string(k));
        return n;
    }();
    return names;
}

std::uint64_t CueStack::channel_order_hash() {
    // FNV-1a over the versioned, comma-joined channel names.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const std::string& s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
    };
    mix("v" + std::to_string(kVersion));
    for (const auto& n : channel_names()) mix("," + n);
    return h;
}

Map fill_motion_disparity(const MemoryState& motion, const Map& stereo_disparity) {
    require_same_shape(motion.disparity, stereo_disparity, "fill_motion_disparity");
    Map out = stereo_disparity;
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c)
            if (motion.visibility(r, c)) out(r, c) = motion.disparity(r, c);
    return out;
}

CueStack build_cues(const MemoryState& motion, const StereoResult& stereo, int patch_size, int dilation) {
    require_same_shape(motion.disparity, stereo.disparity, "build_cues");
    require_same_shape(stereo.left_features, stereo.disparity, "build_cues");
    if (motion.feature_channels() != kFeatureChannels || stereo.left_features.channels() != kFeatureChannels)
        throw DimensionMismatch("build_cues: expected " + std::to_string(kFeatureChannels) + " feature channels");
    if (patch_size != 3) throw InvalidConfig("build_cues: the fixed cue layout requires patch_size 3");

    const int h = motion.height(), w = motion.width();
    const Map d_motion = fill_motion_disparity(motion, stereo.disparity);

    CueStack cues;
    cues.data = Map(h, w, CueStack::kChannels);
    copy_channels(cues.data, 0, disparity_confidence(stereo.left_features, stereo.right_features, stereo.disparity));
    copy_channels(cues.data, 3, disparity_confidence(stereo.left_features, stereo.right_features, d_motion));
    copy_channels(cues.data, 6, self_correlation(stereo.disparity, Correlation::L1, patch_size, dilation));
    copy_channels(cues.data, 14, self_correlation(stereo.left_features, Correlation::Dot, patch_size, dilation));
    copy_channels(cues.data, 22,
                  cross_correlation(stereo.disparity, motion.disparity, motion.visibility, Correlation::L1,
                                    patch_size, dilation));
    copy_channels(cues.data, 31,
                  cross_correlation(stereo.left_features, motion.features, motion.visibility, Correlation::Dot,
                                    patch_size, dilation));
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            cues.data(r, c, 40) = motion.flow_magnitude(r, c);
            cues.data(r, c, 41) = motion.flow_confidence(r, c);
            cues.data(r, c, 42) = motion.visibility(r, c) ? 1.0 : 0.0;
        }
    copy_channels(cues.data, 43, stereo.left_features);
    return cues;
}

Map fuse(const Map& d_stereo, const Map& d_motion, const WeightMaps& weights) {
    require_same_shape(d_stereo, d_motion, "fuse");
    require_same_shape(d_stereo, weights.reset, "fuse");
    require_same_shape(d_stereo, weights.fusion, "fuse");
    Map out(d_stereo.height(), d_stereo.width());
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) {
            const double wm = weights.reset(r, c) * weights.fusion(r, c);
            out(r, c) = (1.0 - wm) * d_stereo(r, c) + wm * d_motion(r, c);
        }
    return out;
}

KalmanUpdate kalman_update(const KalmanState& prior, const Mask& prior_visible, const Map& measurement,
                           const Map& measurement_variance, double process_noise) {
    require_same_shape(prior.mean, prior.variance, "kalman_update");
    require_same_shape(prior.mean, prior_visible, "kalman_update");
    require_same_shape(prior.mean, measurement, "kalman_update");
    require_same_shape(prior.mean, measurement_variance, "kalman_update");
    if (process_noise < 0) throw NonPositiveVariance("process noise must be >= 0");
    const int h = measurement.height(), w = measurement.width();
    KalmanUpdate out{{Map(h, w), Map(h, w)}, Map(h, w)};
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double mv = measurement_variance(r, c);
            if (!(mv > 0)) throw NonPositiveVariance("measurement variance must be > 0");
            if (!prior_visible(r, c)) {
                out.state.mean(r, c) = measurement(r, c);
                out.state.variance(r, c) = mv;
                continue;
            }
            const double pv = prior.variance(r, c);
            if (!(pv > 0)) throw NonPositiveVariance("prior variance must be > 0");
            const double predicted = pv + process_noise;
            const double gain = predicted / (predicted + mv);
            out.state.mean(r, c) = prior.mean(r, c) + gain * (measurement(r, c) - prior.mean(r, c));
            out.state.variance(r, c) = (1.0 - gain) * predicted;
            out.motion_weight(r, c) = 1.0 - gain;
        }
    return out;
}

double KalmanCalibration::variance(double confidence_center) const {
    return std::max(floor, intercept + slope * confidence_center);
}

KalmanCalibration KalmanCalibration::fit(const std::vector<double>& confidence,
                                         const std::vector<double>& squared_error) {
    KalmanCalibration cal;
    const std::size_t n = std::min(confidence.size(), squared_error.size());
    if (n < 2) return cal;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += confidence[i];
        my += squared_error[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (confidence[i] - mx) * (confidence[i] - mx);
        sxy += (confidence[i] - mx) * (squared_error[i] - my);
    }
    cal.slope = sxx > 0 ? sxy / sxx : 0.0;
    cal.intercept = my - cal.slope * mx;
    return cal;
}

Map empirical_best(const Map& d_stereo, const Map& d_motion, const Map& d_gt) {
    require_same_shape(d_stereo, d_motion, "empirical_best");
    require_same_shape(d_stereo, d_gt, "empirical_best");
    Map out = d_stereo;
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c)
            if (std::abs(d_motion(r, c) - d_gt(r, c)) < std::abs(d_stereo(r, c) - d_gt(r, c)))
                out(r, c) = d_motion(r, c);
    return out;
}

}  // namespace tempofuse
