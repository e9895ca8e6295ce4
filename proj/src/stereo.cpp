#include "tempofuse/stereo.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace tempofuse {
namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

double px(const Map& img, int r, int c) {
    return img(clampi(r, 0, img.height() - 1), clampi(c, 0, img.width() - 1));
}

constexpr int kFeatureRadius = 3;

// Octant of a window offset, sectors of 45 degrees centred on the axes and
// diagonals.
int octant(int dr, int dc) {
    constexpr double kPi = 3.14159265358979323846;
    double angle = std::atan2(static_cast<double>(dr), static_cast<double>(dc));
    if (angle < 0) angle += 2 * kPi;
    return static_cast<int>(std::floor((angle + kPi / 8) / (kPi / 4))) % 8;
}

Map box_mean(const Map& in, int radius) {
    const int h = in.height(), w = in.width();
    Map tmp(h, w), out(h, w);
    const double norm = 1.0 / (2 * radius + 1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += in(r, clampi(c + k, 0, w - 1));
            tmp(r, c) = s * norm;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += tmp(clampi(r + k, 0, h - 1), c);
            out(r, c) = s * norm;
        }
    return out;
}

}  // namespace

CensusMap census_transform(const Map& image, int radius) {
    const int side = 2 * radius + 1;
    if (radius < 1 || side * side - 1 > 64)
        throw InvalidConfig("census radius " + std::to_string(radius) + " unsupported");
    const int h = image.height(), w = image.width();
    CensusMap out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double centre = image(r, c);
            std::uint64_t code = 0;
            int bit = 0;
            for (int dr = -radius; dr <= radius; ++dr)
                for (int dc = -radius; dc <= radius; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    if (px(image, r + dr, c + dc) < centre) code |= (std::uint64_t{1} << bit);
                    ++bit;
                }
            out(r, c) = code;
        }
    return out;
}

FeatureMap extract_features(const Map& image) {
    const int h = image.height(), w = image.width();
    FeatureMap out(h, w, kFeatureChannels);

    int counts[8] = {};
    for (int dr = -kFeatureRadius; dr <= kFeatureRadius; ++dr)
        for (int dc = -kFeatureRadius; dc <= kFeatureRadius; ++dc)
            if (dr || dc) ++counts[octant(dr, dc)];

    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double centre = image(r, c);
            double acc[8] = {};
            for (int dr = -kFeatureRadius; dr <= kFeatureRadius; ++dr)
                for (int dc = -kFeatureRadius; dc <= kFeatureRadius; ++dc) {
                    if (!dr && !dc) continue;
                    const double v = px(image, r + dr, c + dc);
                    acc[octant(dr, dc)] += v > centre ? 1.0 : (v == centre ? 0.5 : 0.0);
                }
            for (int k = 0; k < 8; ++k) out(r, c, k) = acc[k] / counts[k];
            out(r, c, 8) = std::min(1.0, std::abs(px(image, r, c + 1) - px(image, r, c - 1)));
            out(r, c, 9) = std::min(1.0, std::abs(px(image, r + 1, c) - px(image, r - 1, c)));
        }
    return out;
}

StereoResult block_match(const Map& left, const Map& right, const StereoParams& params) {
    if (params.max_disparity < 2 || params.max_disparity > 210)
        throw DisparityRangeInvalid("max_disparity must be in [2, 210], got " +
                                    std::to_string(params.max_disparity));
    require_same_shape(left, right, "block_match");
    const int h = left.height(), w = left.width();
    const int dmax = params.max_disparity;
    const int nbits = (2 * params.census_radius + 1) * (2 * params.census_radius + 1) - 1;

    const CensusMap cl = census_transform(left, params.census_radius);
    const CensusMap cr = census_transform(right, params.census_radius);

    // cost(r, c, d-1) for the left view; +inf where c - d leaves the image.
    constexpr float kInf = std::numeric_limits<float>::infinity();
    Grid<float> cost(h, w, dmax, kInf);
    Map diff(h, w);
    for (int d = 1; d <= dmax; ++d) {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) diff(r, c) = std::abs(left(r, c) - right(r, clampi(c - d, 0, w - 1)));
        const Map sad = box_mean(diff, params.census_radius);
        for (int r = 0; r < h; ++r)
            for (int c = d; c < w; ++c) {
                const double ham = std::popcount(cl(r, c) ^ cr(r, c - d)) / static_cast<double>(nbits);
                cost(r, c, d - 1) = static_cast<float>(ham + params.sad_weight * sad(r, c));
            }
    }

    StereoResult res;
    res.disparity = Map(h, w);
    res.valid = Mask(h, w);
    res.left_features = extract_features(left);
    res.right_features = extract_features(right);

    Grid<int> left_int(h, w, 1, 0);
    Grid<int> right_int(h, w, 1, 0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            int best = 0;
            float best_cost = kInf;
            for (int d = 1; d <= std::min(dmax, c); ++d)
                if (cost(r, c, d - 1) < best_cost) {
                    best_cost = cost(r, c, d - 1);
                    best = d;
                }
            left_int(r, c) = best;
        }
        for (int x = 0; x < w; ++x) {
            int best = 0;
            float best_cost = kInf;
            for (int d = 1; d <= dmax && x + d < w; ++d)
                if (cost(r, x + d, d - 1) < best_cost) {
                    best_cost = cost(r, x + d, d - 1);
                    best = d;
                }
            right_int(r, x) = best;
        }
    }

    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int d = left_int(r, c);
            if (d == 0) continue;
            const int xr = c - d;
            if (xr < 0 || right_int(r, xr) == 0) continue;
            if (std::abs(right_int(r, xr) - d) > params.lr_threshold) continue;
            double refined = d;
            if (d > 1 && d < std::min(dmax, c)) {
                const double cm = cost(r, c, d - 2), c0 = cost(r, c, d - 1), cp = cost(r, c, d);
                const double denom = cm - 2 * c0 + cp;
                if (denom > 0) refined = d + std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
            }
            res.disparity(r, c) = refined;
            res.valid(r, c) = 1;
        }
    return res;
}

Map disparity_confidence(const FeatureMap& left_features, const FeatureMap& right_features,
                         const Map& disparity) {
    require_same_shape(left_features, right_features, "disparity_confidence");
    require_same_shape(left_features, disparity, "disparity_confidence");
    if (left_features.channels() != right_features.channels())
        throw DimensionMismatch("disparity_confidence: feature channel counts differ");
    const int h = disparity.height(), w = disparity.width(), nc = left_features.channels();
    Map out(h, w, 3, 1.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double d = disparity(r, c);
            if (!(std::isfinite(d) && d > 0)) continue;
            for (int k = 0; k < 3; ++k) {
                const double xr = c - (d + (k - 1));
                if (!(xr >= 0 && xr <= w - 1)) continue;
                double dist = 0;
                for (int ch = 0; ch < nc; ++ch) {
                    double s = 0;
                    sample_bilinear(right_features, xr, r, ch, s);
                    dist += std::abs(left_features(r, c, ch) - s);
                }
                out(r, c, k) = nc > 0 ? dist / nc : 0.0;
            }
        }
    return out;
}

}  // namespace tempofuse
