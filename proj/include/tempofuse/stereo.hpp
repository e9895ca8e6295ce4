#pragma once

#include <cstdint>

#include "tempofuse/grid.hpp"

namespace tempofuse {

/// Per-pixel hand-crafted features: 8 census octant densities followed by
/// |dI/dx| and |dI/dy|, all in [0, 1].
inline constexpr int kFeatureChannels = 10;
using FeatureMap = Map;

struct StereoResult {
    Map disparity;
    FeatureMap left_features;
    FeatureMap right_features;
    Mask valid;
};

struct StereoParams {
    int max_disparity = 64;
    int census_radius = 3;     // 7x7 window
    double sad_weight = 0.3;   // relative to normalised Hamming distance
    double lr_threshold = 1.0; // px
};

using CensusMap = Grid<std::uint64_t>;

/// Bit i is set when neighbour i of the (2r+1)^2 window is darker than the
/// centre. Replicate padding. Requires (2r+1)^2 - 1 <= 64.
CensusMap census_transform(const Map& image, int radius = 3);

FeatureMap extract_features(const Map& image);

/// Winner-take-all census + SAD matching over d in [1, max_disparity] with
/// parabola refinement and a left-right consistency check.
StereoResult block_match(const Map& left, const Map& right, const StereoParams& params = {});

/// Mean-over-channels l1 distance between left features and bilinearly
/// sampled right features at disparity + {-1, 0, +1}. Samples leaving the
/// image (or non-positive / non-finite disparities) read 1.
Map disparity_confidence(const FeatureMap& left_features, const FeatureMap& right_features,
                         const Map& disparity);

}  // namespace tempofuse
