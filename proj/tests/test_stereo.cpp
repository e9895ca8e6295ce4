#include <algorithm>
#include <bit>
#include <cmath>

#include "doctest.h"
#include "tempofuse/scene_sim.hpp"
#include "tempofuse/stereo.hpp"
#include "test_util.hpp"

using namespace tempofuse;
using namespace tempofuse::testing;

namespace {

int clampi(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

// Direct evaluation of the matching cost for one pixel and disparity.
double naive_cost(const Map& left, const Map& right, int r, int c, int d, const StereoParams& p) {
    const int h = left.height(), w = left.width(), rad = p.census_radius;
    auto at = [&](const Map& m, int rr, int cc) { return m(clampi(rr, 0, h - 1), clampi(cc, 0, w - 1)); };
    int differ = 0, bits = 0;
    for (int dr = -rad; dr <= rad; ++dr)
        for (int dc = -rad; dc <= rad; ++dc) {
            if (!dr && !dc) continue;
            ++bits;
            const bool a = at(left, r + dr, c + dc) < left(r, c);
            const bool b = at(right, r + dr, c - d + dc) < right(r, c - d);
            differ += a != b;
        }
    double sad = 0;
    for (int dr = -rad; dr <= rad; ++dr)
        for (int dc = -rad; dc <= rad; ++dc) {
            const int rr = clampi(r + dr, 0, h - 1), cc = clampi(c + dc, 0, w - 1);
            sad += std::abs(left(rr, cc) - right(rr, clampi(cc - d, 0, w - 1)));
        }
    sad /= (2 * rad + 1) * (2 * rad + 1);
    return static_cast<double>(differ) / bits + p.sad_weight * sad;
}

Map shift_columns(const Map& m, int shift) {
    Map out(m.height(), m.width(), m.channels());
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c)
            for (int k = 0; k < m.channels(); ++k) out(r, c, k) = m(r, clampi(c - shift, 0, m.width() - 1), k);
    return out;
}

}  // namespace

TEST_CASE("features of a constant image") {
    const FeatureMap f = extract_features(Map(20, 30, 1, 0.4));
    REQUIRE(f.channels() == kFeatureChannels);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 30; ++c) {
            for (int k = 0; k < 8; ++k) CHECK(f(r, c, k) == 0.5);
            CHECK(f(r, c, 8) == 0.0);
            CHECK(f(r, c, 9) == 0.0);
        }
}

TEST_CASE("features are translation equivariant away from borders") {
    const Map img = random_map(30, 50, 1, 8);
    const FeatureMap a = extract_features(img);
    const FeatureMap b = extract_features(shift_columns(img, 3));
    for (int r = 0; r < 30; ++r)
        for (int c = 3 + 4; c < 50 - 4; ++c)
            for (int k = 0; k < kFeatureChannels; ++k) CHECK(b(r, c, k) == a(r, c - 3, k));
    for (double v : a.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("gradient-x peaks at a step edge") {
    Map img(10, 20, 1, 0.2);
    for (int r = 0; r < 10; ++r)
        for (int c = 10; c < 20; ++c) img(r, c) = 0.7;
    const FeatureMap f = extract_features(img);
    for (int r = 0; r < 10; ++r) {
        for (int c = 0; c < 20; ++c) {
            // Central difference |I(c+1) - I(c-1)| straddles the step at columns 9 and 10.
            const double expected = (c == 9 || c == 10) ? 0.5 : 0.0;
            CHECK(f(r, c, 8) == doctest::Approx(expected));
            CHECK(f(r, c, 9) == 0.0);
        }
    }
}

TEST_CASE("census transform marks darker neighbours") {
    Map img(3, 3, 1, 0.5);
    img(0, 0) = 0.1;  // darker, first bit of a radius-1 window
    img(2, 2) = 0.9;
    const CensusMap cm = census_transform(img, 1);
    CHECK(cm(1, 1) == 1u);
    CHECK_THROWS_AS(census_transform(img, 4), InvalidConfig);
}

TEST_CASE("block matching recovers a fronto-parallel plane") {
    const CameraRig rig = small_rig(96, 64);
    const SceneSample s = Scene(plane_scene(rig, 5.0)).render(0);
    const StereoResult res = block_match(s.left, s.right, {32});
    long valid = 0, good = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 96; ++c) {
            if (!res.valid(r, c)) continue;
            ++valid;
            good += std::abs(res.disparity(r, c) - 10.0) < 0.5;
            CHECK(res.disparity(r, c) >= 1.0);
            CHECK(res.disparity(r, c) <= 32.0);
        }
    CHECK(valid > 0.8 * 64 * 96);
    CHECK(good >= 0.95 * valid);
}

TEST_CASE("block matching of identical images degenerates gracefully") {
    const Map img = Scene(plane_scene(small_rig(64, 48), 5.0)).render(0).left;
    StereoResult res;
    REQUIRE_NOTHROW(res = block_match(img, img, {16}));
    long valid = 0, at_one = 0;
    for (int r = 0; r < 48; ++r)
        for (int c = 0; c < 64; ++c)
            if (res.valid(r, c)) {
                ++valid;
                at_one += res.disparity(r, c) == 1.0;
            }
    MESSAGE("valid fraction " << static_cast<double>(valid) / (48 * 64) << ", at d=1 "
                              << static_cast<double>(at_one) / static_cast<double>(valid));
    // Smooth texture leaves a few self-consistent minima away from the boundary.
    CHECK(at_one >= 0.8 * valid);
}

TEST_CASE("occluded band is rejected by the left-right check") {
    const CameraRig rig = small_rig(96, 72);
    const Scene scene(two_layer_scene(rig));
    const SceneSample s = scene.render(0);
    const StereoResult res = block_match(s.left, s.right, {40});
    long occluded = 0, rejected = 0;
    for (int r = 0; r < 72; ++r)
        for (int c = 0; c < 96; ++c) {
            if (c - s.gt_disparity(r, c) < 0) continue;
            const RayHit hit = scene.cast(0, c - s.gt_disparity(r, c), r, true);
            if (hit.label == s.labels(r, c)) continue;
            ++occluded;
            rejected += res.valid(r, c) == 0;
        }
    REQUIRE(occluded > 50);
    CHECK(rejected >= 0.8 * occluded);
}

TEST_CASE("disparity range is validated") {
    const Map img(8, 8, 1, 0.5);
    CHECK_THROWS_AS(block_match(img, img, {1}), DisparityRangeInvalid);
    CHECK_THROWS_AS(block_match(img, img, {211}), DisparityRangeInvalid);
    CHECK_THROWS_AS(block_match(img, Map(8, 9), {8}), DimensionMismatch);
}

TEST_CASE("sub-pixel refinement stays within half a pixel of the integer argmin") {
    const CameraRig rig = small_rig(64, 40);
    SceneConfig cfg = two_layer_scene(rig);
    cfg.objects[0].orientation = {0.1, 0.4, 0.0};
    const SceneSample s = Scene(cfg).render(0);
    const StereoParams p{24};
    const StereoResult res = block_match(s.left, s.right, p);
    long checked = 0;
    for (int r = 0; r < 40; r += 3)
        for (int c = 0; c < 64; c += 3) {
            if (!res.valid(r, c)) continue;
            int best = 0;
            double best_cost = 1e300;
            for (int d = 1; d <= std::min(p.max_disparity, c); ++d) {
                const double cost = naive_cost(s.left, s.right, r, c, d, p);
                if (cost < best_cost - 1e-6) {
                    best_cost = cost;
                    best = d;
                }
            }
            ++checked;
            CHECK(std::abs(res.disparity(r, c) - best) <= 0.5);
        }
    CHECK(checked > 100);
}

TEST_CASE("block matching is deterministic and insensitive to intensity gain") {
    const CameraRig rig = small_rig(96, 64);
    SceneConfig cfg = two_layer_scene(rig);
    const SceneSample s = Scene(cfg).render(0);
    const StereoResult a = block_match(s.left, s.right, {40});
    const StereoResult b = block_match(s.left, s.right, {40});
    CHECK(a.disparity == b.disparity);
    CHECK(a.valid == b.valid);

    Map l = s.left, r = s.right;
    for (auto& v : l.data()) v = std::min(1.0, 1.5 * v);
    for (auto& v : r.data()) v = std::min(1.0, 1.5 * v);
    const StereoResult g = block_match(l, r, {40});
    long both = 0, changed = 0, flipped = 0;
    for (int i = 0; i < 96 * 64; ++i) {
        if (a.valid.data()[i] != g.valid.data()[i]) {
            ++flipped;
            continue;
        }
        if (!a.valid.data()[i]) continue;
        ++both;
        changed += std::abs(a.disparity.data()[i] - g.disparity.data()[i]) > 0.25;
    }
    CHECK(changed < 0.01 * both);
    CHECK(flipped < 0.02 * 96 * 64);
}

TEST_CASE("disparity confidence") {
    const Map img = random_map(20, 40, 1, 5);
    const FeatureMap left = extract_features(img);
    const int d = 4;
    // Right features are the left ones shifted so that left(c) == right(c - d).
    FeatureMap right(20, 40, kFeatureChannels);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 40; ++c)
            for (int k = 0; k < kFeatureChannels; ++k) right(r, c, k) = left(r, clampi(c + d, 0, 39), k);

    const Map conf = disparity_confidence(left, right, Map(20, 40, 1, d));
    for (int r = 0; r < 20; ++r)
        for (int c = d + 1; c < 40 - 1; ++c) {
            CHECK(conf(r, c, 1) < 1e-6);
            CHECK(conf(r, c, 0) > 0.0);
            CHECK(conf(r, c, 2) > 0.0);
        }

    // Disparity one too large: the -1 offset lands on the true match.
    const Map off = disparity_confidence(left, right, Map(20, 40, 1, d + 1));
    for (int r = 0; r < 20; ++r)
        for (int c = d + 3; c < 39; ++c) {
            CHECK(off(r, c, 0) < 1e-6);
            CHECK(off(r, c, 0) < off(r, c, 1));
            CHECK(off(r, c, 0) < off(r, c, 2));
        }

    // Out of the image: saturates at 1.
    const Map far = disparity_confidence(left, right, Map(20, 40, 1, 50));
    for (double v : far.data()) CHECK(v == 1.0);
    const Map edge = disparity_confidence(left, right, Map(20, 40, 1, d));
    CHECK(edge(0, 3, 2) == 1.0);
}
