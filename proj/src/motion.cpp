#include "tempofuse/motion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace tempofuse {
namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

struct Lifted {
    Eigen::Vector3d src, dst;
    double weight;
};

double weighted_residual(const std::vector<Lifted>& pts, const SE3& T) {
    double e = 0;
    for (const auto& p : pts) e += p.weight * (T * p.src - p.dst).squaredNorm();
    return e;
}

SE3 retract(const Eigen::Matrix<double, 6, 1>& delta, const SE3& T) {
    const SE3 inc = SE3::from_rotation_vector(delta.head<3>(), Eigen::Vector3d::Zero());
    return {inc.rotation * T.rotation, inc.rotation * T.translation + delta.tail<3>()};
}

RigidSolveResult solve_lifted(const std::vector<Lifted>& pts, int iterations) {
    int positive = 0;
    for (const auto& p : pts) positive += p.weight > 0;
    if (positive < 3)
        throw DegenerateGeometry("rigid fit needs >= 3 weighted correspondences, got " +
                                 std::to_string(positive));

    RigidSolveResult res;
    SE3 T = SE3::identity();
    double err = weighted_residual(pts, T);
    res.initial_residual = err;

    for (int it = 0; it < iterations; ++it) {
        Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto& p : pts) {
            if (p.weight <= 0) continue;
            const Eigen::Vector3d x = T * p.src;
            const Eigen::Vector3d r = x - p.dst;
            Eigen::Matrix<double, 3, 6> J;
            J.leftCols<3>() = -skew(x);
            J.rightCols<3>().setIdentity();
            H.noalias() += p.weight * J.transpose() * J;
            g.noalias() += p.weight * J.transpose() * r;
        }
        if (it == 0) {
            const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(H);
            const auto& ev = eig.eigenvalues();
            if (!(ev(0) > 1e-12 * ev(5)))
                throw DegenerateGeometry("rank-deficient normal equations (collinear points?)");
        }
        const Eigen::Matrix<double, 6, 1> step = -H.ldlt().solve(g);
        if (!step.allFinite()) break;

        bool accepted = false;
        double scale = 1.0;
        for (int tries = 0; tries < 12; ++tries, scale *= 0.5) {
            const SE3 cand = retract(scale * step, T);
            const double cand_err = weighted_residual(pts, cand);
            if (cand_err <= err) {
                T = cand;
                err = cand_err;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        ++res.iterations;
        if (step.norm() * scale < 1e-15) break;
    }
    res.transform = T;
    res.final_residual = err;
    return res;
}

std::vector<Lifted> lift_all(const std::vector<Correspondence>& cs, const CameraRig& rig) {
    std::vector<Lifted> out;
    out.reserve(cs.size());
    for (const auto& c : cs) out.push_back({lift(c.u, c.v, c.d, rig), lift(c.u2, c.v2, c.d2, rig), c.weight});
    return out;
}

// Rigid fit with depth-aware weighting and residual-based outlier rejection.
// Disparity noise stretches lifted points along the ray by ~z^2, so each
// correspondence is down-weighted by z^4 and residuals are compared in
// disparity units.
RigidSolveResult robust_fit(std::vector<Correspondence> cs, const CameraRig& rig,
                            const MotionParams& params, std::vector<char>& inlier) {
    const double fb = rig.focal_baseline();
    std::vector<double> scale(cs.size());
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const double z = 0.5 * (fb / cs[i].d + fb / cs[i].d2);
        scale[i] = fb / (z * z);  // metres -> disparity px
    }
    std::vector<double> base(cs.size());
    for (std::size_t i = 0; i < cs.size(); ++i) base[i] = cs[i].weight * scale[i] * scale[i];
    double max_w = 0;
    for (double b : base) max_w = std::max(max_w, b);
    inlier.assign(cs.size(), 1);

    auto fit = [&]() {
        std::vector<Correspondence> weighted = cs;
        for (std::size_t i = 0; i < cs.size(); ++i)
            weighted[i].weight = inlier[i] && max_w > 0 ? base[i] / max_w : 0.0;
        return solve_lifted(lift_all(weighted, rig), params.iterations);
    };

    RigidSolveResult res = fit();
    for (int round = 0; round < params.robust_rounds; ++round) {
        std::vector<double> resid(cs.size());
        std::vector<double> pool;
        for (std::size_t i = 0; i < cs.size(); ++i) {
            const Eigen::Vector3d a = res.transform * lift(cs[i].u, cs[i].v, cs[i].d, rig);
            const Eigen::Vector3d b = lift(cs[i].u2, cs[i].v2, cs[i].d2, rig);
            resid[i] = (a - b).norm() * scale[i];
            if (cs[i].weight > 0) pool.push_back(resid[i]);
        }
        if (pool.empty()) break;
        std::nth_element(pool.begin(), pool.begin() + pool.size() / 2, pool.end());
        const double thr = std::max(params.inlier_floor_px, 3.0 * 1.4826 * pool[pool.size() / 2]);
        for (std::size_t i = 0; i < cs.size(); ++i) inlier[i] = resid[i] <= thr ? 1 : 0;
        res = fit();
    }
    return res;
}

}  // namespace

MotionFrame MotionFrame::make(Map image, Map disparity, Mask valid, LabelMap labels) {
    MotionFrame f;
    f.census = census_transform(image, 3);
    f.image = std::move(image);
    f.disparity = std::move(disparity);
    f.valid = std::move(valid);
    f.labels = std::move(labels);
    return f;
}

std::vector<Correspondence> match_frames(const MotionFrame& prev, const MotionFrame& curr,
                                         const MatchParams& params) {
    require_same_shape(prev.image, curr.image, "match_frames");
    const int h = prev.image.height(), w = prev.image.width();
    const int R = params.search_radius, P = params.patch_radius;
    const int side = 2 * R + 1;
    const double norm = 1.0 / (48.0 * (2 * P + 1) * (2 * P + 1));
    std::vector<Correspondence> out;
    std::vector<double> costs(static_cast<std::size_t>(side) * side);

    for (int r = params.stride / 2; r < h; r += params.stride)
        for (int c = params.stride / 2; c < w; c += params.stride) {
            if (!prev.valid(r, c)) continue;
            std::fill(costs.begin(), costs.end(), std::numeric_limits<double>::infinity());
            int best_dr = 0, best_dc = 0;
            double best = std::numeric_limits<double>::infinity();
            for (int dr = -R; dr <= R; ++dr)
                for (int dc = -R; dc <= R; ++dc) {
                    if (!curr.valid.inside(r + dr, c + dc)) continue;
                    int ham = 0;
                    for (int i = -P; i <= P; ++i)
                        for (int j = -P; j <= P; ++j) {
                            const int sr = clampi(r + i, 0, h - 1), sc = clampi(c + j, 0, w - 1);
                            const int tr = clampi(r + dr + i, 0, h - 1), tc = clampi(c + dc + j, 0, w - 1);
                            ham += std::popcount(prev.census(sr, sc) ^ curr.census(tr, tc));
                        }
                    const double cost = ham * norm;
                    costs[static_cast<std::size_t>(dr + R) * side + (dc + R)] = cost;
                    const bool better = cost < best ||
                                        (cost == best && dr * dr + dc * dc < best_dr * best_dr + best_dc * best_dc);
                    if (better) {
                        best = cost;
                        best_dr = dr;
                        best_dc = dc;
                    }
                }
            if (!std::isfinite(best)) continue;
            double second = std::numeric_limits<double>::infinity();
            for (int dr = -R; dr <= R; ++dr)
                for (int dc = -R; dc <= R; ++dc) {
                    if (std::max(std::abs(dr - best_dr), std::abs(dc - best_dc)) <= 1) continue;
                    second = std::min(second, costs[static_cast<std::size_t>(dr + R) * side + (dc + R)]);
                }
            const double unique =
                std::isfinite(second) ? std::clamp((second - best) / params.uniqueness_margin, 0.0, 1.0) : 1.0;
            const int tr = r + best_dr, tc = c + best_dc;
            if (!curr.valid(tr, tc)) continue;
            Correspondence cor;
            cor.u = c;
            cor.v = r;
            cor.d = prev.disparity(r, c);
            cor.u2 = tc;
            cor.v2 = tr;
            cor.d2 = curr.disparity(tr, tc);
            cor.weight = std::clamp(1.0 - best, 0.0, 1.0) * unique;
            if (cor.d > 0 && cor.d2 > 0) out.push_back(cor);
        }
    return out;
}

RigidSolveResult estimate_rigid_gn(const std::vector<Correspondence>& correspondences,
                                   const CameraRig& rig, int iterations) {
    return solve_lifted(lift_all(correspondences, rig), iterations);
}

MotionEstimate estimate_field(const MotionFrame& prev, const MotionFrame& curr, MotionMode mode,
                              const CameraRig& rig, const MotionParams& params,
                              const SceneSample* ground_truth) {
    const int h = prev.image.height(), w = prev.image.width();
    require_same_shape(prev.image, curr.image, "estimate_field");
    MotionEstimate est;
    est.flow = Map(h, w, 2);
    est.confidence = Map(h, w);

    if (mode == MotionMode::Oracle) {
        if (!ground_truth) throw InvalidConfig("oracle motion requires ground truth");
        est.field = ground_truth->gt_se3_field;
        est.flow = ground_truth->gt_flow;
        est.confidence.fill(1.0);
        return est;
    }

    const bool per_object = mode == MotionMode::PerObjectRigid;
    if (per_object && !prev.labels.same_shape(h, w))
        throw InvalidConfig("per_object_rigid motion requires labels");

    const std::vector<Correspondence> cs = match_frames(prev, curr, params.match);
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const int label = per_object ? prev.labels(static_cast<int>(cs[i].v), static_cast<int>(cs[i].u)) : 0;
        groups[label].push_back(i);
    }
    if (per_object)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) groups.try_emplace(prev.labels(r, c));
    else
        groups.try_emplace(0);

    int max_label = 0;
    for (const auto& [label, _] : groups) max_label = std::max(max_label, label);
    est.region_transforms.assign(static_cast<std::size_t>(max_label) + 1, SE3::identity());
    std::vector<char> solved(est.region_transforms.size(), 0);

    // Per-grid-node weight after outlier rejection, used as confidence.
    const int stride = params.match.stride;
    Map node_weight(h, w, 1, 0.0);
    for (const auto& [label, idx] : groups) {
        if (label < 0) continue;
        std::vector<Correspondence> sub;
        for (std::size_t i : idx) sub.push_back(cs[i]);
        try {
            std::vector<char> inlier;
            const RigidSolveResult fit = robust_fit(sub, rig, params, inlier);
            est.region_transforms[static_cast<std::size_t>(label)] = fit.transform;
            solved[static_cast<std::size_t>(label)] = 1;
            est.iterations_used = std::max(est.iterations_used, fit.iterations);
            for (std::size_t k = 0; k < sub.size(); ++k)
                node_weight(static_cast<int>(sub[k].v), static_cast<int>(sub[k].u)) = inlier[k] ? sub[k].weight : 0.0;
        } catch (const DegenerateGeometry&) {
            // identity, confidence 0
        }
    }

    est.field = SE3Field(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int label = per_object ? prev.labels(r, c) : 0;
            if (label < 0) continue;
            const auto li = static_cast<std::size_t>(label);
            est.field(r, c) = est.region_transforms[li];
            if (!solved[li]) continue;
            const int gr = clampi(stride / 2 + static_cast<int>(std::lround((r - stride / 2) / static_cast<double>(stride))) * stride, 0, h - 1);
            const int gc = clampi(stride / 2 + static_cast<int>(std::lround((c - stride / 2) / static_cast<double>(stride))) * stride, 0, w - 1);
            est.confidence(r, c) = node_weight(gr, gc);
            const double d = prev.disparity(r, c);
            if (!prev.valid(r, c) || !(d > 0)) continue;
            const Eigen::Vector3d moved = est.field(r, c) * lift(c, r, d, rig);
            if (!(moved.z() > 0)) continue;
            const Projection p = project(moved, rig);
            est.flow(r, c, 0) = p.u - c;
            est.flow(r, c, 1) = p.v - r;
        }
    return est;
}

MemoryState align_previous(const MemoryState& prev_state, const MotionEstimate& estimate,
                           const CameraRig& rig) {
    require_same_shape(prev_state.disparity, estimate.confidence, "align_previous");
    MemoryState src = prev_state;
    src.flow_confidence = estimate.confidence;
    return splat(src, estimate.field, rig);
}

}  // namespace tempofuse
