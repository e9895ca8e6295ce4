#include "tempofuse/geometry.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace tempofuse {

void CameraRig::validate() const {
    if (!(fx > 0)) throw InvalidConfig("rig.fx must be > 0");
    if (!(fy > 0)) throw InvalidConfig("rig.fy must be > 0");
    if (!(baseline > 0)) throw InvalidConfig("rig.baseline must be > 0");
    if (width < 2) throw InvalidConfig("rig.width must be >= 2");
    if (height < 2) throw InvalidConfig("rig.height must be >= 2");
}

SE3 SE3::from_rotation_vector(const Eigen::Vector3d& omega, const Eigen::Vector3d& t) {
    SE3 out;
    const double angle = omega.norm();
    if (angle > 0) out.rotation = Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
    out.translation = t;
    return out;
}

bool SE3::is_valid(double tol) const {
    const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return err.cwiseAbs().maxCoeff() < tol && std::abs(rotation.determinant() - 1.0) < tol &&
           translation.allFinite();
}

double SE3::rotation_angle() const {
    // atan2 form stays accurate for tiny angles, unlike acos of the trace.
    const Eigen::Matrix3d& r = rotation;
    const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
}

double rotation_distance(const SE3& a, const SE3& b) {
    SE3 rel;
    rel.rotation = a.rotation.transpose() * b.rotation;
    return rel.rotation_angle();
}

MemoryState::MemoryState(int height, int width, int feature_channels)
    : disparity(height, width, 1, 0.0),
      features(height, width, feature_channels, 0.0),
      visibility(height, width, 1, 0),
      flow_magnitude(height, width, 1, 0.0),
      flow_confidence(height, width, 1, 0.0),
      valid(height, width, 1, 0) {}

bool MemoryState::check_invariants() const {
    const int h = height(), w = width();
    if (!features.same_shape(h, w) || !visibility.same_shape(h, w) ||
        !flow_magnitude.same_shape(h, w) || !flow_confidence.same_shape(h, w) ||
        !valid.same_shape(h, w))
        return false;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (visibility(r, c) && !valid(r, c)) return false;
            if (valid(r, c) && !(std::isfinite(disparity(r, c)) && disparity(r, c) > 0)) return false;
        }
    return true;
}

double disparity_to_depth(double disparity, const CameraRig& rig) {
    if (!(disparity > 0))
        throw NonPositiveDisparity("disparity must be > 0, got " + std::to_string(disparity));
    return rig.focal_baseline() / disparity;
}

double depth_to_disparity(double depth, const CameraRig& rig) {
    if (!(depth > 0)) throw NonPositiveDepth("depth must be > 0, got " + std::to_string(depth));
    return rig.focal_baseline() / depth;
}

Eigen::Vector3d lift(double u, double v, double disparity, const CameraRig& rig) {
    const double z = disparity_to_depth(disparity, rig);
    return {(u - rig.cx) * z / rig.fx, (v - rig.cy) * z / rig.fy, z};
}

Projection project(const Eigen::Vector3d& p, const CameraRig& rig) {
    if (!(p.z() > 0)) throw NonPositiveDepth("point behind camera, z=" + std::to_string(p.z()));
    return {rig.fx * p.x() / p.z() + rig.cx, rig.fy * p.y() / p.z() + rig.cy,
            rig.focal_baseline() / p.z()};
}

PointMap apply_se3_field(const PointMap& points, const SE3Field& field) {
    const std::size_t n = static_cast<std::size_t>(field.height()) * field.width();
    if (points.size() != n)
        throw DimensionMismatch("apply_se3_field: " + std::to_string(points.size()) +
                                " points vs field of " + std::to_string(n));
    PointMap out(n);
    for (int r = 0; r < field.height(); ++r)
        for (int c = 0; c < field.width(); ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * field.width() + c;
            out[i] = field(r, c) * points[i];
        }
    return out;
}

MemoryState splat(const MemoryState& state, const SE3Field& field, const CameraRig& rig) {
    const int h = state.height(), w = state.width();
    if (field.height() != h || field.width() != w)
        throw DimensionMismatch("splat: field and state dimensions differ");
    const int nc = state.feature_channels();
    MemoryState out(h, w, nc);

    constexpr double kTieEps = 1e-12;
    Map zbuf(h, w, 1, std::numeric_limits<double>::infinity());
    Grid<int> source(h, w, 1, -1);
    std::vector<Projection> landed(static_cast<std::size_t>(h) * w);

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!state.valid(r, c)) continue;
            const double d = state.disparity(r, c);
            if (!(d > 0) || !std::isfinite(d)) continue;
            const Eigen::Vector3d moved = field(r, c) * lift(c, r, d, rig);
            if (!(moved.z() > 0)) continue;
            const Projection p = project(moved, rig);
            const int tc = static_cast<int>(std::floor(p.u + 0.5));
            const int tr = static_cast<int>(std::floor(p.v + 0.5));
            if (!out.valid.inside(tr, tc)) continue;
            // Strict improvement only: earlier sources (lower row, then
            // column) keep exact ties.
            if (moved.z() < zbuf(tr, tc) - kTieEps) {
                zbuf(tr, tc) = moved.z();
                source(tr, tc) = r * w + c;
                landed[static_cast<std::size_t>(tr) * w + tc] = p;
            }
        }
    }

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int src = source(r, c);
            if (src < 0) continue;
            const int sr = src / w, sc = src % w;
            const Projection& p = landed[static_cast<std::size_t>(r) * w + c];
            out.disparity(r, c) = p.d;
            for (int k = 0; k < nc; ++k) out.features(r, c, k) = state.features(sr, sc, k);
            out.valid(r, c) = 1;
            out.visibility(r, c) = 1;
            out.flow_magnitude(r, c) = std::hypot(p.u - sc, p.v - sr);
            out.flow_confidence(r, c) = state.flow_confidence(sr, sc);
        }
    }
    return out;
}

}  // namespace tempofuse
