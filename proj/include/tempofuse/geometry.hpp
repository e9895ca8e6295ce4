#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tempofuse/grid.hpp"

namespace tempofuse {

/// Rectified pinhole stereo pair. The right camera sits at +baseline along
/// the left camera's x axis, so a point at depth z has disparity fx*baseline/z.
struct CameraRig {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    double baseline = 0;
    int width = 0, height = 0;

    /// Throws InvalidConfig when any invariant is violated.
    void validate() const;
    double focal_baseline() const { return fx * baseline; }
};

/// Rigid transform x' = R x + t.
struct SE3 {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static SE3 identity() { return {}; }
    /// Rotation vector (axis * angle, radians) plus translation.
    static SE3 from_rotation_vector(const Eigen::Vector3d& omega, const Eigen::Vector3d& t);

    Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation * p + translation; }
    SE3 operator*(const SE3& rhs) const {
        return {rotation * rhs.rotation, rotation * rhs.translation + translation};
    }
    SE3 inverse() const {
        const Eigen::Matrix3d rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }

    /// RᵀR = I and det R = 1 within tol.
    bool is_valid(double tol = 1e-9) const;
    double rotation_angle() const;
};

/// Angle of R_a^T R_b in radians.
double rotation_distance(const SE3& a, const SE3& b);

/// Per-pixel rigid transforms, one per source pixel.
class SE3Field {
public:
    SE3Field() = default;
    SE3Field(int height, int width, const SE3& fill = SE3::identity())
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(height) * width, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    SE3& operator()(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
    const SE3& operator()(int row, int col) const {
        return data_[static_cast<std::size_t>(row) * width_ + col];
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<SE3> data_;
};

/// The per-pixel memory carried between frames: disparity, a feature
/// stack and the auxiliary motion channels.
struct MemoryState {
    Map disparity;
    Map features;  // H x W x C, C may be 0
    Mask visibility;
    Map flow_magnitude;
    Map flow_confidence;
    Mask valid;

    MemoryState() = default;
    MemoryState(int height, int width, int feature_channels);

    int height() const { return disparity.height(); }
    int width() const { return disparity.width(); }
    int feature_channels() const { return features.channels(); }

    /// Shapes agree, disparity finite and positive on valid pixels and
    /// visibility is a subset of valid.
    bool check_invariants() const;
};

struct Projection {
    double u = 0, v = 0, d = 0;
};

double disparity_to_depth(double disparity, const CameraRig& rig);
double depth_to_disparity(double depth, const CameraRig& rig);

Eigen::Vector3d lift(double u, double v, double disparity, const CameraRig& rig);
Projection project(const Eigen::Vector3d& p, const CameraRig& rig);

using PointMap = std::vector<Eigen::Vector3d>;  // row-major H*W

/// out[i] = R[i] p[i] + t[i].
PointMap apply_se3_field(const PointMap& points, const SE3Field& field);

/// Forward-splat `state` into the target view through `field`.
///
/// Every valid source pixel is lifted, transformed and projected; it lands
/// on the nearest target pixel (round half up) and the smallest transformed
/// depth wins. Exact depth ties go to the lower source row, then column.
/// The winner's projected disparity, features and flow confidence are
/// copied; flow_magnitude is the 2D displacement of the winner. Targets
/// nobody lands on keep valid = visibility = 0.
MemoryState splat(const MemoryState& state, const SE3Field& field, const CameraRig& rig);

}  // namespace tempofuse
