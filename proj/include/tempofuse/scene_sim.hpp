#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tempofuse/geometry.hpp"
#include "tempofuse/grid.hpp"

namespace tempofuse {

enum class ObjectKind { Plane, Sphere };

/// A rigid textured object with constant-velocity motion. Its pose at frame
/// t is: rotate by exp(t * angular_velocity) about its centre, then place
/// the centre at center + t * velocity (world = camera-of-frame-0 coords).
struct ObjectSpec {
    ObjectKind kind = ObjectKind::Plane;
    Eigen::Vector3d center = {0, 0, 5};
    Eigen::Vector3d orientation = Eigen::Vector3d::Zero();  // rotation vector at t = 0
    double half_width = 0.5;   // plane extent along local x (m)
    double half_height = 0.5;  // plane extent along local y (m)
    double radius = 0.5;       // sphere
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();          // m / frame
    Eigen::Vector3d angular_velocity = Eigen::Vector3d::Zero();  // rad / frame
    double texture_scale = 0.2;  // metres per noise cell
    std::uint64_t texture_seed = 1;

    SE3 pose(int frame) const;
};

struct SceneConfig {
    CameraRig rig;
    int num_frames = 2;
    std::vector<ObjectSpec> objects;  // label = index + 1; label 0 is the background
    double background_depth = 20.0;   // static fronto-parallel plane z = const (world)
    double background_texture_scale = 0.0;  // 0 -> derived from depth
    Eigen::Vector3d camera_velocity = Eigen::Vector3d::Zero();          // m / frame
    Eigen::Vector3d camera_angular_velocity = Eigen::Vector3d::Zero();  // rad / frame
    std::uint64_t texture_seed = 7;

    /// Camera-to-world pose of the left camera at `frame`.
    SE3 camera_pose(int frame) const;
    /// Throws InvalidConfig naming the violated constraint.
    void validate() const;
};

/// One rendered time step. Motion quantities describe t-1 -> t and are
/// indexed by pixels of frame t-1; at t = 0 they hold the identity motion.
struct SceneSample {
    int frame = 0;
    Map left, right;     // [0, 1]
    Map gt_disparity;    // px, frame t
    LabelMap labels;     // frame t
    Mask valid;          // frame t, 1 <= d <= 210

    Map gt_flow;              // H x W x 2 (du, dv)
    Map gt_scene_flow_px;     // H x W x 3 (du, dv, dd)
    Map gt_scene_flow_m;      // H x W x 3, metres in camera coordinates
    SE3Field gt_se3_field;    // camera(t-1) point -> camera(t) point
    Mask covisible;           // point of frame t-1 pixel is visible at t
};

struct RayHit {
    int label = -1;  // -1: nothing hit
    double depth = 0;
    Eigen::Vector3d local = Eigen::Vector3d::Zero();  // object-local hit point
    Eigen::Vector3d world = Eigen::Vector3d::Zero();
};

class Scene {
public:
    explicit Scene(SceneConfig config);

    const SceneConfig& config() const { return config_; }
    const CameraRig& rig() const { return config_.rig; }
    int num_frames() const { return config_.num_frames; }

    /// Ray cast through sub-pixel (u, v) of the left (right = false) or
    /// right camera at `frame`.
    RayHit cast(int frame, double u, double v, bool right = false) const;
    double texture(const RayHit& hit) const;
    /// Pose of the rigid body carrying `label` (identity for the background).
    SE3 body_pose(int label, int frame) const;

    /// Throws FrameOutOfRange unless 0 <= frame < T.
    SceneSample render(int frame) const;

private:
    SceneConfig config_;
};

Scene build_scene(const SceneConfig& config);
inline SceneSample render_sample(const Scene& scene, int frame) { return scene.render(frame); }

struct NoiseModel {
    double jitter_sigma = 0.0;
    double outlier_rate = 0.0;
    double outlier_magnitude = 0.0;
    double edge_bias = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Gaussian jitter, replacement outliers at gt +/- magnitude and a bias on
/// pixels within 1 px of a label boundary. Deterministic in model.seed.
Map perturb_disparity(const Map& gt, const LabelMap& labels, const NoiseModel& model);

/// Knobs for procedurally generated evaluation scenes.
struct RandomSceneParams {
    int num_frames = 30;
    int min_objects = 2;
    int max_objects = 3;
    double max_speed_px = 1.5;       // object image-plane speed bound, px / frame
    double max_camera_speed = 0.02;  // m / frame
    double max_angular_speed = 0.01; // rad / frame
    bool allow_spheres = true;
};

SceneConfig random_scene_config(const CameraRig& rig, const RandomSceneParams& params,
                                std::uint64_t seed);

}  // namespace tempofuse
