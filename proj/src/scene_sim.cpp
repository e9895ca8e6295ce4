#include "tempofuse/scene_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace tempofuse {
namespace {

constexpr double kMinDisparity = 1.0;
constexpr double kMaxDisparity = 210.0;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double lattice(std::uint64_t seed, std::int64_t i, std::int64_t j, std::int64_t k) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(i));
    h = splitmix64(h ^ static_cast<std::uint64_t>(j));
    h = splitmix64(h ^ static_cast<std::uint64_t>(k));
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

// Trilinear value noise with quintic fade; C2 continuous, so the texture is
// band-limited to roughly one cycle per cell.
double value_noise(std::uint64_t seed, const Eigen::Vector3d& p) {
    const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const auto iz = static_cast<std::int64_t>(fz);
    const double tx = fade(p.x() - fx), ty = fade(p.y() - fy), tz = fade(p.z() - fz);
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                acc += w * lattice(seed, ix + dx, iy + dy, iz + dz);
            }
    return acc;
}

double procedural_texture(std::uint64_t seed, const Eigen::Vector3d& p, double scale) {
    const Eigen::Vector3d q = p / scale;
    const double n = 0.6 * value_noise(seed, q) + 0.4 * value_noise(seed ^ 0x5bd1e995ULL, 2.0 * q);
    return 0.1 + 0.55 * n;
}

// Smallest positive ray parameter hitting the object, in local coordinates.
bool intersect(const ObjectSpec& obj, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
               double& s, Eigen::Vector3d& local) {
    if (obj.kind == ObjectKind::Plane) {
        if (std::abs(dir.z()) < 1e-15) return false;
        s = -origin.z() / dir.z();
        if (!(s > 0)) return false;
        local = origin + s * dir;
        return std::abs(local.x()) <= obj.half_width && std::abs(local.y()) <= obj.half_height;
    }
    const double a = dir.squaredNorm();
    const double b = 2.0 * origin.dot(dir);
    const double c = origin.squaredNorm() - obj.radius * obj.radius;
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return false;
    const double sq = std::sqrt(disc);
    double s0 = (-b - sq) / (2 * a);
    if (!(s0 > 0)) s0 = (-b + sq) / (2 * a);
    if (!(s0 > 0)) return false;
    s = s0;
    local = origin + s * dir;
    return true;
}

// Camera-frame depth range an object can occupy at `frame`.
std::pair<double, double> object_depth_range(const ObjectSpec& obj, const SE3& cam_from_world,
                                             int frame) {
    const SE3 to_cam = cam_from_world * obj.pose(frame);
    if (obj.kind == ObjectKind::Sphere) {
        const double z = to_cam.translation.z();
        return {z - obj.radius, z + obj.radius};
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int sx : {-1, 1})
        for (int sy : {-1, 1}) {
            const double z = (to_cam * Eigen::Vector3d(sx * obj.half_width, sy * obj.half_height, 0)).z();
            lo = std::min(lo, z);
            hi = std::max(hi, z);
        }
    return {lo, hi};
}

}  // namespace

SE3 ObjectSpec::pose(int frame) const {
    const SE3 r0 = SE3::from_rotation_vector(orientation, Eigen::Vector3d::Zero());
    const SE3 spin = SE3::from_rotation_vector(frame * angular_velocity, Eigen::Vector3d::Zero());
    SE3 out;
    out.rotation = spin.rotation * r0.rotation;
    out.translation = center + frame * velocity;
    return out;
}

SE3 SceneConfig::camera_pose(int frame) const {
    return SE3::from_rotation_vector(frame * camera_angular_velocity, frame * camera_velocity);
}

void SceneConfig::validate() const {
    rig.validate();
    if (num_frames < 2) throw InvalidConfig("scene.num_frames must be >= 2");
    const double z_min = rig.focal_baseline() / kMaxDisparity;
    const double z_max = rig.focal_baseline() / kMinDisparity;
    auto check = [&](double lo, double hi, const std::string& what, int frame) {
        if (lo < z_min || hi > z_max)
            throw InvalidConfig(what + " depth [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                "] at frame " + std::to_string(frame) + " outside [fB/210, fB/1] = [" +
                                std::to_string(z_min) + ", " + std::to_string(z_max) + "]");
    };
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const auto& o = objects[i];
        if (o.kind == ObjectKind::Plane && !(o.half_width > 0 && o.half_height > 0))
            throw InvalidConfig("object " + std::to_string(i + 1) + " plane extent must be > 0");
        if (o.kind == ObjectKind::Sphere && !(o.radius > 0))
            throw InvalidConfig("object " + std::to_string(i + 1) + " radius must be > 0");
        if (!(o.texture_scale > 0))
            throw InvalidConfig("object " + std::to_string(i + 1) + " texture_scale must be > 0");
    }
    for (int t = 0; t < num_frames; ++t) {
        const SE3 cam_from_world = camera_pose(t).inverse();
        for (std::size_t i = 0; i < objects.size(); ++i) {
            const auto [lo, hi] = object_depth_range(objects[i], cam_from_world, t);
            check(lo, hi, "object " + std::to_string(i + 1), t);
        }
        // The background plane is unbounded; its visible depth is extremal
        // at the image corners.
        const SE3 pose = camera_pose(t);
        for (double u : {0.0, rig.width - 1.0})
            for (double v : {0.0, rig.height - 1.0}) {
                const Eigen::Vector3d dir =
                    pose.rotation * Eigen::Vector3d((u - rig.cx) / rig.fx, (v - rig.cy) / rig.fy, 1.0);
                if (dir.z() <= 0) throw InvalidConfig("background not visible at frame " + std::to_string(t));
                const double s = (background_depth - pose.translation.z()) / dir.z();
                check(s, s, "background", t);
            }
    }
}

Scene::Scene(SceneConfig config) : config_(std::move(config)) {
    config_.validate();
    if (config_.background_texture_scale <= 0)
        config_.background_texture_scale = 8.0 * config_.background_depth / config_.rig.fx;
}

Scene build_scene(const SceneConfig& config) { return Scene(config); }

SE3 Scene::body_pose(int label, int frame) const {
    if (label <= 0) return SE3::identity();
    return config_.objects[static_cast<std::size_t>(label - 1)].pose(frame);
}

RayHit Scene::cast(int frame, double u, double v, bool right) const {
    const CameraRig& rig = config_.rig;
    const SE3 pose = config_.camera_pose(frame);
    const Eigen::Vector3d dir_cam((u - rig.cx) / rig.fx, (v - rig.cy) / rig.fy, 1.0);
    const Eigen::Vector3d offset = right ? Eigen::Vector3d(rig.baseline, 0, 0) : Eigen::Vector3d::Zero();
    const Eigen::Vector3d origin = pose * offset;
    const Eigen::Vector3d dir = pose.rotation * dir_cam;

    RayHit best;
    double best_s = std::numeric_limits<double>::infinity();
    if (dir.z() > 0) {
        const double s = (config_.background_depth - origin.z()) / dir.z();
        if (s > 0) {
            best_s = s;
            best.label = 0;
            best.world = origin + s * dir;
            best.local = best.world;
        }
    }
    for (std::size_t i = 0; i < config_.objects.size(); ++i) {
        const ObjectSpec& obj = config_.objects[i];
        const SE3 body = obj.pose(frame);
        const Eigen::Matrix3d rt = body.rotation.transpose();
        double s = 0;
        Eigen::Vector3d local;
        if (intersect(obj, rt * (origin - body.translation), rt * dir, s, local) && s < best_s) {
            best_s = s;
            best.label = static_cast<int>(i) + 1;
            best.local = local;
            best.world = origin + s * dir;
        }
    }
    // dir_cam has unit z, so the ray parameter is the camera-frame depth.
    if (best.label >= 0) best.depth = best_s;
    return best;
}

double Scene::texture(const RayHit& hit) const {
    if (hit.label < 0) return 0.0;
    if (hit.label == 0) {
        const Eigen::Vector3d p(hit.local.x(), hit.local.y(), 0.0);
        return procedural_texture(config_.texture_seed, p, config_.background_texture_scale);
    }
    const ObjectSpec& obj = config_.objects[static_cast<std::size_t>(hit.label - 1)];
    Eigen::Vector3d p = hit.local;
    if (obj.kind == ObjectKind::Plane) p.z() = 0.0;
    return procedural_texture(config_.texture_seed ^ splitmix64(obj.texture_seed), p, obj.texture_scale);
}

SceneSample Scene::render(int frame) const {
    if (frame < 0 || frame >= config_.num_frames)
        throw FrameOutOfRange("frame " + std::to_string(frame) + " outside [0, " +
                              std::to_string(config_.num_frames) + ")");
    const CameraRig& rig = config_.rig;
    const int h = rig.height, w = rig.width;
    SceneSample s;
    s.frame = frame;
    s.left = Map(h, w);
    s.right = Map(h, w);
    s.gt_disparity = Map(h, w);
    s.labels = LabelMap(h, w);
    s.valid = Mask(h, w);
    s.gt_flow = Map(h, w, 2);
    s.gt_scene_flow_px = Map(h, w, 3);
    s.gt_scene_flow_m = Map(h, w, 3);
    s.gt_se3_field = SE3Field(h, w);
    s.covisible = Mask(h, w, 1, 1);

    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const RayHit hit = cast(frame, c, r);
            const RayHit hit_r = cast(frame, c, r, true);
            s.left(r, c) = texture(hit);
            s.right(r, c) = texture(hit_r);
            s.labels(r, c) = hit.label;
            if (hit.label >= 0) {
                const double d = rig.focal_baseline() / hit.depth;
                s.gt_disparity(r, c) = d;
                s.valid(r, c) = (d >= kMinDisparity && d <= kMaxDisparity) ? 1 : 0;
            }
        }

    if (frame == 0) return s;

    // Motion of frame t-1 pixels into frame t.
    const SE3 cam_prev = config_.camera_pose(frame - 1);
    const SE3 cam_curr_inv = config_.camera_pose(frame).inverse();
    std::vector<SE3> per_label(config_.objects.size() + 1);
    for (std::size_t k = 0; k < per_label.size(); ++k) {
        const int label = static_cast<int>(k);
        per_label[k] = cam_curr_inv * body_pose(label, frame) * body_pose(label, frame - 1).inverse() * cam_prev;
    }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const RayHit prev = cast(frame - 1, c, r);
            if (prev.label < 0) {
                s.covisible(r, c) = 0;
                continue;
            }
            const SE3& motion = per_label[static_cast<std::size_t>(prev.label)];
            s.gt_se3_field(r, c) = motion;
            const double d0 = rig.focal_baseline() / prev.depth;
            const Eigen::Vector3d p0 = lift(c, r, d0, rig);
            const Eigen::Vector3d p1 = motion * p0;
            for (int k = 0; k < 3; ++k) s.gt_scene_flow_m(r, c, k) = p1[k] - p0[k];
            if (!(p1.z() > 0)) {
                s.covisible(r, c) = 0;
                continue;
            }
            const Projection q = project(p1, rig);
            s.gt_flow(r, c, 0) = q.u - c;
            s.gt_flow(r, c, 1) = q.v - r;
            s.gt_scene_flow_px(r, c, 0) = q.u - c;
            s.gt_scene_flow_px(r, c, 1) = q.v - r;
            s.gt_scene_flow_px(r, c, 2) = q.d - d0;
            bool vis = q.u >= 0 && q.v >= 0 && q.u <= w - 1 && q.v <= h - 1;
            if (vis) {
                const RayHit now = cast(frame, q.u, q.v);
                vis = now.label == prev.label && std::abs(now.depth - p1.z()) < 1e-6 * p1.z();
            }
            s.covisible(r, c) = vis ? 1 : 0;
        }
    return s;
}

void NoiseModel::validate() const {
    if (!(jitter_sigma >= 0)) throw InvalidConfig("noise.jitter_sigma must be >= 0");
    if (!(outlier_rate >= 0 && outlier_rate <= 1)) throw InvalidConfig("noise.outlier_rate must be in [0, 1]");
}

Map perturb_disparity(const Map& gt, const LabelMap& labels, const NoiseModel& model) {
    model.validate();
    require_same_shape(gt, labels, "perturb_disparity");
    const int h = gt.height(), w = gt.width();
    std::mt19937_64 rng(model.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Map out = gt;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            // Fixed draw count per pixel keeps the stream aligned across models.
            const double g = gauss(rng);
            const double p = unit(rng);
            const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
            double d = gt(r, c);
            if (p < model.outlier_rate) {
                d += sign * model.outlier_magnitude;
            } else {
                d += model.jitter_sigma * g;
            }
            if (model.edge_bias != 0) {
                bool edge = false;
                for (int dr = -1; dr <= 1 && !edge; ++dr)
                    for (int dc = -1; dc <= 1 && !edge; ++dc)
                        if (labels.inside(r + dr, c + dc) && labels(r + dr, c + dc) != labels(r, c)) edge = true;
                if (edge) d += model.edge_bias;
            }
            out(r, c) = d;
        }
    return out;
}

SceneConfig random_scene_config(const CameraRig& rig, const RandomSceneParams& params,
                                std::uint64_t seed) {
    const double fb = rig.focal_baseline();
    std::mt19937_64 rng(splitmix64(seed));
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto rand_vec = [&](double bound) -> Eigen::Vector3d {
        Eigen::Vector3d v(uni(-1, 1), uni(-1, 1), uni(-1, 1));
        return v * bound / std::max(1.0, v.norm());
    };

    std::string last_error;
    for (int attempt = 0; attempt < 64; ++attempt) {
        SceneConfig cfg;
        cfg.rig = rig;
        cfg.num_frames = params.num_frames;
        cfg.texture_seed = splitmix64(seed + 0x1234);
        // Background at disparity 3..5 px, objects at 7..16 px.
        cfg.background_depth = fb / uni(3.0, 5.0);
        cfg.camera_velocity = rand_vec(params.max_camera_speed);
        cfg.camera_angular_velocity = rand_vec(params.max_angular_speed);

        const int n = std::uniform_int_distribution<int>(params.min_objects, params.max_objects)(rng);
        for (int i = 0; i < n; ++i) {
            ObjectSpec o;
            const double z = fb / uni(7.0, 16.0);
            const double half_w_m = 0.5 * rig.width * z / rig.fx;
            const double half_h_m = 0.5 * rig.height * z / rig.fy;
            o.center = {uni(-0.6, 0.6) * half_w_m, uni(-0.6, 0.6) * half_h_m, z};
            const bool sphere = params.allow_spheres && uni(0, 1) < 0.35;
            o.kind = sphere ? ObjectKind::Sphere : ObjectKind::Plane;
            o.half_width = uni(0.15, 0.35) * half_w_m;
            o.half_height = uni(0.2, 0.4) * half_h_m;
            o.radius = uni(0.15, 0.3) * half_h_m;
            o.orientation = sphere ? rand_vec(3.0) : rand_vec(0.3);
            const double v_img = params.max_speed_px * z / rig.fx;  // metres per px at this depth
            o.velocity = {uni(-1, 1) * v_img, uni(-1, 1) * v_img, uni(-1, 1) * 0.01 * z};
            o.angular_velocity = rand_vec(sphere ? 0.05 : 0.01);
            const double near_z = sphere ? z - o.radius : z;
            o.texture_scale = 8.0 * near_z / rig.fx;
            o.texture_seed = splitmix64(seed * 131 + static_cast<std::uint64_t>(i));
            cfg.objects.push_back(o);
        }
        try {
            cfg.validate();
            return cfg;
        } catch (const InvalidConfig& e) {
            last_error = e.what();
        }
    }
    throw InvalidConfig("random_scene_config: could not sample a valid scene for seed " +
                        std::to_string(seed) + " (" + last_error + ")");
}

}  // namespace tempofuse
