#pragma once

#include <optional>
#include <vector>

#include "tempofuse/geometry.hpp"
#include "tempofuse/scene_sim.hpp"
#include "tempofuse/stereo.hpp"

namespace tempofuse {

/// What the motion stage needs from one frame.
struct MotionFrame {
    Map image;
    Map disparity;
    Mask valid;
    LabelMap labels;  // optional (empty) unless per-object motion is requested
    CensusMap census;

    static MotionFrame make(Map image, Map disparity, Mask valid, LabelMap labels = {});
};

struct Correspondence {
    double u = 0, v = 0, d = 0;     // source pixel at t-1
    double u2 = 0, v2 = 0, d2 = 0;  // target pixel at t
    double weight = 0;              // [0, 1]
};

struct MatchParams {
    int search_radius = 6;
    int stride = 4;
    int patch_radius = 2;
    double uniqueness_margin = 0.05;  // cost gap to the runner-up that earns full weight
};

/// Census patch matching on a stride grid of the previous frame. Weight is
/// (1 - best cost) scaled by how clearly the best displacement beats every
/// displacement more than one pixel away from it.
std::vector<Correspondence> match_frames(const MotionFrame& prev, const MotionFrame& curr,
                                         const MatchParams& params = {});

struct RigidSolveResult {
    SE3 transform;
    double initial_residual = 0;  // weighted squared residual of the identity
    double final_residual = 0;
    int iterations = 0;           // accepted Gauss-Newton steps
};

/// Weighted point-to-point Gauss-Newton on the se(3) tangent, left
/// perturbation, at most `iterations` steps. A step that would increase the
/// residual is halved until it does not; the best iterate is returned.
/// Throws DegenerateGeometry for < 3 weighted correspondences or a
/// rank-deficient system.
RigidSolveResult estimate_rigid_gn(const std::vector<Correspondence>& correspondences,
                                   const CameraRig& rig, int iterations);

enum class MotionMode { Oracle, GlobalRigid, PerObjectRigid };

struct MotionParams {
    int iterations = 16;
    MatchParams match;
    int robust_rounds = 2;
    double inlier_floor_px = 1.0;  // never reject below this disparity-space residual
};

struct MotionEstimate {
    SE3Field field;
    Map flow;        // H x W x 2
    Map confidence;  // [0, 1]
    int iterations_used = 0;
    std::vector<SE3> region_transforms;  // index = label (global mode: one entry)
};

/// Oracle copies the ground-truth field with confidence 1. The rigid modes
/// fit one transform globally or per label region of `prev.labels`; a region
/// whose fit is degenerate falls back to identity with confidence 0.
MotionEstimate estimate_field(const MotionFrame& prev, const MotionFrame& curr, MotionMode mode,
                              const CameraRig& rig, const MotionParams& params = {},
                              const SceneSample* ground_truth = nullptr);

/// Motion-compensate the previous state into the current frame.
MemoryState align_previous(const MemoryState& prev_state, const MotionEstimate& estimate,
                           const CameraRig& rig);

}  // namespace tempofuse
