#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tempofuse/config.hpp"
#include "tempofuse/fusion.hpp"
#include "tempofuse/losses.hpp"
#include "tempofuse/metrics.hpp"
#include "tempofuse/motion.hpp"
#include "tempofuse/scene_sim.hpp"
#include "tempofuse/stereo.hpp"

namespace tempofuse {

enum class StereoSource { BlockMatch, NoisyOracle };
enum class FusionMethod { PerFrame, Kalman, Learned, EmpiricalBest, MotionOnly };

std::string to_string(FusionMethod m);
std::string to_string(StereoSource s);
std::string to_string(MotionMode m);
FusionMethod parse_fusion_method(const std::string& name);
StereoSource parse_stereo_source(const std::string& name);
MotionMode parse_motion_mode(const std::string& name);

enum class MapOutput { None, First, All };

struct ExperimentConfig {
    CameraRig rig{120.0, 120.0, 79.5, 59.5, 0.5, 160, 120};
    RandomSceneParams scene;
    int num_sequences = 10;        // evaluation sequences
    int num_train_sequences = 8;
    int train_frames = 8;          // frames rendered per training sequence
    int train_sequence_length = 2; // 2: previous state is the stereo output
    NoiseModel noise{0.5, 0.01, 8.0, 0.0, 0};
    StereoSource stereo_source = StereoSource::NoisyOracle;
    StereoParams stereo;
    MotionMode motion_mode = MotionMode::PerObjectRigid;
    MotionParams motion;
    std::vector<FusionMethod> methods{FusionMethod::PerFrame, FusionMethod::Kalman, FusionMethod::Learned,
                                      FusionMethod::EmpiricalBest, FusionMethod::MotionOnly};
    double process_noise = 0.25;
    LossConfig loss;
    TrainParams train;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "tempofuse_out";
    MapOutput write_maps = MapOutput::First;
    std::string model_path;  // load instead of training when set
    std::string echo;        // resolved key = value listing

    /// Throws InvalidConfig naming the offending field.
    void validate() const;

    /// Seeds of evaluation (seed % 5 == 0) and training scenes.
    std::vector<std::uint64_t> test_seeds() const;
    std::vector<std::uint64_t> train_seeds() const;
};

/// Builds a config from key/value pairs; unknown keys are an error.
ExperimentConfig experiment_config_from(KeyValueConfig kv);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Hands out rendered frames strictly in order; asking for any frame other
/// than the next one throws CausalityViolation.
class CausalityViolation : public Error {
public:
    using Error::Error;
};

class SequentialFrameSource {
public:
    explicit SequentialFrameSource(const Scene& scene) : scene_(scene) {}
    SceneSample next_frame(int frame);
    int frames_served() const { return next_; }
    int num_frames() const { return scene_.num_frames(); }

private:
    const Scene& scene_;
    int next_ = 0;
};

/// Stereo estimate for one sample according to the configured source. The
/// returned disparity is dense: pixels the matcher rejected are filled from
/// the nearest valid neighbour on the same row (smaller disparity wins).
StereoResult run_stereo(const SceneSample& sample, const ExperimentConfig& config, std::uint64_t scene_seed);

struct FusionModels {
    LogisticWeightModel weights;
    KalmanCalibration kalman;
};

struct SequenceResult {
    std::uint64_t seed = 0;
    std::map<FusionMethod, MetricReport> reports;
    MetricReport motion_report;  // flow metrics of the shared motion estimate
};

/// Online run of every configured method over one scene. Writes per-frame
/// maps under `map_dir` when it is non-empty.
SequenceResult run_sequence(const Scene& scene, std::uint64_t scene_seed, const ExperimentConfig& config,
                            const FusionModels& models, const std::filesystem::path& map_dir = {});

struct TrainingOutcome {
    FusionModels models;
    TrainResult train;
};

/// Fit the Kalman calibration and (when learned fusion is requested or
/// `force`) the weight model on the training scenes.
TrainingOutcome train_models(const ExperimentConfig& config, bool force = false);

struct ExperimentResult {
    std::vector<SequenceResult> sequences;
    std::map<FusionMethod, MetricReport> overall;
    std::optional<TrainResult> training;
};

ExperimentResult run_experiment(const ExperimentConfig& config);

/// Rows sorted by TEPE ascending (ties by method order).
std::string comparison_markdown(const ExperimentResult& result, const ExperimentConfig& config);
std::string comparison_csv(const ExperimentResult& result, const ExperimentConfig& config);

/// Write the full artifact set (metrics JSON/CSV, comparison, loss curve,
/// model, config echo, and maps per `config.write_maps`) to config.output_dir.
ExperimentResult run_and_write(const ExperimentConfig& config);

/// Metrics-only evaluation of externally produced PFMs: pred_dir/disp_NNNN.pfm
/// against gt_dir/disp_NNNN.pfm and gt_dir/flow_NNNN.pfm (du, dv, dd of
/// frame NNNN-1 -> NNNN, indexed by pixels of frame NNNN-1).
MetricReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir);

/// Worker count: TEMPOFUSE_THREADS when set (>= 1), else hardware concurrency.
int worker_count();

}  // namespace tempofuse
