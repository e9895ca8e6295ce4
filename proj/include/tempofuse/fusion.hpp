#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tempofuse/geometry.hpp"
#include "tempofuse/losses.hpp"
#include "tempofuse/stereo.hpp"

namespace tempofuse {

enum class Correlation { L1, Dot };

inline constexpr double kInvisibleL1 = 210.0;
inline constexpr double kInvisibleDot = 0.0;

/// Pixel-to-patch correlation of each pixel with its patch_size^2 - 1
/// dilated neighbours (centre excluded), replicate padding. L1 is the
/// channel-mean absolute difference, Dot the channel-mean product.
Map self_correlation(const Map& map, Correlation kind, int patch_size = 3, int dilation = 2);

/// Each pixel of `current` against the patch_size^2 dilated patch of
/// `previous` centred on the same location. Neighbours with
/// previous_visible = 0 read the sentinel (210 for L1, 0 for Dot).
Map cross_correlation(const Map& current, const Map& previous, const Mask& previous_visible,
                      Correlation kind, int patch_size = 3, int dilation = 2);

/// Fixed 53-channel fusion input. Channel layout (in order):
///   [0,3)   stereo disparity confidence at d_S + {-1,0,1}
///   [3,6)   same at the hole-filled motion disparity d_M
///   [6,14)  disparity self-correlation of d_S (L1)
///   [14,22) feature self-correlation (Dot)
///   [22,31) disparity cross-correlation d_S vs aligned previous (L1)
///   [31,40) feature cross-correlation (Dot)
///   40 flow magnitude, 41 flow confidence, 42 visibility
///   [43,53) stereo features
struct CueStack {
    static constexpr int kChannels = 53;
    static constexpr int kVersion = 1;

    Map data;  // H x W x 53
    std::uint64_t order_hash = channel_order_hash();

    static const std::vector<std::string>& channel_names();
    static std::uint64_t channel_order_hash();
};

/// Hole-filled motion disparity: aligned value where visible, stereo elsewhere.
Map fill_motion_disparity(const MemoryState& motion, const Map& stereo_disparity);

CueStack build_cues(const MemoryState& motion, const StereoResult& stereo, int patch_size = 3,
                    int dilation = 2);

struct WeightMaps {
    Map reset;
    Map fusion;
};

/// d_F = (1 - w_r w_f) d_S + w_r w_f d_M, per pixel.
Map fuse(const Map& d_stereo, const Map& d_motion, const WeightMaps& weights);

/// Per-pixel two-head logistic model: a shared 53 -> 16 ReLU trunk and two
/// sigmoid heads that see both the (normalised) cues and the trunk output.
class LogisticWeightModel {
public:
    static constexpr int kInputs = CueStack::kChannels;
    static constexpr int kHidden = 16;
    static constexpr int kHeadInputs = kInputs + kHidden;
    static constexpr std::size_t kParameterCount =
        2 * kInputs + kHidden * kInputs + kHidden + 2 * (kHeadInputs + 1);

    /// All-zero trunk and heads with identity normalisation: every output is 0.5.
    LogisticWeightModel();

    std::uint64_t channel_hash() const { return channel_hash_; }
    std::vector<float>& parameters() { return params_; }
    const std::vector<float>& parameters() const { return params_; }

    /// (w_reset, w_fusion) for one cue vector.
    std::pair<double, double> forward(const double* cues) const;

    std::vector<std::uint8_t> serialize() const;
    static LogisticWeightModel deserialize(const std::vector<std::uint8_t>& bytes);
    void save(const std::filesystem::path& path) const;
    static LogisticWeightModel load(const std::filesystem::path& path);

    bool operator==(const LogisticWeightModel&) const = default;

    // Parameter block offsets.
    static constexpr std::size_t kMeanOffset = 0;
    static constexpr std::size_t kScaleOffset = kMeanOffset + kInputs;
    static constexpr std::size_t kTrunkOffset = kScaleOffset + kInputs;
    static constexpr std::size_t kTrunkBiasOffset = kTrunkOffset + kHidden * kInputs;
    static constexpr std::size_t kResetHeadOffset = kTrunkBiasOffset + kHidden;
    static constexpr std::size_t kFusionHeadOffset = kResetHeadOffset + kHeadInputs + 1;

    /// Fixed compressive transform applied before normalisation
    /// (log1p on disparity-valued channels).
    static double preprocess(int channel, double value);

private:
    std::uint64_t channel_hash_;
    std::vector<float> params_;
};

/// Throws ChannelOrderMismatch if the stack layout differs from the model's.
WeightMaps predict_weights(const LogisticWeightModel& model, const CueStack& cues);

struct TrainingSample {
    CueStack cues;
    Map d_stereo;
    Map d_motion;  // hole-filled
    Map d_gt;
    Mask mask;     // pixels with usable ground truth
    /// Pixels with aligned history. Elsewhere the reset and fusion terms see
    /// a motion error of kInvisibleL1, so missing history is rejected. Empty
    /// means all visible.
    Mask motion_visible;
};

struct TrainParams {
    int epochs = 30;
    int batch_size = 256;
    double learning_rate = 5e-3;
    int pixel_stride = 2;
    double init_scale = 0.1;
    std::uint64_t seed = 1;
};

struct TrainResult {
    LogisticWeightModel model;
    std::vector<double> loss_curve;   // [0] = initial full-set loss, then one per epoch
    std::vector<double> epoch_means;  // running mean of mini-batch losses per epoch
    double initial_loss = 0;
    double final_loss = 0;
};

/// Mini-batch subgradient descent (Adam steps, linearly decayed rate) on the
/// mean total loss. The lowest-loss epoch is returned, so the final loss
/// never exceeds the initial one. Throws NonFiniteLoss.
TrainResult train_weight_model(const std::vector<TrainingSample>& samples, const LossConfig& loss,
                               const TrainParams& params);

struct KalmanState {
    Map mean;
    Map variance;
};

struct KalmanUpdate {
    KalmanState state;
    Map motion_weight;  // weight on the prior, 1 - gain; 0 where reset
};

/// Scalar per-pixel Kalman step on an already motion-aligned prior.
/// Pixels with prior_visible = 0 reset to the measurement.
KalmanUpdate kalman_update(const KalmanState& aligned_prior, const Mask& prior_visible,
                           const Map& measurement, const Map& measurement_variance,
                           double process_noise);

/// Measurement variance as an affine function of the centre stereo
/// confidence channel, floored.
struct KalmanCalibration {
    double intercept = 0.25;
    double slope = 0.0;
    double floor = 0.05;

    double variance(double confidence_center) const;
    /// Least-squares fit of squared stereo error against confidence.
    static KalmanCalibration fit(const std::vector<double>& confidence,
                                 const std::vector<double>& squared_error);
};

/// Pixel-wise pick of whichever estimate is closer to ground truth; ties keep stereo.
Map empirical_best(const Map& d_stereo, const Map& d_motion, const Map& d_gt);

}  // namespace tempofuse
