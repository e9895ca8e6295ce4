#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include "tempofuse/fusion.hpp"

namespace tempofuse {
namespace {

constexpr char kMagic[4] = {'T', 'F', 'W', '1'};

// Logit clamped so outputs stay strictly inside (0, 1).
double sigmoid(double z) {
    z = std::clamp(z, -30.0, 30.0);
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    if (pos + sizeof(U) > in.size()) throw IoError("weight model: truncated data");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(in[pos + i]) << (8 * i);
    pos += sizeof(U);
    return std::bit_cast<T>(bits);
}

using Model = LogisticWeightModel;

// Forward pass over trainable parameters `p` (double shadow copy) for an
// already-normalised input. Fills hidden activations.
struct Activations {
    double hidden[Model::kHidden];
    double w_reset, w_fusion;
};

void forward_normalised(const double* p, const float* x, Activations& a) {
    for (int j = 0; j < Model::kHidden; ++j) {
        const double* row = p + Model::kTrunkOffset + static_cast<std::size_t>(j) * Model::kInputs;
        double z = p[Model::kTrunkBiasOffset + j];
        for (int i = 0; i < Model::kInputs; ++i) z += row[i] * x[i];
        a.hidden[j] = z > 0 ? z : 0.0;
    }
    auto head = [&](std::size_t off) {
        double z = p[off + Model::kHeadInputs];
        for (int i = 0; i < Model::kInputs; ++i) z += p[off + i] * x[i];
        for (int j = 0; j < Model::kHidden; ++j) z += p[off + Model::kInputs + j] * a.hidden[j];
        return sigmoid(z);
    };
    a.w_reset = head(Model::kResetHeadOffset);
    a.w_fusion = head(Model::kFusionHeadOffset);
}

struct PoolEntry {
    float x[Model::kInputs];
    double d_stereo, d_motion, d_gt, e_motion;
};

double entry_loss(const double* p, const PoolEntry& e, const LossConfig& loss, Activations& a) {
    forward_normalised(p, e.x, a);
    const double wm = a.w_reset * a.w_fusion;
    const double fused = e.d_stereo + wm * (e.d_motion - e.d_stereo);
    return pixel_loss(fused, e.d_gt, a.w_reset, a.w_fusion, e.e_motion, std::abs(e.d_stereo - e.d_gt), loss)
        .total;
}

double full_loss(const double* p, const std::vector<PoolEntry>& pool, const LossConfig& loss) {
    Activations a;
    double sum = 0;
    for (const auto& e : pool) sum += entry_loss(p, e, loss, a);
    return pool.empty() ? 0.0 : sum / static_cast<double>(pool.size());
}

}  // namespace

LogisticWeightModel::LogisticWeightModel()
    : channel_hash_(CueStack::channel_order_hash()), params_(kParameterCount, 0.0f) {
    std::fill(params_.begin() + kScaleOffset, params_.begin() + kScaleOffset + kInputs, 1.0f);
}

double LogisticWeightModel::preprocess(int channel, double value) {
    const bool disparity_valued = (channel >= 6 && channel < 14) || (channel >= 22 && channel < 31) || channel == 40;
    return disparity_valued ? std::log1p(std::max(0.0, value)) : value;
}

std::pair<double, double> LogisticWeightModel::forward(const double* cues) const {
    float x[kInputs];
    for (int i = 0; i < kInputs; ++i)
        x[i] = static_cast<float>((preprocess(i, cues[i]) - params_[kMeanOffset + i]) / params_[kScaleOffset + i]);
    double p[kParameterCount];
    std::copy(params_.begin(), params_.end(), p);
    Activations a;
    forward_normalised(p, x, a);
    return {a.w_reset, a.w_fusion};
}

std::vector<std::uint8_t> LogisticWeightModel::serialize() const {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le(out, channel_hash_);
    put_le(out, static_cast<std::uint32_t>(params_.size()));
    for (float v : params_) put_le(out, v);
    return out;
}

LogisticWeightModel LogisticWeightModel::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
        throw IoError("weight model: bad magic, expected TFW1");
    std::size_t pos = 4;
    const auto hash = get_le<std::uint64_t>(bytes, pos);
    if (hash != CueStack::channel_order_hash())
        throw ChannelOrderMismatch("weight model was trained on a different cue channel order");
    const auto count = get_le<std::uint32_t>(bytes, pos);
    if (count != kParameterCount)
        throw IoError("weight model: expected " + std::to_string(kParameterCount) + " parameters, got " +
                      std::to_string(count));
    LogisticWeightModel m;
    for (std::size_t i = 0; i < count; ++i) m.params_[i] = get_le<float>(bytes, pos);
    if (pos != bytes.size()) throw IoError("weight model: trailing bytes");
    return m;
}

void LogisticWeightModel::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

LogisticWeightModel LogisticWeightModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

WeightMaps predict_weights(const LogisticWeightModel& model, const CueStack& cues) {
    if (cues.order_hash != model.channel_hash() || cues.data.channels() != CueStack::kChannels)
        throw ChannelOrderMismatch("cue stack channel order does not match the weight model");
    const int h = cues.data.height(), w = cues.data.width();
    WeightMaps out{Map(h, w), Map(h, w)};
    std::vector<double> p(model.parameters().begin(), model.parameters().end());
    const auto& params = model.parameters();
    float x[LogisticWeightModel::kInputs];
    Activations a;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const auto px = cues.data.pixel(r, c);
            for (int i = 0; i < LogisticWeightModel::kInputs; ++i)
                x[i] = static_cast<float>((LogisticWeightModel::preprocess(i, px[static_cast<std::size_t>(i)]) -
                                           params[LogisticWeightModel::kMeanOffset + i]) /
                                          params[LogisticWeightModel::kScaleOffset + i]);
            forward_normalised(p.data(), x, a);
            out.reset(r, c) = a.w_reset;
            out.fusion(r, c) = a.w_fusion;
        }
    return out;
}

TrainResult train_weight_model(const std::vector<TrainingSample>& samples, const LossConfig& loss,
                               const TrainParams& tp) {
    loss.validate();
    if (samples.empty()) throw InvalidConfig("train_weight_model: need at least one sample");
    if (tp.pixel_stride < 1 || tp.batch_size < 1 || tp.epochs < 0)
        throw InvalidConfig("train_weight_model: bad training hyper-parameters");
    constexpr int N = Model::kInputs;

    // Gather raw (preprocessed) cue vectors on a stride grid.
    std::vector<PoolEntry> pool;
    for (const auto& s : samples) {
        if (s.cues.order_hash != CueStack::channel_order_hash())
            throw ChannelOrderMismatch("training sample has a different cue channel order");
        for (int r = 0; r < s.d_gt.height(); r += tp.pixel_stride)
            for (int c = 0; c < s.d_gt.width(); c += tp.pixel_stride) {
                if (!s.mask.empty() && !s.mask(r, c)) continue;
                PoolEntry e;
                const auto px = s.cues.data.pixel(r, c);
                for (int i = 0; i < N; ++i) e.x[i] = static_cast<float>(Model::preprocess(i, px[static_cast<std::size_t>(i)]));
                e.d_stereo = s.d_stereo(r, c);
                e.d_motion = s.d_motion(r, c);
                e.d_gt = s.d_gt(r, c);
                const bool visible = s.motion_visible.empty() || s.motion_visible(r, c);
                e.e_motion = visible ? std::abs(e.d_motion - e.d_gt) : kInvisibleL1;
                pool.push_back(e);
            }
    }
    if (pool.empty()) throw InvalidConfig("train_weight_model: no valid training pixels");

    TrainResult result;
    Model& model = result.model;
    auto& params = model.parameters();
    // Standardise inputs; stored as floats so inference sees the same values.
    for (int i = 0; i < N; ++i) {
        double mean = 0, sq = 0;
        for (const auto& e : pool) mean += e.x[i];
        mean /= static_cast<double>(pool.size());
        for (const auto& e : pool) sq += (e.x[i] - mean) * (e.x[i] - mean);
        const double sd = std::sqrt(sq / static_cast<double>(pool.size()));
        params[Model::kMeanOffset + i] = static_cast<float>(mean);
        params[Model::kScaleOffset + i] = static_cast<float>(std::max(sd, 1e-3));
    }
    for (auto& e : pool)
        for (int i = 0; i < N; ++i)
            e.x[i] = static_cast<float>((e.x[i] - params[Model::kMeanOffset + i]) / params[Model::kScaleOffset + i]);

    std::mt19937_64 rng(tp.seed);
    if (tp.epochs > 0) {
        std::normal_distribution<double> init(0.0, tp.init_scale);
        for (std::size_t k = Model::kTrunkOffset; k < Model::kTrunkBiasOffset; ++k)
            params[k] = static_cast<float>(init(rng));
    }

    std::vector<double> p(params.begin(), params.end());
    const std::size_t first = Model::kTrunkOffset;
    const std::size_t last = Model::kParameterCount;
    std::vector<double> m1(last, 0.0), m2(last, 0.0), grad(last, 0.0);

    result.initial_loss = full_loss(p.data(), pool, loss);
    if (!std::isfinite(result.initial_loss)) throw NonFiniteLoss("initial training loss is not finite");
    result.loss_curve.push_back(result.initial_loss);
    std::vector<double> best = p;
    double best_loss = result.initial_loss;

    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batches_per_epoch = (pool.size() + tp.batch_size - 1) / tp.batch_size;
    const double total_steps = static_cast<double>(batches_per_epoch) * std::max(1, tp.epochs);
    long step = 0;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    for (int epoch = 0; epoch < tp.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += tp.batch_size) {
            const std::size_t stop = std::min(order.size(), start + tp.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_sum = 0;
            Activations a;
            for (std::size_t b = start; b < stop; ++b) {
                const PoolEntry& e = pool[order[b]];
                forward_normalised(p.data(), e.x, a);
                const double wm = a.w_reset * a.w_fusion;
                const double diff = e.d_motion - e.d_stereo;
                const double fused = e.d_stereo + wm * diff;
                const PixelLoss pl =
                    pixel_loss(fused, e.d_gt, a.w_reset, a.w_fusion, e.e_motion, std::abs(e.d_stereo - e.d_gt), loss);
                batch_sum += pl.total;
                const double g_reset = (pl.d_fused * diff * a.w_fusion + pl.d_reset) * a.w_reset * (1 - a.w_reset);
                const double g_fusion = (pl.d_fused * diff * a.w_reset + pl.d_fusion) * a.w_fusion * (1 - a.w_fusion);
                double g_hidden[Model::kHidden];
                for (int j = 0; j < Model::kHidden; ++j) {
                    g_hidden[j] = a.hidden[j] > 0 ? g_reset * p[Model::kResetHeadOffset + N + j] +
                                                        g_fusion * p[Model::kFusionHeadOffset + N + j]
                                                  : 0.0;
                }
                for (int i = 0; i < N; ++i) {
                    grad[Model::kResetHeadOffset + i] += g_reset * e.x[i];
                    grad[Model::kFusionHeadOffset + i] += g_fusion * e.x[i];
                }
                for (int j = 0; j < Model::kHidden; ++j) {
                    grad[Model::kResetHeadOffset + N + j] += g_reset * a.hidden[j];
                    grad[Model::kFusionHeadOffset + N + j] += g_fusion * a.hidden[j];
                    if (g_hidden[j] == 0) continue;
                    double* row = grad.data() + Model::kTrunkOffset + static_cast<std::size_t>(j) * N;
                    for (int i = 0; i < N; ++i) row[i] += g_hidden[j] * e.x[i];
                    grad[Model::kTrunkBiasOffset + j] += g_hidden[j];
                }
                grad[Model::kResetHeadOffset + Model::kHeadInputs] += g_reset;
                grad[Model::kFusionHeadOffset + Model::kHeadInputs] += g_fusion;
            }
            const double n = static_cast<double>(stop - start);
            if (!std::isfinite(batch_sum))
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                    std::to_string(start));
            epoch_sum += batch_sum;
            ++step;
            const double lr = tp.learning_rate * (1.0 - 0.9 * static_cast<double>(step - 1) / total_steps);
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            for (std::size_t k = first; k < last; ++k) {
                const double g = grad[k] / n;
                m1[k] = b1 * m1[k] + (1 - b1) * g;
                m2[k] = b2 * m2[k] + (1 - b2) * g * g;
                p[k] -= lr * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + eps);
            }
        }
        result.epoch_means.push_back(epoch_sum / static_cast<double>(pool.size()));
        // Evaluate with float-rounded parameters, i.e. exactly what gets saved.
        std::vector<double> rounded(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) rounded[k] = static_cast<float>(p[k]);
        const double epoch_loss = full_loss(rounded.data(), pool, loss);
        if (!std::isfinite(epoch_loss)) throw NonFiniteLoss("non-finite loss after epoch " + std::to_string(epoch));
        result.loss_curve.push_back(epoch_loss);
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best = rounded;
        }
    }
    for (std::size_t k = 0; k < best.size(); ++k) params[k] = static_cast<float>(best[k]);
    result.final_loss = best_loss;
    return result;
}

}  // namespace tempofuse
