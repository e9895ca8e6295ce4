#include "tempofuse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tempofuse/image_io.hpp"

namespace tempofuse {
namespace fs = std::filesystem;

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

const std::vector<FusionMethod> kAllMethods = {FusionMethod::PerFrame, FusionMethod::Kalman, FusionMethod::Learned,
                                               FusionMethod::EmpiricalBest, FusionMethod::MotionOnly};

bool has_method(const ExperimentConfig& cfg, FusionMethod m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

std::string frame_name(const std::string& stem, int frame, const std::string& ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem.c_str(), frame, ext.c_str());
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

// Fill rejected pixels from the nearest valid pixel on the same row,
// preferring the smaller (farther) disparity of the two sides.
void fill_invalid(Map& disparity, Mask& valid) {
    const int h = disparity.height(), w = disparity.width();
    double fallback = std::numeric_limits<double>::infinity();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (valid(r, c)) fallback = std::min(fallback, disparity(r, c));
    if (!std::isfinite(fallback)) fallback = 1.0;
    for (int r = 0; r < h; ++r) {
        std::vector<double> left(static_cast<std::size_t>(w), -1), right(static_cast<std::size_t>(w), -1);
        double last = -1;
        for (int c = 0; c < w; ++c) {
            if (valid(r, c)) last = disparity(r, c);
            left[static_cast<std::size_t>(c)] = last;
        }
        last = -1;
        for (int c = w - 1; c >= 0; --c) {
            if (valid(r, c)) last = disparity(r, c);
            right[static_cast<std::size_t>(c)] = last;
        }
        for (int c = 0; c < w; ++c) {
            if (valid(r, c)) continue;
            const double a = left[static_cast<std::size_t>(c)], b = right[static_cast<std::size_t>(c)];
            double v = fallback;
            if (a > 0 && b > 0) v = std::min(a, b);
            else if (a > 0) v = a;
            else if (b > 0) v = b;
            disparity(r, c) = v;
        }
    }
    valid.fill(1);
}

MemoryState stereo_state(const StereoResult& s) {
    MemoryState st(s.disparity.height(), s.disparity.width(), kFeatureChannels);
    st.disparity = s.disparity;
    st.features = s.left_features;
    for (int r = 0; r < st.height(); ++r)
        for (int c = 0; c < st.width(); ++c) st.valid(r, c) = s.valid(r, c) && s.disparity(r, c) > 0 ? 1 : 0;
    return st;
}

MemoryState output_state(const Map& disparity, const StereoResult& s) {
    MemoryState st = stereo_state(s);
    st.disparity = disparity;
    for (int r = 0; r < st.height(); ++r)
        for (int c = 0; c < st.width(); ++c)
            st.valid(r, c) = std::isfinite(disparity(r, c)) && disparity(r, c) > 0 ? 1 : 0;
    return st;
}

Map measurement_variance(const StereoResult& s, const KalmanCalibration& cal) {
    const Map conf = disparity_confidence(s.left_features, s.right_features, s.disparity);
    Map out(conf.height(), conf.width());
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) out(r, c) = cal.variance(conf(r, c, 1));
    return out;
}

// Shared per-frame products of the online loop (independent of fusion method).
struct FrameContext {
    SceneSample sample;
    StereoResult stereo;
    MotionFrame motion_frame;
};

FrameContext make_context(SceneSample sample, const ExperimentConfig& cfg, std::uint64_t scene_seed) {
    FrameContext ctx;
    ctx.stereo = run_stereo(sample, cfg, scene_seed);
    ctx.motion_frame = MotionFrame::make(sample.left, ctx.stereo.disparity, ctx.stereo.valid, sample.labels);
    ctx.sample = std::move(sample);
    return ctx;
}

struct LearnedStep {
    Map fused;
    WeightMaps weights;
    CueStack cues;
    Map d_motion;
};

LearnedStep learned_step(const MemoryState& prev, const MotionEstimate& est, const StereoResult& stereo,
                         const LogisticWeightModel& model, const CameraRig& rig) {
    LearnedStep out;
    const MemoryState aligned = align_previous(prev, est, rig);
    out.cues = build_cues(aligned, stereo);
    out.weights = predict_weights(model, out.cues);
    out.d_motion = fill_motion_disparity(aligned, stereo.disparity);
    out.fused = fuse(stereo.disparity, out.d_motion, out.weights);
    return out;
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(worker_count()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < workers; ++k)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::string to_string(FusionMethod m) {
    switch (m) {
        case FusionMethod::PerFrame: return "per_frame";
        case FusionMethod::Kalman: return "kalman";
        case FusionMethod::Learned: return "learned";
        case FusionMethod::EmpiricalBest: return "empirical_best";
        case FusionMethod::MotionOnly: return "motion_only";
    }
    return "?";
}

std::string to_string(StereoSource s) { return s == StereoSource::BlockMatch ? "block_match" : "noisy_oracle"; }

std::string to_string(MotionMode m) {
    switch (m) {
        case MotionMode::Oracle: return "oracle";
        case MotionMode::GlobalRigid: return "global_rigid";
        case MotionMode::PerObjectRigid: return "per_object_rigid";
    }
    return "?";
}

FusionMethod parse_fusion_method(const std::string& name) {
    for (FusionMethod m : kAllMethods)
        if (to_string(m) == name) return m;
    throw ConfigError("unknown fusion method '" + name + "'");
}

StereoSource parse_stereo_source(const std::string& name) {
    if (name == "block_match") return StereoSource::BlockMatch;
    if (name == "noisy_oracle") return StereoSource::NoisyOracle;
    throw ConfigError("unknown stereo source '" + name + "'");
}

MotionMode parse_motion_mode(const std::string& name) {
    for (MotionMode m : {MotionMode::Oracle, MotionMode::GlobalRigid, MotionMode::PerObjectRigid})
        if (to_string(m) == name) return m;
    throw ConfigError("unknown motion mode '" + name + "'");
}

void ExperimentConfig::validate() const {
    rig.validate();
    if (scene.num_frames < 2) throw InvalidConfig("scene.num_frames must be >= 2");
    if (scene.min_objects < 0 || scene.max_objects < scene.min_objects)
        throw InvalidConfig("scene.min_objects/max_objects out of order");
    if (num_sequences < 1) throw InvalidConfig("suite.num_sequences must be >= 1");
    if (num_train_sequences < 1) throw InvalidConfig("train.num_sequences must be >= 1");
    if (train_frames < 2) throw InvalidConfig("train.frames must be >= 2");
    if (train_sequence_length < 2 || train_sequence_length > train_frames)
        throw InvalidConfig("train.sequence_length must be in [2, train.frames]");
    noise.validate();
    if (stereo.max_disparity < 2 || stereo.max_disparity > 210)
        throw InvalidConfig("stereo.max_disparity must be in [2, 210]");
    if (motion.iterations < 1 || motion.iterations > 16) throw InvalidConfig("motion.K must be in [1, 16]");
    if (motion.match.search_radius < 1 || motion.match.stride < 1 || motion.match.patch_radius < 0)
        throw InvalidConfig("motion matching parameters must be positive");
    if (methods.empty()) throw InvalidConfig("fusion.methods must list at least one method");
    if (!(process_noise >= 0)) throw InvalidConfig("fusion.process_noise must be >= 0");
    loss.validate();
    if (train.epochs < 0 || train.batch_size < 1 || train.pixel_stride < 1 || !(train.learning_rate > 0))
        throw InvalidConfig("train hyper-parameters out of range");
}

std::vector<std::uint64_t> ExperimentConfig::test_seeds() const {
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = seed * 1000; out.size() < static_cast<std::size_t>(num_sequences); ++s)
        if (s % 5 == 0) out.push_back(s);
    return out;
}

std::vector<std::uint64_t> ExperimentConfig::train_seeds() const {
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = seed * 1000; out.size() < static_cast<std::size_t>(num_train_sequences); ++s)
        if (s % 5 != 0) out.push_back(s);
    return out;
}

ExperimentConfig experiment_config_from(KeyValueConfig kv) {
    ExperimentConfig c;
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    c.output_dir = kv.get_string("output.dir", c.output_dir.string());
    const std::string maps = kv.get_string("output.write_maps", "first");
    if (maps == "none") c.write_maps = MapOutput::None;
    else if (maps == "first") c.write_maps = MapOutput::First;
    else if (maps == "all") c.write_maps = MapOutput::All;
    else throw ConfigError("output.write_maps must be none, first or all");

    c.rig.width = static_cast<int>(kv.get_int("camera.width", c.rig.width));
    c.rig.height = static_cast<int>(kv.get_int("camera.height", c.rig.height));
    c.rig.fx = kv.get_double("camera.fx", c.rig.fx);
    c.rig.fy = kv.get_double("camera.fy", c.rig.fy);
    c.rig.cx = kv.get_double("camera.cx", (c.rig.width - 1) / 2.0);
    c.rig.cy = kv.get_double("camera.cy", (c.rig.height - 1) / 2.0);
    c.rig.baseline = kv.get_double("camera.baseline", c.rig.baseline);

    c.scene.num_frames = static_cast<int>(kv.get_int("scene.num_frames", c.scene.num_frames));
    c.scene.min_objects = static_cast<int>(kv.get_int("scene.min_objects", c.scene.min_objects));
    c.scene.max_objects = static_cast<int>(kv.get_int("scene.max_objects", c.scene.max_objects));
    c.scene.max_speed_px = kv.get_double("scene.max_speed_px", c.scene.max_speed_px);
    c.scene.max_camera_speed = kv.get_double("scene.max_camera_speed", c.scene.max_camera_speed);
    c.scene.max_angular_speed = kv.get_double("scene.max_angular_speed", c.scene.max_angular_speed);
    c.scene.allow_spheres = kv.get_bool("scene.spheres", c.scene.allow_spheres);
    c.num_sequences = static_cast<int>(kv.get_int("suite.num_sequences", c.num_sequences));

    c.noise.jitter_sigma = kv.get_double("noise.jitter_sigma", c.noise.jitter_sigma);
    c.noise.outlier_rate = kv.get_double("noise.outlier_rate", c.noise.outlier_rate);
    c.noise.outlier_magnitude = kv.get_double("noise.outlier_magnitude", c.noise.outlier_magnitude);
    c.noise.edge_bias = kv.get_double("noise.edge_bias", c.noise.edge_bias);
    c.noise.seed = static_cast<std::uint64_t>(kv.get_int("noise.seed", 0));

    c.stereo_source = parse_stereo_source(kv.get_string("stereo.source", to_string(c.stereo_source)));
    c.stereo.max_disparity = static_cast<int>(kv.get_int("stereo.max_disparity", c.stereo.max_disparity));
    c.stereo.sad_weight = kv.get_double("stereo.sad_weight", c.stereo.sad_weight);
    c.stereo.lr_threshold = kv.get_double("stereo.lr_threshold", c.stereo.lr_threshold);

    c.motion_mode = parse_motion_mode(kv.get_string("motion.mode", to_string(c.motion_mode)));
    c.motion.iterations = static_cast<int>(kv.get_int("motion.K", c.motion.iterations));
    c.motion.match.search_radius = static_cast<int>(kv.get_int("motion.search_radius", c.motion.match.search_radius));
    c.motion.match.stride = static_cast<int>(kv.get_int("motion.stride", c.motion.match.stride));
    c.motion.match.patch_radius = static_cast<int>(kv.get_int("motion.patch_radius", c.motion.match.patch_radius));
    c.motion.robust_rounds = static_cast<int>(kv.get_int("motion.robust_rounds", c.motion.robust_rounds));

    std::vector<std::string> defaults;
    for (FusionMethod m : c.methods) defaults.push_back(to_string(m));
    c.methods.clear();
    for (const auto& name : kv.get_list("fusion.methods", defaults)) {
        const FusionMethod m = parse_fusion_method(name);
        if (!has_method(c, m)) c.methods.push_back(m);
    }
    c.process_noise = kv.get_double("fusion.process_noise", c.process_noise);
    c.model_path = kv.get_string("fusion.model", "");

    c.loss.tau_reset = kv.get_double("loss.tau_reset", c.loss.tau_reset);
    c.loss.tau_fusion = kv.get_double("loss.tau_fusion", c.loss.tau_fusion);
    c.loss.alpha_reg = kv.get_double("loss.alpha_reg", c.loss.alpha_reg);
    c.loss.alpha_disp = kv.get_double("loss.alpha_disp", c.loss.alpha_disp);
    c.loss.alpha_fusion = kv.get_double("loss.alpha_fusion", c.loss.alpha_fusion);
    c.loss.alpha_reset = kv.get_double("loss.alpha_reset", c.loss.alpha_reset);
    c.loss.huber_delta = kv.get_double("loss.huber_delta", c.loss.huber_delta);

    c.num_train_sequences = static_cast<int>(kv.get_int("train.num_sequences", c.num_train_sequences));
    c.train_frames = static_cast<int>(kv.get_int("train.frames", c.train_frames));
    c.train_sequence_length = static_cast<int>(kv.get_int("train.sequence_length", c.train_sequence_length));
    c.train.epochs = static_cast<int>(kv.get_int("train.epochs", c.train.epochs));
    c.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.train.batch_size));
    c.train.learning_rate = kv.get_double("train.learning_rate", c.train.learning_rate);
    c.train.pixel_stride = static_cast<int>(kv.get_int("train.pixel_stride", c.train.pixel_stride));
    c.train.init_scale = kv.get_double("train.init_scale", c.train.init_scale);
    c.train.seed = mix_seed(c.seed, 0x7ea1);

    kv.reject_unused();
    c.echo = kv.echo();
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    return experiment_config_from(KeyValueConfig::load(path));
}

SceneSample SequentialFrameSource::next_frame(int frame) {
    if (frame != next_)
        throw CausalityViolation("frame " + std::to_string(frame) + " requested out of order; next is " +
                                 std::to_string(next_));
    ++next_;
    return scene_.render(frame);
}

StereoResult run_stereo(const SceneSample& sample, const ExperimentConfig& cfg, std::uint64_t scene_seed) {
    StereoResult res;
    if (cfg.stereo_source == StereoSource::BlockMatch) {
        res = block_match(sample.left, sample.right, cfg.stereo);
        fill_invalid(res.disparity, res.valid);
        return res;
    }
    NoiseModel noise = cfg.noise;
    noise.seed = mix_seed(mix_seed(cfg.noise.seed, scene_seed), static_cast<std::uint64_t>(sample.frame));
    res.disparity = perturb_disparity(sample.gt_disparity, sample.labels, noise);
    res.valid = sample.valid;
    const double hi = cfg.stereo.max_disparity;
    for (std::size_t i = 0; i < res.disparity.size(); ++i)
        res.disparity.data()[i] = std::clamp(res.disparity.data()[i], kMinValidDisparity, hi);
    res.left_features = extract_features(sample.left);
    res.right_features = extract_features(sample.right);
    fill_invalid(res.disparity, res.valid);
    return res;
}

SequenceResult run_sequence(const Scene& scene, std::uint64_t scene_seed, const ExperimentConfig& cfg,
                            const FusionModels& models, const fs::path& map_dir) {
    const CameraRig& rig = scene.rig();
    SequentialFrameSource frames(scene);
    SequenceResult result;
    result.seed = scene_seed;

    const bool write = !map_dir.empty();
    if (write) {
        fs::create_directories(map_dir / "gt");
        for (FusionMethod m : cfg.methods) fs::create_directories(map_dir / to_string(m));
    }

    std::map<FusionMethod, MemoryState> states;
    std::map<FusionMethod, KalmanState> kalman;
    std::map<FusionMethod, Map> prev_output;
    std::map<FusionMethod, std::vector<MetricReport>> frame_reports;
    std::vector<MetricReport> motion_frames;
    MemoryState prev_stereo_state;
    FrameContext prev;

    for (int t = 0; t < frames.num_frames(); ++t) {
        FrameContext ctx = make_context(frames.next_frame(t), cfg, scene_seed);
        const StereoResult& stereo = ctx.stereo;
        const SceneSample& sample = ctx.sample;
        const MemoryState base = stereo_state(stereo);

        std::map<FusionMethod, Map> output;
        std::optional<MotionEstimate> est;
        if (t > 0) est = estimate_field(prev.motion_frame, ctx.motion_frame, cfg.motion_mode, rig, cfg.motion, &sample);

        for (FusionMethod m : cfg.methods) {
            if (t == 0) {
                output[m] = stereo.disparity;
                if (m == FusionMethod::Kalman)
                    kalman[m] = {stereo.disparity, measurement_variance(stereo, models.kalman)};
                continue;
            }
            switch (m) {
                case FusionMethod::PerFrame:
                    output[m] = stereo.disparity;
                    break;
                case FusionMethod::MotionOnly: {
                    const MemoryState aligned = align_previous(prev_stereo_state, *est, rig);
                    output[m] = fill_motion_disparity(aligned, stereo.disparity);
                    break;
                }
                case FusionMethod::EmpiricalBest: {
                    const MemoryState aligned = align_previous(states[m], *est, rig);
                    output[m] = empirical_best(stereo.disparity, fill_motion_disparity(aligned, stereo.disparity),
                                               sample.gt_disparity);
                    break;
                }
                case FusionMethod::Kalman: {
                    MemoryState carrier(rig.height, rig.width, 1);
                    carrier.disparity = kalman[m].mean;
                    carrier.features = kalman[m].variance;
                    carrier.valid = states[m].valid;
                    const MemoryState aligned = align_previous(carrier, *est, rig);
                    KalmanState prior{aligned.disparity, aligned.features};
                    for (std::size_t i = 0; i < prior.variance.size(); ++i)
                        if (!aligned.visibility.data()[i]) prior.variance.data()[i] = 1.0;
                    const KalmanUpdate upd = kalman_update(prior, aligned.visibility, stereo.disparity,
                                                           measurement_variance(stereo, models.kalman),
                                                           cfg.process_noise);
                    kalman[m] = upd.state;
                    output[m] = upd.state.mean;
                    break;
                }
                case FusionMethod::Learned: {
                    LearnedStep step = learned_step(states[m], *est, stereo, models.weights, rig);
                    output[m] = std::move(step.fused);
                    if (write) {
                        write_pfm(map_dir / "learned" / frame_name("w_reset", t, "pfm"), step.weights.reset);
                        write_pfm(map_dir / "learned" / frame_name("w_fusion", t, "pfm"), step.weights.fusion);
                    }
                    break;
                }
            }
        }

        // Metrics.
        const Mask valid_curr = validity_mask(sample.gt_disparity);
        Mask valid_prev;
        MetricReport motion_frame;
        if (t > 0) {
            valid_prev = validity_mask(prev.sample.gt_disparity, sample.gt_scene_flow_px);
            motion_frame.set_optical_flow(fepe(est->flow, sample.gt_flow, valid_prev, FlowKind::Optical));
            Map pred_sf(rig.height, rig.width, 3), depth(rig.height, rig.width);
            for (int r = 0; r < rig.height; ++r)
                for (int c = 0; c < rig.width; ++c) {
                    const double d = prev.stereo.disparity(r, c);
                    depth(r, c) = rig.focal_baseline() / prev.sample.gt_disparity(r, c);
                    if (!(d > 0)) continue;
                    const Eigen::Vector3d p = lift(c, r, d, rig);
                    const Eigen::Vector3d q = est->field(r, c) * p;
                    for (int k = 0; k < 3; ++k) pred_sf(r, c, k) = q[k] - p[k];
                }
            motion_frame.set_scene_flow(fepe(pred_sf, sample.gt_scene_flow_m, valid_prev, FlowKind::Scene),
                                        fepe_scene_px(pred_sf, sample.gt_scene_flow_m, depth, rig.fx, valid_prev));
            motion_frames.push_back(motion_frame);
        }
        for (FusionMethod m : cfg.methods) {
            MetricReport rep;
            rep.set_disparity(epe(output[m], sample.gt_disparity, valid_curr));
            if (t > 0) {
                const auto pairs = trace(sample.gt_flow, prev_output[m], output[m], prev.sample.gt_disparity,
                                         sample.gt_disparity, valid_prev, valid_curr);
                if (!pairs.empty()) rep.set_temporal(tepe(pairs));
                rep.fepe_of = motion_frame.fepe_of;
                rep.fepe_of_1px = motion_frame.fepe_of_1px;
                rep.fepe_sf = motion_frame.fepe_sf;
                rep.fepe_sf_1px = motion_frame.fepe_sf_1px;
                rep.fepe_sf_px = motion_frame.fepe_sf_px;
                rep.fepe_sf_px_1px = motion_frame.fepe_sf_px_1px;
                rep.flow_count = motion_frame.flow_count;
            }
            frame_reports[m].push_back(rep);
            if (write) write_pfm(map_dir / to_string(m) / frame_name("disp", t, "pfm"), output[m]);
        }
        if (write) {
            write_pfm(map_dir / "gt" / frame_name("disp", t, "pfm"), sample.gt_disparity);
            if (t > 0) write_pfm(map_dir / "gt" / frame_name("flow", t, "pfm"), sample.gt_scene_flow_px);
            write_pgm(map_dir / "gt" / frame_name("left", t, "pgm"), sample.left);
            write_pgm(map_dir / "gt" / frame_name("right", t, "pgm"), sample.right);
        }

        for (FusionMethod m : cfg.methods) states[m] = output_state(output[m], stereo);
        prev_output = std::move(output);
        prev_stereo_state = base;
        prev = std::move(ctx);
    }

    for (FusionMethod m : cfg.methods) {
        MetricReport agg = aggregate(frame_reports[m]);
        result.reports[m] = std::move(agg);
    }
    if (!motion_frames.empty()) result.motion_report = aggregate(motion_frames);
    return result;
}

TrainingOutcome train_models(const ExperimentConfig& cfg, bool force) {
    TrainingOutcome out;
    const auto seeds = cfg.train_seeds();
    const bool need_model = (force || has_method(cfg, FusionMethod::Learned)) && cfg.model_path.empty();

    struct TrainSequence {
        std::vector<FrameContext> frames;
        std::vector<MotionEstimate> motion;  // motion[t] : t-1 -> t (index 0 unused)
    };
    std::vector<TrainSequence> sequences(seeds.size());
    std::vector<std::vector<double>> conf(seeds.size()), sq_err(seeds.size());

    parallel_for(seeds.size(), [&](std::size_t i) {
        RandomSceneParams params = cfg.scene;
        params.num_frames = cfg.train_frames;
        const Scene scene(random_scene_config(cfg.rig, params, seeds[i]));
        SequentialFrameSource source(scene);
        TrainSequence& seq = sequences[i];
        for (int t = 0; t < scene.num_frames(); ++t) {
            seq.frames.push_back(make_context(source.next_frame(t), cfg, seeds[i]));
            const FrameContext& ctx = seq.frames.back();
            const Map c = disparity_confidence(ctx.stereo.left_features, ctx.stereo.right_features,
                                               ctx.stereo.disparity);
            const Mask valid = validity_mask(ctx.sample.gt_disparity);
            for (int r = 0; r < c.height(); r += 2)
                for (int col = 0; col < c.width(); col += 2) {
                    if (!valid(r, col)) continue;
                    const double e = ctx.stereo.disparity(r, col) - ctx.sample.gt_disparity(r, col);
                    conf[i].push_back(c(r, col, 1));
                    sq_err[i].push_back(e * e);
                }
            if (t == 0 || !need_model) {
                seq.motion.emplace_back();
                continue;
            }
            seq.motion.push_back(estimate_field(seq.frames[static_cast<std::size_t>(t) - 1].motion_frame,
                                                ctx.motion_frame, cfg.motion_mode, cfg.rig, cfg.motion, &ctx.sample));
        }
        if (!need_model) seq.frames.clear();
    });

    std::vector<double> all_conf, all_err;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        all_conf.insert(all_conf.end(), conf[i].begin(), conf[i].end());
        all_err.insert(all_err.end(), sq_err[i].begin(), sq_err[i].end());
    }
    out.models.kalman = KalmanCalibration::fit(all_conf, all_err);

    if (!cfg.model_path.empty()) {
        out.models.weights = LogisticWeightModel::load(cfg.model_path);
        return out;
    }
    if (!need_model) return out;

    // Curriculum over window lengths: a window of length L starts from the
    // stereo state and is propagated with the model trained on shorter
    // windows; only its last frame becomes a training sample.
    std::vector<TrainingSample> samples;
    LogisticWeightModel current;
    for (int length = 2; length <= cfg.train_sequence_length; ++length) {
        std::vector<std::vector<TrainingSample>> per_seq(sequences.size());
        parallel_for(sequences.size(), [&](std::size_t i) {
            const TrainSequence& seq = sequences[i];
            const int n = static_cast<int>(seq.frames.size());
            for (int start = 0; start + length - 1 < n; ++start) {
                MemoryState state = stereo_state(seq.frames[static_cast<std::size_t>(start)].stereo);
                for (int t = start + 1; t < start + length; ++t) {
                    const FrameContext& ctx = seq.frames[static_cast<std::size_t>(t)];
                    const MotionEstimate& est = seq.motion[static_cast<std::size_t>(t)];
                    if (t < start + length - 1) {
                        LearnedStep step = learned_step(state, est, ctx.stereo, current, cfg.rig);
                        state = output_state(step.fused, ctx.stereo);
                        continue;
                    }
                    const MemoryState aligned = align_previous(state, est, cfg.rig);
                    TrainingSample s;
                    s.cues = build_cues(aligned, ctx.stereo);
                    s.d_stereo = ctx.stereo.disparity;
                    s.d_motion = fill_motion_disparity(aligned, ctx.stereo.disparity);
                    s.d_gt = ctx.sample.gt_disparity;
                    s.mask = validity_mask(ctx.sample.gt_disparity);
                    s.motion_visible = aligned.visibility;
                    per_seq[i].push_back(std::move(s));
                }
            }
        });
        for (auto& v : per_seq)
            for (auto& s : v) samples.push_back(std::move(s));
        out.train = train_weight_model(samples, cfg.loss, cfg.train);
        current = out.train.model;
    }
    out.models.weights = current;
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentResult result;
    TrainingOutcome trained = train_models(cfg);
    if (has_method(cfg, FusionMethod::Learned) && cfg.model_path.empty()) result.training = trained.train;

    const auto seeds = cfg.test_seeds();
    result.sequences.resize(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) {
        const Scene scene(random_scene_config(cfg.rig, cfg.scene, seeds[i]));
        fs::path map_dir;
        const bool maps = cfg.write_maps == MapOutput::All || (cfg.write_maps == MapOutput::First && i == 0);
        if (maps && !cfg.output_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "seq_%04llu", static_cast<unsigned long long>(seeds[i]));
            map_dir = cfg.output_dir / "maps" / name;
        }
        result.sequences[i] = run_sequence(scene, seeds[i], cfg, trained.models, map_dir);
    });
    for (FusionMethod m : cfg.methods) {
        std::vector<MetricReport> per_seq;
        for (const auto& s : result.sequences) per_seq.push_back(s.reports.at(m));
        result.overall[m] = aggregate(per_seq);
    }
    return result;
}

namespace {

std::vector<FusionMethod> sorted_methods(const ExperimentResult& result, const ExperimentConfig& cfg) {
    std::vector<FusionMethod> rows = cfg.methods;
    std::stable_sort(rows.begin(), rows.end(), [&](FusionMethod a, FusionMethod b) {
        return result.overall.at(a).tepe < result.overall.at(b).tepe;
    });
    return rows;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

}  // namespace

std::string comparison_markdown(const ExperimentResult& result, const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "| method | TEPE | d3px_t | TEPE_r | d100%_t | EPE | d3px | FEPE_of | FEPE_sf (m) | FEPE_sf (px) |\n";
    os << "|---|---|---|---|---|---|---|---|---|---|\n";
    for (FusionMethod m : sorted_methods(result, cfg)) {
        const MetricReport& r = result.overall.at(m);
        os << "| " << to_string(m) << " | " << fmt(r.tepe) << " | " << fmt(r.tepe_3px) << " | " << fmt(r.tepe_r, 3)
           << " | " << fmt(r.tepe_r_100pct) << " | " << fmt(r.epe) << " | " << fmt(r.d3px) << " | "
           << fmt(r.fepe_of) << " | " << fmt(r.fepe_sf) << " | " << fmt(r.fepe_sf_px) << " |\n";
    }
    return os.str();
}

std::string comparison_csv(const ExperimentResult& result, const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << report_csv_header() << '\n';
    for (FusionMethod m : sorted_methods(result, cfg)) os << report_csv_row(to_string(m), "all", result.overall.at(m)) << '\n';
    return os.str();
}

ExperimentResult run_and_write(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config_echo.txt", cfg.echo);
    ExperimentResult result = run_experiment(cfg);

    nlohmann::ordered_json j;
    j["test_seeds"] = cfg.test_seeds();
    j["train_seeds"] = cfg.train_seeds();
    auto methods = nlohmann::ordered_json::object();
    for (FusionMethod m : cfg.methods) {
        nlohmann::ordered_json mj;
        mj["overall"] = nlohmann::ordered_json::parse(report_to_json(result.overall.at(m), false));
        auto seqs = nlohmann::ordered_json::object();
        for (const auto& s : result.sequences)
            seqs[std::to_string(s.seed)] = nlohmann::ordered_json::parse(report_to_json(s.reports.at(m), true));
        mj["sequences"] = seqs;
        methods[to_string(m)] = mj;
    }
    j["methods"] = methods;
    write_text(cfg.output_dir / "metrics.json", j.dump(2) + "\n");

    std::ostringstream csv;
    csv << report_csv_header() << '\n';
    for (FusionMethod m : cfg.methods) {
        for (const auto& s : result.sequences)
            csv << report_csv_row(to_string(m), std::to_string(s.seed), s.reports.at(m)) << '\n';
        csv << report_csv_row(to_string(m), "all", result.overall.at(m)) << '\n';
    }
    write_text(cfg.output_dir / "metrics.csv", csv.str());
    write_text(cfg.output_dir / "comparison.md", comparison_markdown(result, cfg));
    write_text(cfg.output_dir / "comparison.csv", comparison_csv(result, cfg));

    if (result.training) {
        std::ostringstream lc;
        lc << std::setprecision(10) << "epoch,full_loss,epoch_mean\n";
        for (std::size_t e = 0; e < result.training->loss_curve.size(); ++e) {
            lc << e << ',' << result.training->loss_curve[e] << ',';
            if (e > 0) lc << result.training->epoch_means[e - 1];
            lc << '\n';
        }
        write_text(cfg.output_dir / "loss_curve.csv", lc.str());
        result.training->model.save(cfg.output_dir / "model.tfw");
    }
    return result;
}

MetricReport evaluate_directories(const fs::path& pred_dir, const fs::path& gt_dir) {
    if (!fs::is_directory(pred_dir)) throw IoError("prediction directory not found: " + pred_dir.string());
    if (!fs::is_directory(gt_dir)) throw IoError("ground-truth directory not found: " + gt_dir.string());
    std::vector<int> frames;
    for (const auto& entry : fs::directory_iterator(pred_dir)) {
        const std::string name = entry.path().filename().string();
        int idx = 0;
        char tail[8] = {};
        if (std::sscanf(name.c_str(), "disp_%d.%4s", &idx, tail) == 2 && std::string(tail) == "pfm") frames.push_back(idx);
    }
    std::sort(frames.begin(), frames.end());
    if (frames.empty()) throw IoError("no disp_NNNN.pfm files in " + pred_dir.string());

    std::vector<MetricReport> reports;
    Map prev_pred, prev_gt;
    int prev_frame = -2;
    for (int f : frames) {
        const Map pred = read_pfm(pred_dir / frame_name("disp", f, "pfm")).channel(0);
        const Map gt = read_pfm(gt_dir / frame_name("disp", f, "pfm")).channel(0);
        require_same_shape(pred, gt, "evaluate_directories");
        const Mask valid_curr = validity_mask(gt);
        MetricReport rep;
        rep.set_disparity(epe(pred, gt, valid_curr));
        const fs::path flow_path = gt_dir / frame_name("flow", f, "pfm");
        if (prev_frame == f - 1 && fs::exists(flow_path)) {
            const Map flow = read_pfm(flow_path);
            const Mask valid_prev = validity_mask(prev_gt, flow);
            const auto pairs = trace(flow, prev_pred, pred, prev_gt, gt, valid_prev, valid_curr);
            if (!pairs.empty()) rep.set_temporal(tepe(pairs));
        }
        reports.push_back(rep);
        prev_pred = pred;
        prev_gt = gt;
        prev_frame = f;
    }
    return aggregate(reports);
}

int worker_count() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("TEMPOFUSE_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return n;
}

}  // namespace tempofuse
