// Acceptance suite: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "tempofuse/harness.hpp"
#include "tempofuse/losses.hpp"
#include "tempofuse/metrics.hpp"
#include "tempofuse/motion.hpp"
#include "test_util.hpp"

using namespace tempofuse;
namespace fs = std::filesystem;

namespace {

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int id, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

template <typename... Args>
std::string format(const char* fmt, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), fmt, args...);
    return buf;
}

void geometry_round_trip() {
    const CameraRig rig{120.0, 120.0, 79.5, 59.5, 0.5, 160, 120};
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 159), v(0, 119), d(1, 210);
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    for (int i = 0; i < 100000; ++i) {
        const double uu = u(rng), vv = v(rng), dd = d(rng);
        const Projection p = project(lift(uu, vv, dd, rig), rig);
        worst = std::max({worst, std::abs(p.u - uu), std::abs(p.v - vv), std::abs(p.d - dd)});
    }
    const double dt = seconds_since(t0);
    report(1, "geometry round trip", worst < 1e-9 && dt < 1.0,
           format("1e5 pairs, max error %.2e, %.3f s", worst, dt));
}

void gauss_newton_recovery() {
    const CameraRig rig{120.0, 120.0, 79.5, 59.5, 0.5, 160, 120};
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> s(-1, 1), uu(0, 159), vv(0, 119), zz(3, 8);
    const double max_angle = 10.0 * 3.14159265358979323846 / 180.0;
    double worst_r = 0, worst_t = 0;
    bool all_ok = true;
    const auto t0 = std::chrono::steady_clock::now();
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::Vector3d axis(s(rng), s(rng), s(rng));
        axis.normalize();
        Eigen::Vector3d t(s(rng), s(rng), s(rng));
        const double depth = 5.0;
        t *= 0.1 * depth * std::abs(s(rng)) / std::max(1e-9, t.norm()) * 0.999;
        const SE3 truth = SE3::from_rotation_vector(axis * max_angle * std::abs(s(rng)) * 0.999, t);
        std::vector<Correspondence> cs;
        while (cs.size() < 40) {
            const double u = uu(rng), v = vv(rng), d = rig.focal_baseline() / zz(rng);
            const Eigen::Vector3d q = truth * lift(u, v, d, rig);
            if (q.z() <= 0) continue;
            const Projection p = project(q, rig);
            cs.push_back({u, v, d, p.u, p.v, p.d, 1.0});
        }
        try {
            const RigidSolveResult fit = estimate_rigid_gn(cs, rig, 16);
            const double er = rotation_distance(fit.transform, truth);
            const double et = (fit.transform.translation - truth.translation).norm();
            worst_r = std::max(worst_r, er);
            worst_t = std::max(worst_t, et);
            all_ok &= er < 1e-6 && et < 1e-6;
        } catch (const Error&) {
            all_ok = false;
        }
    }
    const double dt = seconds_since(t0);
    report(2, "Gauss-Newton recovery", all_ok && dt < 5.0,
           format("100 motions, K=16, max rotation error %.2e rad, max translation error %.2e m, %.3f s", worst_r,
                  worst_t, dt));
}

void loss_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    const LossConfig cfg;
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    int examples = 0, matched = 0;
    auto ex = [&](bool ok) {
        ++examples;
        matched += ok;
    };
    ex(huber(2.0, 2.0, 1.0) == 0.0);
    ex(near(huber(1.5, 1.0, 1.0), 0.125));
    ex(near(huber(4.0, 1.0, 1.0), 2.5));
    ex(near(reset_loss(0.3, 10, 2, 5), 0.3));
    ex(near(reset_loss(0.3, 1, 8, 5), 0.7));
    ex(reset_loss(0.3, 4, 2, 5) == 0.0 && reset_loss(0.9, 4, 2, 5) == 0.0);
    ex(near(fusion_loss(0.8, 3, 1, 1, 0.2), 0.8));
    ex(near(fusion_loss(0.8, 1, 3, 1, 0.2), 0.2));
    ex(near(fusion_loss(0.7, 1.5, 1.2, 1, 0.2), 0.04));
    const Map five(1, 1, 1, 5.0);
    ex(total_loss(five, five, Map(1, 1, 1, 0.3), Map(1, 1, 1, 0.5), Map(1, 1, 1, 1.5), Map(1, 1, 1, 1.2), cfg) == 0.0);
    LossConfig zero = cfg;
    zero.alpha_disp = zero.alpha_fusion = zero.alpha_reset = 0;
    ex(total_loss(Map(1, 1, 1, 3.0), five, Map(1, 1, 1, 0.3), Map(1, 1, 1, 0.9), Map(1, 1, 1, 9.0),
                  Map(1, 1, 1, 0.5), zero) == 0.0);
    ex(near(cfg.alpha_disp * huber(1.5, 1.0, 1.0) + cfg.alpha_fusion * fusion_loss(0.7, 1.5, 1.2, 1, 0.2) +
                cfg.alpha_reset * reset_loss(0.3, 10, 2, 5),
            0.465));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> w(0.01, 0.99), e(0, 12), d(0, 40);
    double worst = 0;
    int points = 0;
    const double h = 1e-5;
    while (points < 1000) {
        const double wr = w(rng), wf = w(rng), em = e(rng), es = e(rng), gt = d(rng), pred = d(rng);
        const double gap = 1e-3;
        if (std::abs(std::abs(pred - gt) - cfg.huber_delta) < gap || std::abs(wf - 0.5) < gap) continue;
        bool near_kink = false;
        for (double tau : {cfg.tau_reset, cfg.tau_fusion})
            near_kink |= std::abs(em - es - tau) < gap || std::abs(em - es + tau) < gap;
        if (near_kink) continue;
        const PixelLoss p = pixel_loss(pred, gt, wr, wf, em, es, cfg);
        auto f = [&](double a, double b, double c) { return pixel_loss(a, gt, b, c, em, es, cfg).total; };
        worst = std::max(worst, std::abs(p.d_fused - (f(pred + h, wr, wf) - f(pred - h, wr, wf)) / (2 * h)));
        worst = std::max(worst, std::abs(p.d_reset - (f(pred, wr + h, wf) - f(pred, wr - h, wf)) / (2 * h)));
        worst = std::max(worst, std::abs(p.d_fusion - (f(pred, wr, wf + h) - f(pred, wr, wf - h)) / (2 * h)));
        ++points;
    }
    const double dt = seconds_since(t0);
    report(3, "loss suite", matched == examples && worst < 1e-6 && dt < 1.0,
           format("%d/%d worked examples, max subgradient deviation %.2e at 1000 points, %.3f s", matched, examples,
                  worst, dt));
}

double bilinear(const Map& m, double u, double v) {
    const int u0 = static_cast<int>(std::floor(u)), v0 = static_cast<int>(std::floor(v));
    const double a = u - u0, b = v - v0;
    auto at = [&](int r, int c) { return m(std::min(r, m.height() - 1), std::min(c, m.width() - 1)); };
    return (1 - a) * (1 - b) * at(v0, u0) + a * (1 - b) * at(v0, u0 + 1) + (1 - a) * b * at(v0 + 1, u0) +
           a * b * at(v0 + 1, u0 + 1);
}

void metric_oracles() {
    using testing::random_map;
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    bool counts_ok = true;
    for (int f = 0; f < 20; ++f) {
        const std::uint64_t s = 100 + 10 * f;
        const Map pred = random_map(64, 64, 1, s, 0, 220), gt = random_map(64, 64, 1, s + 1, 0, 220);
        const Map pred_prev = random_map(64, 64, 1, s + 2, 0, 220), gt_prev = random_map(64, 64, 1, s + 3, 0, 220);
        Map flow = random_map(64, 64, 3, s + 4, -6, 6);
        const Map flow_pred = random_map(64, 64, 3, s + 5, -6, 6);
        for (int r = 0; r < 64; r += 7) flow(r, r, 0) = 400;  // extreme flow, excluded

        const Mask vp = validity_mask(gt_prev, flow), vc = validity_mask(gt);
        long naive_vp = 0;
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                const double n = std::sqrt(flow(r, c, 0) * flow(r, c, 0) + flow(r, c, 1) * flow(r, c, 1) +
                                           flow(r, c, 2) * flow(r, c, 2));
                const bool ok = gt_prev(r, c) >= 1 && gt_prev(r, c) <= 210 && n <= 210;
                counts_ok &= ok == static_cast<bool>(vp(r, c));
                naive_vp += ok;
            }

        double se = 0, s3 = 0, sof = 0, sof1 = 0, ssf = 0, ssf1 = 0;
        long n = 0;
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                if (!(gt(r, c) >= 1 && gt(r, c) <= 210)) continue;
                const double e = std::abs(pred(r, c) - gt(r, c));
                se += e;
                s3 += e > 3;
                const double dx = flow_pred(r, c, 0) - flow(r, c, 0), dy = flow_pred(r, c, 1) - flow(r, c, 1),
                             dz = flow_pred(r, c, 2) - flow(r, c, 2);
                const double of = std::sqrt(dx * dx + dy * dy), sf = std::sqrt(dx * dx + dy * dy + dz * dz);
                sof += of;
                sof1 += of > 1;
                ssf += sf;
                ssf1 += sf > 1;
                ++n;
            }
        const DisparityMetrics dm = epe(pred, gt, vc);
        const FlowMetrics fo = fepe(flow_pred, flow, vc, FlowKind::Optical);
        const FlowMetrics fs_ = fepe(flow_pred, flow, vc, FlowKind::Scene);
        for (double diff : {dm.epe - se / n, dm.d3px - s3 / n, fo.fepe - sof / n, fo.d1px - sof1 / n,
                            fs_.fepe - ssf / n, fs_.d1px - ssf1 / n})
            worst = std::max(worst, std::abs(diff));

        double st = 0, st3 = 0, sr = 0, sr1 = 0;
        long np = 0;
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                if (!vp(r, c)) continue;
                const double u = c + flow(r, c, 0), v = r + flow(r, c, 1);
                if (u < 0 || v < 0 || u > 63 || v > 63) continue;
                const int u0 = static_cast<int>(std::floor(u)), v0 = static_cast<int>(std::floor(v));
                bool ok = true;
                for (int dv = 0; dv <= 1; ++dv)
                    for (int du = 0; du <= 1; ++du) {
                        const double wgt = (du ? u - u0 : 1 - (u - u0)) * (dv ? v - v0 : 1 - (v - v0));
                        if (wgt > 0 && !vc(std::min(v0 + dv, 63), std::min(u0 + du, 63))) ok = false;
                    }
                if (!ok) continue;
                const double dd = bilinear(pred, u, v) - pred_prev(r, c);
                const double dg = bilinear(gt, u, v) - gt_prev(r, c);
                const double e = std::abs(dd - dg), rel = e / (std::abs(dg) + 1e-3);
                st += e;
                st3 += e > 3;
                sr += rel;
                sr1 += rel > 1;
                ++np;
            }
        const auto pairs = trace(flow, pred_prev, pred, gt_prev, gt, vp, vc);
        counts_ok &= static_cast<long>(pairs.size()) == np && np > 0 && naive_vp > 0;
        const TemporalMetrics tm = tepe(pairs);
        for (double diff : {tm.tepe - st / np, tm.tepe_3px - st3 / np, tm.tepe_r - sr / np, tm.tepe_r_100pct - sr1 / np})
            worst = std::max(worst, std::abs(diff));
    }
    const double dt = seconds_since(t0);
    report(4, "metric oracle equivalence", worst < 1e-6 && counts_ok && dt < 5.0,
           format("20 frames 64x64, max deviation %.2e, masks and pair counts %s, %.3f s", worst,
                  counts_ok ? "equal" : "DIFFER", dt));
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::ostringstream os;
            os << in.rdbuf();
            files[fs::relative(e.path(), dir).string()] = os.str();
        }
    return files;
}

ExperimentConfig default_suite(const fs::path& source_dir, const fs::path& out_dir) {
    auto kv = KeyValueConfig::load(source_dir / "configs" / "default.toml");
    kv.set("output.dir", out_dir.string());
    return experiment_config_from(std::move(kv));
}

void trend_criteria(const ExperimentConfig& cfg) {
    const fs::path& out_dir = cfg.output_dir;
    const bool suite_ok = cfg.num_sequences == 10 && cfg.scene.num_frames == 30 && cfg.rig.width == 160 &&
                          cfg.rig.height == 120 && cfg.stereo_source == StereoSource::NoisyOracle &&
                          cfg.noise.jitter_sigma == 0.5 && cfg.noise.outlier_rate == 0.01 &&
                          cfg.noise.outlier_magnitude == 8.0 && cfg.motion_mode == MotionMode::PerObjectRigid;
    fs::remove_all(out_dir);

    auto t0 = std::chrono::steady_clock::now();
    const ExperimentResult res = run_and_write(cfg);
    const double dt = seconds_since(t0);
    auto m = [&](FusionMethod f) { return res.overall.at(f); };
    const MetricReport pf = m(FusionMethod::PerFrame), kf = m(FusionMethod::Kalman), lf = m(FusionMethod::Learned),
                       eb = m(FusionMethod::EmpiricalBest), mo = m(FusionMethod::MotionOnly);
    report(5, "fusion trend on the default suite",
           suite_ok && kf.tepe <= 0.9 * pf.tepe && lf.tepe <= kf.tepe && lf.epe <= pf.epe && dt < 300.0,
           format("TEPE per_frame %.4f, kalman %.4f (ratio %.3f), learned %.4f; EPE per_frame %.4f, learned %.4f; "
                  "%.1f s single-threaded",
                  pf.tepe, kf.tepe, kf.tepe / pf.tepe, lf.tepe, pf.epe, lf.epe, dt));
    report(6, "empirical-best dominance",
           eb.tepe <= std::min(pf.tepe, mo.tepe) && eb.epe <= std::min(pf.epe, mo.epe),
           format("TEPE %.4f vs per_frame %.4f, motion_only %.4f; EPE %.4f vs %.4f, %.4f", eb.tepe, pf.tepe, mo.tepe,
                  eb.epe, pf.epe, mo.epe));

    if (res.training) {
        const auto& means = res.training->epoch_means;
        double worst_rise = 0;
        for (std::size_t i = 1; i < means.size(); ++i)
            worst_rise = std::max(worst_rise, (means[i] - means[i - 1]) / means[i - 1]);
        std::printf("       training: loss %.4f -> %.4f, largest epoch-mean rise %.2f%%\n", res.training->initial_loss,
                    res.training->final_loss, 100.0 * worst_rise);
    }

}

void determinism(const ExperimentConfig& cfg) {
    const fs::path& out_dir = cfg.output_dir;
    const auto first = snapshot(out_dir);
    run_and_write(cfg);
    const auto second = snapshot(out_dir);
    std::size_t bytes = 0;
    for (const auto& [name, content] : first) bytes += content.size();
    report(8, "determinism", first == second && !first.empty(),
           format("%zu files, %zu bytes, %s across two runs", first.size(), bytes,
                  first == second ? "byte-identical" : "DIFFERENT"));
}

void oracle_consistency(const ExperimentConfig& cfg) {
    const CameraRig& rig = cfg.rig;
    RandomSceneParams params;
    params.num_frames = 10;
    std::vector<TracedPair> aligned_pairs, noisy_pairs, gaussian_pairs;
    for (std::uint64_t seed : {5ull, 10ull, 15ull}) {
        const Scene scene(random_scene_config(rig, params, seed));
        SceneSample prev = scene.render(0);
        NoiseModel noise{cfg.noise.jitter_sigma, 0.0, 0.0, 0.0, seed};
        Map prev_gauss = perturb_disparity(prev.gt_disparity, prev.labels, noise);
        Map prev_noisy = run_stereo(prev, cfg, seed).disparity;
        for (int t = 1; t < scene.num_frames(); ++t) {
            const SceneSample curr = scene.render(t);
            MemoryState state(rig.height, rig.width, 0);
            state.disparity = prev.gt_disparity;
            state.valid = prev.valid;
            const MotionEstimate est =
                estimate_field(MotionFrame::make(prev.left, prev.gt_disparity, prev.valid, prev.labels),
                               MotionFrame::make(curr.left, curr.gt_disparity, curr.valid, curr.labels),
                               MotionMode::Oracle, rig, {}, &curr);
            const MemoryState aligned = align_previous(state, est, rig);
            Map stream = aligned.disparity;
            for (std::size_t i = 0; i < stream.size(); ++i)
                if (!aligned.visibility.data()[i]) stream.data()[i] = curr.gt_disparity.data()[i];
            const Mask vp = validity_mask(prev.gt_disparity, curr.gt_scene_flow_px);
            const Mask vc = validity_mask(curr.gt_disparity);
            for (const auto& p : trace(curr.gt_flow, prev.gt_disparity, stream, prev.gt_disparity, curr.gt_disparity,
                                       vp, vc))
                aligned_pairs.push_back(p);
            noise.seed = seed * 100 + t;
            const Map gauss = perturb_disparity(curr.gt_disparity, curr.labels, noise);
            const Map noisy = run_stereo(curr, cfg, seed).disparity;
            for (const auto& p : trace(curr.gt_flow, prev_noisy, noisy, prev.gt_disparity, curr.gt_disparity, vp, vc))
                noisy_pairs.push_back(p);
            for (const auto& p : trace(curr.gt_flow, prev_gauss, gauss, prev.gt_disparity, curr.gt_disparity, vp, vc))
                gaussian_pairs.push_back(p);
            prev = curr;
            prev_noisy = noisy;
            prev_gauss = gauss;
        }
    }
    const double ta = tepe(aligned_pairs).tepe, tn = tepe(noisy_pairs).tepe, tg = tepe(gaussian_pairs).tepe;
    report(7, "oracle-motion consistency", ta < 0.05 && tn >= 0.5,
           format("aligned stream TEPE %.4f px over %zu pairs, noisy-oracle per-frame stream TEPE %.4f px "
                  "(jitter alone %.4f px)",
                  ta, aligned_pairs.size(), tn, tg));
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path source_dir = argc > 1 ? fs::path(argv[1]) : fs::path(TEMPOFUSE_SOURCE_DIR);
    const fs::path out_dir = argc > 2 ? fs::path(argv[2]) : fs::current_path() / "acceptance_out";
    try {
        geometry_round_trip();
        gauss_newton_recovery();
        loss_suite();
        metric_oracles();
        setenv("TEMPOFUSE_THREADS", "1", 1);
        const ExperimentConfig cfg = default_suite(source_dir, out_dir);
        trend_criteria(cfg);
        oracle_consistency(cfg);
        determinism(cfg);
    } catch (const std::exception& e) {
        std::printf("[FAIL] aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
