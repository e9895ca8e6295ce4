#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "tempofuse/harness.hpp"
#include "tempofuse/image_io.hpp"
#include "test_util.hpp"

using namespace tempofuse;
using namespace tempofuse::testing;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
seed = 3
[camera]
width = 64
height = 48
fx = 60.0
fy = 60.0
baseline = 0.5
[scene]
num_frames = 4
[suite]
num_sequences = 2
[train]
num_sequences = 2
frames = 4
epochs = 3
batch_size = 128
[output]
write_maps = "all"
)";

ExperimentConfig tiny(const std::string& extra = "", const fs::path& out = {}) {
    auto kv = KeyValueConfig::parse(std::string(kTiny) + "\n" + extra);
    if (!out.empty()) kv.set("output.dir", out.string());
    return experiment_config_from(std::move(kv));
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tempofuse_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("config parsing and validation") {
    const ExperimentConfig c = tiny();
    CHECK(c.rig.width == 64);
    CHECK(c.scene.num_frames == 4);
    CHECK(c.methods.size() == 5);
    CHECK(c.motion.iterations == 16);
    CHECK(c.loss.tau_reset == 5.0);
    CHECK(c.echo.find("camera.width = 64") != std::string::npos);

    CHECK_THROWS_AS(tiny("bogus_key = 1"), ConfigError);
    CHECK_THROWS_AS(tiny("[motion]\nK = 17"), InvalidConfig);
    CHECK_THROWS_AS(tiny("[motion]\nK = 0"), InvalidConfig);
    CHECK_THROWS_AS(tiny("[fusion]\nmethods = []"), ConfigError);
    CHECK_THROWS_AS(tiny("[fusion]\nmethods = [\"magic\"]"), ConfigError);
    CHECK_THROWS_AS(tiny("[loss]\ntau_fusion = 9"), InvalidConfig);
    CHECK_THROWS_AS(tiny("[stereo]\nsource = \"lidar\""), ConfigError);
    try {
        tiny("[motion]\nK = 40");
        FAIL("expected InvalidConfig");
    } catch (const InvalidConfig& e) {
        CHECK(std::string(e.what()).find("motion.K") != std::string::npos);
    }
    CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.toml"), ConfigError);
}

TEST_CASE("seed partition is disjoint and fixed") {
    const ExperimentConfig c = tiny();
    const auto test = c.test_seeds(), train = c.train_seeds();
    CHECK(test.size() == 2);
    CHECK(train.size() == 2);
    for (auto s : test) CHECK(s % 5 == 0);
    for (auto s : train) CHECK(s % 5 != 0);
    CHECK(test == tiny().test_seeds());
}

TEST_CASE("frame source enforces online order") {
    const Scene scene(two_layer_scene(small_rig(), 3));
    SequentialFrameSource src(scene);
    CHECK_NOTHROW(src.next_frame(0));
    CHECK_THROWS_AS(src.next_frame(2), CausalityViolation);
    CHECK_THROWS_AS(src.next_frame(0), CausalityViolation);
    CHECK_NOTHROW(src.next_frame(1));
    CHECK(src.frames_served() == 2);
}

TEST_CASE("pipeline properties on a tiny suite") {
    const ExperimentConfig cfg = tiny();
    const ExperimentResult a = run_experiment(cfg);
    const ExperimentResult b = run_experiment(cfg);
    REQUIRE(a.sequences.size() == 2);
    for (FusionMethod m : cfg.methods)
        CHECK(report_to_json(a.overall.at(m)) == report_to_json(b.overall.at(m)));

    const TrainingOutcome trained = train_models(cfg);
    for (const auto& seq : a.sequences) {
        const MetricReport& pf = seq.reports.at(FusionMethod::PerFrame);
        CHECK(seq.reports.at(FusionMethod::EmpiricalBest).epe <= pf.epe);

        // Per-frame output is the raw stereo stream.
        const Scene scene(random_scene_config(cfg.rig, cfg.scene, seq.seed));
        std::vector<MetricReport> frames;
        Map prev_d, prev_gt;
        for (int t = 0; t < scene.num_frames(); ++t) {
            const SceneSample s = scene.render(t);
            const Map d = run_stereo(s, cfg, seq.seed).disparity;
            const Mask valid = validity_mask(s.gt_disparity);
            MetricReport r;
            r.set_disparity(epe(d, s.gt_disparity, valid));
            if (t > 0)
                r.set_temporal(tepe(trace(s.gt_flow, prev_d, d, prev_gt, s.gt_disparity,
                                          validity_mask(prev_gt, s.gt_scene_flow_px), valid)));
            frames.push_back(r);
            prev_d = d;
            prev_gt = s.gt_disparity;
        }
        const MetricReport raw = aggregate(frames);
        CHECK(raw.epe == doctest::Approx(pf.epe).epsilon(1e-12));
        CHECK(raw.tepe == doctest::Approx(pf.tepe).epsilon(1e-12));

        // Running one sequence directly matches the suite result.
        const SequenceResult again = run_sequence(scene, seq.seed, cfg, trained.models);
        for (FusionMethod m : cfg.methods)
            CHECK(report_to_json(again.reports.at(m)) == report_to_json(seq.reports.at(m)));
    }

    const std::string md = comparison_markdown(a, cfg);
    std::vector<double> tepes;
    std::istringstream lines(md);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
        if (line.rfind("| ", 0) != 0 || line.find("method") != std::string::npos) continue;
        ++rows;
        tepes.push_back(std::stod(line.substr(line.find('|', 2) + 1)));
    }
    CHECK(rows == 5);
    CHECK(std::is_sorted(tepes.begin(), tepes.end()));
    CHECK(md.find("per_frame") != std::string::npos);
}

TEST_CASE("method subsets and comparison rows") {
    const ExperimentConfig cfg = tiny("[fusion]\nmethods = [\"kalman\", \"empirical_best\"]");
    const ExperimentResult r = run_experiment(cfg);
    CHECK(r.overall.size() == 2);
    CHECK_FALSE(r.training.has_value());
    const std::string md = comparison_markdown(r, cfg);
    CHECK(md.find("per_frame") == std::string::npos);
    CHECK(md.find("kalman") != std::string::npos);
    const std::string csv = comparison_csv(r, cfg);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("training is deterministic and starts from one half") {
    ExperimentConfig cfg = tiny();
    const TrainingOutcome a = train_models(cfg, true), b = train_models(cfg, true);
    CHECK(a.models.weights.serialize() == b.models.weights.serialize());
    CHECK(a.train.final_loss <= a.train.initial_loss);
    CHECK(a.models.kalman.intercept == b.models.kalman.intercept);

    cfg.train.epochs = 0;
    const TrainingOutcome zero = train_models(cfg, true);
    CueStack cues;
    cues.data = random_map(6, 6, CueStack::kChannels, 1, 0, 5);
    const WeightMaps w = predict_weights(zero.models.weights, cues);
    for (double v : w.reset.data()) CHECK(v == 0.5);
    for (double v : w.fusion.data()) CHECK(v == 0.5);
}

TEST_CASE("image files round trip") {
    const fs::path dir = scratch("io");
    fs::create_directories(dir);
    Map m = random_map(7, 5, 1, 3, -20, 200);
    for (auto& v : m.data()) v = static_cast<float>(v);
    write_pfm(dir / "a.pfm", m);
    CHECK(read_pfm(dir / "a.pfm") == m);
    Map f = random_map(4, 6, 3, 4, -5, 5);
    for (auto& v : f.data()) v = static_cast<float>(v);
    write_pfm(dir / "f.pfm", f);
    CHECK(read_pfm(dir / "f.pfm") == f);
    const Map img = random_map(5, 9, 1, 5);
    write_pgm(dir / "i.pgm", img);
    CHECK(max_abs_diff(read_pgm(dir / "i.pgm"), img) <= 0.5 / 255 + 1e-12);
    CHECK_THROWS_AS(read_pfm(dir / "missing.pfm"), IoError);
    {
        std::ofstream bad(dir / "bad.pfm");
        bad << "P9\n1 1\n-1\n";
    }
    CHECK_THROWS_AS(read_pfm(dir / "bad.pfm"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("written artifacts are reproducible and re-evaluable") {
    const fs::path out = scratch("run");
    const ExperimentConfig cfg = tiny("", out);
    const ExperimentResult res = run_and_write(cfg);
    for (const char* name : {"config_echo.txt", "metrics.json", "metrics.csv", "comparison.md", "comparison.csv",
                             "loss_curve.csv", "model.tfw"})
        CHECK(fs::exists(out / name));
    const auto j = nlohmann::json::parse(slurp(out / "metrics.json"));
    CHECK(j["methods"].size() == 5);
    CHECK(LogisticWeightModel::load(out / "model.tfw") == res.training->model);

    // Rerun into the same directory: every artifact is byte-identical.
    std::map<std::string, std::string> before;
    for (const auto& e : fs::recursive_directory_iterator(out))
        if (e.is_regular_file()) before[e.path().string()] = slurp(e.path());
    run_and_write(cfg);
    long files = 0;
    for (const auto& e : fs::recursive_directory_iterator(out))
        if (e.is_regular_file()) {
            ++files;
            CHECK(before.at(e.path().string()) == slurp(e.path()));
        }
    CHECK(files == static_cast<long>(before.size()));

    const auto& seq = res.sequences[0];
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04llu", static_cast<unsigned long long>(seq.seed));
    const fs::path seq_dir = out / "maps" / name;
    CHECK(fs::exists(seq_dir / "learned" / "w_reset_0001.pfm"));
    CHECK(fs::exists(seq_dir / "gt" / "left_0000.pgm"));
    for (FusionMethod m : {FusionMethod::PerFrame, FusionMethod::Kalman}) {
        const MetricReport ev = evaluate_directories(seq_dir / to_string(m), seq_dir / "gt");
        CHECK(ev.epe == doctest::Approx(seq.reports.at(m).epe).epsilon(1e-4));
        CHECK(ev.tepe == doctest::Approx(seq.reports.at(m).tepe).epsilon(1e-4));
    }
    CHECK_THROWS_AS(evaluate_directories(out / "nope", seq_dir / "gt"), IoError);
    fs::remove_all(out);
}

TEST_CASE("worker count honours the environment cap") {
    setenv("TEMPOFUSE_THREADS", "1", 1);
    CHECK(worker_count() == 1);
    unsetenv("TEMPOFUSE_THREADS");
    CHECK(worker_count() >= 1);
}
