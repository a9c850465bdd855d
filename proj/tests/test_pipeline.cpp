#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "soh/pipeline.hpp"

using namespace soh;
using namespace soh::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

PipelineConfig tiny_config(const std::string& root) {
    PipelineConfig cfg;
    cfg.input_dir = root + "/fleet";
    cfg.work_dir = root + "/work";
    cfg.output_dir = root + "/out";
    cfg.seed = 99;
    cfg.jobs = 2;
    cfg.fleet.seed = 99;
    cfg.fleet.n_batteries = 10;
    cfg.fleet.min_days = 400;
    cfg.fleet.max_days = 480;
    cfg.fleet.sample_period_s = 600;
    cfg.fleet.sunny_probability = 0.0;  // one qualifying segment per week
    cfg.fleet.knee_onset_mean_days = 400;
    cfg.ssgp.opt_max_iters = 25;
    cfg.cv.seed = mix_seed(99, 0xC1A55E5ULL);
    cfg.cv.classifier.opt_max_iters = 10;
    cfg.cv.classifier.restarts = 1;
    cfg.cv.folds = 3;
    cfg.cv.subset_repeats = 2;
    return cfg;
}

}  // namespace

TEST_CASE("hashing is stable") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hash_hex(0x12abULL) == "00000000000012ab");
}

TEST_CASE("parallel_for covers the range and propagates errors") {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] = 1; });
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS_AS(
        parallel_for(10, 3, [&](std::size_t i) { if (i == 7) throw DomainError("boom"); }),
        DomainError);
}

TEST_CASE("pipeline stages run end to end, resume, and enforce dependencies") {
    const std::string root = "/tmp/soh_pipe_t1";
    fs::remove_all(root);
    auto cfg = tiny_config(root);

    SUBCASE("classify before fit is a dependency error") {
        Pipeline p(cfg);
        CHECK_THROWS_AS(p.classify(), DependencyError);
    }

    Pipeline p(cfg);
    CHECK(p.simulate() == StageStatus::ran);
    CHECK(p.ingest() == StageStatus::ran);
    CHECK(p.fit() == StageStatus::ran);
    CHECK(p.calibrate() == StageStatus::ran);
    CHECK(p.features() == StageStatus::ran);
    CHECK(p.classify() == StageStatus::ran);
    CHECK(p.report() == StageStatus::ran);

    // Key artifacts exist.
    CHECK(fs::exists(root + "/work/moments.json"));
    CHECK(fs::exists(root + "/work/models/b0000.json"));
    CHECK(fs::exists(root + "/work/trajectories/b0009.json"));
    CHECK(fs::exists(root + "/out/accuracy.csv"));
    CHECK(fs::exists(root + "/out/recovery.csv"));
    CHECK(fs::exists(root + "/out/summary.txt"));
    CHECK(fs::exists(root + "/out/slices_temperature.csv"));

    SUBCASE("second run is a no-op") {
        Pipeline q(cfg);
        CHECK(q.simulate() == StageStatus::skipped_up_to_date);
        CHECK(q.ingest() == StageStatus::skipped_up_to_date);
        CHECK(q.fit() == StageStatus::skipped_up_to_date);
        CHECK(q.calibrate() == StageStatus::skipped_up_to_date);
        CHECK(q.features() == StageStatus::skipped_up_to_date);
        CHECK(q.classify() == StageStatus::skipped_up_to_date);
        CHECK(q.report() == StageStatus::skipped_up_to_date);
    }

    SUBCASE("stale simulate without force refuses to overwrite") {
        auto cfg2 = cfg;
        cfg2.seed = 100;
        cfg2.fleet.seed = 100;
        Pipeline q(cfg2);
        CHECK_THROWS_AS(q.simulate(), ConfigError);
        Pipeline forced(cfg2, /*force=*/true);
        CHECK(forced.simulate() == StageStatus::ran);
    }
}

TEST_CASE("identical config and seed give byte-identical manifests and reports") {
    const std::string r1 = "/tmp/soh_pipe_d1", r2 = "/tmp/soh_pipe_d2";
    fs::remove_all(r1);
    fs::remove_all(r2);
    for (const auto& root : {r1, r2}) {
        auto cfg = tiny_config(root);
        Pipeline p(cfg);
        for (const char* stage :
             {"simulate", "ingest", "fit", "calibrate", "features", "classify", "report"})
            p.run(stage);
    }
    for (const char* stage :
         {"simulate", "ingest", "fit", "calibrate", "features", "classify", "report"}) {
        const std::string a = r1 + "/work/manifests/" + stage + ".json";
        const std::string b = r2 + "/work/manifests/" + stage + ".json";
        CHECK(slurp(a) == slurp(b));
    }
    for (const char* out : {"accuracy.csv", "relevance.csv", "summary.txt", "recovery.csv",
                            "slices_temperature.csv", "feature_correlations.csv"})
        CHECK(slurp(r1 + "/out/" + out) == slurp(r2 + "/out/" + out));
}

TEST_CASE("config JSON round trip preserves semantic hashing") {
    auto cfg = tiny_config("/tmp/soh_cfg_root");
    const auto j = cfg.to_json();
    auto back = PipelineConfig::from_json(j);
    back.input_dir = "/different/path";  // paths are excluded from the hash
    CHECK(back.to_json().dump() == j.dump());
}

TEST_CASE("zero-battery fleet config is rejected") {
    auto cfg = tiny_config("/tmp/soh_pipe_zero");
    cfg.fleet.n_batteries = 0;
    fs::remove_all("/tmp/soh_pipe_zero");
    Pipeline p(cfg);
    CHECK_THROWS_AS(p.simulate(), ConfigError);
}
