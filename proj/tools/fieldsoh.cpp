#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "soh/pipeline.hpp"

namespace {

int run_stages(soh::pipeline::PipelineConfig cfg, bool force,
               const std::vector<std::string>& stages) {
    soh::pipeline::Pipeline pipe(std::move(cfg), force);
    for (const auto& stage : stages) {
        const auto status = pipe.run(stage);
        std::printf("%s: %s\n", stage.c_str(),
                    status == soh::pipeline::StageStatus::ran ? "done" : "up to date");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Battery health estimation and end-of-life prediction pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
    bool force = false;
    app.add_option("--config", config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Master seed override")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--jobs", jobs, "Worker pool size");
    app.add_flag("--force", force, "Overwrite existing stage outputs");

    std::string input_dir, work_dir, output_dir;
    app.add_option("--input-dir", input_dir, "Fleet directory (telemetry, labels, truth)");
    app.add_option("--work-dir", work_dir, "Intermediate stage outputs");
    app.add_option("--output-dir", output_dir, "Report directory");

    // Qualifying-segment thresholds, exposed on the ingest stage.
    double min_duration = -1, max_gap = -1, start_v_min = -1, start_v_max = -1, start_i_max = -1,
           min_peak_v = -1, min_current = -1;

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic fleet");
    auto* ing = app.add_subcommand("ingest", "Select and resample qualifying charge segments");
    ing->add_option("--min-duration", min_duration, "Minimum raw segment duration, s");
    ing->add_option("--max-gap", max_gap, "Maximum raw sample gap, s");
    ing->add_option("--start-v-min", start_v_min, "Minimum starting voltage, V");
    ing->add_option("--start-v-max", start_v_max, "Maximum starting voltage, V");
    ing->add_option("--start-i-max", start_i_max, "Maximum starting current, A");
    ing->add_option("--min-peak-v", min_peak_v, "Required peak voltage, V");
    ing->add_option("--min-current", min_current, "Conditioning current floor, A");
    auto* fit = app.add_subcommand("fit", "Per-battery MAP and benchmark fits");
    auto* cal = app.add_subcommand("calibrate", "Population model and calibrated trajectories");
    auto* fea = app.add_subcommand("features", "Aging stress factors per battery and horizon");
    auto* cls = app.add_subcommand("classify", "End-of-life cross-validated classification");
    auto* rep = app.add_subcommand("report", "Collect plot data and summary");
    auto* all = app.add_subcommand("all", "Run every stage in order");

    CLI11_PARSE(app, argc, argv);

    try {
        soh::pipeline::PipelineConfig cfg;
        if (!config_path.empty()) cfg = soh::pipeline::PipelineConfig::from_json_file(config_path);
        if (seed_set) {
            cfg.seed = seed;
            cfg.fleet.seed = seed;
            cfg.cv.seed = soh::mix_seed(seed, 0xC1A55E5ULL);
        }
        if (jobs > 0) cfg.jobs = jobs;
        if (!input_dir.empty()) cfg.input_dir = input_dir;
        if (!work_dir.empty()) cfg.work_dir = work_dir;
        if (!output_dir.empty()) cfg.output_dir = output_dir;
        if (min_duration >= 0) cfg.telemetry.min_duration_s = min_duration;
        if (max_gap >= 0) cfg.telemetry.max_gap_s = max_gap;
        if (start_v_min >= 0) cfg.telemetry.start_v_min = start_v_min;
        if (start_v_max >= 0) cfg.telemetry.start_v_max = start_v_max;
        if (start_i_max >= 0) cfg.telemetry.start_i_max = start_i_max;
        if (min_peak_v >= 0) cfg.telemetry.min_peak_v = min_peak_v;
        if (min_current >= 0) cfg.telemetry.min_current_a = min_current;

        std::vector<std::string> stages;
        if (sim->parsed()) stages = {"simulate"};
        if (ing->parsed()) stages = {"ingest"};
        if (fit->parsed()) stages = {"fit"};
        if (cal->parsed()) stages = {"calibrate"};
        if (fea->parsed()) stages = {"features"};
        if (cls->parsed()) stages = {"classify"};
        if (rep->parsed()) stages = {"report"};
        if (all->parsed())
            stages = {"simulate", "ingest", "fit", "calibrate", "features", "classify", "report"};
        return run_stages(std::move(cfg), force, stages);
    } catch (const soh::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
}
