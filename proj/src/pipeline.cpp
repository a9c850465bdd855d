#include "soh/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "soh/csv.hpp"

namespace soh::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
    if (input_dir.empty() || work_dir.empty() || output_dir.empty())
        throw ConfigError("config: input/work/output directories must be set");
    if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
    if (horizons_days.empty() || horizons_days.front() != 0)
        throw ConfigError("config: horizon grid must start at 0");
    for (std::size_t i = 1; i < horizons_days.size(); ++i)
        if (!(horizons_days[i] > horizons_days[i - 1]))
            throw ConfigError("config: horizon grid must be sorted ascending");
    if (!ocv_file.empty() && !fs::exists(ocv_file))
        throw ConfigError("config: ocv_file does not exist: " + ocv_file);
    if (!gassing_file.empty() && !fs::exists(gassing_file))
        throw ConfigError("config: gassing_file does not exist: " + gassing_file);
}

json PipelineConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["horizons_days"] = horizons_days;
    j["telemetry"] = {{"min_duration_s", telemetry.min_duration_s},
                      {"start_v_min", telemetry.start_v_min},
                      {"start_v_max", telemetry.start_v_max},
                      {"start_i_max", telemetry.start_i_max},
                      {"min_peak_v", telemetry.min_peak_v},
                      {"max_gap_s", telemetry.max_gap_s},
                      {"truncate_v_max", telemetry.truncate_v_max},
                      {"min_current_a", telemetry.min_current_a},
                      {"start_sustain_samples", telemetry.start_sustain_samples}};
    j["ssgp"] = {{"n_inducing", ssgp.n_inducing},
                 {"kmeans_seed", ssgp.kmeans_seed},
                 {"kmeans_max_iters", ssgp.kmeans_max_iters},
                 {"jitter", ssgp.jitter},
                 {"hp_lower", ssgp.hp_lower},
                 {"hp_upper", ssgp.hp_upper},
                 {"opt_max_iters", ssgp.opt_max_iters},
                 {"opt_grad_tol", ssgp.opt_grad_tol},
                 {"benchmark_m", ssgp.benchmark_m}};
    j["population"] = {{"jitter", population.jitter},
                       {"opt_max_iters", population.opt_max_iters},
                       {"slice_points", population.slice_points}};
    j["features"] = {{"nominal_capacity_ah", features.nominal_capacity_ah},
                     {"cycle_depth_fraction", features.cycle_depth_fraction},
                     {"float_voltage_v", features.float_voltage_v},
                     {"float_current_a", features.float_current_a}};
    j["cv"] = {{"folds", cv.folds},
               {"subset_fractions", cv.subset_fractions},
               {"subset_repeats", cv.subset_repeats},
               {"classifier_restarts", cv.classifier.restarts},
               {"classifier_opt_max_iters", cv.classifier.opt_max_iters}};
    json fleet_j = fleet.to_json();
    fleet_j.erase("seed");  // the master seed governs
    j["fleet"] = fleet_j;
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        if (p.contains("input_dir")) c.input_dir = p.at("input_dir").get<std::string>();
        if (p.contains("work_dir")) c.work_dir = p.at("work_dir").get<std::string>();
        if (p.contains("output_dir")) c.output_dir = p.at("output_dir").get<std::string>();
        if (p.contains("ocv_file")) c.ocv_file = p.at("ocv_file").get<std::string>();
        if (p.contains("gassing_file")) c.gassing_file = p.at("gassing_file").get<std::string>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
    if (j.contains("horizons_days")) c.horizons_days = j.at("horizons_days").get<std::vector<double>>();
    if (j.contains("telemetry")) {
        const auto& t = j.at("telemetry");
        auto get = [&](const char* k, double& slot) {
            if (t.contains(k)) slot = t.at(k).get<double>();
        };
        get("min_duration_s", c.telemetry.min_duration_s);
        get("start_v_min", c.telemetry.start_v_min);
        get("start_v_max", c.telemetry.start_v_max);
        get("start_i_max", c.telemetry.start_i_max);
        get("min_peak_v", c.telemetry.min_peak_v);
        get("max_gap_s", c.telemetry.max_gap_s);
        get("truncate_v_max", c.telemetry.truncate_v_max);
        get("min_current_a", c.telemetry.min_current_a);
        if (t.contains("start_sustain_samples"))
            c.telemetry.start_sustain_samples = t.at("start_sustain_samples").get<int>();
    }
    if (j.contains("ssgp")) {
        const auto& s = j.at("ssgp");
        if (s.contains("n_inducing")) c.ssgp.n_inducing = s.at("n_inducing").get<int>();
        if (s.contains("kmeans_seed")) c.ssgp.kmeans_seed = s.at("kmeans_seed").get<std::uint64_t>();
        if (s.contains("kmeans_max_iters"))
            c.ssgp.kmeans_max_iters = s.at("kmeans_max_iters").get<int>();
        if (s.contains("jitter")) c.ssgp.jitter = s.at("jitter").get<double>();
        if (s.contains("hp_lower")) c.ssgp.hp_lower = s.at("hp_lower").get<double>();
        if (s.contains("hp_upper")) c.ssgp.hp_upper = s.at("hp_upper").get<double>();
        if (s.contains("opt_max_iters")) c.ssgp.opt_max_iters = s.at("opt_max_iters").get<int>();
        if (s.contains("opt_grad_tol")) c.ssgp.opt_grad_tol = s.at("opt_grad_tol").get<double>();
        if (s.contains("benchmark_m")) c.ssgp.benchmark_m = s.at("benchmark_m").get<double>();
    }
    if (j.contains("population")) {
        const auto& p = j.at("population");
        if (p.contains("jitter")) c.population.jitter = p.at("jitter").get<double>();
        if (p.contains("opt_max_iters")) c.population.opt_max_iters = p.at("opt_max_iters").get<int>();
        if (p.contains("slice_points")) c.population.slice_points = p.at("slice_points").get<int>();
    }
    if (j.contains("features")) {
        const auto& f = j.at("features");
        if (f.contains("nominal_capacity_ah"))
            c.features.nominal_capacity_ah = f.at("nominal_capacity_ah").get<double>();
        if (f.contains("cycle_depth_fraction"))
            c.features.cycle_depth_fraction = f.at("cycle_depth_fraction").get<double>();
        if (f.contains("float_voltage_v"))
            c.features.float_voltage_v = f.at("float_voltage_v").get<double>();
        if (f.contains("float_current_a"))
            c.features.float_current_a = f.at("float_current_a").get<double>();
    }
    if (j.contains("cv")) {
        const auto& v = j.at("cv");
        if (v.contains("folds")) c.cv.folds = v.at("folds").get<int>();
        if (v.contains("subset_fractions"))
            c.cv.subset_fractions = v.at("subset_fractions").get<std::vector<double>>();
        if (v.contains("subset_repeats")) c.cv.subset_repeats = v.at("subset_repeats").get<int>();
        if (v.contains("classifier_restarts"))
            c.cv.classifier.restarts = v.at("classifier_restarts").get<int>();
        if (v.contains("classifier_opt_max_iters"))
            c.cv.classifier.opt_max_iters = v.at("classifier_opt_max_iters").get<int>();
    }
    if (j.contains("fleet")) c.fleet = fleet::FleetConfig::from_json(j.at("fleet"));
    // The master seed governs all stochastic stages.
    c.fleet.seed = c.seed;
    c.cv.seed = mix_seed(c.seed, 0xC1A55E5ULL);
    return c;
}

PipelineConfig PipelineConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path);
    return from_json(json::parse(in));
}

soc::OcvCurve PipelineConfig::load_ocv() const {
    return ocv_file.empty() ? soc::OcvCurve::builtin_default() : soc::OcvCurve::from_csv(ocv_file);
}

soc::GassingParams PipelineConfig::load_gassing() const {
    return gassing_file.empty() ? soc::GassingParams{} : soc::GassingParams::from_json_file(gassing_file);
}

// ---------------------------------------------------------------------------
// Hashing & manifests

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot hash missing file " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < std::streamsize(sizeof(buf))) break;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void Manifest::write(const std::string& path) const {
    json j;
    j["stage"] = stage;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["counts"] = counts;
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest " + path);
    out << j.dump(1) << "\n";
}

std::optional<Manifest> Manifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    Manifest m;
    m.stage = j.value("stage", "");
    m.config_hash = j.value("config_hash", "");
    m.seed = j.value("seed", std::uint64_t(0));
    if (j.contains("inputs")) m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    if (j.contains("outputs")) m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    if (j.contains("counts"))
        m.counts = j.at("counts").get<std::map<std::string, std::int64_t>>();
    return m;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const int workers = std::max(1, std::min<int>(jobs, int(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(PipelineConfig cfg, bool force) : cfg_(std::move(cfg)), force_(force) {
    cfg_.validate();
    config_hash_ = hash_hex(fnv1a64(cfg_.to_json().dump()));
}

std::string Pipeline::manifest_path(const std::string& stage) const {
    return cfg_.work_dir + "/manifests/" + stage + ".json";
}

std::string Pipeline::rel(const std::string& abs_path) const {
    const auto strip = [&](const std::string& root, const char* tag) -> std::optional<std::string> {
        const std::string prefix = root + "/";
        if (abs_path.rfind(prefix, 0) == 0) return std::string(tag) + ":" + abs_path.substr(prefix.size());
        return std::nullopt;
    };
    if (auto s = strip(cfg_.input_dir, "in")) return *s;
    if (auto s = strip(cfg_.work_dir, "work")) return *s;
    if (auto s = strip(cfg_.output_dir, "out")) return *s;
    return "abs:" + fs::path(abs_path).filename().string();
}

Manifest Pipeline::make_manifest(const std::string& stage, const std::vector<std::string>& inputs,
                                 const std::vector<std::string>& outputs) const {
    Manifest m;
    m.stage = stage;
    m.config_hash = config_hash_;
    m.seed = cfg_.seed;
    for (const auto& p : inputs) m.inputs[rel(p)] = hash_hex(fnv1a64_file(p));
    for (const auto& p : outputs) m.outputs[rel(p)] = hash_hex(fnv1a64_file(p));
    return m;
}

bool Pipeline::up_to_date(const std::string& stage, const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs) const {
    auto m = Manifest::load(manifest_path(stage));
    if (!m || m->config_hash != config_hash_ || m->seed != cfg_.seed) return false;
    std::map<std::string, std::string> want_in;
    for (const auto& p : inputs) {
        if (!fs::exists(p)) return false;
        want_in[rel(p)] = hash_hex(fnv1a64_file(p));
    }
    if (want_in != m->inputs) return false;
    for (const auto& [relpath, hash] : m->outputs) {
        (void)relpath;
        (void)hash;
    }
    // Outputs must exist and match the recorded hashes.
    std::map<std::string, std::string> have_out;
    for (const auto& p : outputs) {
        if (!fs::exists(p)) return false;
        have_out[rel(p)] = hash_hex(fnv1a64_file(p));
    }
    if (!outputs.empty() && have_out != m->outputs) return false;
    return true;
}

void Pipeline::require_manifest(const std::string& stage) const {
    if (!fs::exists(manifest_path(stage)))
        throw DependencyError("missing prerequisite manifest " + manifest_path(stage) +
                              " — run the '" + stage + "' stage first");
}

std::vector<std::string> Pipeline::telemetry_files() const {
    const std::string dir = cfg_.input_dir + "/telemetry";
    std::vector<std::string> files;
    if (fs::exists(dir))
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".csv")
                files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

StageStatus Pipeline::run(const std::string& stage) {
    if (stage == "simulate") return simulate();
    if (stage == "ingest") return ingest();
    if (stage == "fit") return fit();
    if (stage == "calibrate") return calibrate();
    if (stage == "features") return features();
    if (stage == "classify") return classify();
    if (stage == "report") return report();
    throw ConfigError("unknown stage '" + stage + "'");
}

// ---------------------------------------------------------------------------
// simulate

StageStatus Pipeline::simulate() {
    std::vector<std::string> fixed_outputs = {cfg_.input_dir + "/labels.csv",
                                              cfg_.input_dir + "/ground_truth.csv",
                                              cfg_.input_dir + "/fleet_config.json"};
    {
        auto existing = telemetry_files();
        std::vector<std::string> outs = existing;
        outs.insert(outs.end(), fixed_outputs.begin(), fixed_outputs.end());
        if (!existing.empty() && up_to_date("simulate", {}, outs)) return StageStatus::skipped_up_to_date;
    }
    if (fs::exists(cfg_.input_dir + "/telemetry") && !fs::is_empty(cfg_.input_dir + "/telemetry")) {
        if (!force_)
            throw ConfigError("simulate: refusing to overwrite existing fleet in " + cfg_.input_dir +
                              " (use --force)");
        fs::remove_all(cfg_.input_dir + "/telemetry");
        for (const auto& f : fixed_outputs) fs::remove(f);
    }

    const auto ocv = cfg_.load_ocv();
    const auto gassing = cfg_.load_gassing();
    fleet::generate_fleet(cfg_.fleet, ocv, gassing, cfg_.input_dir);

    std::vector<std::string> outs = telemetry_files();
    outs.insert(outs.end(), fixed_outputs.begin(), fixed_outputs.end());
    Manifest m = make_manifest("simulate", {}, outs);
    m.counts["batteries"] = cfg_.fleet.n_batteries;
    m.write(manifest_path("simulate"));
    return StageStatus::ran;
}

// ---------------------------------------------------------------------------
// ingest

namespace {

struct IngestResult {
    BatteryIndex index;
    std::string segments_path;
};

json index_to_json(const std::vector<BatteryIndex>& idx) {
    json arr = json::array();
    for (const auto& b : idx) {
        json segs = json::array();
        for (const auto& s : b.segments)
            segs.push_back({{"segment_id", s.segment_id},
                            {"start_ts", s.start_ts},
                            {"age_s", s.age_seconds},
                            {"n_steps", s.n_steps}});
        arr.push_back({{"battery_id", b.battery_id},
                       {"bol_ts", b.bol_ts},
                       {"end_ts", b.end_ts},
                       {"n_records", b.n_records},
                       {"dropped_out_of_range", b.dropped_out_of_range},
                       {"duplicates_collapsed", b.duplicates_collapsed},
                       {"segments", std::move(segs)}});
    }
    return json{{"batteries", std::move(arr)}};
}

}  // namespace

std::vector<BatteryIndex> load_segment_index(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open segment index " + path);
    json j = json::parse(in);
    std::vector<BatteryIndex> out;
    for (const auto& bj : j.at("batteries")) {
        BatteryIndex b;
        b.battery_id = bj.at("battery_id").get<std::string>();
        b.bol_ts = bj.at("bol_ts").get<std::int64_t>();
        b.end_ts = bj.at("end_ts").get<std::int64_t>();
        b.n_records = bj.at("n_records").get<std::int64_t>();
        b.dropped_out_of_range = bj.at("dropped_out_of_range").get<std::int64_t>();
        b.duplicates_collapsed = bj.at("duplicates_collapsed").get<std::int64_t>();
        for (const auto& sj : bj.at("segments")) {
            SegmentInfo s;
            s.segment_id = sj.at("segment_id").get<int>();
            s.start_ts = sj.at("start_ts").get<std::int64_t>();
            s.age_seconds = sj.at("age_s").get<double>();
            s.n_steps = sj.at("n_steps").get<int>();
            b.segments.push_back(s);
        }
        out.push_back(std::move(b));
    }
    return out;
}

StageStatus Pipeline::ingest() {
    const auto files = telemetry_files();
    if (files.empty())
        throw ConfigError("ingest: no telemetry CSV files under " + cfg_.input_dir + "/telemetry");

    const std::string seg_dir = cfg_.work_dir + "/segments";
    std::vector<std::string> expected_outputs;  // filled after the run; for up-to-date we probe
    {
        std::vector<std::string> outs;
        if (fs::exists(seg_dir))
            for (const auto& e : fs::directory_iterator(seg_dir))
                if (e.is_regular_file()) outs.push_back(e.path().string());
        std::sort(outs.begin(), outs.end());
        if (!outs.empty() && up_to_date("ingest", files, outs)) return StageStatus::skipped_up_to_date;
    }

    fs::create_directories(seg_dir);
    std::vector<IngestResult> results(files.size());

    parallel_for(files.size(), cfg_.jobs, [&](std::size_t fi) {
        auto series_list = telemetry::ingest(files[fi]);
        if (series_list.empty())
            throw ParseError("ingest: " + files[fi] + " contains no usable records");
        if (series_list.size() != 1)
            throw ParseError("ingest: " + files[fi] + " contains more than one battery id");
        auto& series = series_list.front();
        if (series.records.empty())
            throw ParseError("ingest: " + files[fi] + " has no in-range records");

        IngestResult res;
        res.index.battery_id = series.battery_id;
        res.index.bol_ts = series.records.front().timestamp;
        res.index.end_ts = series.records.back().timestamp;
        res.index.n_records = std::int64_t(series.records.size());
        res.index.dropped_out_of_range = std::int64_t(series.stats.dropped_out_of_range);
        res.index.duplicates_collapsed = std::int64_t(series.stats.duplicates_collapsed);

        auto raw_segments = telemetry::select_segments(series.records, cfg_.telemetry);
        res.segments_path = seg_dir + "/" + series.battery_id + ".csv";
        csv::Writer w(res.segments_path);
        w.header({"battery_id", "timestamp_s", "current_a", "voltage_v", "temperature_c"});
        int seg_id = 0;
        for (const auto& rs : raw_segments) {
            auto seg = telemetry::resample(series.records, rs, series.battery_id, res.index.bol_ts);
            SegmentInfo info;
            info.segment_id = seg_id++;
            info.start_ts = seg.start_time;
            info.age_seconds = seg.age_seconds;
            info.n_steps = int(seg.size());
            res.index.segments.push_back(info);
            for (std::size_t k = 0; k < seg.size(); ++k) {
                w.field(series.battery_id);
                w.field(std::int64_t(seg.start_time + std::int64_t(k * 60)));
                w.field(seg.current[k]);
                w.field(seg.voltage[k]);
                w.field(seg.temperature[k]);
                w.end_row();
            }
        }
        results[fi] = std::move(res);
    });

    std::sort(results.begin(), results.end(), [](const IngestResult& a, const IngestResult& b) {
        return a.index.battery_id < b.index.battery_id;
    });

    std::vector<BatteryIndex> index;
    std::int64_t total_segments = 0, total_steps = 0;
    for (auto& r : results) {
        total_segments += std::int64_t(r.index.segments.size());
        for (const auto& s : r.index.segments) total_steps += s.n_steps;
        index.push_back(std::move(r.index));
        expected_outputs.push_back(std::move(r.segments_path));
    }
    const std::string index_path = seg_dir + "/index.json";
    {
        std::ofstream out(index_path);
        out << index_to_json(index).dump(1) << "\n";
    }
    expected_outputs.push_back(index_path);
    std::sort(expected_outputs.begin(), expected_outputs.end());

    Manifest m = make_manifest("ingest", files, expected_outputs);
    m.counts["batteries"] = std::int64_t(index.size());
    m.counts["segments"] = total_segments;
    m.counts["steps"] = total_steps;
    m.write(manifest_path("ingest"));
    return StageStatus::ran;
}

// ---------------------------------------------------------------------------
// fit

namespace {

struct StepBlock {
    std::vector<double> age_s, current, voltage, temp, conc, noise_var;
    std::vector<std::uint32_t> segment_id;
    std::int64_t segments_used = 0;
    std::int64_t segments_dropped = 0;
    std::size_t size() const { return age_s.size(); }
};

std::vector<telemetry::ChargeSegment> read_segments(const std::string& path,
                                                    const BatteryIndex& idx) {
    csv::Reader r(path);
    r.expect_header({"battery_id", "timestamp_s", "current_a", "voltage_v", "temperature_c"});
    std::vector<telemetry::ChargeSegment> segments;
    std::vector<std::string> row;
    for (const auto& info : idx.segments) {
        telemetry::ChargeSegment seg;
        seg.battery_id = idx.battery_id;
        seg.start_time = info.start_ts;
        seg.age_seconds = info.age_seconds;
        for (int k = 0; k < info.n_steps; ++k) {
            if (!r.next_row(row) || row.size() != 5)
                throw ParseError(path + ": truncated segment data");
            seg.current.push_back(r.to_double(row[2]));
            seg.voltage.push_back(r.to_double(row[3]));
            seg.temperature.push_back(r.to_double(row[4]));
        }
        segments.push_back(std::move(seg));
    }
    return segments;
}

StepBlock process_battery(const std::vector<telemetry::ChargeSegment>& segments,
                          const soc::OcvCurve& ocv, const soc::GassingParams& gassing,
                          const telemetry::TelemetryConfig& tcfg) {
    StepBlock out;
    std::uint32_t seg_counter = 0;
    for (const auto& seg : segments) {
        const std::uint32_t seg_id = seg_counter++;
        if (seg.size() == 0) continue;
        soc::SocSeries soc_series;
        try {
            auto init = soc::init_concentration(seg.current, seg.voltage, ocv);
            soc_series = soc::coulomb_count(seg.current, seg.voltage, seg.temperature,
                                            seg.step_seconds, init, gassing, ocv);
        } catch (const DomainError&) {
            ++out.segments_dropped;  // rest voltage outside the OCV table
            continue;
        }
        const auto nv = soc::noise_variance(soc_series, ocv);
        auto filtered = telemetry::truncate_and_filter(seg, soc_series, ocv, tcfg);
        if (filtered.kept.empty()) {
            ++out.segments_dropped;
            continue;
        }
        ++out.segments_used;
        for (std::size_t k = 0; k < filtered.kept.size(); ++k) {
            const std::size_t i = filtered.kept[k];
            out.age_s.push_back(seg.age_seconds + double(i) * seg.step_seconds);
            out.current.push_back(seg.current[i]);
            out.voltage.push_back(seg.voltage[i]);
            out.temp.push_back(seg.temperature[i]);
            out.conc.push_back(soc_series.concentration[i]);
            out.noise_var.push_back(nv[i]);
            out.segment_id.push_back(seg_id);
        }
    }
    return out;
}

ssgp::FitData block_to_fitdata(const StepBlock& blk, const soc::NormalizationMoments& m,
                               const soc::OcvCurve& ocv) {
    ssgp::FitData d;
    const std::size_t n = blk.size();
    d.t_norm.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        d.t_norm.push_back(soc::normalize_time(blk.age_s[i], m.time_scale_s));
        d.age_seconds.push_back(blk.age_s[i]);
        d.current_a.push_back(blk.current[i]);
        d.in_i.push_back(soc::normalize(blk.current[i], m.mean_i, m.std_i));
        d.in_t.push_back(soc::normalize(blk.temp[i], m.mean_t, m.std_t));
        d.in_c.push_back(soc::normalize(blk.conc[i], m.mean_c, m.std_c));
        d.y.push_back(blk.voltage[i] - ocv.voltage(blk.conc[i]));
        d.noise_var.push_back(blk.noise_var[i]);
        d.segment_id.push_back(blk.segment_id[i]);
    }
    return d;
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0;
    const std::size_t k = std::size_t(p * double(v.size() - 1) + 0.5);
    std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(k), v.end());
    return v[k];
}

}  // namespace

StageStatus Pipeline::fit() {
    require_manifest("ingest");
    const std::string seg_dir = cfg_.work_dir + "/segments";
    const std::string index_path = seg_dir + "/index.json";
    auto index = load_segment_index(index_path);

    std::vector<std::string> inputs;
    for (const auto& b : index) inputs.push_back(seg_dir + "/" + b.battery_id + ".csv");
    inputs.push_back(index_path);
    if (!cfg_.ocv_file.empty()) inputs.push_back(cfg_.ocv_file);
    if (!cfg_.gassing_file.empty()) inputs.push_back(cfg_.gassing_file);

    std::vector<std::string> outputs = {cfg_.work_dir + "/moments.json"};
    for (const auto& b : index) {
        outputs.push_back(cfg_.work_dir + "/models/" + b.battery_id + ".json");
        outputs.push_back(cfg_.work_dir + "/benchmarks/" + b.battery_id + ".json");
    }
    if (up_to_date("fit", inputs, outputs)) return StageStatus::skipped_up_to_date;

    const auto ocv = cfg_.load_ocv();
    const auto gassing = cfg_.load_gassing();
    fs::create_directories(cfg_.work_dir + "/models");
    fs::create_directories(cfg_.work_dir + "/benchmarks");

    // Pass A: population moments over the down-selected steps.
    struct Partial {
        double st = 0, si = 0, sc = 0, stt = 0, sii = 0, scc = 0;
        std::size_t n = 0;
        std::vector<double> samp_t, samp_i, samp_c;
        std::int64_t segments_used = 0, segments_dropped = 0;
    };
    std::vector<Partial> partials(index.size());
    parallel_for(index.size(), cfg_.jobs, [&](std::size_t bi) {
        auto segs = read_segments(seg_dir + "/" + index[bi].battery_id + ".csv", index[bi]);
        StepBlock blk = process_battery(segs, ocv, gassing, cfg_.telemetry);
        Partial& p = partials[bi];
        const std::size_t stride = std::max<std::size_t>(1, blk.size() / 512);
        for (std::size_t i = 0; i < blk.size(); ++i) {
            p.st += blk.temp[i];
            p.si += blk.current[i];
            p.sc += blk.conc[i];
            p.stt += blk.temp[i] * blk.temp[i];
            p.sii += blk.current[i] * blk.current[i];
            p.scc += blk.conc[i] * blk.conc[i];
            if (i % stride == 0) {
                p.samp_t.push_back(blk.temp[i]);
                p.samp_i.push_back(blk.current[i]);
                p.samp_c.push_back(blk.conc[i]);
            }
        }
        p.n = blk.size();
        p.segments_used = blk.segments_used;
        p.segments_dropped = blk.segments_dropped;
    });

    double st = 0, si = 0, sc = 0, stt = 0, sii = 0, scc = 0;
    std::size_t n_total = 0;
    std::int64_t segments_used = 0, segments_dropped = 0;
    std::vector<double> samp_t, samp_i, samp_c;
    for (const auto& p : partials) {
        st += p.st;
        si += p.si;
        sc += p.sc;
        stt += p.stt;
        sii += p.sii;
        scc += p.scc;
        n_total += p.n;
        segments_used += p.segments_used;
        segments_dropped += p.segments_dropped;
        samp_t.insert(samp_t.end(), p.samp_t.begin(), p.samp_t.end());
        samp_i.insert(samp_i.end(), p.samp_i.begin(), p.samp_i.end());
        samp_c.insert(samp_c.end(), p.samp_c.begin(), p.samp_c.end());
    }
    if (n_total == 0) throw DomainError("fit: no retained steps across the fleet");

    soc::NormalizationMoments moments;
    const double inv_n = 1.0 / double(n_total);
    moments.mean_t = st * inv_n;
    moments.mean_i = si * inv_n;
    moments.mean_c = sc * inv_n;
    moments.std_t = std::sqrt(std::max(1e-12, stt * inv_n - moments.mean_t * moments.mean_t));
    moments.std_i = std::sqrt(std::max(1e-12, sii * inv_n - moments.mean_i * moments.mean_i));
    moments.std_c = std::sqrt(std::max(1e-12, scc * inv_n - moments.mean_c * moments.mean_c));
    moments.p5_t = percentile(samp_t, 0.05);
    moments.p95_t = percentile(samp_t, 0.95);
    moments.p5_i = percentile(samp_i, 0.05);
    moments.p95_i = percentile(samp_i, 0.95);
    moments.p5_c = percentile(samp_c, 0.05);
    moments.p95_c = percentile(samp_c, 0.95);
    moments.write_json(cfg_.work_dir + "/moments.json");

    // Pass B: per-battery MAP and benchmark fits.
    parallel_for(index.size(), cfg_.jobs, [&](std::size_t bi) {
        auto segs = read_segments(seg_dir + "/" + index[bi].battery_id + ".csv", index[bi]);
        StepBlock blk = process_battery(segs, ocv, gassing, cfg_.telemetry);
        if (blk.size() == 0)
            throw DomainError("fit: battery " + index[bi].battery_id + " has no retained steps");
        ssgp::FitData data = block_to_fitdata(blk, moments, ocv);
        ssgp::HealthModel hm = ssgp::fit_map(index[bi].battery_id, data, cfg_.ssgp);
        hm.write_json(cfg_.work_dir + "/models/" + index[bi].battery_id + ".json");
        ssgp::BenchmarkModel bm = ssgp::fit_benchmark(index[bi].battery_id, data, cfg_.ssgp);
        bm.write_json(cfg_.work_dir + "/benchmarks/" + index[bi].battery_id + ".json");
    });

    Manifest m = make_manifest("fit", inputs, outputs);
    m.counts["batteries"] = std::int64_t(index.size());
    m.counts["steps"] = std::int64_t(n_total);
    m.counts["segments_used"] = segments_used;
    m.counts["segments_dropped"] = segments_dropped;
    m.write(manifest_path("fit"));
    return StageStatus::ran;
}

// ---------------------------------------------------------------------------
// calibrate

StageStatus Pipeline::calibrate() {
    require_manifest("fit");
    const std::string seg_dir = cfg_.work_dir + "/segments";
    auto index = load_segment_index(seg_dir + "/index.json");

    std::vector<std::string> inputs = {cfg_.work_dir + "/moments.json", seg_dir + "/index.json"};
    for (const auto& b : index) {
        inputs.push_back(cfg_.work_dir + "/models/" + b.battery_id + ".json");
        inputs.push_back(cfg_.work_dir + "/benchmarks/" + b.battery_id + ".json");
    }
    std::vector<std::string> outputs = {cfg_.work_dir + "/population_gp.json",
                                        cfg_.work_dir + "/slices_temperature.csv",
                                        cfg_.work_dir + "/slices_current.csv",
                                        cfg_.work_dir + "/slices_concentration.csv"};
    for (const auto& b : index)
        outputs.push_back(cfg_.work_dir + "/trajectories/" + b.battery_id + ".json");
    if (up_to_date("calibrate", inputs, outputs)) return StageStatus::skipped_up_to_date;

    const auto moments = soc::NormalizationMoments::from_json_file(cfg_.work_dir + "/moments.json");
    fs::create_directories(cfg_.work_dir + "/trajectories");

    std::vector<ssgp::HealthModel> models(index.size());
    std::vector<ssgp::BenchmarkModel> benches(index.size());
    parallel_for(index.size(), cfg_.jobs, [&](std::size_t bi) {
        models[bi] =
            ssgp::HealthModel::from_json_file(cfg_.work_dir + "/models/" + index[bi].battery_id + ".json");
        benches[bi] = ssgp::BenchmarkModel::from_json_file(cfg_.work_dir + "/benchmarks/" +
                                                           index[bi].battery_id + ".json");
    });

    // Population GP over beginning-of-life operating points.
    {
        std::vector<std::string> ids;
        Eigen::MatrixXd x(Eigen::Index(models.size()), 3);
        Eigen::VectorXd y(Eigen::Index(models.size())), var(Eigen::Index(models.size()));
        for (std::size_t i = 0; i < models.size(); ++i) {
            ids.push_back(models[i].battery_id);
            x(Eigen::Index(i), 0) = models[i].bol_i;
            x(Eigen::Index(i), 1) = models[i].bol_t;
            x(Eigen::Index(i), 2) = models[i].bol_c;
            y[Eigen::Index(i)] = models[i].bol_r0;
            var[Eigen::Index(i)] = models[i].bol_r0_var;
        }
        auto gp = population::fit_population_gp(ids, x, y, var, cfg_.population);
        gp.write_json(cfg_.work_dir + "/population_gp.json");

        auto slices = population::population_slices(gp, moments, cfg_.population.slice_points);
        for (const auto& s : slices) {
            csv::Writer w(cfg_.work_dir + "/slices_" + s.input_name + ".csv");
            w.header({s.input_name, "r0_mean", "r0_lo_2sigma", "r0_hi_2sigma"});
            for (std::size_t k = 0; k < s.grid.size(); ++k) {
                w.field(s.grid[k]);
                w.field(s.mean[k]);
                w.field(s.lo[k]);
                w.field(s.hi[k]);
                w.end_row();
            }
        }
    }

    parallel_for(index.size(), cfg_.jobs, [&](std::size_t bi) {
        const double series_end_age = double(index[bi].end_ts - index[bi].bol_ts);
        auto tr = population::calibrate_trajectory(models[bi], benches[bi], cfg_.horizons_days,
                                                   series_end_age);
        tr.write_json(cfg_.work_dir + "/trajectories/" + index[bi].battery_id + ".json");
    });

    Manifest m = make_manifest("calibrate", inputs, outputs);
    m.counts["batteries"] = std::int64_t(index.size());
    m.write(manifest_path("calibrate"));
    return StageStatus::ran;
}

// ---------------------------------------------------------------------------
// features

StageStatus Pipeline::features() {
    require_manifest("ingest");
    const auto files = telemetry_files();
    auto index = load_segment_index(cfg_.work_dir + "/segments/index.json");
    if (files.size() != index.size())
        throw DependencyError("features: telemetry files and segment index disagree");

    std::vector<std::string> inputs = files;
    inputs.push_back(cfg_.work_dir + "/segments/index.json");
    std::vector<std::string> outputs = {cfg_.work_dir + "/features.csv",
                                        cfg_.work_dir + "/feature_correlations.csv"};
    if (up_to_date("features", inputs, outputs)) return StageStatus::skipped_up_to_date;

    const std::size_t nh = cfg_.horizons_days.size();
    std::vector<std::vector<features::StressFeatures>> rows(index.size());
    parallel_for(index.size(), cfg_.jobs, [&](std::size_t bi) {
        auto series_list = telemetry::ingest(cfg_.input_dir + "/telemetry/" + index[bi].battery_id +
                                             ".csv");
        const auto& recs = series_list.front().records;
        rows[bi].resize(nh);
        for (std::size_t h = 0; h < nh; ++h) {
            const std::int64_t as_of =
                index[bi].end_ts - std::int64_t(cfg_.horizons_days[h] * 86400.0);
            rows[bi][h] = features::compute_stress_features(recs, as_of, cfg_.features);
        }
    });

    // Normalization moments from the horizon-0 fleet values.
    std::array<double, features::kNumFeatures> mean{}, sd{};
    for (std::size_t bi = 0; bi < index.size(); ++bi) {
        const auto v = rows[bi][0].as_array();
        for (int j = 0; j < features::kNumFeatures; ++j) mean[std::size_t(j)] += v[std::size_t(j)];
    }
    for (auto& v : mean) v /= double(index.size());
    for (std::size_t bi = 0; bi < index.size(); ++bi) {
        const auto v = rows[bi][0].as_array();
        for (int j = 0; j < features::kNumFeatures; ++j) {
            const double d = v[std::size_t(j)] - mean[std::size_t(j)];
            sd[std::size_t(j)] += d * d;
        }
    }
    for (auto& v : sd) v = std::sqrt(v / double(index.size()));
    for (auto& v : sd)
        if (!(v > 0)) v = 1.0;

    {
        csv::Writer w(cfg_.work_dir + "/features.csv");
        std::vector<std::string> header = {"battery_id", "horizon_days"};
        for (const char* name : features::kFeatureNames) header.push_back(name);
        for (const char* name : features::kFeatureNames) header.push_back(std::string("norm_") + name);
        w.header(header);
        for (std::size_t bi = 0; bi < index.size(); ++bi) {
            for (std::size_t h = 0; h < nh; ++h) {
                w.field(index[bi].battery_id);
                w.field(cfg_.horizons_days[h]);
                const auto v = rows[bi][h].as_array();
                for (int j = 0; j < features::kNumFeatures; ++j) w.field(v[std::size_t(j)]);
                for (int j = 0; j < features::kNumFeatures; ++j)
                    w.field((v[std::size_t(j)] - mean[std::size_t(j)]) / sd[std::size_t(j)]);
                w.end_row();
            }
        }
    }
    {
        std::vector<features::StressFeatures> fleet0;
        for (std::size_t bi = 0; bi < index.size(); ++bi) fleet0.push_back(rows[bi][0]);
        auto corr = features::feature_correlations(fleet0);
        csv::Writer w(cfg_.work_dir + "/feature_correlations.csv");
        std::vector<std::string> header = {"feature"};
        for (const char* name : features::kFeatureNames) header.push_back(name);
        w.header(header);
        for (int a = 0; a < features::kNumFeatures; ++a) {
            w.field(std::string(features::kFeatureNames[std::size_t(a)]));
            for (int b = 0; b < features::kNumFeatures; ++b) w.field(corr.matrix(a, b));
            w.end_row();
        }
    }

    Manifest m = make_manifest("features", inputs, outputs);
    m.counts["batteries"] = std::int64_t(index.size());
    m.counts["horizons"] = std::int64_t(nh);
    m.write(manifest_path("features"));
    return StageStatus::ran;
}

// ---------------------------------------------------------------------------
// classify

namespace {

std::map<std::string, eol::Label> load_labels(const std::string& path) {
    csv::Reader r(path);
    r.expect_header({"battery_id", "label"});
    std::map<std::string, eol::Label> out;
    std::vector<std::string> row;
    while (r.next_row(row)) {
        if (row.size() != 2)
            throw ParseError(path + ":" + std::to_string(r.line_number()) + ": expected 2 fields");
        if (row[1] == "failed")
            out[row[0]] = eol::Label::failed;
        else if (row[1] == "healthy")
            out[row[0]] = eol::Label::healthy;
        else
            throw ParseError(path + ":" + std::to_string(r.line_number()) + ": label must be failed|healthy");
    }
    return out;
}

}  // namespace

StageStatus Pipeline::classify() {
    require_manifest("calibrate");
    require_manifest("features");
    auto index = load_segment_index(cfg_.work_dir + "/segments/index.json");
    const std::string labels_path = cfg_.input_dir + "/labels.csv";
    if (!fs::exists(labels_path)) throw DependencyError("classify: missing labels file " + labels_path);

    std::vector<std::string> inputs = {labels_path, cfg_.work_dir + "/features.csv"};
    for (const auto& b : index)
        inputs.push_back(cfg_.work_dir + "/trajectories/" + b.battery_id + ".json");
    std::vector<std::string> outputs = {cfg_.work_dir + "/classify/report.json",
                                        cfg_.work_dir + "/classify/accuracy.csv",
                                        cfg_.work_dir + "/classify/relevance.csv"};
    if (up_to_date("classify", inputs, outputs)) return StageStatus::skipped_up_to_date;

    const auto labels = load_labels(labels_path);
    const std::size_t nh = cfg_.horizons_days.size();

    eol::CvInputs cv_in;
    cv_in.horizons_days = cfg_.horizons_days;
    for (const auto& b : index) {
        auto it = labels.find(b.battery_id);
        if (it == labels.end())
            throw DomainError("classify: no label for battery " + b.battery_id);
        cv_in.battery_ids.push_back(b.battery_id);
        cv_in.labels.push_back(it->second);
        auto tr = population::HealthTrajectory::from_json_file(cfg_.work_dir + "/trajectories/" +
                                                               b.battery_id + ".json");
        if (tr.horizons.size() != nh)
            throw DomainError("classify: horizon grid mismatch for battery " + b.battery_id);
        std::vector<double> r0(nh), drdt(nh), bench(nh);
        for (std::size_t h = 0; h < nh; ++h) {
            r0[h] = tr.horizons[h].r0_mean;
            drdt[h] = tr.horizons[h].drdt_mean;
            bench[h] = tr.horizons[h].bench_mean;
        }
        cv_in.r0.push_back(std::move(r0));
        cv_in.drdt.push_back(std::move(drdt));
        cv_in.bench.push_back(std::move(bench));
    }

    // Stress features from the features table.
    {
        csv::Reader r(cfg_.work_dir + "/features.csv");
        std::vector<std::string> header_expect = {"battery_id", "horizon_days"};
        for (const char* name : features::kFeatureNames) header_expect.push_back(name);
        for (const char* name : features::kFeatureNames)
            header_expect.push_back(std::string("norm_") + name);
        r.expect_header(header_expect);
        std::map<std::string, std::vector<std::array<double, features::kNumFeatures>>> by_battery;
        std::vector<std::string> row;
        while (r.next_row(row)) {
            if (row.size() != header_expect.size())
                throw ParseError("features.csv: wrong column count at line " +
                                 std::to_string(r.line_number()));
            const double horizon = r.to_double(row[1]);
            std::size_t h = nh;
            for (std::size_t k = 0; k < nh; ++k)
                if (cfg_.horizons_days[k] == horizon) h = k;
            if (h == nh) throw ParseError("features.csv: unknown horizon " + row[1]);
            auto& slot = by_battery[row[0]];
            slot.resize(nh);
            for (int j = 0; j < features::kNumFeatures; ++j)
                slot[h][std::size_t(j)] = r.to_double(row[2 + std::size_t(j)]);
        }
        for (const auto& b : index) {
            auto it = by_battery.find(b.battery_id);
            if (it == by_battery.end())
                throw DomainError("classify: features missing for battery " + b.battery_id);
            cv_in.stress.push_back(it->second);
        }
    }

    auto report = eol::run_nested_cv(cv_in, cfg_.cv);

    fs::create_directories(cfg_.work_dir + "/classify");
    report.write_json(cfg_.work_dir + "/classify/report.json");
    {
        csv::Writer w(cfg_.work_dir + "/classify/accuracy.csv");
        w.header({"scenario", "horizon_days", "mean_balanced_accuracy", "std_balanced_accuracy",
                  "n_test_cases"});
        for (const auto& a : report.aggregates) {
            w.field(std::string(eol::kScenarioNames[std::size_t(a.scenario)]));
            w.field(a.horizon_days);
            w.field(a.mean);
            w.field(a.std_dev);
            w.field(std::int64_t(a.n_cases));
            w.end_row();
        }
    }
    {
        csv::Writer w(cfg_.work_dir + "/classify/relevance.csv");
        w.header({"scenario", "input", "mean_inv_length_scale", "std_inv_length_scale"});
        for (const auto& rrow : report.relevance) {
            w.field(std::string(eol::kScenarioNames[std::size_t(rrow.scenario)]));
            w.field(rrow.input_name);
            w.field(rrow.mean_inv_length);
            w.field(rrow.std_inv_length);
            w.end_row();
        }
    }

    Manifest m = make_manifest("classify", inputs, outputs);
    m.counts["test_cases"] = std::int64_t(report.cases.size());
    m.counts["batteries"] = std::int64_t(index.size());
    m.write(manifest_path("classify"));
    return StageStatus::ran;
}

// ---------------------------------------------------------------------------
// report

StageStatus Pipeline::report() {
    require_manifest("calibrate");
    require_manifest("classify");
    require_manifest("features");
    auto index = load_segment_index(cfg_.work_dir + "/segments/index.json");

    std::vector<std::string> inputs = {
        cfg_.work_dir + "/classify/accuracy.csv",   cfg_.work_dir + "/classify/relevance.csv",
        cfg_.work_dir + "/classify/report.json",    cfg_.work_dir + "/slices_temperature.csv",
        cfg_.work_dir + "/slices_current.csv",      cfg_.work_dir + "/slices_concentration.csv",
        cfg_.work_dir + "/feature_correlations.csv"};
    for (const auto& b : index)
        inputs.push_back(cfg_.work_dir + "/trajectories/" + b.battery_id + ".json");
    const std::string truth_path = cfg_.input_dir + "/ground_truth.csv";
    const bool have_truth = fs::exists(truth_path);
    if (have_truth) inputs.push_back(truth_path);

    std::vector<std::string> outputs = {
        cfg_.output_dir + "/accuracy.csv", cfg_.output_dir + "/relevance.csv",
        cfg_.output_dir + "/slices_temperature.csv", cfg_.output_dir + "/slices_current.csv",
        cfg_.output_dir + "/slices_concentration.csv",
        cfg_.output_dir + "/feature_correlations.csv", cfg_.output_dir + "/summary.txt"};
    for (const auto& b : index)
        outputs.push_back(cfg_.output_dir + "/trajectories/" + b.battery_id + ".csv");
    if (have_truth) outputs.push_back(cfg_.output_dir + "/recovery.csv");
    if (up_to_date("report", inputs, outputs)) return StageStatus::skipped_up_to_date;

    fs::create_directories(cfg_.output_dir + "/trajectories");
    for (const char* name : {"accuracy.csv", "relevance.csv", "slices_temperature.csv",
                             "slices_current.csv", "slices_concentration.csv",
                             "feature_correlations.csv"}) {
        const std::string src = std::string(name).rfind("slices", 0) == 0 ||
                                        std::string(name) == "feature_correlations.csv"
                                    ? cfg_.work_dir + "/" + name
                                    : cfg_.work_dir + "/classify/" + name;
        fs::copy_file(src, cfg_.output_dir + "/" + name, fs::copy_options::overwrite_existing);
    }

    // Per-battery trajectory CSVs in day units.
    const double day_per_norm = kTimeScaleSeconds / 86400.0;
    std::vector<population::HealthTrajectory> trajectories(index.size());
    parallel_for(index.size(), cfg_.jobs, [&](std::size_t bi) {
        trajectories[bi] = population::HealthTrajectory::from_json_file(
            cfg_.work_dir + "/trajectories/" + index[bi].battery_id + ".json");
        csv::Writer w(cfg_.output_dir + "/trajectories/" + index[bi].battery_id + ".csv");
        w.header({"t_days", "r0_mean_ohm", "r0_sd_ohm", "drdt_mean_ohm_per_day",
                  "drdt_sd_ohm_per_day"});
        for (const auto& p : trajectories[bi].points) {
            w.field(p.age_seconds / 86400.0);
            w.field(p.r0_mean);
            w.field(std::sqrt(std::max(0.0, p.r0_var)));
            w.field(p.drdt_mean / day_per_norm);
            w.field(std::sqrt(std::max(0.0, p.drdt_var)) / day_per_norm);
            w.end_row();
        }
    });

    std::string recovery_summary;
    if (have_truth) {
        auto truth = fleet::load_ground_truth(truth_path);
        std::map<std::string, const fleet::TruthSeries*> truth_by_id;
        for (const auto& [id, series] : truth) truth_by_id[id] = &series;
        csv::Writer w(cfg_.output_dir + "/recovery.csv");
        w.header({"battery_id", "rmse_ohm", "coverage_2sigma", "truth_range_ohm",
                  "rmse_over_range"});
        std::size_t within = 0;
        double cov_sum = 0;
        std::size_t cov_n = 0, pooled_cov = 0, pooled_n = 0;
        for (std::size_t bi = 0; bi < index.size(); ++bi) {
            auto it = truth_by_id.find(index[bi].battery_id);
            if (it == truth_by_id.end()) continue;
            auto mtr = fleet::ground_truth_compare(trajectories[bi], index[bi].battery_id,
                                                   *it->second);
            w.field(mtr.battery_id);
            w.field(mtr.rmse);
            w.field(mtr.coverage);
            w.field(mtr.truth_range);
            w.field(mtr.truth_range > 0 ? mtr.rmse / mtr.truth_range : 0.0);
            w.end_row();
            if (mtr.truth_range > 0 && mtr.rmse <= 0.1 * mtr.truth_range) ++within;
            cov_sum += mtr.coverage;
            ++cov_n;
            pooled_cov += std::size_t(std::llround(mtr.coverage * double(mtr.n_points)));
            pooled_n += mtr.n_points;
        }
        recovery_summary = "recovery: " + std::to_string(within) + "/" + std::to_string(cov_n) +
                           " batteries within 10% RMSE of truth range, pooled 2-sigma coverage " +
                           csv::format_double(pooled_n ? double(pooled_cov) / double(pooled_n) : 0.0) +
                           "\n";
    }

    {
        auto rep = eol::EvalReport::from_json_file(cfg_.work_dir + "/classify/report.json");
        std::ofstream out(cfg_.output_dir + "/summary.txt");
        out << "batteries: " << index.size() << "\n";
        out << "test cases: " << rep.cases.size() << "\n";
        out << recovery_summary;
        out << "balanced accuracy by scenario and horizon:\n";
        for (const auto& a : rep.aggregates) {
            out << "  " << eol::kScenarioNames[std::size_t(a.scenario)] << " @ " << a.horizon_days
                << "d: mean " << csv::format_double(a.mean) << " std "
                << csv::format_double(a.std_dev) << " (" << a.n_cases << " cases)\n";
        }
    }

    Manifest m = make_manifest("report", inputs, outputs);
    m.counts["batteries"] = std::int64_t(index.size());
    m.write(manifest_path("report"));
    return StageStatus::ran;
}

}  // namespace soh::pipeline
