#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "soh/classifier.hpp"
#include "soh/common.hpp"
#include "soh/features.hpp"
#include "soh/population.hpp"
#include "soh/soc.hpp"
#include "soh/ssgp.hpp"
#include "soh/synthfleet.hpp"
#include "soh/telemetry.hpp"

namespace soh::pipeline {

struct PipelineConfig {
    std::string input_dir = "fleet";
    std::string work_dir = "work";
    std::string output_dir = "out";
    std::string ocv_file;      // empty = built-in default curve
    std::string gassing_file;  // empty = built-in defaults

    std::uint64_t seed = 7;
    int jobs = 1;

    telemetry::TelemetryConfig telemetry;
    ssgp::SsgpConfig ssgp;
    population::PopulationConfig population;
    features::FeatureConfig features;
    eol::CvConfig cv;
    fleet::FleetConfig fleet;
    std::vector<double> horizons_days = {0, 14, 28, 42, 56};

    void validate() const;
    // Semantic config serialization; paths excluded so runs in different
    // directories hash identically.
    nlohmann::json to_json() const;
    static PipelineConfig from_json_file(const std::string& path);
    static PipelineConfig from_json(const nlohmann::json& j);

    soc::OcvCurve load_ocv() const;
    soc::GassingParams load_gassing() const;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

struct Manifest {
    std::string stage;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;   // role-relative path -> content hash
    std::map<std::string, std::string> outputs;
    std::map<std::string, std::int64_t> counts;

    void write(const std::string& path) const;
    static std::optional<Manifest> load(const std::string& path);
};

// Runs callable over [0, n) on a small worker pool; rethrows the first error.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

enum class StageStatus { ran, skipped_up_to_date };

class Pipeline {
public:
    Pipeline(PipelineConfig cfg, bool force = false);

    StageStatus simulate();
    StageStatus ingest();
    StageStatus fit();
    StageStatus calibrate();
    StageStatus features();
    StageStatus classify();
    StageStatus report();

    // Runs one named stage (simulate|ingest|fit|calibrate|features|classify|report).
    StageStatus run(const std::string& stage);

    const PipelineConfig& config() const { return cfg_; }

private:
    PipelineConfig cfg_;
    bool force_;
    std::string config_hash_;

    std::string manifest_path(const std::string& stage) const;
    std::string rel(const std::string& abs_path) const;
    bool up_to_date(const std::string& stage, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) const;
    Manifest make_manifest(const std::string& stage, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) const;
    void require_manifest(const std::string& stage) const;
    std::vector<std::string> telemetry_files() const;
};

// Battery index entry persisted by the ingest stage.
struct SegmentInfo {
    int segment_id = 0;
    std::int64_t start_ts = 0;
    double age_seconds = 0;
    int n_steps = 0;
};

struct BatteryIndex {
    std::string battery_id;
    std::int64_t bol_ts = 0;
    std::int64_t end_ts = 0;
    std::int64_t n_records = 0;
    std::int64_t dropped_out_of_range = 0;
    std::int64_t duplicates_collapsed = 0;
    std::vector<SegmentInfo> segments;
};

std::vector<BatteryIndex> load_segment_index(const std::string& path);

}  // namespace soh::pipeline
