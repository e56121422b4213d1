#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tgv/anc.hpp"
#include "tgv/event_io.hpp"
#include "tgv/sttf.hpp"

namespace tgv {

// End-to-end benchmark drivers. Reports are deterministic for a fixed
// (config, seed): wall-clock throughput is surfaced separately and never
// serialized into the report files.

struct RunConfig {
    std::string mode = "sttf"; // sttf | anc | dense-baseline
    // stream source: exactly one of (stream_path, synth)
    std::string stream_path;  // EVS1 file; requires sidecar_path
    std::string sidecar_path; // JSON sidecar written by the synth command
    SynthSceneConfig synth;   // used when stream_path is empty

    std::string checkpoint_path; // optional model weights
    uint64_t seed = 42;          // model init seed
    float tau = 0.9f;
    bool use_tau_policy = false;
    float gamma = 1.0f;
    float budget = 0.5f;

    uint32_t dim = 64, depth = 2, dec_layers = 2, vocab = 256, context = 16;

    std::string out_dir = ".";
    std::string report_name; // default: <mode>_report
};

struct FrameRecord {
    uint64_t frame = 0;
    uint32_t active_tokens = 0;
    uint32_t fused_count = 0;
    uint64_t frame_flops = 0;
    double weighted_f = 0.0; // ANC: F for the frame; STTF: frame_flops
    std::array<float, 3> routing_w{};
    std::vector<uint32_t> active_branches;
    std::map<std::string, uint64_t> stage_flops;
};

struct BenchReport {
    uint32_t report_version = 1;
    std::string mode;
    uint64_t seed = 0;
    uint32_t frames = 0;
    uint32_t n_patches = 0;
    std::vector<FrameRecord> records;

    double mean_active_tokens = 0.0;
    double token_reduction = 0.0;         // 1 - mean_active/N
    uint64_t total_flops = 0;
    uint64_t baseline_flops = 0;          // dense / always-Medium replay
    double flops_reduction_vs_dense = 0.0; // 1 - total/baseline
    double frames_per_sec = 0.0;           // informational only, not serialized
};

BenchReport run_benchmark(const RunConfig& cfg);

// Serialization: JSON and CSV carry identical per-frame records, byte
// deterministic for fixed inputs.
std::string report_json(const BenchReport& report);
std::string report_csv(const BenchReport& report);
void write_report_files(const BenchReport& report, const std::string& out_dir,
                        const std::string& base_name);

// Sidecar for synthesized streams: config + ground-truth active patches.
std::string sidecar_json(const SynthStream& stream);
SynthSceneConfig sidecar_parse(const std::string& json_text);

// Aggregates recomputed from the per-frame records (consistency checks).
double recompute_mean_active(const BenchReport& report);
uint64_t recompute_total_flops(const BenchReport& report);

} // namespace tgv
