#include "tgv/bench.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tgv/checkpoint.hpp"
#include "tgv/error.hpp"

namespace tgv {

namespace {

using ordered_json = nlohmann::ordered_json;

SynthStream load_or_generate(const RunConfig& cfg) {
    if (cfg.stream_path.empty()) return synth_stream(cfg.synth);
    if (cfg.sidecar_path.empty()) {
        throw ConfigError("run: a stream file needs its sidecar for frame reconstruction");
    }
    std::ifstream f(cfg.sidecar_path);
    if (!f) throw ConfigError("run: cannot open sidecar '" + cfg.sidecar_path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    SynthSceneConfig scfg = sidecar_parse(text);
    SynthStream stream = synth_stream(scfg);
    EventStream from_file = read_stream_file(cfg.stream_path);
    if (from_file.records != stream.records) {
        throw ConfigError("run: stream file does not match its sidecar configuration");
    }
    return stream;
}

FrameRecord sttf_frame_record(uint64_t frame, const SttfStepResult& r) {
    FrameRecord rec;
    rec.frame = frame;
    rec.active_tokens = r.metrics.active_tokens;
    rec.fused_count = r.metrics.fused_count;
    rec.frame_flops = r.metrics.frame_flops;
    rec.weighted_f = double(r.metrics.frame_flops);
    rec.stage_flops = r.metrics.stage_flops;
    return rec;
}

BenchReport run_sttf(const RunConfig& cfg, bool force_dense) {
    SynthStream stream = load_or_generate(cfg);
    const SynthSceneConfig& scfg = stream.config;

    SttfConfig mcfg;
    mcfg.height = scfg.height;
    mcfg.width = scfg.width;
    mcfg.patch = scfg.patch_size;
    mcfg.dim = cfg.dim;
    mcfg.depth = cfg.depth;
    mcfg.dec_layers = cfg.dec_layers;
    mcfg.vocab = cfg.vocab;
    mcfg.context = cfg.context;
    mcfg.tau = force_dense ? 1.01f : cfg.tau;
    mcfg.use_tau_policy = force_dense ? false : cfg.use_tau_policy;
    mcfg.gamma = cfg.gamma;
    mcfg.seed = cfg.seed;
    SttfModel model = SttfModel::init(mcfg);
    if (!cfg.checkpoint_path.empty()) model.load_state(load_checkpoint_file(cfg.checkpoint_path));

    BenchReport report;
    report.mode = force_dense ? "dense-baseline" : "sttf";
    report.seed = cfg.seed;
    report.frames = scfg.frames;
    report.n_patches = mcfg.n_patches();

    const std::vector<uint32_t> y = {1};
    FlopsLedger ledger;
    TokenBank bank;
    bool have_bank = false;

    const auto t0 = std::chrono::steady_clock::now();
    for (uint32_t f = 0; f < scfg.frames; ++f) {
        if (!force_dense) {
            SttfStepResult r = sttf_step(model, stream.rgb_frames[f], stream.event_frames[f], y,
                                         have_bank ? &bank : nullptr, ledger);
            report.records.push_back(sttf_frame_record(f, r));
            bank = std::move(r.state);
            have_bank = true;
        } else {
            // dense baseline: the gate still runs, but every patch re-encodes
            NoGradGuard inference;
            const auto before = ledger.entries();
            detect_change_mask(stream.event_frames[f], model, ledger);
            ChangeMask all;
            all.pixel = Tensor::full({1, mcfg.height, mcfg.width}, 1.0f);
            all.per_patch.assign(mcfg.n_patches(), 1);
            all.active_count = mcfg.n_patches();
            ActivePatchSet s = extract_active_patches(stream.rgb_frames[f], all, mcfg.patch);
            bank = have_bank ? selective_update(s, all, bank, model, ledger)
                             : full_encode(stream.rgb_frames[f], model, ledger);
            have_bank = true;
            Tensor text = embed_prefix(y, model);
            Tensor h = temporal_cross_attention(bank, text, model, ledger, mcfg.gamma);
            decode(h, y, model, ledger);
            FrameRecord rec;
            rec.frame = f;
            rec.active_tokens = mcfg.n_patches();
            rec.fused_count = 0;
            for (const auto& [stage, count] : ledger.entries()) {
                auto it = before.find(stage);
                const uint64_t delta = count - (it == before.end() ? 0 : it->second);
                if (delta > 0) rec.stage_flops[stage] = delta;
                rec.frame_flops += delta;
            }
            rec.weighted_f = double(rec.frame_flops);
            report.records.push_back(rec);
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    report.frames_per_sec = secs > 0 ? double(scfg.frames) / secs : 0.0;

    double active_sum = 0.0;
    for (const auto& rec : report.records) {
        active_sum += rec.active_tokens;
        report.total_flops += rec.frame_flops;
    }
    report.mean_active_tokens = active_sum / double(report.records.size());
    report.token_reduction = 1.0 - report.mean_active_tokens / double(report.n_patches);

    if (!force_dense) {
        RunConfig base = cfg;
        BenchReport dense = run_sttf(base, true);
        report.baseline_flops = dense.total_flops;
        report.flops_reduction_vs_dense =
            1.0 - double(report.total_flops) / double(dense.total_flops);
    } else {
        report.baseline_flops = report.total_flops;
        report.flops_reduction_vs_dense = 0.0;
    }
    return report;
}

BenchReport run_anc(const RunConfig& cfg) {
    SynthStream stream = load_or_generate(cfg);
    const SynthSceneConfig& scfg = stream.config;

    AncConfig acfg;
    acfg.height = scfg.height;
    acfg.width = scfg.width;
    acfg.seed = cfg.seed;
    AncModel model = AncModel::init(acfg);
    if (!cfg.checkpoint_path.empty()) model.load_state(load_checkpoint_file(cfg.checkpoint_path));

    BenchReport report;
    report.mode = "anc";
    report.seed = cfg.seed;
    report.frames = scfg.frames;
    report.n_patches = 0;

    const std::vector<uint32_t> y = {1};
    const BudgetSignal budget = BudgetSignal::clamped(cfg.budget);
    FlopsLedger ledger, baseline_ledger;

    const auto t0 = std::chrono::steady_clock::now();
    for (uint32_t f = 0; f < scfg.frames; ++f) {
        AncStepResult r = anc_step(model, stream.rgb_frames[f], stream.event_frames[f], y, budget,
                                   ledger);
        FrameRecord rec;
        rec.frame = f;
        rec.active_tokens = 0;
        rec.frame_flops = r.metrics.frame_flops;
        rec.weighted_f = r.flops;
        rec.routing_w = r.metrics.w;
        rec.active_branches = r.metrics.active_branches;
        rec.stage_flops = r.metrics.stage_flops;
        report.records.push_back(std::move(rec));
        report.total_flops += r.metrics.frame_flops;

        AncStepResult rb = anc_step_forced(model, stream.rgb_frames[f], stream.event_frames[f], y,
                                           budget, 2, baseline_ledger);
        report.baseline_flops += rb.metrics.frame_flops;
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    report.frames_per_sec = secs > 0 ? double(scfg.frames) / secs : 0.0;
    report.flops_reduction_vs_dense =
        1.0 - double(report.total_flops) / double(report.baseline_flops);
    return report;
}

} // namespace

BenchReport run_benchmark(const RunConfig& cfg) {
    if (cfg.mode == "sttf") return run_sttf(cfg, false);
    if (cfg.mode == "dense-baseline") return run_sttf(cfg, true);
    if (cfg.mode == "anc") return run_anc(cfg);
    throw ConfigError("run: unknown mode '" + cfg.mode + "' (sttf|anc|dense-baseline)");
}

std::string report_json(const BenchReport& report) {
    ordered_json j;
    j["report_version"] = report.report_version;
    j["mode"] = report.mode;
    j["seed"] = report.seed;
    j["frames"] = report.frames;
    j["n_patches"] = report.n_patches;
    j["aggregates"] = ordered_json{{"mean_active_tokens", report.mean_active_tokens},
                                   {"token_reduction", report.token_reduction},
                                   {"total_flops", report.total_flops},
                                   {"baseline_flops", report.baseline_flops},
                                   {"flops_reduction_vs_dense", report.flops_reduction_vs_dense}};
    ordered_json recs = ordered_json::array();
    for (const auto& r : report.records) {
        ordered_json jr;
        jr["frame"] = r.frame;
        jr["active_tokens"] = r.active_tokens;
        jr["fused_count"] = r.fused_count;
        jr["frame_flops"] = r.frame_flops;
        jr["F"] = r.weighted_f;
        if (report.mode == "anc") {
            jr["routing_w"] = std::vector<float>(r.routing_w.begin(), r.routing_w.end());
            jr["active_branches"] = r.active_branches;
        }
        ordered_json stages;
        for (const auto& [stage, count] : r.stage_flops) stages[stage] = count;
        jr["stage_flops"] = stages;
        recs.push_back(std::move(jr));
    }
    j["records"] = std::move(recs);
    return j.dump(2) + "\n";
}

std::string report_csv(const BenchReport& report) {
    // union of stage names, deterministic order
    std::map<std::string, bool> stages;
    for (const auto& r : report.records) {
        for (const auto& [stage, count] : r.stage_flops) stages[stage] = true;
    }
    std::string out = "frame,active_tokens,fused_count,frame_flops,F";
    if (report.mode == "anc") out += ",w_tiny,w_small,w_medium,active_branches";
    for (const auto& [stage, _] : stages) out += ",stage_" + stage;
    out += "\n";
    char buf[64];
    for (const auto& r : report.records) {
        out += std::to_string(r.frame) + "," + std::to_string(r.active_tokens) + "," +
               std::to_string(r.fused_count) + "," + std::to_string(r.frame_flops);
        snprintf(buf, sizeof(buf), ",%.17g", r.weighted_f);
        out += buf;
        if (report.mode == "anc") {
            for (int i = 0; i < 3; ++i) {
                snprintf(buf, sizeof(buf), ",%.9g", double(r.routing_w[i]));
                out += buf;
            }
            out += ",\"";
            for (size_t i = 0; i < r.active_branches.size(); ++i) {
                if (i) out += ";";
                out += std::to_string(r.active_branches[i]);
            }
            out += "\"";
        }
        for (const auto& [stage, _] : stages) {
            auto it = r.stage_flops.find(stage);
            out += "," + std::to_string(it == r.stage_flops.end() ? 0 : it->second);
        }
        out += "\n";
    }
    return out;
}

void write_report_files(const BenchReport& report, const std::string& out_dir,
                        const std::string& base_name) {
    std::filesystem::create_directories(out_dir);
    const std::string base = out_dir + "/" + base_name;
    {
        std::ofstream f(base + ".json", std::ios::binary | std::ios::trunc);
        if (!f) throw Error("run: cannot write '" + base + ".json'");
        f << report_json(report);
    }
    {
        std::ofstream f(base + ".csv", std::ios::binary | std::ios::trunc);
        if (!f) throw Error("run: cannot write '" + base + ".csv'");
        f << report_csv(report);
    }
}

std::string sidecar_json(const SynthStream& stream) {
    const SynthSceneConfig& c = stream.config;
    ordered_json j;
    j["config"] = ordered_json{{"height", c.height},
                               {"width", c.width},
                               {"frames", c.frames},
                               {"patch_size", c.patch_size},
                               {"activity_fraction", c.activity_fraction},
                               {"object", to_string(c.object)},
                               {"object_size", c.object_size},
                               {"speed", c.speed},
                               {"direction", c.direction},
                               {"seed", c.seed}};
    j["measured_activity"] = stream.measured_activity;
    ordered_json gt = ordered_json::array();
    for (const auto& frame : stream.active_patches) gt.push_back(frame);
    j["active_patches"] = std::move(gt);
    return j.dump(2) + "\n";
}

SynthSceneConfig sidecar_parse(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw FormatError(std::string("sidecar: invalid JSON: ") + e.what());
    }
    if (!j.contains("config")) throw FormatError("sidecar: missing 'config'");
    const auto& c = j["config"];
    SynthSceneConfig cfg;
    cfg.height = c.at("height").get<uint32_t>();
    cfg.width = c.at("width").get<uint32_t>();
    cfg.frames = c.at("frames").get<uint32_t>();
    cfg.patch_size = c.at("patch_size").get<uint32_t>();
    cfg.activity_fraction = c.at("activity_fraction").get<double>();
    cfg.object = object_kind_from_string(c.at("object").get<std::string>());
    cfg.object_size = c.at("object_size").get<uint32_t>();
    cfg.speed = c.at("speed").get<double>();
    cfg.direction = c.at("direction").get<int>();
    cfg.seed = c.at("seed").get<uint64_t>();
    return cfg;
}

double recompute_mean_active(const BenchReport& report) {
    double sum = 0.0;
    for (const auto& r : report.records) sum += r.active_tokens;
    return sum / double(report.records.size());
}

uint64_t recompute_total_flops(const BenchReport& report) {
    uint64_t sum = 0;
    for (const auto& r : report.records) sum += r.frame_flops;
    return sum;
}

} // namespace tgv
