// tgv: synthesize event streams, run the sttf/anc engines over them,
// verify the numeric oracles, and train the toy tasks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tgv/bench.hpp"
#include "tgv/checkpoint.hpp"
#include "tgv/error.hpp"
#include "tgv/train.hpp"
#include "tgv/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitConfigError = 2;

std::string default_out_dir() {
    const char* env = std::getenv("TGV_OUT_DIR");
    return env != nullptr && *env != '\0' ? env : ".";
}

int cmd_synth(const std::string& out_path, std::string sidecar_path, tgv::SynthSceneConfig cfg,
              bool solve_activity) {
    if (solve_activity) {
        cfg = tgv::solve_activity_config(cfg.height, cfg.width, cfg.patch_size, cfg.frames,
                                         cfg.activity_fraction, cfg.seed);
    }
    tgv::SynthStream stream = tgv::synth_stream(cfg);
    tgv::write_stream_file(out_path, tgv::to_event_stream(stream));
    if (sidecar_path.empty()) sidecar_path = out_path + ".json";
    std::ofstream f(sidecar_path, std::ios::binary | std::ios::trunc);
    if (!f) throw tgv::Error("synth: cannot write sidecar '" + sidecar_path + "'");
    f << tgv::sidecar_json(stream);
    std::printf("wrote %s (%zu events, %u frames) and %s\n", out_path.c_str(),
                stream.records.size(), cfg.frames, sidecar_path.c_str());
    std::printf("measured activity %.4f (target %.4f)\n", stream.measured_activity,
                cfg.activity_fraction);
    return kExitOk;
}

int cmd_run(const tgv::RunConfig& cfg) {
    tgv::BenchReport report = tgv::run_benchmark(cfg);
    const std::string base = cfg.report_name.empty() ? report.mode + "_report" : cfg.report_name;
    tgv::write_report_files(report, cfg.out_dir, base);
    std::printf("mode=%s frames=%u mean_active_tokens=%.2f token_reduction=%.4f\n",
                report.mode.c_str(), report.frames, report.mean_active_tokens,
                report.token_reduction);
    std::printf("total_flops=%llu baseline_flops=%llu flops_reduction=%.4f\n",
                (unsigned long long)report.total_flops, (unsigned long long)report.baseline_flops,
                report.flops_reduction_vs_dense);
    std::printf("frames_per_sec=%.2f (informational; not part of the report files)\n",
                report.frames_per_sec);
    std::printf("reports: %s/%s.json, %s/%s.csv\n", cfg.out_dir.c_str(), base.c_str(),
                cfg.out_dir.c_str(), base.c_str());
    return kExitOk;
}

int cmd_verify(uint64_t seed, const std::string& checkpoint_path) {
    if (!checkpoint_path.empty()) {
        // refuse corrupt inputs up front
        tgv::load_checkpoint_file(checkpoint_path);
        std::printf("checkpoint %s parsed cleanly\n", checkpoint_path.c_str());
    }
    auto results = tgv::verify::run_all(seed);
    for (const auto& r : results) {
        std::printf("[%s] %-26s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    }
    if (!tgv::verify::all_pass(results)) {
        std::string failing;
        for (const auto& r : results) {
            if (!r.pass) failing += (failing.empty() ? "" : ", ") + r.name;
        }
        std::printf("verification FAILED: %s\n", failing.c_str());
        return kExitVerifyFailure;
    }
    std::printf("all %zu checks passed\n", results.size());
    return kExitOk;
}

int cmd_train(tgv::TrainConfig cfg, const std::string& metrics_path,
              const std::string& save_path) {
    tgv::Trainer trainer(cfg);
    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::binary | std::ios::trunc);
        if (!metrics) throw tgv::Error("train: cannot write '" + metrics_path + "'");
    }
    for (uint32_t i = 0; i < cfg.steps; ++i) {
        tgv::StepReport rep = trainer.step();
        nlohmann::ordered_json j{{"step", rep.step},
                                 {"task_loss", rep.surrogates.task_loss},
                                 {"token_l0_relaxed", rep.surrogates.token_l0_relaxed},
                                 {"gate_l0_relaxed", rep.surrogates.gate_l0_relaxed},
                                 {"total", rep.surrogates.total}};
        const std::string line = j.dump();
        if (metrics.is_open()) {
            metrics << line << "\n";
        }
        if (i % 20 == 0 || i + 1 == cfg.steps) std::printf("%s\n", line.c_str());
    }
    if (cfg.task.kind == tgv::ToyTaskKind::motion_direction) {
        std::printf("val_accuracy=%.4f\n", trainer.val_accuracy());
    }
    if (!save_path.empty()) {
        tgv::save_checkpoint_file(save_path, trainer.model().named_params());
        std::printf("saved model to %s\n", save_path.c_str());
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-gated sparse inference bench"};
    app.require_subcommand(1);
    // key=value file with a [synth]/[run]/[verify]/[train] section; must be
    // passed before the subcommand name: tgv --config run.conf run
    app.set_config("--config");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate an EVS1 stream plus ground-truth sidecar");
    std::string synth_out = "stream.evs1", synth_sidecar;
    tgv::SynthSceneConfig scfg;
    std::string object_kind = "flicker";
    bool solve_activity = true;
    synth->add_option("--out", synth_out, "output EVS1 path");
    synth->add_option("--sidecar", synth_sidecar, "sidecar path (default <out>.json)");
    synth->add_option("--height", scfg.height);
    synth->add_option("--width", scfg.width);
    synth->add_option("--frames", scfg.frames);
    synth->add_option("--patch", scfg.patch_size);
    synth->add_option("--activity", scfg.activity_fraction, "target active-patch fraction");
    synth->add_option("--object", object_kind, "square|dot|flicker");
    synth->add_option("--object-size", scfg.object_size);
    synth->add_option("--speed", scfg.speed, "pixels per frame");
    synth->add_option("--direction", scfg.direction, "-1 seeded, 0..3 = +x,-x,+y,-y");
    synth->add_option("--seed", scfg.seed);
    synth->add_flag("!--no-solve", solve_activity,
                    "use the object/size/speed flags verbatim instead of solving for the activity target");

    // ---- run ----
    auto* run = app.add_subcommand("run", "stream frames through an engine and write reports");
    tgv::RunConfig rcfg;
    rcfg.out_dir = default_out_dir();
    std::string run_object = "flicker";
    bool run_solve = true;
    run->add_option("--mode", rcfg.mode, "sttf|anc|dense-baseline")->required();
    run->add_option("--stream", rcfg.stream_path, "EVS1 input (needs --sidecar)");
    run->add_option("--sidecar", rcfg.sidecar_path);
    run->add_option("--height", rcfg.synth.height);
    run->add_option("--width", rcfg.synth.width);
    run->add_option("--frames", rcfg.synth.frames);
    run->add_option("--patch", rcfg.synth.patch_size);
    run->add_option("--activity", rcfg.synth.activity_fraction);
    run->add_option("--object", run_object);
    run->add_option("--object-size", rcfg.synth.object_size);
    run->add_option("--speed", rcfg.synth.speed);
    run->add_option("--synth-seed", rcfg.synth.seed);
    run->add_flag("!--no-solve", run_solve, "use synth flags verbatim");
    run->add_option("--checkpoint", rcfg.checkpoint_path);
    run->add_option("--seed", rcfg.seed, "model init seed");
    run->add_option("--tau", rcfg.tau, "fusion threshold");
    run->add_flag("--tau-policy", rcfg.use_tau_policy, "adapt tau with the policy network");
    run->add_option("--gamma", rcfg.gamma, "stale-key attention penalty");
    run->add_option("--budget", rcfg.budget, "budget signal in [0,1]");
    run->add_option("--dim", rcfg.dim);
    run->add_option("--depth", rcfg.depth);
    run->add_option("--dec-layers", rcfg.dec_layers);
    run->add_option("--out-dir", rcfg.out_dir);
    run->add_option("--report-name", rcfg.report_name);

    // ---- verify ----
    auto* verify = app.add_subcommand("verify", "run the numeric oracle suite");
    uint64_t verify_seed = 7;
    std::string verify_checkpoint;
    verify->add_option("--seed", verify_seed);
    verify->add_option("--checkpoint", verify_checkpoint, "parse this checkpoint first");

    // ---- train ----
    auto* train = app.add_subcommand("train", "toy-task training with the composite loss");
    tgv::TrainConfig tcfg;
    std::string task_name = "motion", metrics_path, save_path;
    train->add_option("--task", task_name, "motion|echo");
    train->add_option("--steps", tcfg.steps);
    train->add_option("--lr", tcfg.lr);
    train->add_option("--batch", tcfg.batch_size);
    train->add_option("--lambda1", tcfg.loss.lambda1, "token sparsity weight");
    train->add_option("--lambda2", tcfg.loss.lambda2, "gate sparsity weight");
    train->add_option("--latency-weight", tcfg.loss.latency_weight);
    train->add_option("--budget", tcfg.budget);
    train->add_option("--seed", tcfg.seed);
    train->add_option("--dataset-seed", tcfg.task.dataset_seed);
    train->add_option("--train-size", tcfg.task.train_size);
    train->add_option("--val-size", tcfg.task.val_size);
    train->add_option("--metrics", metrics_path, "line-delimited JSON metrics output");
    train->add_option("--save-checkpoint", save_path);

    try {
        app.parse(argc, argv);
        if (synth->parsed()) {
            scfg.object = tgv::object_kind_from_string(object_kind);
            return cmd_synth(synth_out, synth_sidecar, scfg, solve_activity);
        }
        if (run->parsed()) {
            rcfg.synth.object = tgv::object_kind_from_string(run_object);
            if (rcfg.stream_path.empty() && run_solve) {
                rcfg.synth = tgv::solve_activity_config(rcfg.synth.height, rcfg.synth.width,
                                                        rcfg.synth.patch_size, rcfg.synth.frames,
                                                        rcfg.synth.activity_fraction,
                                                        rcfg.synth.seed);
            }
            return cmd_run(rcfg);
        }
        if (verify->parsed()) return cmd_verify(verify_seed, verify_checkpoint);
        if (train->parsed()) {
            if (task_name == "motion") {
                tcfg.task.kind = tgv::ToyTaskKind::motion_direction;
            } else if (task_name == "echo") {
                tcfg.task.kind = tgv::ToyTaskKind::token_echo;
            } else {
                throw tgv::ParamError("train: unknown task '" + task_name + "' (motion|echo)");
            }
            return cmd_train(tcfg, metrics_path, save_path);
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfigError;
    } catch (const tgv::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    }
    return kExitOk;
}
