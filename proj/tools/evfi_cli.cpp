// evfi: command-line front end for simulation, training, interpolation and evaluation.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "evfi/checkpoint.hpp"
#include "evfi/config.hpp"
#include "evfi/eval.hpp"
#include "evfi/gradient_suite.hpp"
#include "evfi/sequence_io.hpp"
#include "evfi/training.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using namespace evfi;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3;

/// Output sink that refuses paths outside the --out directory.
class OutDir {
public:
    explicit OutDir(const std::string& dir) {
        if (dir.empty()) throw UsageError("--out is required");
        root_ = fs::weakly_canonical(fs::absolute(dir));
        fs::create_directories(root_);
    }
    fs::path operator/(const std::string& name) const {
        const fs::path p = fs::weakly_canonical(root_ / name);
        const auto rel = p.lexically_relative(root_);
        if (rel.empty() || *rel.begin() == "..") throw UsageError("refusing to write outside --out: " + p.string());
        return p;
    }
    const fs::path& root() const { return root_; }

private:
    fs::path root_;
};

RunConfig load_config(const std::string& path) {
    RunConfig c = path.empty() ? RunConfig{} : parse_run_config(read_text_file(path));
    apply_environment(c);
    validate(c);
    return c;
}

BiOFNet load_flow_net(const RunConfig& c, const std::string& path) {
    BiOFNet net(c.flow_config(), c.seed);
    net.params.load_values(load_checkpoint(path));
    return net;
}

SynthNet load_synth_net(const RunConfig& c, const std::string& path) {
    SynthNet net(c.synth_config(), c.seed);
    net.params.load_values(load_checkpoint(path));
    return net;
}

std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Training and held-out data come from disjoint seed streams.
std::vector<ToySequence> training_data(const RunConfig& c) {
    return make_toy_dataset(parse_toy_kind(c.kind), c.sequences, c.size, c.seed, c.toy_options());
}
std::vector<ToySequence> heldout_data(const RunConfig& c) {
    return make_toy_dataset(parse_toy_kind(c.kind), 8, c.size, c.seed ^ 0x5eed5eed5eedULL, c.toy_options());
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string frames, kind, out;
    double threshold = -1.0;
};

int cmd_simulate(const RunConfig& c, const SimulateArgs& a) {
    const OutDir out(a.out);
    const double threshold = a.threshold > 0 ? a.threshold : c.contrast_threshold;
    if (!a.frames.empty()) {
        FrameSequence seq = read_sequence(a.frames);
        const EventStream ev = simulate_sequence_events(seq.frames, seq.timestamps, threshold);
        write_events(out / "events.evt1", ev);
        std::cout << "simulated " << ev.size() << " events from " << seq.frames.size() << " frames -> "
                  << (out / "events.evt1").string() << "\n";
        return kExitOk;
    }
    ToyOptions opt = c.toy_options();
    opt.contrast_threshold = threshold;
    const ToySequence toy = make_toy_sequence(parse_toy_kind(a.kind.empty() ? c.kind : a.kind), c.size, c.seed, opt);
    write_sequence(out.root(), {toy.frames, toy.timestamps, toy.events});
    write_flo(out / "flow_t0_mid.flo", toy.flow_to_key(0.5, 0));
    write_flo(out / "flow_t1_mid.flo", toy.flow_to_key(0.5, 1));
    std::cout << "toy " << to_string(toy.kind) << " sequence: " << toy.frames.size() << " frames, " << toy.events.size()
              << " events -> " << out.root().string() << "\n";
    return kExitOk;
}

struct VoxelizeArgs {
    std::string events, out;
    std::size_t bins = 0;
    std::int64_t t0 = -1, t1 = -1;
};

int cmd_voxelize(const RunConfig& c, const VoxelizeArgs& a) {
    const OutDir out(a.out);
    const EventStream s = read_events(a.events);
    const std::uint64_t t0 = a.t0 >= 0 ? static_cast<std::uint64_t>(a.t0) : s.t_start();
    const std::uint64_t t1 = a.t1 >= 0 ? static_cast<std::uint64_t>(a.t1) : s.t_end();
    const std::size_t bins = a.bins ? a.bins : c.event_bins;
    if (t1 <= t0) throw UsageError("voxelize needs t1 > t0");
    const VoxelGrid g = voxelize(s.window(t0, t1), t0, t1, bins, s.height(), s.width());
    write_file(out / "voxels.vox", encode_voxels(g, t0, t1));
    std::cout << "voxel grid " << bins << "x" << s.height() << "x" << s.width() << " over [" << t0 << ", " << t1
              << "] from " << s.size() << " events -> " << (out / "voxels.vox").string() << "\n";
    return kExitOk;
}

struct TrainArgs {
    int stage = 0;
    std::string out, flow;
};

int cmd_train(RunConfig c, const TrainArgs& a) {
    const OutDir out(a.out);
    c.stage = a.stage;
    TrainConfig tc = c.train_config();
    const auto data = training_data(c);
    const auto held = heldout_data(c);
    auto progress = [&](std::size_t step, double loss) {
        if (step % 100 == 0 || step + 1 == tc.steps) std::cout << "step " << step << " loss " << loss << "\n";
    };
    std::ostringstream summary;
    summary.precision(6);
    if (a.stage == 1) {
        BiOFNet net(c.flow_config(), c.seed);
        const TrainResult r = train_stage_one(net, data, tc, progress);
        net.params.round_to_f32();
        save_checkpoint(out / "flow.ckpt", net.params);
        write_text_file(out / "loss.csv", loss_csv(r.losses));
        const FlowEval e = evaluate_flows(net, held);
        summary << "stage 1: " << r.losses.size() << " steps in " << r.seconds << " s\n"
                << "held-out EPE " << e.epe << " px (event-only " << e.epe_event << ", fused " << e.epe_fused << ")\n"
                << "flow checkpoint digest " << hex(checkpoint_digest(net.params)) << "\n";
    } else {
        if (a.flow.empty()) throw UsageError("train --stage 2 needs --flow <checkpoint from stage 1>");
        const BiOFNet flow = load_flow_net(c, a.flow);
        const std::uint64_t before = checkpoint_digest(flow.params);
        SynthNet net(c.synth_config(), c.seed);
        const TrainResult r = train_stage_two(flow, net, data, tc, progress);
        if (checkpoint_digest(flow.params) != before) throw NumericalError("stage 2 modified the flow network");
        net.params.round_to_f32();
        save_checkpoint(out / "synth.ckpt", net.params);
        write_text_file(out / "loss.csv", loss_csv(r.losses));
        const SynthEval e = evaluate_synthesis(flow, net, held);
        summary << "stage 2: " << r.losses.size() << " steps in " << r.seconds << " s\n"
                << "held-out PSNR " << e.psnr << " dB, SSIM " << e.ssim << " (frame average " << e.baseline_psnr
                << " dB, " << e.baseline_ssim << ")\n"
                << "flow checkpoint digest " << hex(before) << " (unchanged)\n";
    }
    write_text_file(out / "config.txt", serialize_run_config(c));
    write_text_file(out / "summary.txt", summary.str());
    std::cout << summary.str();
    return kExitOk;
}

struct InterpolateArgs {
    std::string frame0, frame1, events, flow, synth, reference, out;
    double t = 0.5;
};

int cmd_interpolate(const RunConfig& c, const InterpolateArgs& a) {
    if (!(a.t > 0.0 && a.t < 1.0)) throw UsageError("--t must lie strictly between 0 and 1");
    const OutDir out(a.out);
    const Frame i0 = read_image(a.frame0), i1 = read_image(a.frame1);
    const EventStream ev = a.events.empty() ? EventStream(i0.width(), i0.height(), 0, c.toy_options().interval_us)
                                            : read_events(a.events);
    const BiOFNet flow = load_flow_net(c, a.flow);
    const SynthNet synth = load_synth_net(c, a.synth);
    const double span = static_cast<double>(ev.t_end() - ev.t_start());
    const auto t_abs = ev.t_start() + static_cast<std::uint64_t>(std::llround(a.t * span));
    if (t_abs <= ev.t_start() || t_abs >= ev.t_end()) throw UsageError("--t falls on the edge of the event window");
    const Interpolation r = interpolate(flow, synth, make_network_inputs(i0, i1, ev, t_abs, c.event_bins));
    for (std::size_t s = 0; s < kScales; ++s) {
        const Tensor& f = r.frames.frames[s];
        const Frame frame(reshape(f, {f.size(1), f.size(2), f.size(3)}));
        write_image(out / ("interp_s" + std::to_string(s) + ".ppm"), frame);
    }
    const auto [v0, v1] = full_resolution_flows(r.flows);
    write_flo(out / "flow_t0.flo", FlowField(reshape(v0, {2, v0.size(2), v0.size(3)})));
    write_flo(out / "flow_t1.flo", FlowField(reshape(v1, {2, v1.size(2), v1.size(3)})));
    std::cout << "interpolated t=" << a.t << " (" << t_abs << " us) -> " << out.root().string() << "\n";
    const Tensor pred = r.frames.frames[kScales - 1];
    const Frame ref = a.reference.empty() ? i0 : read_image(a.reference);
    std::cout << "psnr vs " << (a.reference.empty() ? "frame0" : "reference") << " " << psnr(pred, ref.batched())
              << " dB\n";
    return kExitOk;
}

struct EvalArgs {
    std::string skips, mode, flow, synth, data, out;
};

std::vector<std::size_t> parse_skips(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : evfi::detail::split_list(s)) {
        out.push_back(evfi::detail::parse_number<std::size_t>("--skips", item));
        if (out.back() == 0) throw UsageError("--skips values must be positive");
    }
    if (out.empty()) throw UsageError("--skips needs at least one value");
    return out;
}

int cmd_eval(const RunConfig& c, const EvalArgs& a) {
    const OutDir out(a.out);
    const auto skips = a.skips.empty() ? c.skips : parse_skips(a.skips);
    const EvalMode mode = parse_eval_mode(a.mode.empty() ? c.mode : a.mode);
    const BiOFNet flow = load_flow_net(c, a.flow);
    const SynthNet synth = load_synth_net(c, a.synth);
    const std::string data_dir = a.data.empty() ? c.data_dir : a.data;
    FrameSequence seq;
    if (!data_dir.empty()) {
        seq = read_sequence(data_dir);
    } else {
        // A held-out toy sequence long enough for the largest skip, twice over.
        ToyOptions opt = c.toy_options();
        const std::size_t need = 2 * (*std::max_element(skips.begin(), skips.end()) + 1);
        opt.intervals = (need + opt.substeps - 1) / opt.substeps;
        const auto toy = make_toy_sequence(parse_toy_kind(c.kind), c.size, c.seed ^ 0xe7a1ULL, opt);
        seq = {toy.frames, toy.timestamps, toy.events};
    }
    std::vector<SkipRow> rows;
    for (std::size_t skip : skips) rows.push_back(skip_eval(flow, synth, seq, skip, mode));
    write_text_file(out / "metrics.csv", metrics_csv(rows));
    std::printf("%6s %8s %10s %8s %8s\n", "skip", "mode", "psnr_db", "ssim", "frames");
    for (const auto& r : rows) {
        std::printf("%6zu %8s %10.3f %8.4f %8zu\n", r.skip, to_string(r.mode).c_str(), r.psnr, r.ssim, r.n_frames);
    }
    return kExitOk;
}

int cmd_gradcheck(const std::string& out_dir, std::uint64_t seed) {
    const auto entries = run_gradient_suite(seed);
    std::ostringstream os;
    bool ok = true;
    for (const auto& e : entries) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-24s max_rel_err %.3e  tol %.0e  coords %5zu  %s\n", e.op.c_str(),
                      e.max_rel_error, e.tolerance, e.coords, e.pass() ? "PASS" : "FAIL");
        os << line;
        ok = ok && e.pass();
    }
    std::cout << os.str();
    if (!out_dir.empty()) write_text_file(OutDir(out_dir) / "gradcheck.txt", os.str());
    return ok ? kExitOk : kExitNumerical;
}

int cmd_selftest(const std::string& out_dir, std::uint64_t seed) {
    const auto results = cli::run_property_suite(seed);
    std::ostringstream os;
    bool ok = true;
    for (const auto& r : results) {
        os << (r.pass ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) os << " (" << r.detail << ")";
        os << "\n";
        ok = ok && r.pass;
    }
    std::cout << os.str();
    if (!out_dir.empty()) write_text_file(OutDir(out_dir) / "selftest.txt", os.str());
    return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evfi: event-based video frame interpolation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "key = value run configuration file");

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "frames -> EVT1 events (or a generated toy sequence)");
    c_sim->add_option("--frames", sim.frames, "sequence directory with frame_*.ppm and timestamps.txt");
    c_sim->add_option("--kind", sim.kind, "toy kind when --frames is absent: translate, rotate, static");
    c_sim->add_option("--threshold", sim.threshold, "contrast threshold (default from config)");
    c_sim->add_option("--out", sim.out, "output directory")->required();

    VoxelizeArgs vox;
    auto* c_vox = app.add_subcommand("voxelize", "EVT1 events -> voxel grid dump");
    c_vox->add_option("--events", vox.events, "EVT1 file")->required();
    c_vox->add_option("--bins", vox.bins, "temporal bins (default from config)");
    c_vox->add_option("--t0", vox.t0, "window start in us (default stream start)");
    c_vox->add_option("--t1", vox.t1, "window end in us (default stream end)");
    c_vox->add_option("--out", vox.out, "output directory")->required();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "train on generated toy sequences");
    c_train->add_option("--stage", tr.stage, "1 = flow network, 2 = synthesis network")
        ->required()
        ->check(CLI::IsMember({1, 2}));
    c_train->add_option("--flow", tr.flow, "stage-one checkpoint (stage 2)");
    c_train->add_option("--out", tr.out, "output directory")->required();

    InterpolateArgs ip;
    auto* c_ip = app.add_subcommand("interpolate", "two frames + events -> intermediate frame at every scale");
    c_ip->add_option("--frame0", ip.frame0, "first key frame (PPM/PGM)")->required();
    c_ip->add_option("--frame1", ip.frame1, "second key frame (PPM/PGM)")->required();
    c_ip->add_option("--events", ip.events, "EVT1 events spanning the two frames (default: none)");
    c_ip->add_option("--flow", ip.flow, "flow network checkpoint")->required();
    c_ip->add_option("--synth", ip.synth, "synthesis network checkpoint")->required();
    c_ip->add_option("--t", ip.t, "normalized time in (0, 1)")->capture_default_str();
    c_ip->add_option("--reference", ip.reference, "ground-truth frame to score against");
    c_ip->add_option("--out", ip.out, "output directory")->required();

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "frame-skip evaluation");
    c_eval->add_option("--skips", ev.skips, "comma-separated skip counts (default from config)");
    c_eval->add_option("--mode", ev.mode, "middle or whole (default from config)");
    c_eval->add_option("--flow", ev.flow, "flow network checkpoint")->required();
    c_eval->add_option("--synth", ev.synth, "synthesis network checkpoint")->required();
    c_eval->add_option("--data", ev.data, "sequence directory (default: generated toy sequence)");
    c_eval->add_option("--out", ev.out, "output directory")->required();

    std::string gc_out, st_out;
    auto* c_gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    c_gc->add_option("--out", gc_out, "optional report directory");
    auto* c_st = app.add_subcommand("selftest", "property checks");
    c_st->add_option("--out", st_out, "optional report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        const RunConfig cfg = load_config(config_path);
        if (c_sim->parsed()) return cmd_simulate(cfg, sim);
        if (c_vox->parsed()) return cmd_voxelize(cfg, vox);
        if (c_train->parsed()) return cmd_train(cfg, tr);
        if (c_ip->parsed()) return cmd_interpolate(cfg, ip);
        if (c_eval->parsed()) return cmd_eval(cfg, ev);
        if (c_gc->parsed()) return cmd_gradcheck(gc_out, cfg.seed);
        if (c_st->parsed()) return cmd_selftest(st_out, cfg.seed);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    std::cerr << app.help();
    return kExitUsage;
}
