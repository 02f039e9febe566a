#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"

#include "config_io.hpp"
#include "stablevsr/checkpoint.hpp"
#include "stablevsr/evalsuite.hpp"
#include "stablevsr/lipschitz.hpp"
#include "stablevsr/train_run.hpp"
#include "stablevsr/videodata.hpp"

namespace fs = std::filesystem;
using namespace stablevsr;
using namespace stablevsr::cli;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    json config = json::object();

    void load()
    {
        if (!config_path.empty())
            config = load_config(config_path);
    }
    std::uint64_t resolved_seed() const
    {
        if (seed)
            return *seed;
        return config.value("seed", std::uint64_t(0));
    }
    fs::path out_dir(const std::string& fallback) const
    {
        if (!out.empty())
            return out;
        if (config.contains("out"))
            return config.at("out").get<std::string>();
        if (fallback.empty())
            throw UsageError("an output directory is required (--out or \"out\" in the config)");
        return fallback;
    }
    json section(const char* name) const { return config.value(name, json::object()); }
};

void write_resolved(const fs::path& dir, const std::string& command, json resolved)
{
    fs::create_directories(dir);
    resolved["command"] = command;
    std::ofstream out(dir / ("resolved_config." + command + ".json"));
    out << std::setw(2) << resolved << '\n';
}

void write_json(const fs::path& file, const json& j)
{
    std::ofstream out(file);
    if (!out)
        throw FormatError("cannot write " + file.string());
    out << std::setw(2) << j << '\n';
}

std::vector<Frame> as_luma(const VideoSequence& seq)
{
    std::vector<Frame> out;
    for (const auto& f : seq.frames)
        out.push_back(seq.colorspace == ColorSpace::rgb ? rgb_to_y(f) : f);
    return out;
}

/// Bar chart of per-frame values, one column block per frame, scaled to the maximum.
Frame bar_plot(const std::vector<double>& values, double threshold, Index height = 96, Index bar = 6)
{
    const Index n = Index(values.size());
    Frame img({1, 3, height, n * bar}, 1.0f);
    double top = threshold;
    for (double v : values)
        top = std::max(top, v);
    for (Index i = 0; i < n; ++i) {
        const Index h = top > 0 ? Index(std::lround(values[size_t(i)] / top * double(height - 1))) : 0;
        const bool above = values[size_t(i)] > threshold;
        for (Index y = height - 1 - h; y < height; ++y)
            for (Index x = i * bar; x < (i + 1) * bar - 1; ++x) {
                img(0, 0, y, x) = above ? 0.8f : 0.6f;
                img(0, 1, y, x) = above ? 0.2f : 0.6f;
                img(0, 2, y, x) = above ? 0.2f : 0.6f;
            }
    }
    return img;
}

// ---------------------------------------------------------------------------

int run_synth(const Common& common, SyntheticSceneConfig scene)
{
    scene.validate();
    const fs::path out = common.out_dir("");
    const VideoSequence seq = synth_quasi_static(scene);
    write_frames(out, seq);
    write_resolved(out, "synth-data", {{"seed", scene.background_seed}, {"data", to_json_value(scene)}});
    std::cout << "wrote " << seq.size() << " frames of " << scene.height << "x" << scene.width << " to " << out
              << '\n';
    return 0;
}

int run_degrade(const Common& common, const std::string& frames, const DegradationConfig& deg)
{
    const fs::path out = common.out_dir("");
    const VideoSequence hr = read_frames(frames, Tier::hr);
    const VideoSequence lr = degrade(hr, deg);
    write_frames(out, lr);
    write_resolved(out, "degrade", {{"frames", frames}, {"degradation", to_json_value(deg)}});
    std::cout << "degraded " << hr.size() << " frames to " << lr.height() << "x" << lr.width() << " in " << out
              << '\n';
    return 0;
}

int run_train(const Common& common, const std::vector<std::string>& frame_dirs, std::vector<std::string> presets,
              std::optional<int> features, std::optional<int> epochs, bool resume)
{
    const fs::path out = common.out_dir("");
    TrainConfig cfg = train_from_json(common.section("train"));
    resume = resume || common.section("train").value("resume", false);
    cfg.seed = common.resolved_seed();
    if (epochs)
        cfg.epochs = *epochs;
    if (common.config.contains("degradation"))
        cfg.degradation = degradation_from_json(common.config.at("degradation"));
    cfg.validate();

    std::vector<NetworkSpec> specs;
    if (!presets.empty()) {
        for (const auto& p : presets) {
            json entry = {{"preset", p}};
            if (features)
                entry["features"] = *features;
            specs.push_back(model_from_json(entry));
        }
    } else if (common.config.contains("models")) {
        const json& models = common.config.at("models");
        if (!models.is_array())
            throw ConfigError("'models' must be a list");
        for (const auto& m : models) {
            NetworkSpec s = model_from_json(m);
            if (features)
                s.features = *features;
            specs.push_back(s);
        }
    } else {
        throw UsageError("train: give --model or a 'models' list in the config");
    }

    std::vector<VideoSequence> sequences;
    json data_desc = json::array();
    for (const auto& dir : frame_dirs) {
        sequences.push_back(read_frames(dir, Tier::hr));
        data_desc.push_back(dir);
    }
    if (common.config.contains("data")) {
        const json& d = common.config.at("data");
        for (const auto& scene : d.is_array() ? d : json::array({d})) {
            const SyntheticSceneConfig sc = scene_from_json(scene);
            sequences.push_back(synth_quasi_static(sc));
            data_desc.push_back(to_json_value(sc));
        }
    }
    if (sequences.empty())
        throw UsageError("train: no training data (--frames or a 'data' section)");

    json resolved = {{"seed", cfg.seed}, {"train", to_json_value(cfg)}, {"resume", resume}, {"data", data_desc},
                     {"degradation", to_json_value(cfg.degradation)}, {"models", json::array()}};
    for (const auto& s : specs)
        resolved["models"].push_back(s);
    write_resolved(out, "train", resolved);

    const ClipDataset data(std::move(sequences));
    const auto arts = train_run<float>(specs, data, cfg, out, resume, [](const std::string& name, const EpochResult& r) {
        std::cout << name << " epoch " << r.epoch << " loss " << r.mean_loss << " lr " << r.lr << std::endl;
    });
    for (const auto& a : arts)
        std::cout << a.name << ": " << a.checkpoint.string() << ", " << a.curve.string() << '\n';
    return 0;
}

int run_infer(const Common& common, const std::string& checkpoint, const std::string& frames)
{
    const fs::path out = common.out_dir("");
    const Network<float> net = load_network<float>(checkpoint);
    const VideoSequence lr = read_frames(frames, Tier::lr);
    if (lr.colorspace != ColorSpace::rgb)
        throw DomainError("infer: LR frames must be RGB");
    const SequenceResult<float> res = net.run_sequence(lr.frames);
    std::vector<Frame> luma, rgb;
    for (size_t t = 0; t < res.outputs.size(); ++t) {
        Frame y = res.outputs[t];
        clamp_unit(y);
        rgb.push_back(merge_luma_with_chroma(y, lr.frames[t], net.spec().scale));
        luma.push_back(std::move(y));
    }
    write_frames(out / "y", VideoSequence(std::move(luma), ColorSpace::y, Tier::hr));
    write_frames(out / "rgb", VideoSequence(std::move(rgb), ColorSpace::rgb, Tier::hr));
    if (!res.hidden_norms.empty()) {
        std::ofstream trace(out / "hidden_norms.csv");
        trace << "frame_index,hidden_norm\n" << std::setprecision(10);
        for (size_t t = 0; t < res.hidden_norms.size(); ++t)
            trace << t << ',' << res.hidden_norms[t] << '\n';
    }
    write_resolved(out, "infer", {{"checkpoint", checkpoint}, {"frames", frames}, {"model", net.spec()}});
    std::cout << "wrote " << res.outputs.size() << " frames to " << out << '\n';
    return 0;
}

MetricsRecord score_directory(const std::string& pred_dir, const std::vector<Frame>& gt, size_t exclude)
{
    std::vector<Frame> pred = as_luma(read_frames(pred_dir));
    if (pred.size() != gt.size())
        throw DomainError("eval: " + pred_dir + " has " + std::to_string(pred.size()) + " frames, ground truth " +
                          std::to_string(gt.size()));
    return evaluate_sequence(pred, gt, exclude);
}

int run_eval(const Common& common, const std::string& frames, const std::string& gt_dir,
             const std::string& baseline_dir)
{
    const fs::path out = common.out_dir("");
    fs::create_directories(out);
    const EvalOptions opt = eval_from_json(common.section("eval"));
    std::vector<Frame> pred = as_luma(read_frames(frames));
    std::vector<Frame> gt = as_luma(read_frames(gt_dir));
    if (pred.size() != gt.size())
        throw DomainError("eval: prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                          std::to_string(gt.size()));
    // Degradation crops HR frames to a multiple of the scale; match that crop.
    const Shape ps = pred.front().shape(), gs = gt.front().shape();
    if (ps.h < gs.h || ps.w < gs.w) {
        for (auto& g : gt) {
            Frame c({1, 1, ps.h, ps.w});
            for (Index y = 0; y < ps.h; ++y)
                for (Index x = 0; x < ps.w; ++x)
                    c(0, 0, y, x) = g(0, 0, y, x);
            g = std::move(c);
        }
    }
    const MetricsRecord rec = evaluate_sequence(pred, gt, opt.exclude);
    write_metrics_csv(out / "metrics.csv", rec);
    write_aggregates_json(out / "aggregates.json", rec);
    const Index row = opt.profile_row >= 0 ? Index(opt.profile_row) : pred.front().shape().h / 2;
    write_png(out / "temporal_profile.png", temporal_profile(pred, row));

    json resolved = {{"frames", frames}, {"gt", gt_dir}, {"eval", to_json_value(opt)}};
    if (!baseline_dir.empty()) {
        const MetricsRecord base = score_directory(baseline_dir, gt, opt.exclude);
        const DivergenceReport d = divergence_score(rec, base, opt.divergence_threshold_db, opt.divergence_window);
        json dj = {{"diverged", d.diverged},
                   {"onset_frame", d.onset_frame ? json(*d.onset_frame) : json(nullptr)},
                   {"last50_delta_db", d.last50_delta_db}};
        write_json(out / "divergence.json", dj);
        resolved["baseline"] = baseline_dir;
        std::cout << "divergence vs baseline: " << (d.diverged ? "yes" : "no") << ", last-50 delta "
                  << d.last50_delta_db << " dB\n";
    }
    write_resolved(out, "eval", resolved);
    std::cout << std::fixed << std::setprecision(4) << "PSNR-Y all " << rec.all.psnr << " dB, SSIM-Y "
              << rec.all.ssim << " over " << rec.all.count << " frames\n";
    if (rec.first_50 && rec.last_50)
        std::cout << "first 50 " << rec.first_50->psnr << " dB, last 50 " << rec.last_50->psnr << " dB\n";
    return 0;
}

int run_certify(const Common& common, const std::string& checkpoint, std::optional<int> side, int iters, int trials)
{
    const CheckpointFile file = read_checkpoint(checkpoint);
    const Network<double> net = network_from_checkpoint<double>(file);
    if (!net.recurrent())
        throw DomainError("certify: " + checkpoint + " has no recurrence map to certify");
    Index h = 64, w = 64;
    if (side) {
        h = w = *side;
    } else if (file.meta.contains("normalized_at")) {
        h = file.meta.at("normalized_at").at(0).get<Index>();
        w = file.meta.at("normalized_at").at(1).get<Index>();
    }
    const Certificate cert = certify_network(net.recurrence_layers(h, w), iters);
    json layers = json::array();
    for (size_t i = 0; i < cert.names.size(); ++i) {
        std::cout << cert.names[i] << ' ' << std::setprecision(8) << cert.sigmas[i] << '\n';
        layers.push_back({{"name", cert.names[i]}, {"sigma", cert.sigmas[i]}});
    }
    std::cout << "bound " << std::setprecision(8) << cert.bound << '\n';
    json result = {{"checkpoint", checkpoint}, {"input", {h, w}}, {"power_iters", iters}, {"layers", layers},
                   {"bound", cert.bound}};
    if (trials > 0) {
        const Index f = net.spec().features;
        const Shape hs{1, f, h, w};
        const Shape zs = net.spec().recurrence == Recurrence::middle
                             ? Shape{1, net.spec().n_xi > 0 ? f : Index(net.spec().input_channels()), h, w}
                             : Shape{1, Index(net.spec().input_channels()), h, w};
        const double ratio = empirical_contraction<double>(
            [&](const Tensor<double>& a, const Tensor<double>& z) { return net.recurrence_map(a, z); }, hs, zs, trials,
            common.resolved_seed());
        std::cout << "empirical " << std::setprecision(8) << ratio << '\n';
        result["empirical_contraction"] = ratio;
        result["trials"] = trials;
    }
    const fs::path out = common.out.empty() && !common.config.contains("out") ? fs::path(checkpoint).parent_path()
                                                                                 : common.out_dir("");
    fs::create_directories(out.empty() ? fs::path(".") : out);
    const fs::path target = (out.empty() ? fs::path(".") : out) / (fs::path(checkpoint).stem().string() + ".certificate.json");
    write_json(target, result);
    return 0;
}

int run_strf(const Common& common, const std::string& checkpoint, std::optional<int> iters, std::optional<int> tau)
{
    const fs::path out = common.out_dir("");
    StrfConfig cfg = strf_from_json(common.section("strf"));
    if (iters)
        cfg.iters = *iters;
    if (tau)
        cfg.tau = *tau;
    const Network<float> net = load_network<float>(checkpoint);
    const StrfResult r = strf(net, cfg, common.resolved_seed());
    fs::create_directories(out);
    {
        std::ofstream csv(out / "deviation.csv");
        csv << "time_offset,deviation\n" << std::setprecision(10);
        for (size_t i = 0; i < r.deviation.size(); ++i)
            csv << int(i) - cfg.tau << ',' << r.deviation[i] << '\n';
    }
    write_json(out / "strf.json", {{"temporal_extent", r.temporal_extent},
                                   {"deviation", r.deviation},
                                   {"objective_first", r.objective.front()},
                                   {"objective_last", r.objective.back()}});
    write_png(out / "deviation.png", bar_plot(r.deviation, cfg.deviation_threshold));
    std::vector<Frame> change;
    for (size_t i = 0; i < r.optimized.size(); ++i) {
        Frame d(r.optimized[i].shape(), (r.optimized[i].values() - r.initial[i].values()).abs().eval());
        change.push_back(rgb_to_y(d));
    }
    write_png(out / "deviation_profile.png", temporal_profile(change, cfg.height / 2));
    write_frames(out / "optimized", VideoSequence(r.optimized, ColorSpace::rgb, Tier::lr));
    write_resolved(out, "diagnose-strf",
                   {{"checkpoint", checkpoint}, {"seed", common.resolved_seed()}, {"strf", to_json_value(cfg)}});
    std::cout << "temporal extent " << r.temporal_extent << " frames (threshold " << cfg.deviation_threshold << ")\n";
    return 0;
}

void set_threads()
{
    if (const char* env = std::getenv("STABLEVSR_THREADS")) {
        const int n = std::atoi(env);
        if (n < 1)
            throw UsageError("STABLEVSR_THREADS must be a positive integer");
        Eigen::setNbThreads(n);
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Lipschitz-stable recurrent video super-resolution toolkit"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON config file");
        sub->add_option("--seed", common.seed, "global seed (overrides the config)");
        sub->add_option("--out", common.out, "output directory");
    };

    SyntheticSceneConfig scene;
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic quasi-static HR sequence");
    add_common(synth);
    synth->add_option("--length", scene.length, "frame count");
    synth->add_option("--height", scene.height);
    synth->add_option("--width", scene.width);
    synth->add_option("--velocity", scene.velocity, "object speed, HR px/frame");
    synth->add_option("--direction", scene.direction, "object heading, radians");
    synth->add_option("--jitter", scene.jitter_amp, "camera jitter amplitude, HR px");
    synth->add_option("--pan", scene.pan_velocity, "camera pan, HR px/frame");
    synth->add_option("--object-size", scene.object_size);

    std::string frames, gt, checkpoint, baseline;
    DegradationConfig deg;
    auto* degrade_cmd = app.add_subcommand("degrade", "blur and decimate an HR frame directory");
    add_common(degrade_cmd);
    degrade_cmd->add_option("--frames", frames, "HR frame directory")->required();
    degrade_cmd->add_option("--sigma", deg.sigma);
    degrade_cmd->add_option("--scale", deg.scale);

    std::vector<std::string> train_dirs, presets;
    std::optional<int> features, epochs, side, strf_iters, tau;
    bool resume = false;
    auto* train = app.add_subcommand("train", "train one or more networks on the same data and seed");
    add_common(train);
    train->add_option("--frames", train_dirs, "HR training frame directories");
    train->add_option("--model", presets, "preset(s): mrvsr, rfs3, rfs7, frnn");
    train->add_option("--features", features);
    train->add_option("--epochs", epochs);
    train->add_flag("--resume", resume, "continue from <out>/<name>.state when present");

    auto* infer = app.add_subcommand("infer", "super-resolve an LR frame directory");
    add_common(infer);
    infer->add_option("--checkpoint", checkpoint)->required();
    infer->add_option("--frames", frames, "LR RGB frame directory")->required();

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM on Y, windowed aggregates and temporal profile");
    add_common(eval);
    eval->add_option("--frames", frames, "predicted frame directory")->required();
    eval->add_option("--gt", gt, "ground-truth frame directory")->required();
    eval->add_option("--baseline", baseline, "baseline prediction directory for divergence scoring");

    int power_iters = 100, trials = 0;
    auto* certify = app.add_subcommand("certify", "Lipschitz bound of a checkpoint's recurrence map");
    add_common(certify);
    certify->add_option("--checkpoint", checkpoint)->required();
    certify->add_option("--size", side, "square LR input side (default: the export size)");
    certify->add_option("--iters", power_iters, "power iterations per layer");
    certify->add_option("--trials", trials, "random state pairs for an empirical contraction check");

    auto* diag = app.add_subcommand("diagnose-strf", "spatio-temporal receptive field by input optimization");
    add_common(diag);
    diag->add_option("--checkpoint", checkpoint)->required();
    diag->add_option("--iters", strf_iters);
    diag->add_option("--tau", tau);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        set_threads();
        common.load();
        if (synth->parsed()) {
            SyntheticSceneConfig base = common.config.contains("data") ? scene_from_json(common.config.at("data"))
                                                                       : SyntheticSceneConfig{};
            // Flags win over the config file.
            for (const auto* opt : synth->get_options()) {
                if (opt->count() == 0)
                    continue;
                const std::string n = opt->get_name();
                if (n == "--length") base.length = scene.length;
                else if (n == "--height") base.height = scene.height;
                else if (n == "--width") base.width = scene.width;
                else if (n == "--velocity") base.velocity = scene.velocity;
                else if (n == "--direction") base.direction = scene.direction;
                else if (n == "--jitter") base.jitter_amp = scene.jitter_amp;
                else if (n == "--pan") base.pan_velocity = scene.pan_velocity;
                else if (n == "--object-size") base.object_size = scene.object_size;
            }
            if (common.seed || common.config.contains("seed"))
                base.background_seed = common.resolved_seed();
            return run_synth(common, base);
        }
        if (degrade_cmd->parsed()) {
            DegradationConfig base = common.config.contains("degradation")
                                         ? degradation_from_json(common.config.at("degradation"))
                                         : DegradationConfig{};
            if (degrade_cmd->get_option("--sigma")->count())
                base.sigma = deg.sigma;
            if (degrade_cmd->get_option("--scale")->count())
                base.scale = deg.scale;
            base.validate();
            return run_degrade(common, frames, base);
        }
        if (train->parsed())
            return run_train(common, train_dirs, presets, features, epochs, resume);
        if (infer->parsed())
            return run_infer(common, checkpoint, frames);
        if (eval->parsed())
            return run_eval(common, frames, gt, baseline);
        if (certify->parsed())
            return run_certify(common, checkpoint, side, power_iters, trials);
        if (diag->parsed())
            return run_strf(common, checkpoint, strf_iters, tau);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
