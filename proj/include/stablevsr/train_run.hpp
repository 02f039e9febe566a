#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "stablevsr/checkpoint.hpp"
#include "stablevsr/training.hpp"

namespace stablevsr {

struct RunArtifacts {
    std::string name;
    std::filesystem::path checkpoint;  ///< exported, normalized network
    std::filesystem::path state;       ///< resumable training state
    std::filesystem::path curve;       ///< epoch,mean_loss,lr
    std::vector<EpochResult> epochs;   ///< epochs run by this call
};

using EpochCallback = std::function<void(const std::string& name, const EpochResult&)>;

namespace detail {

inline std::vector<std::string> curve_prefix(const std::filesystem::path& curve, int up_to_epoch)
{
    std::vector<std::string> kept;
    std::ifstream in(curve);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.rfind("epoch", 0) == 0)
            continue;
        if (std::stoi(line.substr(0, line.find(','))) <= up_to_epoch)
            kept.push_back(line);
    }
    return kept;
}

}  // namespace detail

/// Trains one network for cfg.epochs epochs and writes, under `out_dir`:
/// <name>.state (after every epoch), <name>.csv and the exported <name>.ckpt.
/// With `resume` and an existing state file, training continues after the
/// stored epoch and reproduces the uninterrupted run exactly.
template <typename Scalar = float>
RunArtifacts train_network(const NetworkSpec& spec, const ClipDataset& data, const TrainConfig& cfg,
                           const std::filesystem::path& out_dir, bool resume = false,
                           const EpochCallback& on_epoch = {})
{
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const std::string name = spec.name.empty() ? "net" : spec.name;
    RunArtifacts art;
    art.name = name;
    art.checkpoint = out_dir / (name + ".ckpt");
    art.state = out_dir / (name + ".state");
    art.curve = out_dir / (name + ".csv");

    Network<Scalar> net;
    AdamState<Scalar> opt;
    int start = 0;
    if (resume && std::filesystem::exists(art.state)) {
        TrainingState<Scalar> st = load_training_state<Scalar>(art.state);
        if (!(st.net.spec() == spec))
            throw ConfigError("resume: stored network spec for " + name + " differs from the requested one");
        net = std::move(st.net);
        opt = std::move(st.opt);
        start = st.epoch;
    } else {
        net = Network<Scalar>::build(spec, cfg.seed);
    }

    std::vector<std::string> rows = start > 0 ? detail::curve_prefix(art.curve, start) : std::vector<std::string>{};
    auto flush_curve = [&] {
        std::ofstream out(art.curve);
        if (!out)
            throw FormatError("cannot write " + art.curve.string());
        out << "epoch,mean_loss,lr\n";
        for (const auto& r : rows)
            out << r << '\n';
    };
    for (int epoch = start + 1; epoch <= cfg.epochs; ++epoch) {
        const EpochResult r = train_epoch(net, data, cfg, opt, epoch);
        art.epochs.push_back(r);
        std::ostringstream row;
        row << r.epoch << ',' << std::setprecision(10) << r.mean_loss << ',' << r.lr;
        rows.push_back(row.str());
        flush_curve();
        save_training_state(art.state, net, opt, epoch);
        if (on_epoch)
            on_epoch(name, r);
    }
    if (cfg.epochs == 0 || rows.empty())
        flush_curve();
    export_network(net, art.checkpoint, cfg.export_side(), cfg.power_iters_final);
    return art;
}

/// Paired training of several architectures on the same data and seed.
template <typename Scalar = float>
std::vector<RunArtifacts> train_run(const std::vector<NetworkSpec>& specs, const ClipDataset& data,
                                    const TrainConfig& cfg, const std::filesystem::path& out_dir,
                                    bool resume = false, const EpochCallback& on_epoch = {})
{
    std::vector<RunArtifacts> out;
    for (const auto& spec : specs)
        out.push_back(train_network<Scalar>(spec, data, cfg, out_dir, resume, on_epoch));
    return out;
}

}  // namespace stablevsr
