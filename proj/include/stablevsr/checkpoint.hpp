#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "stablevsr/models.hpp"
#include "stablevsr/training.hpp"

namespace stablevsr {

/// Container format: the 8-byte magic "SVSRCKPT", a little-endian uint64
/// manifest length, a JSON manifest (metadata plus name/shape/offset of every
/// tensor), then a blob of little-endian float32 values.
struct CheckpointFile {
    struct Entry {
        std::string name;
        Tensor<float> tensor;
    };
    nlohmann::json meta = nlohmann::json::object();
    std::vector<Entry> tensors;

    void add(std::string name, Tensor<float> t) { tensors.push_back({std::move(name), std::move(t)}); }
    const Tensor<float>& get(const std::string& name) const;
    bool contains(const std::string& name) const;
};

std::string encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename Scalar>
CheckpointFile network_to_checkpoint(const Network<Scalar>& net)
{
    CheckpointFile file;
    file.meta["kind"] = "network";
    file.meta["spec"] = net.spec();
    file.meta["normalized"] = false;
    nlohmann::json targets = nlohmann::json::object();
    for (const auto& l : net.layers()) {
        file.add(l.name + ".weight", l.kernel.weight.value().template cast<float>());
        file.add(l.name + ".bias", l.kernel.bias.value().template cast<float>());
        if (l.srnl.target_srank)
            targets[l.name] = *l.srnl.target_srank;
    }
    file.meta["srank_targets"] = targets;
    return file;
}

/// Rebuilds a network from a checkpoint; every layer must be present with the
/// shape its spec implies.
template <typename Scalar>
Network<Scalar> network_from_checkpoint(const CheckpointFile& file)
{
    if (!file.meta.contains("spec"))
        throw FormatError("checkpoint has no network spec");
    NetworkSpec spec;
    try {
        spec = file.meta.at("spec").get<NetworkSpec>();
        spec.validate();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad network spec in checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad network spec in checkpoint: ") + e.what());
    }
    Network<Scalar> net = Network<Scalar>::build(spec, 0);
    const auto targets = file.meta.value("srank_targets", nlohmann::json::object());
    for (auto& l : net.layers()) {
        for (const char* part : {".weight", ".bias"}) {
            const std::string name = l.name + part;
            if (!file.contains(name))
                throw FormatError("checkpoint is missing tensor " + name);
            const Tensor<float>& t = file.get(name);
            Variable<Scalar>& dst = std::string(part) == ".weight" ? l.kernel.weight : l.kernel.bias;
            if (!(t.shape() == dst.shape()))
                throw FormatError("tensor " + name + " has shape " + to_string(t.shape()) + ", expected " +
                                  to_string(dst.shape()));
            dst.mutable_value() = t.template cast<Scalar>();
        }
        if (targets.contains(l.name))
            l.srnl.target_srank = targets.at(l.name).template get<double>();
    }
    return net;
}

/// Bakes the final SRNL normalization (power_iters iterations at an
/// `side` x `side` LR input) into a copy of `net` and stores it.
template <typename Scalar>
Network<Scalar> export_network(const Network<Scalar>& net, const std::filesystem::path& path, Index side,
                               int power_iters = 100)
{
    Network<Scalar> out = net.clone();
    project_constraints(out, side, power_iters);
    CheckpointFile file = network_to_checkpoint(out);
    file.meta["normalized"] = out.spec().constraint.mode != ConstraintMode::none;
    file.meta["normalized_at"] = {side, side};
    write_checkpoint(path, file);
    return out;
}

template <typename Scalar>
Network<Scalar> load_network(const std::filesystem::path& path)
{
    return network_from_checkpoint<Scalar>(read_checkpoint(path));
}

// ---------------------------------------------------------------------------
// Resumable training state: weights, Adam moments, power-iteration vectors.

template <typename Scalar>
void save_training_state(const std::filesystem::path& path, const Network<Scalar>& net, const AdamState<Scalar>& opt,
                         int epoch)
{
    CheckpointFile file = network_to_checkpoint(net);
    file.meta["kind"] = "training";
    file.meta["epoch"] = epoch;
    file.meta["adam_step"] = opt.step;
    const auto params = net.parameters();
    for (size_t i = 0; i < opt.m.size(); ++i) {
        file.add("adam.m." + std::to_string(i), opt.m[i].template cast<float>());
        file.add("adam.v." + std::to_string(i), opt.v[i].template cast<float>());
    }
    for (const auto& l : net.layers())
        if (!l.srnl.power.u.empty())
            file.add("power." + l.name, l.srnl.power.u.template cast<float>());
    write_checkpoint(path, file);
}

template <typename Scalar>
struct TrainingState {
    Network<Scalar> net;
    AdamState<Scalar> opt;
    int epoch = 0;
};

template <typename Scalar>
TrainingState<Scalar> load_training_state(const std::filesystem::path& path)
{
    const CheckpointFile file = read_checkpoint(path);
    if (file.meta.value("kind", "") != "training")
        throw FormatError(path.string() + " is not a training-state checkpoint");
    TrainingState<Scalar> st;
    st.net = network_from_checkpoint<Scalar>(file);
    st.epoch = file.meta.at("epoch").get<int>();
    st.opt.step = file.meta.at("adam_step").get<long>();
    const auto params = st.net.parameters();
    if (st.opt.step > 0) {
        for (size_t i = 0; i < params.size(); ++i) {
            st.opt.m.push_back(file.get("adam.m." + std::to_string(i)).template cast<Scalar>());
            st.opt.v.push_back(file.get("adam.v." + std::to_string(i)).template cast<Scalar>());
        }
    }
    for (auto& l : st.net.layers())
        if (file.contains("power." + l.name))
            l.srnl.power.u = file.get("power." + l.name).template cast<Scalar>();
    return st;
}

}  // namespace stablevsr
