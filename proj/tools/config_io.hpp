#pragma once

// Strict JSON <-> config structs for the command-line tool. Every section
// rejects keys it does not know, so a typo never silently falls back to a
// default.

#include <fstream>
#include <initializer_list>
#include <string>

#include "json.hpp"

#include "stablevsr/evalsuite.hpp"
#include "stablevsr/models.hpp"
#include "stablevsr/training.hpp"
#include "stablevsr/videodata.hpp"

namespace stablevsr::cli {

using nlohmann::json;

inline void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section)
{
    if (!j.is_object())
        throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* k : allowed)
            known = known || key == k;
        if (!known)
            throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
    }
}

template <typename T>
void read_opt(const json& j, const char* key, T& dst)
{
    if (j.contains(key)) {
        try {
            dst = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

inline json load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open config file " + path);
    try {
        json j = json::parse(in);
        require_keys(j, {"seed", "out", "data", "degradation", "models", "train", "eval", "strf"}, "<root>");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------

inline SyntheticSceneConfig scene_from_json(const json& j)
{
    require_keys(j,
                 {"length", "height", "width", "background_seed", "spectrum_exponent", "shape", "object_size",
                  "contrast", "velocity", "direction", "jitter_amp", "jitter_period", "pan_velocity"},
                 "data");
    SyntheticSceneConfig c;
    read_opt(j, "length", c.length);
    read_opt(j, "height", c.height);
    read_opt(j, "width", c.width);
    read_opt(j, "background_seed", c.background_seed);
    read_opt(j, "spectrum_exponent", c.spectrum_exponent);
    if (j.contains("shape")) {
        const std::string s = j.at("shape").get<std::string>();
        if (s == "disc")
            c.shape = ObjectShape::disc;
        else if (s == "rectangle")
            c.shape = ObjectShape::rectangle;
        else
            throw ConfigError("data.shape must be 'disc' or 'rectangle'");
    }
    read_opt(j, "object_size", c.object_size);
    read_opt(j, "contrast", c.contrast);
    read_opt(j, "velocity", c.velocity);
    read_opt(j, "direction", c.direction);
    read_opt(j, "jitter_amp", c.jitter_amp);
    read_opt(j, "jitter_period", c.jitter_period);
    read_opt(j, "pan_velocity", c.pan_velocity);
    c.validate();
    return c;
}

inline json to_json_value(const SyntheticSceneConfig& c)
{
    return {{"length", c.length},
            {"height", c.height},
            {"width", c.width},
            {"background_seed", c.background_seed},
            {"spectrum_exponent", c.spectrum_exponent},
            {"shape", c.shape == ObjectShape::disc ? "disc" : "rectangle"},
            {"object_size", c.object_size},
            {"contrast", c.contrast},
            {"velocity", c.velocity},
            {"direction", c.direction},
            {"jitter_amp", c.jitter_amp},
            {"jitter_period", c.jitter_period},
            {"pan_velocity", c.pan_velocity}};
}

inline DegradationConfig degradation_from_json(const json& j)
{
    require_keys(j, {"sigma", "scale", "kernel_radius"}, "degradation");
    DegradationConfig c;
    read_opt(j, "sigma", c.sigma);
    read_opt(j, "scale", c.scale);
    read_opt(j, "kernel_radius", c.kernel_radius);
    c.validate();
    return c;
}

inline json to_json_value(const DegradationConfig& c)
{
    return {{"sigma", c.sigma}, {"scale", c.scale}, {"kernel_radius", c.kernel_radius}};
}

/// A model entry is a network spec, optionally starting from a named preset
/// (mrvsr, rfs3, rfs7, frnn) whose fields the remaining keys override.
inline NetworkSpec model_from_json(const json& j)
{
    if (j.is_string())
        return model_from_json(json{{"preset", j}});
    if (!j.is_object())
        throw ConfigError("model entries must be objects or preset names");
    json body = j;
    NetworkSpec base = NetworkSpec::mrvsr(32);
    if (body.contains("preset")) {
        const std::string p = body.at("preset").get<std::string>();
        const int f = body.value("features", 32);
        if (p == "mrvsr")
            base = NetworkSpec::mrvsr(f);
        else if (p == "rfs3")
            base = NetworkSpec::rfs(3, f);
        else if (p == "rfs7")
            base = NetworkSpec::rfs(7, f);
        else if (p == "frnn")
            base = NetworkSpec::fully_recurrent(f);
        else
            throw ConfigError("unknown model preset '" + p + "' (mrvsr, rfs3, rfs7, frnn)");
        body.erase("preset");
    }
    json merged = base;
    for (const auto& [key, value] : body.items())
        merged[key] = value;
    try {
        NetworkSpec spec = merged.get<NetworkSpec>();
        spec.validate();
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model entry: ") + e.what());
    }
}

inline TrainConfig train_from_json(const json& j)
{
    require_keys(j,
                 {"desk", "lr0", "drop_epochs", "drop_factor", "batch", "supervised_steps", "epochs",
                  "clips_per_epoch", "crop_lr", "export_size", "augment", "power_iters_train", "power_iters_final",
                  "adam", "resume"},
                 "train");
    TrainConfig c = j.value("desk", false) ? TrainConfig::desk() : TrainConfig{};
    read_opt(j, "lr0", c.lr0);
    read_opt(j, "drop_epochs", c.drop_epochs);
    read_opt(j, "drop_factor", c.drop_factor);
    read_opt(j, "batch", c.batch);
    read_opt(j, "supervised_steps", c.supervised_steps);
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "clips_per_epoch", c.clips_per_epoch);
    read_opt(j, "crop_lr", c.crop_lr);
    read_opt(j, "export_size", c.export_size);
    read_opt(j, "augment", c.augment);
    read_opt(j, "power_iters_train", c.power_iters_train);
    read_opt(j, "power_iters_final", c.power_iters_final);
    if (j.contains("adam")) {
        const json& a = j.at("adam");
        require_keys(a, {"beta1", "beta2", "eps"}, "train.adam");
        read_opt(a, "beta1", c.adam.beta1);
        read_opt(a, "beta2", c.adam.beta2);
        read_opt(a, "eps", c.adam.eps);
    }
    return c;
}

inline json to_json_value(const TrainConfig& c)
{
    return {{"lr0", c.lr0},
            {"drop_epochs", c.drop_epochs},
            {"drop_factor", c.drop_factor},
            {"batch", c.batch},
            {"supervised_steps", c.supervised_steps},
            {"epochs", c.epochs},
            {"clips_per_epoch", c.clips_per_epoch},
            {"crop_lr", c.crop_lr},
            {"export_size", c.export_size},
            {"augment", c.augment},
            {"power_iters_train", c.power_iters_train},
            {"power_iters_final", c.power_iters_final},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

inline StrfConfig strf_from_json(const json& j)
{
    require_keys(j, {"tau", "height", "width", "iters", "lr0", "lr_drops", "deviation_threshold"}, "strf");
    StrfConfig c;
    read_opt(j, "tau", c.tau);
    read_opt(j, "height", c.height);
    read_opt(j, "width", c.width);
    read_opt(j, "iters", c.iters);
    read_opt(j, "lr0", c.lr0);
    read_opt(j, "lr_drops", c.lr_drops);
    read_opt(j, "deviation_threshold", c.deviation_threshold);
    return c;
}

inline json to_json_value(const StrfConfig& c)
{
    return {{"tau", c.tau},       {"height", c.height}, {"width", c.width},
            {"iters", c.iters},   {"lr0", c.lr0},       {"lr_drops", c.lr_drops},
            {"deviation_threshold", c.deviation_threshold}};
}

struct EvalOptions {
    std::size_t exclude = kExcludedBoundaryFrames;
    long profile_row = -1;  ///< -1 selects the middle row
    double divergence_threshold_db = -0.5;
    std::size_t divergence_window = kAggregateWindow;
};

inline EvalOptions eval_from_json(const json& j)
{
    require_keys(j, {"exclude", "profile_row", "divergence_threshold_db", "divergence_window"}, "eval");
    EvalOptions o;
    read_opt(j, "exclude", o.exclude);
    read_opt(j, "profile_row", o.profile_row);
    read_opt(j, "divergence_threshold_db", o.divergence_threshold_db);
    read_opt(j, "divergence_window", o.divergence_window);
    return o;
}

inline json to_json_value(const EvalOptions& o)
{
    return {{"exclude", o.exclude},
            {"profile_row", o.profile_row},
            {"divergence_threshold_db", o.divergence_threshold_db},
            {"divergence_window", o.divergence_window}};
}

}  // namespace stablevsr::cli
