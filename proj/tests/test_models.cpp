#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "stablevsr/checkpoint.hpp"
#include "stablevsr/models.hpp"

using namespace stablevsr;

namespace {

std::vector<Tensor<double>> random_frames(int n, Index h, Index w, std::mt19937_64& rng)
{
    std::vector<Tensor<double>> out;
    for (int i = 0; i < n; ++i)
        out.push_back(Tensor<double>::uniform({1, 3, h, w}, rng));
    return out;
}

std::vector<Variable<double>> window_of(const std::vector<Tensor<double>>& frames, int centre, int T)
{
    std::vector<Variable<double>> w;
    for (int d = -T; d <= T; ++d)
        w.emplace_back(frames.at(size_t(centre + d)));
    return w;
}

Network<double> hl_mrvsr(int f, std::uint64_t seed, Index side, int iters = 300)
{
    Network<double> net = Network<double>::build(NetworkSpec::mrvsr(f), seed);
    for (auto& l : net.layers())
        if (l.constrained)
            srnl_apply(l.kernel, SrnlConfig::hard(), {1, l.kernel.c_in(), side, side}, l.srnl, iters);
    return net;
}

std::filesystem::path temp_path(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("stablevsr_models_" + name);
}

}  // namespace

TEST_CASE("layer counts and channel accounting")
{
    const Network<float> mr = Network<float>::build(NetworkSpec::mrvsr(128), 1);
    REQUIRE(mr.layers().size() == 8);
    int xi = 0, phi = 0, psi = 0;
    for (const auto& l : mr.layers()) {
        xi += l.name.rfind("xi.", 0) == 0;
        phi += l.name.rfind("phi.", 0) == 0;
        psi += l.name.rfind("psi.", 0) == 0;
    }
    CHECK(xi == 3);
    CHECK(phi == 2);
    CHECK(psi == 3);
    CHECK(mr.layers()[0].kernel.c_in() == 9);
    CHECK(mr.layers()[3].kernel.c_in() == 256);
    CHECK(mr.layers()[5].kernel.c_in() == 256);
    CHECK(mr.layers()[7].kernel.c_out() == 16);
    CHECK_FALSE(mr.layers()[7].relu);
    for (const auto& l : mr.layers()) {
        CHECK(l.constrained == (l.name.rfind("phi.", 0) == 0));
        CHECK(l.kernel.bias.value().values().abs().maxCoeff() == 0.0f);
    }

    NetworkSpec no_shift = NetworkSpec::mrvsr(16);
    no_shift.feature_shifting = false;
    CHECK(Network<float>::build(no_shift, 1).layers()[5].kernel.c_in() == 16);

    const Network<float> rfs3 = Network<float>::build(NetworkSpec::rfs(3, 128), 1);
    CHECK(rfs3.layers().size() == 7);
    CHECK(rfs3.layers().front().kernel.c_in() == 9);
    CHECK(rfs3.layers().back().kernel.c_out() == 16);
    CHECK(Network<float>::build(NetworkSpec::rfs(7, 32), 1).layers().front().kernel.c_in() == 21);

    const Network<float> full = Network<float>::build(NetworkSpec::fully_recurrent(32), 1);
    CHECK(full.layers().front().kernel.c_in() == 9 + 32);
    CHECK(full.recurrence_layers(8, 8).size() == 7);
}

TEST_CASE("invalid spec combinations are configuration errors")
{
    NetworkSpec s = NetworkSpec::mrvsr(16);
    s.constraint = Constraint::none();
    CHECK_THROWS_AS(Network<float>::build(s, 0), ConfigError);
    s = NetworkSpec::rfs(3, 16);
    s.feature_shifting = true;
    CHECK_THROWS_AS(Network<float>::build(s, 0), ConfigError);
    s = NetworkSpec::mrvsr(16);
    s.features = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);

    nlohmann::json j = NetworkSpec::mrvsr(16);
    CHECK(j.get<NetworkSpec>().features == 16);
    j["bogus"] = 1;
    CHECK_THROWS_AS(j.get<NetworkSpec>(), ConfigError);
}

TEST_CASE("build is deterministic and layers share init across architectures")
{
    const auto a = Network<float>::build(NetworkSpec::mrvsr(16), 42);
    const auto b = Network<float>::build(NetworkSpec::mrvsr(16), 42);
    const auto c = Network<float>::build(NetworkSpec::mrvsr(16), 43);
    bool any_diff = false;
    for (size_t i = 0; i < a.layers().size(); ++i) {
        CHECK((a.layers()[i].kernel.weight.value().values() == b.layers()[i].kernel.weight.value().values()).all());
        any_diff = any_diff ||
                   !(a.layers()[i].kernel.weight.value().values() == c.layers()[i].kernel.weight.value().values()).all();
    }
    CHECK(any_diff);
}

TEST_CASE("step: shape law, window length and lookahead")
{
    std::mt19937_64 rng(31);
    const auto frames = random_frames(5, 6, 7, rng);
    for (const NetworkSpec& spec : {NetworkSpec::mrvsr(8), NetworkSpec::rfs(3, 8), NetworkSpec::fully_recurrent(8)}) {
        const auto net = Network<double>::build(spec, 3);
        const auto r = net.step({}, window_of(frames, 1, 1));
        CHECK(r.output.shape() == Shape{1, 1, 24, 28});
        CHECK(r.state.empty() == (spec.recurrence == Recurrence::none));
        CHECK_THROWS_AS(net.step({}, window_of(frames, 2, 2)), UsageError);
    }
    NetworkSpec s2 = NetworkSpec::mrvsr(8);
    s2.scale = 2;
    CHECK(Network<double>::build(s2, 3).step({}, window_of(frames, 1, 1)).output.shape() == Shape{1, 1, 12, 14});

    // Frame t+2 is outside the window of step t.
    const auto net = Network<double>::build(NetworkSpec::mrvsr(8), 4);
    auto perturbed = frames;
    perturbed[3].values() = 1.0 - perturbed[3].values();
    const auto a = net.step({}, window_of(frames, 1, 1)).output.value();
    const auto b = net.step({}, window_of(perturbed, 1, 1)).output.value();
    CHECK((a.values() == b.values()).all());
}

TEST_CASE("zero network reduces to the replicated-luma residual")
{
    std::mt19937_64 rng(32);
    auto net = Network<double>::build(NetworkSpec::mrvsr(8), 5);
    for (auto& l : net.layers())
        l.kernel.weight.mutable_value().values().setZero();
    const auto frames = random_frames(3, 4, 5, rng);
    const auto y = net.step({}, window_of(frames, 1, 1)).output.value();
    for (Index yy = 0; yy < 16; ++yy)
        for (Index xx = 0; xx < 20; ++xx) {
            const auto& c = frames[1];
            const double luma = kLumaR * c(0, 0, yy / 4, xx / 4) + kLumaG * c(0, 1, yy / 4, xx / 4) +
                                kLumaB * c(0, 2, yy / 4, xx / 4);
            CHECK(y(0, 0, yy, xx) == doctest::Approx(luma).epsilon(1e-12));
        }
}

TEST_CASE("run_sequence")
{
    std::mt19937_64 rng(33);
    const auto net = Network<double>::build(NetworkSpec::mrvsr(8), 6);
    CHECK(net.run_sequence(random_frames(1, 4, 4, rng)).outputs.size() == 1);
    CHECK_THROWS_AS(net.run_sequence({}), DomainError);

    SUBCASE("feed-forward outputs depend only on the window")
    {
        const auto rfs = Network<double>::build(NetworkSpec::rfs(3, 8), 7);
        auto frames = random_frames(8, 5, 5, rng);
        frames[5] = frames[1];
        frames[6] = frames[2];
        frames[4] = frames[0];
        const auto out = rfs.run_sequence(frames);
        CHECK(out.hidden_norms.empty());
        CHECK((out.outputs[1].values() == out.outputs[5].values()).all());
    }

    SUBCASE("edge replication at the boundaries")
    {
        const auto rfs = Network<double>::build(NetworkSpec::rfs(3, 8), 7);
        const auto frames = random_frames(4, 5, 5, rng);
        const auto out = rfs.run_sequence(frames);
        const std::vector<Variable<double>> first{Variable<double>(frames[0]), Variable<double>(frames[0]),
                                                  Variable<double>(frames[1])};
        CHECK((out.outputs[0].values() == rfs.step({}, first).output.value().values()).all());
    }

    SUBCASE("HL network settles to a fixed point on a constant sequence")
    {
        const auto hl = hl_mrvsr(4, 8, 6);
        const std::vector<Tensor<double>> frames(10000, Tensor<double>::uniform({1, 3, 6, 6}, rng));
        NetworkState<double> state;
        double sup = 0.0, last_step = 0.0;
        Tensor<double> prev;
        for (int t = 0; t < 10000; ++t) {
            const Tensor<double> z = hl.encode({frames[0], frames[0], frames[0]});
            const Tensor<double> h = hl.recurrence_map(prev.empty() ? Tensor<double>(hl.hidden_shape(1, 6, 6)) : prev, z);
            sup = std::max(sup, double(h.norm()));
            if (!prev.empty()) {
                Tensor<double> d = h;
                d += Tensor<double>(h.shape(), (-prev.values()).eval());
                last_step = d.norm();
            }
            prev = h;
        }
        CHECK(std::isfinite(sup));
        CHECK(last_step < 1e-5);
    }
}

TEST_CASE("trajectories of an HL network contract at the certified rate")
{
    std::mt19937_64 rng(34);
    const Index side = 6;
    const auto net = hl_mrvsr(6, 9, side, 500);
    const double L = certify_network(net.recurrence_layers(side, side), 500).bound;
    REQUIRE(L <= 1.0 + 1e-3);
    const auto frames = random_frames(200, side, side, rng);
    Tensor<double> h = Tensor<double>::zeros(net.hidden_shape(1, side, side));
    Tensor<double> h2 = Tensor<double>::uniform(net.hidden_shape(1, side, side), rng);
    auto distance = [](const Tensor<double>& a, const Tensor<double>& b) {
        return std::sqrt((a.values() - b.values()).square().sum());
    };
    const double d0 = distance(h, h2);
    bool ok = true;
    for (int t = 1; t <= 200; ++t) {
        const Tensor<double> z = net.encode({frames[size_t(std::max(t - 2, 0))], frames[size_t(t - 1)],
                                             frames[size_t(std::min(t, 199))]});
        h = net.recurrence_map(h, z);
        h2 = net.recurrence_map(h2, z);
        ok = ok && distance(h, h2) <= std::pow(L + 1e-4, t) * d0 + 1e-12;
    }
    CHECK(ok);
}

TEST_CASE("checkpoint round trip, export and corruption")
{
    std::mt19937_64 rng(35);
    auto net = Network<float>::build(NetworkSpec::mrvsr(8), 10);
    for (auto& l : net.layers())
        l.kernel.bias.mutable_value() = Tensor<float>::randn(l.kernel.bias.shape(), rng);
    std::vector<Tensor<float>> frames;
    for (int i = 0; i < 4; ++i)
        frames.push_back(Tensor<float>::uniform({1, 3, 5, 6}, rng));

    const auto path = temp_path("roundtrip.ckpt");
    write_checkpoint(path, network_to_checkpoint(net));
    const auto back = load_network<float>(path);
    REQUIRE(back.layers().size() == net.layers().size());
    for (size_t i = 0; i < net.layers().size(); ++i) {
        CHECK((back.layers()[i].kernel.weight.value().values() == net.layers()[i].kernel.weight.value().values()).all());
        CHECK((back.layers()[i].kernel.bias.value().values() == net.layers()[i].kernel.bias.value().values()).all());
    }
    const auto a = net.run_sequence(frames), b = back.run_sequence(frames);
    for (size_t t = 0; t < frames.size(); ++t)
        CHECK((a.outputs[t].values() == b.outputs[t].values()).all());

    SUBCASE("exported HL network certifies without any SRNL state")
    {
        const auto exported = temp_path("export.ckpt");
        export_network(net, exported, 16);
        const auto loaded = load_network<double>(exported);
        CHECK(read_checkpoint(exported).meta.at("normalized").get<bool>());
        CHECK(certify_network(loaded.recurrence_layers(16, 16)).bound <= 1.0 + 1e-3);
        std::filesystem::remove(exported);
    }

    SUBCASE("truncated or corrupt files are format errors")
    {
        std::string bytes = encode_checkpoint(network_to_checkpoint(net));
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 7)), FormatError);
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 12)), FormatError);
        std::string bad_magic = bytes;
        bad_magic[0] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);

        CheckpointFile wrong = network_to_checkpoint(net);
        wrong.tensors[0].tensor = Tensor<float>({1, 1, 3, 3});
        CHECK_THROWS_AS(network_from_checkpoint<float>(decode_checkpoint(encode_checkpoint(wrong))), FormatError);
        CheckpointFile missing = network_to_checkpoint(net);
        missing.tensors.pop_back();
        CHECK_THROWS_AS(network_from_checkpoint<float>(missing), FormatError);
        CHECK_THROWS_AS(read_checkpoint(temp_path("does_not_exist.ckpt")), FormatError);
    }
    std::filesystem::remove(path);
}
