#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string& cli()
{
    static const std::string path = [] {
        const char* p = std::getenv("STABLEVSR_CLI");
        return std::string(p ? p : "stablevsr");
    }();
    return path;
}

int run(const std::string& args)
{
    const int status = std::system((cli() + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("stablevsr_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("synth-data is deterministic and writes a resolved config")
{
    const fs::path dir = scratch("synth");
    REQUIRE(run("synth-data --out " + (dir / "a").string() + " --length 6 --height 32 --width 32 --seed 5") == 0);
    REQUIRE(run("synth-data --out " + (dir / "b").string() + " --length 6 --height 32 --width 32 --seed 5") == 0);
    int frames = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        if (e.path().extension() != ".png")
            continue;
        ++frames;
        CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
    }
    CHECK(frames == 6);
    const auto resolved = nlohmann::json::parse(slurp(dir / "a" / "resolved_config.synth-data.json"));
    CHECK(resolved.at("data").at("length") == 6);
    fs::remove_all(dir);
}

TEST_CASE("exit codes")
{
    const fs::path dir = scratch("codes");
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("certify") == 2);

    write_text(dir / "typo.json", R"({"seed": 1, "trian": {}})");
    CHECK(run("train --config " + (dir / "typo.json").string() + " --out " + (dir / "o").string()) == 2);
    write_text(dir / "nested.json", R"({"train": {"lr": 0.1}})");
    CHECK(run("train --config " + (dir / "nested.json").string() + " --out " + (dir / "o").string()) == 2);
    write_text(dir / "broken.json", "{");
    CHECK(run("synth-data --config " + (dir / "broken.json").string() + " --out " + (dir / "o").string()) == 2);

    CHECK(run("certify --checkpoint " + (dir / "missing.ckpt").string()) == 1);
    write_text(dir / "junk.ckpt", "not a checkpoint");
    CHECK(run("certify --checkpoint " + (dir / "junk.ckpt").string()) == 1);
    CHECK(run("degrade --frames " + (dir / "nowhere").string() + " --out " + (dir / "o").string()) == 1);
    fs::remove_all(dir);
}

TEST_CASE("pipeline: train, certify, infer and evaluate")
{
    const fs::path dir = scratch("pipeline");
    const std::string d = dir.string();
    REQUIRE(run("synth-data --out " + d + "/hr --length 16 --height 32 --width 32 --seed 2") == 0);
    REQUIRE(run("degrade --frames " + d + "/hr --out " + d + "/lr") == 0);
    write_text(dir / "train.json",
               R"({"seed": 4, "train": {"desk": true, "epochs": 2, "clips_per_epoch": 2, "batch": 1, "crop_lr": 8},
                   "models": [{"preset": "mrvsr", "features": 8}]})");
    REQUIRE(run("train --config " + d + "/train.json --frames " + d + "/hr --out " + d + "/run") == 0);
    CHECK(fs::exists(dir / "run" / "mrvsr.ckpt"));
    CHECK(fs::exists(dir / "run" / "resolved_config.train.json"));

    REQUIRE(run("certify --checkpoint " + d + "/run/mrvsr.ckpt --trials 10 --out " + d + "/cert") == 0);
    const auto cert = nlohmann::json::parse(slurp(dir / "cert" / "mrvsr.certificate.json"));
    CHECK(cert.at("bound").get<double>() <= 1.001);
    CHECK(cert.at("empirical_contraction").get<double>() <= cert.at("bound").get<double>() + 1e-4);

    REQUIRE(run("infer --checkpoint " + d + "/run/mrvsr.ckpt --frames " + d + "/lr --out " + d + "/pred") == 0);
    CHECK(fs::exists(dir / "pred" / "y"));
    CHECK(fs::exists(dir / "pred" / "rgb"));

    SUBCASE("identical directories score the PSNR cap")
    {
        REQUIRE(run("eval --frames " + d + "/hr --gt " + d + "/hr --out " + d + "/same") == 0);
        const auto agg = nlohmann::json::parse(slurp(dir / "same" / "aggregates.json"));
        CHECK(agg.at("all").at("psnr_y").get<double>() == 99.0);
        CHECK(agg.at("all").at("ssim_y").get<double>() == doctest::Approx(1.0));
        CHECK(fs::exists(dir / "same" / "metrics.csv"));
        CHECK(fs::exists(dir / "same" / "temporal_profile.png"));
    }
    SUBCASE("evaluation is reproducible byte for byte")
    {
        REQUIRE(run("eval --frames " + d + "/pred/y --gt " + d + "/hr --out " + d + "/e1") == 0);
        REQUIRE(run("eval --frames " + d + "/pred/y --gt " + d + "/hr --out " + d + "/e2") == 0);
        CHECK(slurp(dir / "e1" / "metrics.csv") == slurp(dir / "e2" / "metrics.csv"));
    }
    SUBCASE("strf diagnosis writes its report")
    {
        write_text(dir / "strf.json", R"({"strf": {"tau": 4, "height": 12, "width": 12, "iters": 10}})");
        REQUIRE(run("diagnose-strf --config " + d + "/strf.json --checkpoint " + d + "/run/mrvsr.ckpt --out " + d +
                    "/strf") == 0);
        const auto s = nlohmann::json::parse(slurp(dir / "strf" / "strf.json"));
        CHECK(s.at("deviation").size() == 9);
        CHECK(fs::exists(dir / "strf" / "deviation.csv"));
    }
    fs::remove_all(dir);
}
