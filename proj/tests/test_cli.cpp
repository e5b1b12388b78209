#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lr/lr.hpp"

using namespace lr;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Runs the CLI through the shell so tests can prepend env assignments.
CliResult run_cli(const std::string& args, const fs::path& scratch,
                  const std::string& env_prefix = {}) {
    const fs::path out = scratch / "stdout.txt";
    const fs::path err = scratch / "stderr.txt";
    const std::string cmd = env_prefix + " " LR_CLI_PATH " " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// Small, fast configuration shared by every compute invocation.
PipelineConfig small_cfg() {
    PipelineConfig cfg;
    cfg.T = 10;
    cfg.lambda1 = 2;
    cfg.lambda2 = 2;
    cfg.blend_start = 6;
    cfg.latent_shape = {2, 4, 4};
    cfg.image_size = {16, 16};
    cfg.toy.d_model = 12;
    cfg.toy.n_blocks = 1;
    cfg.validate();
    return cfg;
}

struct CliFixture {
    fs::path dir;
    fs::path config;
    fs::path reference;

    CliFixture() {
        dir = fs::temp_directory_path() /
              ("lr-cli-" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);

        const PipelineConfig cfg = small_cfg();
        config = dir / "config.json";
        std::ofstream f(config);
        f << config_to_json(cfg).dump(2) << "\n";

        Image ref;
        ref.data = Tensor({3, 16, 16});
        SplitMix64 g(97);
        for (std::size_t i = 0; i < ref.data.numel(); ++i)
            ref.data[i] = 0.25f + 0.5f * float(g.next_uniform());
        // A bright patch gives the segmenter stub something to find.
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 5; y < 11; ++y)
                for (std::size_t x = 5; x < 11; ++x)
                    ref.data[(c * 16 + y) * 16 + x] = 0.95f;
        reference = dir / "reference.ppm";
        save_ppm(ref, reference.string());
    }

    std::string base_args(const std::string& sub) const {
        return sub + " --config " + config.string() + " --out " +
               (dir / "out").string();
    }
};

}  // namespace

TEST_CASE("cli generate produces a complete run directory") {
    CliFixture fx;
    const std::string args =
        fx.base_args("generate") + " --prompt 'a <*> on a beach' --reference " +
        fx.reference.string() + " --run-id smoke";
    const CliResult r = run_cli(args, fx.dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("generate run:"));
    REQUIRE_THAT(r.out,
                 Catch::Matchers::ContainsSubstring("target fingerprint:"));

    const fs::path run = fx.dir / "out" / "smoke";
    REQUIRE(fs::exists(run / "record.json"));
    REQUIRE(fs::exists(run / "images" / "target.ppm"));
    REQUIRE(fs::exists(run / "images" / "layout.ppm"));
    REQUIRE(fs::exists(run / "masks" / "m.pgm"));
    REQUIRE(fs::exists(run / "latents" / "target_z0.ltr"));

    const nlohmann::json rec = nlohmann::json::parse(slurp(run / "record.json"));
    REQUIRE(rec["config"]["T"].get<int>() == 10);
    REQUIRE(rec["stages"].size() == 3);

    SECTION("same seed reproduces the fingerprint, another seed moves it") {
        const CliResult again = run_cli(
            fx.base_args("generate") +
                " --prompt 'a <*> on a beach' --reference " +
                fx.reference.string() + " --run-id smoke2",
            fx.dir);
        REQUIRE(again.exit_code == 0);
        const auto fp = [](const std::string& text) {
            const auto pos = text.find("target fingerprint: ");
            return text.substr(pos);
        };
        REQUIRE(fp(again.out) == fp(r.out));

        const CliResult other = run_cli(
            fx.base_args("generate") +
                " --prompt 'a <*> on a beach' --reference " +
                fx.reference.string() + " --run-id smoke3 --seed 3",
            fx.dir);
        REQUIRE(other.exit_code == 0);
        REQUIRE(fp(other.out) != fp(r.out));
    }
}

TEST_CASE("cli dry run prints the resolved config without running") {
    CliFixture fx;

    SECTION("config json plus the per-iteration schedule") {
        const CliResult r = run_cli(
            fx.base_args("generate") + " --prompt 'a <*>' --reference " +
                fx.reference.string() + " --dry-run --run-id dry",
            fx.dir);
        REQUIRE(r.exit_code == 0);
        REQUIRE_THAT(r.out,
                     Catch::Matchers::ContainsSubstring("stage1-model"));
        REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("vanilla"));
        REQUIRE_THAT(r.out,
                     Catch::Matchers::ContainsSubstring("personalized"));
        REQUIRE(!fs::exists(fx.dir / "out" / "dry"));
    }
    SECTION("flags override the config file") {
        // eval-centers emits bare JSON on dry runs, so it parses directly.
        const CliResult r = run_cli(fx.base_args("eval-centers") +
                                        " --dry-run --lambda1 7 --steps 12 "
                                        "--tau 0.5 nonexistent.pgm",
                                    fx.dir);
        REQUIRE(r.exit_code == 0);
        const nlohmann::json j = nlohmann::json::parse(r.out);
        REQUIRE(j["lambda1"].get<int>() == 7);
        REQUIRE(j["T"].get<int>() == 12);
        REQUIRE(j["ca_threshold"].get<double>() == Catch::Approx(0.5));
        // Untouched keys come from the file.
        REQUIRE(j["blend_start"].get<int>() == 6);
    }
    SECTION("challenging profile lowers lambda1 unless given explicitly") {
        const CliResult a = run_cli(fx.base_args("eval-centers") +
                                        " --dry-run --profile challenging "
                                        "x.pgm",
                                    fx.dir);
        REQUIRE(a.exit_code == 0);
        REQUIRE(nlohmann::json::parse(a.out)["lambda1"].get<int>() == 3);

        const CliResult b = run_cli(fx.base_args("eval-centers") +
                                        " --dry-run --profile challenging "
                                        "--lambda1 4 x.pgm",
                                    fx.dir);
        REQUIRE(b.exit_code == 0);
        REQUIRE(nlohmann::json::parse(b.out)["lambda1"].get<int>() == 4);
    }
    SECTION("boolean flags flip the blend and early-query settings") {
        const CliResult r = run_cli(fx.base_args("eval-centers") +
                                        " --dry-run --no-blend --no-early-q "
                                        "x.pgm",
                                    fx.dir);
        REQUIRE(r.exit_code == 0);
        const nlohmann::json j = nlohmann::json::parse(r.out);
        REQUIRE(j["blend_enabled"].get<bool>() == false);
        REQUIRE(j["early_self_q_swap"].get<bool>() == false);
    }
}

TEST_CASE("cli exit codes distinguish failure families") {
    CliFixture fx;

    SECTION("invalid configuration exits 1") {
        const CliResult r = run_cli(
            fx.base_args("generate") + " --prompt 'a <*>' --reference " +
                fx.reference.string() + " --steps 0",
            fx.dir);
        REQUIRE(r.exit_code == 1);
        REQUIRE_THAT(r.err,
                     Catch::Matchers::ContainsSubstring("validation error"));
    }
    SECTION("prompt without the personalization token exits 1") {
        const CliResult r = run_cli(
            fx.base_args("generate") + " --prompt 'a plain cat' --reference " +
                fx.reference.string(),
            fx.dir);
        REQUIRE(r.exit_code == 1);
        REQUIRE_THAT(r.err,
                     Catch::Matchers::ContainsSubstring("validation error"));
    }
    SECTION("unknown flag exits 1") {
        const CliResult r =
            run_cli(fx.base_args("generate") + " --bogus", fx.dir);
        REQUIRE(r.exit_code == 1);
    }
    SECTION("unknown log level exits 1") {
        const CliResult r = run_cli(
            fx.base_args("generate") + " --prompt 'a <*>' --reference " +
                fx.reference.string() + " --log-level loud",
            fx.dir);
        REQUIRE(r.exit_code == 1);
    }
    SECTION("missing input file exits 2") {
        const CliResult r = run_cli(
            fx.base_args("generate") +
                " --prompt 'a <*>' --reference /nonexistent/ref.ppm",
            fx.dir);
        REQUIRE(r.exit_code == 2);
        REQUIRE_THAT(r.err,
                     Catch::Matchers::ContainsSubstring("runtime error"));
    }
    SECTION("failing segmenter plugin exits 3") {
        const CliResult r = run_cli(
            fx.base_args("generate") + " --prompt 'a <*>' --reference " +
                fx.reference.string(),
            fx.dir, "LR_SEGMENTER='subprocess:/bin/false'");
        REQUIRE(r.exit_code == 3);
        REQUIRE_THAT(r.err,
                     Catch::Matchers::ContainsSubstring("plugin error"));
    }
    SECTION("wrong image size exits 1 with both sizes in the message") {
        Image big;
        big.data = Tensor({3, 32, 32});
        const fs::path big_path = fx.dir / "big.ppm";
        save_ppm(big, big_path.string());
        const CliResult r = run_cli(
            fx.base_args("generate") + " --prompt 'a <*>' --reference " +
                big_path.string(),
            fx.dir);
        REQUIRE(r.exit_code == 1);
        REQUIRE_THAT(r.err, Catch::Matchers::ContainsSubstring("32x32"));
        REQUIRE_THAT(r.err, Catch::Matchers::ContainsSubstring("16x16"));
    }
}

TEST_CASE("cli layout, retouch and mask-debug stages run standalone") {
    CliFixture fx;

    const CliResult lay = run_cli(
        fx.base_args("layout") + " --prompt 'a <*> by a lake' --run-id lay",
        fx.dir);
    INFO(lay.err);
    REQUIRE(lay.exit_code == 0);
    const fs::path layout_img = fx.dir / "out" / "lay" / "images" /
                                "layout.ppm";
    REQUIRE(fs::exists(layout_img));

    SECTION("retouch with the segmenter stub") {
        const CliResult r = run_cli(
            fx.base_args("retouch") + " --prompt 'a <*> by a lake' --layout " +
                layout_img.string() + " --reference " +
                fx.reference.string() + " --run-id ret",
            fx.dir);
        INFO(r.err);
        REQUIRE(r.exit_code == 0);
        REQUIRE(fs::exists(fx.dir / "out" / "ret" / "images" / "target.ppm"));
        REQUIRE(fs::exists(fx.dir / "out" / "ret" / "masks" / "m.pgm"));
    }
    SECTION("retouch with a precomputed mask") {
        Tensor m({16, 16});
        for (std::size_t y = 4; y < 12; ++y)
            for (std::size_t x = 4; x < 12; ++x) m.at(y, x) = 1.0f;
        const fs::path mask_path = fx.dir / "sam.pgm";
        save_pgm(m, mask_path.string());
        const CliResult r = run_cli(
            fx.base_args("retouch") + " --prompt 'a <*> by a lake' --layout " +
                layout_img.string() + " --reference " +
                fx.reference.string() + " --sam-mask " + mask_path.string() +
                " --run-id ret2",
            fx.dir);
        INFO(r.err);
        REQUIRE(r.exit_code == 0);
        const Tensor saved =
            load_pgm((fx.dir / "out" / "ret2" / "masks" / "m_sam.pgm")
                         .string());
        REQUIRE(bit_equal(saved, m));
    }
    SECTION("mask-debug emits every mask stage") {
        const CliResult r = run_cli(
            fx.base_args("mask-debug") +
                " --prompt 'a <*> by a lake' --layout " + layout_img.string() +
                " --run-id md",
            fx.dir);
        INFO(r.err);
        REQUIRE(r.exit_code == 0);
        const fs::path md = fx.dir / "out" / "md" / "masks";
        for (const char* name : {"m_c.pgm", "m_sam.pgm", "m_k.pgm", "m.pgm"})
            REQUIRE(fs::exists(md / name));
    }
}

TEST_CASE("cli evaluation subcommands") {
    CliFixture fx;

    SECTION("eval-centers reports the closed-form spread") {
        Tensor a({16, 16}), b({16, 16});
        a.at(8, 4) = 1.0f;
        b.at(8, 12) = 1.0f;
        const fs::path pa = fx.dir / "a.pgm", pb = fx.dir / "b.pgm";
        save_pgm(a, pa.string());
        save_pgm(b, pb.string());
        const CliResult r = run_cli(fx.base_args("eval-centers") + " " +
                                        pa.string() + " " + pb.string() +
                                        " --run-id ec",
                                    fx.dir);
        INFO(r.err);
        REQUIRE(r.exit_code == 0);
        REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("n=2"));
        const fs::path run = fx.dir / "out" / "ec";
        REQUIRE(fs::exists(run / "density.pgm"));
        const nlohmann::json j =
            nlohmann::json::parse(slurp(run / "stats.json"));
        // Centers x = 4.5/16 and 12.5/16: variance (0.25)^2 halves to 0.03125.
        REQUIRE(j["sigma2_avg"].get<double>() == 0.03125);
        REQUIRE(j["centers"].size() == 2);
    }
    SECTION("eval-diversity scores a set of images") {
        std::vector<std::string> paths;
        for (int k = 0; k < 3; ++k) {
            Image img;
            img.data = Tensor({3, 16, 16});
            SplitMix64 g(std::uint64_t(k) + 11);
            for (std::size_t i = 0; i < img.data.numel(); ++i)
                img.data[i] = float(g.next_uniform());
            const fs::path p = fx.dir / ("img" + std::to_string(k) + ".ppm");
            save_ppm(img, p.string());
            paths.push_back(p.string());
        }
        const CliResult r = run_cli(fx.base_args("eval-diversity") + " " +
                                        paths[0] + " " + paths[1] + " " +
                                        paths[2] + " --run-id ed",
                                    fx.dir);
        INFO(r.err);
        REQUIRE(r.exit_code == 0);
        const nlohmann::json j = nlohmann::json::parse(
            slurp(fx.dir / "out" / "ed" / "stats.json"));
        REQUIRE(j["n"].get<int>() == 3);
        REQUIRE(j["inception_score"].get<double>() >= 1.0 - 1e-9);
    }
    SECTION("eval-identity scores and exports embeddings") {
        const fs::path exp = fx.dir / "emb.ltr";
        const CliResult r = run_cli(
            fx.base_args("eval-identity") + " --generated " +
                fx.reference.string() + " --reference " +
                fx.reference.string() + " --prompt 'a cat' "
                "--export-embeddings " +
                exp.string() + " --run-id ei",
            fx.dir);
        INFO(r.err);
        REQUIRE(r.exit_code == 0);
        const nlohmann::json j = nlohmann::json::parse(
            slurp(fx.dir / "out" / "ei" / "stats.json"));
        // The same image on both sides embeds identically.
        REQUIRE(j["identity_score"].get<double>() == Catch::Approx(1.0));
        REQUIRE(j.contains("fidelity_score"));
        const Tensor emb = load_tensor(exp.string());
        REQUIRE(emb.rank() == 2);
        REQUIRE(emb.dim(0) == 2);
    }
}

TEST_CASE("cli sweep prints one metric row per lambda1 value") {
    CliFixture fx;
    const CliResult r = run_cli(
        fx.base_args("sweep-lambda1") +
            " --prompt 'a <*> on a beach' --reference " +
            fx.reference.string() + " --values 0,2 --seeds 0,1 --run-id sw",
        fx.dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("lambda1"));
    REQUIRE_THAT(r.out, Catch::Matchers::ContainsSubstring("identity"));

    const nlohmann::json j = nlohmann::json::parse(
        slurp(fx.dir / "out" / "sw" / "sweep.json"));
    REQUIRE(j["rows"].size() == 2);
    int expected[] = {0, 2};
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& row = j["rows"][i];
        REQUIRE(row["lambda1"].get<int>() == expected[i]);
        REQUIRE(row["runs"].get<int>() == 2);
        REQUIRE(row.contains("identity_score"));
        REQUIRE(row.contains("fidelity_score"));
        REQUIRE(row.contains("inception_score"));
    }
    // One run record per (lambda1, seed) pair.
    for (int l1 : expected)
        for (int seed : {0, 1})
            REQUIRE(fs::exists(fx.dir / "out" / "sw" /
                               ("l1-" + std::to_string(l1) + "-seed-" +
                                std::to_string(seed)) /
                               "record.json"));

    SECTION("bad value lists exit 1") {
        const CliResult bad = run_cli(
            fx.base_args("sweep-lambda1") + " --prompt 'a <*>' --reference " +
                fx.reference.string() + " --values 0,x",
            fx.dir);
        REQUIRE(bad.exit_code == 1);
        REQUIRE_THAT(bad.err,
                     Catch::Matchers::ContainsSubstring("not an integer"));
    }
}
