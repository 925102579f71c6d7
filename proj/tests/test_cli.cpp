// End-to-end checks of the command-line tool: spawns the real binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "etma_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(ETMA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(bool(in), "missing file: " << p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

bool dirs_identical(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel_a;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
    for (const auto& rel : rel_a) {
        if (!fs::exists(b / rel)) return false;
        if (slurp(a / rel) != slurp(b / rel)) return false;
    }
    std::size_t count_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) ++count_b;
    return count_b == rel_a.size();
}

const char* kSpecJson = R"({"n_samples": 48, "image_size": 8, "quadrants": 4,
                            "distractors": 3, "seed": 11})";

const char* kConfig =
    "image_size = 8\n"
    "patch = 4\n"
    "dim = 8\n"
    "layers = 1\n"
    "heads = 2\n"
    "joint_dim = 8\n"
    "n_max = 6\n"
    "mlp_ratio = 2\n"
    "dropout = 0.0\n"
    "batch_size = 8\n"
    "epochs = 2\n"
    "lr = 0.003\n"
    "seed = 5\n";

}  // namespace

TEST_CASE("cli pipeline: gen-data, train, eval, viz-attn, bench, ablate") {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write(kRoot / "spec.json", kSpecJson);
    write(kRoot / "run.cfg", kConfig);

    // gen-data: counts and byte-identical regeneration.
    REQUIRE(run("gen-data --spec " + (kRoot / "spec.json").string() + " --out " +
                (kRoot / "data").string()) == 0);
    CHECK(fs::exists(kRoot / "data" / "manifest.csv"));
    CHECK(fs::exists(kRoot / "data" / "spec.json-lines"));
    std::size_t ppm_count = 0;
    for (const auto& e : fs::directory_iterator(kRoot / "data" / "images")) {
        ++ppm_count;
        CHECK(e.path().extension() == ".ppm");
    }
    CHECK(ppm_count == 48);

    REQUIRE(run("gen-data --spec " + (kRoot / "spec.json").string() + " --out " +
                (kRoot / "data2").string()) == 0);
    CHECK(dirs_identical(kRoot / "data", kRoot / "data2"));

    // Refuse to clobber without --force.
    CHECK(run("gen-data --spec " + (kRoot / "spec.json").string() + " --out " +
              (kRoot / "data").string()) == 2);
    CHECK(run("gen-data --spec " + (kRoot / "spec.json").string() + " --out " +
              (kRoot / "data").string() + " --force") == 0);

    // Missing spec file: exit 2.
    CHECK(run("gen-data --spec " + (kRoot / "nothing.json").string() + " --out " +
              (kRoot / "never").string()) == 2);

    // train: artifacts appear.
    REQUIRE(run("train --config " + (kRoot / "run.cfg").string() + " --data " +
                (kRoot / "data").string() + " --out " + (kRoot / "run1").string()) == 0);
    CHECK(fs::exists(kRoot / "run1" / "checkpoint.etma"));
    CHECK(fs::exists(kRoot / "run1" / "report.jsonl"));
    CHECK(fs::exists(kRoot / "run1" / "curves.csv"));
    CHECK(fs::exists(kRoot / "run1" / "vocab.txt"));

    // Determinism: a second run writes the same checkpoint and the same
    // report apart from wall-clock fields.
    REQUIRE(run("train --config " + (kRoot / "run.cfg").string() + " --data " +
                (kRoot / "data").string() + " --out " + (kRoot / "run2").string()) == 0);
    CHECK(slurp(kRoot / "run1" / "checkpoint.etma") == slurp(kRoot / "run2" / "checkpoint.etma"));
    {
        std::ifstream r1(kRoot / "run1" / "report.jsonl"), r2(kRoot / "run2" / "report.jsonl");
        std::string l1, l2;
        while (std::getline(r1, l1) && std::getline(r2, l2)) {
            json a = json::parse(l1), b = json::parse(l2);
            a.erase("ms");
            b.erase("ms");
            CHECK(a == b);
        }
    }

    // Variant flag plumbs through (and its checkpoint differs from full).
    REQUIRE(run("train --config " + (kRoot / "run.cfg").string() + " --data " +
                (kRoot / "data").string() + " --out " + (kRoot / "run_novs").string() +
                " --variant no_vs_attn") == 0);
    CHECK(slurp(kRoot / "run_novs" / "checkpoint.etma") !=
          slurp(kRoot / "run1" / "checkpoint.etma"));

    // eval: metric artifacts, and the recorded best val accuracy reproduces
    // exactly on the val split.
    REQUIRE(run("eval --checkpoint " + (kRoot / "run1" / "checkpoint.etma").string() +
                " --data " + (kRoot / "data").string() + " --split val --out " +
                (kRoot / "eval_val").string()) == 0);
    CHECK(fs::exists(kRoot / "eval_val" / "metrics.jsonl"));
    CHECK(fs::exists(kRoot / "eval_val" / "metrics.csv"));
    {
        const json metrics = json::parse(slurp(kRoot / "eval_val" / "metrics.jsonl"));
        // Fish the selected epoch's val_acc out of the training report.
        std::ifstream rep(kRoot / "run1" / "report.jsonl");
        std::string line;
        double best = -1;
        while (std::getline(rep, line)) {
            const json e = json::parse(line);
            best = std::max(best, e["val_acc"].get<double>());
        }
        CHECK(metrics["accuracy"].get<double>() == best);
    }

    REQUIRE(run("eval --checkpoint " + (kRoot / "run1" / "checkpoint.etma").string() +
                " --data " + (kRoot / "data").string() + " --split test --out " +
                (kRoot / "eval_test").string()) == 0);
    CHECK(fs::exists(kRoot / "eval_test" / "metrics.csv"));

    // viz-attn: heatmap dimensions match the image, max byte is 255.
    REQUIRE(run("viz-attn --checkpoint " + (kRoot / "run1" / "checkpoint.etma").string() +
                " --data " + (kRoot / "data").string() + " --sample-id s00003 --out " +
                (kRoot / "viz").string()) == 0);
    {
        const std::string pgm = slurp(kRoot / "viz" / "heatmap.pgm");
        CHECK(pgm.rfind("P5\n8 8\n255\n", 0) == 0);
        const std::string pixels = pgm.substr(10);
        REQUIRE(pixels.size() == 64);
        unsigned max_byte = 0;
        for (unsigned char c : pixels) max_byte = std::max(max_byte, unsigned(c));
        CHECK(max_byte == 255);
        CHECK(fs::exists(kRoot / "viz" / "tokens.csv"));
        CHECK(fs::exists(kRoot / "viz" / "alpha.csv"));
        CHECK(fs::exists(kRoot / "viz" / "prediction.txt"));
    }
    CHECK(run("viz-attn --checkpoint " + (kRoot / "run1" / "checkpoint.etma").string() +
              " --data " + (kRoot / "data").string() + " --sample-id missing --out " +
              (kRoot / "viz2").string()) == 2);

    // bench: trial count echoes back; works on an untrained checkpoint too.
    REQUIRE(run("bench --checkpoint " + (kRoot / "run1" / "checkpoint.etma").string() +
                " --data " + (kRoot / "data").string() + " --trials 30 --out " +
                (kRoot / "bench").string()) == 0);
    {
        const json b = json::parse(slurp(kRoot / "bench" / "bench.jsonl"));
        CHECK(b["trials"].get<int>() == 30);
        CHECK(b["testing_ms_per_sample"]["p50"].get<double>() <=
              b["testing_ms_per_sample"]["p95"].get<double>());
    }

    // ablate: seven rows.
    REQUIRE(run("ablate --config " + (kRoot / "run.cfg").string() + " --data " +
                (kRoot / "data").string() + " --out " + (kRoot / "ablation").string()) == 0);
    {
        const std::string csv = slurp(kRoot / "ablation" / "ablation.csv");
        std::size_t rows = 0;
        for (char c : csv) rows += c == '\n' ? 1 : 0;
        CHECK(rows == 8);  // header + 7 variants
    }

    // Usage errors exit 2.
    CHECK(run("train --config missing.cfg --data nowhere --out x") == 2);
    CHECK(run("no-such-command") == 2);

    fs::remove_all(kRoot);
}
