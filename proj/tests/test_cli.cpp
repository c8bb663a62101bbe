// Drives the installed binary end to end through std::system. The build
// passes the binary location in FUSEDCE_CLI_PATH.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#ifndef FUSEDCE_CLI_PATH
#error "FUSEDCE_CLI_PATH must point at the fusedce binary"
#endif

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

std::filesystem::path temp_file(const std::string& tag) {
    return std::filesystem::temp_directory_path() / ("fusedce_cli_" + tag + ".txt");
}

RunResult run_cli(const std::string& args, const std::string& tag) {
    const auto capture = temp_file(tag);
    const std::string cmd = std::string(FUSEDCE_CLI_PATH) + " " + args + " > " +
                            capture.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult result;
    result.code = (raw >= 0 && raw % 256 == 0) ? raw / 256 : -1;
    std::ifstream in(capture);
    std::stringstream buf;
    buf << in.rdbuf();
    result.out = buf.str();
    std::filesystem::remove(capture);
    return result;
}

// Column extraction for CSV determinism checks.
std::vector<std::string> csv_column(const std::string& text, std::size_t index) {
    std::vector<std::string> values;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (field == index) {
                    values.push_back(line.substr(start, i - start));
                }
                ++field;
                start = i + 1;
            }
        }
    }
    return values;
}

}  // namespace

TEST_CASE("help exits zero and names the subcommands") {
    const auto r = run_cli("--help", "help");
    CHECK(r.code == 0);
    CHECK(r.out.find("verify") != std::string::npos);
    CHECK(r.out.find("bench") != std::string::npos);
    CHECK(r.out.find("demo") != std::string::npos);
}

TEST_CASE("bad invocations exit with the usage code") {
    CHECK(run_cli("", "nosub").code == 2);
    CHECK(run_cli("frobnicate", "unknown_sub").code == 2);
    CHECK(run_cli("bench --no-such-flag", "badflag").code == 2);
    CHECK(run_cli("bench --vocab 0 --bt 4 --repeats 1 --warmup 0", "zerovocab").code == 2);
    CHECK(run_cli("verify --precision f16", "badprec").code == 2);
    CHECK(run_cli("demo --bt 9", "caps").code == 2);
    CHECK(run_cli("demo --vocab 3 --hidden 1 --bt 1 --hmat 1 --wmat 0,1,2 --targets 5",
                  "oortarget")
              .code == 2);
}

TEST_CASE("verify runs every suite and reports a pass") {
    const auto r = run_cli("verify --loss-instances 20 --grad-instances 5", "verify");
    CHECK(r.code == 0);
    CHECK(r.out.find("overall: pass") != std::string::npos);
    for (const char* suite : {"loss_equivalence", "gradient_recompute", "finite_difference",
                              "gradient_paths", "window_sweep", "shard_invariance",
                              "stability"}) {
        CHECK(r.out.find(suite) != std::string::npos);
    }
    CHECK(r.out.find("FAIL") == std::string::npos);

    const auto f64 = run_cli("verify --precision f64 --loss-instances 10 --grad-instances 5",
                             "verify64");
    CHECK(f64.code == 0);
    CHECK(f64.out.find("overall: pass") != std::string::npos);

    const auto tp = run_cli("verify --ranks 3 --loss-instances 10 --grad-instances 5", "verifytp");
    CHECK(tp.code == 0);
}

TEST_CASE("demo walks the worked example") {
    const auto r = run_cli("demo --bt 1 --hidden 1 --vocab 3 --hmat 1 --wmat 0,1,2 --targets 2",
                           "demo1");
    REQUIRE(r.code == 0);
    // Logits 0, 1, 2 with target 2: a = 1 + e^-1 + e^-2, loss = log a.
    CHECK(r.out.find("1.503214724") != std::string::npos);
    CHECK(r.out.find("0.407605964") != std::string::npos);
    CHECK(r.out.find("ledger") != std::string::npos);

    const auto trivial = run_cli("demo --bt 1 --hidden 1 --vocab 1 --hmat 1 --wmat 1 --targets 0",
                                 "demo2");
    REQUIRE(trivial.code == 0);
    CHECK(trivial.out.find("0.000000000") != std::string::npos);

    const auto random = run_cli("demo --bt 2 --hidden 3 --vocab 5 --seed 7", "demo3");
    CHECK(random.code == 0);
    const auto random_again = run_cli("demo --bt 2 --hidden 3 --vocab 5 --seed 7", "demo4");
    CHECK(random_again.out == random.out);
}

TEST_CASE("bench csv is deterministic where it promises to be") {
    const std::string args =
        "bench --bt 8,16 --vocab 32,64 --hidden 8 --methods canonical,fused "
        "--repeats 1 --warmup 0 --seed 5";
    const auto a = run_cli(args, "bencha");
    const auto b = run_cli(args, "benchb");
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(csv_column(a.out, 0).size() == 8);
    CHECK(csv_column(a.out, 8) == csv_column(b.out, 8));  // aux_peak_bytes
    CHECK(csv_column(a.out, 9) == csv_column(b.out, 9));  // loss
    CHECK(a.out.rfind("bt,vocab,hidden,method,precision,", 0) == 0);
}

TEST_CASE("bench markdown and plotdata render") {
    const auto md = run_cli(
        "bench --bt 8 --vocab 32,64 --hidden 8 --repeats 1 --warmup 0 --format markdown",
        "benchmd");
    REQUIRE(md.code == 0);
    CHECK(md.out.find("| B*T | V |") != std::string::npos);
    CHECK(md.out.find("latency_ms canonical") != std::string::npos);
    CHECK(md.out.find("memory_mb fused") != std::string::npos);

    const auto plot = run_cli(
        "bench --bt 8 --vocab 32,64 --hidden 8 --repeats 1 --warmup 0 --format plotdata",
        "benchplot");
    REQUIRE(plot.code == 0);
    CHECK(plot.out.find("# series method=") != std::string::npos);
}

TEST_CASE("output files land atomically") {
    const auto target = temp_file("outfile_target");
    std::filesystem::remove(target);
    const auto r = run_cli("bench --bt 8 --vocab 32 --hidden 8 --repeats 1 --warmup 0 --output " +
                               target.string(),
                           "benchout");
    REQUIRE(r.code == 0);
    REQUIRE(std::filesystem::exists(target));
    CHECK_FALSE(std::filesystem::exists(target.string() + ".tmp"));
    std::ifstream in(target);
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("bt,vocab,", 0) == 0);
    std::filesystem::remove(target);
}
