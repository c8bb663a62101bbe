#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "fusedce/bench.hpp"
#include "fusedce/demo.hpp"
#include "fusedce/instance.hpp"
#include "fusedce/verify.hpp"

namespace {

using fusedce::ParallelMode;
using fusedce::PrecisionMode;
using fusedce::ReductionMode;

PrecisionMode parse_precision(const std::string& name) {
    if (name == "f32") {
        return {fusedce::ComputePrecision::F32, fusedce::StoragePrecision::SameAsCompute};
    }
    if (name == "f64") {
        return {fusedce::ComputePrecision::F64, fusedce::StoragePrecision::SameAsCompute};
    }
    if (name == "bf16") {
        return {fusedce::ComputePrecision::F32, fusedce::StoragePrecision::Bf16Emulated};
    }
    throw fusedce::InvalidLayout("unknown precision '" + name + "' (f32, f64, bf16)");
}

ReductionMode parse_reduction(const std::string& name) {
    if (name == "mean") {
        return ReductionMode::Mean;
    }
    if (name == "sum") {
        return ReductionMode::Sum;
    }
    if (name == "none") {
        return ReductionMode::None;
    }
    throw fusedce::InvalidLayout("unknown reduction '" + name + "' (mean, sum, none)");
}

ParallelMode parse_parallel_mode(const std::string& name) {
    if (name == "tp" || name == "tensor") {
        return ParallelMode::TensorParallel;
    }
    if (name == "sp" || name == "sequence") {
        return ParallelMode::SequenceParallel;
    }
    if (name == "dp" || name == "data") {
        return ParallelMode::DataParallel;
    }
    throw fusedce::InvalidLayout("unknown parallel mode '" + name + "' (tp, sp, dp)");
}

std::size_t default_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

// Everything renders into a string first; --output then writes a sibling
// temp file and renames it into place, so a failed run never leaves a
// partial file at the destination.
void deliver(const std::string& text, const std::string& output_path) {
    if (output_path.empty()) {
        std::cout << text;
        return;
    }
    const std::filesystem::path dest(output_path);
    const std::filesystem::path tmp(output_path + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw fusedce::InvalidLayout("cannot open '" + tmp.string() + "' for writing");
        }
        out << text;
        if (!out.flush()) {
            std::filesystem::remove(tmp);
            throw fusedce::InvalidLayout("failed writing '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, dest);
}

struct VerifyOptions {
    std::string precision = "f32";
    std::uint64_t seed = 42;
    std::size_t ranks = 1;
    std::string parallel_mode = "tp";
    std::size_t workers = default_workers();
    std::size_t loss_instances = 200;
    std::size_t grad_instances = 50;
    std::string output;
};

int run_verify(const VerifyOptions& opt) {
    fusedce::verify::VerifyConfig cfg;
    cfg.precision = parse_precision(opt.precision);
    cfg.seed = opt.seed;
    cfg.ranks = opt.ranks;
    cfg.mode = parse_parallel_mode(opt.parallel_mode);
    cfg.workers = opt.workers;
    cfg.loss_instances = opt.loss_instances;
    cfg.grad_instances = opt.grad_instances;

    const auto suites = fusedce::verify::run_all(cfg);
    std::ostringstream out;
    out << "verification (" << precision_name(cfg.precision) << ", seed " << cfg.seed << ", "
        << cfg.ranks << " ranks)\n";
    bool all_passed = true;
    for (const auto& s : suites) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-20s  cases=%-4zu  max_error=%-12.3e  tol=%-9.1e  %s",
                      s.name.c_str(), s.cases, s.max_error, s.tolerance,
                      s.passed ? "pass" : "FAIL");
        out << line;
        if (!s.detail.empty()) {
            out << "  (" << s.detail << ")";
        }
        out << "\n";
        all_passed = all_passed && s.passed;
    }
    out << "overall: " << (all_passed ? "pass" : "FAIL") << "\n";
    deliver(out.str(), opt.output);
    return all_passed ? 0 : 1;
}

struct BenchOptions {
    std::vector<std::size_t> bt = {1024, 4096};
    std::vector<std::size_t> vocab = {8192, 32768};
    std::size_t hidden = 256;
    std::vector<std::string> methods = {"canonical", "fused"};
    std::string precision = "f32";
    std::string reduction = "mean";
    std::size_t window = 0;
    std::uint64_t seed = 42;
    std::size_t repeats = 5;
    std::size_t warmup = 2;
    std::size_t workers = default_workers();
    bool forward_only = false;
    std::string format = "csv";
    std::string output;
};

int run_bench(const BenchOptions& opt) {
    fusedce::bench::BenchConfig cfg;
    cfg.bt_values = opt.bt;
    cfg.vocab_values = opt.vocab;
    cfg.hidden = opt.hidden;
    cfg.methods.clear();
    for (const std::string& m : opt.methods) {
        cfg.methods.push_back(fusedce::bench::parse_method(m));
    }
    cfg.precision = parse_precision(opt.precision);
    cfg.reduction = parse_reduction(opt.reduction);
    cfg.window_size = opt.window;
    cfg.seed = opt.seed;
    cfg.repeats = opt.repeats;
    cfg.warmup = opt.warmup;
    cfg.workers = opt.workers;
    cfg.forward_only = opt.forward_only;

    const auto records = fusedce::bench::sweep(cfg);
    std::ostringstream out;
    fusedce::bench::emit(records, fusedce::bench::parse_format(opt.format), out);
    deliver(out.str(), opt.output);
    return 0;
}

struct DemoOptions {
    std::size_t bt = 2;
    std::size_t hidden = 3;
    std::size_t vocab = 5;
    std::string reduction = "mean";
    std::uint64_t seed = 42;
    std::vector<double> h;
    std::vector<double> w;
    std::vector<std::int64_t> targets;
    std::optional<std::int64_t> ignore_index;
    std::string output;
};

int run_demo(const DemoOptions& opt) {
    fusedce::Instance<double> inst =
        fusedce::make_random_instance<double>(opt.bt, opt.hidden, opt.vocab, opt.seed);
    if (!opt.h.empty()) {
        inst.hidden = fusedce::DenseMatrix<double>(opt.bt, opt.hidden, opt.h);
    }
    if (!opt.w.empty()) {
        inst.weights = fusedce::DenseMatrix<double>(opt.vocab, opt.hidden, opt.w);
    }
    std::vector<std::int64_t> targets =
        opt.targets.empty() ? inst.targets.values() : opt.targets;
    inst.targets = fusedce::TargetVector(std::move(targets), opt.ignore_index);

    std::ostringstream out;
    fusedce::demo::run(inst.hidden, inst.weights, inst.targets,
                       parse_reduction(opt.reduction), out);
    deliver(out.str(), opt.output);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fused output-projection cross-entropy: verify, bench, demo"};
    app.require_subcommand(1);

    VerifyOptions vopt;
    CLI::App* verify = app.add_subcommand("verify", "run the randomized equivalence suites");
    verify->add_option("--precision", vopt.precision, "f32, f64, or bf16");
    verify->add_option("--seed", vopt.seed, "base RNG seed");
    verify->add_option("--ranks", vopt.ranks, "simulated rank count for the shard suite");
    verify->add_option("--parallel-mode", vopt.parallel_mode, "tp, sp, or dp");
    verify->add_option("--workers", vopt.workers, "worker count for fused kernels");
    verify->add_option("--loss-instances", vopt.loss_instances, "loss suite instance count");
    verify->add_option("--grad-instances", vopt.grad_instances, "gradient suite instance count");
    verify->add_option("--output", vopt.output, "write the report to this path");

    BenchOptions bopt;
    CLI::App* bench = app.add_subcommand("bench", "time and memory-account the methods");
    bench->add_option("--bt", bopt.bt, "B*T grid values")->delimiter(',');
    bench->add_option("--vocab", bopt.vocab, "vocabulary grid values")->delimiter(',');
    bench->add_option("--hidden", bopt.hidden, "hidden dimension d");
    bench->add_option("--methods", bopt.methods,
                      "canonical, fused, fused_windowed, fused_partial_grad")
        ->delimiter(',');
    bench->add_option("--precision", bopt.precision, "f32, f64, or bf16");
    bench->add_option("--reduction", bopt.reduction, "mean, sum, or none");
    bench->add_option("--window", bopt.window, "vocabulary window size (0 = whole vocabulary)");
    bench->add_option("--seed", bopt.seed, "instance seed");
    bench->add_option("--repeats", bopt.repeats, "timed repeats per case (median reported)");
    bench->add_option("--warmup", bopt.warmup, "discarded warmup iterations per case");
    bench->add_option("--workers", bopt.workers, "worker count for fused kernels");
    bench->add_flag("--forward-only", bopt.forward_only, "skip the backward pass");
    bench->add_option("--format", bopt.format, "csv, markdown, or plotdata");
    bench->add_option("--output", bopt.output, "write results to this path");

    DemoOptions dopt;
    CLI::App* demo = app.add_subcommand("demo", "trace the streaming recurrence on a tiny case");
    demo->add_option("--bt", dopt.bt, "positions (<= 8)");
    demo->add_option("--hidden", dopt.hidden, "hidden dimension (<= 8)");
    demo->add_option("--vocab", dopt.vocab, "vocabulary size (<= 16)");
    demo->add_option("--reduction", dopt.reduction, "mean, sum, or none");
    demo->add_option("--seed", dopt.seed, "seed for the generated instance");
    demo->add_option("--hmat", dopt.h, "explicit hidden values, row-major")->delimiter(',');
    demo->add_option("--wmat", dopt.w, "explicit weight values, row-major")->delimiter(',');
    demo->add_option("--targets", dopt.targets, "explicit targets")->delimiter(',');
    demo->add_option("--ignore-index", dopt.ignore_index, "sentinel marking ignored positions");
    demo->add_option("--output", dopt.output, "write the trace to this path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (verify->parsed()) {
            return run_verify(vopt);
        }
        if (bench->parsed()) {
            return run_bench(bopt);
        }
        return run_demo(dopt);
    } catch (const fusedce::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
