// qplan command line: generate workloads, run the four phases, inspect reports,
// and run the acceptance suite.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qplan/acceptance.hpp"
#include "qplan/error.hpp"
#include "qplan/harness.hpp"

namespace fs = std::filesystem;
using namespace qplan;

namespace {

ConstraintProfile parse_profile(const std::string& spec) {
    ConstraintProfile p;
    if (spec.empty() || spec == "default") return p;
    // "lat=2.0,mem=2.0" scales the median arm-0 cost; "fixed:<c_lat_ms>,<c_mem_bytes>" pins both caps.
    if (spec.rfind("fixed:", 0) == 0) {
        const auto body = spec.substr(6);
        const auto comma = body.find(',');
        if (comma == std::string::npos) throw CLI::ValidationError("--constraints", "expected fixed:<c_lat_ms>,<c_mem_bytes>");
        p.fixed = Constraints{std::stod(body.substr(comma + 1)), std::stod(body.substr(0, comma))};
        p.fixed->check();
        return p;
    }
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--constraints", "expected key=value, got '" + part + "'");
        const std::string key = part.substr(0, eq);
        const double value = std::stod(part.substr(eq + 1));
        if (!(value > 0)) throw CLI::ValidationError("--constraints", "factors must be positive");
        if (key == "lat") {
            p.latency_factor = value;
        } else if (key == "mem") {
            p.memory_factor = value;
        } else {
            throw CLI::ValidationError("--constraints", "unknown key '" + key + "'");
        }
    }
    return p;
}

void print_report(const fs::path& run_dir) {
    std::ifstream in(run_dir / "report" / "report.json");
    if (!in) throw FormatError("no report at " + (run_dir / "report" / "report.json").string());
    const auto j = nlohmann::json::parse(in);
    std::printf("run seed %llu, %zu queries, backend %s\n", static_cast<unsigned long long>(j.at("seed").get<std::uint64_t>()),
                j.at("n_queries").get<std::size_t>(), j.at("backend").get<std::string>().c_str());
    if (j.contains("constraints")) {
        std::printf("constraints: c_lat %.1f ms, c_mem %.0f bytes\n", j["constraints"]["c_lat_ms"].get<double>(),
                    j["constraints"]["c_mem_bytes"].get<double>());
    }
    std::printf("\n%-12s %12s %9s %8s %8s %8s %8s %10s\n", "method", "median ms", "reduct%", "CSR%", "mem%", "lat%",
                "viol", "pulls");
    for (const auto& m : j.at("methods")) {
        std::printf("%-12s %12.2f %9.2f %8.1f %8.1f %8.1f %8zu %10zu\n", m["method"].get<std::string>().c_str(),
                    m["median_latency_ms"].get<double>(), m["latency_reduction_pct"].get<double>(),
                    m["csr_overall_pct"].get<double>(), m["csr_memory_pct"].get<double>(),
                    m["csr_latency_pct"].get<double>(), m["violations"].get<std::size_t>(),
                    m["executed_pulls"].get<std::size_t>());
    }
    if (j.contains("cost_model")) {
        const auto& c = j["cost_model"];
        const std::string r2 = c["r_squared"].is_number() ? std::to_string(c["r_squared"].get<double>()) : "n/a";
        std::printf("\ncost model: MAE %.3f ms (%.1f%% of median %.2f ms), R2 %s, %zu/%zu traces\n",
                    c["mae_ms"].get<double>(), 100.0 * c["mae_over_median"].get<double>(),
                    c["median_trace_latency_ms"].get<double>(), r2.c_str(),
                    c["train_traces"].get<std::size_t>(), c["test_traces"].get<std::size_t>());
    }
    if (j.contains("students")) {
        const auto& s = j["students"];
        std::printf("students: linear %.3f, boosted %.3f held-out agreement (%zu distinct labels)\n",
                    s["linear"]["test_accuracy"].get<double>(), s["boosted"]["test_accuracy"].get<double>(),
                    s["distinct_labels"].get<std::size_t>());
    }
    std::ifstream tin(run_dir / "timing.json");
    if (tin) {
        const auto t = nlohmann::json::parse(tin);
        if (t.contains("speedup")) {
            std::printf("speedup vs full search: linear %.1fx, boosted %.1fx\n", t["speedup"]["student-lr"].get<double>(),
                        t["speedup"]["student-gb"].get<double>());
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"constraint-aware query plan optimizer"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write a synthetic workload");
    std::size_t gen_n = 120;
    std::uint64_t gen_seed = 42;
    std::string gen_out;
    gen->add_option("-n,--queries", gen_n, "number of queries")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "workload seed");
    gen->add_option("-o,--out", gen_out, "output directory")->required();

    auto* run = app.add_subcommand("run", "run all phases and write a report");
    RunOptions opts;
    std::string workload_dir;
    std::size_t run_n = 120;
    std::string constraints_spec = "default";
    std::string backend = "sim";
    std::string adapter_cmd;
    std::vector<std::string> ablation;
    std::string run_out;
    run->add_option("--seed", opts.seed, "run seed");
    run->add_option("--iterations", opts.iterations, "bandit budget per query")->check(CLI::Range(64, 100000));
    run->add_option("--constraints", constraints_spec, "default | lat=F,mem=F | fixed:<c_lat_ms>,<c_mem_bytes>");
    run->add_option("--backend", backend, "execution backend")->check(CLI::IsMember({"sim", "adapter"}));
    run->add_option("--adapter-cmd", adapter_cmd, "command run per plan by the adapter backend");
    run->add_option("--ablation", ablation, "methods to evaluate (default: all)")
        ->check(CLI::IsMember({"baseline", "teacher", "bandit", "bandit+cost", "student-lr", "student-gb"}));
    run->add_flag("--cv", opts.cross_validate, "select the forest depth by 5-fold cross-validation");
    run->add_option("-w,--workload", workload_dir, "workload directory (default: generate one from the seed)");
    run->add_option("-n,--queries", run_n, "queries to generate when no workload is given")->check(CLI::PositiveNumber);
    run->add_option("-o,--out", run_out, "run directory")->required();

    auto* rep = app.add_subcommand("report", "summarize a finished run");
    std::string rep_dir;
    rep->add_option("run_dir", rep_dir, "run directory")->required();

    auto* verify = app.add_subcommand("verify", "run the acceptance suite");
    AcceptanceOptions acc;
    std::vector<int> only;
    std::string fixtures;
    verify->add_option("--fixtures", fixtures, "fixture directory")->required();
    verify->add_option("--work-dir", acc.work_dir, "scratch directory for acceptance runs");
    verify->add_option("--only", only, "criterion numbers to run")->check(CLI::Range(1, 9));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            WorkloadProfile profile;
            profile.n_queries = gen_n;
            write_workload(generate_workload(profile, gen_seed), gen_out);
            std::printf("wrote %zu queries to %s\n", gen_n, gen_out.c_str());
        } else if (*run) {
            opts.constraints = parse_profile(constraints_spec);
            if (!ablation.empty()) {
                opts.methods.clear();
                for (const auto& m : ablation) opts.methods.push_back(method_from_string(m));
            }
            Workload workload;
            if (workload_dir.empty()) {
                WorkloadProfile profile;
                profile.n_queries = run_n;
                workload = generate_workload(profile, opts.seed);
                write_workload(workload, fs::path(run_out) / "workload");
            } else {
                workload = read_workload(workload_dir);
            }
            std::unique_ptr<EngineAdapter> executor;
            if (backend == "sim") {
                executor = std::make_unique<SimulatorAdapter>(workload.schema);
            } else {
                if (adapter_cmd.empty()) throw PreconditionError("--backend adapter requires --adapter-cmd");
                executor = std::make_unique<CommandAdapter>(adapter_cmd);
            }
            run_all(workload, *executor, opts, run_out);
            print_report(run_out);
        } else if (*rep) {
            print_report(rep_dir);
        } else if (*verify) {
            acc.fixture_dir = fixtures;
            bool ok = true;
            for (const auto& r : run_acceptance(acc, only)) {
                std::printf("%s\n", format_result(r).c_str());
                std::fflush(stdout);
                ok = ok && r.passed;
            }
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
