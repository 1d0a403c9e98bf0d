// SPDX-License-Identifier: Apache-2.0
//
// Command line entry point: run experiments, sweep a parameter, print the
// analytic cost report, and generate or summarize traces.
#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "pikv/costmodel.hpp"
#include "pikv/errors.hpp"
#include "pikv/runconfig.hpp"
#include "pikv/runner.hpp"
#include "pikv/trace.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void apply_env_seed(pikv::RunConfig& cfg) {
    if (const char* env = std::getenv("PIKV_SEED")) {
        try {
            cfg.trace.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw pikv::InvalidConfig("PIKV_SEED is not an integer");
        }
    }
}

void write_lines(const std::string& path,
                 const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw pikv::IoError("cannot open " + path);
    for (const auto& line : lines) out << line << "\n";
    if (!out) throw pikv::IoError("write failed: " + path);
}

std::map<std::string, std::string> single_override(const std::string& key,
                                                   const std::string& value) {
    return {{key, value}};
}

int do_run(const std::string& config_path, const std::string& report_path,
           const std::string& log_path, bool quiet) {
    auto cfg = pikv::parse_config_file(config_path);
    apply_env_seed(cfg);
    auto out = pikv::run_experiment(cfg);
    if (!quiet) std::cout << pikv::human_table(out.metrics);
    if (!report_path.empty()) {
        write_lines(report_path, {out.report_line});
    } else if (quiet) {
        std::cout << out.report_line << "\n";
    }
    if (!log_path.empty()) write_lines(log_path, out.event_log);
    if (!cfg.dump_store_path.empty()) {
        write_lines(cfg.dump_store_path, out.store_dump);
    }
    return 0;
}

int do_sweep(const std::string& config_path, const std::string& vary,
             const std::string& report_path) {
    auto eq = vary.find('=');
    if (eq == std::string::npos) {
        throw pikv::InvalidConfig("--vary expects key=v1,v2,...");
    }
    std::string key = vary.substr(0, eq);
    std::string values = vary.substr(eq + 1);
    std::vector<std::string> lines;
    std::stringstream ss(values);
    std::string value;
    while (std::getline(ss, value, ',')) {
        auto cfg = pikv::parse_config_file(config_path,
                                           single_override(key, value));
        apply_env_seed(cfg);
        auto out = pikv::run_experiment(cfg);
        nlohmann::json record = nlohmann::json::parse(out.report_line);
        record["vary_key"] = key;
        record["vary_value"] = value;
        lines.push_back(record.dump());
    }
    if (lines.empty()) throw pikv::InvalidConfig("--vary got no values");
    if (!report_path.empty()) {
        write_lines(report_path, lines);
    } else {
        for (const auto& line : lines) std::cout << line << "\n";
    }
    return 0;
}

int do_cost(const std::string& config_path) {
    auto cfg = pikv::parse_config_file(config_path);
    auto report = pikv::cost_report(cfg.engine.model, cfg.hardware,
                                    cfg.batch_tokens, cfg.active_experts,
                                    cfg.util_threshold);
    nlohmann::json j{
        {"type", "cost"},
        {"mem_token", report.memory.token},
        {"mem_page", report.memory.page},
        {"mem_total", report.memory.total},
        {"mem_total_bytes", report.memory_bytes.total},
        {"shard_size_opt", report.shard.exact},
        {"shard_size_best_int", report.shard.best_integer},
        {"t_read_s", report.latency.read},
        {"t_decode_s", report.latency.decode},
        {"t_step_s", report.latency.step},
        {"io_dense", report.roofline.io_dense},
        {"io_sparse", report.roofline.io_sparse},
        {"rd_dense", report.roofline.rd_dense},
        {"rd_sparse", report.roofline.rd_sparse},
        {"hit_rate", report.roofline.hit_rate},
        {"arith_intensity", report.roofline.arith_intensity},
        {"throughput_scaling", report.roofline.throughput_scaling},
        {"compute_bound", report.roofline.compute_bound},
        {"eta_util", report.utilization.eta_util},
        {"util_pass", report.utilization.pass}};
    std::cout << j.dump() << "\n";
    return 0;
}

int do_trace(const std::string& config_path, const std::string& out_path) {
    auto cfg = pikv::parse_config_file(config_path);
    apply_env_seed(cfg);
    auto trace = pikv::generate_trace(cfg.trace);
    pikv::save_trace(trace, out_path);
    std::cout << "wrote " << trace.events.size() << " events to " << out_path
              << "\n";
    return 0;
}

int do_report(const std::string& log_path) {
    std::ifstream in(log_path);
    if (!in) throw pikv::IoError("cannot open " + log_path);
    auto summary = pikv::summarize_log(in);
    std::cout << pikv::human_table(summary);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"expert-sharded KV cache engine"};
    app.require_subcommand(1);

    std::string config_path, report_path, log_path, vary, out_path;
    bool quiet = false;

    auto* run_cmd = app.add_subcommand("run", "run one experiment");
    run_cmd->add_option("config", config_path, "config file")->required();
    run_cmd->add_option("--report", report_path, "metrics record path (JSONL)");
    run_cmd->add_option("--log", log_path, "event log path (JSONL)");
    run_cmd->add_flag("--quiet", quiet, "machine output only");

    auto* sweep_cmd = app.add_subcommand("sweep", "run once per value");
    sweep_cmd->add_option("config", config_path, "config file")->required();
    sweep_cmd->add_option("--vary", vary, "key=v1,v2,...")->required();
    sweep_cmd->add_option("--report", report_path, "metrics records path");

    auto* cost_cmd = app.add_subcommand("cost", "print the analytic cost report");
    cost_cmd->add_option("config", config_path, "config file")->required();

    auto* trace_cmd = app.add_subcommand("trace", "generate a trace file");
    trace_cmd->add_option("config", config_path, "config file")->required();
    trace_cmd->add_option("-o,--out", out_path, "output path")->required();

    auto* report_cmd = app.add_subcommand("report", "summarize an event log");
    report_cmd->add_option("log", log_path, "event log path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) return do_run(config_path, report_path, log_path, quiet);
        if (sweep_cmd->parsed()) return do_sweep(config_path, vary, report_path);
        if (cost_cmd->parsed()) return do_cost(config_path);
        if (trace_cmd->parsed()) return do_trace(config_path, out_path);
        if (report_cmd->parsed()) return do_report(log_path);
    } catch (const pikv::InvalidConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
