// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pikv/runconfig.hpp"

namespace pikv {

// Aggregate results of one run. Field names are part of the stable report
// interface.
struct MetricsReport {
    std::uint64_t steps = 0;
    std::uint64_t seed = 0;
    std::string router;
    std::string scheduler;
    std::string compressor;

    double hit_rate = 0.0;              // warm lookups / lookups
    double local_fetch_fraction = 0.0;  // lookups served by live cache
    double latency_total_s = 0.0;
    double latency_mean_s = 0.0;
    double latency_p50_s = 0.0;
    double latency_p95_s = 0.0;
    double latency_p99_s = 0.0;
    std::uint64_t fetch_bytes = 0;
    std::uint64_t peak_memory_bytes = 0;
    bool fidelity_enabled = false;
    double fidelity_cumulative = 0.0;
    std::vector<std::uint64_t> expert_load;

    std::uint64_t evicted_budget = 0;
    std::uint64_t evicted_threshold = 0;
    std::uint64_t evicted_overwrite = 0;

    // Objective terms, reported raw; weights echo the config.
    double objective_latency_s = 0.0;
    double objective_memory_bytes = 0.0;
    double objective_hit_rate = 0.0;
    double lambda_memory = 0.0;
    double lambda_hit = 0.0;
    double objective_value = 0.0;

    // Analytic model echoes for this configuration.
    double throughput_scaling = 0.0;
    double hit_rate_model = 0.0;
    double arith_intensity = 0.0;
    double mem_model_total_bytes = 0.0;
    double shard_size_opt = 0.0;
    double io_measured_elements = 0.0;
    double io_model_elements = 0.0;
    double io_model_ratio = 0.0;  // measured / model
};

struct RunOutput {
    MetricsReport metrics;
    std::string report_line;               // machine-readable JSON record
    std::vector<std::string> event_log;    // one JSON line per step
    std::vector<std::string> store_dump;   // final snapshot when requested
};

RunOutput run_experiment(const RunConfig& cfg);

std::string human_table(const MetricsReport& m);

// Recompute the aggregate counters from an event log (the `report` command).
struct LogSummary {
    std::uint64_t steps = 0;
    std::uint64_t fetch_bytes = 0;
    std::uint64_t hits = 0;
    std::uint64_t lookups = 0;
    double latency_total_s = 0.0;
    double fidelity_cumulative = 0.0;
    std::uint64_t evictions = 0;
};

LogSummary summarize_log(std::istream& in);
std::string human_table(const LogSummary& s);

}  // namespace pikv
