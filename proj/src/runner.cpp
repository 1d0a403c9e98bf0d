// SPDX-License-Identifier: Apache-2.0
#include "pikv/runner.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <json.hpp>
#include <sstream>

#include "pikv/costmodel.hpp"
#include "pikv/errors.hpp"

namespace pikv {

namespace {

using nlohmann::json;

double percentile(std::vector<double> sorted_values, double q) {
    if (sorted_values.empty()) return 0.0;
    auto idx = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(sorted_values.size())));
    if (idx > 0) --idx;
    if (idx >= sorted_values.size()) idx = sorted_values.size() - 1;
    return sorted_values[idx];
}

// Warmup pass for the QUEST scorer: replay a bounded prefix with no
// eviction, then regress [K;V] features onto realized access counts.
QuestScorer fit_quest(const RunConfig& cfg, const Trace& trace) {
    EngineConfig warm = cfg.engine;
    warm.unbounded_budget = true;
    warm.record_fidelity = false;
    auto steps = std::min<std::uint64_t>(trace.spec.steps, 2048);
    warm.model.S = std::max<int>(warm.model.S, static_cast<int>(steps));
    warm.model.validate();
    Engine engine(warm);
    for (std::uint64_t t = 0; t < steps; ++t) {
        engine.step(trace.token(t));
    }
    engine.flush();
    std::vector<std::vector<double>> features;
    std::vector<double> targets;
    engine.store().for_each_live([&](int, int, KVEntry& e) {
        std::vector<double> f;
        f.reserve(e.key.size() + e.value.size());
        f.insert(f.end(), e.key.begin(), e.key.end());
        f.insert(f.end(), e.value.begin(), e.value.end());
        features.push_back(std::move(f));
        targets.push_back(static_cast<double>(e.meta.freq));
    });
    QuestScorer scorer;
    scorer.fit(features, targets, cfg.quest_steps, cfg.quest_lr,
               cfg.engine.seed ^ 0x9b1e5ULL);
    return scorer;
}

json eviction_json(const EvictionRecord& rec) {
    return json{{"id", rec.entry_id},
                {"token", rec.token_id},
                {"expert", rec.expert_id},
                {"device", rec.device},
                {"score", rec.score},
                {"reason", to_string(rec.reason)}};
}

}  // namespace

RunOutput run_experiment(const RunConfig& cfg) {
    Trace trace = generate_trace(cfg.trace);
    Topology topo = cfg.topology();
    Engine engine(cfg.engine);
    if (cfg.engine.scheduler.strategy == SchedStrategy::QUEST &&
        !cfg.engine.unbounded_budget) {
        engine.set_quest(fit_quest(cfg, trace));
    }
    std::optional<ReferenceDecoder> oracle;
    if (cfg.engine.record_fidelity) oracle.emplace(cfg.engine);

    RunOutput out;
    auto& m = out.metrics;
    m.seed = cfg.trace.seed;
    m.router = to_string(cfg.engine.router.strategy);
    m.scheduler = to_string(cfg.engine.scheduler.strategy);
    m.compressor = cfg.engine.composition.empty()
                       ? to_string(cfg.engine.compressor.scheme)
                       : [&] {
                             std::string s;
                             for (auto sch : cfg.engine.composition) {
                                 if (!s.empty()) s += "+";
                                 s += to_string(sch);
                             }
                             return s;
                         }();
    m.fidelity_enabled = cfg.engine.record_fidelity;
    m.lambda_memory = cfg.lambda_memory;
    m.lambda_hit = cfg.lambda_hit;

    const int d_stored = engine.stored_width();
    const int head = std::min(cfg.engine.model.head_width, d_stored);
    const std::uint64_t entry_elements =
        2ull * static_cast<std::uint64_t>(head) +
        static_cast<std::uint64_t>(d_stored);
    const std::uint64_t entry_bytes =
        entry_elements * static_cast<std::uint64_t>(cfg.engine.model.elem_bytes);

    std::vector<double> step_latency;
    step_latency.reserve(trace.events.size());
    std::uint64_t hits_total = 0, lookups_total = 0, retrieved_total = 0;

    for (std::uint64_t t = 0; t < trace.spec.steps; ++t) {
        auto tok = trace.token(t);
        auto result = engine.step(tok);

        double latency = 0.0;
        for (const auto& att : result.attended) {
            int dev = engine.store().locate(att.token_id, att.expert_id).device;
            latency += topo.fetch_seconds(dev, cfg.home_device, entry_bytes);
        }
        // An empty expert lookup pays one entry-equivalent miss fetch from a
        // neighboring device.
        auto misses = result.lookups - result.hits;
        if (misses > 0 && cfg.engine.model.G > 1) {
            int neighbor = (cfg.home_device + 1) % cfg.engine.model.G;
            latency += static_cast<double>(misses) *
                       topo.fetch_seconds(neighbor, cfg.home_device, entry_bytes);
        } else if (misses > 0) {
            latency += static_cast<double>(misses) * topo.local_latency;
        }
        step_latency.push_back(latency);
        m.latency_total_s += latency;

        m.fetch_bytes += result.fetch_elements * cfg.engine.model.elem_bytes;
        m.io_measured_elements += static_cast<double>(result.fetch_elements);
        hits_total += result.hits;
        lookups_total += result.lookups;
        retrieved_total += result.attended.size();
        m.peak_memory_bytes =
            std::max(m.peak_memory_bytes, engine.store().memory_bytes());
        for (const auto& rec : result.evictions) {
            switch (rec.reason) {
                case EvictReason::Budget: ++m.evicted_budget; break;
                case EvictReason::Threshold: ++m.evicted_threshold; break;
                case EvictReason::Overwrite: ++m.evicted_overwrite; break;
            }
        }

        double step_fidelity = 0.0;
        if (oracle) {
            auto want = oracle->step(tok);
            step_fidelity = fidelity_step_loss(want, result);
            m.fidelity_cumulative += step_fidelity;
        }

        json line{{"t", t},
                  {"experts", result.experts},
                  {"gates", result.gates},
                  {"inserts", result.inserts},
                  {"fetch_bytes",
                   result.fetch_elements * cfg.engine.model.elem_bytes},
                  {"hits", result.hits},
                  {"lookups", result.lookups},
                  {"latency_s", latency},
                  {"fidelity", step_fidelity}};
        json evs = json::array();
        for (const auto& rec : result.evictions) evs.push_back(eviction_json(rec));
        line["evictions"] = std::move(evs);
        out.event_log.push_back(line.dump());
    }
    engine.flush();

    m.steps = trace.spec.steps;
    m.hit_rate = lookups_total == 0 ? 0.0
                                    : static_cast<double>(hits_total) /
                                          static_cast<double>(lookups_total);
    m.local_fetch_fraction = m.hit_rate;
    if (!step_latency.empty()) {
        m.latency_mean_s = m.latency_total_s / step_latency.size();
        std::sort(step_latency.begin(), step_latency.end());
        m.latency_p50_s = percentile(step_latency, 0.50);
        m.latency_p95_s = percentile(step_latency, 0.95);
        m.latency_p99_s = percentile(step_latency, 0.99);
    }
    m.expert_load.assign(engine.router_state().usage_counts.begin(),
                         engine.router_state().usage_counts.end());

    m.objective_latency_s = m.latency_total_s;
    m.objective_memory_bytes = static_cast<double>(m.peak_memory_bytes);
    m.objective_hit_rate = m.hit_rate;
    m.objective_value = m.objective_latency_s +
                        cfg.lambda_memory * m.objective_memory_bytes -
                        cfg.lambda_hit * m.objective_hit_rate;

    auto roof = io_and_roofline(cfg.engine.model, cfg.hardware, cfg.batch_tokens);
    m.throughput_scaling = roof.throughput_scaling;
    m.hit_rate_model = roof.hit_rate;
    m.arith_intensity = roof.arith_intensity;
    m.mem_model_total_bytes = mem_total(cfg.engine.model, true).total;
    m.shard_size_opt = optimal_shard_size(cfg.engine.model).exact;

    // Model I/O at the measured mean attended prefix. The simulator charges
    // exactly the modeled per-entry elements, so the ratio isolates
    // accounting slippage (partial pages, flush tails).
    double mean_prefix =
        lookups_total == 0 ? 0.0
                           : static_cast<double>(retrieved_total) /
                                 static_cast<double>(cfg.engine.model.k) /
                                 static_cast<double>(m.steps);
    m.io_model_elements = (2.0 * head + d_stored) * mean_prefix *
                          cfg.engine.model.k * static_cast<double>(m.steps);
    m.io_model_ratio =
        m.io_model_elements == 0.0 ? 1.0
                                   : m.io_measured_elements / m.io_model_elements;

    if (!cfg.dump_store_path.empty()) {
        for (const auto& rec : engine.store().snapshot(trace.spec.steps)) {
            json r{{"device", rec.device},   {"shard", rec.shard},
                   {"token", rec.token_id},  {"expert", rec.expert_id},
                   {"age", rec.age},         {"freq", rec.freq}};
            out.store_dump.push_back(r.dump());
        }
    }

    json report{{"type", "metrics"},
                {"steps", m.steps},
                {"seed", m.seed},
                {"router", m.router},
                {"scheduler", m.scheduler},
                {"compressor", m.compressor},
                {"hit_rate", m.hit_rate},
                {"local_fetch_fraction", m.local_fetch_fraction},
                {"latency_total_s", m.latency_total_s},
                {"latency_mean_s", m.latency_mean_s},
                {"latency_p50_s", m.latency_p50_s},
                {"latency_p95_s", m.latency_p95_s},
                {"latency_p99_s", m.latency_p99_s},
                {"fetch_bytes", m.fetch_bytes},
                {"peak_memory_bytes", m.peak_memory_bytes},
                {"fidelity_enabled", m.fidelity_enabled},
                {"fidelity_cumulative", m.fidelity_cumulative},
                {"expert_load", m.expert_load},
                {"evicted_budget", m.evicted_budget},
                {"evicted_threshold", m.evicted_threshold},
                {"evicted_overwrite", m.evicted_overwrite},
                {"objective_latency_s", m.objective_latency_s},
                {"objective_memory_bytes", m.objective_memory_bytes},
                {"objective_hit_rate", m.objective_hit_rate},
                {"lambda_memory", m.lambda_memory},
                {"lambda_hit", m.lambda_hit},
                {"objective_value", m.objective_value},
                {"throughput_scaling", m.throughput_scaling},
                {"hit_rate_model", m.hit_rate_model},
                {"arith_intensity", m.arith_intensity},
                {"mem_model_total_bytes", m.mem_model_total_bytes},
                {"shard_size_opt", m.shard_size_opt},
                {"io_measured_elements", m.io_measured_elements},
                {"io_model_elements", m.io_model_elements},
                {"io_model_ratio", m.io_model_ratio}};
    out.report_line = report.dump();
    return out;
}

std::string human_table(const MetricsReport& m) {
    std::ostringstream os;
    auto row = [&](const std::string& name, const std::string& value) {
        os << "  " << name;
        for (std::size_t i = name.size(); i < 26; ++i) os << ' ';
        os << value << "\n";
    };
    os << "run summary\n";
    row("steps", std::to_string(m.steps));
    row("seed", std::to_string(m.seed));
    row("router", m.router);
    row("scheduler", m.scheduler);
    row("compressor", m.compressor);
    os.precision(6);
    row("hit_rate", std::to_string(m.hit_rate));
    row("local_fetch_fraction", std::to_string(m.local_fetch_fraction));
    row("latency_total_s", std::to_string(m.latency_total_s));
    row("latency_mean_s", std::to_string(m.latency_mean_s));
    row("latency_p95_s", std::to_string(m.latency_p95_s));
    row("fetch_bytes", std::to_string(m.fetch_bytes));
    row("peak_memory_bytes", std::to_string(m.peak_memory_bytes));
    row("fidelity_cumulative", std::to_string(m.fidelity_cumulative));
    row("evicted_budget", std::to_string(m.evicted_budget));
    row("evicted_threshold", std::to_string(m.evicted_threshold));
    row("evicted_overwrite", std::to_string(m.evicted_overwrite));
    row("objective_value", std::to_string(m.objective_value));
    row("throughput_scaling", std::to_string(m.throughput_scaling));
    row("mem_model_total_bytes", std::to_string(m.mem_model_total_bytes));
    row("shard_size_opt", std::to_string(m.shard_size_opt));
    row("io_model_ratio", std::to_string(m.io_model_ratio));
    std::string load;
    for (std::size_t e = 0; e < m.expert_load.size(); ++e) {
        if (e) load += ",";
        load += std::to_string(m.expert_load[e]);
    }
    row("expert_load", load);
    return os.str();
}

LogSummary summarize_log(std::istream& in) {
    LogSummary s;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("t")) {
            throw IoError("event log: bad record: " + line);
        }
        s.steps += 1;
        s.fetch_bytes += j.value("fetch_bytes", 0ull);
        s.hits += j.value("hits", 0ull);
        s.lookups += j.value("lookups", 0ull);
        s.latency_total_s += j.value("latency_s", 0.0);
        s.fidelity_cumulative += j.value("fidelity", 0.0);
        if (j.contains("evictions")) s.evictions += j["evictions"].size();
    }
    return s;
}

std::string human_table(const LogSummary& s) {
    std::ostringstream os;
    os << "event log summary\n"
       << "  steps                 " << s.steps << "\n"
       << "  fetch_bytes           " << s.fetch_bytes << "\n"
       << "  hits/lookups          " << s.hits << "/" << s.lookups << "\n"
       << "  latency_total_s       " << s.latency_total_s << "\n"
       << "  fidelity_cumulative   " << s.fidelity_cumulative << "\n"
       << "  evicted_entries       " << s.evictions << "\n";
    return os.str();
}

}  // namespace pikv
