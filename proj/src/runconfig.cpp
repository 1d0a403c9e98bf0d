// SPDX-License-Identifier: Apache-2.0
#include "pikv/runconfig.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pikv/errors.hpp"

namespace pikv {

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    auto end = s.find_last_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw InvalidConfig("config: bad number for " + key + ": " + value);
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw InvalidConfig("config: bad integer for " + key + ": " + value);
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw InvalidConfig("config: bad boolean for " + key + ": " + value);
}

std::vector<double> parse_doubles(const std::string& key,
                                  const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_double(key, trim(item)));
    }
    if (out.empty()) throw InvalidConfig("config: empty list for " + key);
    return out;
}

std::vector<Scheme> parse_schemes(const std::string& value) {
    std::vector<Scheme> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(scheme_from_string(trim(item)));
    }
    return out;
}

const std::set<std::string> kKnownKeys = {
    "model.d", "model.head_width", "model.E", "model.k", "model.L", "model.G",
    "model.S", "model.K", "model.rho", "model.elem_bytes",
    "store.n_tok", "store.n_exp", "store.additive", "store.shards_per_device",
    "router.strategy", "router.alpha", "router.lambda_miss", "router.beta_ent",
    "router.bandit_step", "router.groups", "router.stride", "router.bias_cap",
    "router.load_decay",
    "compressor.scheme", "compressor.schemes", "compressor.rank",
    "compressor.levels", "compressor.chunk_size", "compressor.prune_frac",
    "compressor.calib_size", "compressor.distill_steps", "compressor.distill_lr",
    "compressor.per_tensor",
    "scheduler.strategy", "scheduler.budget_pages", "scheduler.page_size",
    "scheduler.tau", "scheduler.sink", "scheduler.lambda_freq",
    "scheduler.adakv_step", "scheduler.target_hit", "scheduler.gamma_sim",
    "scheduler.theta0", "scheduler.hit_decay", "scheduler.adakv_weights",
    "scheduler.flex_plan", "scheduler.flex_bucket", "scheduler.quest_steps",
    "scheduler.quest_lr",
    "cost.beta", "cost.gamma_core", "cost.eta_decode", "cost.peak_compute",
    "cost.peak_mem_bw", "cost.batch", "cost.active_experts",
    "cost.util_threshold",
    "topology.local_latency", "topology.link_latency",
    "topology.link_bandwidth",
    "trace.T", "trace.vocab", "trace.skew", "trace.seed", "trace.layers",
    "pipeline.attend_full_width", "pipeline.fidelity", "pipeline.unbounded",
    "objective.lambda_memory", "objective.lambda_hit",
    "run.seed", "run.home_device", "run.dump_store",
};

}  // namespace

int predicted_stored_width(const CompressorConfig& cfg, int width,
                           const std::vector<Scheme>& composition) {
    auto one = [](const CompressorConfig& c, Scheme s, int d) {
        switch (s) {
            case Scheme::Identity:
                return d;
            case Scheme::Pyramid: {
                int w = d;
                for (int l = 1; l < c.levels; ++l) w = (w + 1) / 2;
                return w;
            }
            case Scheme::Prune: {
                int keep = d - static_cast<int>(std::ceil(c.prune_frac * d));
                return keep < 1 ? 1 : keep;
            }
            default:
                return c.rank;
        }
    };
    if (composition.empty()) return one(cfg, cfg.scheme, width);
    int w = width;
    for (Scheme s : composition) {
        CompressorConfig stage = cfg;
        if (stage.rank > w) stage.rank = w;
        w = one(stage, s, w);
    }
    return w;
}

RunConfig parse_config_text(
    const std::string& text,
    const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw InvalidConfig("config line " + std::to_string(line_no) +
                                ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!kKnownKeys.count(key)) {
            throw InvalidConfig("config: unknown key '" + key + "'");
        }
        kv[key] = value;
    }
    for (const auto& [key, value] : overrides) {
        if (!kKnownKeys.count(key)) {
            throw InvalidConfig("config: unknown key '" + key + "'");
        }
        kv[key] = value;
    }

    RunConfig rc;
    auto& model = rc.engine.model;
    bool rho_set = false;
    bool budget_set = false;
    bool tokens_set = false;

    for (const auto& [key, value] : kv) {
        if (key == "model.d") model.d = static_cast<int>(parse_int(key, value));
        else if (key == "model.head_width") model.head_width = static_cast<int>(parse_int(key, value));
        else if (key == "model.E") model.E = static_cast<int>(parse_int(key, value));
        else if (key == "model.k") model.k = static_cast<int>(parse_int(key, value));
        else if (key == "model.L") { model.L = parse_int(key, value); tokens_set = true; }
        else if (key == "model.G") model.G = static_cast<int>(parse_int(key, value));
        else if (key == "model.S") model.S = static_cast<int>(parse_int(key, value));
        else if (key == "model.K") model.K = static_cast<int>(parse_int(key, value));
        else if (key == "model.rho") { model.rho = parse_double(key, value); rho_set = true; }
        else if (key == "model.elem_bytes") model.elem_bytes = static_cast<int>(parse_int(key, value));
        else if (key == "store.n_tok") rc.engine.store.n_tok = static_cast<int>(parse_int(key, value));
        else if (key == "store.n_exp") rc.engine.store.n_exp = static_cast<int>(parse_int(key, value));
        else if (key == "store.additive") rc.engine.store.additive = parse_bool(key, value);
        else if (key == "store.shards_per_device") rc.engine.store.shards_per_device = static_cast<int>(parse_int(key, value));
        else if (key == "router.strategy") rc.engine.router.strategy = router_strategy_from_string(value);
        else if (key == "router.alpha") rc.engine.router.alpha = parse_double(key, value);
        else if (key == "router.lambda_miss") rc.engine.router.lambda_miss = parse_double(key, value);
        else if (key == "router.beta_ent") rc.engine.router.beta_ent = parse_double(key, value);
        else if (key == "router.bandit_step") rc.engine.router.bandit_step = parse_double(key, value);
        else if (key == "router.groups") rc.engine.router.groups = static_cast<int>(parse_int(key, value));
        else if (key == "router.stride") rc.engine.router.stride = static_cast<int>(parse_int(key, value));
        else if (key == "router.bias_cap") rc.engine.router.bias_cap = parse_double(key, value);
        else if (key == "router.load_decay") rc.engine.router.load_decay = parse_double(key, value);
        else if (key == "compressor.scheme") rc.engine.compressor.scheme = scheme_from_string(value);
        else if (key == "compressor.schemes") rc.engine.composition = parse_schemes(value);
        else if (key == "compressor.rank") rc.engine.compressor.rank = static_cast<int>(parse_int(key, value));
        else if (key == "compressor.levels") rc.engine.compressor.levels = static_cast<int>(parse_int(key, value));
        else if (key == "compressor.chunk_size") rc.engine.compressor.chunk_size = static_cast<int>(parse_int(key, value));
        else if (key == "compressor.prune_frac") rc.engine.compressor.prune_frac = parse_double(key, value);
        else if (key == "compressor.calib_size") rc.engine.compressor.calib_size = static_cast<int>(parse_int(key, value));
        else if (key == "compressor.distill_steps") rc.engine.compressor.distill_steps = static_cast<int>(parse_int(key, value));
        else if (key == "compressor.distill_lr") rc.engine.compressor.distill_lr = parse_double(key, value);
        else if (key == "compressor.per_tensor") rc.engine.compressor.per_tensor = parse_bool(key, value);
        else if (key == "scheduler.strategy") rc.engine.scheduler.strategy = sched_strategy_from_string(value);
        else if (key == "scheduler.budget_pages") { rc.engine.scheduler.budget_pages = static_cast<int>(parse_int(key, value)); budget_set = true; }
        else if (key == "scheduler.page_size") rc.engine.scheduler.page_size = static_cast<int>(parse_int(key, value));
        else if (key == "scheduler.tau") rc.engine.scheduler.tau = parse_double(key, value);
        else if (key == "scheduler.sink") rc.engine.scheduler.sink = static_cast<int>(parse_int(key, value));
        else if (key == "scheduler.lambda_freq") rc.engine.scheduler.lambda_freq = parse_double(key, value);
        else if (key == "scheduler.adakv_step") rc.engine.scheduler.adakv_step = parse_double(key, value);
        else if (key == "scheduler.target_hit") rc.engine.scheduler.target_hit = parse_double(key, value);
        else if (key == "scheduler.gamma_sim") rc.engine.scheduler.gamma_sim = parse_double(key, value);
        else if (key == "scheduler.theta0") rc.engine.scheduler.theta0 = parse_double(key, value);
        else if (key == "scheduler.hit_decay") rc.engine.scheduler.hit_decay = parse_double(key, value);
        else if (key == "scheduler.adakv_weights") rc.engine.scheduler.adakv_weights = parse_doubles(key, value);
        else if (key == "scheduler.flex_plan") rc.engine.scheduler.flex_plan = parse_doubles(key, value);
        else if (key == "scheduler.flex_bucket") rc.engine.scheduler.flex_bucket = static_cast<int>(parse_int(key, value));
        else if (key == "scheduler.quest_steps") rc.quest_steps = static_cast<int>(parse_int(key, value));
        else if (key == "scheduler.quest_lr") rc.quest_lr = parse_double(key, value);
        else if (key == "cost.beta") rc.hardware.hbm_bandwidth = parse_double(key, value);
        else if (key == "cost.gamma_core") rc.hardware.core_throughput = parse_double(key, value);
        else if (key == "cost.eta_decode") rc.hardware.decode_factor = parse_double(key, value);
        else if (key == "cost.peak_compute") rc.hardware.peak_compute = parse_double(key, value);
        else if (key == "cost.peak_mem_bw") rc.hardware.peak_mem_bw = parse_double(key, value);
        else if (key == "cost.batch") rc.batch_tokens = parse_double(key, value);
        else if (key == "cost.active_experts") rc.active_experts = static_cast<int>(parse_int(key, value));
        else if (key == "cost.util_threshold") rc.util_threshold = parse_double(key, value);
        else if (key == "topology.local_latency") rc.topo_local_latency = parse_double(key, value);
        else if (key == "topology.link_latency") rc.topo_link_latency = parse_double(key, value);
        else if (key == "topology.link_bandwidth") rc.topo_link_bandwidth = parse_double(key, value);
        else if (key == "trace.T") rc.trace.steps = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "trace.vocab") rc.trace.vocab = static_cast<int>(parse_int(key, value));
        else if (key == "trace.skew") rc.trace.zipf_skew = parse_double(key, value);
        else if (key == "trace.seed") rc.trace.seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "trace.layers") rc.trace.layers = static_cast<int>(parse_int(key, value));
        else if (key == "pipeline.attend_full_width") rc.engine.attend_full_width = parse_bool(key, value);
        else if (key == "pipeline.fidelity") rc.engine.record_fidelity = parse_bool(key, value);
        else if (key == "pipeline.unbounded") rc.engine.unbounded_budget = parse_bool(key, value);
        else if (key == "objective.lambda_memory") rc.lambda_memory = parse_double(key, value);
        else if (key == "objective.lambda_hit") rc.lambda_hit = parse_double(key, value);
        else if (key == "run.seed") rc.engine.seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "run.home_device") rc.home_device = static_cast<int>(parse_int(key, value));
        else if (key == "run.dump_store") rc.dump_store_path = value;
    }

    // Derived defaults: the trace drives d and L, the scheduler budget
    // mirrors model.K, and rho follows the fitted width unless pinned.
    rc.trace.width = model.d;
    if (!tokens_set) model.L = static_cast<long long>(rc.trace.steps);
    if (!budget_set) rc.engine.scheduler.budget_pages = model.K;
    int stored = predicted_stored_width(rc.engine.compressor, model.d,
                                        rc.engine.composition);
    double derived_rho = static_cast<double>(model.d) / stored;
    if (!rho_set) {
        model.rho = derived_rho;
    } else if (model.d_prime() != stored) {
        throw InvalidConfig("config: model.rho implies d' = " +
                            std::to_string(model.d_prime()) +
                            " but the compressor stores " +
                            std::to_string(stored) + " elements");
    }

    model.validate();
    rc.engine.router.validate(model.E);
    rc.engine.scheduler.validate();
    rc.engine.compressor.validate(model.d);
    rc.engine.store.validate(model.G);
    rc.hardware.validate();
    rc.trace.validate();
    if (rc.active_experts < 0) rc.active_experts = model.E;
    if (rc.active_experts > model.E) {
        throw InvalidConfig("config: cost.active_experts exceeds E");
    }
    if (rc.home_device < 0 || rc.home_device >= model.G) {
        throw InvalidConfig("config: run.home_device out of range");
    }
    return rc;
}

RunConfig parse_config_file(
    const std::string& path,
    const std::map<std::string, std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("config: cannot open " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), overrides);
}

}  // namespace pikv
