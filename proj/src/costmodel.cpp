// SPDX-License-Identifier: Apache-2.0
#include "pikv/costmodel.hpp"

#include <cmath>

namespace pikv {

MemoryBreakdown mem_total_at(const ModelConfig& cfg, double shard_size,
                             bool in_bytes) {
    if (shard_size <= 0.0) {
        throw InvalidConfig("mem_total: shard size must be positive");
    }
    cfg.validate();
    double two_dp = 2.0 * cfg.d / cfg.rho;
    double scale = in_bytes ? static_cast<double>(cfg.elem_bytes) : 1.0;
    MemoryBreakdown m;
    m.token = scale * two_dp * static_cast<double>(cfg.L) /
              (static_cast<double>(cfg.G) * shard_size);
    m.page = scale * two_dp * static_cast<double>(cfg.K) * shard_size;
    m.total = m.token + m.page;
    return m;
}

MemoryBreakdown mem_total(const ModelConfig& cfg, bool in_bytes) {
    return mem_total_at(cfg, static_cast<double>(cfg.S), in_bytes);
}

OptimalShardSize optimal_shard_size(double tokens, double pages,
                                    double devices) {
    if (tokens <= 0 || pages <= 0 || devices <= 0) {
        throw InvalidConfig("optimal_shard_size: parameters must be positive");
    }
    OptimalShardSize out;
    out.exact = std::sqrt(tokens / (pages * devices));
    out.floor_candidate = std::max(1, static_cast<int>(std::floor(out.exact)));
    out.ceil_candidate = std::max(1, static_cast<int>(std::ceil(out.exact)));
    // Cost comparison only needs the S-dependent factor L/(GS) + KS.
    auto cost = [&](double s) {
        return tokens / (devices * s) + pages * s;
    };
    double floor_cost = cost(out.floor_candidate);
    double ceil_cost = cost(out.ceil_candidate);
    out.best_integer =
        floor_cost <= ceil_cost ? out.floor_candidate : out.ceil_candidate;
    out.best_cost = std::min(floor_cost, ceil_cost);
    return out;
}

OptimalShardSize optimal_shard_size(const ModelConfig& cfg) {
    auto out = optimal_shard_size(static_cast<double>(cfg.L),
                                  static_cast<double>(cfg.K),
                                  static_cast<double>(cfg.G));
    out.best_cost *= 2.0 * cfg.d / cfg.rho;
    return out;
}

double mem_total_optimal(const ModelConfig& cfg) {
    return 4.0 * cfg.d / cfg.rho *
           std::sqrt(static_cast<double>(cfg.K) * static_cast<double>(cfg.L) /
                     static_cast<double>(cfg.G));
}

StepLatency latency_step(const ModelConfig& cfg, const HardwareProfile& hw,
                         double batch_tokens) {
    cfg.validate();
    hw.validate();
    if (batch_tokens <= 0) {
        throw InvalidConfig("latency_step: batch must be positive");
    }
    double dp = cfg.d / cfg.rho;
    StepLatency t;
    t.read = 2.0 * dp * cfg.k * batch_tokens / hw.hbm_bandwidth;
    t.decode =
        hw.decode_factor * dp * cfg.k * batch_tokens / hw.core_throughput;
    t.step = t.read + t.decode;
    return t;
}

double speedup(double rho_from, double rho_to) {
    if (rho_from <= 0 || rho_to <= 0) {
        throw InvalidConfig("speedup: ratios must be positive");
    }
    return rho_to / rho_from;
}

IoRoofline io_and_roofline(const ModelConfig& cfg, const HardwareProfile& hw,
                           double batch_tokens) {
    cfg.validate();
    hw.validate();
    double B = batch_tokens;
    double L = static_cast<double>(cfg.L);
    double h = static_cast<double>(cfg.head_width);
    double d = static_cast<double>(cfg.d);
    double E = static_cast<double>(cfg.E);
    double k = static_cast<double>(cfg.k);
    IoRoofline r;
    r.io_dense = 2.0 * B * L * h * E + B * L * d * E;
    r.io_sparse = 2.0 * B * L * h * k + B * L * d * k;
    r.rd_dense = L / E;
    r.rd_sparse = L / k;
    r.hit_rate = k / E;
    r.arith_intensity = h / (2.0 * h + d);
    r.throughput_scaling = E / k;
    r.compute_bound = r.arith_intensity * hw.peak_mem_bw >= hw.peak_compute;
    return r;
}

UtilizationCheck utilization_check(const ModelConfig& cfg, int active_experts,
                                   double threshold) {
    cfg.validate();
    if (active_experts < 0 || active_experts > cfg.E) {
        throw InvalidArgument("utilization_check: active count outside [0, E]");
    }
    UtilizationCheck u;
    u.threshold = threshold;
    u.eta_util = (static_cast<double>(cfg.k) / cfg.E) *
                 (static_cast<double>(active_experts) / cfg.E);
    u.pass = u.eta_util >= threshold;
    return u;
}

CostReport cost_report(const ModelConfig& cfg, const HardwareProfile& hw,
                       double batch_tokens, int active_experts,
                       double util_threshold) {
    CostReport r;
    r.memory = mem_total(cfg, false);
    r.memory_bytes = mem_total(cfg, true);
    r.shard = optimal_shard_size(cfg);
    r.latency = latency_step(cfg, hw, batch_tokens);
    r.roofline = io_and_roofline(cfg, hw, batch_tokens);
    r.utilization = utilization_check(cfg, active_experts, util_threshold);
    return r;
}

}  // namespace pikv
