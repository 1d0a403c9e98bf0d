// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "pikv/config.hpp"

namespace pikv {

// Analytic machine parameters for the latency and roofline formulas.
struct HardwareProfile {
    double hbm_bandwidth = 1e9;   // beta, bytes/s
    double core_throughput = 1e9; // gamma, bytes/s
    double decode_factor = 1.0;   // eta, in (0, 2]
    double peak_compute = 1e12;   // FLOP/s
    double peak_mem_bw = 1e11;    // bytes/s

    void validate() const {
        if (hbm_bandwidth <= 0 || core_throughput <= 0 || peak_compute <= 0 ||
            peak_mem_bw <= 0) {
            throw InvalidConfig("HardwareProfile: rates must be positive");
        }
        if (decode_factor <= 0 || decode_factor > 2.0) {
            throw InvalidConfig("HardwareProfile: decode factor must be in (0, 2]");
        }
    }
};

// -------------------------------------------------------------------------
// Memory model. Units are element counts scaled by elem_bytes when
// `in_bytes`; rho enters as an exact real so the closed forms below hold to
// machine precision (buffers round d' separately).
//
//   M_token = (2d/rho) * L / (G S)      sharded token buffer, per device
//   M_page  = (2d/rho) * K S            scheduled page buffer, per device
//   M_total = M_token + M_page
// -------------------------------------------------------------------------
struct MemoryBreakdown {
    double token = 0.0;
    double page = 0.0;
    double total = 0.0;
};

MemoryBreakdown mem_total(const ModelConfig& cfg, bool in_bytes = false);

// Same model evaluated at an arbitrary (possibly fractional) S.
MemoryBreakdown mem_total_at(const ModelConfig& cfg, double shard_size,
                             bool in_bytes = false);

// S* = sqrt(L / (K G)), the stationary point of M_total in S. Buffers need
// integer capacity, so the floor/ceil candidates are evaluated and the
// cheaper one flagged.
struct OptimalShardSize {
    double exact = 0.0;
    int floor_candidate = 1;
    int ceil_candidate = 1;
    int best_integer = 1;
    double best_cost = 0.0;  // M_total at best_integer, element units
};

OptimalShardSize optimal_shard_size(double tokens, double pages, double devices);
OptimalShardSize optimal_shard_size(const ModelConfig& cfg);

// Closed-form minimum M* = (4d/rho) sqrt(K L / G), element units.
double mem_total_optimal(const ModelConfig& cfg);

// -------------------------------------------------------------------------
// Compression-aware step latency, batch of B tokens:
//   T_read   = 2 d' k B / beta
//   T_decode = eta d' k B / gamma
//   T_step   = (d k B / rho) (2/beta + eta/gamma)
// -------------------------------------------------------------------------
struct StepLatency {
    double read = 0.0;
    double decode = 0.0;
    double step = 0.0;
};

StepLatency latency_step(const ModelConfig& cfg, const HardwareProfile& hw,
                         double batch_tokens);

// T_step(rho1) / T_step(rho2) = rho2 / rho1.
double speedup(double rho_from, double rho_to);

// -------------------------------------------------------------------------
// Dense/sparse I/O, reuse distance, hit rate, arithmetic intensity, and
// roofline scaling. L is the attended prefix length per token.
// -------------------------------------------------------------------------
struct IoRoofline {
    double io_dense = 0.0;       // 2BLhE + BLdE, elements
    double io_sparse = 0.0;      // 2BLhk + BLdk, elements
    double rd_dense = 0.0;       // L / E
    double rd_sparse = 0.0;      // L / k
    double hit_rate = 0.0;       // ~ k / E
    double arith_intensity = 0.0;// h / (2h + d), dense == sparse
    double throughput_scaling = 0.0;  // E / k
    bool compute_bound = false;  // AI * peak_mem_bw >= peak_compute
};

IoRoofline io_and_roofline(const ModelConfig& cfg, const HardwareProfile& hw,
                           double batch_tokens);

// eta_util = (k/E) * (active/E); passes when >= threshold.
struct UtilizationCheck {
    double eta_util = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

UtilizationCheck utilization_check(const ModelConfig& cfg, int active_experts,
                                   double threshold);

// Everything above for one configuration, in report form.
struct CostReport {
    MemoryBreakdown memory;       // element units
    MemoryBreakdown memory_bytes; // scaled by elem_bytes
    OptimalShardSize shard;
    StepLatency latency;
    IoRoofline roofline;
    UtilizationCheck utilization;
};

CostReport cost_report(const ModelConfig& cfg, const HardwareProfile& hw,
                       double batch_tokens, int active_experts,
                       double util_threshold);

}  // namespace pikv
