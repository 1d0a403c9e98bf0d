// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "pikv/costmodel.hpp"
#include "pikv/pipeline.hpp"
#include "pikv/topology.hpp"
#include "pikv/trace.hpp"

namespace pikv {

// Everything one experiment needs, assembled from a dotted-key config file.
struct RunConfig {
    EngineConfig engine;
    TraceSpec trace;
    HardwareProfile hardware;
    double batch_tokens = 1.0;
    int active_experts = -1;       // -1: use E
    double util_threshold = 0.2;
    double topo_local_latency = 1e-7;
    double topo_link_latency = 1e-6;
    double topo_link_bandwidth = 1e9;
    int home_device = 0;
    double lambda_memory = 0.0;    // lambda_1
    double lambda_hit = 0.0;       // lambda_2
    int quest_steps = 300;
    double quest_lr = 0.02;
    std::string dump_store_path;   // optional final-store snapshot

    Topology topology() const {
        return Topology::uniform(engine.model.G, topo_local_latency,
                                 topo_link_latency, topo_link_bandwidth);
    }
};

// `key = value` lines, '#' comments. Unknown keys are hard errors. Values
// set later win; `overrides` are applied on top (sweep support).
RunConfig parse_config_text(const std::string& text,
                            const std::map<std::string, std::string>& overrides = {});
RunConfig parse_config_file(const std::string& path,
                            const std::map<std::string, std::string>& overrides = {});

// Stored width the compressor settings will produce; lets the loader derive
// rho instead of making users keep the two in sync by hand.
int predicted_stored_width(const CompressorConfig& cfg, int width,
                           const std::vector<Scheme>& composition);

}  // namespace pikv
