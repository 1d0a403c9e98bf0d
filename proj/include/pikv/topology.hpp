// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "pikv/errors.hpp"

namespace pikv {

// Simulated device mesh: per-link latency and bandwidth, plus a flat
// local-access latency. All time is virtual; nothing here reads a clock.
struct Topology {
    int devices = 1;
    double local_latency = 1e-7;          // seconds
    std::vector<double> link_latency;     // G x G, seconds
    std::vector<double> link_bandwidth;   // G x G, bytes/s

    static Topology uniform(int devices, double local_latency,
                            double link_latency, double link_bandwidth) {
        Topology t;
        t.devices = devices;
        t.local_latency = local_latency;
        t.link_latency.assign(static_cast<std::size_t>(devices) * devices, 0.0);
        t.link_bandwidth.assign(static_cast<std::size_t>(devices) * devices,
                                link_bandwidth);
        for (int i = 0; i < devices; ++i) {
            for (int j = 0; j < devices; ++j) {
                if (i != j) {
                    t.link_latency[static_cast<std::size_t>(i) * devices + j] =
                        link_latency;
                }
            }
        }
        t.validate();
        return t;
    }

    void validate() const {
        if (devices < 1) throw InvalidConfig("Topology: devices must be >= 1");
        auto n = static_cast<std::size_t>(devices) * devices;
        if (link_latency.size() != n || link_bandwidth.size() != n) {
            throw InvalidConfig("Topology: matrix size mismatch");
        }
        if (local_latency < 0) {
            throw InvalidConfig("Topology: negative local latency");
        }
        for (int i = 0; i < devices; ++i) {
            for (int j = 0; j < devices; ++j) {
                auto ij = static_cast<std::size_t>(i) * devices + j;
                auto ji = static_cast<std::size_t>(j) * devices + i;
                if (link_latency[ij] != link_latency[ji]) {
                    throw InvalidConfig("Topology: latency matrix not symmetric");
                }
                if (i == j && link_latency[ij] != 0.0) {
                    throw InvalidConfig("Topology: nonzero diagonal latency");
                }
                if (link_bandwidth[ij] <= 0.0) {
                    throw InvalidConfig("Topology: bandwidth must be positive");
                }
            }
        }
    }

    // Local access pays local_latency only; a remote fetch pays link latency
    // plus the transfer time.
    double fetch_seconds(int from, int to, std::uint64_t bytes) const {
        if (from < 0 || from >= devices || to < 0 || to >= devices) {
            throw InvalidArgument("fetch: device index out of range");
        }
        if (from == to) return local_latency;
        auto idx = static_cast<std::size_t>(from) * devices + to;
        return link_latency[idx] +
               static_cast<double>(bytes) / link_bandwidth[idx];
    }
};

}  // namespace pikv
