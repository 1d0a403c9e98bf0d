// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace pikv {

// Access metadata kept alongside each cached entry. Absolute step stamps are
// stored; recency and age are derived against the current step so both clocks
// advance without touching every entry.
struct EntryMeta {
    double attn_mass = 0.0;               // a_i: cumulative attention mass
    std::uint64_t insert_step = 0;        // t_i = now - insert_step
    std::uint64_t last_access_step = 0;   // r_i = now - last_access_step
    std::uint64_t freq = 0;               // f_i: access count
    std::vector<double> per_layer_scores; // per-layer attention masses

    std::uint64_t age(std::uint64_t now) const {
        return now >= insert_step ? now - insert_step : 0;
    }
    std::uint64_t recency(std::uint64_t now) const {
        return now >= last_access_step ? now - last_access_step : 0;
    }
};

// One token's stored key/value pair for one expert. Vectors hold the stored
// (possibly compressed) width d'.
struct KVEntry {
    std::uint64_t id = 0;        // store-assigned, unique per run
    std::uint64_t shard_seq = 0; // insertion index within its shard (pages)
    std::int64_t token_id = 0;   // sequence position t
    int expert_id = 0;
    int codec_block = -1;        // chunk basis index; -1 otherwise
    std::vector<double> key;
    std::vector<double> value;
    EntryMeta meta;
};

}  // namespace pikv
