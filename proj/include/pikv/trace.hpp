// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pikv/pipeline.hpp"

namespace pikv {

struct TraceSpec {
    std::uint64_t steps = 256;   // T
    int width = 16;              // d
    int vocab = 64;              // synthetic embedding vocabulary size
    double zipf_skew = 1.0;      // 0 = uniform reuse
    std::uint64_t seed = 1;
    int layers = 4;              // per-layer saliency channels

    void validate() const;
};

struct TraceEvent {
    std::uint32_t embed_id = 0;
    std::vector<float> layer_saliency;
};

// A replayable synthetic query stream. The vocabulary is re-derived from the
// spec, so a saved trace stores only the per-event records.
struct Trace {
    TraceSpec spec;
    std::vector<std::vector<double>> vocabulary;  // vocab x d
    std::vector<TraceEvent> events;

    TokenInput token(std::size_t i) const;
};

// Zipf(skew) reuse over a seeded Gaussian vocabulary; byte-identical for
// equal specs.
Trace generate_trace(const TraceSpec& spec);

// "PIKT" header (version, T, d, vocab, skew, seed, layers) followed by T
// fixed-width little-endian records.
void save_trace(const Trace& trace, const std::string& path);
Trace load_trace(const std::string& path);

}  // namespace pikv
