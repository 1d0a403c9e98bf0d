// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "pikv/errors.hpp"

namespace pikv {

// Parameters shared by the storage, routing, and cost formulas.
//
//   d          hidden width (elements)
//   head_width attention head width h
//   E          expert count, k active experts per token
//   L          global token budget per run
//   G          device count
//   S          shard buffer capacity (tokens)
//   K          retained pages per device
//   rho        compression ratio d/d' (>= 1)
//   elem_bytes bytes per stored scalar (2 by default, fp16-class storage;
//              the engine itself computes in f64)
struct ModelConfig {
    int d = 64;
    int head_width = 16;
    int E = 8;
    int k = 2;
    long long L = 1024;
    int G = 2;
    int S = 16;
    int K = 4;
    double rho = 1.0;
    int elem_bytes = 2;

    // Stored width. rho is treated as exact by the analytic model; actual
    // buffers need an integer, so round with a floor of 1.
    int d_prime() const {
        int dp = static_cast<int>(std::llround(static_cast<double>(d) / rho));
        return dp < 1 ? 1 : dp;
    }

    void validate() const {
        if (d < 1) throw InvalidConfig("ModelConfig: d must be >= 1");
        if (head_width < 1 || head_width > d)
            throw InvalidConfig("ModelConfig: head_width must be in [1, d]");
        if (E < 1) throw InvalidConfig("ModelConfig: E must be >= 1");
        if (k < 1 || k > E) throw InvalidConfig("ModelConfig: need 1 <= k <= E");
        if (L < 1) throw InvalidConfig("ModelConfig: L must be >= 1");
        if (G < 1) throw InvalidConfig("ModelConfig: G must be >= 1");
        if (S < 1) throw InvalidConfig("ModelConfig: S must be >= 1");
        if (K < 1) throw InvalidConfig("ModelConfig: K must be >= 1");
        if (!(rho >= 1.0)) throw InvalidConfig("ModelConfig: rho must be >= 1");
        if (elem_bytes < 1) throw InvalidConfig("ModelConfig: elem_bytes must be >= 1");
    }
};

}  // namespace pikv
