// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pikv {

enum class RouterStrategy {
    Base,          // round-robin, no logits
    TopK,          // plain top-k softmax gating
    LoadBalanced,  // - alpha * (mu_e - mean(mu))
    CacheAware,    // - lambda * log(1 + miss_e)
    EntropyLB,     // - beta * h_e, h_e = -p_e log p_e
    Adaptive,      // + learned per-expert bias (bandit)
    Hierarchical,  // coarse cluster stage, then top-k
};

RouterStrategy router_strategy_from_string(const std::string& name);
std::string to_string(RouterStrategy s);

struct RouterConfig {
    RouterStrategy strategy = RouterStrategy::TopK;
    int k = 2;
    double alpha = 1.0;        // load penalty coefficient
    double lambda_miss = 1.0;  // cache penalty coefficient
    double beta_ent = 1.0;     // entropy coefficient
    double bandit_step = 0.05; // adaptive learning rate
    int groups = 1;            // hierarchical cluster count
    int stride = 1;            // Base round-robin stride
    double bias_cap = 5.0;     // adaptive bias clamp
    double load_decay = 0.99;  // EMA decay for mu_e

    void validate(int experts) const;
};

// Per-stream mutable state: routing matrix, load/usage estimators, miss
// counters, and the adaptive bias. Single-writer per decode stream.
struct RouterState {
    int experts = 0;
    int width = 0;
    std::vector<double> routing_matrix;  // E x d, row-major
    std::vector<double> load;            // mu_e, EMA of assignment indicator
    std::vector<std::uint64_t> usage_counts;
    std::uint64_t total_usage = 0;
    std::vector<std::uint64_t> miss_counts;
    std::vector<double> bandit_bias;
    std::uint64_t step = 0;

    static RouterState init(int experts, int width, std::uint64_t seed);

    // Assignment distribution p_e; all zeros before the first query.
    std::vector<double> usage_p() const;
};

struct RoutingDecision {
    std::vector<int> experts;   // ordered, |experts| = k, no duplicates
    std::vector<double> gates;  // renormalized softmax over the selected k
    std::vector<double> logits; // full adjusted E-vector (zeros for Base)
};

// Route one query. Computes logits = W_r * q and applies the strategy's
// penalty before selection; updates load and usage for the selected set.
RoutingDecision route(std::span<const double> query, RouterState& state,
                      const RouterConfig& cfg);

// Selection stage on explicit logits. Exposed so penalty/selection behavior
// is testable without going through W_r.
RoutingDecision route_logits(std::vector<double> logits, RouterState& state,
                             const RouterConfig& cfg);

void record_miss(RouterState& state, int expert);

// Mean-baseline bandit update on the per-expert bias of the experts picked
// by `decision`. Reward must lie in [0, 1].
void adapt(RouterState& state, const RoutingDecision& decision, double reward,
           const RouterConfig& cfg);

}  // namespace pikv
