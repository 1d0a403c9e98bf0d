// SPDX-License-Identifier: Apache-2.0
#include "pikv/router.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pikv/errors.hpp"
#include "pikv/mathops.hpp"
#include "pikv/rng.hpp"

namespace pikv {

RouterStrategy router_strategy_from_string(const std::string& name) {
    if (name == "Base") return RouterStrategy::Base;
    if (name == "TopK") return RouterStrategy::TopK;
    if (name == "LoadBalanced") return RouterStrategy::LoadBalanced;
    if (name == "CacheAware") return RouterStrategy::CacheAware;
    if (name == "EntropyLB") return RouterStrategy::EntropyLB;
    if (name == "Adaptive") return RouterStrategy::Adaptive;
    if (name == "Hierarchical") return RouterStrategy::Hierarchical;
    throw InvalidConfig("unknown router strategy: " + name);
}

std::string to_string(RouterStrategy s) {
    switch (s) {
        case RouterStrategy::Base: return "Base";
        case RouterStrategy::TopK: return "TopK";
        case RouterStrategy::LoadBalanced: return "LoadBalanced";
        case RouterStrategy::CacheAware: return "CacheAware";
        case RouterStrategy::EntropyLB: return "EntropyLB";
        case RouterStrategy::Adaptive: return "Adaptive";
        case RouterStrategy::Hierarchical: return "Hierarchical";
    }
    return "?";
}

void RouterConfig::validate(int experts) const {
    if (k < 1 || k > experts) {
        throw InvalidConfig("RouterConfig: need 1 <= k <= E");
    }
    if (alpha < 0 || lambda_miss < 0 || beta_ent < 0 || bandit_step < 0) {
        throw InvalidConfig("RouterConfig: coefficients must be >= 0");
    }
    if (groups < 1 || groups > experts) {
        throw InvalidConfig("RouterConfig: need 1 <= groups <= E");
    }
    if (load_decay < 0 || load_decay >= 1.0) {
        throw InvalidConfig("RouterConfig: load_decay must be in [0, 1)");
    }
}

RouterState RouterState::init(int experts, int width, std::uint64_t seed) {
    RouterState s;
    s.experts = experts;
    s.width = width;
    Rng rng(seed);
    s.routing_matrix =
        rng.normal_vector(static_cast<std::size_t>(experts) * width,
                          1.0 / std::sqrt(static_cast<double>(width)));
    s.load.assign(experts, 0.0);
    s.usage_counts.assign(experts, 0);
    s.miss_counts.assign(experts, 0);
    s.bandit_bias.assign(experts, 0.0);
    return s;
}

std::vector<double> RouterState::usage_p() const {
    std::vector<double> p(experts, 0.0);
    if (total_usage == 0) return p;
    for (int e = 0; e < experts; ++e) {
        p[e] = static_cast<double>(usage_counts[e]) /
               static_cast<double>(total_usage);
    }
    return p;
}

namespace {

// Top-k indices of `scores` restricted to `pool`; ties go to the lower index.
std::vector<int> top_k_of(const std::vector<double>& scores,
                          std::vector<int> pool, int k) {
    std::sort(pool.begin(), pool.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    pool.resize(k);
    return pool;
}

void note_selection(RouterState& state, const std::vector<int>& selected,
                    const RouterConfig& cfg) {
    std::vector<bool> picked(state.experts, false);
    for (int e : selected) picked[e] = true;
    for (int e = 0; e < state.experts; ++e) {
        state.load[e] = cfg.load_decay * state.load[e] +
                        (1.0 - cfg.load_decay) * (picked[e] ? 1.0 : 0.0);
    }
    for (int e : selected) {
        state.usage_counts[e] += 1;
        state.total_usage += 1;
    }
    state.step += 1;
}

RoutingDecision base_round_robin(RouterState& state, const RouterConfig& cfg) {
    RoutingDecision d;
    auto t = static_cast<std::int64_t>(state.step);
    for (int j = 0; j < cfg.k; ++j) {
        d.experts.push_back(
            static_cast<int>((t * cfg.stride + j) % state.experts));
    }
    d.gates.assign(cfg.k, 1.0 / cfg.k);
    d.logits.assign(state.experts, 0.0);
    note_selection(state, d.experts, cfg);
    return d;
}

}  // namespace

RoutingDecision route_logits(std::vector<double> logits, RouterState& state,
                             const RouterConfig& cfg) {
    cfg.validate(state.experts);
    if (cfg.strategy == RouterStrategy::Base) {
        return base_round_robin(state, cfg);
    }
    if (static_cast<int>(logits.size()) != state.experts) {
        throw InvalidArgument("route_logits: logit width != E");
    }
    for (double x : logits) {
        if (std::isnan(x)) throw NumericalError("route_logits: NaN logit");
    }

    switch (cfg.strategy) {
        case RouterStrategy::TopK:
        case RouterStrategy::Hierarchical:
            break;
        case RouterStrategy::LoadBalanced: {
            double mean_load =
                std::accumulate(state.load.begin(), state.load.end(), 0.0) /
                state.experts;
            for (int e = 0; e < state.experts; ++e) {
                logits[e] -= cfg.alpha * (state.load[e] - mean_load);
            }
            break;
        }
        case RouterStrategy::CacheAware:
            for (int e = 0; e < state.experts; ++e) {
                logits[e] -= cfg.lambda_miss *
                             std::log1p(static_cast<double>(state.miss_counts[e]));
            }
            break;
        case RouterStrategy::EntropyLB: {
            // Table-style H(p_e): the expert's own contribution -p_e log p_e,
            // so mid-probability experts carry the largest penalty.
            auto p = state.usage_p();
            for (int e = 0; e < state.experts; ++e) {
                double h_e = p[e] > 0.0 ? -p[e] * std::log(p[e]) : 0.0;
                logits[e] -= cfg.beta_ent * h_e;
            }
            break;
        }
        case RouterStrategy::Adaptive:
            for (int e = 0; e < state.experts; ++e) {
                logits[e] += state.bandit_bias[e];
            }
            break;
        case RouterStrategy::Base:
            break;  // handled above
    }

    std::vector<int> selected;
    if (cfg.strategy == RouterStrategy::Hierarchical) {
        // Coarse stage over contiguous clusters scored by their max logit,
        // then fine top-k within the union of enough top clusters.
        int cluster_size = (state.experts + cfg.groups - 1) / cfg.groups;
        std::vector<double> cluster_score(cfg.groups,
                                          -std::numeric_limits<double>::infinity());
        for (int e = 0; e < state.experts; ++e) {
            int c = e / cluster_size;
            cluster_score[c] = std::max(cluster_score[c], logits[e]);
        }
        std::vector<int> cluster_order(cfg.groups);
        std::iota(cluster_order.begin(), cluster_order.end(), 0);
        std::sort(cluster_order.begin(), cluster_order.end(), [&](int a, int b) {
            if (cluster_score[a] != cluster_score[b])
                return cluster_score[a] > cluster_score[b];
            return a < b;
        });
        std::vector<int> pool;
        for (int c : cluster_order) {
            int begin = c * cluster_size;
            int end = std::min(state.experts, begin + cluster_size);
            for (int e = begin; e < end; ++e) pool.push_back(e);
            if (static_cast<int>(pool.size()) >= cfg.k) break;
        }
        selected = top_k_of(logits, std::move(pool), cfg.k);
    } else {
        std::vector<int> pool(state.experts);
        std::iota(pool.begin(), pool.end(), 0);
        selected = top_k_of(logits, std::move(pool), cfg.k);
    }

    RoutingDecision d;
    d.experts = selected;
    std::vector<double> selected_logits;
    selected_logits.reserve(selected.size());
    for (int e : selected) selected_logits.push_back(logits[e]);
    d.gates = softmax(selected_logits);
    d.logits = std::move(logits);
    note_selection(state, d.experts, cfg);
    return d;
}

RoutingDecision route(std::span<const double> query, RouterState& state,
                      const RouterConfig& cfg) {
    cfg.validate(state.experts);
    if (cfg.strategy == RouterStrategy::Base) {
        return base_round_robin(state, cfg);
    }
    if (static_cast<int>(query.size()) != state.width) {
        throw InvalidArgument("route: query width != d");
    }
    std::vector<double> logits(state.experts, 0.0);
    for (int e = 0; e < state.experts; ++e) {
        const double* row = state.routing_matrix.data() +
                            static_cast<std::size_t>(e) * state.width;
        double s = 0.0;
        for (int i = 0; i < state.width; ++i) s += row[i] * query[i];
        logits[e] = s;
    }
    return route_logits(std::move(logits), state, cfg);
}

void record_miss(RouterState& state, int expert) {
    if (expert < 0 || expert >= state.experts) {
        throw InvalidArgument("record_miss: expert out of range");
    }
    state.miss_counts[expert] += 1;
}

void adapt(RouterState& state, const RoutingDecision& decision, double reward,
           const RouterConfig& cfg) {
    if (reward < 0.0 || reward > 1.0) {
        throw InvalidArgument("adapt: reward must be in [0, 1]");
    }
    double mean_bias =
        std::accumulate(state.bandit_bias.begin(), state.bandit_bias.end(), 0.0) /
        state.experts;
    for (int e : decision.experts) {
        double b = state.bandit_bias[e] + cfg.bandit_step * (reward - mean_bias);
        state.bandit_bias[e] = std::clamp(b, -cfg.bias_cap, cfg.bias_cap);
    }
}

}  // namespace pikv
