// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pikv/kvstore.hpp"
#include "pikv/types.hpp"

namespace pikv {

enum class SchedStrategy {
    H2O,      // u = a_i
    SL,       // age window plus attention sinks
    QUEST,    // fitted MLP on [K_i, V_i]
    Flex,     // static plan by age bucket
    LRU,      // u = -r_i
    LRUPlus,  // u = -r_i + lambda f_i
    AdaKV,    // weighted feature sum with adaptive threshold
    Duo,      // sum of per-layer attention masses
};

SchedStrategy sched_strategy_from_string(const std::string& name);
std::string to_string(SchedStrategy s);

struct SchedulerConfig {
    SchedStrategy strategy = SchedStrategy::LRU;
    int budget_pages = 4;  // K, per device
    int page_size = 16;    // entries per page
    double tau = 64.0;     // SL age threshold
    int sink = 4;          // SL: first tokens always favored
    double lambda_freq = 0.5;   // LRU+
    double adakv_step = 0.05;   // gamma_s
    double target_hit = 0.9;    // eta*
    double gamma_sim = 0.5;     // reuse-score similarity weight
    double theta0 = -1e18;      // initial AdaKV threshold
    double hit_decay = 0.9;     // EMA decay for the running hit rate
    std::vector<double> adakv_weights = {1.0, 0.5, 0.25};  // alpha_j
    std::vector<double> flex_plan = {1.0};  // score per age bucket
    int flex_bucket = 16;

    void validate() const;
};

struct SchedulerState {
    double theta = 0.0;        // AdaKV threshold
    double running_hit = 0.0;  // eta, EMA
    std::vector<double> feature_weights;
    std::uint64_t step = 0;

    static SchedulerState init(const SchedulerConfig& cfg);
};

// Width-16 two-layer perceptron scored on [K_i; V_i], fitted by regression
// against realized future-access counts from a warmup pass.
class QuestScorer {
  public:
    QuestScorer() = default;

    void fit(const std::vector<std::vector<double>>& features,
             const std::vector<double>& targets, int steps, double lr,
             std::uint64_t seed);
    double score(std::span<const double> key, std::span<const double> value) const;
    bool fitted() const { return fitted_; }

  private:
    int input_width_ = 0;
    static constexpr int kHidden = 16;
    std::vector<double> w1_;  // kHidden x input, row-major
    std::vector<double> b1_;
    std::vector<double> w2_;  // kHidden
    double b2_ = 0.0;
    bool fitted_ = false;
};

// Utility u_i of one entry under cfg.strategy; higher means retain. The
// query is part of the scoring interface even though the Table strategies
// ignore it.
double score_entry(const KVEntry& entry, std::span<const double> query,
                   const SchedulerState& state, const SchedulerConfig& cfg,
                   const QuestScorer* quest, std::uint64_t now);

enum class EvictReason { Budget, Threshold, Overwrite };
const char* to_string(EvictReason r);

struct EvictionRecord {
    std::uint64_t step = 0;
    std::uint64_t entry_id = 0;
    std::int64_t token_id = 0;
    int expert_id = 0;
    int device = 0;
    double score = 0.0;
    EvictReason reason = EvictReason::Budget;
};

struct EvictionReport {
    std::vector<EvictionRecord> evicted;
    int pages_before = 0;
    int pages_after = 0;
};

struct PageScore {
    double aggregate = 0.0;
    std::uint64_t oldest_id = 0;  // min entry id, breaks ties oldest-first
};

// Pure eviction selection for one device: indices of pages to drop, lowest
// aggregate first, oldest first on ties. With `use_theta`, pages scoring
// below theta go regardless of budget.
std::vector<std::pair<std::size_t, EvictReason>> select_evictions(
    const std::vector<PageScore>& pages, int budget_pages, bool use_theta,
    double theta);

// Scores every live entry, groups entries into insertion-contiguous pages
// per shard, and evicts per device until the page budget holds.
EvictionReport evict(KVStore& store, SchedulerState& state,
                     const SchedulerConfig& cfg, const QuestScorer* quest,
                     std::uint64_t now);

// Fold one step's retrieval outcome into the running hit rate.
void observe_hits(SchedulerState& state, const SchedulerConfig& cfg,
                  std::uint64_t hits, std::uint64_t lookups);

// theta <- theta + gamma_s (eta* - eta)
void adakv_update(SchedulerState& state, const SchedulerConfig& cfg);

// s_tau = f/(1+t) + gamma_sim * cosine(key, query)
double reuse_score(const KVEntry& entry, std::span<const double> query,
                   const SchedulerConfig& cfg, std::uint64_t now);

// Mean attention weight each token earned from the queries routed to an
// expert. Absent (not zero) for experts that never saw a query.
class ExpertUtilityTracker {
  public:
    void note_query(int expert);
    void note_attention(int expert, std::int64_t token, double weight);
    std::optional<double> utility(int expert, std::int64_t token) const;
    std::uint64_t queries(int expert) const;

  private:
    // Indexed by expert; grows on first touch. Point lookups only, so the
    // unordered token map never leaks iteration order into any output.
    std::vector<std::uint64_t> query_counts_;
    std::vector<std::unordered_map<std::int64_t, double>> weight_sums_;
};

}  // namespace pikv
