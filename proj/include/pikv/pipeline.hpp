// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pikv/compressor.hpp"
#include "pikv/config.hpp"
#include "pikv/kvstore.hpp"
#include "pikv/router.hpp"
#include "pikv/scheduler.hpp"

namespace pikv {

// Fixed seeded linear maps producing (q, K_t, V_t) from a token embedding.
// Stands in for the host model's projections at desk scale.
class QueryEncoder {
  public:
    QueryEncoder(int width, std::uint64_t seed);

    struct Encoded {
        std::vector<double> query;
        std::vector<double> key;
        std::vector<double> value;
    };
    Encoded encode(std::span<const double> embedding) const;

    int width() const { return width_; }

  private:
    std::vector<double> apply(const std::vector<double>& matrix,
                              std::span<const double> x) const;
    int width_;
    std::vector<double> w_query_, w_key_, w_value_;  // d x d, row-major
};

struct AttentionOutput {
    std::vector<double> output;   // y_t; zero vector over an empty prefix
    std::vector<double> weights;  // alpha per retrieved entry, sums to 1
    std::size_t retrieved = 0;
};

// alpha = softmax(q . K_tau / sqrt(width)), y = sum alpha V_tau.
AttentionOutput attention(std::span<const double> query,
                          const std::vector<const KVEntry*>& entries);

struct FidelityLedger {
    std::vector<double> per_step;
    double cumulative = 0.0;

    void add(double step_loss) {
        per_step.push_back(step_loss);
        cumulative += step_loss;
    }
};

// One attended entry as seen by a decode step. full_value is the decoded
// width-d value used for fidelity accounting (absent when disabled).
struct AttendedEntry {
    std::int64_t token_id = 0;
    int expert_id = 0;
    double weight = 0.0;
    std::vector<double> full_value;
};

struct StepResult {
    std::uint64_t step = 0;
    std::vector<int> experts;
    std::vector<double> gates;
    int inserts = 0;
    std::vector<EvictionRecord> evictions;  // overwrite + scheduled
    std::uint64_t fetch_elements = 0;       // modeled element accesses
    std::uint64_t hits = 0;                 // warm per-expert lookups
    std::uint64_t lookups = 0;
    AttentionOutput attn;
    std::vector<AttendedEntry> attended;
    std::vector<std::pair<std::int64_t, int>> inserted;  // (token, expert)
};

struct TokenInput {
    std::vector<double> embedding;
    std::vector<double> layer_saliency;  // seeds per-layer scores (Duo)
};

struct EngineConfig {
    ModelConfig model;
    StoreConfig store;
    RouterConfig router;
    SchedulerConfig scheduler;
    CompressorConfig compressor;
    std::vector<Scheme> composition;  // optional multi-stage compressor
    bool attend_full_width = false;   // decode entries before attention
    bool unbounded_budget = false;    // disable the scheduler entirely
    bool record_fidelity = true;      // keep decoded values per step
    std::uint64_t seed = 1;
};

// The decode loop: route, encode, compress, insert, schedule, attend.
class Engine {
  public:
    explicit Engine(const EngineConfig& cfg);

    StepResult step(const TokenInput& input);

    // Chunk compression buffers entries; a stream end flushes the tail.
    std::vector<std::pair<std::int64_t, int>> flush();

    const KVStore& store() const { return store_; }
    KVStore& store() { return store_; }
    const RouterState& router_state() const { return router_state_; }
    const SchedulerState& scheduler_state() const { return sched_state_; }
    const ExpertUtilityTracker& utility_tracker() const { return tracker_; }
    const Codec& codec() const { return codec_; }
    int stored_width() const;
    std::uint64_t current_step() const { return now_; }

    void set_quest(QuestScorer scorer) { quest_ = std::move(scorer); }
    const EngineConfig& config() const { return cfg_; }

  private:
    struct Staged {
        std::int64_t token_id;
        int expert_id;
        std::vector<double> key;
        std::vector<double> value;
        std::vector<double> saliency;
    };
    std::vector<std::pair<std::int64_t, int>> insert_compressed(
        const std::vector<Staged>& staged, std::vector<EvictionRecord>& out);

    EngineConfig cfg_;
    QueryEncoder encoder_;
    Codec codec_;
    std::optional<Codec> codec_value_;  // per-tensor mode
    std::optional<CompositeCodec> composite_;
    KVStore store_;
    RouterState router_state_;
    SchedulerState sched_state_;
    std::optional<QuestScorer> quest_;
    ExpertUtilityTracker tracker_;
    std::vector<Staged> chunk_pending_;
    std::uint64_t now_ = 0;
};

// Full-cache reference: identical routing and encoding, but entries live in
// one flat uncompressed list with no sharding, no budget, and no eviction.
// The engine must reproduce it bit for bit on a lossless configuration.
class ReferenceDecoder {
  public:
    explicit ReferenceDecoder(const EngineConfig& cfg);

    StepResult step(const TokenInput& input);

  private:
    struct Stored {
        std::int64_t token_id;
        int expert_id;
        std::vector<double> key;
        std::vector<double> value;
    };
    EngineConfig cfg_;
    QueryEncoder encoder_;
    RouterState router_state_;
    std::vector<std::vector<Stored>> by_expert_;  // append-only, token order
    std::uint64_t now_ = 0;
};

// L_fidelity for one step: sum over the oracle's attended entries of
// |alpha (V - V_hat)|^2, with V_hat = 0 for entries the engine lost.
double fidelity_step_loss(const StepResult& oracle, const StepResult& engine);

// Ledger over whole streams; lengths must match.
FidelityLedger fidelity(const std::vector<StepResult>& oracle_steps,
                        const std::vector<StepResult>& engine_steps);

}  // namespace pikv
