// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "pikv/config.hpp"
#include "pikv/types.hpp"

namespace pikv {

struct ShardId {
    int device = 0;
    int shard_index = 0;
    int raw = 0;

    bool operator==(const ShardId&) const = default;
};

// s(t,e) = (t mod n_tok) xor (e mod n_exp), folded onto (device, shard) by
// mod/div G. Moduli must be powers of two so xor fills the index space
// uniformly; set `additive` to use (t mod n_tok) + (e mod n_exp) instead.
ShardId shard_assign(std::int64_t t, int e, int n_tok, int n_exp, int devices,
                     bool additive = false);

// Fixed-capacity ring. Slot memory grows lazily up to capacity; insertion is
// O(1) slot arithmetic and never shifts existing entries. A full buffer
// overwrites the oldest slot and surfaces the displaced entry.
class ShardBuffer {
  public:
    explicit ShardBuffer(int capacity);

    std::optional<KVEntry> insert(KVEntry entry);

    // Removes the entry with the given id. Returns false when absent.
    bool erase(std::uint64_t entry_id);

    int live_count() const { return live_; }
    int capacity() const { return capacity_; }

    template <typename Fn>
    void for_each_live(Fn&& fn) {
        for (auto& slot : slots_) {
            if (slot.has_value()) fn(*slot);
        }
    }
    template <typename Fn>
    void for_each_live(Fn&& fn) const {
        for (const auto& slot : slots_) {
            if (slot.has_value()) fn(*slot);
        }
    }

  private:
    int capacity_;
    int head_ = 0;
    int live_ = 0;
    std::vector<std::optional<KVEntry>> slots_;
};

struct StoreConfig {
    int n_tok = 64;
    int n_exp = 64;
    bool additive = false;
    // 0 = default max(n_tok, n_exp) / G, clamped >= 1.
    int shards_per_device = 0;

    void validate(int devices) const;
    int effective_shards_per_device(int devices) const;
};

struct StoreStats {
    std::uint64_t inserts = 0;
    std::uint64_t overwrites = 0;
    std::uint64_t retrievals = 0;
    std::uint64_t misses = 0;
};

struct RetrievalResult {
    // Pointers remain valid until the next insert or eviction; a decode step
    // retrieves after all of its mutations. Mutable so attention can fold
    // its weights back into entry metadata (single-writer per stream).
    std::vector<KVEntry*> entries;
    std::vector<int> missed_experts;
};

struct SnapshotRecord {
    int device = 0;
    int shard = 0;
    std::int64_t token_id = 0;
    int expert_id = 0;
    std::uint64_t age = 0;
    std::uint64_t freq = 0;
};

// Expert-sharded store: G devices x shards_per_device ring buffers of
// capacity S each.
class KVStore {
  public:
    KVStore(const ModelConfig& model, const StoreConfig& store);

    ShardId locate(std::int64_t token_id, int expert_id) const;

    // Entry vectors must have width d'. Returns the overwritten entry when
    // the target buffer was full.
    std::optional<KVEntry> insert(KVEntry entry);

    // Live entries with expert_id in `experts` and token_id < since, ordered
    // by (token_id, expert_id). Bumps freq and resets recency of every
    // returned entry; experts whose shard set came back empty are reported
    // as misses.
    RetrievalResult retrieve(const std::vector<int>& experts,
                             std::int64_t since, std::uint64_t now);

    bool erase(std::uint64_t entry_id);

    std::uint64_t memory_bytes() const;
    std::uint64_t live_entries() const;
    const StoreStats& stats() const { return stats_; }

    int devices() const { return devices_; }
    int shards_per_device() const { return shards_per_device_; }
    int stored_width() const { return d_prime_; }
    int elem_bytes() const { return elem_bytes_; }
    int shard_capacity() const { return capacity_; }

    ShardBuffer& buffer(int device, int shard);
    const ShardBuffer& buffer(int device, int shard) const;

    template <typename Fn>
    void for_each_live(Fn&& fn) {
        for (int dev = 0; dev < devices_; ++dev) {
            for (int sh = 0; sh < shards_per_device_; ++sh) {
                buffers_[index_of(dev, sh)].for_each_live(
                    [&](KVEntry& e) { fn(dev, sh, e); });
            }
        }
    }

    std::vector<SnapshotRecord> snapshot(std::uint64_t now) const;

  private:
    std::size_t index_of(int device, int shard) const {
        return static_cast<std::size_t>(device) * shards_per_device_ + shard;
    }

    int devices_;
    int shards_per_device_;
    int capacity_;
    int d_prime_;
    int elem_bytes_;
    StoreConfig cfg_;
    std::vector<ShardBuffer> buffers_;
    std::vector<std::uint64_t> shard_seq_;  // per-shard insertion counters
    std::uint64_t next_id_ = 1;
    StoreStats stats_;
};

}  // namespace pikv
