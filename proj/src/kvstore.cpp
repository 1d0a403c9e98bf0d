// SPDX-License-Identifier: Apache-2.0
#include "pikv/kvstore.hpp"

#include <algorithm>

#include "pikv/errors.hpp"

namespace pikv {

namespace {
bool is_power_of_two(int n) { return n >= 1 && (n & (n - 1)) == 0; }
}  // namespace

ShardId shard_assign(std::int64_t t, int e, int n_tok, int n_exp, int devices,
                     bool additive) {
    if (!is_power_of_two(n_tok) || !is_power_of_two(n_exp)) {
        throw InvalidConfig("shard_assign: moduli must be powers of two");
    }
    if (t < 0 || e < 0) {
        throw InvalidArgument("shard_assign: negative token or expert index");
    }
    int lhs = static_cast<int>(t % n_tok);
    int rhs = e % n_exp;
    int raw = additive ? lhs + rhs : (lhs ^ rhs);
    ShardId id;
    id.raw = raw;
    id.device = raw % devices;
    id.shard_index = raw / devices;
    return id;
}

ShardBuffer::ShardBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw InvalidConfig("ShardBuffer: capacity must be >= 1");
}

std::optional<KVEntry> ShardBuffer::insert(KVEntry entry) {
    std::optional<KVEntry> displaced;
    if (head_ == static_cast<int>(slots_.size()) &&
        static_cast<int>(slots_.size()) < capacity_) {
        slots_.push_back(std::move(entry));
        ++live_;
    } else {
        auto& slot = slots_[head_];
        if (slot.has_value()) {
            displaced = std::move(*slot);
        } else {
            ++live_;
        }
        slot = std::move(entry);
    }
    head_ = (head_ + 1) % capacity_;
    return displaced;
}

bool ShardBuffer::erase(std::uint64_t entry_id) {
    for (auto& slot : slots_) {
        if (slot.has_value() && slot->id == entry_id) {
            slot.reset();
            --live_;
            return true;
        }
    }
    return false;
}

void StoreConfig::validate(int devices) const {
    if (!is_power_of_two(n_tok) || !is_power_of_two(n_exp)) {
        throw InvalidConfig("StoreConfig: n_tok and n_exp must be powers of two");
    }
    if (shards_per_device < 0) {
        throw InvalidConfig("StoreConfig: shards_per_device must be >= 0");
    }
    if (devices < 1) throw InvalidConfig("StoreConfig: devices must be >= 1");
}

int StoreConfig::effective_shards_per_device(int devices) const {
    if (shards_per_device > 0) return shards_per_device;
    int spd = std::max(n_tok, n_exp) / devices;
    return spd < 1 ? 1 : spd;
}

KVStore::KVStore(const ModelConfig& model, const StoreConfig& store)
    : devices_(model.G),
      shards_per_device_(store.effective_shards_per_device(model.G)),
      capacity_(model.S),
      d_prime_(model.d_prime()),
      elem_bytes_(model.elem_bytes),
      cfg_(store) {
    model.validate();
    store.validate(model.G);
    // Raw shard values reach max(n_tok, n_exp) under xor and the sum of the
    // moduli under additive mode; every raw value must land on a real buffer.
    int raw_span = store.additive ? store.n_tok + store.n_exp - 1
                                  : std::max(store.n_tok, store.n_exp);
    int needed = (raw_span + devices_ - 1) / devices_;
    if (shards_per_device_ < needed) shards_per_device_ = needed;
    buffers_.assign(static_cast<std::size_t>(devices_) * shards_per_device_,
                    ShardBuffer(capacity_));
    shard_seq_.assign(buffers_.size(), 0);
}

ShardId KVStore::locate(std::int64_t token_id, int expert_id) const {
    return shard_assign(token_id, expert_id, cfg_.n_tok, cfg_.n_exp, devices_,
                        cfg_.additive);
}

std::optional<KVEntry> KVStore::insert(KVEntry entry) {
    if (static_cast<int>(entry.key.size()) != d_prime_ ||
        static_cast<int>(entry.value.size()) != d_prime_) {
        throw InvalidEntry("KVStore::insert: entry width != d'");
    }
    ShardId sid = locate(entry.token_id, entry.expert_id);
    std::size_t idx = index_of(sid.device, sid.shard_index);
    entry.id = next_id_++;
    entry.shard_seq = shard_seq_[idx]++;
    auto displaced = buffers_[idx].insert(std::move(entry));
    ++stats_.inserts;
    if (displaced.has_value()) ++stats_.overwrites;
    return displaced;
}

RetrievalResult KVStore::retrieve(const std::vector<int>& experts,
                                  std::int64_t since, std::uint64_t now) {
    if (experts.empty()) {
        throw InvalidArgument("KVStore::retrieve: empty expert set");
    }
    RetrievalResult result;
    int max_expert = 0;
    for (int e : experts) {
        if (e < 0) throw InvalidArgument("KVStore::retrieve: negative expert");
        max_expert = std::max(max_expert, e);
    }
    std::vector<std::uint8_t> wanted(max_expert + 1, 0);
    std::vector<std::uint64_t> found(max_expert + 1, 0);
    for (int e : experts) wanted[e] = 1;
    // Sort on a packed (token, expert) key; falls back to a comparator when
    // the ids would not fit the packing.
    bool packable = since >= 0 && since < (1ll << 42) && max_expert < (1 << 20);
    std::vector<std::pair<std::uint64_t, KVEntry*>> hits;
    for (auto& buf : buffers_) {
        buf.for_each_live([&](KVEntry& e) {
            if (e.token_id < since && e.expert_id <= max_expert &&
                wanted[e.expert_id]) {
                std::uint64_t key =
                    packable ? (static_cast<std::uint64_t>(e.token_id) << 20) |
                                   static_cast<std::uint64_t>(e.expert_id)
                             : 0;
                hits.emplace_back(key, &e);
                ++found[e.expert_id];
            }
        });
    }
    if (packable) {
        std::sort(hits.begin(), hits.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
    } else {
        std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
            if (a.second->token_id != b.second->token_id) {
                return a.second->token_id < b.second->token_id;
            }
            return a.second->expert_id < b.second->expert_id;
        });
    }
    result.entries.reserve(hits.size());
    for (auto& [key, e] : hits) {
        e->meta.freq += 1;
        e->meta.last_access_step = now;
        result.entries.push_back(e);
    }
    for (int e : experts) {
        if (found[e] == 0) {
            result.missed_experts.push_back(e);
            ++stats_.misses;
        }
    }
    ++stats_.retrievals;
    return result;
}

bool KVStore::erase(std::uint64_t entry_id) {
    for (auto& buf : buffers_) {
        if (buf.erase(entry_id)) return true;
    }
    return false;
}

std::uint64_t KVStore::live_entries() const {
    std::uint64_t n = 0;
    for (const auto& buf : buffers_) n += buf.live_count();
    return n;
}

std::uint64_t KVStore::memory_bytes() const {
    // M = sum over shards of 2 * d' * live * elem_bytes
    return 2ull * d_prime_ * elem_bytes_ * live_entries();
}

ShardBuffer& KVStore::buffer(int device, int shard) {
    return buffers_[index_of(device, shard)];
}

const ShardBuffer& KVStore::buffer(int device, int shard) const {
    return buffers_[index_of(device, shard)];
}

std::vector<SnapshotRecord> KVStore::snapshot(std::uint64_t now) const {
    std::vector<SnapshotRecord> records;
    for (int dev = 0; dev < devices_; ++dev) {
        for (int sh = 0; sh < shards_per_device_; ++sh) {
            buffer(dev, sh).for_each_live([&](const KVEntry& e) {
                records.push_back({dev, sh, e.token_id, e.expert_id,
                                   e.meta.age(now), e.meta.freq});
            });
        }
    }
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.device, a.shard, a.token_id, a.expert_id) <
               std::tie(b.device, b.shard, b.token_id, b.expert_id);
    });
    return records;
}

}  // namespace pikv
