// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pikv {

enum class Scheme {
    Identity,  // d' = d passthrough, the lossless baseline
    LoRA,      // rank-r linear pair, closed-form fit
    LoRAPlus,  // LoRA with a mean-offset bias
    Pyramid,   // factor-2 average pooling, no fitting
    Chunk,     // per-block PCA over groups of chunk_size entries
    SVD,       // truncated SVD of the calibration matrix
    FastV,     // crop to the first r coordinates
    Distill,   // linear autoencoder trained by gradient descent
    Prune,     // keep the highest-variance coordinates
};

Scheme scheme_from_string(const std::string& name);
std::string to_string(Scheme s);

struct CompressorConfig {
    Scheme scheme = Scheme::Identity;
    int rank = 8;           // r; rank == d is the lossless boundary
    int levels = 2;         // pyramid levels
    int chunk_size = 8;     // entries per block
    double prune_frac = 0.5;
    int calib_size = 256;
    int distill_steps = 2000;
    double distill_lr = 0.01;
    std::uint64_t seed = 0x5eed;
    bool per_tensor = false;  // separate key/value codecs (pipeline flag)

    void validate(int width) const;
};

struct CompressedKV {
    Scheme scheme = Scheme::Identity;
    int original_width = 0;
    int stored_width = 0;
    int block = -1;  // chunk basis index; -1 for all other schemes
    std::vector<double> key;
    std::vector<double> value;
};

// One fitted compression scheme. Immutable after fit; encode/decode are pure.
class Codec {
  public:
    Codec() = default;  // unusable until assigned from fit() or load()

    static Codec fit(Scheme scheme,
                     const std::vector<std::vector<double>>& calibration,
                     const CompressorConfig& cfg);

    CompressedKV encode(std::span<const double> key,
                        std::span<const double> value) const;

    // Encodes a whole chunk with one shared basis choice. For every scheme
    // except Chunk this is element-wise encode.
    std::vector<CompressedKV> encode_chunk(
        const std::vector<std::pair<std::vector<double>, std::vector<double>>>&
            entries) const;

    std::pair<std::vector<double>, std::vector<double>> decode(
        const CompressedKV& c) const;

    // Key-side projection for queries so compressed-space attention widths
    // match stored entries.
    std::vector<double> encode_vector(std::span<const double> x) const;
    std::vector<double> decode_vector(std::span<const double> payload,
                                      int block = -1) const;

    // Relative L2 error of decode(encode(x)) against x.
    double reconstruction_error(std::span<const double> x) const;

    Scheme scheme() const { return scheme_; }
    int width() const { return d_; }
    int stored_width() const { return stored_width_; }
    const CompressorConfig& config() const { return cfg_; }

    // Prune's zeroed coordinate set Z (empty for other schemes).
    std::vector<int> zero_set() const;
    int block_count() const { return static_cast<int>(block_bases_.size()); }

    // Versioned binary blob: "PIKC", u16 version, scheme tag, then
    // little-endian parameters.
    void save(const std::string& path) const;
    static Codec load(const std::string& path);

  private:
    std::vector<double> project_encode(std::span<const double> x,
                                       const std::vector<double>& basis) const;
    std::vector<double> project_decode(std::span<const double> y,
                                       const std::vector<double>& basis) const;
    int pick_block(std::span<const double> key,
                   std::span<const double> value) const;

    Scheme scheme_ = Scheme::Identity;
    int d_ = 0;
    int stored_width_ = 0;
    CompressorConfig cfg_;

    // Column-major d x r projection basis (SVD, LoRA, LoRAPlus).
    std::vector<double> basis_;
    std::vector<double> bias_;                 // LoRAPlus offset
    std::vector<std::vector<double>> block_bases_;  // Chunk, d x r each
    std::vector<int> kept_;                    // Prune kept coordinates, sorted
    std::vector<double> distill_enc_;          // r x d, row-major
    std::vector<double> distill_dec_;          // d x r, row-major
};

// Average-pool `level` times and unpool back to full width. Level 0 is the
// identity; the codec's round trip applies levels-1 steps.
std::vector<double> pyramid_roundtrip(std::span<const double> x, int level);

// Ordered composition of schemes; each stage is fitted on the previous
// stage's encoded calibration. Chunk is excluded (its per-entry basis index
// does not compose).
class CompositeCodec {
  public:
    static CompositeCodec fit(const std::vector<Scheme>& schemes,
                              const std::vector<std::vector<double>>& calibration,
                              const CompressorConfig& cfg);

    CompressedKV encode(std::span<const double> key,
                        std::span<const double> value) const;
    std::pair<std::vector<double>, std::vector<double>> decode(
        const CompressedKV& c) const;
    std::vector<double> encode_vector(std::span<const double> x) const;

    int width() const;
    int stored_width() const;
    const std::vector<Codec>& stages() const { return stages_; }

  private:
    std::vector<Codec> stages_;
};

}  // namespace pikv
