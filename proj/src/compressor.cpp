// SPDX-License-Identifier: Apache-2.0
#include "pikv/compressor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "pikv/errors.hpp"
#include "pikv/mathops.hpp"
#include "pikv/rng.hpp"

namespace pikv {

namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) {
        throw InsufficientCalibration("fit: empty calibration set");
    }
    const auto d = rows[0].size();
    Eigen::MatrixXd m(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != d) {
            throw InvalidArgument("fit: ragged calibration rows");
        }
        for (std::size_t j = 0; j < d; ++j) {
            if (!std::isfinite(rows[i][j])) {
                throw InvalidArgument("fit: non-finite calibration value");
            }
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rows[i][j];
        }
    }
    return m;
}

// Top-r eigenvectors (by descending eigenvalue) of a symmetric d x d matrix,
// flattened column-major d x r.
std::vector<double> top_eigvecs(const Eigen::MatrixXd& sym, int r) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) {
        throw NumericalError("fit: eigendecomposition failed");
    }
    const int d = static_cast<int>(sym.rows());
    std::vector<double> basis(static_cast<std::size_t>(d) * r);
    // Eigen sorts ascending; read columns from the back.
    for (int j = 0; j < r; ++j) {
        auto col = es.eigenvectors().col(d - 1 - j);
        for (int i = 0; i < d; ++i) {
            basis[static_cast<std::size_t>(j) * d + i] = col(i);
        }
    }
    return basis;
}

std::vector<double> pool_once(std::span<const double> x) {
    std::vector<double> out((x.size() + 1) / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t a = 2 * i, b = 2 * i + 1;
        out[i] = b < x.size() ? 0.5 * (x[a] + x[b]) : x[a];
    }
    return out;
}

std::vector<double> unpool_once(std::span<const double> y,
                                std::size_t parent_width) {
    std::vector<double> out(parent_width);
    for (std::size_t i = 0; i < parent_width; ++i) out[i] = y[i / 2];
    return out;
}

int pyramid_width(int d, int levels) {
    int w = d;
    for (int l = 1; l < levels; ++l) w = (w + 1) / 2;
    return w;
}

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("codec blob truncated");
    return v;
}

void write_f64s(std::ofstream& out, const std::vector<double>& v) {
    write_pod<std::uint64_t>(out, v.size());
    write_bytes(out, v.data(), v.size() * sizeof(double));
}

std::vector<double> read_f64s(std::ifstream& in) {
    auto n = read_pod<std::uint64_t>(in);
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("codec blob truncated");
    return v;
}

constexpr char kMagic[4] = {'P', 'I', 'K', 'C'};
constexpr std::uint16_t kVersion = 1;

}  // namespace

Scheme scheme_from_string(const std::string& name) {
    if (name == "Identity") return Scheme::Identity;
    if (name == "LoRA") return Scheme::LoRA;
    if (name == "LoRAPlus") return Scheme::LoRAPlus;
    if (name == "Pyramid") return Scheme::Pyramid;
    if (name == "Chunk") return Scheme::Chunk;
    if (name == "SVD") return Scheme::SVD;
    if (name == "FastV") return Scheme::FastV;
    if (name == "Distill") return Scheme::Distill;
    if (name == "Prune") return Scheme::Prune;
    throw InvalidConfig("unknown compression scheme: " + name);
}

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::Identity: return "Identity";
        case Scheme::LoRA: return "LoRA";
        case Scheme::LoRAPlus: return "LoRAPlus";
        case Scheme::Pyramid: return "Pyramid";
        case Scheme::Chunk: return "Chunk";
        case Scheme::SVD: return "SVD";
        case Scheme::FastV: return "FastV";
        case Scheme::Distill: return "Distill";
        case Scheme::Prune: return "Prune";
    }
    return "?";
}

void CompressorConfig::validate(int width) const {
    if (rank < 1 || rank > width) {
        throw InvalidConfig("CompressorConfig: need 1 <= rank <= d");
    }
    if (levels < 1) throw InvalidConfig("CompressorConfig: levels must be >= 1");
    if (chunk_size < 1) {
        throw InvalidConfig("CompressorConfig: chunk_size must be >= 1");
    }
    if (prune_frac < 0.0 || prune_frac >= 1.0) {
        throw InvalidConfig("CompressorConfig: prune_frac must be in [0, 1)");
    }
    if (calib_size < 1) {
        throw InvalidConfig("CompressorConfig: calib_size must be >= 1");
    }
    if (distill_steps < 1 || distill_lr <= 0.0) {
        throw InvalidConfig("CompressorConfig: bad distill settings");
    }
}

std::vector<double> pyramid_roundtrip(std::span<const double> x, int level) {
    std::vector<std::size_t> widths;
    std::vector<double> cur(x.begin(), x.end());
    for (int l = 0; l < level; ++l) {
        widths.push_back(cur.size());
        cur = pool_once(cur);
    }
    for (int l = level - 1; l >= 0; --l) {
        cur = unpool_once(cur, widths[static_cast<std::size_t>(l)]);
    }
    return cur;
}

Codec Codec::fit(Scheme scheme,
                 const std::vector<std::vector<double>>& calibration,
                 const CompressorConfig& cfg) {
    Eigen::MatrixXd X = to_matrix(calibration);
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    cfg.validate(d);
    const int r = cfg.rank;

    Codec c;
    c.scheme_ = scheme;
    c.d_ = d;
    c.cfg_ = cfg;
    c.cfg_.scheme = scheme;

    auto need_samples = [&](int needed) {
        if (n < needed) {
            throw InsufficientCalibration("fit: need at least rank samples");
        }
    };

    switch (scheme) {
        case Scheme::Identity:
            c.stored_width_ = d;
            break;
        case Scheme::SVD: {
            need_samples(r);
            Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
            c.basis_.assign(static_cast<std::size_t>(d) * r, 0.0);
            for (int j = 0; j < r; ++j) {
                for (int i = 0; i < d; ++i) {
                    c.basis_[static_cast<std::size_t>(j) * d + i] =
                        svd.matrixV()(i, j);
                }
            }
            c.stored_width_ = r;
            break;
        }
        case Scheme::LoRA: {
            // Same optimal subspace as SVD, reached through the gram matrix;
            // W_u is the basis and W_d its transpose.
            need_samples(r);
            c.basis_ = top_eigvecs(X.transpose() * X, r);
            c.stored_width_ = r;
            break;
        }
        case Scheme::LoRAPlus: {
            need_samples(r);
            Eigen::VectorXd mean = X.colwise().mean();
            Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
            c.basis_ = top_eigvecs(centered.transpose() * centered, r);
            c.bias_.assign(mean.data(), mean.data() + d);
            c.stored_width_ = r;
            break;
        }
        case Scheme::Pyramid:
            c.stored_width_ = pyramid_width(d, cfg.levels);
            break;
        case Scheme::Chunk: {
            need_samples(r);
            for (int start = 0; start < n; start += cfg.chunk_size) {
                int rows = std::min(cfg.chunk_size, n - start);
                Eigen::MatrixXd block = X.middleRows(start, rows);
                c.block_bases_.push_back(
                    top_eigvecs(block.transpose() * block, r));
            }
            c.stored_width_ = r;
            break;
        }
        case Scheme::FastV:
            c.stored_width_ = r;
            break;
        case Scheme::Prune: {
            Eigen::VectorXd mean = X.colwise().mean();
            Eigen::VectorXd var =
                (X.rowwise() - mean.transpose()).array().square().colwise().sum() /
                std::max(1, n);
            int drop = static_cast<int>(std::ceil(cfg.prune_frac * d));
            int keep = d - drop;
            if (keep < 1) keep = 1;
            std::vector<int> order(d);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (var(a) != var(b)) return var(a) > var(b);
                return a < b;
            });
            c.kept_.assign(order.begin(), order.begin() + keep);
            std::sort(c.kept_.begin(), c.kept_.end());
            c.stored_width_ = keep;
            break;
        }
        case Scheme::Distill: {
            need_samples(r);
            Rng rng(cfg.seed);
            Eigen::MatrixXd enc(r, d), dec(d, r);
            double enc_scale = 1.0 / std::sqrt(static_cast<double>(d));
            double dec_scale = 1.0 / std::sqrt(static_cast<double>(r));
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < d; ++j) enc(i, j) = enc_scale * rng.normal();
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < r; ++j) dec(i, j) = dec_scale * rng.normal();

            // Adam on the reconstruction loss |X - X We' Wd'|^2 / n.
            Eigen::MatrixXd m_e = Eigen::MatrixXd::Zero(r, d);
            Eigen::MatrixXd v_e = Eigen::MatrixXd::Zero(r, d);
            Eigen::MatrixXd m_d = Eigen::MatrixXd::Zero(d, r);
            Eigen::MatrixXd v_d = Eigen::MatrixXd::Zero(d, r);
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            for (int step = 1; step <= cfg.distill_steps; ++step) {
                Eigen::MatrixXd Z = X * enc.transpose();        // n x r
                Eigen::MatrixXd R = Z * dec.transpose() - X;    // n x d
                Eigen::MatrixXd g_dec = (2.0 / n) * R.transpose() * Z;
                Eigen::MatrixXd g_enc =
                    (2.0 / n) * dec.transpose() * R.transpose() * X;
                double corr1 = 1.0 - std::pow(b1, step);
                double corr2 = 1.0 - std::pow(b2, step);
                m_e = b1 * m_e + (1 - b1) * g_enc;
                v_e = b2 * v_e + (1 - b2) * g_enc.array().square().matrix();
                m_d = b1 * m_d + (1 - b1) * g_dec;
                v_d = b2 * v_d + (1 - b2) * g_dec.array().square().matrix();
                enc.array() -= cfg.distill_lr * (m_e.array() / corr1) /
                               ((v_e.array() / corr2).sqrt() + eps);
                dec.array() -= cfg.distill_lr * (m_d.array() / corr1) /
                               ((v_d.array() / corr2).sqrt() + eps);
            }
            c.distill_enc_.assign(static_cast<std::size_t>(r) * d, 0.0);
            c.distill_dec_.assign(static_cast<std::size_t>(d) * r, 0.0);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < d; ++j)
                    c.distill_enc_[static_cast<std::size_t>(i) * d + j] = enc(i, j);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < r; ++j)
                    c.distill_dec_[static_cast<std::size_t>(i) * r + j] = dec(i, j);
            c.stored_width_ = r;
            break;
        }
    }
    return c;
}

std::vector<double> Codec::project_encode(std::span<const double> x,
                                          const std::vector<double>& basis) const {
    const int r = static_cast<int>(basis.size()) / d_;
    std::vector<double> y(r, 0.0);
    for (int j = 0; j < r; ++j) {
        const double* col = basis.data() + static_cast<std::size_t>(j) * d_;
        double s = 0.0;
        for (int i = 0; i < d_; ++i) s += col[i] * x[i];
        y[j] = s;
    }
    return y;
}

std::vector<double> Codec::project_decode(std::span<const double> y,
                                          const std::vector<double>& basis) const {
    const int r = static_cast<int>(basis.size()) / d_;
    std::vector<double> x(d_, 0.0);
    for (int j = 0; j < r; ++j) {
        const double* col = basis.data() + static_cast<std::size_t>(j) * d_;
        for (int i = 0; i < d_; ++i) x[i] += col[i] * y[j];
    }
    return x;
}

int Codec::pick_block(std::span<const double> key,
                      std::span<const double> value) const {
    int best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (int b = 0; b < static_cast<int>(block_bases_.size()); ++b) {
        const auto& basis = block_bases_[b];
        auto ek = project_decode(project_encode(key, basis), basis);
        auto ev = project_decode(project_encode(value, basis), basis);
        double err = 0.0;
        for (int i = 0; i < d_; ++i) {
            double dk = key[i] - ek[i];
            double dv = value[i] - ev[i];
            err += dk * dk + dv * dv;
        }
        if (err < best_err) {
            best_err = err;
            best = b;
        }
    }
    return best;
}

std::vector<double> Codec::encode_vector(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != d_) {
        throw InvalidEntry("encode: width mismatch");
    }
    switch (scheme_) {
        case Scheme::Identity:
            return {x.begin(), x.end()};
        case Scheme::SVD:
        case Scheme::LoRA:
            return project_encode(x, basis_);
        case Scheme::LoRAPlus: {
            std::vector<double> centered(x.begin(), x.end());
            for (int i = 0; i < d_; ++i) centered[i] -= bias_[i];
            return project_encode(centered, basis_);
        }
        case Scheme::Pyramid: {
            std::vector<double> cur(x.begin(), x.end());
            for (int l = 1; l < cfg_.levels; ++l) cur = pool_once(cur);
            return cur;
        }
        case Scheme::Chunk: {
            // Single-vector path scores every block basis; callers with a
            // whole chunk in hand use encode_chunk instead.
            std::vector<double> zero(d_, 0.0);
            int b = pick_block(x, zero);
            return project_encode(x, block_bases_[b]);
        }
        case Scheme::FastV:
            return {x.begin(), x.begin() + stored_width_};
        case Scheme::Prune: {
            std::vector<double> y(kept_.size());
            for (std::size_t i = 0; i < kept_.size(); ++i) y[i] = x[kept_[i]];
            return y;
        }
        case Scheme::Distill: {
            std::vector<double> y(stored_width_, 0.0);
            for (int i = 0; i < stored_width_; ++i) {
                const double* row =
                    distill_enc_.data() + static_cast<std::size_t>(i) * d_;
                double s = 0.0;
                for (int j = 0; j < d_; ++j) s += row[j] * x[j];
                y[i] = s;
            }
            return y;
        }
    }
    throw CodecMismatch("encode: unhandled scheme");
}

std::vector<double> Codec::decode_vector(std::span<const double> payload,
                                         int block) const {
    if (static_cast<int>(payload.size()) != stored_width_) {
        throw CodecMismatch("decode: payload width mismatch");
    }
    switch (scheme_) {
        case Scheme::Identity:
            return {payload.begin(), payload.end()};
        case Scheme::SVD:
        case Scheme::LoRA:
            return project_decode(payload, basis_);
        case Scheme::LoRAPlus: {
            auto x = project_decode(payload, basis_);
            for (int i = 0; i < d_; ++i) x[i] += bias_[i];
            return x;
        }
        case Scheme::Pyramid: {
            // Rebuild the level widths from d.
            std::vector<std::size_t> widths;
            std::size_t w = static_cast<std::size_t>(d_);
            for (int l = 1; l < cfg_.levels; ++l) {
                widths.push_back(w);
                w = (w + 1) / 2;
            }
            std::vector<double> cur(payload.begin(), payload.end());
            for (auto it = widths.rbegin(); it != widths.rend(); ++it) {
                cur = unpool_once(cur, *it);
            }
            return cur;
        }
        case Scheme::Chunk: {
            if (block < 0 || block >= static_cast<int>(block_bases_.size())) {
                throw CodecMismatch("decode: bad chunk block index");
            }
            return project_decode(payload, block_bases_[block]);
        }
        case Scheme::FastV: {
            std::vector<double> x(d_, 0.0);
            std::copy(payload.begin(), payload.end(), x.begin());
            return x;
        }
        case Scheme::Prune: {
            std::vector<double> x(d_, 0.0);
            for (std::size_t i = 0; i < kept_.size(); ++i) {
                x[kept_[i]] = payload[i];
            }
            return x;
        }
        case Scheme::Distill: {
            std::vector<double> x(d_, 0.0);
            for (int i = 0; i < d_; ++i) {
                const double* row =
                    distill_dec_.data() + static_cast<std::size_t>(i) * stored_width_;
                double s = 0.0;
                for (int j = 0; j < stored_width_; ++j) s += row[j] * payload[j];
                x[i] = s;
            }
            return x;
        }
    }
    throw CodecMismatch("decode: unhandled scheme");
}

CompressedKV Codec::encode(std::span<const double> key,
                           std::span<const double> value) const {
    if (static_cast<int>(key.size()) != d_ ||
        static_cast<int>(value.size()) != d_) {
        throw InvalidEntry("encode: width mismatch");
    }
    CompressedKV c;
    c.scheme = scheme_;
    c.original_width = d_;
    c.stored_width = stored_width_;
    if (scheme_ == Scheme::Chunk) {
        c.block = pick_block(key, value);
        c.key = project_encode(key, block_bases_[c.block]);
        c.value = project_encode(value, block_bases_[c.block]);
    } else {
        c.key = encode_vector(key);
        c.value = encode_vector(value);
    }
    return c;
}

std::vector<CompressedKV> Codec::encode_chunk(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>&
        entries) const {
    std::vector<CompressedKV> out;
    out.reserve(entries.size());
    if (scheme_ != Scheme::Chunk) {
        for (const auto& [k, v] : entries) out.push_back(encode(k, v));
        return out;
    }
    // One shared basis for the whole chunk: the block minimizing total error.
    int best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (int b = 0; b < static_cast<int>(block_bases_.size()); ++b) {
        const auto& basis = block_bases_[b];
        double err = 0.0;
        for (const auto& [k, v] : entries) {
            auto ek = project_decode(project_encode(k, basis), basis);
            auto ev = project_decode(project_encode(v, basis), basis);
            for (int i = 0; i < d_; ++i) {
                double dk = k[i] - ek[i];
                double dv = v[i] - ev[i];
                err += dk * dk + dv * dv;
            }
        }
        if (err < best_err) {
            best_err = err;
            best = b;
        }
    }
    for (const auto& [k, v] : entries) {
        if (static_cast<int>(k.size()) != d_ ||
            static_cast<int>(v.size()) != d_) {
            throw InvalidEntry("encode_chunk: width mismatch");
        }
        CompressedKV c;
        c.scheme = scheme_;
        c.original_width = d_;
        c.stored_width = stored_width_;
        c.block = best;
        c.key = project_encode(k, block_bases_[best]);
        c.value = project_encode(v, block_bases_[best]);
        out.push_back(std::move(c));
    }
    return out;
}

std::pair<std::vector<double>, std::vector<double>> Codec::decode(
    const CompressedKV& c) const {
    if (c.scheme != scheme_ || c.original_width != d_) {
        throw CodecMismatch("decode: scheme tag mismatch");
    }
    return {decode_vector(c.key, c.block), decode_vector(c.value, c.block)};
}

double Codec::reconstruction_error(std::span<const double> x) const {
    double norm = l2_norm(x);
    if (norm == 0.0) {
        throw InvalidArgument("reconstruction_error: zero-norm input");
    }
    std::vector<double> payload;
    int block = -1;
    if (scheme_ == Scheme::Chunk) {
        std::vector<double> zero(d_, 0.0);
        block = pick_block(x, zero);
        payload = project_encode(x, block_bases_[block]);
    } else {
        payload = encode_vector(x);
    }
    auto back = decode_vector(payload, block);
    double err = 0.0;
    for (int i = 0; i < d_; ++i) {
        double diff = x[i] - back[i];
        err += diff * diff;
    }
    return std::sqrt(err) / norm;
}

std::vector<int> Codec::zero_set() const {
    if (scheme_ != Scheme::Prune) return {};
    std::vector<int> z;
    std::size_t cursor = 0;
    for (int i = 0; i < d_; ++i) {
        if (cursor < kept_.size() && kept_[cursor] == i) {
            ++cursor;
        } else {
            z.push_back(i);
        }
    }
    return z;
}

void Codec::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("codec save: cannot open " + path);
    write_bytes(out, kMagic, 4);
    write_pod<std::uint16_t>(out, kVersion);
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(scheme_));
    write_pod<std::int32_t>(out, d_);
    write_pod<std::int32_t>(out, stored_width_);
    write_pod<std::int32_t>(out, cfg_.rank);
    write_pod<std::int32_t>(out, cfg_.levels);
    write_pod<std::int32_t>(out, cfg_.chunk_size);
    write_pod<double>(out, cfg_.prune_frac);
    write_f64s(out, basis_);
    write_f64s(out, bias_);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(block_bases_.size()));
    for (const auto& b : block_bases_) write_f64s(out, b);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(kept_.size()));
    for (int k : kept_) write_pod<std::int32_t>(out, k);
    write_f64s(out, distill_enc_);
    write_f64s(out, distill_dec_);
    if (!out) throw IoError("codec save: write failed");
}

Codec Codec::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("codec load: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("codec load: bad magic");
    }
    auto version = read_pod<std::uint16_t>(in);
    if (version != kVersion) throw IoError("codec load: unsupported version");
    Codec c;
    c.scheme_ = static_cast<Scheme>(read_pod<std::uint16_t>(in));
    c.d_ = read_pod<std::int32_t>(in);
    c.stored_width_ = read_pod<std::int32_t>(in);
    c.cfg_.scheme = c.scheme_;
    c.cfg_.rank = read_pod<std::int32_t>(in);
    c.cfg_.levels = read_pod<std::int32_t>(in);
    c.cfg_.chunk_size = read_pod<std::int32_t>(in);
    c.cfg_.prune_frac = read_pod<double>(in);
    c.basis_ = read_f64s(in);
    c.bias_ = read_f64s(in);
    auto n_blocks = read_pod<std::uint32_t>(in);
    c.block_bases_.resize(n_blocks);
    for (auto& b : c.block_bases_) b = read_f64s(in);
    auto n_kept = read_pod<std::uint32_t>(in);
    c.kept_.resize(n_kept);
    for (auto& k : c.kept_) k = read_pod<std::int32_t>(in);
    c.distill_enc_ = read_f64s(in);
    c.distill_dec_ = read_f64s(in);
    return c;
}

CompositeCodec CompositeCodec::fit(
    const std::vector<Scheme>& schemes,
    const std::vector<std::vector<double>>& calibration,
    const CompressorConfig& cfg) {
    if (schemes.empty()) {
        throw InvalidConfig("composite fit: empty scheme list");
    }
    CompositeCodec cc;
    std::vector<std::vector<double>> stage_data = calibration;
    for (Scheme s : schemes) {
        if (s == Scheme::Chunk) {
            throw InvalidConfig("composite fit: Chunk does not compose");
        }
        CompressorConfig stage_cfg = cfg;
        if (stage_cfg.rank > static_cast<int>(stage_data[0].size())) {
            stage_cfg.rank = static_cast<int>(stage_data[0].size());
        }
        Codec codec = Codec::fit(s, stage_data, stage_cfg);
        for (auto& row : stage_data) row = codec.encode_vector(row);
        cc.stages_.push_back(std::move(codec));
    }
    return cc;
}

CompressedKV CompositeCodec::encode(std::span<const double> key,
                                    std::span<const double> value) const {
    std::vector<double> k(key.begin(), key.end());
    std::vector<double> v(value.begin(), value.end());
    for (const auto& stage : stages_) {
        k = stage.encode_vector(k);
        v = stage.encode_vector(v);
    }
    CompressedKV c;
    c.scheme = stages_.back().scheme();
    c.original_width = width();
    c.stored_width = stored_width();
    c.key = std::move(k);
    c.value = std::move(v);
    return c;
}

std::pair<std::vector<double>, std::vector<double>> CompositeCodec::decode(
    const CompressedKV& c) const {
    std::vector<double> k = c.key;
    std::vector<double> v = c.value;
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
        k = it->decode_vector(k);
        v = it->decode_vector(v);
    }
    return {std::move(k), std::move(v)};
}

std::vector<double> CompositeCodec::encode_vector(
    std::span<const double> x) const {
    std::vector<double> cur(x.begin(), x.end());
    for (const auto& stage : stages_) cur = stage.encode_vector(cur);
    return cur;
}

int CompositeCodec::width() const { return stages_.front().width(); }

int CompositeCodec::stored_width() const { return stages_.back().stored_width(); }

}  // namespace pikv
