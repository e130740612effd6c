#include "pan/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>

#include "pan/errors.hpp"

namespace pan {

void validate_sample(const Sample& s) {
    const Tensor& v = s.volume.intensities;
    if (v.rank() != 3) throw DimensionError("volume must be [D,H,W], got " + shape_str(v.shape));
    if (!s.mask.same_shape(v))
        throw DimensionError("mask shape " + shape_str(s.mask.shape) +
                             " does not match volume " + shape_str(v.shape));
    int64_t positives = 0;
    for (int64_t i = 0; i < s.mask.numel(); ++i) {
        double m = s.mask[i];
        if (m != 0.0 && m != 1.0) throw DomainError("mask voxel not in {0,1}");
        positives += m == 1.0;
    }
    if (positives == 0) throw DomainError("mask has no positive voxel");
    for (int64_t i = 0; i < v.numel(); ++i)
        if (!(v[i] >= 0.0 && v[i] <= 1.0)) throw DomainError("intensity outside [0,1]");
}

void GeneratorConfig::validate() const {
    if (d < 1) throw ConfigError("generator: d must be >= 1");
    if (h < 8 || h % 8 != 0 || w < 8 || w % 8 != 0)
        throw ConfigError("generator: h and w must be multiples of 8 (segmentor downsampling)");
    auto check_band = [](double lo, double hi, const char* what) {
        if (!(lo > 0.0 && lo <= hi))
            throw ConfigError(std::string("generator: bad ") + what + " range");
    };
    check_band(radius_d_lo, radius_d_hi, "radius_d");
    check_band(radius_hw_lo, radius_hw_hi, "radius_hw");
    if (!(deform >= 0.0 && deform < 1.0)) throw ConfigError("generator: deform must be in [0,1)");
    if (radius_d_hi * (1.0 + deform) >= 0.5 || radius_hw_hi * (1.0 + deform) >= 0.5)
        throw ConfigError("generator: object radii exceed volume bounds");
    if (!(max_tilt >= 0.0 && max_tilt <= 1.5708)) throw ConfigError("generator: bad max_tilt");
    if (noise_sigma < 0.0) throw ConfigError("generator: noise_sigma must be >= 0");
    if (!(object_mean >= 0.0 && object_mean <= 1.0 && background_mean >= 0.0 &&
          background_mean <= 1.0))
        throw ConfigError("generator: intensity means must be in [0,1]");
    if (!(pos_lo > 0.0 && pos_lo < pos_hi && pos_hi < 1.0))
        throw ConfigError("generator: bad positive-fraction band");
}

namespace {

using Mat3 = std::array<double, 9>; // row-major

std::array<double, 3> apply(const Mat3& m, const std::array<double, 3>& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

std::array<double, 3> apply_t(const Mat3& m, const std::array<double, 3>& v) {
    return {m[0] * v[0] + m[3] * v[1] + m[6] * v[2],
            m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
            m[2] * v[0] + m[5] * v[1] + m[8] * v[2]};
}

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return r;
}

// Rodrigues rotation about a unit axis. Coordinates are (k,i,j).
Mat3 axis_rotation(const std::array<double, 3>& u, double angle) {
    double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    return {c + u[0] * u[0] * t,        u[0] * u[1] * t - u[2] * s, u[0] * u[2] * t + u[1] * s,
            u[1] * u[0] * t + u[2] * s, c + u[1] * u[1] * t,        u[1] * u[2] * t - u[0] * s,
            u[2] * u[0] * t - u[1] * s, u[2] * u[1] * t + u[0] * s, c + u[2] * u[2] * t};
}

// Single 6-connected foreground component?
bool single_component(const Tensor& mask) {
    const int D = mask.dim(0), H = mask.dim(1), W = mask.dim(2);
    int64_t total = 0, first = -1;
    for (int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] == 1.0) {
            ++total;
            if (first < 0) first = i;
        }
    if (total == 0) return false;
    std::vector<char> seen(size_t(mask.numel()), 0);
    std::queue<int64_t> q;
    q.push(first);
    seen[size_t(first)] = 1;
    int64_t visited = 0;
    while (!q.empty()) {
        int64_t at = q.front();
        q.pop();
        ++visited;
        int k = int(at / (int64_t(H) * W));
        int i = int(at / W % H);
        int j = int(at % W);
        const int dk[6] = {1, -1, 0, 0, 0, 0};
        const int di[6] = {0, 0, 1, -1, 0, 0};
        const int dj[6] = {0, 0, 0, 0, 1, -1};
        for (int n = 0; n < 6; ++n) {
            int nk = k + dk[n], ni = i + di[n], nj = j + dj[n];
            if (nk < 0 || nk >= D || ni < 0 || ni >= H || nj < 0 || nj >= W) continue;
            int64_t idx = (int64_t(nk) * H + ni) * W + nj;
            if (seen[size_t(idx)] || mask[idx] != 1.0) continue;
            seen[size_t(idx)] = 1;
            q.push(idx);
        }
    }
    return visited == total;
}

} // namespace

Sample generate_sample(const GeneratorConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int D = cfg.d, H = cfg.h, W = cfg.w;
    const double expand = 1.0 + cfg.deform;

    Tensor mask;
    for (int attempt = 0;; ++attempt) {
        if (attempt == 64)
            throw ConfigError("generator: no acceptable mask in 64 attempts (seed " +
                              std::to_string(seed) + ")");

        double rd = rng.uniform(cfg.radius_d_lo, cfg.radius_d_hi) * D;
        double rh = rng.uniform(cfg.radius_hw_lo, cfg.radius_hw_hi) * H;
        double rw = rng.uniform(cfg.radius_hw_lo, cfg.radius_hw_hi) * W;

        // Free spin about the slice axis, bounded out-of-plane tilt. A full
        // 3D rotation could stand the long in-plane axes up against the
        // short D extent, which never fits.
        double alpha = rng.uniform(0.0, 6.283185307179586);
        double psi = rng.uniform(0.0, 6.283185307179586);
        double tilt = rng.uniform(-cfg.max_tilt, cfg.max_tilt);
        Mat3 spin = axis_rotation({1.0, 0.0, 0.0}, alpha);
        Mat3 tilt_m = axis_rotation({0.0, std::cos(psi), std::sin(psi)}, tilt);
        Mat3 rot = mul(tilt_m, spin);

        double p1 = rng.uniform(0.0, 6.283185307179586);
        double p2 = rng.uniform(0.0, 6.283185307179586);

        // Support half-extent of the (deformation-inflated) ellipsoid along
        // each world axis: |diag(r) R^T e|, with e a coordinate axis.
        const int dims[3] = {D, H, W};
        std::array<double, 3> center;
        bool fits = true;
        for (int a = 0; a < 3 && fits; ++a) {
            std::array<double, 3> e{};
            e[size_t(a)] = 1.0;
            auto re = apply_t(rot, e);
            double ext =
                expand * std::sqrt(rd * rd * re[0] * re[0] + rh * rh * re[1] * re[1] +
                                   rw * rw * re[2] * re[2]);
            double lo = ext, hi = double(dims[a] - 1) - ext;
            if (lo > hi) {
                fits = false;
                break;
            }
            center[size_t(a)] = rng.uniform(lo, hi);
        }
        if (!fits) continue;

        mask = Tensor::zeros({D, H, W});
        int64_t positives = 0;
        for (int k = 0; k < D; ++k)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    std::array<double, 3> p{k - center[0], i - center[1], j - center[2]};
                    auto q = apply_t(rot, p);
                    double n0 = q[0] / rd, n1 = q[1] / rh, n2 = q[2] / rw;
                    double m = std::sqrt(n0 * n0 + n1 * n1 + n2 * n2);
                    double f = 1.0;
                    double qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
                    if (qn > 0.0 && cfg.deform > 0.0) {
                        double theta = std::acos(std::clamp(q[0] / qn, -1.0, 1.0));
                        double phi = std::atan2(q[2], q[1]);
                        double st = std::sin(theta);
                        f += cfg.deform * (0.5 * std::sin(2.0 * theta + p1) +
                                           0.5 * std::sin(2.0 * phi + p2) * st * st);
                    }
                    if (m <= f) {
                        mask.at(k, i, j) = 1.0;
                        ++positives;
                    }
                }

        double frac = double(positives) / double(mask.numel());
        if (frac < cfg.pos_lo || frac > cfg.pos_hi) continue;
        if (!single_component(mask)) continue;
        break;
    }

    Sample s;
    s.mask = mask;
    s.volume.intensities = Tensor::zeros({D, H, W});
    Tensor& v = s.volume.intensities;
    const double span = cfg.object_mean - cfg.background_mean;
    for (int64_t i = 0; i < v.numel(); ++i) {
        double val = cfg.background_mean + span * mask[i] + cfg.noise_sigma * rng.normal();
        v[i] = std::clamp(val, 0.0, 1.0);
    }
    v.quantize_to_f32();

    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(seed));
    s.id = buf;
    return s;
}

namespace {

constexpr char kMagic[8] = {'P', 'A', 'N', 'V', 'O', 'L', '1', '\0'};
constexpr int64_t kMaxVoxels = int64_t(1) << 28;

void put_u16(std::string& out, uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char(v >> 8 & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char(v >> 8 * i & 0xff));
}

uint32_t get_u32(const std::string& buf, int64_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[size_t(at + i)])) << 8 * i;
    return v;
}

void need_bytes(const std::string& buf, int64_t upto, const char* what) {
    if (int64_t(buf.size()) < upto)
        throw ParseError(std::string("truncated ") + what, int64_t(buf.size()), false);
}

} // namespace

void write_volume_file(const Sample& s, const std::string& path) {
    validate_sample(s);
    if (s.id.size() > 0xffff) throw ParameterError("sample id longer than 65535 bytes");
    const Tensor& v = s.volume.intensities;

    std::string out;
    out.reserve(size_t(20 + v.numel() * 5 + 2 + int64_t(s.id.size())));
    out.append(kMagic, sizeof kMagic);
    put_u32(out, uint32_t(v.dim(0)));
    put_u32(out, uint32_t(v.dim(1)));
    put_u32(out, uint32_t(v.dim(2)));
    for (int64_t i = 0; i < v.numel(); ++i) {
        float f = float(v[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    for (int64_t i = 0; i < s.mask.numel(); ++i) out.push_back(s.mask[i] == 1.0 ? 1 : 0);
    put_u16(out, uint32_t(s.id.size()));
    out.append(s.id);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

Sample read_volume_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string buf = ss.str();

    need_bytes(buf, 8, "header");
    if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
        throw ParseError("bad magic", 0, false);
    need_bytes(buf, 20, "dimension header");
    int64_t dims[3];
    for (int i = 0; i < 3; ++i) {
        dims[i] = get_u32(buf, 8 + 4 * i);
        if (dims[i] == 0) throw ParseError("zero dimension", 8 + 4 * i, false);
    }
    int64_t n = dims[0] * dims[1] * dims[2];
    if (n > kMaxVoxels) throw ParseError("volume too large", 8, false);

    Sample s;
    s.volume.intensities = Tensor::zeros({int(dims[0]), int(dims[1]), int(dims[2])});
    s.mask = Tensor::zeros({int(dims[0]), int(dims[1]), int(dims[2])});

    need_bytes(buf, 20 + 4 * n, "voxel data");
    for (int64_t i = 0; i < n; ++i) {
        uint32_t bits = get_u32(buf, 20 + 4 * i);
        float fv;
        std::memcpy(&fv, &bits, 4);
        s.volume.intensities[i] = double(fv);
    }
    int64_t mask_at = 20 + 4 * n;
    need_bytes(buf, mask_at + n, "mask data");
    for (int64_t i = 0; i < n; ++i) {
        uint8_t b = uint8_t(buf[size_t(mask_at + i)]);
        if (b > 1) throw ParseError("mask byte not 0 or 1", mask_at + i, false);
        s.mask[i] = double(b);
    }
    int64_t id_at = mask_at + n;
    need_bytes(buf, id_at + 2, "id length");
    uint32_t id_len = uint32_t(uint8_t(buf[size_t(id_at)])) |
                      uint32_t(uint8_t(buf[size_t(id_at + 1)])) << 8;
    need_bytes(buf, id_at + 2 + id_len, "id");
    s.id = buf.substr(size_t(id_at + 2), id_len);
    if (int64_t(buf.size()) != id_at + 2 + id_len)
        throw ParseError("trailing bytes", id_at + 2 + id_len, false);

    validate_sample(s);
    return s;
}

std::vector<std::string> DatasetManifest::ids(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(e.id);
    return out;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(m.config_hash));
    f << "# seed " << m.seed << "\n";
    f << "# config " << hex << "\n";
    for (const auto& e : m.entries) f << e.id << "\t" << e.split << "\n";
    if (!f) throw IoError("write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    DatasetManifest m;
    std::string line;
    long long lineno = 0;
    std::vector<std::string> seen;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string seed_tag = "# seed ", cfg_tag = "# config ";
            if (line.rfind(seed_tag, 0) == 0) {
                auto [p, ec] = std::from_chars(line.data() + seed_tag.size(),
                                               line.data() + line.size(), m.seed);
                if (ec != std::errc() || p != line.data() + line.size())
                    throw ParseError("bad seed line", lineno, true);
            } else if (line.rfind(cfg_tag, 0) == 0) {
                auto [p, ec] = std::from_chars(line.data() + cfg_tag.size(),
                                               line.data() + line.size(), m.config_hash, 16);
                if (ec != std::errc() || p != line.data() + line.size())
                    throw ParseError("bad config line", lineno, true);
            }
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw ParseError("expected id<TAB>split", lineno, true);
        ManifestEntry e{line.substr(0, tab), line.substr(tab + 1)};
        if (e.split != "train" && e.split != "test")
            throw ParseError("split must be train or test, got '" + e.split + "'", lineno,
                             true);
        if (std::find(seen.begin(), seen.end(), e.id) != seen.end())
            throw ParseError("duplicate id '" + e.id + "'", lineno, true);
        seen.push_back(e.id);
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::vector<SliceBatch> slice_batches(const Sample& s, int batch_size, SliceOrder order,
                                      uint64_t seed) {
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    validate_sample(s);
    const int D = s.volume.d(), H = s.volume.h(), W = s.volume.w();
    const int64_t slab = int64_t(H) * W;

    std::vector<int> idx(static_cast<size_t>(D));
    for (int k = 0; k < D; ++k) idx[size_t(k)] = k;
    if (order == SliceOrder::Shuffled) {
        Rng rng(seed);
        rng.shuffle(idx.begin(), idx.end());
    }

    std::vector<SliceBatch> out;
    for (int at = 0; at < D; at += batch_size) {
        int n = std::min(batch_size, D - at);
        SliceBatch b;
        b.images = Tensor::zeros({n, 1, H, W});
        b.masks = Tensor::zeros({n, 1, H, W});
        for (int s_i = 0; s_i < n; ++s_i) {
            int k = idx[size_t(at + s_i)];
            b.slice_indices.push_back(k);
            const double* iv = &s.volume.intensities[int64_t(k) * slab];
            const double* mv = &s.mask[int64_t(k) * slab];
            std::copy(iv, iv + slab, &b.images[int64_t(s_i) * slab]);
            std::copy(mv, mv + slab, &b.masks[int64_t(s_i) * slab]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

} // namespace pan
