#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pan/rng.hpp"
#include "pan/tensor.hpp"

namespace pan {

// Volumes are stored slice-major: [D,H,W], one contiguous (H,W) slab per
// axial slice, which is the unit the segmentor consumes. Spacing is carried
// for bookkeeping only; nothing downstream interprets it.
struct Volume {
    Tensor intensities; // [D,H,W], values in [0,1]
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    int d() const { return intensities.dim(0); }
    int h() const { return intensities.dim(1); }
    int w() const { return intensities.dim(2); }
};

struct Sample {
    Volume volume;
    Tensor mask; // [D,H,W], every voxel exactly 0 or 1, at least one positive
    std::string id;
};

// Throws if the sample breaks the container invariants (shape agreement,
// binary mask with at least one positive voxel, intensities in [0,1]).
void validate_sample(const Sample& s);

// Synthetic low-contrast phantom: a randomly rotated ellipsoid with a
// low-frequency sinusoidal radial deformation, placed so it fits inside the
// volume, rendered at a small intensity contrast over noise. Radii are
// drawn as fractions of the volume dims. All constants here are generator
// defaults, tuned only for the toy benchmark.
struct GeneratorConfig {
    int d = 16, h = 32, w = 32;
    double radius_d_lo = 0.18, radius_d_hi = 0.32;   // fraction of D
    double radius_hw_lo = 0.14, radius_hw_hi = 0.30; // fraction of H resp. W
    double deform = 0.25;        // relative amplitude of the radial perturbation
    double max_tilt = 0.3;       // out-of-plane rotation bound, radians
    double object_mean = 0.55;
    double background_mean = 0.45;
    double noise_sigma = 0.05;
    double pos_lo = 0.01, pos_hi = 0.15; // accepted positive-fraction band

    void validate() const;
};

// Deterministic in (cfg, seed). Resamples geometry until the mask lands in
// the positive-fraction band as a single 6-connected component; gives up
// with a configuration error after 64 attempts. Intensities land on the
// f32 grid so container round trips are bit-exact.
Sample generate_sample(const GeneratorConfig& cfg, uint64_t seed);

// Container format, little-endian throughout:
//   "PANVOL1\0" | u32 D,H,W | D*H*W f32 voxels (k, then i, then j) |
//   D*H*W mask bytes in the same order | u16 id length | id bytes
// Malformed files fail with a parse error naming the byte offset.
void write_volume_file(const Sample& s, const std::string& path);
Sample read_volume_file(const std::string& path);

struct ManifestEntry {
    std::string id;
    std::string split; // "train" or "test"
};

// Line-oriented text: '#'-prefixed header lines carry the generator seed
// and config hash, data lines are "id<TAB>split". Splits are disjoint
// because an id may appear only once.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    uint64_t seed = 0;
    uint64_t config_hash = 0;

    std::vector<std::string> ids(const std::string& split) const;
};

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

enum class SliceOrder { Sequential, Shuffled };

struct SliceBatch {
    Tensor images; // [N,1,H,W]
    Tensor masks;  // [N,1,H,W]
    std::vector<int> slice_indices;
};

// Covers all D axial slices exactly once; the final batch may be short.
// Shuffled order is a seeded permutation, reproducible across runs.
std::vector<SliceBatch> slice_batches(const Sample& s, int batch_size, SliceOrder order,
                                      uint64_t seed = 0);

} // namespace pan
