#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

namespace nexus {

/// Dense 3D scalar grid (intensities or integer labels), row-major with x
/// fastest. Spacing is in millimeters.
struct VoxelGrid {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<double> values;

    static VoxelGrid create(std::array<int, 3> dims, std::array<double, 3> spacing,
                            std::vector<double> values);
    static VoxelGrid filled(std::array<int, 3> dims, std::array<double, 3> spacing, double value);

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(y) +
                                                    static_cast<std::size_t>(dims[1]) * z);
    }
    double at(int x, int y, int z) const { return values[index(x, y, z)]; }
    double& at(int x, int y, int z) { return values[index(x, y, z)]; }
    bool same_dims(const VoxelGrid& other) const { return dims == other.dims; }
};

/// Dice similarity 2|A∩B| / (|A|+|B|) between binary masks (nonzero = in).
double compute_dice(const VoxelGrid& a, const VoxelGrid& b);

/// Normalized mutual information 2*I(A;B)/(H(A)+H(B)) over a joint histogram
/// with `bins` equal-width bins spanning each image's own min..max. In [0,1],
/// symmetric, and 1 for a non-constant image against itself.
double compute_nmi(const VoxelGrid& a, const VoxelGrid& b, int bins = 64);

/// Pearson correlation over all voxels, in [-1,1].
double compute_ncc(const VoxelGrid& a, const VoxelGrid& b);

/// Milliliters covered by the mask (nonzero voxels), or by voxels equal to
/// `label` when one is given.
double compute_volume_ml(const VoxelGrid& grid, std::optional<int> label = std::nullopt);

/// Grid file format used by the CLI: {"dims":[...],"spacing":[...],"values":[...]}.
VoxelGrid read_grid_json(const std::filesystem::path& path);
void write_grid_json(const VoxelGrid& grid, const std::filesystem::path& path);

} // namespace nexus
