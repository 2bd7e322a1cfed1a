#include "nexus/voxel.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

using nlohmann::json;

namespace nexus {

VoxelGrid VoxelGrid::create(std::array<int, 3> dims, std::array<double, 3> spacing,
                            std::vector<double> values) {
    for (int d : dims) {
        if (d <= 0)
            fail(Errc::parse_error, "grid dims must be positive");
    }
    for (double s : spacing) {
        if (!(s > 0))
            fail(Errc::parse_error, "grid spacing must be positive");
    }
    std::size_t expected =
        static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * dims[2];
    if (values.size() != expected)
        fail(Errc::parse_error, "grid has " + std::to_string(values.size()) + " values, expected " +
                                    std::to_string(expected));
    VoxelGrid grid;
    grid.dims = dims;
    grid.spacing = spacing;
    grid.values = std::move(values);
    return grid;
}

VoxelGrid VoxelGrid::filled(std::array<int, 3> dims, std::array<double, 3> spacing, double value) {
    std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    return create(dims, spacing, std::vector<double>(n, value));
}

namespace {

void require_same_dims(const VoxelGrid& a, const VoxelGrid& b) {
    if (!a.same_dims(b))
        fail(Errc::dim_mismatch, "grids differ in dims");
}

} // namespace

double compute_dice(const VoxelGrid& a, const VoxelGrid& b) {
    require_same_dims(a, b);
    std::size_t count_a = 0;
    std::size_t count_b = 0;
    std::size_t both = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        bool in_a = a.values[i] != 0.0;
        bool in_b = b.values[i] != 0.0;
        count_a += in_a;
        count_b += in_b;
        both += in_a && in_b;
    }
    if (count_a == 0 && count_b == 0)
        fail(Errc::both_empty, "both masks are empty");
    return 2.0 * static_cast<double>(both) / static_cast<double>(count_a + count_b);
}

double compute_nmi(const VoxelGrid& a, const VoxelGrid& b, int bins) {
    require_same_dims(a, b);
    if (bins < 2)
        fail(Errc::parse_error, "bins must be >= 2");

    auto bin_of = [bins](double v, double lo, double hi) {
        if (hi <= lo)
            return 0;
        int bin = static_cast<int>((v - lo) / (hi - lo) * bins);
        return std::clamp(bin, 0, bins - 1);
    };

    auto [amin_it, amax_it] = std::minmax_element(a.values.begin(), a.values.end());
    auto [bmin_it, bmax_it] = std::minmax_element(b.values.begin(), b.values.end());
    double amin = *amin_it, amax = *amax_it, bmin = *bmin_it, bmax = *bmax_it;

    std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
    const double n = static_cast<double>(a.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        int ba = bin_of(a.values[i], amin, amax);
        int bb = bin_of(b.values[i], bmin, bmax);
        joint[static_cast<std::size_t>(ba) * bins + bb] += 1.0;
    }

    std::vector<double> pa(bins, 0.0);
    std::vector<double> pb(bins, 0.0);
    for (int i = 0; i < bins; ++i) {
        for (int j = 0; j < bins; ++j) {
            double p = joint[static_cast<std::size_t>(i) * bins + j] / n;
            joint[static_cast<std::size_t>(i) * bins + j] = p;
            pa[i] += p;
            pb[j] += p;
        }
    }

    auto entropy = [](const std::vector<double>& p) {
        double h = 0;
        for (double v : p) {
            if (v > 0)
                h -= v * std::log2(v);
        }
        return h;
    };
    double ha = entropy(pa);
    double hb = entropy(pb);
    if (ha == 0.0 || hb == 0.0)
        fail(Errc::degenerate_entropy, "constant image has zero marginal entropy");

    double mi = 0;
    for (int i = 0; i < bins; ++i) {
        for (int j = 0; j < bins; ++j) {
            double pij = joint[static_cast<std::size_t>(i) * bins + j];
            if (pij > 0)
                mi += pij * std::log2(pij / (pa[i] * pb[j]));
        }
    }
    double nmi = 2.0 * mi / (ha + hb);
    return std::clamp(nmi, 0.0, 1.0);
}

double compute_ncc(const VoxelGrid& a, const VoxelGrid& b) {
    require_same_dims(a, b);
    const double n = static_cast<double>(a.values.size());
    double mean_a = 0, mean_b = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        mean_a += a.values[i];
        mean_b += b.values[i];
    }
    mean_a /= n;
    mean_b /= n;
    double cov = 0, var_a = 0, var_b = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        double da = a.values[i] - mean_a;
        double db = b.values[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0)
        fail(Errc::zero_variance, "constant image has zero variance");
    double ncc = cov / std::sqrt(var_a * var_b);
    return std::clamp(ncc, -1.0, 1.0);
}

double compute_volume_ml(const VoxelGrid& grid, std::optional<int> label) {
    std::size_t count = 0;
    if (label) {
        double target = static_cast<double>(*label);
        for (double v : grid.values)
            count += v == target;
        if (count == 0)
            fail(Errc::label_absent, "label " + std::to_string(*label) + " not present in grid");
    } else {
        for (double v : grid.values)
            count += v != 0.0;
    }
    double voxel_mm3 = grid.spacing[0] * grid.spacing[1] * grid.spacing[2];
    return static_cast<double>(count) * voxel_mm3 / 1000.0;
}

VoxelGrid read_grid_json(const std::filesystem::path& path) {
    json record;
    try {
        record = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(Errc::parse_error, path.string() + ": " + e.what());
    }
    try {
        std::array<int, 3> dims{record.at("dims").at(0).get<int>(),
                                record.at("dims").at(1).get<int>(),
                                record.at("dims").at(2).get<int>()};
        std::array<double, 3> spacing{1.0, 1.0, 1.0};
        if (record.contains("spacing")) {
            for (int i = 0; i < 3; ++i)
                spacing[i] = record.at("spacing").at(i).get<double>();
        }
        return VoxelGrid::create(dims, spacing, record.at("values").get<std::vector<double>>());
    } catch (const json::exception& e) {
        fail(Errc::parse_error, path.string() + ": " + e.what());
    }
}

void write_grid_json(const VoxelGrid& grid, const std::filesystem::path& path) {
    json record;
    record["dims"] = grid.dims;
    record["spacing"] = grid.spacing;
    record["values"] = grid.values;
    write_text_file_atomic(path, record.dump());
}

} // namespace nexus
