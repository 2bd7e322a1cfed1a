#pragma once

#include "nexus/registry.hpp"
#include "nexus/util.hpp"
#include "nexus/voxel.hpp"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#ifndef NEXUS_SOURCE_DIR
#define NEXUS_SOURCE_DIR "."
#endif

namespace testing {

inline std::filesystem::path source_dir() {
    return NEXUS_SOURCE_DIR;
}

/// Fresh scratch directory under the build tree, wiped on creation.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("nexus_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline nexus::PrimitiveCard make_card(const std::string& name, nexus::Family family,
                                      const std::string& description = "",
                                      const std::string& schema = "") {
    nexus::PrimitiveCard card;
    card.name = name;
    card.module = "tool_lib.mock";
    card.description = description.empty() ? "does " + name : description;
    card.detailed_schema = schema.empty() ? "Parameters:\n- x: input for " + name : schema;
    card.family = family;
    return card;
}

/// n synthetic cards with unique schema markers, for injection-soundness checks.
inline nexus::Registry synthetic_registry(std::size_t n) {
    std::vector<nexus::PrimitiveCard> cards;
    for (std::size_t i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%03zu", i);
        cards.push_back(make_card("tool_" + std::string(buf),
                                  static_cast<nexus::Family>(i % 3),
                                  "synthetic primitive number " + std::string(buf),
                                  "SCHEMA_MARKER_" + std::string(buf) + " parameters and outputs"));
    }
    return nexus::Registry::from_cards(std::move(cards));
}

/// Cubic grid filled with `fill`, unit spacing unless given.
inline nexus::VoxelGrid cube_grid(int n, double fill = 0.0,
                                  std::array<double, 3> spacing = {1, 1, 1}) {
    return nexus::VoxelGrid::filled({n, n, n}, spacing, fill);
}

/// Axis-aligned box mask in [lo, hi) on every axis.
inline nexus::VoxelGrid box_mask(int n, int lo, int hi) {
    nexus::VoxelGrid grid = cube_grid(n);
    for (int z = lo; z < hi; ++z)
        for (int y = lo; y < hi; ++y)
            for (int x = lo; x < hi; ++x)
                grid.at(x, y, z) = 1.0;
    return grid;
}

inline nexus::VoxelGrid random_grid(int n, nexus::SplitMix64& rng, double lo = 0.0,
                                    double hi = 100.0) {
    nexus::VoxelGrid grid = cube_grid(n);
    for (double& v : grid.values)
        v = lo + rng.unit() * (hi - lo);
    return grid;
}

} // namespace testing
