#include "nexus/error.hpp"
#include "nexus/util.hpp"
#include "nexus/voxel.hpp"

#include "support/helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace nexus;
using testing::box_mask;
using testing::cube_grid;
using testing::random_grid;

namespace {

// brute-force mask statistics by exhaustive voxel enumeration
double oracle_dice(const VoxelGrid& a, const VoxelGrid& b) {
    std::size_t na = 0, nb = 0, inter = 0;
    for (int z = 0; z < a.dims[2]; ++z)
        for (int y = 0; y < a.dims[1]; ++y)
            for (int x = 0; x < a.dims[0]; ++x) {
                bool in_a = a.at(x, y, z) != 0.0;
                bool in_b = b.at(x, y, z) != 0.0;
                na += in_a;
                nb += in_b;
                inter += in_a && in_b;
            }
    return 2.0 * double(inter) / double(na + nb);
}

// independent NMI via explicitly built joint counts
double oracle_nmi(const VoxelGrid& a, const VoxelGrid& b, int bins) {
    double amin = a.values[0], amax = a.values[0], bmin = b.values[0], bmax = b.values[0];
    for (double v : a.values) {
        amin = std::min(amin, v);
        amax = std::max(amax, v);
    }
    for (double v : b.values) {
        bmin = std::min(bmin, v);
        bmax = std::max(bmax, v);
    }
    auto bucket = [bins](double v, double lo, double hi) {
        if (hi <= lo)
            return 0;
        int k = int((v - lo) / (hi - lo) * bins);
        if (k < 0)
            k = 0;
        if (k > bins - 1)
            k = bins - 1;
        return k;
    };
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ma, mb;
    double n = double(a.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        int ka = bucket(a.values[i], amin, amax);
        int kb = bucket(b.values[i], bmin, bmax);
        joint[{ka, kb}] += 1.0 / n;
        ma[ka] += 1.0 / n;
        mb[kb] += 1.0 / n;
    }
    double ha = 0, hb = 0, mi = 0;
    for (auto& [k, p] : ma)
        ha -= p * std::log2(p);
    for (auto& [k, p] : mb)
        hb -= p * std::log2(p);
    for (auto& [k, p] : joint)
        mi += p * std::log2(p / (ma[k.first] * mb[k.second]));
    return 2.0 * mi / (ha + hb);
}

double oracle_ncc(const VoxelGrid& a, const VoxelGrid& b) {
    double n = double(a.values.size());
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        sa += a.values[i];
        sb += b.values[i];
    }
    double mean_a = sa / n, mean_b = sb / n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        cov += (a.values[i] - mean_a) * (b.values[i] - mean_b);
        va += (a.values[i] - mean_a) * (a.values[i] - mean_a);
        vb += (b.values[i] - mean_b) * (b.values[i] - mean_b);
    }
    return cov / std::sqrt(va * vb);
}

} // namespace

TEST_CASE("grid creation validates shape and spacing") {
    CHECK_THROWS_AS(VoxelGrid::create({2, 2, 2}, {1, 1, 1}, std::vector<double>(7, 0.0)), Error);
    CHECK_THROWS_AS(VoxelGrid::create({2, 2, 2}, {0, 1, 1}, std::vector<double>(8, 0.0)), Error);
    VoxelGrid g = VoxelGrid::create({2, 3, 4}, {1, 2, 3}, std::vector<double>(24, 1.0));
    CHECK(g.voxel_count() == 24);
}

TEST_CASE("dice on hand-built masks") {
    SUBCASE("identical nonempty masks give 1") {
        VoxelGrid m = box_mask(6, 1, 4);
        CHECK(compute_dice(m, m) == doctest::Approx(1.0));
    }
    SUBCASE("disjoint nonempty masks give 0") {
        VoxelGrid a = box_mask(6, 0, 2);
        VoxelGrid b = box_mask(6, 3, 5);
        CHECK(compute_dice(a, b) == doctest::Approx(0.0));
    }
    SUBCASE("|A|=6, |B|=4, overlap 3 gives 0.6") {
        VoxelGrid a = cube_grid(4);
        VoxelGrid b = cube_grid(4);
        // A: six voxels along x at y=z=0..: (0..5 flattened manually)
        for (int i = 0; i < 6; ++i)
            a.values[static_cast<std::size_t>(i)] = 1.0;
        // B: four voxels, first three overlapping A
        for (int i = 3; i < 7; ++i)
            b.values[static_cast<std::size_t>(i)] = 1.0;
        CHECK(compute_dice(a, b) == doctest::Approx(0.6));
        CHECK(compute_dice(a, b) == doctest::Approx(oracle_dice(a, b)));
    }
    SUBCASE("both empty is an error") {
        VoxelGrid z = cube_grid(3);
        CHECK_THROWS_AS(compute_dice(z, z), Error);
    }
    SUBCASE("dim mismatch is an error") {
        CHECK_THROWS_AS(compute_dice(box_mask(4, 0, 2), box_mask(5, 0, 2)), Error);
    }
}

TEST_CASE("nmi on hand-built grids") {
    SUBCASE("self-similarity is 1 for a non-constant image") {
        VoxelGrid g = cube_grid(4);
        for (std::size_t i = 0; i < g.values.size(); ++i)
            g.values[i] = double(i % 5);
        CHECK(compute_nmi(g, g, 8) == doctest::Approx(1.0));
        CHECK(compute_nmi(g, g, 2) == doctest::Approx(1.0));
    }
    SUBCASE("independent two-valued grids give 0") {
        VoxelGrid a = VoxelGrid::create({4, 1, 1}, {1, 1, 1}, {0, 0, 1, 1});
        VoxelGrid b = VoxelGrid::create({4, 1, 1}, {1, 1, 1}, {0, 1, 0, 1});
        CHECK(compute_nmi(a, b, 2) == doctest::Approx(0.0));
    }
    SUBCASE("constant image raises DegenerateEntropy") {
        VoxelGrid flat = cube_grid(3, 5.0);
        VoxelGrid varied = cube_grid(3);
        for (std::size_t i = 0; i < varied.values.size(); ++i)
            varied.values[i] = double(i);
        try {
            compute_nmi(flat, varied, 4);
            FAIL("expected DegenerateEntropy");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::degenerate_entropy);
        }
    }
    SUBCASE("symmetry and range on random grids") {
        SplitMix64 rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            VoxelGrid a = random_grid(8, rng);
            VoxelGrid b = random_grid(8, rng);
            double ab = compute_nmi(a, b, 16);
            double ba = compute_nmi(b, a, 16);
            CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
            CHECK(ab >= 0.0);
            CHECK(ab <= 1.0);
            CHECK(ab == doctest::Approx(oracle_nmi(a, b, 16)).epsilon(1e-9));
        }
    }
}

TEST_CASE("ncc on hand-built grids") {
    VoxelGrid a = VoxelGrid::create({8, 1, 1}, {1, 1, 1}, {3, 1, 4, 1, 5, 9, 2, 6});

    SUBCASE("positive affine image gives 1") {
        VoxelGrid b = a;
        for (double& v : b.values)
            v = 2.0 * v + 3.0;
        CHECK(compute_ncc(a, b) == doctest::Approx(1.0));
    }
    SUBCASE("negated image gives -1") {
        VoxelGrid b = a;
        for (double& v : b.values)
            v = -v;
        CHECK(compute_ncc(a, b) == doctest::Approx(-1.0));
    }
    SUBCASE("eight-voxel fixture matches the direct Pearson formula") {
        VoxelGrid b = VoxelGrid::create({8, 1, 1}, {1, 1, 1}, {2, 7, 1, 8, 2, 8, 1, 8});
        CHECK(compute_ncc(a, b) == doctest::Approx(oracle_ncc(a, b)).epsilon(1e-12));
    }
    SUBCASE("constant input raises ZeroVariance") {
        VoxelGrid flat = cube_grid(2, 1.0);
        VoxelGrid varied = VoxelGrid::create({2, 2, 2}, {1, 1, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
        try {
            compute_ncc(flat, varied);
            FAIL("expected ZeroVariance");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::zero_variance);
        }
    }
    SUBCASE("affine invariance on random grids") {
        SplitMix64 rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            VoxelGrid g = random_grid(6, rng);
            VoxelGrid pos = g, neg = g;
            for (double& v : pos.values)
                v = 1.7 * v + 4.2;
            for (double& v : neg.values)
                v = -0.3 * v + 1.0;
            CHECK(compute_ncc(g, pos) == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(compute_ncc(g, neg) == doctest::Approx(-1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("volume in milliliters") {
    SUBCASE("empty mask is zero") {
        CHECK(compute_volume_ml(cube_grid(4)) == doctest::Approx(0.0));
    }
    SUBCASE("seven voxels at 2mm isotropic is 0.056 ml") {
        VoxelGrid g = cube_grid(4, 0.0, {2, 2, 2});
        for (int i = 0; i < 7; ++i)
            g.values[static_cast<std::size_t>(i)] = 1.0;
        CHECK(compute_volume_ml(g) == doctest::Approx(0.056));
    }
    SUBCASE("label query counts only matching voxels") {
        VoxelGrid g = cube_grid(8); // 512 voxels at 1mm
        for (int i = 0; i < 50; ++i)
            g.values[static_cast<std::size_t>(i)] = 1.0;
        for (int i = 50; i < 150; ++i)
            g.values[static_cast<std::size_t>(i)] = 2.0;
        for (int i = 150; i < 160; ++i)
            g.values[static_cast<std::size_t>(i)] = 3.0;
        CHECK(compute_volume_ml(g, 2) == doctest::Approx(0.1));
    }
    SUBCASE("absent label is an error") {
        VoxelGrid g = cube_grid(4, 1.0);
        try {
            compute_volume_ml(g, 9);
            FAIL("expected LabelAbsent");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::label_absent);
        }
    }
}

TEST_CASE("grid json round-trip") {
    testing::TempDir tmp("grid");
    VoxelGrid g = VoxelGrid::create({2, 2, 2}, {1, 2, 3}, {0, 1, 2, 3, 4, 5, 6, 7});
    write_grid_json(g, tmp.path() / "g.json");
    VoxelGrid back = read_grid_json(tmp.path() / "g.json");
    CHECK(back.dims == g.dims);
    CHECK(back.spacing == g.spacing);
    CHECK(back.values == g.values);
}
