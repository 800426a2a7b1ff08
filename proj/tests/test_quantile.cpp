#include "netdissect/quantile.hpp"
#include "netdissect/tensor_io.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <sstream>

using namespace netdissect;

namespace {

ActivationVolume one_unit(std::vector<float> values) {
    ActivationVolume v;
    v.geometry = LayerGeometry::identity(1, 1, values.size());
    v.n_images = 1;
    v.image_ids = {0};
    v.data = std::move(values);
    return v;
}

bool bit_equal(const ThresholdTable& a, const ThresholdTable& b) {
    return a.thresholds.size() == b.thresholds.size() &&
           std::memcmp(a.thresholds.data(), b.thresholds.data(), a.thresholds.size() * sizeof(float)) == 0 &&
           a.counts == b.counts;
}

// Images are reordered by permuting slices in a copy.
ActivationVolume permute_images(const ActivationVolume& v, std::mt19937_64& gen) {
    std::vector<std::size_t> order(v.n_images);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    ActivationVolume out = v;
    for (std::size_t i = 0; i < v.n_images; ++i) {
        auto src = v.image(order[i]);
        std::copy(src.begin(), src.end(), out.image(i).begin());
        out.image_ids[i] = v.image_ids[order[i]];
    }
    return out;
}

}  // namespace

TEST(SelectionRank, CeilWithIntegerSnap) {
    EXPECT_EQ(selection_rank(0.005, 1000), 5u);
    EXPECT_EQ(selection_rank(0.005, 1001), 6u);
    EXPECT_EQ(selection_rank(0.1, 30), 3u);
    EXPECT_EQ(selection_rank(0.9, 1), 1u);
    EXPECT_EQ(selection_rank(0.005, 100), 1u);
    EXPECT_THROW(selection_rank(0.5, 0), Error);
    EXPECT_THROW(selection_rank(0.0, 100), Error);
    EXPECT_THROW(selection_rank(1.0, 100), Error);
}

TEST(Thresholds, OneToThousand) {
    std::vector<float> vals(1000);
    std::iota(vals.begin(), vals.end(), 1.0f);
    std::shuffle(vals.begin(), vals.end(), std::mt19937_64(3));
    auto v = one_unit(vals);
    // Full-sort oracle: the 5th largest of 1..1000.
    auto sorted = vals;
    std::sort(sorted.begin(), sorted.end(), std::greater<>{});
    ASSERT_EQ(sorted[4], 996.0f);
    auto t = compute_thresholds(v, 0.005);
    EXPECT_EQ(t.thresholds[0], 996.0f);
    EXPECT_EQ(t.counts[0], 1000u);
    EXPECT_EQ(std::count_if(vals.begin(), vals.end(), [](float x) { return x > 996.0f; }), 4);
    EXPECT_TRUE(bit_equal(t, exact_thresholds_oracle(v, 0.005)));
}

TEST(Thresholds, ConstantActivations) {
    auto v = one_unit(std::vector<float>(400, 7.0f));
    auto t = compute_thresholds(v, 0.005);
    EXPECT_EQ(t.thresholds[0], 7.0f);
}

TEST(Thresholds, SingleActivationHighLevel) {
    auto v = one_unit({3.25f});
    EXPECT_EQ(exact_thresholds_oracle(v, 0.9).thresholds[0], 3.25f);
    EXPECT_THROW(compute_thresholds(v, 0.9), Error);  // theta * N < 1
}

TEST(Thresholds, IdenticalUnitsIdenticalThresholds) {
    std::mt19937_64 gen(8);
    auto v = oracle::random_volume(gen, 3, 2, 5, 5);
    for (std::size_t i = 0; i < v.n_images; ++i) {
        auto u0 = v.unit_map(i, 0);
        std::copy(u0.begin(), u0.end(), v.image(i).begin() + 25);
    }
    auto t = compute_thresholds(v, 0.1);
    EXPECT_EQ(t.thresholds[0], t.thresholds[1]);
}

TEST(Thresholds, Errors) {
    ActivationVolume empty;
    empty.geometry = LayerGeometry::identity(2, 4, 4);
    EXPECT_THROW(compute_thresholds(empty, 0.005), Error);
    auto v = one_unit({1, 2, 3});
    EXPECT_THROW(compute_thresholds(v, 1.5), Error);
    EXPECT_THROW(compute_thresholds(v, 0.005), Error);
}

TEST(Thresholds, OracleEquivalenceWithTiesAndSignedZeros) {
    std::mt19937_64 gen(77);
    for (int trial = 0; trial < 60; ++trial) {
        int levels = trial % 3 == 0 ? 0 : (trial % 3 == 1 ? 3 : 1);
        auto v = oracle::random_volume(gen, 1 + trial % 8, 1 + trial % 16, 4 + trial % 13, 4 + trial % 11, levels);
        if (trial % 5 == 0)
            for (std::size_t k = 0; k < v.data.size(); k += 3) v.data[k] = (k % 2) ? -0.0f : 0.0f;
        for (double theta : {0.005, 0.01, 0.1, 0.5}) {
            const std::uint64_t n = std::uint64_t(v.n_images) * v.geometry.h * v.geometry.w;
            if (theta * double(n) < 1.0) continue;
            auto want = exact_thresholds_oracle(v, theta);
            for (std::size_t workers : {1u, 3u})
                EXPECT_TRUE(bit_equal(compute_thresholds(v, theta, workers), want)) << trial << " " << theta;
            // The rank guarantee itself.
            for (std::size_t u = 0; u < v.geometry.units; ++u) {
                std::uint64_t above = 0, at_least = 0;
                for (std::size_t i = 0; i < v.n_images; ++i)
                    for (float x : v.unit_map(i, u)) above += x > want.thresholds[u], at_least += x >= want.thresholds[u];
                EXPECT_LE(double(above), theta * double(n) + 1e-9);
                EXPECT_GE(at_least, selection_rank(theta, n));
            }
        }
    }
}

TEST(Thresholds, ImageOrderInvariance) {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = oracle::random_volume(gen, 6, 4, 6, 6, trial % 2 ? 4 : 0);
        auto a = compute_thresholds(v, 0.01);
        auto b = compute_thresholds(permute_images(v, gen), 0.01, 2);
        EXPECT_TRUE(bit_equal(a, b));
    }
}

TEST(Thresholds, MonotoneInLevel) {
    std::mt19937_64 gen(6);
    auto v = oracle::random_volume(gen, 4, 5, 8, 8);
    std::vector<double> levels = {0.005, 0.01, 0.05, 0.1, 0.3};
    std::vector<ThresholdTable> ts;
    for (double t : levels) ts.push_back(compute_thresholds(v, t));
    for (std::size_t k = 1; k < ts.size(); ++k)
        for (std::size_t u = 0; u < 5; ++u) EXPECT_GE(ts[k - 1].thresholds[u], ts[k].thresholds[u]);
}

TEST(Thresholds, StreamsFromFile) {
    std::mt19937_64 gen(2);
    auto v = oracle::random_volume(gen, 7, 3, 6, 5);
    auto dir = oracle::temp_dir("q");
    std::filesystem::create_directories(dir);
    write_volume(v, (dir / "v.ndav").string());
    VolumeReader reader((dir / "v.ndav").string());
    EXPECT_TRUE(bit_equal(compute_thresholds(reader, 0.01, 4), exact_thresholds_oracle(v, 0.01)));
    std::filesystem::remove_all(dir);
}

TEST(Thresholds, CsvHasHeaderComment) {
    auto v = one_unit({1, 2, 3, 4});
    std::ostringstream o;
    write_thresholds_csv(compute_thresholds(v, 0.5), o);
    EXPECT_EQ(o.str(), "# theta=0.5\nunit,threshold,count\n0,3,4\n");
}
