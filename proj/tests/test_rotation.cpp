#include "netdissect/rotation.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <numbers>
#include <random>

using namespace netdissect;
using Eigen::MatrixXd;

namespace {

double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(SampleOrthogonal, OneDimensional) {
    auto r = sample_orthogonal(1, 3);
    ASSERT_EQ(r.q.rows(), 1);
    EXPECT_EQ(r.q(0, 0), 1.0);
    EXPECT_TRUE(is_exact_identity(fractional_power(r, 0.5)));
}

TEST(SampleOrthogonal, OrthogonalWithUnitDeterminant) {
    for (std::size_t n : {2u, 3u, 8u, 64u})
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            auto r = sample_orthogonal(n, seed);
            const auto N = Eigen::Index(n);
            EXPECT_LE(max_abs(r.q.transpose() * r.q - MatrixXd::Identity(N, N)), 1e-10) << n << " " << seed;
            EXPECT_NEAR(r.q.determinant(), 1.0, 1e-10);
        }
    EXPECT_THROW(sample_orthogonal(0, 1), Error);
}

TEST(SampleOrthogonal, DeterministicPerSeed) {
    auto a = sample_orthogonal(8, 11), b = sample_orthogonal(8, 11), c = sample_orthogonal(8, 12);
    EXPECT_EQ(std::memcmp(a.q.data(), b.q.data(), sizeof(double) * 64), 0);
    EXPECT_GT(max_abs(a.q - c.q), 1e-3);
}

TEST(SampleOrthogonal, FirstEntryIsRoughlyUniformOnSphere) {
    // E[q00^2] = 1/n for Haar measure.
    const std::size_t n = 4;
    double sum = 0;
    for (std::uint64_t seed = 0; seed < 400; ++seed) sum += std::pow(sample_orthogonal(n, seed).q(0, 0), 2);
    EXPECT_NEAR(sum / 400.0, 1.0 / double(n), 0.04);
}

TEST(FractionalPower, Endpoints) {
    for (std::size_t n : {2u, 8u, 64u})
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            auto r = sample_orthogonal(n, seed);
            const auto N = Eigen::Index(n);
            EXPECT_LE(max_abs(fractional_power(r, 0.0) - MatrixXd::Identity(N, N)), 1e-12);
            EXPECT_TRUE(is_exact_identity(fractional_power(r, 0.0)));
            EXPECT_LE(max_abs(fractional_power(r, 1.0) - r.q), 1e-8) << n << " " << seed;
        }
}

TEST(FractionalPower, OrthogonalAndAdditive) {
    for (std::size_t n : {2u, 8u, 64u}) {
        auto r = sample_orthogonal(n, 9);
        const auto N = Eigen::Index(n);
        for (double a : {0.2, 0.5, 0.7}) {
            MatrixXd qa = fractional_power(r, a);
            EXPECT_LE(max_abs(qa.transpose() * qa - MatrixXd::Identity(N, N)), 1e-10);
            EXPECT_NEAR(qa.determinant(), 1.0, 1e-9);
        }
        EXPECT_LE(max_abs(fractional_power(r, 0.3) * fractional_power(r, 0.5) - fractional_power(r, 0.8)), 1e-8);
        EXPECT_LE(max_abs(fractional_power(r, 0.5) * fractional_power(r, 0.5) - r.q), 1e-8);
    }
    auto r = sample_orthogonal(3, 1);
    EXPECT_THROW(fractional_power(r, 1.5), Error);
    EXPECT_THROW(fractional_power(r, -0.1), Error);
}

TEST(FractionalPower, PlaneRotationClosedForm) {
    const double t = std::numbers::pi / 3;
    MatrixXd q(2, 2);
    q << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    auto r = OrthogonalRotation::from_matrix(q);
    MatrixXd half(2, 2);
    half << std::cos(t / 2), -std::sin(t / 2), std::sin(t / 2), std::cos(t / 2);
    EXPECT_LE(max_abs(fractional_power(r, 0.5) - half), 1e-12);
}

TEST(FractionalPower, HalfTurnBlocks) {
    // diag(-1, -1, 1): a rotation by pi in the first plane.
    MatrixXd q = MatrixXd::Identity(3, 3);
    q(0, 0) = q(1, 1) = -1;
    auto r = OrthogonalRotation::from_matrix(q);
    MatrixXd h = fractional_power(r, 0.5);
    EXPECT_LE(max_abs(h * h - q), 1e-12);
    EXPECT_LE(max_abs(h.transpose() * h - MatrixXd::Identity(3, 3)), 1e-12);
}

TEST(FromMatrix, RejectsNonRotations) {
    EXPECT_THROW(OrthogonalRotation::from_matrix(MatrixXd::Zero(2, 3)), Error);
    EXPECT_THROW(OrthogonalRotation::from_matrix(MatrixXd::Identity(2, 2) * 2.0), Error);
    MatrixXd reflect = MatrixXd::Identity(2, 2);
    reflect(1, 1) = -1;
    EXPECT_THROW(OrthogonalRotation::from_matrix(reflect), Error);
}

TEST(Rotate, PreservesPerCellNorm) {
    std::mt19937_64 gen(3);
    auto v = oracle::random_volume(gen, 3, 16, 5, 5);
    auto r = sample_orthogonal(16, 2);
    auto out = rotate_representation(v, fractional_power(r, 0.6));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 25; ++p) {
            double a = 0, b = 0;
            for (std::size_t u = 0; u < 16; ++u) {
                a += std::pow(v.unit_map(i, u)[p], 2);
                b += std::pow(out.unit_map(i, u)[p], 2);
            }
            EXPECT_NEAR(std::sqrt(b), std::sqrt(a), 1e-4 * std::max(1.0, std::sqrt(a)));
        }
}

TEST(Rotate, IdentityIsBitwiseNoop) {
    std::mt19937_64 gen(4);
    auto v = oracle::random_volume(gen, 2, 6, 3, 4);
    v.data[0] = -0.0f;
    auto out = rotate_representation(v, MatrixXd::Identity(6, 6));
    EXPECT_EQ(std::memcmp(out.data.data(), v.data.data(), v.data.size() * 4), 0);
    RotatedSource<ActivationVolume> lazy(v, MatrixXd::Identity(6, 6));
    auto cur = lazy.cursor();
    std::vector<float> scratch;
    auto s = cur.read(1, scratch);
    EXPECT_EQ(std::memcmp(s.data(), v.image(1).data(), s.size() * 4), 0);
    EXPECT_THROW(rotate_representation(v, MatrixXd::Identity(5, 5)), Error);
}

TEST(Rotate, LazyViewMatchesEagerRotation) {
    std::mt19937_64 gen(5);
    auto v = oracle::random_volume(gen, 4, 8, 3, 3);
    MatrixXd q = fractional_power(sample_orthogonal(8, 4), 0.4);
    auto eager = rotate_representation(v, q);
    RotatedSource<ActivationVolume> lazy(v, q);
    auto cur = lazy.cursor();
    std::vector<float> scratch;
    for (std::size_t i = 0; i < 4; ++i) {
        auto s = cur.read(i, scratch);
        EXPECT_TRUE(std::equal(s.begin(), s.end(), eager.image(i).begin()));
    }
}

TEST(Rotate, PermutationLeavesDetectorsUnchanged) {
    SynthSpec spec;
    spec.n_images = 40;
    spec.n_units = 8;
    spec.plant_first(5);
    auto fx = generate(spec);
    auto base = dissect_layer(fx.volume, fx.dataset).report;
    MatrixXd p = MatrixXd::Zero(8, 8);
    const int perm[] = {3, 7, 0, 5, 1, 2, 6, 4};
    for (int k = 0; k < 8; ++k) p(perm[k], k) = 1.0;
    auto rotated = dissect_layer(RotatedSource<ActivationVolume>(fx.volume, p), fx.dataset).report;
    EXPECT_EQ(rotated.unique_detectors, base.unique_detectors);
    EXPECT_EQ(rotated.unique_by_category, base.unique_by_category);
    for (const auto& d : base.detectors) {
        auto it = std::find_if(rotated.detectors.begin(), rotated.detectors.end(),
                               [&](const UnitAssignment& a) { return a.unit == std::size_t(perm[d.unit]); });
        ASSERT_NE(it, rotated.detectors.end());
        EXPECT_EQ(it->concept_id, d.concept_id);
        EXPECT_EQ(it->iou, d.iou);
    }
}

TEST(Sweep, AlphaZeroEqualsBaseline) {
    SynthSpec spec;
    spec.n_images = 30;
    spec.n_units = 6;
    spec.plant_first(4);
    auto fx = generate(spec);
    auto base = dissect_layer(fx.volume, fx.dataset).report;
    auto sweep = rotation_sweep(fx.volume, fx.dataset, {0.0, 1.0}, {1, 2});
    EXPECT_EQ(sweep.baseline, base);
    ASSERT_EQ(sweep.points.size(), 4u);
    for (const auto& p : sweep.points)
        if (p.alpha == 0.0) {
            EXPECT_EQ(p.unique_detectors, base.unique_detectors);
            EXPECT_EQ(p.detector_units, base.detector_units());
        }
    EXPECT_EQ(sweep.curve(2).size(), 2u);
    EXPECT_THROW(rotation_sweep(fx.volume, fx.dataset, {0.5}, {1}), Error);
    EXPECT_THROW(rotation_sweep(fx.volume, fx.dataset, {0.0}, {}), Error);
    std::ostringstream o;
    write_sweep_csv(sweep, o);
    EXPECT_EQ(o.str().substr(0, 44), "alpha,seed,unique_detectors,detector_units\n0");
}
