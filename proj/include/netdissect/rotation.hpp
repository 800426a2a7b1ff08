#pragma once
// Random changes of basis for a layer representation.
//
// sample_orthogonal draws Q Haar-uniformly from SO(n): A with iid N(0,1)
// entries, A = QR with R's diagonal made positive (which makes Q Haar on
// O(n)), then the last column is negated when det(Q) = -1. The real Schur
// form Q = U T U^T of an orthogonal matrix is block diagonal with 2x2
// rotation blocks and +-1 entries; Q^alpha scales every block angle by
// alpha, which traces the geodesic from I (alpha = 0) to Q (alpha = 1).

#include "netdissect/error.hpp"
#include "netdissect/report.hpp"
#include "netdissect/scoring.hpp"
#include "netdissect/svg.hpp"
#include "netdissect/tensor_io.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace netdissect {

// Rotation by `angle` in the plane of Schur vectors i and j.
struct PlaneRotation {
    std::size_t i = 0;
    std::size_t j = 0;
    double angle = 0.0;  // in (-pi, pi]
};

struct OrthogonalRotation {
    std::size_t n = 0;
    Eigen::MatrixXd q;
    Eigen::MatrixXd schur_u;
    std::vector<PlaneRotation> blocks;  // includes -1 pairs as angle-pi blocks
    std::vector<std::size_t> fixed;     // +1 eigen-directions

    // Block-diagonal T rebuilt from the extracted angles.
    Eigen::MatrixXd schur_t(double alpha = 1.0) const {
        Eigen::MatrixXd t = Eigen::MatrixXd::Identity(Eigen::Index(n), Eigen::Index(n));
        for (const auto& b : blocks) {
            double c = std::cos(alpha * b.angle), s = std::sin(alpha * b.angle);
            auto i = Eigen::Index(b.i), j = Eigen::Index(b.j);
            t(i, i) = c;
            t(i, j) = -s;
            t(j, i) = s;
            t(j, j) = c;
        }
        return t;
    }

    // Wraps an existing matrix; it must be orthogonal with det +1.
    static OrthogonalRotation from_matrix(const Eigen::MatrixXd& q, double tol = 1e-10) {
        if (q.rows() != q.cols() || q.rows() == 0) throw Error("rotation must be a non-empty square matrix");
        const auto n = q.rows();
        double ortho = (q.transpose() * q - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
        if (ortho > tol) throw Error("matrix is not orthogonal (max |Q^T Q - I| = " + std::to_string(ortho) + ")");
        double det = q.determinant();
        if (std::abs(det - 1.0) > tol) throw Error("matrix determinant is " + std::to_string(det) + ", expected +1");
        OrthogonalRotation r;
        r.n = std::size_t(n);
        r.q = q;
        r.decompose();
        return r;
    }

private:
    void decompose() {
        Eigen::RealSchur<Eigen::MatrixXd> schur(q);
        if (schur.info() != Eigen::Success) throw InternalError("real Schur decomposition did not converge");
        const Eigen::MatrixXd& t = schur.matrixT();
        schur_u = schur.matrixU();
        blocks.clear();
        fixed.clear();
        std::vector<std::size_t> minus;
        const auto size = Eigen::Index(n);
        for (Eigen::Index i = 0; i < size;) {
            if (i + 1 < size && t(i + 1, i) != 0.0) {
                double s = 0.5 * (t(i + 1, i) - t(i, i + 1));
                double c = 0.5 * (t(i, i) + t(i + 1, i + 1));
                blocks.push_back({std::size_t(i), std::size_t(i + 1), std::atan2(s, c)});
                i += 2;
            } else {
                (t(i, i) > 0.0 ? fixed : minus).push_back(std::size_t(i));
                i += 1;
            }
        }
        if (minus.size() % 2 != 0) throw InternalError("unpaired -1 eigenvalue in a rotation with det +1");
        for (std::size_t k = 0; k < minus.size(); k += 2) blocks.push_back({minus[k], minus[k + 1], std::numbers::pi});
    }
};

inline OrthogonalRotation sample_orthogonal(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw Error("rotation dimension must be >= 1");
    const auto size = Eigen::Index(n);
    for (std::uint64_t attempt = 0;; ++attempt) {
        std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(attempt)};
        std::mt19937_64 gen(seq);
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::MatrixXd a(size, size);
        for (Eigen::Index r = 0; r < size; ++r)
            for (Eigen::Index c = 0; c < size; ++c) a(r, c) = normal(gen);

        Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        const Eigen::MatrixXd& packed = qr.matrixQR();
        double max_diag = packed.diagonal().cwiseAbs().maxCoeff();
        double min_diag = packed.diagonal().cwiseAbs().minCoeff();
        if (!(min_diag > 1e-12 * max_diag)) continue;  // numerically singular draw

        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(size, size);
        for (Eigen::Index c = 0; c < size; ++c)
            if (packed(c, c) < 0.0) q.col(c) = -q.col(c);
        if (q.determinant() < 0.0) q.col(size - 1) = -q.col(size - 1);
        return OrthogonalRotation::from_matrix(q, 1e-8);
    }
}

// Q^alpha = U T^alpha U^T. alpha = 0 gives the exact identity.
inline Eigen::MatrixXd fractional_power(const OrthogonalRotation& rot, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("rotation power must lie in [0, 1], got " + std::to_string(alpha));
    const auto n = Eigen::Index(rot.n);
    if (alpha == 0.0) return Eigen::MatrixXd::Identity(n, n);
    return rot.schur_u * rot.schur_t(alpha) * rot.schur_u.transpose();
}

inline bool is_exact_identity(const Eigen::MatrixXd& q) {
    return q.rows() == q.cols() && q == Eigen::MatrixXd::Identity(q.rows(), q.cols());
}

// out = Q * in, per activation cell, for one [unit][cell] slice.
inline void rotate_slice(const Eigen::MatrixXd& q, std::span<const float> in, std::size_t cells, std::span<float> out) {
    const auto n = q.rows();
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajorF> src(in.data(), n, Eigen::Index(cells));
    Eigen::Map<RowMajorF> dst(out.data(), n, Eigen::Index(cells));
    dst = (q * src.cast<double>()).cast<float>();
}

// Channel rotation applied lazily per image slice.
template <class Source>
class RotatedSource {
public:
    RotatedSource(const Source& base, Eigen::MatrixXd q) : base_(&base), q_(std::move(q)), identity_(is_exact_identity(q_)) {
        if (std::size_t(q_.rows()) != base.layer().units || q_.rows() != q_.cols())
            throw Error("rotation is " + std::to_string(q_.rows()) + "x" + std::to_string(q_.cols()) + " but layer has " +
                        std::to_string(base.layer().units) + " units");
    }

    std::size_t images() const { return base_->images(); }
    const LayerGeometry& layer() const { return base_->layer(); }
    const std::vector<ImageId>& ids() const { return base_->ids(); }

    class Cursor {
    public:
        explicit Cursor(const RotatedSource& s) : src_(&s), base_(s.base_->cursor()) {}

        std::span<const float> read(std::size_t i, std::vector<float>& scratch) {
            auto in = base_.read(i, own_);
            if (src_->identity_) return in;
            scratch.resize(in.size());
            const auto& g = src_->layer();
            rotate_slice(src_->q_, in, g.h * g.w, scratch);
            return scratch;
        }

    private:
        const RotatedSource* src_;
        decltype(std::declval<const Source&>().cursor()) base_;
        std::vector<float> own_;
    };

    Cursor cursor() const { return Cursor(*this); }

private:
    const Source* base_;
    Eigen::MatrixXd q_;
    bool identity_;
};

inline ActivationVolume rotate_representation(const ActivationVolume& v, const Eigen::MatrixXd& q) {
    if (q.rows() != q.cols() || std::size_t(q.rows()) != v.geometry.units)
        throw Error("rotation is " + std::to_string(q.rows()) + "x" + std::to_string(q.cols()) + " but volume has " +
                    std::to_string(v.geometry.units) + " units");
    ActivationVolume out = v;
    if (is_exact_identity(q)) return out;
    for (std::size_t i = 0; i < v.n_images; ++i) rotate_slice(q, v.image(i), v.map_size(), out.image(i));
    return out;
}

struct SweepPoint {
    double alpha = 0.0;
    std::uint64_t seed = 0;
    std::size_t unique_detectors = 0;
    std::size_t detector_units = 0;

    bool operator==(const SweepPoint&) const = default;
};

struct RotationSweep {
    std::vector<double> alphas;
    std::vector<std::uint64_t> seeds;
    DetectorReport baseline;
    std::vector<SweepPoint> points;  // seed-major, alphas in given order

    std::vector<std::size_t> curve(std::uint64_t seed) const {
        std::vector<std::size_t> out;
        for (const auto& p : points)
            if (p.seed == seed) out.push_back(p.unique_detectors);
        return out;
    }
};

// For each seed, samples Q once and dissects Q^alpha f for every alpha,
// recomputing thresholds on the rotated representation.
template <class Source>
RotationSweep rotation_sweep(const Source& source, const AnnotationSet& dataset, const std::vector<double>& alphas,
                             const std::vector<std::uint64_t>& seeds, double theta = kDefaultQuantile,
                             double tau = kDefaultIoUThreshold, std::size_t workers = 1) {
    if (std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end())
        throw Error("rotation sweep needs alpha = 0 in its grid");
    for (double a : alphas)
        if (!(a >= 0.0 && a <= 1.0)) throw Error("alpha " + std::to_string(a) + " outside [0, 1]");
    if (seeds.empty()) throw Error("rotation sweep needs at least one seed");
    RotationSweep sweep;
    sweep.alphas = alphas;
    sweep.seeds = seeds;
    sweep.baseline = dissect_layer(source, dataset, theta, tau, workers).report;
    const std::size_t n = source.layer().units;
    for (auto seed : seeds) {
        auto rot = n > 0 ? sample_orthogonal(n, seed) : OrthogonalRotation{};
        for (double a : alphas) {
            SweepPoint p{a, seed, 0, 0};
            if (a == 0.0 || n == 0) {
                p.unique_detectors = sweep.baseline.unique_detectors;
                p.detector_units = sweep.baseline.detector_units();
            } else {
                RotatedSource<Source> rotated(source, fractional_power(rot, a));
                auto r = dissect_layer(rotated, dataset, theta, tau, workers).report;
                p.unique_detectors = r.unique_detectors;
                p.detector_units = r.detector_units();
            }
            sweep.points.push_back(p);
        }
    }
    return sweep;
}

inline std::string format_alpha(double a) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", a);
    return buf;
}

inline void write_sweep_csv(const RotationSweep& s, std::ostream& out) {
    out << "alpha,seed,unique_detectors,detector_units\n";
    for (const auto& p : s.points)
        out << format_alpha(p.alpha) << ',' << p.seed << ',' << p.unique_detectors << ',' << p.detector_units << '\n';
}

// Mean unique detectors per alpha with a min-max band across seeds.
inline std::string sweep_svg(const RotationSweep& s) {
    const double W = 520, H = 340, left = 60, right = 20, top = 40, bottom = 290;
    svg::Document doc(W, H);
    doc.text(W / 2, 22, "unique detectors vs rotation alpha", 14, "middle");
    std::vector<double> alphas = s.alphas;
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
    struct Stat { double mean = 0, lo = 0, hi = 0; };
    std::vector<Stat> stats;
    std::size_t max_v = std::max<std::size_t>(1, s.baseline.unique_detectors);
    for (double a : alphas) {
        Stat st{0, 1e300, -1e300};
        std::size_t k = 0;
        for (const auto& p : s.points)
            if (p.alpha == a) {
                double v = double(p.unique_detectors);
                st.mean += v, st.lo = std::min(st.lo, v), st.hi = std::max(st.hi, v), ++k;
                max_v = std::max(max_v, p.unique_detectors);
            }
        st.mean /= double(std::max<std::size_t>(k, 1));
        stats.push_back(st);
    }
    const double xs = (W - left - right), ys = (bottom - top) / double(max_v);
    auto px = [&](double a) { return left + a * xs; };
    auto py = [&](double v) { return bottom - v * ys; };
    doc.line(left, bottom, W - right, bottom, "#333");
    doc.line(left, top, left, bottom, "#333");
    for (int t = 0; t <= 5; ++t) {
        double a = t / 5.0;
        doc.line(px(a), bottom, px(a), bottom + 4, "#333");
        doc.text(px(a), bottom + 16, format_alpha(a), 10, "middle");
    }
    double step = svg::nice_step(double(max_v));
    for (double t = 0; t <= double(max_v) + 1e-9; t += step) {
        doc.line(left - 4, py(t), left, py(t), "#333");
        doc.text(left - 6, py(t) + 4, std::to_string(static_cast<long long>(t)), 10, "end");
    }
    doc.text(W / 2, H - 12, "alpha", 12, "middle");
    std::vector<std::pair<double, double>> band, mean;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        band.emplace_back(px(alphas[i]), py(stats[i].hi));
        mean.emplace_back(px(alphas[i]), py(stats[i].mean));
    }
    for (std::size_t i = alphas.size(); i-- > 0;) band.emplace_back(px(alphas[i]), py(stats[i].lo));
    doc.polygon(band, svg::color(0), 0.25);
    doc.polyline(mean, svg::color(0));
    return doc.str();
}

}  // namespace netdissect
