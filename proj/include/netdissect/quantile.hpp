#pragma once
// Per-unit top-quantile thresholds.
//
// For unit k with N observed activations (every spatial cell of every
// image) and level theta, T_k is the m-th largest activation with
// m = ceil(theta * N). Then count(a > T_k) < m and count(a >= T_k) >= m, so
// P(a > T_k) <= theta <= P(a >= T_k). Selection is exact: a bounded min-heap
// of the m largest values per unit.

#include "netdissect/error.hpp"
#include "netdissect/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace netdissect {

inline constexpr double kDefaultQuantile = 0.005;

struct ThresholdTable {
    double level = kDefaultQuantile;
    std::vector<float> thresholds;       // per unit
    std::vector<std::uint64_t> counts;   // activations observed per unit

    bool operator==(const ThresholdTable&) const = default;
};

// m = ceil(theta * N); products within 1e-9 relative of an integer snap to
// it so that e.g. 0.005 * 1000 gives exactly 5.
inline std::uint64_t selection_rank(double theta, std::uint64_t n) {
    if (!(theta > 0.0 && theta < 1.0)) throw Error("quantile level must lie in (0, 1), got " + std::to_string(theta));
    double x = theta * static_cast<double>(n);
    double r = std::round(x);
    double m = std::abs(x - r) <= 1e-9 * std::max(1.0, x) ? r : std::ceil(x);
    if (m < 1.0) throw Error("cannot select among zero activations");
    return static_cast<std::uint64_t>(m);
}

// The streaming path additionally requires theta * N >= 1.
inline void require_selectable(double theta, std::uint64_t n) {
    if (theta * static_cast<double>(n) < 1.0 - 1e-9)
        throw Error("quantile level " + std::to_string(theta) + " is too small for " + std::to_string(n) +
                    " activations (theta * N must be >= 1)");
}

// -0 and +0 compare equal; fold them so the selected bit pattern does not
// depend on visitation order.
inline float canonical_zero(float v) { return v == 0.0f ? 0.0f : v; }

namespace detail {

// Min-heap holding the m largest values seen.
class TopM {
public:
    explicit TopM(std::size_t m = 0) : m_(m) { heap_.reserve(m); }

    void push(float v) {
        if (heap_.size() < m_) {
            heap_.push_back(v);
            std::push_heap(heap_.begin(), heap_.end(), std::greater<>{});
        } else if (v > heap_.front()) {
            std::pop_heap(heap_.begin(), heap_.end(), std::greater<>{});
            heap_.back() = v;
            std::push_heap(heap_.begin(), heap_.end(), std::greater<>{});
        }
    }

    void merge(const TopM& other) {
        for (float v : other.heap_) push(v);
    }

    std::size_t size() const { return heap_.size(); }
    float min() const { return heap_.front(); }

private:
    std::size_t m_;
    std::vector<float> heap_;
};

}  // namespace detail

// Streams every image slice of `source` once. Source protocol: images(),
// layer() (a LayerGeometry), cursor() whose read(i, scratch) yields the
// [unit][row][col] slice of image i.
template <class Source>
ThresholdTable compute_thresholds(const Source& source, double theta, std::size_t workers = 1) {
    const auto& g = source.layer();
    const std::size_t n_images = source.images();
    if (n_images == 0) throw Error("cannot compute thresholds over an empty activation stream");
    const std::size_t units = g.units, cells = g.h * g.w;
    const std::uint64_t n = std::uint64_t(n_images) * cells;
    const std::uint64_t m = selection_rank(theta, n);
    require_selectable(theta, n);

    workers = effective_workers(workers, n_images);
    std::vector<std::vector<detail::TopM>> partial(workers);
    run_partitioned(n_images, workers, [&](std::size_t w, std::size_t b, std::size_t e) {
        auto& heaps = partial[w];
        heaps.assign(units, detail::TopM(m));
        auto cur = source.cursor();
        std::vector<float> scratch;
        for (std::size_t i = b; i < e; ++i) {
            auto slice = cur.read(i, scratch);
            for (std::size_t u = 0; u < units; ++u) {
                auto& heap = heaps[u];
                const float* p = slice.data() + u * cells;
                for (std::size_t c = 0; c < cells; ++c) heap.push(canonical_zero(p[c]));
            }
        }
    });

    ThresholdTable table;
    table.level = theta;
    table.thresholds.resize(units);
    table.counts.assign(units, n);
    for (std::size_t u = 0; u < units; ++u) {
        detail::TopM merged(m);
        for (const auto& heaps : partial) merged.merge(heaps[u]);
        if (merged.size() != m) throw InternalError("top-m heap underfilled");
        table.thresholds[u] = merged.min();
    }
    return table;
}

// Full-sort reference: every unit's values sorted descending, T_k = entry m-1.
template <class Volume>
ThresholdTable exact_thresholds_oracle(const Volume& volume, double theta) {
    const auto& g = volume.geometry;
    if (volume.n_images == 0) throw Error("cannot compute thresholds over an empty volume");
    const std::size_t cells = g.h * g.w;
    const std::uint64_t n = std::uint64_t(volume.n_images) * cells;
    const std::uint64_t m = selection_rank(theta, n);
    ThresholdTable table;
    table.level = theta;
    table.thresholds.resize(g.units);
    table.counts.assign(g.units, n);
    std::vector<float> all;
    for (std::size_t u = 0; u < g.units; ++u) {
        all.clear();
        for (std::size_t i = 0; i < volume.n_images; ++i)
            for (float v : volume.unit_map(i, u)) all.push_back(canonical_zero(v));
        std::sort(all.begin(), all.end(), std::greater<>{});
        table.thresholds[u] = all[m - 1];
    }
    return table;
}

inline void write_thresholds_csv(const ThresholdTable& t, std::ostream& out) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "# theta=%.17g\n", t.level);
    out << buf << "unit,threshold,count\n";
    for (std::size_t u = 0; u < t.thresholds.size(); ++u) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%llu\n", u, static_cast<double>(t.thresholds[u]),
                      static_cast<unsigned long long>(t.counts[u]));
        out << buf;
    }
}

}  // namespace netdissect
