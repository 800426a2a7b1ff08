#pragma once
// Dataset-wide unit/concept IoU scoring and detector assignment.
//
// For unit k and concept c of category cat:
//
//   IoU(k, c) = sum_x |M_k(x) & L_c(x)| / sum_x |M_k(x) | L_c(x)|
//
// where x ranges over the images that carry at least one label of cat. On
// such an image an absent concept still grows the union by |M_k(x)|.
// Counts are exact 64-bit integers, so the fold over images is
// order-independent.

#include "netdissect/concept_store.hpp"
#include "netdissect/dataset.hpp"
#include "netdissect/error.hpp"
#include "netdissect/parallel.hpp"
#include "netdissect/quantile.hpp"
#include "netdissect/tensor_io.hpp"
#include "netdissect/upsample.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace netdissect {

inline constexpr double kDefaultIoUThreshold = 0.04;

struct IoUAccumulator {
    std::size_t units = 0;
    std::size_t concepts = 0;
    std::vector<std::uint64_t> intersection;  // [unit][concept index], concept index = id - 1
    std::vector<std::uint64_t> union_;

    IoUAccumulator() = default;
    IoUAccumulator(std::size_t u, std::size_t c) : units(u), concepts(c), intersection(u * c), union_(u * c) {}

    std::uint64_t inter_at(std::size_t u, ConceptId id) const { return intersection[u * concepts + id - 1]; }
    std::uint64_t union_at(std::size_t u, ConceptId id) const { return union_[u * concepts + id - 1]; }

    IoUAccumulator& operator+=(const IoUAccumulator& o) {
        if (o.units != units || o.concepts != concepts) throw InternalError("accumulator shape mismatch");
        for (std::size_t i = 0; i < intersection.size(); ++i) {
            intersection[i] += o.intersection[i];
            union_[i] += o.union_[i];
        }
        return *this;
    }

    bool operator==(const IoUAccumulator&) const = default;
};

struct ScoreMatrix {
    std::size_t units = 0;
    std::size_t concepts = 0;
    std::vector<double> iou;  // [unit][concept index]
    double theta = kDefaultQuantile;
    double tau = kDefaultIoUThreshold;

    double at(std::size_t u, ConceptId id) const { return iou[u * concepts + id - 1]; }

    bool operator==(const ScoreMatrix&) const = default;
};

struct UnitAssignment {
    std::size_t unit = 0;
    ConceptId concept_id = 0;
    std::string concept_name;
    Category category = Category::object;
    double iou = 0.0;

    bool operator==(const UnitAssignment&) const = default;
};

struct DetectorReport {
    double theta = kDefaultQuantile;
    double tau = kDefaultIoUThreshold;
    std::size_t units = 0;
    std::vector<UnitAssignment> detectors;  // ascending unit, detector units only
    std::size_t unique_detectors = 0;
    std::array<std::size_t, kCategoryCount> unique_by_category{};  // distinct concepts per category
    std::array<std::size_t, kCategoryCount> units_by_category{};   // detector units per category

    std::size_t detector_units() const { return detectors.size(); }

    bool operator==(const DetectorReport&) const = default;
};

// Concept ids grouped by category, computed once per index.
struct ConceptGroups {
    std::array<std::vector<ConceptId>, kCategoryCount> ids;

    explicit ConceptGroups(const ConceptIndex& index) {
        for (const auto& c : index.concepts) ids[category_index(c.category)].push_back(c.id);
    }
};

namespace detail {

// Per-image scratch reused across images by one worker.
struct ImageScratch {
    std::vector<std::uint64_t> area;         // |L_c| on this image, by concept index
    std::vector<std::uint64_t> inter;        // |M & L_c| for the current unit
    std::vector<std::uint32_t> touched;
};

}  // namespace detail

// Folds one image into the accumulator. masks[k] is M_k on this image.
inline void accumulate_image(std::span<const Mask> masks, const ImageRecord& record, const ConceptIndex& index,
                             const ConceptGroups& groups, IoUAccumulator& acc, detail::ImageScratch& scratch) {
    if (masks.size() != acc.units)
        throw Error("image " + std::to_string(record.image_id) + ": " + std::to_string(masks.size()) +
                    " unit masks for " + std::to_string(acc.units) + " units");
    for (const auto& m : masks)
        if (m.height != record.height || m.width != record.width)
            throw Error("image " + std::to_string(record.image_id) + ": mask is " + std::to_string(m.height) + "x" +
                        std::to_string(m.width) + ", annotation is " + std::to_string(record.height) + "x" +
                        std::to_string(record.width));

    const std::size_t nc = index.size();
    const std::size_t px = record.pixels();
    scratch.area.assign(nc, 0);
    scratch.inter.assign(nc, 0);

    std::vector<Category> pixel_cats, whole_cats;
    for (Category cat : kCategories) {
        if (!record.present(cat)) continue;
        (is_whole_image(cat) ? whole_cats : pixel_cats).push_back(cat);
    }
    if (pixel_cats.empty() && whole_cats.empty()) return;

    // |L_c| per concept; a pixel carrying the same id in two planes counts once.
    for (Category cat : pixel_cats) {
        const auto& planes = record.planes_of(cat);
        for (std::size_t p = 0; p < px; ++p) {
            for (std::size_t k = 0; k < planes.size(); ++k) {
                ConceptId id = planes[k][p];
                if (id == 0) continue;
                bool dup = false;
                for (std::size_t j = 0; j < k; ++j) dup |= planes[j][p] == id;
                if (!dup) ++scratch.area[id - 1];
            }
        }
    }
    for (ConceptId id : record.whole_image_labels) scratch.area[id - 1] = px;

    for (std::size_t u = 0; u < acc.units; ++u) {
        const auto& m = masks[u].data;
        std::uint64_t msize = 0;
        scratch.touched.clear();
        for (Category cat : pixel_cats) {
            const auto& planes = record.planes_of(cat);
            for (std::size_t p = 0; p < px; ++p) {
                if (!m[p]) continue;
                for (std::size_t k = 0; k < planes.size(); ++k) {
                    ConceptId id = planes[k][p];
                    if (id == 0) continue;
                    bool dup = false;
                    for (std::size_t j = 0; j < k; ++j) dup |= planes[j][p] == id;
                    if (dup) continue;
                    if (scratch.inter[id - 1]++ == 0) scratch.touched.push_back(id - 1);
                }
            }
        }
        for (auto v : m) msize += v != 0;
        for (ConceptId id : record.whole_image_labels) {
            if (scratch.inter[id - 1] == 0 && msize > 0) scratch.touched.push_back(id - 1);
            scratch.inter[id - 1] = msize;
        }

        std::uint64_t* inter_row = acc.intersection.data() + u * nc;
        std::uint64_t* union_row = acc.union_.data() + u * nc;
        for (const auto* cats : {&pixel_cats, &whole_cats})
            for (Category cat : *cats)
                for (ConceptId id : groups.ids[category_index(cat)]) {
                    const std::size_t c = id - 1;
                    const std::uint64_t in = scratch.inter[c];
                    inter_row[c] += in;
                    union_row[c] += msize + scratch.area[c] - in;
                }
        for (auto c : scratch.touched) scratch.inter[c] = 0;
    }
}

inline void accumulate_image(std::span<const Mask> masks, const ImageRecord& record, const ConceptIndex& index,
                             IoUAccumulator& acc) {
    ConceptGroups groups(index);
    detail::ImageScratch scratch;
    accumulate_image(masks, record, index, groups, acc, scratch);
}

inline ScoreMatrix finalize_scores(const IoUAccumulator& acc, double theta = kDefaultQuantile,
                                   double tau = kDefaultIoUThreshold) {
    ScoreMatrix s;
    s.units = acc.units;
    s.concepts = acc.concepts;
    s.theta = theta;
    s.tau = tau;
    s.iou.resize(acc.intersection.size());
    for (std::size_t i = 0; i < s.iou.size(); ++i) {
        if (acc.intersection[i] > acc.union_[i]) throw InternalError("intersection exceeds union");
        s.iou[i] = acc.union_[i] == 0 ? 0.0 : double(acc.intersection[i]) / double(acc.union_[i]);
    }
    return s;
}

// Top concept per unit; emitted only when its IoU exceeds tau. Exact ties go
// to category precedence (object, scene, part, material, texture, color),
// then the lexicographically smaller name.
inline DetectorReport assign_detectors(const ScoreMatrix& scores, const ConceptIndex& index, double tau) {
    if (!(tau >= 0.0 && tau < 1.0)) throw Error("IoU threshold must lie in [0, 1), got " + std::to_string(tau));
    if (scores.concepts != index.size()) throw Error("score matrix does not match concept index");
    DetectorReport r;
    r.theta = scores.theta;
    r.tau = tau;
    r.units = scores.units;
    auto before = [&](ConceptId a, ConceptId b) {
        const auto &ca = index.at(a), &cb = index.at(b);
        return std::tuple(tie_rank(ca.category), std::string_view(ca.name)) <
               std::tuple(tie_rank(cb.category), std::string_view(cb.name));
    };
    std::set<ConceptId> unique;
    for (std::size_t u = 0; u < scores.units; ++u) {
        ConceptId best = 0;
        double best_iou = -1.0;
        for (ConceptId id = 1; id <= scores.concepts; ++id) {
            double v = scores.at(u, id);
            if (v > best_iou || (v == best_iou && before(id, best))) best = id, best_iou = v;
        }
        if (best == 0 || !(best_iou > tau)) continue;
        const auto& c = index.at(best);
        r.detectors.push_back({u, best, c.name, c.category, best_iou});
        ++r.units_by_category[category_index(c.category)];
        if (unique.insert(best).second) ++r.unique_by_category[category_index(c.category)];
    }
    r.unique_detectors = unique.size();
    return r;
}

struct DissectResult {
    ThresholdTable thresholds;
    ScoreMatrix scores;
    DetectorReport report;
    std::vector<std::string> warnings;
};

// Maps each activation slice to its dataset entry by image id; throws with
// the symmetric difference when the two id sets differ.
inline std::vector<std::size_t> align_images(const std::vector<ImageId>& volume_ids, const AnnotationSet& dataset) {
    std::map<ImageId, std::size_t> by_id;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_id[dataset.entry(i).image_id] = i;
    std::set<ImageId> vol(volume_ids.begin(), volume_ids.end());
    if (vol.size() != volume_ids.size()) throw Error("activation volume lists an image id twice");
    std::vector<ImageId> only_vol, only_data;
    for (ImageId id : vol)
        if (!by_id.count(id)) only_vol.push_back(id);
    for (const auto& [id, unused] : by_id)
        if (!vol.count(id)) only_data.push_back(id);
    if (!only_vol.empty() || !only_data.empty()) {
        auto list = [](const std::vector<ImageId>& ids) {
            std::string s;
            for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? "," : "") + std::to_string(ids[i]);
            if (ids.size() > 20) s += ",...";
            return "[" + s + "]";
        };
        throw Error("activation and dataset image sets differ: only in activations " + list(only_vol) +
                    ", only in dataset " + list(only_data));
    }
    std::vector<std::size_t> out;
    out.reserve(volume_ids.size());
    for (ImageId id : volume_ids) out.push_back(by_id[id]);
    return out;
}

// Pass 2 only: scores a source against fixed thresholds.
template <class Source>
IoUAccumulator score_pass(const Source& source, const AnnotationSet& dataset, const ThresholdTable& thresholds,
                          std::size_t workers = 1) {
    const auto& g = source.layer();
    const auto& index = dataset.index();
    const auto order = align_images(source.ids(), dataset);
    const std::size_t n = source.images();
    if (thresholds.thresholds.size() != g.units) throw Error("threshold table does not match unit count");
    const ConceptGroups groups(index);

    workers = effective_workers(workers, n);
    std::vector<IoUAccumulator> partial(workers);
    run_partitioned(n, workers, [&](std::size_t w, std::size_t b, std::size_t e) {
        IoUAccumulator acc(g.units, index.size());
        auto cur = source.cursor();
        std::vector<float> slice_buf, scaled;
        std::vector<Mask> masks(g.units);
        std::optional<Upsampler> up;
        detail::ImageScratch scratch;
        const std::size_t cells = g.h * g.w;
        for (std::size_t i = b; i < e; ++i) {
            auto slice = cur.read(i, slice_buf);
            auto rec = dataset.record(order[i]);
            if (!up || up->out_h() != rec->height || up->out_w() != rec->width) up.emplace(g, rec->height, rec->width);
            for (std::size_t u = 0; u < g.units; ++u)
                up->mask(slice.subspan(u * cells, cells), thresholds.thresholds[u], scaled, masks[u]);
            accumulate_image(masks, *rec, index, groups, acc, scratch);
        }
        partial[w] = std::move(acc);
    });
    IoUAccumulator total(g.units, index.size());
    for (const auto& p : partial) total += p;
    return total;
}

// Two passes over the corpus: thresholds, then masks and IoU.
template <class Source>
DissectResult dissect_layer(const Source& source, const AnnotationSet& dataset, double theta = kDefaultQuantile,
                            double tau = kDefaultIoUThreshold, std::size_t workers = 1) {
    const auto& g = source.layer();
    (void)align_images(source.ids(), dataset);
    if (!(tau >= 0.0 && tau < 1.0)) throw Error("IoU threshold must lie in [0, 1), got " + std::to_string(tau));
    DissectResult out;
    std::set<std::pair<std::size_t, std::size_t>> sizes;
    for (std::size_t i = 0; i < dataset.size(); ++i) sizes.emplace(dataset.entry(i).height, dataset.entry(i).width);
    for (const auto& [h, w] : sizes)
        for (auto& msg : g.warnings(h, w)) out.warnings.push_back(std::move(msg));

    if (g.units == 0) {
        out.thresholds.level = theta;
        IoUAccumulator empty(0, dataset.index().size());
        out.scores = finalize_scores(empty, theta, tau);
        out.report = assign_detectors(out.scores, dataset.index(), tau);
        return out;
    }
    out.thresholds = compute_thresholds(source, theta, workers);
    auto acc = score_pass(source, dataset, out.thresholds, workers);
    out.scores = finalize_scores(acc, theta, tau);
    out.report = assign_detectors(out.scores, dataset.index(), tau);
    return out;
}

// "NDSC", u32 version=1, u32 units, u32 concepts, u32 reserved=0, then
// float64 LE IoU values, [unit][concept index].
inline void write_scores_bin(const ScoreMatrix& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    unsigned char hdr[20] = {'N', 'D', 'S', 'C'};
    detail::put_le32(hdr + 4, 1);
    detail::put_le32(hdr + 8, static_cast<std::uint32_t>(s.units));
    detail::put_le32(hdr + 12, static_cast<std::uint32_t>(s.concepts));
    detail::put_le32(hdr + 16, 0);
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    out.write(reinterpret_cast<const char*>(s.iou.data()), static_cast<std::streamsize>(s.iou.size() * sizeof(double)));
    if (!out) throw Error("I/O error writing " + path);
}

}  // namespace netdissect
