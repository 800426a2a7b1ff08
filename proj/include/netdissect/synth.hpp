#pragma once
// Synthetic fixtures with known unit/concept alignment.
//
// Pixel-wise concepts are axis-aligned rectangles (one per label plane);
// whole-image concepts are one label per image. A planted unit reads 1 on
// its concept's mask plus N(0, sigma^2) everywhere; a noise unit reads
// N(0, noise_unit_sigma^2). With stride > 1 each activation cell samples
// the pixel at its anchor (offset stride/2).

#include "netdissect/concept_store.hpp"
#include "netdissect/dataset.hpp"
#include "netdissect/error.hpp"
#include "netdissect/quantile.hpp"
#include "netdissect/report.hpp"
#include "netdissect/scoring.hpp"
#include "netdissect/tensor_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace netdissect {

struct SynthSpec {
    std::size_t n_images = 100;
    std::size_t height = 32;
    std::size_t width = 32;
    std::array<std::size_t, kCategoryCount> concepts{0, 10, 0, 0, 0, 0};  // per category
    std::array<double, kCategoryCount> presence{1, 1, 1, 1, 1, 1};         // P(image carries category)
    std::size_t n_units = 16;
    std::map<std::size_t, std::string> planted;  // unit -> concept name
    double blob_min_frac = 0.02;
    double blob_max_frac = 0.20;
    std::size_t blobs_min = 1;
    std::size_t blobs_max = 3;
    double sigma = 0.0;
    double noise_unit_sigma = 1.0;
    std::size_t stride = 1;
    double theta = kDefaultQuantile;
    std::uint64_t seed = 1;

    // Name of the k-th concept of a category, as generated.
    static std::string concept_name(Category c, std::size_t k) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "_%02zu", k);
        return std::string(to_string(c)) + buf;
    }

    // Plants units 0..count-1 on the first `count` concepts, taking
    // categories in tie-break precedence order (objects first).
    void plant_first(std::size_t count) {
        planted.clear();
        std::size_t unit = 0;
        auto cats = kCategories;
        std::sort(cats.begin(), cats.end(), [](Category a, Category b) { return tie_rank(a) < tie_rank(b); });
        for (Category c : cats)
            for (std::size_t k = 0; k < concepts[category_index(c)] && unit < count; ++k)
                planted[unit++] = concept_name(c, k);
        if (unit < count) throw Error("plant_first: only " + std::to_string(unit) + " concepts available");
    }

    void validate() const {
        if (n_images == 0 || height == 0 || width == 0) throw Error("synth spec: image count and size must be > 0");
        if (!(blob_min_frac > 0 && blob_min_frac <= blob_max_frac && blob_max_frac <= 1))
            throw Error("synth spec: need 0 < blob_min_frac <= blob_max_frac <= 1");
        if (blobs_min > blobs_max || blobs_max > kMaxPlanes)
            throw Error("synth spec: need blobs_min <= blobs_max <= " + std::to_string(kMaxPlanes));
        if (sigma < 0 || noise_unit_sigma < 0) throw Error("synth spec: noise amplitudes must be >= 0");
        if (stride == 0) throw Error("synth spec: stride must be >= 1");
        for (double p : presence)
            if (!(p >= 0 && p <= 1)) throw Error("synth spec: presence probabilities must lie in [0, 1]");
        for (const auto& [unit, name] : planted) {
            if (unit >= n_units)
                throw Error("synth spec: planted unit " + std::to_string(unit) + " >= n_units " + std::to_string(n_units));
            bool found = false;
            for (Category c : kCategories)
                for (std::size_t k = 0; k < concepts[category_index(c)]; ++k) found |= concept_name(c, k) == name;
            if (!found) throw Error("synth spec: planted concept '" + name + "' is not generated");
        }
    }
};

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    nlohmann::json concepts = nlohmann::json::object(), presence = nlohmann::json::object();
    for (Category c : kCategories) {
        concepts[std::string(to_string(c))] = s.concepts[category_index(c)];
        presence[std::string(to_string(c))] = s.presence[category_index(c)];
    }
    nlohmann::json planted = nlohmann::json::array();
    for (const auto& [u, name] : s.planted) planted.push_back({{"unit", u}, {"concept", name}});
    return {{"n_images", s.n_images},         {"height", s.height},
            {"width", s.width},               {"concepts", concepts},
            {"presence", presence},           {"n_units", s.n_units},
            {"planted", planted},             {"blob_min_frac", s.blob_min_frac},
            {"blob_max_frac", s.blob_max_frac}, {"blobs_min", s.blobs_min},
            {"blobs_max", s.blobs_max},       {"sigma", s.sigma},
            {"noise_unit_sigma", s.noise_unit_sigma}, {"stride", s.stride},
            {"theta", s.theta},               {"seed", s.seed}};
}

// Missing keys keep their defaults. "plant_first": k plants units 0..k-1.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
        s.n_images = j.value("n_images", s.n_images);
        s.height = j.value("height", s.height);
        s.width = j.value("width", s.width);
        if (j.contains("concepts")) {
            s.concepts.fill(0);
            for (const auto& [k, v] : j.at("concepts").items()) {
                auto c = parse_category(k);
                if (!c) throw Error("synth spec: unknown category '" + k + "'");
                s.concepts[category_index(*c)] = v.get<std::size_t>();
            }
        }
        if (j.contains("presence"))
            for (const auto& [k, v] : j.at("presence").items()) {
                auto c = parse_category(k);
                if (!c) throw Error("synth spec: unknown category '" + k + "'");
                s.presence[category_index(*c)] = v.get<double>();
            }
        s.n_units = j.value("n_units", s.n_units);
        s.blob_min_frac = j.value("blob_min_frac", s.blob_min_frac);
        s.blob_max_frac = j.value("blob_max_frac", s.blob_max_frac);
        s.blobs_min = j.value("blobs_min", s.blobs_min);
        s.blobs_max = j.value("blobs_max", s.blobs_max);
        s.sigma = j.value("sigma", s.sigma);
        s.noise_unit_sigma = j.value("noise_unit_sigma", s.noise_unit_sigma);
        s.stride = j.value("stride", s.stride);
        s.theta = j.value("theta", s.theta);
        s.seed = j.value("seed", s.seed);
        if (j.contains("plant_first")) s.plant_first(j.at("plant_first").get<std::size_t>());
        if (j.contains("planted"))
            for (const auto& p : j.at("planted")) s.planted[p.at("unit").get<std::size_t>()] = p.at("concept").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("spec", std::string("synth spec: ") + ex.what());
    }
    s.validate();
    return s;
}

struct SynthFixture {
    SynthSpec spec;
    AnnotationSet dataset;
    ActivationVolume volume;
    DetectorReport ground_truth;
};

inline SynthFixture generate(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 gen(spec.seed);
    std::uniform_real_distribution<double> unit01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    ConceptIndex index;
    for (Category c : kCategories)
        for (std::size_t k = 0; k < spec.concepts[category_index(c)]; ++k) {
            if (index.concepts.size() >= 0xFFFF) throw Error("synth spec: too many concepts");
            index.concepts.push_back({static_cast<ConceptId>(index.concepts.size() + 1), SynthSpec::concept_name(c, k), c, 0});
        }

    const std::size_t H = spec.height, W = spec.width, px = H * W;
    std::vector<ImageRecord> records(spec.n_images);
    std::vector<std::set<ImageId>> carriers(index.size() + 1);
    for (std::size_t i = 0; i < spec.n_images; ++i) {
        auto& r = records[i];
        r.image_id = static_cast<ImageId>(i);
        r.width = W;
        r.height = H;
        for (Category cat : kCategories) {
            const auto ci = category_index(cat);
            const std::size_t k_count = spec.concepts[ci];
            if (k_count == 0) continue;
            if (unit01(gen) >= spec.presence[ci]) continue;
            const ConceptId first = *index.find(SynthSpec::concept_name(cat, 0), cat);
            if (is_whole_image(cat)) {
                auto id = static_cast<ConceptId>(first + std::uniform_int_distribution<std::size_t>(0, k_count - 1)(gen));
                r.whole_image_labels.push_back(id);
                carriers[id].insert(r.image_id);
                continue;
            }
            std::size_t blobs = std::uniform_int_distribution<std::size_t>(spec.blobs_min, spec.blobs_max)(gen);
            for (std::size_t b = 0; b < blobs; ++b) {
                auto id = static_cast<ConceptId>(first + std::uniform_int_distribution<std::size_t>(0, k_count - 1)(gen));
                double area = (spec.blob_min_frac + (spec.blob_max_frac - spec.blob_min_frac) * unit01(gen)) * double(px);
                double aspect = std::exp(std::log(0.5) + std::log(4.0) * unit01(gen));
                auto bh = std::clamp<std::size_t>(std::size_t(std::lround(std::sqrt(area * aspect))), 1, H);
                auto bw = std::clamp<std::size_t>(std::size_t(std::lround(area / double(bh))), 1, W);
                std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, H - bh)(gen);
                std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, W - bw)(gen);
                LabelPlane plane(px, 0);
                for (std::size_t y = y0; y < y0 + bh; ++y)
                    for (std::size_t x = x0; x < x0 + bw; ++x) plane[y * W + x] = id;
                r.planes[ci].push_back(std::move(plane));
                carriers[id].insert(r.image_id);
            }
        }
    }
    for (auto& c : index.concepts) c.sample_count = static_cast<std::uint32_t>(carriers[c.id].size());

    // Activation grid.
    const std::size_t s = spec.stride;
    const std::size_t off = s / 2;
    const std::size_t gh = s == 1 ? H : (H > off ? (H - off + s - 1) / s : 1);
    const std::size_t gw = s == 1 ? W : (W > off ? (W - off + s - 1) / s : 1);
    ActivationVolume vol;
    vol.geometry = s == 1 ? LayerGeometry::identity(spec.n_units, H, W)
                          : LayerGeometry{"synthetic", spec.n_units, gh, gw, double(off), double(off), double(s), double(s)};
    vol.n_images = spec.n_images;
    vol.image_ids = default_image_ids(spec.n_images);
    vol.data.assign(spec.n_images * spec.n_units * gh * gw, 0.0f);

    std::vector<ConceptId> unit_concept(spec.n_units, 0);
    for (const auto& [u, name] : spec.planted)
        for (Category c : kCategories)
            if (auto id = index.find(name, c)) unit_concept[u] = *id;

    // Feasibility: each planted concept must fill at least m activation cells.
    const std::uint64_t m = selection_rank(spec.theta, std::uint64_t(spec.n_images) * gh * gw);
    std::vector<std::uint64_t> cover(index.size() + 1, 0);

    Mask indicator;
    for (std::size_t i = 0; i < spec.n_images; ++i) {
        const auto& r = records[i];
        std::map<ConceptId, Mask> masks;
        for (ConceptId id : unit_concept)
            if (id != 0 && !masks.count(id)) masks[id] = concept_mask(r, index.at(id));
        for (std::size_t u = 0; u < spec.n_units; ++u) {
            float* out = vol.data.data() + (i * spec.n_units + u) * gh * gw;
            const ConceptId id = unit_concept[u];
            const double amp = id ? spec.sigma : spec.noise_unit_sigma;
            for (std::size_t y = 0; y < gh; ++y)
                for (std::size_t x = 0; x < gw; ++x) {
                    double v = 0.0;
                    if (id) {
                        std::size_t py = std::min(H - 1, off + y * s), pxl = std::min(W - 1, off + x * s);
                        v = masks[id](py, pxl) ? 1.0 : 0.0;
                    }
                    if (amp > 0) v += amp * normal(gen);
                    out[y * gw + x] = static_cast<float>(v);
                }
        }
        for (auto& [id, mask] : masks)
            for (std::size_t y = 0; y < gh; ++y)
                for (std::size_t x = 0; x < gw; ++x)
                    cover[id] += mask(std::min(H - 1, off + y * s), std::min(W - 1, off + x * s)) != 0;
    }
    for (const auto& [u, name] : spec.planted) {
        ConceptId id = unit_concept[u];
        if (cover[id] < m)
            throw Error("synth spec infeasible: planted concept '" + name + "' covers " + std::to_string(cover[id]) +
                        " of " + std::to_string(std::uint64_t(spec.n_images) * gh * gw) +
                        " activation cells, needs at least " + std::to_string(m) + " (theta = " +
                        std::to_string(spec.theta) + ")");
    }

    SynthFixture fx;
    fx.spec = spec;
    fx.ground_truth.theta = spec.theta;
    fx.ground_truth.tau = kDefaultIoUThreshold;
    fx.ground_truth.units = spec.n_units;
    std::set<ConceptId> unique;
    for (std::size_t u = 0; u < spec.n_units; ++u) {
        ConceptId id = unit_concept[u];
        if (!id) continue;
        const auto& c = index.at(id);
        fx.ground_truth.detectors.push_back({u, id, c.name, c.category, 1.0});
        ++fx.ground_truth.units_by_category[category_index(c.category)];
        if (unique.insert(id).second) ++fx.ground_truth.unique_by_category[category_index(c.category)];
    }
    fx.ground_truth.unique_detectors = unique.size();
    fx.dataset = AnnotationSet(std::move(index), std::move(records));
    fx.volume = std::move(vol);
    return fx;
}

// Layout: <dir>/dataset/{index.json,planes/}, <dir>/activations.ndav (+ sidecar),
// <dir>/ground_truth.json, <dir>/synth_spec.json.
inline void write_fixture(const SynthFixture& fx, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    fx.dataset.save(dir / "dataset");
    write_volume(fx.volume, (dir / "activations.ndav").string());
    {
        std::ofstream out(dir / "ground_truth.json");
        out << report_to_json(fx.ground_truth).dump(1) << '\n';
    }
    std::ofstream out(dir / "synth_spec.json");
    out << synth_spec_to_json(fx.spec).dump(1) << '\n';
    if (!out) throw Error("I/O error writing fixture in " + dir.string());
}

}  // namespace netdissect
