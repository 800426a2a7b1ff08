#pragma once
// Concept catalog, label unification, per-image annotation records and
// color naming.
//
// Concept ids are dense, start at 1 and fit in the 16-bit label planes;
// id 0 always means "unlabeled".

#include "netdissect/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace netdissect {

using ConceptId = std::uint16_t;
using ImageId = std::uint32_t;

enum class Category : std::uint8_t { scene, object, part, material, texture, color };

inline constexpr std::size_t kCategoryCount = 6;

inline constexpr std::array<Category, kCategoryCount> kCategories = {
    Category::scene, Category::object, Category::part,
    Category::material, Category::texture, Category::color};

inline constexpr std::size_t category_index(Category c) { return static_cast<std::size_t>(c); }

inline constexpr std::string_view to_string(Category c) {
    switch (c) {
        case Category::scene: return "scene";
        case Category::object: return "object";
        case Category::part: return "part";
        case Category::material: return "material";
        case Category::texture: return "texture";
        case Category::color: return "color";
    }
    return "?";
}

inline std::optional<Category> parse_category(std::string_view s) {
    for (Category c : kCategories)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

// Scene and texture label whole images; the rest label pixels.
inline constexpr bool is_whole_image(Category c) {
    return c == Category::scene || c == Category::texture;
}

// Precedence used to break exact IoU ties between a unit's top concepts.
inline constexpr int tie_rank(Category c) {
    switch (c) {
        case Category::object: return 0;
        case Category::scene: return 1;
        case Category::part: return 2;
        case Category::material: return 3;
        case Category::texture: return 4;
        case Category::color: return 5;
    }
    return 6;
}

struct Concept {
    ConceptId id = 0;
    std::string name;
    Category category = Category::object;
    std::uint32_t sample_count = 0;

    bool operator==(const Concept&) const = default;
};

struct ConceptIndex {
    std::vector<Concept> concepts;  // concepts[i].id == i + 1
    std::map<std::string, std::vector<ConceptId>> synonym_map;  // raw label -> ids
    std::set<std::string> blacklist;

    std::size_t size() const { return concepts.size(); }

    const Concept& at(ConceptId id) const {
        if (id == 0 || id > concepts.size())
            throw Error("unknown concept id " + std::to_string(id));
        return concepts[id - 1];
    }

    bool contains(ConceptId id) const { return id != 0 && id <= concepts.size(); }

    std::optional<ConceptId> find(std::string_view name, Category cat) const {
        for (const auto& c : concepts)
            if (c.category == cat && c.name == name) return c.id;
        return std::nullopt;
    }

    std::vector<ConceptId> of_category(Category cat) const {
        std::vector<ConceptId> out;
        for (const auto& c : concepts)
            if (c.category == cat) out.push_back(c.id);
        return out;
    }

    // Ids must be dense and every name/category pair unique.
    void validate() const {
        std::set<std::pair<Category, std::string>> seen;
        for (std::size_t i = 0; i < concepts.size(); ++i) {
            const auto& c = concepts[i];
            if (c.id != i + 1)
                throw Error("concept ids must be dense from 1; found id " +
                            std::to_string(c.id) + " at position " + std::to_string(i));
            if (c.name.empty()) throw Error("concept " + std::to_string(c.id) + " has empty name");
            if (!seen.emplace(c.category, c.name).second)
                throw Error("duplicate concept '" + c.name + "' in category " +
                            std::string(to_string(c.category)));
        }
        for (const auto& [raw, ids] : synonym_map)
            for (ConceptId id : ids)
                if (!contains(id))
                    throw Error("synonym '" + raw + "' targets unknown concept " + std::to_string(id));
    }
};

// ---------------------------------------------------------------------------
// Label unification
// ---------------------------------------------------------------------------

struct RawLabel {
    std::string raw_name;
    std::string source_tag;
    Category category = Category::object;
    std::vector<ImageId> image_ids;
};

using SynonymTable = std::map<std::string, std::string>;

inline const std::vector<std::string>& default_positional_qualifiers() {
    static const std::vector<std::string> words = {
        "left", "top", "right", "bottom", "front", "back", "upper", "lower"};
    return words;
}

// Generic words that must never link two labels together.
inline const std::vector<std::string>& default_blacklist() {
    static const std::vector<std::string> words = {
        "machine", "object", "thing", "item", "stuff", "device", "equipment",
        "structure", "material", "surface", "covering", "unit", "article",
        "part", "piece", "element", "body", "whole", "entity", "artifact"};
    return words;
}

namespace detail {

inline std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string join_words(const std::vector<std::string>& w, std::size_t b, std::size_t e) {
    std::string out;
    for (std::size_t i = b; i < e; ++i) {
        if (i > b) out.push_back(' ');
        out += w[i];
    }
    return out;
}

inline std::string normalize_name(std::string_view s) {
    auto w = split_words(s);
    return join_words(w, 0, w.size());
}

}  // namespace detail

// Lowercases, collapses whitespace and drops positional qualifier words.
// A name made only of qualifiers is returned normalized but unstripped.
inline std::string strip_positional(std::string_view raw,
                                    const std::vector<std::string>& qualifiers =
                                        default_positional_qualifiers()) {
    auto words = detail::split_words(raw);
    std::vector<std::string> kept;
    for (auto& w : words)
        if (std::find(qualifiers.begin(), qualifiers.end(), w) == qualifiers.end())
            kept.push_back(w);
    if (kept.empty()) return detail::join_words(words, 0, words.size());
    return detail::join_words(kept, 0, kept.size());
}

struct UnifyResult {
    ConceptIndex index;
    std::vector<std::string> diagnostics;
};

// Merges raw labels from several sources into one concept catalog.
//
// Synonym links are followed transitively; a link whose source or target is
// blacklisted is not followed, so the label keeps the name it had reached.
// Part labels written "<object> <part>" (Pascal-Part style) also contribute
// to the object concept when the longest leading word run names an object
// label present in the sources.
inline UnifyResult unify_labels(const std::vector<RawLabel>& sources,
                                const SynonymTable& synonyms,
                                const std::set<std::string>& blacklist,
                                std::uint32_t min_samples,
                                const std::vector<std::string>& qualifiers =
                                    default_positional_qualifiers()) {
    if (min_samples < 1) throw Error("min_samples must be >= 1");

    SynonymTable table;
    for (const auto& [from, to] : synonyms) {
        auto f = detail::normalize_name(from), t = detail::normalize_name(to);
        if (f.empty() || t.empty()) throw Error("synonym table contains an empty entry");
        table[f] = t;
    }
    std::set<std::string> black;
    for (const auto& b : blacklist) black.insert(detail::normalize_name(b));

    for (const auto& [start, unused] : table) {
        std::vector<std::string> path{start};
        std::string cur = start;
        for (auto it = table.find(cur); it != table.end(); it = table.find(cur)) {
            cur = it->second;
            path.push_back(cur);
            if (std::find(path.begin(), path.end() - 1, cur) != path.end() - 1) {
                std::string chain;
                for (std::size_t i = 0; i < path.size(); ++i)
                    chain += (i ? " -> " : "") + path[i];
                throw Error("cyclic synonym table: " + chain);
            }
        }
    }

    auto resolve = [&](const std::string& name) {
        std::string cur = name;
        for (auto it = table.find(cur); it != table.end(); it = table.find(cur)) {
            if (black.count(cur) || black.count(it->second)) break;
            cur = it->second;
        }
        return cur;
    };

    std::set<std::tuple<std::string, std::string, Category>> seen_raw;
    for (const auto& r : sources) {
        if (detail::normalize_name(r.raw_name).empty()) throw Error("raw label with empty name");
        if (!seen_raw.emplace(r.raw_name, r.source_tag, r.category).second)
            throw Error("duplicate raw label '" + r.raw_name + "' (" +
                        std::string(to_string(r.category)) + ") from source '" + r.source_tag + "'");
    }

    std::set<std::string> object_names;
    for (const auto& r : sources)
        if (r.category == Category::object)
            object_names.insert(resolve(strip_positional(r.raw_name, qualifiers)));

    using Key = std::pair<Category, std::string>;
    std::map<Key, std::set<ImageId>> images;
    std::map<std::string, std::set<Key>> raw_targets;

    for (const auto& r : sources) {
        auto stripped = strip_positional(r.raw_name, qualifiers);
        std::vector<Key> keys;
        if (r.category == Category::part) {
            auto words = detail::split_words(stripped);
            std::size_t split = 0;
            for (std::size_t k = words.size() - 1; k >= 1; --k) {
                auto prefix = detail::join_words(words, 0, k);
                if (object_names.count(resolve(prefix))) {
                    split = k;
                    break;
                }
            }
            if (split > 0) {
                keys.emplace_back(Category::object, resolve(detail::join_words(words, 0, split)));
                keys.emplace_back(Category::part,
                                  resolve(detail::join_words(words, split, words.size())));
            } else {
                keys.emplace_back(Category::part, resolve(stripped));
            }
        } else {
            keys.emplace_back(r.category, resolve(stripped));
        }
        for (const auto& k : keys) {
            images[k].insert(r.image_ids.begin(), r.image_ids.end());
            raw_targets[r.raw_name].insert(k);
        }
    }

    UnifyResult result;
    std::map<std::string, std::set<Category>> categories_of;
    for (const auto& [key, imgs] : images) categories_of[key.second].insert(key.first);
    for (const auto& [name, cats] : categories_of) {
        if (cats.size() < 2) continue;
        std::string list;
        for (Category c : cats) list += (list.empty() ? "" : ", ") + std::string(to_string(c));
        result.diagnostics.push_back("name '" + name + "' appears in several categories (" + list +
                                     "); kept as distinct concepts");
    }

    // std::map iteration is already (category, name) order.
    std::map<Key, ConceptId> ids;
    for (const auto& [key, imgs] : images) {
        if (imgs.size() < min_samples) {
            result.diagnostics.push_back("dropped " + std::string(to_string(key.first)) + " '" +
                                         key.second + "': " + std::to_string(imgs.size()) +
                                         " image(s) < " + std::to_string(min_samples));
            continue;
        }
        if (result.index.concepts.size() >= 0xFFFF) throw Error("more than 65535 concepts");
        auto id = static_cast<ConceptId>(result.index.concepts.size() + 1);
        result.index.concepts.push_back(
            {id, key.second, key.first, static_cast<std::uint32_t>(imgs.size())});
        ids[key] = id;
    }
    for (const auto& [raw, keys] : raw_targets)
        for (const auto& k : keys)
            if (auto it = ids.find(k); it != ids.end()) result.index.synonym_map[raw].push_back(it->second);
    result.index.blacklist = std::move(black);
    return result;
}

// "raw<TAB>target" per line; blank lines and lines starting with '#' skipped.
inline SynonymTable parse_synonym_table(std::istream& in) {
    SynonymTable out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error("synonym table line " + std::to_string(lineno) + ": expected raw<TAB>target");
        out[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return out;
}

inline std::set<std::string> parse_blacklist(std::istream& in) {
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto w = detail::normalize_name(line);
        if (w.empty() || w[0] == '#') continue;
        out.insert(w);
    }
    return out;
}

inline SynonymTable load_synonym_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open synonym table " + path);
    return parse_synonym_table(in);
}

inline std::set<std::string> load_blacklist(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open blacklist " + path);
    return parse_blacklist(in);
}

// ---------------------------------------------------------------------------
// Rasters and image records
// ---------------------------------------------------------------------------

template <class T>
struct Raster {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> data;  // row-major

    Raster() = default;
    Raster(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), data(h * w, fill) {}

    T& operator()(std::size_t y, std::size_t x) { return data[y * width + x]; }
    const T& operator()(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    std::size_t size() const { return data.size(); }

    bool operator==(const Raster&) const = default;
};

using Mask = Raster<std::uint8_t>;
using LabelPlane = std::vector<ConceptId>;

inline std::uint64_t count_true(const Mask& m) {
    std::uint64_t n = 0;
    for (auto v : m.data) n += v != 0;
    return n;
}

// Up to this many overlapping label planes per pixel-wise category.
inline constexpr std::size_t kMaxPlanes = 4;

struct ImageRecord {
    ImageId image_id = 0;
    std::size_t width = 0;
    std::size_t height = 0;
    std::array<bool, kCategoryCount> category_present{};
    std::array<std::vector<LabelPlane>, kCategoryCount> planes;  // pixel-wise categories only
    std::vector<ConceptId> whole_image_labels;

    std::size_t pixels() const { return width * height; }

    const std::vector<LabelPlane>& planes_of(Category c) const { return planes[category_index(c)]; }
    bool present(Category c) const { return category_present[category_index(c)]; }

    // Checks plane shapes and ids against the index, then derives
    // category_present from the labels actually carried.
    void finalize(const ConceptIndex& index) {
        category_present.fill(false);
        for (Category cat : kCategories) {
            const auto& ps = planes[category_index(cat)];
            if (is_whole_image(cat) && !ps.empty())
                throw Error("image " + std::to_string(image_id) + ": whole-image category " +
                            std::string(to_string(cat)) + " cannot carry label planes");
            if (ps.size() > kMaxPlanes)
                throw Error("image " + std::to_string(image_id) + ": " + std::to_string(ps.size()) +
                            " planes for " + std::string(to_string(cat)) + " exceeds limit of " +
                            std::to_string(kMaxPlanes));
            for (const auto& p : ps) {
                if (p.size() != pixels())
                    throw Error("image " + std::to_string(image_id) + ": " +
                                std::string(to_string(cat)) + " plane has " +
                                std::to_string(p.size()) + " entries, expected " +
                                std::to_string(pixels()));
                for (ConceptId id : p) {
                    if (id == 0) continue;
                    if (!index.contains(id) || index.at(id).category != cat)
                        throw Error("image " + std::to_string(image_id) + ": label id " +
                                    std::to_string(id) + " is not a " +
                                    std::string(to_string(cat)) + " concept");
                    category_present[category_index(cat)] = true;
                }
            }
        }
        for (ConceptId id : whole_image_labels) {
            if (!index.contains(id))
                throw Error("image " + std::to_string(image_id) + ": unknown whole-image label " +
                            std::to_string(id));
            Category cat = index.at(id).category;
            if (!is_whole_image(cat))
                throw Error("image " + std::to_string(image_id) + ": whole-image label " +
                            std::to_string(id) + " belongs to pixel-wise category " +
                            std::string(to_string(cat)));
            category_present[category_index(cat)] = true;
        }
    }
};

// Ground-truth mask L_c of one concept on one image.
inline Mask concept_mask(const ImageRecord& record, const Concept& c) {
    Mask m(record.height, record.width, 0);
    if (is_whole_image(c.category)) {
        if (std::find(record.whole_image_labels.begin(), record.whole_image_labels.end(), c.id) !=
            record.whole_image_labels.end())
            std::fill(m.data.begin(), m.data.end(), std::uint8_t{1});
        return m;
    }
    for (const auto& plane : record.planes_of(c.category))
        for (std::size_t i = 0; i < plane.size() && i < m.size(); ++i)
            if (plane[i] == c.id) m.data[i] = 1;
    return m;
}

// ---------------------------------------------------------------------------
// Color naming
// ---------------------------------------------------------------------------

inline constexpr std::size_t kColorCount = 11;

inline constexpr std::array<std::string_view, kColorCount> kColorNames = {
    "black", "blue", "brown", "green", "grey", "orange",
    "pink", "purple", "red", "white", "yellow"};

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

using RgbImage = Raster<Rgb>;

// Total map from 8-bit RGB to a color-name index in [0, 11). Each channel is
// quantized by dropping its (8 - bits) low bits.
class ColorLUT {
public:
    ColorLUT() = default;

    ColorLUT(unsigned bits, std::vector<std::uint8_t> table) : bits_(bits), table_(std::move(table)) {
        if (bits_ < 1 || bits_ > 8) throw Error("color LUT bits must be in [1, 8]");
        if (table_.size() != (std::size_t{1} << (3 * bits_)))
            throw Error("color LUT with " + std::to_string(bits_) + " bits needs " +
                        std::to_string(std::size_t{1} << (3 * bits_)) + " entries, found " +
                        std::to_string(table_.size()));
        for (auto v : table_)
            if (v >= kColorCount) throw Error("color LUT entry " + std::to_string(v) + " out of range");
    }

    unsigned bits() const { return bits_; }
    const std::vector<std::uint8_t>& table() const { return table_; }

    std::size_t key(Rgb p) const {
        unsigned shift = 8 - bits_;
        return (std::size_t{p.r} >> shift) << (2 * bits_) | (std::size_t{p.g} >> shift) << bits_ |
               (std::size_t{p.b} >> shift);
    }

    std::uint8_t lookup(Rgb p) const { return table_[key(p)]; }

    // Reference table: each quantization cell goes to the nearest of eleven
    // prototype colors (squared RGB distance at the cell center, ties to the
    // lower index).
    static ColorLUT nearest_prototype(unsigned bits = 5) {
        static constexpr std::array<std::array<int, 3>, kColorCount> proto = {{
            {0, 0, 0}, {0, 0, 255}, {139, 69, 19}, {0, 160, 0}, {128, 128, 128},
            {255, 140, 0}, {255, 160, 200}, {128, 0, 160}, {255, 0, 0},
            {255, 255, 255}, {255, 255, 0}}};
        std::vector<std::uint8_t> table(std::size_t{1} << (3 * bits));
        const int cells = 1 << bits;
        const int step = 256 / cells;
        auto center = [&](int q) { return q * step + (step - 1) / 2; };
        for (int r = 0; r < cells; ++r)
            for (int g = 0; g < cells; ++g)
                for (int b = 0; b < cells; ++b) {
                    int best = 0;
                    long best_d = -1;
                    for (int c = 0; c < static_cast<int>(kColorCount); ++c) {
                        long dr = center(r) - proto[c][0], dg = center(g) - proto[c][1],
                             db = center(b) - proto[c][2];
                        long d = dr * dr + dg * dg + db * db;
                        if (best_d < 0 || d < best_d) best_d = d, best = c;
                    }
                    table[(std::size_t(r) << (2 * bits)) | (std::size_t(g) << bits) | b] =
                        static_cast<std::uint8_t>(best);
                }
        return ColorLUT(bits, std::move(table));
    }

    // File layout: "NDCL", u32 version=1, u32 bits, then 2^(3*bits) bytes.
    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write color LUT " + path);
        out.write("NDCL", 4);
        auto put32 = [&](std::uint32_t v) {
            unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
            out.write(reinterpret_cast<const char*>(b), 4);
        };
        put32(1);
        put32(bits_);
        out.write(reinterpret_cast<const char*>(table_.data()), static_cast<std::streamsize>(table_.size()));
        if (!out) throw Error("I/O error writing color LUT " + path);
    }

    static ColorLUT read(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open color LUT " + path);
        char magic[4];
        unsigned char hdr[8];
        if (!in.read(magic, 4) || std::string_view(magic, 4) != "NDCL")
            throw FormatError("magic", "color LUT " + path + ": bad magic");
        if (!in.read(reinterpret_cast<char*>(hdr), 8)) throw FormatError("header", "color LUT truncated");
        auto get32 = [&](int o) {
            return std::uint32_t(hdr[o]) | std::uint32_t(hdr[o + 1]) << 8 |
                   std::uint32_t(hdr[o + 2]) << 16 | std::uint32_t(hdr[o + 3]) << 24;
        };
        if (get32(0) != 1) throw FormatError("version", "color LUT " + path + ": unsupported version");
        std::uint32_t bits = get32(4);
        if (bits < 1 || bits > 8) throw FormatError("bits", "color LUT " + path + ": bad bit depth");
        std::vector<std::uint8_t> table(std::size_t{1} << (3 * bits));
        if (!in.read(reinterpret_cast<char*>(table.data()), static_cast<std::streamsize>(table.size())))
            throw FormatError("payload", "color LUT " + path + ": truncated table");
        return ColorLUT(bits, std::move(table));
    }

private:
    unsigned bits_ = 0;
    std::vector<std::uint8_t> table_;
};

// One mask per color name (indexed like kColorNames); together they
// partition the image.
inline std::array<Mask, kColorCount> color_annotate(const RgbImage& image, const ColorLUT& lut) {
    std::array<Mask, kColorCount> masks;
    for (auto& m : masks) m = Mask(image.height, image.width, 0);
    for (std::size_t i = 0; i < image.size(); ++i) masks[lut.lookup(image.data[i])].data[i] = 1;
    return masks;
}

// Color label plane in concept ids; color_ids[k] is the concept id for
// kColorNames[k].
inline LabelPlane color_plane(const RgbImage& image, const ColorLUT& lut,
                              const std::array<ConceptId, kColorCount>& color_ids) {
    LabelPlane plane(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) plane[i] = color_ids[lut.lookup(image.data[i])];
    return plane;
}

}  // namespace netdissect
