#pragma once
// On-disk annotation dataset: one index.json plus raw 16-bit label planes.
//
//   <root>/index.json
//   {
//     "format": "netdissect-dataset", "version": 1,
//     "concepts": [{"id": 1, "name": "cat", "category": "object", "sample_count": 12}, ...],
//     "images": [{"image_id": 0, "width": 64, "height": 48,
//                 "planes": {"object": ["planes/0_object_0.u16"], "color": [...]},
//                 "whole_image_labels": [3]}, ...]
//   }
//
// Plane files are unsigned 16-bit little-endian, row-major, width*height
// entries, no header. Paths are relative to <root>.

#include "netdissect/concept_store.hpp"
#include "netdissect/error.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace netdissect {

namespace fs = std::filesystem;

struct ImageEntry {
    ImageId image_id = 0;
    std::size_t width = 0;
    std::size_t height = 0;
    std::array<std::vector<std::string>, kCategoryCount> plane_files;
    std::vector<ConceptId> whole_image_labels;
    std::shared_ptr<const ImageRecord> resident;  // set for in-memory sets
};

inline LabelPlane read_plane(const fs::path& path, std::size_t entries) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open label plane " + path.string());
    std::vector<unsigned char> bytes(entries * 2);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size() || in.peek() != std::char_traits<char>::eof())
        throw Error("label plane " + path.string() + ": expected " + std::to_string(bytes.size()) +
                    " bytes, size differs");
    LabelPlane plane(entries);
    for (std::size_t i = 0; i < entries; ++i)
        plane[i] = static_cast<ConceptId>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    return plane;
}

inline void write_plane(const fs::path& path, const LabelPlane& plane) {
    std::vector<unsigned char> bytes(plane.size() * 2);
    for (std::size_t i = 0; i < plane.size(); ++i) {
        bytes[2 * i] = static_cast<unsigned char>(plane[i] & 0xFF);
        bytes[2 * i + 1] = static_cast<unsigned char>(plane[i] >> 8);
    }
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("I/O error writing label plane " + path.string());
}

// Concept catalog plus per-image annotations. Records are either resident
// or loaded from disk on demand; the set is read-only once built.
class AnnotationSet {
public:
    AnnotationSet() = default;

    // In-memory set; every record is finalized against the index.
    AnnotationSet(ConceptIndex index, std::vector<ImageRecord> records) : index_(std::move(index)) {
        index_.validate();
        std::set<ImageId> ids;
        for (auto& r : records) {
            r.finalize(index_);
            if (!ids.insert(r.image_id).second)
                throw Error("duplicate image_id " + std::to_string(r.image_id));
            ImageEntry e;
            e.image_id = r.image_id;
            e.width = r.width;
            e.height = r.height;
            e.whole_image_labels = r.whole_image_labels;
            e.resident = std::make_shared<const ImageRecord>(std::move(r));
            entries_.push_back(std::move(e));
        }
    }

    const ConceptIndex& index() const { return index_; }
    std::size_t size() const { return entries_.size(); }
    const ImageEntry& entry(std::size_t i) const { return entries_.at(i); }
    const fs::path& root() const { return root_; }

    std::shared_ptr<const ImageRecord> record(std::size_t i) const {
        const auto& e = entries_.at(i);
        if (e.resident) return e.resident;
        auto r = std::make_shared<ImageRecord>();
        r->image_id = e.image_id;
        r->width = e.width;
        r->height = e.height;
        r->whole_image_labels = e.whole_image_labels;
        for (Category cat : kCategories)
            for (const auto& f : e.plane_files[category_index(cat)])
                r->planes[category_index(cat)].push_back(read_plane(root_ / f, e.width * e.height));
        r->finalize(index_);
        return r;
    }

    // Reads index.json and checks that every plane file exists with the
    // right byte size. Plane contents are checked when records load.
    static AnnotationSet load(const fs::path& root) {
        auto index_path = root / "index.json";
        if (!fs::exists(index_path)) throw Error("dataset index not found: " + index_path.string());
        std::ifstream in(index_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError("index.json", "dataset index " + index_path.string() + ": " + ex.what());
        }
        AnnotationSet set;
        set.root_ = root;
        try {
            if (j.value("version", 0) != 1)
                throw FormatError("version", "dataset index: unsupported version");
            for (const auto& c : j.at("concepts")) {
                auto cat = parse_category(c.at("category").get<std::string>());
                if (!cat) throw FormatError("category", "unknown category " + c.at("category").dump());
                set.index_.concepts.push_back({c.at("id").get<ConceptId>(), c.at("name").get<std::string>(),
                                               *cat, c.value("sample_count", std::uint32_t{0})});
            }
            set.index_.validate();
            std::set<ImageId> ids;
            for (const auto& im : j.at("images")) {
                ImageEntry e;
                e.image_id = im.at("image_id").get<ImageId>();
                e.width = im.at("width").get<std::size_t>();
                e.height = im.at("height").get<std::size_t>();
                if (e.width == 0 || e.height == 0)
                    throw FormatError("width", "image " + std::to_string(e.image_id) + " has zero size");
                if (!ids.insert(e.image_id).second)
                    throw FormatError("image_id", "duplicate image_id " + std::to_string(e.image_id));
                if (im.contains("planes")) {
                    for (const auto& [cat_name, files] : im.at("planes").items()) {
                        auto cat = parse_category(cat_name);
                        if (!cat) throw FormatError("planes", "unknown category '" + cat_name + "'");
                        for (const auto& f : files) {
                            auto name = f.get<std::string>();
                            auto p = root / name;
                            if (!fs::exists(p))
                                throw Error("image " + std::to_string(e.image_id) + ": missing plane file " +
                                            p.string());
                            if (fs::file_size(p) != e.width * e.height * 2)
                                throw Error("image " + std::to_string(e.image_id) + ": plane " + p.string() +
                                            " has " + std::to_string(fs::file_size(p)) + " bytes, expected " +
                                            std::to_string(e.width * e.height * 2));
                            e.plane_files[category_index(*cat)].push_back(name);
                        }
                    }
                }
                if (im.contains("whole_image_labels"))
                    e.whole_image_labels = im.at("whole_image_labels").get<std::vector<ConceptId>>();
                set.entries_.push_back(std::move(e));
            }
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError("index.json", "dataset index " + index_path.string() + ": " + ex.what());
        }
        return set;
    }

    // Writes index.json and plane files under root (created if needed).
    void save(const fs::path& root) const {
        fs::create_directories(root / "planes");
        nlohmann::json j;
        j["format"] = "netdissect-dataset";
        j["version"] = 1;
        j["concepts"] = nlohmann::json::array();
        for (const auto& c : index_.concepts)
            j["concepts"].push_back({{"id", c.id},
                                     {"name", c.name},
                                     {"category", std::string(to_string(c.category))},
                                     {"sample_count", c.sample_count}});
        j["images"] = nlohmann::json::array();
        for (std::size_t i = 0; i < size(); ++i) {
            auto r = record(i);
            nlohmann::json im;
            im["image_id"] = r->image_id;
            im["width"] = r->width;
            im["height"] = r->height;
            nlohmann::json planes = nlohmann::json::object();
            for (Category cat : kCategories) {
                const auto& ps = r->planes_of(cat);
                if (ps.empty()) continue;
                auto& files = planes[std::string(to_string(cat))] = nlohmann::json::array();
                for (std::size_t k = 0; k < ps.size(); ++k) {
                    std::string name = "planes/" + std::to_string(r->image_id) + "_" +
                                       std::string(to_string(cat)) + "_" + std::to_string(k) + ".u16";
                    write_plane(root / name, ps[k]);
                    files.push_back(name);
                }
            }
            im["planes"] = planes;
            im["whole_image_labels"] = r->whole_image_labels;
            j["images"].push_back(std::move(im));
        }
        std::ofstream out(root / "index.json");
        out << j.dump(1) << '\n';
        if (!out) throw Error("I/O error writing " + (root / "index.json").string());
    }

    // Loads every record, which checks plane contents and label ids.
    void validate_all() const {
        for (std::size_t i = 0; i < size(); ++i) (void)record(i);
    }

private:
    ConceptIndex index_;
    fs::path root_;
    std::vector<ImageEntry> entries_;
};

}  // namespace netdissect
