#pragma once
// NDAV activation exchange format.
//
// Binary file (all integers u32 little-endian):
//   offset  0  "NDAV"
//   offset  4  version = 1
//   offset  8  n_images
//   offset 12  units
//   offset 16  h
//   offset 20  w
//   offset 24  reserved = 0
//   offset 28  float32 LE payload, [image][unit][row][col]
//
// Geometry sidecar "<file>.geom.json":
//   {"format": "netdissect-geometry", "version": 1, "layer_name": "...",
//    "n_images": N, "units": U, "h": H, "w": W,
//    "offset_y": .., "offset_x": .., "stride_y": .., "stride_x": ..,
//    "image_ids": [...]}
// offsets are the input-pixel coordinates of the receptive-field center of
// activation cell (0,0); strides are input pixels per activation cell.

#include "netdissect/concept_store.hpp"
#include "netdissect/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace netdissect {

static_assert(std::endian::native == std::endian::little,
              "NDAV I/O assumes a little-endian host");

inline constexpr std::size_t kNdavHeaderBytes = 28;

struct LayerGeometry {
    std::string layer_name;
    std::size_t units = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    double offset_y = 0.0;
    double offset_x = 0.0;
    double stride_y = 1.0;
    double stride_x = 1.0;

    bool operator==(const LayerGeometry&) const = default;

    static LayerGeometry identity(std::size_t units, std::size_t h, std::size_t w,
                                  std::string name = "synthetic") {
        return {std::move(name), units, h, w, 0.0, 0.0, 1.0, 1.0};
    }

    bool is_identity_for(std::size_t height, std::size_t width) const {
        return h == height && w == width && offset_y == 0.0 && offset_x == 0.0 && stride_y == 1.0 &&
               stride_x == 1.0;
    }

    void validate() const {
        if (!(stride_y > 0.0) || !(stride_x > 0.0) || !std::isfinite(stride_y) || !std::isfinite(stride_x))
            throw FormatError("stride", "layer '" + layer_name + "': strides must be positive");
        if (!std::isfinite(offset_y) || !std::isfinite(offset_x))
            throw FormatError("offset", "layer '" + layer_name + "': offsets must be finite");
    }

    // Soft checks against an input size; padded networks may legitimately
    // place anchors outside the image.
    std::vector<std::string> warnings(std::size_t height, std::size_t width) const {
        std::vector<std::string> out;
        if (offset_y < 0 || offset_x < 0) out.push_back("layer '" + layer_name + "': negative offset");
        if (h > 0 && offset_y + double(h - 1) * stride_y > double(height))
            out.push_back("layer '" + layer_name + "': last row anchor beyond input height " +
                          std::to_string(height));
        if (w > 0 && offset_x + double(w - 1) * stride_x > double(width))
            out.push_back("layer '" + layer_name + "': last column anchor beyond input width " +
                          std::to_string(width));
        return out;
    }
};

struct ActivationVolume {
    LayerGeometry geometry;
    std::size_t n_images = 0;
    std::vector<ImageId> image_ids;  // image_ids[i] names slice i
    std::vector<float> data;         // [image][unit][row][col]

    std::size_t map_size() const { return geometry.h * geometry.w; }
    std::size_t slice_size() const { return geometry.units * map_size(); }

    std::span<const float> image(std::size_t i) const {
        return {data.data() + i * slice_size(), slice_size()};
    }
    std::span<float> image(std::size_t i) { return {data.data() + i * slice_size(), slice_size()}; }

    std::span<const float> unit_map(std::size_t i, std::size_t u) const {
        return {data.data() + i * slice_size() + u * map_size(), map_size()};
    }

    void validate() const {
        geometry.validate();
        if (data.size() != n_images * slice_size())
            throw FormatError("data", "volume holds " + std::to_string(data.size()) + " floats, expected " +
                                          std::to_string(n_images * slice_size()));
        if (image_ids.size() != n_images)
            throw FormatError("image_ids", "volume lists " + std::to_string(image_ids.size()) +
                                               " image ids for " + std::to_string(n_images) + " images");
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i])) {
                std::size_t s = slice_size();
                throw Error("non-finite activation at image " + std::to_string(i / s) + ", unit " +
                            std::to_string((i % s) / map_size()));
            }
    }

    // Streaming source protocol (see VolumeReader).
    std::size_t images() const { return n_images; }
    const LayerGeometry& layer() const { return geometry; }
    const std::vector<ImageId>& ids() const { return image_ids; }

    struct Cursor {
        const ActivationVolume* v;
        std::span<const float> read(std::size_t i, std::vector<float>&) const { return v->image(i); }
    };
    Cursor cursor() const { return {this}; }
};

inline std::vector<ImageId> default_image_ids(std::size_t n) {
    std::vector<ImageId> ids(n);
    std::iota(ids.begin(), ids.end(), ImageId{0});
    return ids;
}

inline std::string sidecar_path(const std::string& path) { return path + ".geom.json"; }

inline nlohmann::json geometry_to_json(const LayerGeometry& g, std::size_t n_images,
                                       const std::vector<ImageId>& ids) {
    return {{"format", "netdissect-geometry"}, {"version", 1},         {"layer_name", g.layer_name},
            {"n_images", n_images},            {"units", g.units},      {"h", g.h},
            {"w", g.w},                        {"offset_y", g.offset_y}, {"offset_x", g.offset_x},
            {"stride_y", g.stride_y},          {"stride_x", g.stride_x}, {"image_ids", ids}};
}

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

inline void put_le32(unsigned char* p, std::uint32_t v) {
    p[0] = static_cast<unsigned char>(v);
    p[1] = static_cast<unsigned char>(v >> 8);
    p[2] = static_cast<unsigned char>(v >> 16);
    p[3] = static_cast<unsigned char>(v >> 24);
}

inline void check_finite(std::span<const float> slice, std::size_t image, std::size_t map_size) {
    for (std::size_t k = 0; k < slice.size(); ++k)
        if (!std::isfinite(slice[k]))
            throw Error("non-finite activation at image " + std::to_string(image) + ", unit " +
                        std::to_string(map_size ? k / map_size : 0));
}

}  // namespace detail

// Validated handle on an NDAV file. Each cursor owns its own stream, so
// several threads may read one file concurrently.
class VolumeReader {
public:
    explicit VolumeReader(std::string path) : path_(std::move(path)) {
        namespace fs = std::filesystem;
        if (!fs::exists(path_)) throw Error("activation file not found: " + path_);
        std::ifstream in(path_, std::ios::binary);
        if (!in) throw Error("cannot open activation file " + path_);
        unsigned char hdr[kNdavHeaderBytes];
        in.read(reinterpret_cast<char*>(hdr), kNdavHeaderBytes);
        if (static_cast<std::size_t>(in.gcount()) != kNdavHeaderBytes)
            throw FormatError("header", path_ + ": expected " + std::to_string(kNdavHeaderBytes) +
                                            " header bytes, found " + std::to_string(in.gcount()));
        if (std::memcmp(hdr, "NDAV", 4) != 0) throw FormatError("magic", path_ + ": bad magic, expected NDAV");
        if (auto v = detail::le32(hdr + 4); v != 1)
            throw FormatError("version", path_ + ": unsupported version " + std::to_string(v));
        if (auto r = detail::le32(hdr + 24); r != 0)
            throw FormatError("reserved", path_ + ": reserved field is " + std::to_string(r) + ", expected 0");
        n_images_ = detail::le32(hdr + 8);
        geom_.units = detail::le32(hdr + 12);
        geom_.h = detail::le32(hdr + 16);
        geom_.w = detail::le32(hdr + 20);

        std::uintmax_t expected = std::uintmax_t(n_images_) * geom_.units * geom_.h * geom_.w * 4;
        std::uintmax_t found = fs::file_size(path_) - kNdavHeaderBytes;
        if (found != expected)
            throw FormatError("payload", path_ + ": expected " + std::to_string(expected) +
                                             " bytes payload, found " + std::to_string(found));
        read_sidecar();
    }

    const std::string& path() const { return path_; }
    std::size_t images() const { return n_images_; }
    const LayerGeometry& layer() const { return geom_; }
    const std::vector<ImageId>& ids() const { return ids_; }
    std::size_t slice_size() const { return geom_.units * geom_.h * geom_.w; }

    class Cursor {
    public:
        explicit Cursor(const VolumeReader& r) : reader_(&r), in_(r.path_, std::ios::binary) {
            if (!in_) throw Error("cannot open activation file " + r.path_);
        }

        // Reads slice i into scratch; the returned span aliases scratch.
        std::span<const float> read(std::size_t i, std::vector<float>& scratch) {
            const std::size_t n = reader_->slice_size();
            if (i >= reader_->n_images_) throw Error("image index " + std::to_string(i) + " out of range");
            scratch.resize(n);
            in_.seekg(static_cast<std::streamoff>(kNdavHeaderBytes + i * n * sizeof(float)));
            in_.read(reinterpret_cast<char*>(scratch.data()), static_cast<std::streamsize>(n * sizeof(float)));
            if (!in_) throw Error(reader_->path_ + ": read failed at image " + std::to_string(i));
            detail::check_finite(scratch, i, reader_->geom_.h * reader_->geom_.w);
            return scratch;
        }

    private:
        const VolumeReader* reader_;
        std::ifstream in_;
    };

    Cursor cursor() const { return Cursor(*this); }

private:
    void read_sidecar() {
        auto sp = sidecar_path(path_);
        std::ifstream in(sp);
        if (!in) throw Error("geometry sidecar not found: " + sp);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError("sidecar", sp + ": " + ex.what());
        }
        try {
            if (j.value("version", 0) != 1) throw FormatError("version", sp + ": unsupported sidecar version");
            auto expect = [&](const char* key, std::size_t header_value) {
                auto v = j.at(key).get<std::size_t>();
                if (v != header_value)
                    throw FormatError(key, sp + ": " + key + " = " + std::to_string(v) +
                                               " disagrees with header value " + std::to_string(header_value));
            };
            expect("units", geom_.units);
            expect("h", geom_.h);
            expect("w", geom_.w);
            if (j.contains("n_images")) expect("n_images", n_images_);
            geom_.layer_name = j.value("layer_name", std::string{});
            geom_.offset_y = j.at("offset_y").get<double>();
            geom_.offset_x = j.at("offset_x").get<double>();
            geom_.stride_y = j.at("stride_y").get<double>();
            geom_.stride_x = j.at("stride_x").get<double>();
            if (j.contains("image_ids")) {
                ids_ = j.at("image_ids").get<std::vector<ImageId>>();
                if (ids_.size() != n_images_)
                    throw FormatError("image_ids", sp + ": lists " + std::to_string(ids_.size()) +
                                                       " image ids for " + std::to_string(n_images_) + " images");
            } else {
                ids_ = default_image_ids(n_images_);
            }
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError("sidecar", sp + ": " + ex.what());
        }
        geom_.validate();
    }

    std::string path_;
    std::size_t n_images_ = 0;
    LayerGeometry geom_;
    std::vector<ImageId> ids_;
};

inline ActivationVolume read_volume(const std::string& path) {
    VolumeReader reader(path);
    ActivationVolume v;
    v.geometry = reader.layer();
    v.n_images = reader.images();
    v.image_ids = reader.ids();
    v.data.resize(v.n_images * reader.slice_size());
    auto cur = reader.cursor();
    std::vector<float> scratch;
    for (std::size_t i = 0; i < v.n_images; ++i) {
        auto s = cur.read(i, scratch);
        std::copy(s.begin(), s.end(), v.image(i).begin());
    }
    return v;
}

inline void write_volume(const ActivationVolume& v, const std::string& path) {
    v.validate();
    auto fits = [](std::size_t x) { return x <= 0xFFFFFFFFu; };
    if (!fits(v.n_images) || !fits(v.geometry.units) || !fits(v.geometry.h) || !fits(v.geometry.w))
        throw FormatError("dims", "volume dimension exceeds 32 bits");
    unsigned char hdr[kNdavHeaderBytes] = {'N', 'D', 'A', 'V'};
    detail::put_le32(hdr + 4, 1);
    detail::put_le32(hdr + 8, static_cast<std::uint32_t>(v.n_images));
    detail::put_le32(hdr + 12, static_cast<std::uint32_t>(v.geometry.units));
    detail::put_le32(hdr + 16, static_cast<std::uint32_t>(v.geometry.h));
    detail::put_le32(hdr + 20, static_cast<std::uint32_t>(v.geometry.w));
    detail::put_le32(hdr + 24, 0);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write activation file " + path);
        out.write(reinterpret_cast<const char*>(hdr), kNdavHeaderBytes);
        out.write(reinterpret_cast<const char*>(v.data.data()),
                  static_cast<std::streamsize>(v.data.size() * sizeof(float)));
        if (!out) throw Error("I/O error writing " + path);
    }
    std::ofstream side(sidecar_path(path), std::ios::trunc);
    side << geometry_to_json(v.geometry, v.n_images, v.image_ids).dump(1) << '\n';
    if (!side) throw Error("I/O error writing " + sidecar_path(path));
}

}  // namespace netdissect
