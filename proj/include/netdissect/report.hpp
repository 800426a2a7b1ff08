#pragma once
// Report serialization (JSON / CSV / SVG) and multi-report comparison.
//
// report.json:
//   {"params": {"theta": .., "tau": ..}, "n_units": U,
//    "units": [{"unit": k, "concept": "cat", "concept_id": 3, "category": "object", "iou": 0.31}, ...],
//    "unique_detectors": n, "detector_units": d,
//    "by_category": {"scene": .., "object": .., ...},        // distinct concepts
//    "units_by_category": {"scene": .., "object": .., ...}}  // detector units

#include "netdissect/concept_store.hpp"
#include "netdissect/error.hpp"
#include "netdissect/scoring.hpp"
#include "netdissect/svg.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace netdissect {

inline nlohmann::json report_to_json(const DetectorReport& r) {
    nlohmann::json j;
    j["params"] = {{"theta", r.theta}, {"tau", r.tau}};
    j["n_units"] = r.units;
    j["units"] = nlohmann::json::array();
    for (const auto& d : r.detectors)
        j["units"].push_back({{"unit", d.unit},
                              {"concept", d.concept_name},
                              {"concept_id", d.concept_id},
                              {"category", std::string(to_string(d.category))},
                              {"iou", d.iou}});
    j["unique_detectors"] = r.unique_detectors;
    j["detector_units"] = r.detector_units();
    nlohmann::json by = nlohmann::json::object(), units_by = nlohmann::json::object();
    for (Category c : kCategories) {
        by[std::string(to_string(c))] = r.unique_by_category[category_index(c)];
        units_by[std::string(to_string(c))] = r.units_by_category[category_index(c)];
    }
    j["by_category"] = by;
    j["units_by_category"] = units_by;
    return j;
}

inline DetectorReport report_from_json(const nlohmann::json& j) {
    DetectorReport r;
    try {
        r.theta = j.at("params").at("theta").get<double>();
        r.tau = j.at("params").at("tau").get<double>();
        r.units = j.value("n_units", std::size_t{0});
        for (const auto& u : j.at("units")) {
            UnitAssignment a;
            a.unit = u.at("unit").get<std::size_t>();
            a.concept_name = u.at("concept").get<std::string>();
            a.concept_id = u.value("concept_id", ConceptId{0});
            auto cat = parse_category(u.at("category").get<std::string>());
            if (!cat) throw FormatError("category", "report: unknown category " + u.at("category").dump());
            a.category = *cat;
            a.iou = u.at("iou").get<double>();
            r.detectors.push_back(a);
        }
        r.unique_detectors = j.at("unique_detectors").get<std::size_t>();
        for (Category c : kCategories) {
            auto key = std::string(to_string(c));
            r.unique_by_category[category_index(c)] = j.at("by_category").value(key, std::size_t{0});
            if (j.contains("units_by_category"))
                r.units_by_category[category_index(c)] = j.at("units_by_category").value(key, std::size_t{0});
        }
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("report", std::string("malformed report: ") + ex.what());
    }
    return r;
}

inline DetectorReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open report " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("report", path + ": " + ex.what());
    }
    return report_from_json(j);
}

inline void write_report_csv(const DetectorReport& r, std::ostream& out) {
    out << "unit,concept_id,concept,category,iou\n";
    char buf[64];
    for (const auto& d : r.detectors) {
        std::snprintf(buf, sizeof buf, "%.17g", d.iou);
        out << d.unit << ',' << d.concept_id << ',' << d.concept_name << ',' << to_string(d.category) << ',' << buf
            << '\n';
    }
}

// Bar chart of unique detectors per category.
inline std::string report_svg(const DetectorReport& r, const std::string& title = "unique detectors") {
    const double W = 480, H = 300, left = 50, bottom = 250, top = 40;
    svg::Document doc(W, H);
    doc.text(W / 2, 22, title + " (" + std::to_string(r.unique_detectors) + " total)", 14, "middle");
    std::size_t max_v = 1;
    for (auto v : r.unique_by_category) max_v = std::max(max_v, v);
    const double scale = (bottom - top) / double(max_v);
    const double slot = (W - left - 20) / double(kCategoryCount);
    doc.line(left, bottom, W - 20, bottom, "#333");
    doc.line(left, top, left, bottom, "#333");
    double step = svg::nice_step(double(max_v));
    for (double t = 0; t <= double(max_v) + 1e-9; t += step) {
        doc.line(left - 4, bottom - t * scale, left, bottom - t * scale, "#333");
        doc.text(left - 6, bottom - t * scale + 4, std::to_string(static_cast<long long>(t)), 10, "end");
    }
    for (std::size_t i = 0; i < kCategoryCount; ++i) {
        double v = double(r.unique_by_category[i]);
        double x = left + i * slot + slot * 0.15;
        doc.rect(x, bottom - v * scale, slot * 0.7, v * scale, svg::color(i));
        doc.text(x + slot * 0.35, bottom + 16, to_string(kCategories[i]), 11, "middle");
        doc.text(x + slot * 0.35, bottom - v * scale - 4, std::to_string(r.unique_by_category[i]), 10, "middle");
    }
    return doc.str();
}

struct Comparison {
    std::vector<std::string> labels;
    std::array<std::vector<std::size_t>, kCategoryCount> unique_by_category;  // [category][report]
    std::vector<std::size_t> unique_detectors;
    std::vector<std::size_t> detector_units;
};

inline Comparison compare_reports(const std::vector<DetectorReport>& reports, const std::vector<std::string>& labels) {
    if (reports.empty()) throw Error("compare needs at least one report");
    if (!labels.empty() && labels.size() != reports.size())
        throw Error(std::to_string(labels.size()) + " labels given for " + std::to_string(reports.size()) + " reports");
    Comparison c;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        c.labels.push_back(labels.empty() ? "report" + std::to_string(i) : labels[i]);
        for (std::size_t k = 0; k < kCategoryCount; ++k) c.unique_by_category[k].push_back(reports[i].unique_by_category[k]);
        c.unique_detectors.push_back(reports[i].unique_detectors);
        c.detector_units.push_back(reports[i].detector_units());
    }
    return c;
}

inline void write_comparison_csv(const Comparison& c, std::ostream& out) {
    out << "category";
    for (const auto& l : c.labels) out << ',' << l;
    out << '\n';
    auto row = [&](std::string_view name, const std::vector<std::size_t>& v) {
        out << name;
        for (auto x : v) out << ',' << x;
        out << '\n';
    };
    for (std::size_t k = 0; k < kCategoryCount; ++k) row(to_string(kCategories[k]), c.unique_by_category[k]);
    row("unique_detectors", c.unique_detectors);
    row("detector_units", c.detector_units);
}

// Stacked bars: one column per representation, one segment per category.
inline std::string comparison_svg(const Comparison& c) {
    const double slot = 70, left = 60, top = 40, bottom = 300;
    const double W = left + slot * double(c.labels.size()) + 140, H = 360;
    svg::Document doc(W, H);
    doc.text(W / 2, 22, "unique detectors by category", 14, "middle");
    std::size_t max_v = 1;
    for (auto v : c.unique_detectors) max_v = std::max(max_v, v);
    const double scale = (bottom - top) / double(max_v);
    doc.line(left, bottom, left + slot * double(c.labels.size()), bottom, "#333");
    doc.line(left, top, left, bottom, "#333");
    double step = svg::nice_step(double(max_v));
    for (double t = 0; t <= double(max_v) + 1e-9; t += step) {
        doc.line(left - 4, bottom - t * scale, left, bottom - t * scale, "#333");
        doc.text(left - 6, bottom - t * scale + 4, std::to_string(static_cast<long long>(t)), 10, "end");
    }
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        double x = left + slot * double(i) + slot * 0.15, y = bottom;
        for (std::size_t k = 0; k < kCategoryCount; ++k) {
            double h = double(c.unique_by_category[k][i]) * scale;
            if (h > 0) doc.rect(x, y - h, slot * 0.7, h, svg::color(k));
            y -= h;
        }
        doc.text(x + slot * 0.35, y - 4, std::to_string(c.unique_detectors[i]), 10, "middle");
        doc.text(x + slot * 0.35, bottom + 16, c.labels[i], 11, "middle");
    }
    const double lx = left + slot * double(c.labels.size()) + 20;
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
        doc.rect(lx, top + 20.0 * double(k), 12, 12, svg::color(k));
        doc.text(lx + 18, top + 20.0 * double(k) + 10, to_string(kCategories[k]), 11);
    }
    return doc.str();
}

}  // namespace netdissect
