#pragma once
// Command-line front end: dissect, rotate, synth, compare, validate.
//
// Exit codes: 0 success, 1 user/input error, 2 internal error. Every
// subcommand finishes all reading and computation before it creates the
// output directory, so a failing run leaves no partial artifacts.

#include "netdissect/concept_store.hpp"
#include "netdissect/dataset.hpp"
#include "netdissect/error.hpp"
#include "netdissect/quantile.hpp"
#include "netdissect/report.hpp"
#include "netdissect/rotation.hpp"
#include "netdissect/scoring.hpp"
#include "netdissect/synth.hpp"
#include "netdissect/tensor_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace netdissect::cli {

inline const std::vector<double>& default_alphas() {
    static const std::vector<double> a = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    return a;
}

inline const std::vector<std::uint64_t>& default_seeds() {
    static const std::vector<std::uint64_t> s = {1, 2, 3, 4, 5};
    return s;
}

struct RunConfig {
    std::string dataset;
    std::vector<std::string> activations;
    double theta = kDefaultQuantile;
    double tau = kDefaultIoUThreshold;
    std::string out;
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::vector<double> alphas = default_alphas();
    std::vector<std::uint64_t> seeds = default_seeds();
    std::string spec;
    std::vector<std::string> labels;
    std::vector<std::string> reports;
    bool write_scores = false;
};

namespace detail {

struct OutputFile {
    std::string name;
    std::string content;
};

// Writes files only after everything was computed.
inline void emit(const std::string& dir, const std::vector<OutputFile>& files) {
    if (dir.empty()) throw Error("--out is required");
    std::filesystem::create_directories(dir);
    for (const auto& f : files) {
        std::ofstream out(std::filesystem::path(dir) / f.name, std::ios::binary | std::ios::trunc);
        out << f.content;
        if (!out) throw Error("I/O error writing " + (std::filesystem::path(dir) / f.name).string());
    }
}

inline std::string join_doubles(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_alpha(v[i]);
    return s;
}

// Effective configuration, minus run-time-only settings (worker count).
inline std::string config_echo(const std::string& command, const RunConfig& c) {
    std::ostringstream o;
    char buf[64];
    o << "command=" << command << '\n';
    if (!c.dataset.empty()) o << "dataset=" << c.dataset << '\n';
    for (const auto& a : c.activations) o << "activations=" << a << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", c.theta);
    o << "theta=" << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", c.tau);
    o << "tau=" << buf << '\n';
    if (command == "rotate") {
        o << "alphas=" << join_doubles(c.alphas) << '\n';
        o << "seeds=";
        for (std::size_t i = 0; i < c.seeds.size(); ++i) o << (i ? "," : "") << c.seeds[i];
        o << '\n';
    }
    return o.str();
}

inline void check_levels(const RunConfig& c) {
    if (!(c.theta > 0.0 && c.theta < 1.0)) throw Error("--theta must lie in (0, 1)");
    if (!(c.tau >= 0.0 && c.tau < 1.0)) throw Error("--tau must lie in [0, 1)");
}

inline std::string one_activation(const RunConfig& c) {
    if (c.activations.size() != 1) throw Error("exactly one --activations file is required");
    return c.activations.front();
}

inline AnnotationSet open_dataset(const std::string& path) {
    if (path.empty()) throw Error("--dataset is required");
    if (!std::filesystem::exists(path)) throw Error("dataset path not found: " + path);
    return AnnotationSet::load(path);
}

inline std::string summary(const DetectorReport& r) {
    std::ostringstream o;
    o << "unique detectors: " << r.unique_detectors << " (detector units: " << r.detector_units() << " of "
      << r.units << ")\n";
    for (Category c : kCategories)
        if (auto v = r.unique_by_category[category_index(c)]) o << "  " << to_string(c) << ": " << v << '\n';
    return o.str();
}

// Bare keys in a config file refer to the selected subcommand's options.
class SubcommandConfig : public CLI::ConfigBase {
public:
    explicit SubcommandConfig(const CLI::App& app) : app_(&app) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        auto items = CLI::ConfigBase::from_config(input);
        auto subs = app_->get_subcommands();
        if (subs.empty()) return items;
        for (auto& item : items)
            if (item.parents.empty()) item.parents.push_back(subs.front()->get_name());
        return items;
    }

private:
    const CLI::App* app_;
};

}  // namespace detail

inline int cmd_dissect(const RunConfig& c, std::ostream& out, std::ostream& err) {
    detail::check_levels(c);
    auto dataset = detail::open_dataset(c.dataset);
    VolumeReader reader(detail::one_activation(c));
    if (c.out.empty()) throw Error("--out is required");
    auto result = dissect_layer(reader, dataset, c.theta, c.tau, c.workers);
    for (const auto& w : result.warnings) err << "warning: " << w << '\n';

    std::vector<detail::OutputFile> files;
    std::ostringstream thr, csv;
    write_thresholds_csv(result.thresholds, thr);
    files.push_back({"thresholds.csv", thr.str()});
    files.push_back({"report.json", report_to_json(result.report).dump(1) + "\n"});
    write_report_csv(result.report, csv);
    files.push_back({"report.csv", csv.str()});
    files.push_back({"report.svg", report_svg(result.report)});
    files.push_back({"config.txt", detail::config_echo("dissect", c)});
    detail::emit(c.out, files);
    if (c.write_scores) write_scores_bin(result.scores, (std::filesystem::path(c.out) / "scores.bin").string());
    out << detail::summary(result.report);
    return 0;
}

inline int cmd_rotate(const RunConfig& c, std::ostream& out, std::ostream& err) {
    detail::check_levels(c);
    auto dataset = detail::open_dataset(c.dataset);
    VolumeReader reader(detail::one_activation(c));
    if (c.out.empty()) throw Error("--out is required");
    auto sweep = rotation_sweep(reader, dataset, c.alphas, c.seeds, c.theta, c.tau, c.workers);
    (void)err;
    std::ostringstream csv;
    write_sweep_csv(sweep, csv);
    detail::emit(c.out, {{"sweep.csv", csv.str()},
                         {"sweep.svg", sweep_svg(sweep)},
                         {"baseline.json", report_to_json(sweep.baseline).dump(1) + "\n"},
                         {"config.txt", detail::config_echo("rotate", c)}});
    out << "baseline unique detectors: " << sweep.baseline.unique_detectors << '\n';
    for (auto seed : sweep.seeds) {
        out << "seed " << seed << ":";
        for (auto v : sweep.curve(seed)) out << ' ' << v;
        out << '\n';
    }
    return 0;
}

inline int cmd_synth(const RunConfig& c, std::ostream& out, std::ostream&) {
    if (c.spec.empty()) throw Error("--spec is required");
    if (c.out.empty()) throw Error("--out is required");
    std::ifstream in(c.spec);
    if (!in) throw Error("cannot open synth spec " + c.spec);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("spec", c.spec + ": " + ex.what());
    }
    auto fx = generate(synth_spec_from_json(j));
    write_fixture(fx, c.out);
    out << "wrote fixture to " << c.out << ": " << fx.spec.n_images << " images, " << fx.dataset.index().size()
        << " concepts, " << fx.spec.n_units << " units, " << fx.ground_truth.unique_detectors << " planted\n";
    return 0;
}

inline int cmd_compare(const RunConfig& c, std::ostream& out, std::ostream&) {
    std::vector<DetectorReport> reports;
    for (const auto& p : c.reports) reports.push_back(read_report(p));
    auto cmp = compare_reports(reports, c.labels);
    if (c.out.empty()) throw Error("--out is required");
    std::ostringstream csv;
    write_comparison_csv(cmp, csv);
    detail::emit(c.out, {{"comparison.csv", csv.str()}, {"comparison.svg", comparison_svg(cmp)}});
    out << csv.str();
    return 0;
}

inline int cmd_validate(const RunConfig& c, std::ostream& out, std::ostream&) {
    if (c.activations.empty() && c.dataset.empty()) throw Error("validate needs --activations and/or --dataset");
    std::optional<AnnotationSet> dataset;
    if (!c.dataset.empty()) {
        dataset = detail::open_dataset(c.dataset);
        dataset->validate_all();
        out << "dataset ok: " << dataset->size() << " images, " << dataset->index().size() << " concepts\n";
    }
    for (const auto& path : c.activations) {
        VolumeReader reader(path);
        auto cur = reader.cursor();
        std::vector<float> scratch;
        for (std::size_t i = 0; i < reader.images(); ++i) cur.read(i, scratch);
        const auto& g = reader.layer();
        out << "activations ok: " << path << ": " << reader.images() << " images x " << g.units << " units x "
            << g.h << "x" << g.w << '\n';
        if (dataset) {
            (void)align_images(reader.ids(), *dataset);
            out << "  aligned with dataset\n";
        }
    }
    return 0;
}

// Parses argv and dispatches; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Network dissection: score convolutional units against labeled visual concepts"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key=value configuration file (flags take precedence)");
    app.config_formatter(std::make_shared<detail::SubcommandConfig>(app));
    RunConfig c;

    auto add_common = [&](CLI::App* sub, bool needs_levels) {
        sub->add_option("--dataset", c.dataset, "dataset directory containing index.json");
        sub->add_option("--activations", c.activations, "NDAV activation file(s)");
        sub->add_option("--out", c.out, "output directory");
        sub->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
        if (needs_levels) {
            sub->add_option("--theta", c.theta, "top quantile level")->capture_default_str();
            sub->add_option("--tau", c.tau, "IoU detector threshold")->capture_default_str();
        }
    };

    auto* dissect = app.add_subcommand("dissect", "score one layer against the dataset");
    add_common(dissect, true);
    dissect->add_flag("--scores", c.write_scores, "also write scores.bin");

    auto* rotate = app.add_subcommand("rotate", "interpretability under random rotations Q^alpha");
    add_common(rotate, true);
    rotate->add_option("--alphas", c.alphas, "comma-separated rotation powers")->delimiter(',');
    rotate->add_option("--seeds", c.seeds, "comma-separated rotation seeds")->delimiter(',');

    auto* synth = app.add_subcommand("synth", "generate a synthetic fixture");
    synth->add_option("--spec", c.spec, "synth spec JSON")->required();
    synth->add_option("--out", c.out, "fixture directory")->required();

    auto* compare = app.add_subcommand("compare", "compare detector reports");
    compare->add_option("reports", c.reports, "report.json files")->required();
    compare->add_option("--labels", c.labels, "comma-separated column labels")->delimiter(',');
    compare->add_option("--out", c.out, "output directory")->required();

    auto* validate = app.add_subcommand("validate", "check activation files and/or a dataset");
    validate->add_option("--dataset", c.dataset, "dataset directory");
    validate->add_option("--activations", c.activations, "NDAV activation file(s)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*dissect) return cmd_dissect(c, out, err);
        if (*rotate) return cmd_rotate(c, out, err);
        if (*synth) return cmd_synth(c, out, err);
        if (*compare) return cmd_compare(c, out, err);
        if (*validate) return cmd_validate(c, out, err);
    } catch (const FormatError& e) {
        err << "error [" << e.field() << "]: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

}  // namespace netdissect::cli
