#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepesn/deepesn.hpp"

#ifndef DEEPESN_VERSION
#define DEEPESN_VERSION "dev"
#endif

namespace deepesn::cli {

namespace fs = std::filesystem;

inline constexpr const char* output_root_env = "DEEPESN_OUTPUT_ROOT";

// Run parameters shared by `evaluate` and `ensemble`. The config file and the
// run manifest use the same plain `key=value` format; '#' starts a comment.
//
//   data=<dir>          ingested dataset directory   (exactly one of data/synth)
//   synth=<seed>,<per_class>,<length>,<difficulty>
//   standardize=0|1     per-sequence channel z-scoring
//   seed=<uint64>       master seed (mandatory)
//   layers, leak        reservoir depth and leak rate shared by all layers
//   units, sigma, sigma_hat, rho, lambda   comma-separated grid values
//   guesses, outer_folds, inner_folds, washout
//   workers             thread count (not part of the manifest)
struct RunConfig {
    std::optional<std::string> data;
    std::optional<std::string> synth;
    bool standardize = false;
    std::optional<std::uint64_t> seed;
    std::size_t layers = 10;
    double leak = 0.1;
    std::optional<std::vector<std::size_t>> units;
    std::vector<double> sigma = HyperGrid{}.sigma;
    std::vector<double> sigma_hat = HyperGrid{}.sigma_hat;
    std::vector<double> rho = HyperGrid{}.rho;
    std::vector<double> lambda = HyperGrid{}.lambda;
    std::size_t guesses = 10;
    std::size_t outer_folds = 3;
    std::size_t inner_folds = 5;
    std::size_t washout = 0;
    std::size_t workers = 1;

    template <typename T>
    static std::vector<T> parse_list(const std::string& key, const std::string& v) {
        std::vector<T> out;
        for (auto part : text::split(v, ',')) out.push_back(text::parse_or_throw<T>(part, key));
        if (out.empty()) throw InputError("empty list for " + key);
        return out;
    }

    static bool parse_bool(const std::string& key, const std::string& v) {
        if (v == "1" || v == "true") return true;
        if (v == "0" || v == "false") return false;
        throw InputError("expected 0 or 1 for " + key + ", got '" + v + "'");
    }

    void set(const std::string& key, const std::string& v) {
        if (key == "data") data = v;
        else if (key == "synth") synth = v;
        else if (key == "standardize") standardize = parse_bool(key, v);
        else if (key == "seed") seed = text::parse_or_throw<std::uint64_t>(v, key);
        else if (key == "layers") layers = text::parse_or_throw<std::size_t>(v, key);
        else if (key == "leak") leak = text::parse_or_throw<double>(v, key);
        else if (key == "units") units = parse_list<std::size_t>(key, v);
        else if (key == "sigma") sigma = parse_list<double>(key, v);
        else if (key == "sigma_hat") sigma_hat = parse_list<double>(key, v);
        else if (key == "rho") rho = parse_list<double>(key, v);
        else if (key == "lambda") lambda = parse_list<double>(key, v);
        else if (key == "guesses") guesses = text::parse_or_throw<std::size_t>(v, key);
        else if (key == "outer_folds") outer_folds = text::parse_or_throw<std::size_t>(v, key);
        else if (key == "inner_folds") inner_folds = text::parse_or_throw<std::size_t>(v, key);
        else if (key == "washout") washout = text::parse_or_throw<std::size_t>(v, key);
        else if (key == "workers") workers = text::parse_or_throw<std::size_t>(v, key);
        else throw InputError("unknown config key '" + key + "'");
    }

    void load_file(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read config '" + path.string() + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto t = text::trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos)
                throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected key=value", lineno);
            set(std::string(text::trim(t.substr(0, eq))), std::string(text::trim(t.substr(eq + 1))));
        }
    }

    void validate() const {
        if (data.has_value() == synth.has_value())
            throw InputError("exactly one data source is required: data=<dir> or synth=<spec>");
        if (!seed) throw InputError("a seed is required (no wall-clock seeding)");
    }

    HyperGrid grid() const {
        HyperGrid g = layers == 1 ? HyperGrid::shallow() : HyperGrid::deep();
        g.layers = layers;
        g.leak = leak;
        if (units) g.units = *units;
        g.sigma = sigma;
        g.sigma_hat = sigma_hat;
        g.rho = rho;
        g.lambda = lambda;
        return g;
    }

    template <typename T>
    static std::string list(const std::vector<T>& v) {
        std::vector<std::string> parts;
        for (const auto& x : v) {
            if constexpr (std::is_floating_point_v<T>) parts.push_back(text::format_real(x));
            else parts.push_back(std::to_string(x));
        }
        return text::join(parts, ",");
    }

    // Key-value lines that reproduce the run when fed back as a config file.
    std::string manifest_body() const {
        const auto g = grid();
        std::ostringstream os;
        if (data) os << "data=" << *data << '\n';
        if (synth) os << "synth=" << *synth << '\n';
        os << "standardize=" << (standardize ? 1 : 0) << '\n';
        os << "seed=" << *seed << '\n';
        os << "layers=" << layers << '\n';
        os << "leak=" << text::format_real(leak) << '\n';
        os << "units=" << list(g.units) << '\n';
        os << "sigma=" << list(sigma) << '\n';
        os << "sigma_hat=" << list(sigma_hat) << '\n';
        os << "rho=" << list(rho) << '\n';
        os << "lambda=" << list(lambda) << '\n';
        os << "guesses=" << guesses << '\n';
        os << "outer_folds=" << outer_folds << '\n';
        os << "inner_folds=" << inner_folds << '\n';
        os << "washout=" << washout << '\n';
        return os.str();
    }
};

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t per_class = 30;
    std::size_t length = 200;
    double difficulty = 0.0;

    static SynthSpec parse(const std::string& s) {
        const auto f = text::split(s, ',');
        if (f.size() != 4) throw InputError("synth spec must be seed,per_class,length,difficulty; got '" + s + "'");
        return {text::parse_or_throw<std::uint64_t>(f[0], "synth seed"),
                text::parse_or_throw<std::size_t>(f[1], "synth per_class"),
                text::parse_or_throw<std::size_t>(f[2], "synth length"),
                text::parse_or_throw<double>(f[3], "synth difficulty")};
    }
};

inline fs::path default_output(const std::string& sub) {
    const char* root = std::getenv(output_root_env);
    return fs::path(root && *root ? root : "deepesn-out") / sub;
}

// Refuses to write into a non-empty directory unless forced.
inline void prepare_output_dir(const fs::path& dir, bool force) {
    std::error_code ec;
    if (fs::exists(dir, ec)) {
        if (!fs::is_directory(dir, ec)) throw IoError("output path '" + dir.string() + "' is not a directory");
        if (!fs::is_empty(dir, ec) && !force)
            throw IoError("output directory '" + dir.string() + "' is not empty; pass --force to overwrite");
    }
    fs::create_directories(dir);
}

template <typename F>
void write_file(const fs::path& p, F&& body) {
    auto os = reports::open_out(p);
    body(os);
    if (!os) throw IoError("failed writing '" + p.string() + "'");
}

inline Dataset load_run_dataset(const RunConfig& rc) {
    Dataset d = rc.data ? read_dataset(*rc.data) : [&] {
        const auto s = SynthSpec::parse(*rc.synth);
        return synth_dataset(s.seed, s.per_class, s.length, s.difficulty);
    }();
    if (rc.standardize) standardize(d);
    return d;
}

inline std::string counts_line(const Dataset& d) {
    const auto c = d.counts();
    return "subjects=" + std::to_string(d.size()) + " PD=" + std::to_string(c.pd) +
           " Control=" + std::to_string(c.control);
}

inline void write_run_manifest(const fs::path& p, const std::string& command, const RunConfig& rc, const Dataset& d) {
    write_file(p, [&](std::ostream& os) {
        os << "# deepesn run manifest\n";
        os << "# software_version=" << DEEPESN_VERSION << '\n';
        os << "# command=" << command << '\n';
        os << "# dataset_source=" << d.provenance.source << '\n';
        os << "# dataset_test_filter="
           << (d.provenance.test_filter ? std::to_string(*d.provenance.test_filter) : "none") << '\n';
        os << "# dataset_standardized=" << (d.provenance.standardized ? 1 : 0) << '\n';
        os << "# dataset_" << counts_line(d) << '\n';
        os << "# std_form=population over reservoir guesses\n";
        os << rc.manifest_body();
    });
}

struct RunFlags {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string config;
    std::string out;
    bool force = false;
    bool save_models = false;
    bool standardize = false;
    CLI::Option* standardize_opt = nullptr;
};

inline void add_run_flags(CLI::App* sub, RunFlags& f) {
    sub->add_option("--config", f.config, "key=value config file (flags override it)");
    const std::vector<std::pair<std::string, std::string>> keys{
        {"data", "ingested dataset directory"},
        {"synth", "synthetic dataset spec seed,per_class,length,difficulty"},
        {"seed", "master seed"},
        {"layers", "number of reservoir layers (1 = shallowESN)"},
        {"leak", "leak rate of every layer"},
        {"units", "units per layer, comma-separated grid values"},
        {"sigma", "input scaling grid values"},
        {"sigma-hat", "inter-layer scaling grid values"},
        {"rho", "spectral radius grid values"},
        {"lambda", "readout regularization grid values"},
        {"guesses", "reservoir guesses per configuration"},
        {"outer-folds", "outer cross-validation folds"},
        {"inner-folds", "inner model-selection folds"},
        {"washout", "leading steps excluded from the mean state"},
        {"workers", "worker threads"},
    };
    for (const auto& [flag, help] : keys) {
        std::string key = flag;
        std::replace(key.begin(), key.end(), '-', '_');
        f.options[key] = sub->add_option("--" + flag, f.values[key], help);
    }
    f.standardize_opt = sub->add_flag("--standardize", f.standardize, "z-score every channel per sequence");
    sub->add_option("--out", f.out, "output directory");
    sub->add_flag("--force", f.force, "overwrite a non-empty output directory");
    sub->add_flag("--save-models", f.save_models, "write model bundles of the final per-fold readouts");
}

inline RunConfig resolve_run_config(const RunFlags& f) {
    RunConfig rc;
    if (!f.config.empty()) rc.load_file(f.config);
    for (const auto& [key, opt] : f.options)
        if (opt->count() > 0) rc.set(key, f.values.at(key));
    // Flags win: an explicit data source replaces the other kind from the file.
    if (f.options.at("data")->count() && !f.options.at("synth")->count()) rc.synth.reset();
    if (f.options.at("synth")->count() && !f.options.at("data")->count()) rc.data.reset();
    if (f.standardize_opt->count()) rc.standardize = true;
    rc.validate();
    return rc;
}

inline int cmd_run(const std::string& command, const RunFlags& f, std::ostream& out) {
    const RunConfig rc = resolve_run_config(f);
    const fs::path dir = f.out.empty() ? default_output(command) : fs::path(f.out);
    const Dataset d = load_run_dataset(rc);
    const FoldPlan plan = make_fold_plan(d, *rc.seed, rc.outer_folds, rc.inner_folds);
    EvalOptions opts;
    opts.master_seed = *rc.seed;
    opts.guesses = rc.guesses;
    opts.workers = rc.workers;
    opts.washout = rc.washout;
    const bool ensemble = command == "ensemble";

    prepare_output_dir(dir, f.force);
    const GridResult g = grid_search(d, plan, rc.grid(), opts, ensemble);
    const auto& rep = g.final;

    write_file(dir / "scores.csv", [&](std::ostream& os) { reports::write_score_table(os, g); });
    write_file(dir / "selection.csv", [&](std::ostream& os) { reports::write_selection(os, g); });
    write_file(dir / "summary.csv", [&](std::ostream& os) { reports::write_summary(os, rep); });
    write_file(dir / "predictions.csv",
               [&](std::ostream& os) { reports::write_prediction_rows(os, reports::guess_rows(d, plan, rep)); });
    if (ensemble) {
        write_file(dir / "ensemble_summary.csv", [&](std::ostream& os) { reports::write_ensemble_summary(os, rep); });
        write_file(dir / "ensemble_predictions.csv",
                   [&](std::ostream& os) { reports::write_prediction_rows(os, reports::ensemble_rows(d, plan, rep)); });
    }
    if (f.save_models) {
        fs::create_directories(dir / "models");
        for (const auto& o : rep.outcomes)
            save_bundle(dir / "models" / ("fold" + std::to_string(o.fold) + "_guess" + std::to_string(o.guess) + ".bundle"),
                        ModelBundle{build_stack(o.reservoir), o.readout});
    }
    write_run_manifest(dir / "run_manifest.txt", command, rc, d);

    out << rep.model_name << ": " << counts_line(d) << ", " << g.configs.size() << " configs\n";
    for (std::size_t fo = 0; fo < g.selected.size(); ++fo)
        out << "  fold " << fo << " selected {" << g.configs[g.selected[fo]].describe() << "}\n";
    out << "  TR " << reports::pct(rep.train.mean) << " (" << reports::pct(rep.train.std) << ")  VL "
        << reports::pct(rep.validation.mean) << " (" << reports::pct(rep.validation.std) << ")  TS "
        << reports::pct(rep.test.mean) << " (" << reports::pct(rep.test.std) << ")\n";
    if (ensemble)
        out << "  ensemble TS " << reports::pct(rep.ensemble->test.accuracy) << " SEN "
            << reports::pct(rep.ensemble->test.sensitivity) << " SPEC " << reports::pct(rep.ensemble->test.specificity)
            << '\n';
    out << "wrote " << dir.string() << '\n';
    return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Deep echo state network classification of tablet spiral recordings"};
    app.set_version_flag("--version", DEEPESN_VERSION);
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "convert a tablet dataset tree into canonical sequence files");
    std::string in_root, in_out, in_layout = default_layout, in_test = "0";
    bool in_force = false, in_std = false;
    ingest->add_option("--root", in_root, "dataset root directory")->required();
    ingest->add_option("--out", in_out, "output directory");
    ingest->add_option("--layout", in_layout, "directory-name to label map")->capture_default_str();
    ingest->add_option("--test-id", in_test, "test type to keep (0 static spiral, 1 dynamic, 2 circular, all)")
        ->capture_default_str();
    ingest->add_flag("--standardize", in_std, "z-score every channel per sequence");
    ingest->add_flag("--force", in_force, "overwrite a non-empty output directory");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic two-class dataset");
    std::uint64_t sy_seed = 0;
    std::size_t sy_per = 30, sy_len = 200;
    double sy_diff = 0.0;
    std::string sy_out;
    bool sy_force = false;
    synth->add_option("--seed", sy_seed, "generator seed")->required();
    synth->add_option("--per-class", sy_per, "subjects per class")->capture_default_str();
    synth->add_option("--length", sy_len, "steps per sequence")->capture_default_str();
    synth->add_option("--difficulty", sy_diff, "noise scale")->capture_default_str();
    synth->add_option("--out", sy_out, "output directory");
    synth->add_flag("--force", sy_force, "overwrite a non-empty output directory");

    // evaluate / ensemble
    RunFlags ev_flags, en_flags;
    auto* evaluate = app.add_subcommand("evaluate", "nested cross-validation with grid search");
    add_run_flags(evaluate, ev_flags);
    auto* ensemble = app.add_subcommand("ensemble", "evaluate plus output-averaging ensembles of the guesses");
    add_run_flags(ensemble, en_flags);

    // compare
    auto* compare = app.add_subcommand("compare", "McNemar test between two prediction files");
    std::string cmp_a, cmp_b, cmp_out;
    compare->add_option("first", cmp_a, "predictions of model A")->required();
    compare->add_option("second", cmp_b, "predictions of model B")->required();
    compare->add_option("--out", cmp_out, "result file");

    // describe-model
    auto* describe = app.add_subcommand("describe-model", "print the contents of a model bundle");
    std::string bundle_path;
    describe->add_option("bundle", bundle_path, "bundle file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*ingest) {
            std::optional<int> test_filter;
            if (in_test != "all") test_filter = text::parse_or_throw<int>(in_test, "test id");
            Dataset d = build_dataset(in_root, test_filter, DatasetLayout::parse(in_layout), in_std);
            const fs::path dir = in_out.empty() ? default_output("ingest") : fs::path(in_out);
            prepare_output_dir(dir, in_force);
            write_dataset(dir, d);
            out << "ingested " << counts_line(d) << " into " << dir.string() << '\n';
            return 0;
        }
        if (*synth) {
            const Dataset d = synth_dataset(sy_seed, sy_per, sy_len, sy_diff);
            const fs::path dir = sy_out.empty() ? default_output("synth") : fs::path(sy_out);
            prepare_output_dir(dir, sy_force);
            write_dataset(dir, d);
            out << "generated " << counts_line(d) << " into " << dir.string() << '\n';
            return 0;
        }
        if (*evaluate) return cmd_run("evaluate", ev_flags, out);
        if (*ensemble) return cmd_run("ensemble", en_flags, out);
        if (*compare) {
            std::size_t pairs = 0;
            const auto r = reports::compare_predictions(reports::read_prediction_rows(cmp_a),
                                                        reports::read_prediction_rows(cmp_b), &pairs);
            std::ostringstream body;
            body << "first;second;pairs;b;c;method;statistic;p_value\n"
                 << cmp_a << ';' << cmp_b << ';' << pairs << ';' << r.b << ';' << r.c << ';' << method_name(r.method)
                 << ';' << text::format_real(r.statistic) << ';' << text::format_real(r.p_value) << '\n';
            const fs::path dest = cmp_out.empty() ? default_output("compare") / "mcnemar.csv" : fs::path(cmp_out);
            if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
            write_file(dest, [&](std::ostream& os) { os << body.str(); });
            out << "pairs=" << pairs << " b=" << r.b << " c=" << r.c << " method=" << method_name(r.method)
                << " p=" << text::format_real(r.p_value) << '\n';
            return 0;
        }
        if (*describe) {
            const auto b = load_bundle(bundle_path);
            const auto& c = b.stack.config;
            out << "format_version=" << bundle_format_version << '\n'
                << "model=" << (c.num_layers == 1 ? "shallowESN" : "DeepESN") << '\n'
                << "num_layers=" << c.num_layers << '\n'
                << "units_per_layer=" << c.units_per_layer << '\n'
                << "input_dim=" << c.input_dim << '\n'
                << "leak_rates=" << RunConfig::list(c.leak_rates) << '\n'
                << "input_scaling=" << text::format_real(c.input_scaling) << '\n'
                << "inter_layer_scaling=" << text::format_real(c.inter_layer_scaling) << '\n'
                << "spectral_radius=" << text::format_real(c.spectral_radius) << '\n'
                << "master_seed=" << c.master_seed << '\n'
                << "w_in_norm=" << text::format_real(spectral_norm(b.stack.w_in)) << '\n';
            double max_rho = 0.0;
            for (std::size_t l = 0; l < c.num_layers; ++l)
                max_rho = std::max(max_rho, spectral_radius(effective_recurrence(b.stack, l)));
            out << "max_effective_radius=" << text::format_real(max_rho) << '\n';
            for (std::size_t l = 1; l < c.num_layers; ++l)
                out << "w_inter_norm[" << l << "]=" << text::format_real(spectral_norm(b.stack.w_inter[l - 1])) << '\n';
            if (b.readout)
                out << "readout=" << b.readout->w_out.rows() << "x" << b.readout->w_out.cols() << '\n';
            else
                out << "readout=none\n";
            return 0;
        }
    } catch (const std::exception& e) {
        err << "deepesn: error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace deepesn::cli
