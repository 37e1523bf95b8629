#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deepesn/errors.hpp"
#include "deepesn/matrix.hpp"
#include "deepesn/random.hpp"
#include "deepesn/readout.hpp"
#include "deepesn/text.hpp"

namespace deepesn {

namespace fs = std::filesystem;

// One line of a tablet recording: X; Y; Z; Pressure; GripAngle; Timestamp; Test_ID.
struct TabletRecord {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;
    std::int64_t pressure = 0;
    std::int64_t grip_angle = 0;
    std::int64_t timestamp = 0;
    std::int64_t test_id = 0;

    friend bool operator==(const TabletRecord&, const TabletRecord&) = default;
};

// Test-type codes used by the tablet recordings.
enum class TestType : int { StaticSpiral = 0, DynamicSpiral = 1, CircularMotion = 2 };

// Model channel order. Fixed: trained bundles depend on it.
inline constexpr std::size_t num_channels = 4;
inline constexpr std::array<std::string_view, num_channels> channel_names{"x", "y", "pressure", "grip_angle"};
inline constexpr std::size_t pressure_channel = 2;

struct Sequence {
    std::string subject_id;
    Label label = Label::Control;
    int test_id = -1;    // -1 for synthetic data
    Matrix channels;     // num_channels x n

    std::size_t length() const noexcept { return channels.cols(); }

    friend bool operator==(const Sequence&, const Sequence&) = default;
};

struct Provenance {
    std::string source;
    std::optional<int> test_filter;
    bool standardized = false;
    std::string layout;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ClassCounts {
    std::size_t control = 0;
    std::size_t pd = 0;
};

struct Dataset {
    std::vector<Sequence> sequences;
    Provenance provenance;

    std::size_t size() const noexcept { return sequences.size(); }

    ClassCounts counts() const {
        ClassCounts c;
        for (const auto& s : sequences) (s.label == Label::PD ? c.pd : c.control)++;
        return c;
    }

    std::vector<Label> labels() const {
        std::vector<Label> out;
        out.reserve(sequences.size());
        for (const auto& s : sequences) out.push_back(s.label);
        return out;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

namespace detail {

inline bool is_tablet_header(const std::vector<std::string_view>& fields) {
    static constexpr std::array<std::string_view, 7> names{"x", "y", "z", "pressure", "gripangle", "timestamp",
                                                          "test_id"};
    if (fields.size() != names.size()) return false;
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::string f(text::trim(fields[i]));
        std::transform(f.begin(), f.end(), f.begin(), [](unsigned char c) { return std::tolower(c); });
        if (f != names[i]) return false;
    }
    return true;
}

inline void validate_sequence(const Sequence& s) {
    if (s.subject_id.empty()) throw DatasetError("sequence without subject id");
    if (s.channels.rows() != num_channels)
        throw DatasetError("sequence " + s.subject_id + " has " + std::to_string(s.channels.rows()) + " channels");
    if (s.channels.cols() == 0) throw DatasetError("sequence " + s.subject_id + " is empty");
}

inline void check_unique(const std::vector<Sequence>& seqs) {
    std::set<std::string> seen;
    for (const auto& s : seqs)
        if (!seen.insert(s.subject_id).second) throw DatasetError("duplicate subject id '" + s.subject_id + "'");
}

} // namespace detail

// Records whose test id matches, in file order. Blank lines are skipped and a
// leading column-name header is accepted; anything else must be seven integers.
inline std::vector<TabletRecord> parse_tablet_file(const fs::path& path, std::optional<int> expected_test_id) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::vector<TabletRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        const auto fields = text::split(line, ';');
        if (lineno == 1 && detail::is_tablet_header(fields)) continue;
        if (fields.size() != 7)
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields, got " +
                                 std::to_string(fields.size()) + ": '" + std::string(text::trim(line)) + "'",
                             lineno);
        std::array<std::int64_t, 7> v{};
        for (std::size_t i = 0; i < 7; ++i)
            if (!text::parse_number(fields[i], v[i]))
                throw ParseError(path.string() + ":" + std::to_string(lineno) + ": field " + std::to_string(i + 1) +
                                     " is not an integer: '" + std::string(text::trim(line)) + "'",
                                 lineno);
        const TabletRecord r{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
        if (!expected_test_id || r.test_id == *expected_test_id) out.push_back(r);
    }
    return out;
}

// Maps directory names to labels, e.g. "control=Control,parkinson=PD".
struct DatasetLayout {
    std::vector<std::pair<std::string, Label>> entries;

    static DatasetLayout parse(std::string_view spec) {
        DatasetLayout l;
        for (auto item : text::split(spec, ',')) {
            item = text::trim(item);
            if (item.empty()) continue;
            const auto eq = item.find('=');
            if (eq == std::string_view::npos) throw InputError("layout entry '" + std::string(item) + "' lacks '='");
            l.entries.emplace_back(std::string(text::trim(item.substr(0, eq))),
                                   parse_label(text::trim(item.substr(eq + 1))));
        }
        if (l.entries.empty()) throw InputError("empty dataset layout");
        return l;
    }

    std::optional<Label> label_for(const std::string& dirname) const {
        for (const auto& [name, label] : entries)
            if (name == dirname) return label;
        return std::nullopt;
    }

    std::string to_string() const {
        std::vector<std::string> parts;
        for (const auto& [name, label] : entries) parts.push_back(name + "=" + std::string(label_name(label)));
        return text::join(parts, ",");
    }
};

inline const char* default_layout = "control=Control,parkinson=PD";

// Per-channel z-score within each sequence. A constant channel becomes zeros.
inline void standardize(Sequence& s) {
    const std::size_t n = s.length();
    for (std::size_t c = 0; c < s.channels.rows(); ++c) {
        auto row = s.channels.row(c);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        for (double& v : row) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    }
}

inline void standardize(Dataset& d) {
    if (d.provenance.standardized) return;
    for (auto& s : d.sequences) standardize(s);
    d.provenance.standardized = true;
}

inline Sequence sequence_from_records(std::string subject_id, Label label, int test_id,
                                      const std::vector<TabletRecord>& recs) {
    Sequence s{std::move(subject_id), label, test_id, Matrix(num_channels, recs.size())};
    for (std::size_t t = 0; t < recs.size(); ++t) {
        s.channels(0, t) = static_cast<double>(recs[t].x);
        s.channels(1, t) = static_cast<double>(recs[t].y);
        s.channels(2, t) = static_cast<double>(recs[t].pressure);
        s.channels(3, t) = static_cast<double>(recs[t].grip_angle);
    }
    return s;
}

// Walks root for *.txt files whose parent directory is named in the layout.
// One sequence per file; files without records of the selected test type are
// skipped. Subject id is the file stem.
inline Dataset build_dataset(const fs::path& root, std::optional<int> test_filter,
                             const DatasetLayout& layout = DatasetLayout::parse(default_layout),
                             bool standardize_channels = false) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError("dataset root '" + root.string() + "' is not a directory");
    std::vector<std::pair<fs::path, Label>> files;
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        const auto& p = it->path();
        if (p.extension() != ".txt") continue;
        if (auto label = layout.label_for(p.parent_path().filename().string())) files.emplace_back(p, *label);
    }
    std::sort(files.begin(), files.end());

    Dataset d;
    d.provenance.source = root.string();
    d.provenance.test_filter = test_filter;
    d.provenance.layout = layout.to_string();
    for (const auto& [path, label] : files) {
        const auto recs = parse_tablet_file(path, test_filter);
        if (recs.empty()) continue;
        d.sequences.push_back(
            sequence_from_records(path.stem().string(), label, test_filter ? *test_filter : -1, recs));
    }
    detail::check_unique(d.sequences);
    const auto c = d.counts();
    if (c.control == 0) throw DatasetError("no Control subjects found under '" + root.string() + "'");
    if (c.pd == 0) throw DatasetError("no PD subjects found under '" + root.string() + "'");
    if (standardize_channels) standardize(d);
    return d;
}

// Two class-conditional regimes sharing the channel layout of a tablet
// spiral: a growing spiral (x, y), a pressure oscillation and a slow grip
// oscillation, all locked to the drawing phase. Control draws 4 turns per
// sequence and PD draws 9, so only the frequency separates the classes.
// Phase and amplitude vary per subject; difficulty scales additive Gaussian
// noise on every channel.
inline Dataset synth_dataset(std::uint64_t seed, std::size_t n_per_class, std::size_t length, double difficulty) {
    if (n_per_class < 1) throw InputError("synth_dataset: n_per_class must be >= 1");
    if (length < 10) throw InputError("synth_dataset: length must be >= 10");
    if (!(difficulty >= 0.0)) throw InputError("synth_dataset: difficulty must be >= 0");

    Dataset d;
    d.provenance.source = "synthetic:seed=" + std::to_string(seed) + ",per_class=" + std::to_string(n_per_class) +
                          ",length=" + std::to_string(length) + ",difficulty=" + text::format_real(difficulty);
    const double two_pi = 2.0 * std::numbers::pi;
    for (Label label : {Label::Control, Label::PD}) {
        const double turns = label == Label::PD ? 9.0 : 4.0;
        const double omega = two_pi * turns / static_cast<double>(length);
        for (std::size_t i = 0; i < n_per_class; ++i) {
            Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label), i));
            const double phase = rng.uniform(0.0, two_pi);
            const double amp = rng.uniform(0.9, 1.1);
            Sequence s;
            char id[32];
            std::snprintf(id, sizeof id, "%s_%04zu", label == Label::PD ? "SP" : "SC", i + 1);
            s.subject_id = id;
            s.label = label;
            s.channels = Matrix(num_channels, length);
            for (std::size_t t = 0; t < length; ++t) {
                const double r = amp * static_cast<double>(t + 1) / static_cast<double>(length);
                const double th = omega * static_cast<double>(t) + phase;
                s.channels(0, t) = r * std::cos(th);
                s.channels(1, t) = r * std::sin(th);
                s.channels(2, t) = 0.5 + 0.25 * std::sin(2.0 * th);
                s.channels(3, t) = 0.3 * std::cos(0.5 * th);
            }
            if (difficulty > 0.0)
                for (double& v : s.channels.entries()) v += difficulty * rng.normal();
            d.sequences.push_back(std::move(s));
        }
    }
    return d;
}

// Pearson correlation between per-subject mean pressure and label (PD = 1).
inline double pressure_label_correlation(const Dataset& d) {
    const std::size_t n = d.size();
    if (n < 2) throw UndefinedMetricError("pressure_label_correlation: fewer than two subjects");
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = d.sequences[i].channels.row(pressure_channel);
        double m = 0.0;
        for (double v : row) m += v;
        p[i] = m / static_cast<double>(row.size());
        y[i] = d.sequences[i].label == Label::PD ? 1.0 : 0.0;
    }
    double mp = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mp += p[i];
        my += y[i];
    }
    mp /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (p[i] - mp) * (y[i] - my);
        sxx += (p[i] - mp) * (p[i] - mp);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw UndefinedMetricError("pressure_label_correlation: mean pressure has zero variance");
    if (syy == 0.0) throw UndefinedMetricError("pressure_label_correlation: only one class present");
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Canonical on-disk format.
//
// <dir>/manifest.csv:
//   # deepesn dataset manifest v1
//   # source=<text>
//   # test_filter=<int or none>
//   # standardized=<0|1>
//   # layout=<text>
//   subject_id;label;length;file
//   <one row per subject, dataset order>
//
// <dir>/<subject_id>.seq:
//   subject_id=<id>;label=<Control|PD>;test_id=<int>
//   <n rows of x;y;pressure;grip_angle, shortest round-trip decimal>
//
// Lines end with '\n'. Reading back yields a bit-identical Dataset.
// ---------------------------------------------------------------------------

inline constexpr std::string_view manifest_magic = "# deepesn dataset manifest v1";

inline void write_sequence(std::ostream& os, const Sequence& s) {
    os << "subject_id=" << s.subject_id << ";label=" << label_name(s.label) << ";test_id=" << s.test_id << '\n';
    for (std::size_t t = 0; t < s.length(); ++t) {
        for (std::size_t c = 0; c < num_channels; ++c) {
            if (c) os << ';';
            os << text::format_real(s.channels(c, t));
        }
        os << '\n';
    }
}

inline Sequence read_sequence(std::istream& is, const std::string& origin) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError(origin + ": missing header", 1);
    Sequence s;
    bool have_id = false, have_label = false, have_test = false;
    for (auto kv : text::split(line, ';')) {
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) throw ParseError(origin + ":1: malformed header field", 1);
        const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "subject_id") {
            s.subject_id = std::string(val);
            have_id = true;
        } else if (key == "label") {
            s.label = parse_label(val);
            have_label = true;
        } else if (key == "test_id") {
            if (!text::parse_number(val, s.test_id)) throw ParseError(origin + ":1: bad test_id", 1);
            have_test = true;
        }
    }
    if (!have_id || !have_label || !have_test) throw ParseError(origin + ":1: incomplete header", 1);
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        const auto fields = text::split(line, ';');
        if (fields.size() != num_channels)
            throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 4 fields: '" + line + "'", lineno);
        for (auto f : fields) {
            double v;
            if (!text::parse_number(f, v))
                throw ParseError(origin + ":" + std::to_string(lineno) + ": bad number '" + std::string(f) + "'",
                                 lineno);
            values.push_back(v);
        }
    }
    const std::size_t n = values.size() / num_channels;
    s.channels = Matrix(num_channels, n);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < num_channels; ++c) s.channels(c, t) = values[t * num_channels + c];
    detail::validate_sequence(s);
    return s;
}

inline void write_manifest(std::ostream& os, const Dataset& d) {
    os << manifest_magic << '\n';
    os << "# source=" << d.provenance.source << '\n';
    os << "# test_filter=" << (d.provenance.test_filter ? std::to_string(*d.provenance.test_filter) : "none") << '\n';
    os << "# standardized=" << (d.provenance.standardized ? 1 : 0) << '\n';
    os << "# layout=" << d.provenance.layout << '\n';
    os << "subject_id;label;length;file\n";
    for (const auto& s : d.sequences)
        os << s.subject_id << ';' << label_name(s.label) << ';' << s.length() << ';' << s.subject_id << ".seq\n";
}

inline void write_dataset(const fs::path& dir, const Dataset& d) {
    fs::create_directories(dir);
    for (const auto& s : d.sequences) {
        std::ofstream os(dir / (s.subject_id + ".seq"), std::ios::binary);
        if (!os) throw IoError("cannot write '" + (dir / (s.subject_id + ".seq")).string() + "'");
        write_sequence(os, s);
    }
    std::ofstream os(dir / "manifest.csv", std::ios::binary);
    if (!os) throw IoError("cannot write '" + (dir / "manifest.csv").string() + "'");
    write_manifest(os, d);
}

inline Dataset read_dataset(const fs::path& dir) {
    const auto mpath = dir / "manifest.csv";
    std::ifstream in(mpath, std::ios::binary);
    if (!in) throw IoError("cannot read '" + mpath.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != manifest_magic) throw ParseError(mpath.string() + ":1: not a dataset manifest", 1);
    Dataset d;
    std::size_t lineno = 1;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.rfind("# ", 0) == 0) {
            const auto kv = std::string_view(line).substr(2);
            const auto eq = kv.find('=');
            if (eq == std::string_view::npos) continue;
            const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
            if (key == "source") d.provenance.source = std::string(val);
            else if (key == "test_filter") {
                if (val != "none") d.provenance.test_filter = text::parse_or_throw<int>(val, "test_filter");
            } else if (key == "standardized") d.provenance.standardized = val == "1";
            else if (key == "layout") d.provenance.layout = std::string(val);
            continue;
        }
        if (!header_seen) {
            if (line != "subject_id;label;length;file")
                throw ParseError(mpath.string() + ":" + std::to_string(lineno) + ": bad column header", lineno);
            header_seen = true;
            continue;
        }
        const auto f = text::split(line, ';');
        if (f.size() != 4)
            throw ParseError(mpath.string() + ":" + std::to_string(lineno) + ": expected 4 fields", lineno);
        const auto spath = dir / std::string(f[3]);
        std::ifstream ss(spath, std::ios::binary);
        if (!ss) throw IoError("cannot read '" + spath.string() + "'");
        Sequence s = read_sequence(ss, spath.string());
        if (s.subject_id != f[0] || label_name(s.label) != f[1] ||
            std::to_string(s.length()) != std::string(f[2]))
            throw DatasetError("manifest row " + std::to_string(lineno) + " disagrees with " + spath.string());
        d.sequences.push_back(std::move(s));
    }
    detail::check_unique(d.sequences);
    return d;
}

} // namespace deepesn
