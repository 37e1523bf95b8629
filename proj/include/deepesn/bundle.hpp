#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "deepesn/errors.hpp"
#include "deepesn/readout.hpp"
#include "deepesn/reservoir.hpp"
#include "deepesn/text.hpp"

// Model bundle: a line-oriented text container. Reals use the shortest
// round-trip decimal form, so write -> read is bit-exact.
//
//   deepesn-model-bundle
//   format_version=1
//   num_layers=<int>
//   units_per_layer=<int>
//   leak_rates=<r>,<r>,...
//   input_scaling=<r>
//   inter_layer_scaling=<r>
//   spectral_radius=<r>
//   input_dim=<int>
//   master_seed=<uint64>
//   redraws=<int>
//   matrix w_in <rows> <cols>
//   <rows lines of space-separated reals>
//   matrix w_hat <layer> <rows> <cols>         (one per layer, 0-based)
//   matrix w_inter <layer> <rows> <cols>       (layers 1..N_L-1)
//   matrix w_out <rows> <cols>                 (optional trained readout)
//   end
namespace deepesn {

inline constexpr int bundle_format_version = 1;

struct ModelBundle {
    ReservoirStack stack;
    std::optional<Readout> readout;

    friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

namespace detail {

inline void write_matrix(std::ostream& os, const std::string& header, const Matrix& m) {
    os << "matrix " << header << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) os << ' ';
            os << text::format_real(m(i, j));
        }
        os << '\n';
    }
}

class BundleReader {
public:
    explicit BundleReader(std::istream& is) : is_(is) {}

    std::string line() {
        std::string l;
        if (!std::getline(is_, l)) throw ParseError("bundle: unexpected end of input at line " + std::to_string(n_ + 1), n_ + 1);
        ++n_;
        return l;
    }

    std::string value(const std::string& key) {
        const auto l = line();
        const auto prefix = key + "=";
        if (l.rfind(prefix, 0) != 0) fail("expected '" + key + "='");
        return l.substr(prefix.size());
    }

    template <typename T>
    T number(const std::string& key) {
        T v{};
        if (!text::parse_number(value(key), v)) fail("bad value for " + key);
        return v;
    }

    // Parses "matrix <name> [index] <rows> <cols>" followed by the rows.
    Matrix matrix(const std::string& name, std::optional<std::size_t> index) {
        std::istringstream hdr(line());
        std::string word, got;
        hdr >> word >> got;
        if (word != "matrix" || got != name) fail("expected matrix " + name);
        if (index) {
            std::size_t idx = 0;
            hdr >> idx;
            if (!hdr || idx != *index) fail("matrix " + name + " has wrong layer index");
        }
        std::size_t rows = 0, cols = 0;
        hdr >> rows >> cols;
        if (!hdr) fail("matrix " + name + " lacks dimensions");
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            const auto l = line();
            const auto parts = text::split(l, ' ');
            if (parts.size() != cols) fail("matrix " + name + " row has " + std::to_string(parts.size()) + " entries");
            for (std::size_t j = 0; j < cols; ++j)
                if (!text::parse_number(parts[j], m(i, j))) fail("bad real in matrix " + name);
        }
        return m;
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw ParseError("bundle line " + std::to_string(n_) + ": " + why, n_);
    }

private:
    std::istream& is_;
    std::size_t n_ = 0;
};

inline void expect_shape(const Matrix& m, std::size_t r, std::size_t c, const std::string& what) {
    if (m.rows() != r || m.cols() != c)
        throw DimensionError("bundle: " + what + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                             ", expected " + std::to_string(r) + "x" + std::to_string(c));
}

} // namespace detail

inline void write_bundle(std::ostream& os, const ModelBundle& b) {
    const auto& c = b.stack.config;
    os << "deepesn-model-bundle\n";
    os << "format_version=" << bundle_format_version << '\n';
    os << "num_layers=" << c.num_layers << '\n';
    os << "units_per_layer=" << c.units_per_layer << '\n';
    std::vector<std::string> leaks;
    for (double a : c.leak_rates) leaks.push_back(text::format_real(a));
    os << "leak_rates=" << text::join(leaks, ",") << '\n';
    os << "input_scaling=" << text::format_real(c.input_scaling) << '\n';
    os << "inter_layer_scaling=" << text::format_real(c.inter_layer_scaling) << '\n';
    os << "spectral_radius=" << text::format_real(c.spectral_radius) << '\n';
    os << "input_dim=" << c.input_dim << '\n';
    os << "master_seed=" << c.master_seed << '\n';
    os << "redraws=" << b.stack.redraws << '\n';
    detail::write_matrix(os, "w_in", b.stack.w_in);
    for (std::size_t l = 0; l < b.stack.w_hat.size(); ++l)
        detail::write_matrix(os, "w_hat " + std::to_string(l), b.stack.w_hat[l]);
    for (std::size_t l = 1; l < c.num_layers; ++l)
        detail::write_matrix(os, "w_inter " + std::to_string(l), b.stack.w_inter[l - 1]);
    if (b.readout) detail::write_matrix(os, "w_out", b.readout->w_out);
    os << "end\n";
}

inline ModelBundle read_bundle(std::istream& is) {
    detail::BundleReader r(is);
    if (r.line() != "deepesn-model-bundle") r.fail("not a model bundle");
    const int version = r.number<int>("format_version");
    if (version != bundle_format_version) r.fail("unsupported format_version " + std::to_string(version));
    ModelBundle b;
    auto& c = b.stack.config;
    c.num_layers = r.number<std::size_t>("num_layers");
    c.units_per_layer = r.number<std::size_t>("units_per_layer");
    c.leak_rates.clear();
    for (auto part : text::split(r.value("leak_rates"), ',')) {
        double a;
        if (!text::parse_number(part, a)) r.fail("bad leak rate");
        c.leak_rates.push_back(a);
    }
    c.input_scaling = r.number<double>("input_scaling");
    c.inter_layer_scaling = r.number<double>("inter_layer_scaling");
    c.spectral_radius = r.number<double>("spectral_radius");
    c.input_dim = r.number<std::size_t>("input_dim");
    c.master_seed = r.number<std::uint64_t>("master_seed");
    b.stack.redraws = r.number<std::uint32_t>("redraws");
    c.validate();

    const std::size_t nr = c.units_per_layer;
    b.stack.w_in = r.matrix("w_in", std::nullopt);
    detail::expect_shape(b.stack.w_in, nr, c.input_dim, "w_in");
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        b.stack.w_hat.push_back(r.matrix("w_hat", l));
        detail::expect_shape(b.stack.w_hat.back(), nr, nr, "w_hat");
    }
    for (std::size_t l = 1; l < c.num_layers; ++l) {
        b.stack.w_inter.push_back(r.matrix("w_inter", l));
        detail::expect_shape(b.stack.w_inter.back(), nr, nr, "w_inter");
    }
    const auto next = r.line();
    if (next.rfind("matrix w_out", 0) == 0) {
        std::istringstream hdr(next.substr(12));
        std::size_t rows = 0, cols = 0;
        hdr >> rows >> cols;
        if (!hdr) r.fail("matrix w_out lacks dimensions");
        detail::expect_shape(Matrix(rows, cols), num_classes, c.state_dim() + 1, "w_out");
        Matrix w(rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            const auto l = r.line();
            const auto parts = text::split(l, ' ');
            if (parts.size() != cols) r.fail("w_out row has " + std::to_string(parts.size()) + " entries");
            for (std::size_t j = 0; j < cols; ++j)
                if (!text::parse_number(parts[j], w(i, j))) r.fail("bad real in w_out");
        }
        b.readout = Readout{std::move(w)};
        if (r.line() != "end") r.fail("expected 'end'");
    } else if (next != "end") {
        r.fail("expected 'end' or matrix w_out");
    }
    return b;
}

inline void save_bundle(const std::filesystem::path& path, const ModelBundle& b) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    write_bundle(os, b);
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read '" + path.string() + "'");
    return read_bundle(is);
}

} // namespace deepesn
