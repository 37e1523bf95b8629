#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepesn/errors.hpp"
#include "deepesn/linalg.hpp"
#include "deepesn/matrix.hpp"

namespace deepesn {

enum class Label : std::uint8_t { Control = 0, PD = 1 };

inline constexpr std::size_t num_classes = 2;

inline std::string_view label_name(Label l) { return l == Label::PD ? "PD" : "Control"; }

inline Label parse_label(std::string_view s) {
    if (s == "PD") return Label::PD;
    if (s == "Control") return Label::Control;
    throw InputError("unknown label '" + std::string(s) + "'");
}

using Scores = std::array<double, num_classes>;

// Argmax; an exact tie goes to the lower class index (Control).
inline Label decide(const Scores& s) { return s[1] > s[0] ? Label::PD : Label::Control; }

struct TrainingSet {
    std::vector<std::vector<double>> features; // mean states chi(s)
    std::vector<Label> labels;
};

// W_out is N_Y x (F + 1); the last column multiplies a constant 1.
struct Readout {
    Matrix w_out;

    std::size_t feature_dim() const { return w_out.cols() - 1; }

    friend bool operator==(const Readout&, const Readout&) = default;
};

struct Classification {
    Label label;
    Scores scores;
};

inline Readout train_readout(const TrainingSet& ts, double lambda) {
    if (ts.features.empty()) throw TrainingError("train_readout: empty training set");
    if (ts.features.size() != ts.labels.size())
        throw TrainingError("train_readout: " + std::to_string(ts.features.size()) + " feature vectors but " +
                            std::to_string(ts.labels.size()) + " labels");
    std::array<std::size_t, num_classes> counts{};
    for (Label l : ts.labels) ++counts[static_cast<std::size_t>(l)];
    if (counts[0] == 0 || counts[1] == 0) throw TrainingError("train_readout: training set holds a single class");

    const std::size_t f = ts.features.front().size(), s = ts.features.size();
    Matrix x(f + 1, s), t(num_classes, s);
    for (std::size_t j = 0; j < s; ++j) {
        const auto& chi = ts.features[j];
        if (chi.size() != f) throw DimensionError("train_readout: ragged feature vectors");
        for (std::size_t i = 0; i < f; ++i) x(i, j) = chi[i];
        x(f, j) = 1.0;
        t(static_cast<std::size_t>(ts.labels[j]), j) = 1.0;
    }
    return Readout{ridge_solve(x, t, lambda)};
}

inline Scores score(const Readout& r, std::span<const double> chi) {
    const std::size_t f = r.feature_dim();
    if (chi.size() != f)
        throw DimensionError("classify: feature vector has length " + std::to_string(chi.size()) +
                             ", readout expects " + std::to_string(f));
    Scores out{};
    for (std::size_t k = 0; k < num_classes; ++k) {
        auto w = r.w_out.row(k);
        double acc = w[f];
        for (std::size_t i = 0; i < f; ++i) acc += w[i] * chi[i];
        out[k] = acc;
    }
    return out;
}

inline Classification classify(const Readout& r, std::span<const double> chi) {
    const Scores s = score(r, chi);
    return {decide(s), s};
}

} // namespace deepesn
