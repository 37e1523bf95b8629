#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "deepesn/data.hpp"
#include "deepesn/errors.hpp"
#include "deepesn/evaluation.hpp"
#include "deepesn/text.hpp"

// Delimiter-separated report tables (';'). Percentages are fixed to four
// decimals; readout scores use shortest round-trip decimals.
namespace deepesn::reports {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write '" + p.string() + "'");
    return os;
}

inline std::string pct(double v) { return text::format_fixed(v, 4); }

inline std::string config_columns(const ModelConfig& c) {
    return std::to_string(c.layers) + ';' + std::to_string(c.units) + ';' + text::format_real(c.leak) + ';' +
           text::format_real(c.sigma) + ';' + text::format_real(c.sigma_hat) + ';' + text::format_real(c.rho) + ';' +
           text::format_real(c.lambda);
}

inline constexpr const char* config_header = "layers;units;leak;sigma;sigma_hat;rho;lambda";

// One row per fold x config x guess.
inline void write_score_table(std::ostream& os, const GridResult& g) {
    os << "# inner cross-validation accuracies (percent) per fold, config and reservoir guess\n";
    os << "fold;config;" << config_header << ";guess;TR_inner;VL\n";
    for (const auto& r : g.rows)
        os << r.fold << ';' << r.config << ';' << config_columns(g.configs[r.config]) << ';' << r.guess << ';'
           << pct(r.inner_train_accuracy) << ';' << pct(r.validation_accuracy) << '\n';
}

inline void write_selection(std::ostream& os, const GridResult& g) {
    os << "# configuration selected per outer fold by mean inner validation accuracy\n";
    os << "fold;config;" << config_header << ";VL_mean\n";
    for (std::size_t f = 0; f < g.selected.size(); ++f) {
        const auto c = g.selected[f];
        os << f << ';' << c << ';' << config_columns(g.configs[c]) << ';' << pct(g.mean_validation[f][c]) << '\n';
    }
}

// Mirrors the per-guess accuracy table: TR / VL / TS with std over guesses,
// plus test sensitivity and specificity.
inline void write_summary(std::ostream& os, const EvaluationReport& rep) {
    os << "# model=" << rep.model_name << "; guesses=" << rep.guesses
       << "; accuracies in percent; *_std = population std over reservoir guesses\n";
    os << "# TR = readout retrained on the outer-training set; TR_inner and VL = inner cross-validation\n";
    os << "model;fold;TR;TR_std;TR_inner;TR_inner_std;VL;VL_std;TS;TS_std;TS_SEN;TS_SEN_std;TS_SPEC;TS_SPEC_std\n";
    auto row = [&](const std::string& fold, const MeanStd& tr, const MeanStd& tri, const MeanStd& vl,
                   const MeanStd& ts, const MeanStd& sen, const MeanStd& spec) {
        os << rep.model_name << ';' << fold;
        for (const auto* m : {&tr, &tri, &vl, &ts, &sen, &spec}) os << ';' << pct(m->mean) << ';' << pct(m->std);
        os << '\n';
    };
    for (std::size_t f = 0; f < rep.fold_configs.size(); ++f) {
        std::vector<double> tr, tri, vl, ts, sen, spec;
        for (std::size_t g = 0; g < rep.guesses; ++g) {
            const auto& o = rep.at(f, g);
            tr.push_back(o.train_accuracy);
            tri.push_back(o.inner_train_accuracy);
            vl.push_back(o.validation_accuracy);
            const auto m = metrics(detail::predicted_labels(o.test), detail::true_labels(o.test));
            ts.push_back(m.accuracy);
            sen.push_back(m.sensitivity);
            spec.push_back(m.specificity);
        }
        row(std::to_string(f), mean_std(tr), mean_std(tri), mean_std(vl), mean_std(ts), mean_std(sen),
            mean_std(spec));
    }
    row("all", rep.train, rep.inner_train, rep.validation, rep.test, rep.sensitivity, rep.specificity);
}

inline void write_ensemble_summary(std::ostream& os, const EvaluationReport& rep) {
    if (!rep.ensemble) throw InputError("report carries no ensemble results");
    const auto& e = *rep.ensemble;
    os << "# model=" << rep.model_name << " ensemble of " << rep.guesses
       << " guesses (readout scores averaged, then argmax); percent\n";
    os << "model;fold;TR_ACC;VL_ACC;TS_ACC;TS_SEN;TS_SPEC\n";
    for (std::size_t f = 0; f < e.folds.size(); ++f) {
        const auto& ef = e.folds[f];
        os << rep.model_name << ';' << f << ';' << pct(ef.train_accuracy) << ';' << pct(ef.validation_accuracy) << ';'
           << pct(ef.test.accuracy) << ';' << pct(ef.test.sensitivity) << ';' << pct(ef.test.specificity) << '\n';
    }
    os << rep.model_name << ";all;" << pct(e.train_accuracy) << ';' << pct(e.validation_accuracy) << ';'
       << pct(e.test.accuracy) << ';' << pct(e.test.sensitivity) << ';' << pct(e.test.specificity) << '\n';
}

// ---------------------------------------------------------------------------
// Per-subject prediction files. A row is keyed by (subject_id, unit), where
// unit is "g<guess>" for single reservoir guesses or "ensemble".
// ---------------------------------------------------------------------------

inline constexpr std::string_view predictions_magic = "# deepesn predictions v1";

struct PredictionRow {
    std::string subject_id;
    std::string unit;
    std::size_t fold = 0;
    Label truth = Label::Control;
    Label predicted = Label::Control;
    Scores scores{};
};

inline void write_prediction_rows(std::ostream& os, const std::vector<PredictionRow>& rows) {
    os << predictions_magic << '\n';
    os << "subject_id;unit;fold;truth;predicted;score_control;score_pd\n";
    for (const auto& r : rows)
        os << r.subject_id << ';' << r.unit << ';' << r.fold << ';' << label_name(r.truth) << ';'
           << label_name(r.predicted) << ';' << text::format_real(r.scores[0]) << ';' << text::format_real(r.scores[1])
           << '\n';
}

inline std::vector<std::size_t> fold_of_subjects(const FoldPlan& plan, std::size_t n) {
    std::vector<std::size_t> fold(n, 0);
    for (std::size_t f = 0; f < plan.outer_count(); ++f)
        for (std::size_t i : plan.outer[f]) fold[i] = f;
    return fold;
}

// Test predictions of every guess; subject-major, then guess.
inline std::vector<PredictionRow> guess_rows(const Dataset& d, const FoldPlan& plan, const EvaluationReport& rep) {
    const auto fold = fold_of_subjects(plan, d.size());
    std::vector<std::vector<Prediction>> per_guess;
    for (std::size_t g = 0; g < rep.guesses; ++g) per_guess.push_back(rep.test_predictions(g));
    std::vector<PredictionRow> rows;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t g = 0; g < rep.guesses; ++g) {
            const auto& p = per_guess[g][i];
            rows.push_back({d.sequences[p.subject].subject_id, "g" + std::to_string(g), fold[p.subject], p.truth,
                            p.predicted, p.scores});
        }
    return rows;
}

inline std::vector<PredictionRow> ensemble_rows(const Dataset& d, const FoldPlan& plan, const EvaluationReport& rep) {
    if (!rep.ensemble) throw InputError("report carries no ensemble results");
    const auto fold = fold_of_subjects(plan, d.size());
    std::vector<PredictionRow> rows;
    for (const auto& p : rep.ensemble->test_predictions)
        rows.push_back({d.sequences[p.subject].subject_id, "ensemble", fold[p.subject], p.truth, p.predicted, p.scores});
    return rows;
}

inline std::vector<PredictionRow> read_prediction_rows(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != predictions_magic) throw ParseError(path.string() + ":1: not a predictions file", 1);
    std::getline(in, line);
    std::vector<PredictionRow> rows;
    std::size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        const auto f = text::split(line, ';');
        if (f.size() != 7)
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields", lineno);
        PredictionRow r;
        r.subject_id = std::string(f[0]);
        r.unit = std::string(f[1]);
        try {
            r.fold = text::parse_or_throw<std::size_t>(f[2], "fold");
            r.truth = parse_label(f[3]);
            r.predicted = parse_label(f[4]);
            r.scores = {text::parse_or_throw<double>(f[5], "score"), text::parse_or_throw<double>(f[6], "score")};
        } catch (const InputError& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

// Pairs rows of two prediction files by (subject_id, unit) and runs McNemar
// with A as the first model. The key sets must match exactly.
inline McNemarResult compare_predictions(const std::vector<PredictionRow>& a, const std::vector<PredictionRow>& b,
                                         std::size_t* pairs = nullptr) {
    using Key = std::pair<std::string, std::string>;
    std::map<Key, const PredictionRow*> index_b;
    for (const auto& r : b)
        if (!index_b.emplace(Key{r.subject_id, r.unit}, &r).second)
            throw InputError("second file repeats subject '" + r.subject_id + "' unit '" + r.unit + "'");
    std::set<Key> seen_a;
    std::vector<Label> pa, pb, truth;
    for (const auto& r : a) {
        const Key k{r.subject_id, r.unit};
        if (!seen_a.insert(k).second)
            throw InputError("first file repeats subject '" + r.subject_id + "' unit '" + r.unit + "'");
        const auto it = index_b.find(k);
        if (it == index_b.end())
            throw InputError("subject '" + r.subject_id + "' unit '" + r.unit + "' missing from second file");
        if (it->second->truth != r.truth) throw InputError("subject '" + r.subject_id + "' has conflicting labels");
        pa.push_back(r.predicted);
        pb.push_back(it->second->predicted);
        truth.push_back(r.truth);
    }
    for (const auto& r : b)
        if (!seen_a.count({r.subject_id, r.unit}))
            throw InputError("subject '" + r.subject_id + "' unit '" + r.unit + "' missing from first file");
    if (pairs) *pairs = truth.size();
    return mcnemar(pa, pb, truth);
}

} // namespace deepesn::reports
