#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "deepesn/data.hpp"
#include "deepesn/errors.hpp"
#include "deepesn/parallel.hpp"
#include "deepesn/random.hpp"
#include "deepesn/readout.hpp"
#include "deepesn/reservoir.hpp"
#include "deepesn/text.hpp"

namespace deepesn {

// ---------------------------------------------------------------------------
// Fold plans
// ---------------------------------------------------------------------------

// Subject lists are indices into Dataset::sequences, sorted ascending.
struct FoldPlan {
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> outer;
    std::vector<std::vector<std::vector<std::size_t>>> inner; // inner[f] partitions outer_training(f)

    std::size_t outer_count() const noexcept { return outer.size(); }
    std::size_t inner_count() const noexcept { return inner.empty() ? 0 : inner.front().size(); }

    std::vector<std::size_t> outer_training(std::size_t f) const {
        std::vector<std::size_t> out;
        for (std::size_t g = 0; g < outer.size(); ++g)
            if (g != f) out.insert(out.end(), outer[g].begin(), outer[g].end());
        std::sort(out.begin(), out.end());
        return out;
    }

    std::vector<std::size_t> inner_training(std::size_t f, std::size_t k) const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < inner[f].size(); ++j)
            if (j != k) out.insert(out.end(), inner[f][j].begin(), inner[f][j].end());
        std::sort(out.begin(), out.end());
        return out;
    }

    friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

namespace detail {

// Shuffles each class, then deals PD followed by Control round-robin with a
// running offset, so fold sizes differ by at most one overall.
inline std::vector<std::vector<std::size_t>> stratified_deal(const std::vector<std::size_t>& subjects,
                                                             std::span<const Label> labels, std::size_t k,
                                                             Rng& rng) {
    std::vector<std::size_t> pd, control;
    for (std::size_t i : subjects) (labels[i] == Label::PD ? pd : control).push_back(i);
    rng.shuffle(pd);
    rng.shuffle(control);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t pos = 0;
    for (const auto* group : {&pd, &control})
        for (std::size_t i : *group) folds[pos++ % k].push_back(i);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

} // namespace detail

// Outer folds need every class in every fold. Inner folds only need to be
// nonempty with both classes present in each inner training set.
inline FoldPlan make_fold_plan(const Dataset& d, std::uint64_t seed, std::size_t outer_folds = 3,
                               std::size_t inner_folds = 5) {
    if (outer_folds < 2 || inner_folds < 2) throw StratificationError("fold counts must be >= 2");
    const auto labels = d.labels();
    const auto counts = d.counts();
    if (counts.pd < outer_folds || counts.control < outer_folds)
        throw StratificationError("cannot stratify " + std::to_string(counts.pd) + " PD and " +
                                  std::to_string(counts.control) + " Control subjects into " +
                                  std::to_string(outer_folds) + " folds with both classes in each");
    FoldPlan plan;
    plan.seed = seed;
    std::vector<std::size_t> all(d.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Rng outer_rng(mix_seed(seed, 0x6f75746572ULL));
    plan.outer = detail::stratified_deal(all, labels, outer_folds, outer_rng);
    for (std::size_t f = 0; f < outer_folds; ++f) {
        Rng inner_rng(mix_seed(seed, 0x696e6e6572ULL, f));
        const auto train = plan.outer_training(f);
        if (train.size() < inner_folds)
            throw StratificationError("outer fold " + std::to_string(f) + " leaves " + std::to_string(train.size()) +
                                      " training subjects for " + std::to_string(inner_folds) + " inner folds");
        plan.inner.push_back(detail::stratified_deal(train, labels, inner_folds, inner_rng));
        for (std::size_t k = 0; k < inner_folds; ++k) {
            bool has_pd = false, has_control = false;
            for (std::size_t i : plan.inner_training(f, k)) (labels[i] == Label::PD ? has_pd : has_control) = true;
            if (!has_pd || !has_control)
                throw StratificationError("inner fold " + std::to_string(k) + " of outer fold " + std::to_string(f) +
                                          " leaves a single-class training set");
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::size_t layers = 10;
    std::size_t units = 10;
    double leak = 0.1;
    double sigma = 1.0;     // input scaling
    double sigma_hat = 1.0; // inter-layer scaling, unused when layers == 1
    double rho = 0.9;
    double lambda = 0.0;

    DeepEsnConfig reservoir(std::uint64_t seed, std::size_t input_dim = num_channels) const {
        DeepEsnConfig c = DeepEsnConfig::uniform_leak(layers, units, leak);
        c.input_scaling = sigma;
        c.inter_layer_scaling = sigma_hat;
        c.spectral_radius = rho;
        c.input_dim = input_dim;
        c.master_seed = seed;
        return c;
    }

    bool same_reservoir(const ModelConfig& o) const {
        return layers == o.layers && units == o.units && leak == o.leak && sigma == o.sigma &&
               sigma_hat == o.sigma_hat && rho == o.rho;
    }

    std::string model_name() const { return layers == 1 ? "shallowESN" : "DeepESN"; }

    std::string describe() const {
        return "layers=" + std::to_string(layers) + ",units=" + std::to_string(units) +
               ",leak=" + text::format_real(leak) + ",sigma=" + text::format_real(sigma) +
               ",sigma_hat=" + text::format_real(sigma_hat) + ",rho=" + text::format_real(rho) +
               ",lambda=" + text::format_real(lambda);
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Exhaustive grid. Iteration order is units, sigma, sigma_hat, rho, lambda,
// each ascending; the last varies fastest. With one layer the inter-layer
// scaling has no effect and only its smallest value is enumerated.
struct HyperGrid {
    std::size_t layers = 10;
    double leak = 0.1;
    std::vector<std::size_t> units{10, 20, 30, 40, 50};
    std::vector<double> sigma{0.1, 0.5, 1.0, 2.0};
    std::vector<double> sigma_hat{0.1, 0.5, 1.0, 2.0};
    std::vector<double> rho{0.7, 0.8, 0.9, 1.0};
    std::vector<double> lambda{0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};

    static HyperGrid deep() { return {}; }

    // Same ranges with a single reservoir holding 100..500 units.
    static HyperGrid shallow() {
        HyperGrid g;
        g.layers = 1;
        g.units = {100, 200, 300, 400, 500};
        return g;
    }

    std::vector<ModelConfig> configs() const {
        auto sorted = [](auto v) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            return v;
        };
        const auto u = sorted(units);
        const auto s = sorted(sigma), r = sorted(rho), l = sorted(lambda);
        auto sh = sorted(sigma_hat);
        if (layers == 1 && !sh.empty()) sh.resize(1);
        std::vector<ModelConfig> out;
        for (auto nu : u)
            for (double si : s)
                for (double sh_i : sh)
                    for (double ri : r)
                        for (double li : l) out.push_back({layers, nu, leak, si, sh_i, ri, li});
        return out;
    }
};

// ---------------------------------------------------------------------------
// Metrics and McNemar
// ---------------------------------------------------------------------------

struct Metrics {
    double accuracy = 0.0;    // percent
    double sensitivity = 0.0; // percent of PD classified PD
    double specificity = 0.0; // percent of Control classified Control

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline double accuracy(std::span<const Label> preds, std::span<const Label> truth) {
    if (preds.size() != truth.size()) throw InputError("accuracy: length mismatch");
    if (preds.empty()) throw UndefinedMetricError("accuracy: no predictions");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == truth[i];
    return 100.0 * static_cast<double>(ok) / static_cast<double>(preds.size());
}

inline Metrics metrics(std::span<const Label> preds, std::span<const Label> truth) {
    if (preds.size() != truth.size()) throw InputError("metrics: length mismatch");
    if (preds.empty()) throw UndefinedMetricError("metrics: no predictions");
    std::size_t ok = 0, pd = 0, pd_ok = 0, ctl = 0, ctl_ok = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool hit = preds[i] == truth[i];
        ok += hit;
        if (truth[i] == Label::PD) {
            ++pd;
            pd_ok += hit;
        } else {
            ++ctl;
            ctl_ok += hit;
        }
    }
    if (pd == 0) throw UndefinedMetricError("sensitivity undefined: no PD subjects");
    if (ctl == 0) throw UndefinedMetricError("specificity undefined: no Control subjects");
    auto pct = [](std::size_t a, std::size_t b) { return 100.0 * static_cast<double>(a) / static_cast<double>(b); };
    return {pct(ok, preds.size()), pct(pd_ok, pd), pct(ctl_ok, ctl)};
}

enum class McNemarMethod { ExactBinomial, ChiSquareCorrected };

inline std::string_view method_name(McNemarMethod m) {
    return m == McNemarMethod::ExactBinomial ? "exact-binomial" : "chi-square-corrected";
}

struct McNemarResult {
    std::size_t b = 0; // A right, B wrong
    std::size_t c = 0; // A wrong, B right
    double statistic = 0.0; // min(b, c) for the exact test, corrected chi-square otherwise
    double p_value = 1.0;
    McNemarMethod method = McNemarMethod::ExactBinomial;
};

inline constexpr std::size_t mcnemar_exact_limit = 25;

inline McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c) {
    McNemarResult r{b, c};
    const std::size_t n = b + c;
    if (n < mcnemar_exact_limit) {
        r.method = McNemarMethod::ExactBinomial;
        const std::size_t k = std::min(b, c);
        r.statistic = static_cast<double>(k);
        // Two-sided tail 2 * P[X <= k], X ~ Bin(n, 1/2); coefficients are exact below 2^53.
        double coef = 1.0, tail = 0.0;
        for (std::size_t i = 0; i <= k; ++i) {
            tail += coef;
            coef = coef * static_cast<double>(n - i) / static_cast<double>(i + 1);
        }
        r.p_value = std::min(1.0, 2.0 * tail * std::ldexp(1.0, -static_cast<int>(n)));
    } else {
        r.method = McNemarMethod::ChiSquareCorrected;
        const double diff = std::max(0.0, std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0);
        r.statistic = diff * diff / static_cast<double>(n);
        r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
    }
    return r;
}

inline McNemarResult mcnemar(std::span<const Label> preds_a, std::span<const Label> preds_b,
                             std::span<const Label> truth) {
    if (preds_a.size() != truth.size() || preds_b.size() != truth.size())
        throw InputError("mcnemar: prediction vectors of lengths " + std::to_string(preds_a.size()) + " and " +
                         std::to_string(preds_b.size()) + " against " + std::to_string(truth.size()) + " labels");
    std::size_t b = 0, c = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool a_ok = preds_a[i] == truth[i], b_ok = preds_b[i] == truth[i];
        b += a_ok && !b_ok;
        c += !a_ok && b_ok;
    }
    return mcnemar_from_counts(b, c);
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // population form, over guesses

    friend bool operator==(const MeanStd&, const MeanStd&) = default;
};

inline MeanStd mean_std(std::span<const double> v) {
    if (v.empty()) return {};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

// ---------------------------------------------------------------------------
// Nested cross-validation
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::uint64_t master_seed = 0;
    std::size_t guesses = 10;
    std::size_t workers = 1;
    std::size_t washout = 0;
};

// Reservoir seed of one guess inside one outer fold. Independent of the
// configuration, so every config of a fold sees the same raw draws.
inline std::uint64_t guess_seed(std::uint64_t master, std::size_t fold, std::size_t guess) {
    return mix_seed(master, 0x6775657373ULL, fold, guess);
}

struct Prediction {
    std::size_t subject = 0; // dataset index
    Label truth = Label::Control;
    Label predicted = Label::Control;
    Scores scores{};

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

// Everything one reservoir guess produces inside one outer fold.
struct FoldGuessOutcome {
    std::size_t fold = 0;
    std::size_t guess = 0;
    double inner_train_accuracy = 0.0; // mean over inner folds
    double validation_accuracy = 0.0;  // mean over inner folds
    double train_accuracy = 0.0;       // readout retrained on the outer-training set
    double test_accuracy = 0.0;
    std::vector<std::vector<Prediction>> validation; // per inner fold
    std::vector<Prediction> train;
    std::vector<Prediction> test;
    Readout readout;   // retrained readout
    DeepEsnConfig reservoir;
};

// Records which subjects each phase touched, per outer fold. Used to prove
// that no test subject reaches readout fitting, validation or selection.
class SelectionAudit {
public:
    struct FoldTrace {
        std::set<std::size_t> inner_fitted;
        std::set<std::size_t> validated;
        std::set<std::size_t> retrained;
        std::set<std::size_t> tested;
    };

    void record(std::size_t fold, std::set<std::size_t> FoldTrace::*phase, std::span<const std::size_t> ids) {
        std::lock_guard lock(mutex_);
        if (traces_.size() <= fold) traces_.resize(fold + 1);
        (traces_[fold].*phase).insert(ids.begin(), ids.end());
    }

    const std::vector<FoldTrace>& traces() const { return traces_; }

    // Empty when clean. Each entry names the fold, phase and subject.
    std::vector<std::string> violations(const FoldPlan& plan) const {
        std::vector<std::string> out;
        for (std::size_t f = 0; f < plan.outer_count(); ++f) {
            const std::set<std::size_t> test(plan.outer[f].begin(), plan.outer[f].end());
            if (f >= traces_.size()) {
                out.push_back("fold " + std::to_string(f) + ": no trace recorded");
                continue;
            }
            const auto& t = traces_[f];
            auto check = [&](const std::set<std::size_t>& s, const char* phase) {
                for (std::size_t i : s)
                    if (test.count(i))
                        out.push_back("fold " + std::to_string(f) + ": test subject " + std::to_string(i) + " in " +
                                      phase);
            };
            check(t.inner_fitted, "inner readout fitting");
            check(t.validated, "validation scoring");
            check(t.retrained, "final readout fitting");
            if (t.tested != test) out.push_back("fold " + std::to_string(f) + ": tested set differs from test fold");
        }
        return out;
    }

private:
    std::mutex mutex_;
    std::vector<FoldTrace> traces_;
};

namespace detail {

using FeatureTable = std::vector<std::vector<double>>; // per dataset index

inline FeatureTable mean_states(const Dataset& d, const ReservoirStack& stack, std::size_t washout) {
    FeatureTable out(d.size());
    RunOptions opts;
    opts.washout = washout;
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = run_sequence(stack, d.sequences[i].channels, opts).mean_state;
    return out;
}

inline Readout fit(const FeatureTable& feats, std::span<const Label> labels, std::span<const std::size_t> ids,
                   double lambda) {
    TrainingSet ts;
    ts.features.reserve(ids.size());
    for (std::size_t i : ids) {
        ts.features.push_back(feats[i]);
        ts.labels.push_back(labels[i]);
    }
    return train_readout(ts, lambda);
}

inline std::vector<Prediction> predict(const Readout& r, const FeatureTable& feats, std::span<const Label> labels,
                                       std::span<const std::size_t> ids) {
    std::vector<Prediction> out;
    out.reserve(ids.size());
    for (std::size_t i : ids) {
        const auto c = classify(r, feats[i]);
        out.push_back({i, labels[i], c.label, c.scores});
    }
    return out;
}

inline double accuracy_of(const std::vector<Prediction>& p) {
    std::size_t ok = 0;
    for (const auto& x : p) ok += x.predicted == x.truth;
    return 100.0 * static_cast<double>(ok) / static_cast<double>(p.size());
}

// Inner CV (plus, with_outer, the outer retrain and test) for one fold, one
// guess and one lambda, on precomputed mean states. Only the subject lists
// from the plan are used.
inline FoldGuessOutcome fold_outcome(const FeatureTable& feats, std::span<const Label> labels, const FoldPlan& plan,
                                     std::size_t fold, double lambda, bool keep_predictions, bool with_outer,
                                     SelectionAudit* audit) {
    FoldGuessOutcome o;
    o.fold = fold;
    const std::size_t kin = plan.inner_count();
    double sum_train = 0.0, sum_val = 0.0;
    for (std::size_t k = 0; k < kin; ++k) {
        const auto train_ids = plan.inner_training(fold, k);
        const auto& val_ids = plan.inner[fold][k];
        if (audit) {
            audit->record(fold, &SelectionAudit::FoldTrace::inner_fitted, train_ids);
            audit->record(fold, &SelectionAudit::FoldTrace::validated, val_ids);
        }
        const Readout r = fit(feats, labels, train_ids, lambda);
        sum_train += accuracy_of(predict(r, feats, labels, train_ids));
        auto val = predict(r, feats, labels, val_ids);
        sum_val += accuracy_of(val);
        if (keep_predictions) o.validation.push_back(std::move(val));
    }
    o.inner_train_accuracy = sum_train / static_cast<double>(kin);
    o.validation_accuracy = sum_val / static_cast<double>(kin);
    if (!with_outer) return o;

    const auto outer_train = plan.outer_training(fold);
    const auto& test_ids = plan.outer[fold];
    if (audit) {
        audit->record(fold, &SelectionAudit::FoldTrace::retrained, outer_train);
        audit->record(fold, &SelectionAudit::FoldTrace::tested, test_ids);
    }
    o.readout = fit(feats, labels, outer_train, lambda);
    auto train = predict(o.readout, feats, labels, outer_train);
    auto test = predict(o.readout, feats, labels, test_ids);
    o.train_accuracy = accuracy_of(train);
    o.test_accuracy = accuracy_of(test);
    if (keep_predictions) {
        o.train = std::move(train);
        o.test = std::move(test);
    }
    return o;
}

inline std::string annotate(const ModelConfig& c, std::size_t fold, std::size_t guess, const std::exception& e) {
    return "config {" + c.describe() + "} fold " + std::to_string(fold) + " guess " + std::to_string(guess) + ": " +
           e.what();
}

} // namespace detail

struct EnsembleFold {
    double train_accuracy = 0.0;
    double validation_accuracy = 0.0; // mean over inner folds
    Metrics test;
    std::vector<Prediction> test_predictions;
};

struct EnsembleOutcome {
    std::vector<EnsembleFold> folds;
    double train_accuracy = 0.0;      // mean over folds
    double validation_accuracy = 0.0; // mean over folds
    Metrics test;                     // pooled over all subjects
    std::vector<Prediction> test_predictions; // dataset order
};

struct EvaluationReport {
    std::string model_name;
    std::vector<ModelConfig> fold_configs;
    std::size_t guesses = 0;
    std::vector<FoldGuessOutcome> outcomes; // index fold * guesses + guess

    // Per guess, aggregated over folds: accuracies are means over folds, test
    // metrics are pooled over all subjects (each is tested exactly once).
    std::vector<double> guess_train, guess_inner_train, guess_validation;
    std::vector<Metrics> guess_test;

    MeanStd train, inner_train, validation, test, sensitivity, specificity;
    std::optional<EnsembleOutcome> ensemble;

    const FoldGuessOutcome& at(std::size_t fold, std::size_t guess) const { return outcomes[fold * guesses + guess]; }

    // Test predictions of one guess in dataset order.
    std::vector<Prediction> test_predictions(std::size_t guess) const {
        std::vector<Prediction> out;
        for (std::size_t f = 0; f < fold_configs.size(); ++f) {
            const auto& t = at(f, guess).test;
            out.insert(out.end(), t.begin(), t.end());
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.subject < b.subject; });
        return out;
    }
};

namespace detail {

inline std::vector<Label> predicted_labels(const std::vector<Prediction>& p) {
    std::vector<Label> out;
    for (const auto& x : p) out.push_back(x.predicted);
    return out;
}

inline std::vector<Label> true_labels(const std::vector<Prediction>& p) {
    std::vector<Label> out;
    for (const auto& x : p) out.push_back(x.truth);
    return out;
}

// Averages score vectors subject-wise over guesses, then takes the argmax.
inline std::vector<Prediction> average_predictions(const std::vector<const std::vector<Prediction>*>& per_guess) {
    std::vector<Prediction> out = *per_guess.front();
    for (auto& p : out) p.scores = {0.0, 0.0};
    for (const auto* g : per_guess)
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t k = 0; k < num_classes; ++k) out[i].scores[k] += (*g)[i].scores[k];
    const double n = static_cast<double>(per_guess.size());
    for (auto& p : out) {
        for (double& s : p.scores) s /= n;
        p.predicted = decide(p.scores);
    }
    return out;
}

inline EnsembleOutcome ensemble_of(const EvaluationReport& rep, std::size_t folds, std::size_t inner) {
    EnsembleOutcome e;
    for (std::size_t f = 0; f < folds; ++f) {
        EnsembleFold ef;
        std::vector<const std::vector<Prediction>*> train, test;
        for (std::size_t g = 0; g < rep.guesses; ++g) {
            train.push_back(&rep.at(f, g).train);
            test.push_back(&rep.at(f, g).test);
        }
        ef.train_accuracy = accuracy_of(average_predictions(train));
        double val = 0.0;
        for (std::size_t k = 0; k < inner; ++k) {
            std::vector<const std::vector<Prediction>*> v;
            for (std::size_t g = 0; g < rep.guesses; ++g) v.push_back(&rep.at(f, g).validation[k]);
            val += accuracy_of(average_predictions(v));
        }
        ef.validation_accuracy = val / static_cast<double>(inner);
        ef.test_predictions = average_predictions(test);
        ef.test = metrics(predicted_labels(ef.test_predictions), true_labels(ef.test_predictions));
        e.train_accuracy += ef.train_accuracy;
        e.validation_accuracy += ef.validation_accuracy;
        e.test_predictions.insert(e.test_predictions.end(), ef.test_predictions.begin(), ef.test_predictions.end());
        e.folds.push_back(std::move(ef));
    }
    e.train_accuracy /= static_cast<double>(folds);
    e.validation_accuracy /= static_cast<double>(folds);
    std::sort(e.test_predictions.begin(), e.test_predictions.end(),
              [](const auto& a, const auto& b) { return a.subject < b.subject; });
    e.test = metrics(predicted_labels(e.test_predictions), true_labels(e.test_predictions));
    return e;
}

inline EvaluationReport run_protocol(const Dataset& d, const FoldPlan& plan, const std::vector<ModelConfig>& configs,
                                     const EvalOptions& opts, bool with_ensemble, SelectionAudit* audit) {
    const std::size_t folds = plan.outer_count();
    if (configs.size() != folds)
        throw InputError("evaluate: " + std::to_string(configs.size()) + " configs for " + std::to_string(folds) +
                         " folds");
    if (opts.guesses < 1) throw InputError("evaluate: guesses must be >= 1");
    const auto labels = d.labels();

    EvaluationReport rep;
    rep.model_name = configs.front().model_name();
    rep.fold_configs = configs;
    rep.guesses = opts.guesses;
    rep.outcomes.resize(folds * opts.guesses);
    parallel_for(rep.outcomes.size(), opts.workers, [&](std::size_t task) {
        const std::size_t f = task / opts.guesses, g = task % opts.guesses;
        const auto& cfg = configs[f];
        try {
            const auto rc = cfg.reservoir(guess_seed(opts.master_seed, f, g));
            const auto stack = build_stack(rc);
            const auto feats = mean_states(d, stack, opts.washout);
            auto o = fold_outcome(feats, labels, plan, f, cfg.lambda, true, true, audit);
            o.guess = g;
            o.reservoir = rc;
            rep.outcomes[task] = std::move(o);
        } catch (const std::exception& e) {
            throw EvaluationError(annotate(cfg, f, g, e));
        }
    });

    std::vector<double> guess_ts, guess_sen, guess_spec;
    for (std::size_t g = 0; g < opts.guesses; ++g) {
        double tr = 0.0, tri = 0.0, vl = 0.0;
        for (std::size_t f = 0; f < folds; ++f) {
            tr += rep.at(f, g).train_accuracy;
            tri += rep.at(f, g).inner_train_accuracy;
            vl += rep.at(f, g).validation_accuracy;
        }
        rep.guess_train.push_back(tr / static_cast<double>(folds));
        rep.guess_inner_train.push_back(tri / static_cast<double>(folds));
        rep.guess_validation.push_back(vl / static_cast<double>(folds));
        const auto preds = rep.test_predictions(g);
        const auto m = metrics(predicted_labels(preds), true_labels(preds));
        rep.guess_test.push_back(m);
        guess_ts.push_back(m.accuracy);
        guess_sen.push_back(m.sensitivity);
        guess_spec.push_back(m.specificity);
    }
    rep.train = mean_std(rep.guess_train);
    rep.inner_train = mean_std(rep.guess_inner_train);
    rep.validation = mean_std(rep.guess_validation);
    rep.test = mean_std(guess_ts);
    rep.sensitivity = mean_std(guess_sen);
    rep.specificity = mean_std(guess_spec);
    if (with_ensemble) rep.ensemble = ensemble_of(rep, folds, plan.inner_count());
    return rep;
}

} // namespace detail

// Per-guess evaluation of one configuration in every outer fold.
inline EvaluationReport evaluate_config(const Dataset& d, const FoldPlan& plan, const ModelConfig& config,
                                        const EvalOptions& opts, SelectionAudit* audit = nullptr) {
    return detail::run_protocol(d, plan, std::vector<ModelConfig>(plan.outer_count(), config), opts, false, audit);
}

// Per-fold configurations, e.g. the ones a grid search selected.
inline EvaluationReport evaluate_config(const Dataset& d, const FoldPlan& plan, const std::vector<ModelConfig>& configs,
                                        const EvalOptions& opts, SelectionAudit* audit = nullptr) {
    return detail::run_protocol(d, plan, configs, opts, false, audit);
}

// Same as evaluate_config plus output-averaging ensembles over the guesses.
inline EvaluationReport ensemble_evaluate(const Dataset& d, const FoldPlan& plan, const ModelConfig& config,
                                          const EvalOptions& opts, SelectionAudit* audit = nullptr) {
    return detail::run_protocol(d, plan, std::vector<ModelConfig>(plan.outer_count(), config), opts, true, audit);
}

inline EvaluationReport ensemble_evaluate(const Dataset& d, const FoldPlan& plan,
                                          const std::vector<ModelConfig>& configs, const EvalOptions& opts,
                                          SelectionAudit* audit = nullptr) {
    return detail::run_protocol(d, plan, configs, opts, true, audit);
}

struct ScoreRow {
    std::size_t fold = 0;
    std::size_t config = 0; // index into GridResult::configs
    std::size_t guess = 0;
    double inner_train_accuracy = 0.0;
    double validation_accuracy = 0.0;
};

struct GridResult {
    std::vector<ModelConfig> configs;
    std::vector<ScoreRow> rows;                  // fold-major, then config, then guess
    std::vector<std::vector<double>> mean_validation; // [fold][config], over inner folds and guesses
    std::vector<std::size_t> selected;           // per fold
    EvaluationReport final;                      // selected configs retrained and tested

    std::vector<ModelConfig> selected_configs() const {
        std::vector<ModelConfig> out;
        for (std::size_t i : selected) out.push_back(configs[i]);
        return out;
    }
};

// Model selection by inner cross-validation in every outer fold. Mean states
// are computed once per (fold, reservoir, guess) and shared across lambdas.
// The winning config maximizes mean validation accuracy; ties keep the
// earliest config in grid order. The winner is then retrained on the whole
// outer-training set and scored on the held-out fold.
inline GridResult grid_search(const Dataset& d, const FoldPlan& plan, const HyperGrid& grid, const EvalOptions& opts,
                              bool with_ensemble = false, SelectionAudit* audit = nullptr) {
    GridResult res;
    res.configs = grid.configs();
    if (res.configs.empty()) throw InputError("grid_search: empty grid");
    if (opts.guesses < 1) throw InputError("grid_search: guesses must be >= 1");
    const std::size_t folds = plan.outer_count(), nc = res.configs.size(), ng = opts.guesses;
    const auto labels = d.labels();

    // Groups of consecutive configs sharing one reservoir (lambda varies fastest).
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    for (std::size_t i = 0; i < nc;) {
        std::size_t j = i + 1;
        while (j < nc && res.configs[j].same_reservoir(res.configs[i])) ++j;
        groups.emplace_back(i, j);
        i = j;
    }

    res.rows.resize(folds * nc * ng);
    const std::size_t ntasks = folds * groups.size() * ng;
    parallel_for(ntasks, opts.workers, [&](std::size_t task) {
        const std::size_t g = task % ng;
        const std::size_t grp = (task / ng) % groups.size();
        const std::size_t f = task / (ng * groups.size());
        const auto [first, last] = groups[grp];
        const auto& base = res.configs[first];
        try {
            const auto stack = build_stack(base.reservoir(guess_seed(opts.master_seed, f, g)));
            const auto feats = detail::mean_states(d, stack, opts.washout);
            for (std::size_t c = first; c < last; ++c) {
                const auto o = detail::fold_outcome(feats, labels, plan, f, res.configs[c].lambda, false, false, audit);
                res.rows[(f * nc + c) * ng + g] = {f, c, g, o.inner_train_accuracy, o.validation_accuracy};
            }
        } catch (const std::exception& e) {
            throw EvaluationError(detail::annotate(base, f, g, e));
        }
    });

    res.mean_validation.assign(folds, std::vector<double>(nc, 0.0));
    for (std::size_t f = 0; f < folds; ++f) {
        std::size_t best = 0;
        for (std::size_t c = 0; c < nc; ++c) {
            double s = 0.0;
            for (std::size_t g = 0; g < ng; ++g) s += res.rows[(f * nc + c) * ng + g].validation_accuracy;
            res.mean_validation[f][c] = s / static_cast<double>(ng);
            if (res.mean_validation[f][c] > res.mean_validation[f][best]) best = c;
        }
        res.selected.push_back(best);
    }
    res.final = detail::run_protocol(d, plan, res.selected_configs(), opts, with_ensemble, audit);
    return res;
}

} // namespace deepesn
