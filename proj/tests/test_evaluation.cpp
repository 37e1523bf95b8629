#include <gtest/gtest.h>

#include <numeric>

#include "deepesn/evaluation.hpp"
#include "oracles.hpp"

using namespace deepesn;

namespace {

Dataset labelled(std::size_t pd, std::size_t control) {
    Dataset d;
    for (std::size_t i = 0; i < pd + control; ++i)
        d.sequences.push_back({"S" + std::to_string(i), i < pd ? Label::PD : Label::Control, 0,
                               Matrix(num_channels, 2, 0.0)});
    return d;
}

std::size_t count(const std::vector<std::size_t>& fold, const Dataset& d, Label l) {
    std::size_t n = 0;
    for (std::size_t i : fold) n += d.sequences[i].label == l;
    return n;
}

ModelConfig small_model() {
    ModelConfig c;
    c.layers = 2;
    c.units = 6;
    c.leak = 0.3;
    c.lambda = 1e-8;
    return c;
}

EvalOptions options(std::size_t guesses, std::size_t workers = 1) {
    EvalOptions o;
    o.master_seed = 99;
    o.guesses = guesses;
    o.workers = workers;
    return o;
}

} // namespace

TEST(FoldPlan, RealDatasetProportions) {
    const auto d = labelled(61, 15);
    const auto plan = make_fold_plan(d, 1);
    ASSERT_EQ(plan.outer_count(), 3u);
    std::vector<std::size_t> pd, ctl;
    for (const auto& f : plan.outer) {
        pd.push_back(count(f, d, Label::PD));
        ctl.push_back(count(f, d, Label::Control));
    }
    std::sort(pd.rbegin(), pd.rend());
    EXPECT_EQ(pd, (std::vector<std::size_t>{21, 20, 20}));
    EXPECT_EQ(ctl, (std::vector<std::size_t>{5, 5, 5}));
}

TEST(FoldPlan, PartitionsAndDisjointness) {
    const auto d = labelled(61, 15);
    const auto plan = make_fold_plan(d, 2);
    std::vector<std::size_t> all;
    for (const auto& f : plan.outer) all.insert(all.end(), f.begin(), f.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(76);
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(all, expect);
    for (std::size_t f = 0; f < 3; ++f) {
        ASSERT_EQ(plan.inner[f].size(), 5u);
        std::vector<std::size_t> inner;
        for (const auto& k : plan.inner[f]) {
            EXPECT_FALSE(k.empty());
            inner.insert(inner.end(), k.begin(), k.end());
        }
        std::sort(inner.begin(), inner.end());
        EXPECT_EQ(inner, plan.outer_training(f));
        for (std::size_t i : plan.outer[f]) EXPECT_FALSE(std::binary_search(inner.begin(), inner.end(), i));
    }
}

TEST(FoldPlan, DeterministicPerSeed) {
    const auto d = labelled(20, 9);
    EXPECT_EQ(make_fold_plan(d, 5), make_fold_plan(d, 5));
    EXPECT_NE(make_fold_plan(d, 5).outer, make_fold_plan(d, 6).outer);
}

TEST(FoldPlan, SmallestStratifiableSet) {
    const auto d = labelled(3, 3);
    const auto plan = make_fold_plan(d, 3, 3, 2);
    for (const auto& f : plan.outer) {
        EXPECT_EQ(count(f, d, Label::PD), 1u);
        EXPECT_EQ(count(f, d, Label::Control), 1u);
    }
}

TEST(FoldPlan, SixPerClassGivesTwoAndOne) {
    const auto d = labelled(6, 3);
    const auto plan = make_fold_plan(d, 4, 3, 2);
    for (const auto& f : plan.outer) {
        EXPECT_EQ(count(f, d, Label::PD), 2u);
        EXPECT_EQ(count(f, d, Label::Control), 1u);
    }
}

TEST(FoldPlan, RefusesUnstratifiableSets) {
    EXPECT_THROW(make_fold_plan(labelled(10, 2), 1), StratificationError);
    EXPECT_THROW(make_fold_plan(labelled(3, 3), 1, 3, 5), StratificationError);
    EXPECT_THROW(make_fold_plan(labelled(10, 10), 1, 1, 5), StratificationError);
}

TEST(HyperGrid, DeepGridSize) {
    const auto configs = HyperGrid::deep().configs();
    EXPECT_EQ(configs.size(), 5u * 4 * 4 * 4 * 12);
    EXPECT_EQ(configs.size(), 3840u);
    EXPECT_EQ(configs.front(), (ModelConfig{10, 10, 0.1, 0.1, 0.1, 0.7, 0.0}));
    EXPECT_EQ(configs[1].lambda, 1e-10);
    EXPECT_EQ(configs.back(), (ModelConfig{10, 50, 0.1, 2.0, 2.0, 1.0, 1.0}));
    for (const auto& c : configs) EXPECT_EQ(c.model_name(), "DeepESN");
}

TEST(HyperGrid, ShallowCollapsesInterLayerScaling) {
    const auto configs = HyperGrid::shallow().configs();
    EXPECT_EQ(configs.size(), 5u * 4 * 4 * 12);
    EXPECT_EQ(configs.front().units, 100u);
    EXPECT_EQ(configs.back().units, 500u);
    EXPECT_EQ(configs.front().model_name(), "shallowESN");
}

TEST(HyperGrid, SortsAndDeduplicates) {
    HyperGrid g;
    g.units = {20, 10, 20};
    g.sigma = {1.0};
    g.sigma_hat = {1.0};
    g.rho = {0.9};
    g.lambda = {1.0, 0.0};
    const auto c = g.configs();
    ASSERT_EQ(c.size(), 4u);
    EXPECT_EQ(c[0].units, 10u);
    EXPECT_EQ(c[0].lambda, 0.0);
    EXPECT_EQ(c[3].units, 20u);
    EXPECT_EQ(c[3].lambda, 1.0);
}

TEST(Metrics, HandCounts) {
    using L = Label;
    const std::vector<L> truth{L::PD, L::PD, L::PD, L::Control, L::Control};
    const std::vector<L> pred{L::PD, L::Control, L::PD, L::Control, L::PD};
    const auto m = metrics(pred, truth);
    EXPECT_DOUBLE_EQ(m.accuracy, 60.0);
    EXPECT_DOUBLE_EQ(m.sensitivity, 100.0 * 2 / 3);
    EXPECT_DOUBLE_EQ(m.specificity, 50.0);
}

TEST(Metrics, AllPredictedPdOnRealProportions) {
    std::vector<Label> truth(61, Label::PD), pred(76, Label::PD);
    truth.resize(76, Label::Control);
    const auto m = metrics(pred, truth);
    EXPECT_NEAR(m.accuracy, 80.263157894736835, 1e-12);
    EXPECT_EQ(m.sensitivity, 100.0);
    EXPECT_EQ(m.specificity, 0.0);
}

TEST(Metrics, UndefinedWhenAClassIsMissing) {
    const std::vector<Label> pd(4, Label::PD);
    EXPECT_THROW(metrics(pd, pd), UndefinedMetricError);
    EXPECT_EQ(accuracy(pd, pd), 100.0);
    EXPECT_THROW(metrics(std::vector<Label>(3), pd), InputError);
}

TEST(MeanStd, PopulationForm) {
    const std::vector<double> v{1.0, 3.0};
    EXPECT_EQ(mean_std(v), (MeanStd{2.0, 1.0}));
    const std::vector<double> one{5.0};
    EXPECT_EQ(mean_std(one), (MeanStd{5.0, 0.0}));
}

TEST(McNemar, FrozenValues) {
    EXPECT_DOUBLE_EQ(mcnemar_from_counts(0, 8).p_value, 0.0078125);
    EXPECT_DOUBLE_EQ(mcnemar_from_counts(1, 9).p_value, 0.021484375);
    EXPECT_EQ(mcnemar_from_counts(0, 0).p_value, 1.0);
    EXPECT_EQ(mcnemar_from_counts(4, 4).p_value, 1.0);
    const auto chi = mcnemar_from_counts(5, 20);
    EXPECT_EQ(chi.method, McNemarMethod::ChiSquareCorrected);
    EXPECT_DOUBLE_EQ(chi.statistic, 7.84);
    EXPECT_NEAR(chi.p_value, 0.005110260660855866, 1e-15);
}

TEST(McNemar, ExactMatchesBruteForce) {
    for (std::size_t b = 0; b <= 24; ++b)
        for (std::size_t c = 0; b + c <= 24; ++c) {
            const auto r = mcnemar_from_counts(b, c);
            EXPECT_EQ(r.method, McNemarMethod::ExactBinomial);
            EXPECT_NEAR(r.p_value, oracle::mcnemar_exact(b, c), 1e-12) << b << "," << c;
            EXPECT_EQ(r.p_value, mcnemar_from_counts(c, b).p_value);
        }
}

TEST(McNemar, CountsDisagreements) {
    using L = Label;
    const std::vector<L> truth{L::PD, L::PD, L::Control, L::Control};
    const std::vector<L> a{L::PD, L::PD, L::Control, L::PD};
    const std::vector<L> b{L::Control, L::PD, L::PD, L::Control};
    const auto r = mcnemar(a, b, truth);
    EXPECT_EQ(r.b, 2u);
    EXPECT_EQ(r.c, 1u);
    EXPECT_EQ(mcnemar(a, a, truth).p_value, 1.0);
    EXPECT_THROW(mcnemar(a, std::vector<L>(3), truth), InputError);
}

TEST(Ensemble, AveragesScoresNotVotes) {
    const std::vector<Prediction> g0{{0, Label::PD, Label::Control, {0.6, 0.4}}};
    const std::vector<Prediction> g2{{0, Label::PD, Label::PD, {0.0, 1.0}}};
    const auto avg = detail::average_predictions({&g0, &g0, &g2});
    ASSERT_EQ(avg.size(), 1u);
    EXPECT_NEAR(avg[0].scores[0], 0.4, 1e-15);
    EXPECT_NEAR(avg[0].scores[1], 0.6, 1e-15);
    EXPECT_EQ(avg[0].predicted, Label::PD);
}

TEST(Evaluate, SeparableSynthIsPerfect) {
    const auto d = synth_dataset(7, 10, 80, 0.0);
    const auto plan = make_fold_plan(d, 3);
    const auto rep = evaluate_config(d, plan, small_model(), options(2));
    EXPECT_EQ(rep.model_name, "DeepESN");
    EXPECT_EQ(rep.outcomes.size(), 6u);
    EXPECT_EQ(rep.test.mean, 100.0);
    EXPECT_EQ(rep.test.std, 0.0);
    EXPECT_EQ(rep.sensitivity.mean, 100.0);
    EXPECT_EQ(rep.specificity.mean, 100.0);
    EXPECT_EQ(rep.test_predictions(0).size(), d.size());
}

TEST(Evaluate, GuessesDrawDistinctReservoirs) {
    const auto d = synth_dataset(7, 6, 40, 0.5);
    const auto plan = make_fold_plan(d, 3);
    const auto rep = evaluate_config(d, plan, small_model(), options(2));
    EXPECT_NE(rep.at(0, 0).reservoir.master_seed, rep.at(0, 1).reservoir.master_seed);
    EXPECT_NE(rep.at(0, 0).reservoir.master_seed, rep.at(1, 0).reservoir.master_seed);
    EXPECT_EQ(rep.at(1, 1).reservoir.master_seed, guess_seed(99, 1, 1));
}

TEST(Evaluate, IdenticalAcrossWorkerCounts) {
    const auto d = synth_dataset(8, 6, 40, 0.8);
    const auto plan = make_fold_plan(d, 4);
    const auto a = evaluate_config(d, plan, small_model(), options(3, 1));
    const auto b = evaluate_config(d, plan, small_model(), options(3, 4));
    for (std::size_t g = 0; g < 3; ++g) EXPECT_EQ(a.test_predictions(g), b.test_predictions(g));
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.train, b.train);
}

TEST(Evaluate, EnsembleOfOneEqualsSingleGuess) {
    const auto d = synth_dataset(9, 6, 40, 1.0);
    const auto plan = make_fold_plan(d, 5);
    const auto rep = ensemble_evaluate(d, plan, small_model(), options(1));
    ASSERT_TRUE(rep.ensemble);
    const auto single = rep.test_predictions(0);
    ASSERT_EQ(rep.ensemble->test_predictions.size(), single.size());
    for (std::size_t i = 0; i < single.size(); ++i) {
        EXPECT_EQ(rep.ensemble->test_predictions[i].predicted, single[i].predicted);
        EXPECT_EQ(rep.ensemble->test_predictions[i].scores, single[i].scores);
    }
    EXPECT_EQ(rep.ensemble->test.accuracy, rep.test.mean);
    EXPECT_EQ(rep.ensemble->train_accuracy, rep.train.mean);
    EXPECT_EQ(rep.ensemble->validation_accuracy, rep.validation.mean);
}

TEST(Evaluate, AuditFindsNoLeakage) {
    const auto d = synth_dataset(10, 6, 30, 0.5);
    const auto plan = make_fold_plan(d, 6);
    SelectionAudit audit;
    HyperGrid g;
    g.layers = 2;
    g.units = {5};
    g.sigma = {1.0};
    g.sigma_hat = {1.0};
    g.rho = {0.9};
    g.lambda = {0.0, 1e-4};
    grid_search(d, plan, g, options(2), true, &audit);
    EXPECT_TRUE(audit.violations(plan).empty());
    ASSERT_EQ(audit.traces().size(), 3u);
    for (std::size_t f = 0; f < 3; ++f) {
        const auto train = plan.outer_training(f);
        EXPECT_EQ(audit.traces()[f].retrained, std::set<std::size_t>(train.begin(), train.end()));
    }
}

TEST(Evaluate, AuditReportsPlantedLeak) {
    const auto d = synth_dataset(10, 6, 30, 0.5);
    const auto plan = make_fold_plan(d, 6);
    SelectionAudit audit;
    evaluate_config(d, plan, small_model(), options(1), &audit);
    const std::vector<std::size_t> leaked{plan.outer[1].front()};
    audit.record(1, &SelectionAudit::FoldTrace::validated, leaked);
    const auto v = audit.violations(plan);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("fold 1"), std::string::npos);
}

TEST(GridSearch, SingletonGridMatchesDirectEvaluation) {
    const auto d = synth_dataset(11, 6, 40, 0.6);
    const auto plan = make_fold_plan(d, 7);
    const auto m = small_model();
    HyperGrid g;
    g.layers = m.layers;
    g.leak = m.leak;
    g.units = {m.units};
    g.sigma = {m.sigma};
    g.sigma_hat = {m.sigma_hat};
    g.rho = {m.rho};
    g.lambda = {m.lambda};
    const auto res = grid_search(d, plan, g, options(2));
    EXPECT_EQ(res.selected, (std::vector<std::size_t>{0, 0, 0}));
    const auto direct = evaluate_config(d, plan, m, options(2));
    for (std::size_t gi = 0; gi < 2; ++gi) EXPECT_EQ(res.final.test_predictions(gi), direct.test_predictions(gi));
    // Selection-phase validation scores agree with the per-guess outcomes.
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t gi = 0; gi < 2; ++gi)
            EXPECT_EQ(res.rows[f * 2 + gi].validation_accuracy, direct.at(f, gi).validation_accuracy);
}

TEST(GridSearch, SelectsByMeanValidationWithFirstTieWins) {
    const auto d = synth_dataset(7, 20, 80, 0.0);
    const auto plan = make_fold_plan(d, 8);
    HyperGrid g;
    g.layers = 2;
    g.units = {6};
    g.sigma = {1.0};
    g.sigma_hat = {1.0};
    g.rho = {0.9};
    g.lambda = {0.0, 1e-8, 1e6};
    const auto res = grid_search(d, plan, g, options(2));
    ASSERT_EQ(res.configs.size(), 3u);
    ASSERT_EQ(res.rows.size(), 3u * 3 * 2);
    for (std::size_t f = 0; f < 3; ++f) {
        std::size_t best = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double m = (res.rows[(f * 3 + c) * 2].validation_accuracy +
                              res.rows[(f * 3 + c) * 2 + 1].validation_accuracy) /
                             2.0;
            EXPECT_DOUBLE_EQ(res.mean_validation[f][c], m);
            if (m > res.mean_validation[f][best]) best = c;
        }
        EXPECT_EQ(res.selected[f], best);
        // A readout shrunk to nothing is never the best choice.
        EXPECT_LT(res.mean_validation[f][2], res.mean_validation[f][best]);
        EXPECT_NE(res.selected[f], 2u);
    }
    EXPECT_EQ(res.final.fold_configs, res.selected_configs());
}

TEST(GridSearch, RejectsEmptyGrid) {
    const auto d = synth_dataset(12, 4, 20, 0.3);
    const auto plan = make_fold_plan(d, 8, 3, 2);
    HyperGrid g;
    g.lambda.clear();
    EXPECT_THROW(grid_search(d, plan, g, options(1)), InputError);
}
