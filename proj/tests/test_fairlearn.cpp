#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fmmrec/disentangle.hpp"
#include "fmmrec/eval.hpp"
#include "fmmrec/fairlearn.hpp"
#include "fmmrec/synthgen.hpp"
#include "gradcheck.hpp"
#include "testutil.hpp"

using namespace fmmrec;

namespace {

// Two-layer net acting as the identity on nonnegative inputs: both linear
// maps are identity, so only the LeakyReLU between them could bend values.
Mlp<float> identity_mlp(const std::string& name, std::size_t d) {
    Rng rng(1);
    Mlp<float> m(name, d, d, d, rng);
    m.w1.value.fill(0.0f);
    m.w2.value.fill(0.0f);
    for (std::size_t i = 0; i < d; ++i) {
        m.w1.value(i, i) = 1.0f;
        m.w2.value(i, i) = 1.0f;
    }
    m.b1.value.fill(0.0f);
    m.b2.value.fill(0.0f);
    return m;
}

// user 0 trains on items {0,1}, user 1 on {2}, user 2 has no history.
InteractionDataset tiny_interactions() {
    InteractionDataset inter;
    inter.n_users = 3;
    inter.n_items = 3;
    inter.interactions = {{0, 0, Split::train}, {0, 1, Split::train}, {1, 2, Split::train}};
    inter.rebuild_index();
    return inter;
}

bool same_values(const Mat<float>& a, const Mat<float>& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

double recall_of(const Mat<float>& user_rep, const Mat<float>& item_rep,
                 const InteractionDataset& inter, std::size_t k) {
    auto ranked = rank_all(user_rep, item_rep, inter, k, true);
    return ranking_metrics(ranked, inter.valid_items, k).recall;
}

}  // namespace

TEST_CASE("config validation rejects out-of-range values") {
    FairLearnConfig good;
    CHECK_NOTHROW(validate(good));

    FairLearnConfig c = good;
    c.lambda_h = -0.1;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = good;
    c.lambda_dv = -1e-9;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = good;
    c.lr = 0.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = good;
    c.batch = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = good;
    c.d_r = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = good;
    c.dropout = 1.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    c = good;
    c.eval_k = 0;
    CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("a one-filter bank returns that filter's output on the role-prefixed input") {
    Rng rng(3);
    std::vector<Mlp<float>> bank;
    bank.emplace_back("f", 6, 6, 6, rng);
    Mat<float> role(1, 2);
    role(0, 0) = 0.3f;
    role(0, 1) = -0.7f;
    Mat<float> x = Mat<float>(3, 4);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.1f * float(i) - 0.5f;

    Mat<float> got = filter_reps(bank, role, x);

    Mat<float> joined(3, 6);
    for (std::size_t r = 0; r < 3; ++r) {
        joined(r, 0) = role(0, 0);
        joined(r, 1) = role(0, 1);
        for (std::size_t c = 0; c < 4; ++c) joined(r, 2 + c) = x(r, c);
    }
    Mat<float> want = bank[0].infer(joined);
    REQUIRE(got.rows == want.rows);
    REQUIRE(got.cols == want.cols);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-6));
}

TEST_CASE("identical sub-filters average to any single output") {
    Rng rng(5);
    Mlp<float> f("f", 4, 4, 4, rng);
    std::vector<Mlp<float>> bank{f, f, f};
    Mat<float> role(1, 1, 0.5f);
    Mat<float> x = Mat<float>(2, 3);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.2f * float(i + 1);

    Mat<float> mean3 = filter_reps(bank, role, x);
    Mat<float> single = filter_reps({f}, role, x);
    for (std::size_t i = 0; i < mean3.size(); ++i)
        CHECK(mean3.data[i] == doctest::Approx(single.data[i]).epsilon(1e-6));
}

TEST_CASE("three scaled sub-filters average to a hand-computed mean") {
    // Each sub-filter is y = a_k * x + c_k on positive inputs, so the bank
    // output is (mean a) * x + mean c elementwise.
    double scales[3] = {1.0, 2.0, 4.0};
    double shifts[3] = {0.1, 0.2, 0.3};
    std::vector<Mlp<float>> bank;
    for (int k = 0; k < 3; ++k) {
        Mlp<float> f = identity_mlp(cat("f", k), 2);
        f.w1.value(0, 0) = static_cast<float>(scales[k]);
        f.w1.value(1, 1) = static_cast<float>(scales[k]);
        f.b2.value.fill(static_cast<float>(shifts[k]));
        bank.push_back(std::move(f));
    }
    Mat<float> role(1, 1, 0.5f);
    Mat<float> x(2, 1);
    x(0, 0) = 1.0f;
    x(1, 0) = 2.0f;

    Mat<float> got = filter_reps(bank, role, x);
    double mean_a = (1.0 + 2.0 + 4.0) / 3.0;
    double mean_c = (0.1 + 0.2 + 0.3) / 3.0;
    REQUIRE(got.rows == 2);
    REQUIRE(got.cols == 2);
    CHECK(got(0, 0) == doctest::Approx(mean_a * 0.5 + mean_c).epsilon(1e-6));
    CHECK(got(0, 1) == doctest::Approx(mean_a * 1.0 + mean_c).epsilon(1e-6));
    CHECK(got(1, 0) == doctest::Approx(mean_a * 0.5 + mean_c).epsilon(1e-6));
    CHECK(got(1, 1) == doctest::Approx(mean_a * 2.0 + mean_c).epsilon(1e-6));
}

TEST_CASE("filter bank rejects width mismatches and empty banks") {
    Rng rng(4);
    std::vector<Mlp<float>> bank;
    bank.emplace_back("f", 6, 6, 6, rng);
    Mat<float> role(1, 3, 0.0f);
    Mat<float> x(2, 4, 0.0f);
    CHECK_THROWS_AS(filter_reps(bank, role, x), ShapeError);
    CHECK_THROWS_AS(filter_reps({}, role, x), ConfigError);
    Mat<float> role2(2, 2, 0.0f);
    CHECK_THROWS_AS(filter_reps(bank, role2, x), ShapeError);
}

TEST_CASE("discriminator losses hit ln 2 at indifference and vanish when confident") {
    InteractionDataset inter = tiny_interactions();
    SensitiveAttributeTable attrs;
    attrs.attrs = {{"grp", 2}};
    attrs.labels = {{1}, {0}, {0}};

    Phase2Nets<float> nets;
    Rng rng(2);
    nets.heads_explicit.emplace_back("he", 2, 2, 1, rng);
    nets.heads_implicit.emplace_back("hi", 2, 2, 1, rng);

    FilteredReps reps;
    reps.user = Mat<float>(3, 2, 1.0f);
    reps.item = Mat<float>(3, 2, 1.0f);
    reps.implicit_user = Mat<float>(3, 2, 1.0f);

    // Zero weights mean logit 0, probability one half, for every input.
    for (Mlp<float>* h : {&nets.heads_explicit[0], &nets.heads_implicit[0]}) {
        h->w1.value.fill(0.0f);
        h->b1.value.fill(0.0f);
        h->w2.value.fill(0.0f);
        h->b2.value.fill(0.0f);
    }
    auto [le, li] = disc_losses_phase2(nets, reps, inter, attrs, {0, 1});
    CHECK(le == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(li == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // Confident heads: rows (4,4) for label 1 and (-4,-4) for label 0 map to
    // logits +10 and -10 through w = 2.4752475, b = -9.8019802.
    reps.user(0, 0) = reps.user(0, 1) = 4.0f;
    reps.user(1, 0) = reps.user(1, 1) = -4.0f;
    reps.implicit_user = reps.user;
    for (Mlp<float>* h : {&nets.heads_explicit[0], &nets.heads_implicit[0]}) {
        *h = identity_mlp(h->w1.name, 2);
        h->w2.value = Mat<float>(2, 1, 2.4752475f);
        h->b2.value = Mat<float>(1, 1, -9.8019802f);
    }
    auto [ce, ci] = disc_losses_phase2(nets, reps, inter, attrs, {0, 1});
    CHECK(ce < 1e-3);
    CHECK(ci < 1e-3);
}

TEST_CASE("two-user discriminator losses match hand computations") {
    InteractionDataset inter = tiny_interactions();

    SUBCASE("binary head") {
        SensitiveAttributeTable attrs;
        attrs.attrs = {{"grp", 2}};
        attrs.labels = {{1}, {0}, {0}};
        Phase2Nets<float> nets;
        Mlp<float> head = identity_mlp("h", 2);
        head.w2.value = Mat<float>(2, 1, 0.0f);
        head.w2.value(0, 0) = 1.0f;
        head.b2.value = Mat<float>(1, 1, 0.5f);
        nets.heads_explicit.push_back(head);
        nets.heads_implicit.push_back(head);

        FilteredReps reps;
        reps.user = Mat<float>(3, 2, 9.0f);
        reps.user(0, 0) = 0.2f;
        reps.user(1, 0) = -0.2f;
        reps.item = Mat<float>(3, 2, 0.0f);
        reps.implicit_user = reps.user;

        // logits 0.7 and 0.498 against labels 1 and 0
        auto [le, li] = disc_losses_phase2(nets, reps, inter, attrs, {0, 1});
        CHECK(le == doctest::Approx(0.6880092922436316).epsilon(1e-5));
        CHECK(li == doctest::Approx(0.6880092922436316).epsilon(1e-5));
    }

    SUBCASE("three-class head") {
        SensitiveAttributeTable attrs;
        attrs.attrs = {{"occ", 3}};
        attrs.labels = {{2}, {1}, {0}};
        Phase2Nets<float> nets;
        Mlp<float> head = identity_mlp("h", 2);
        head.w2.value = Mat<float>(2, 3);
        head.w2.value(0, 0) = 0.3f;
        head.w2.value(0, 1) = -0.1f;
        head.w2.value(0, 2) = 0.4f;
        head.w2.value(1, 0) = 0.0f;
        head.w2.value(1, 1) = 0.2f;
        head.w2.value(1, 2) = -0.5f;
        head.b2.value = Mat<float>(1, 3, 0.0f);
        nets.heads_explicit.push_back(head);
        nets.heads_implicit.push_back(head);

        FilteredReps reps;
        reps.user = Mat<float>(3, 2, 0.0f);
        reps.user(0, 0) = 1.0f;  // row 0 picks the first weight row
        reps.user(1, 1) = 1.0f;  // row 1 picks the second
        reps.item = Mat<float>(3, 2, 0.0f);
        reps.implicit_user = reps.user;

        auto [le, li] = disc_losses_phase2(nets, reps, inter, attrs, {0, 1});
        CHECK(le == doctest::Approx(0.8801869297091023).epsilon(1e-5));
        CHECK(li == doctest::Approx(0.8801869297091023).epsilon(1e-5));
    }

    SUBCASE("history-less users are excluded from the implicit loss only") {
        SensitiveAttributeTable attrs;
        attrs.attrs = {{"grp", 2}};
        attrs.labels = {{1}, {0}, {1}};
        Phase2Nets<float> nets;
        Mlp<float> head = identity_mlp("h", 2);
        head.w2.value = Mat<float>(2, 1, 0.0f);
        head.b2.value = Mat<float>(1, 1, 2.0f);  // fixed logit 2 for every row
        nets.heads_explicit.push_back(head);
        nets.heads_implicit.push_back(head);

        FilteredReps reps;
        reps.user = Mat<float>(3, 2, 1.0f);
        reps.item = Mat<float>(3, 2, 0.0f);
        reps.implicit_user = reps.user;

        // Explicit side averages all three users; implicit drops user 2.
        double l1 = -std::log(1.0 / (1.0 + std::exp(-2.0)));
        double l0 = -std::log(1.0 - 1.0 / (1.0 + std::exp(-2.0)));
        auto [le, li] = disc_losses_phase2(nets, reps, inter, attrs, {0, 1, 2});
        CHECK(le == doctest::Approx((l1 + l0 + l1) / 3.0).epsilon(1e-5));
        CHECK(li == doctest::Approx((l1 + l0) / 2.0).epsilon(1e-5));

        CHECK_THROWS_AS(disc_losses_phase2(nets, reps, inter, attrs, {2}), DataError);
        CHECK_THROWS_AS(
            disc_losses_phase2(nets, reps, inter, attrs, std::vector<std::uint32_t>{}),
            DataError);
    }
}

TEST_CASE("scorer over filtered reps is a dot product with id tie-breaks") {
    FilteredReps reps;
    reps.user = Mat<float>(2, 3, 0.0f);
    reps.item = Mat<float>(4, 3, 0.0f);
    Scorer zero = scorer_from_filtered(reps);
    CHECK(zero.score(0, 2) == 0.0f);
    CHECK(zero.recommend_topk(1, 3, nullptr) == std::vector<std::uint32_t>{0, 1, 2});

    reps.user(0, 0) = 1.0f;
    reps.user(0, 2) = 2.0f;
    reps.item(1, 0) = 0.5f;
    reps.item(1, 2) = -1.0f;
    Scorer sc = scorer_from_filtered(reps);
    CHECK(sc.score(0, 1) == doctest::Approx(1.0 * 0.5 + 2.0 * -1.0));

    reps.item(2, 0) = 0.5f;
    reps.item(2, 2) = -1.0f;  // item 2 duplicates item 1, id order must win
    Scorer tied = scorer_from_filtered(reps);
    auto top = tied.recommend_topk(0, 2, nullptr);
    CHECK(top == std::vector<std::uint32_t>{0, 3});  // -1.5 scores sort last

    reps.item = Mat<float>(4, 2, 0.0f);
    CHECK_THROWS_AS(scorer_from_filtered(reps), ShapeError);
}

TEST_CASE("history mix matrix averages uniformly over train items") {
    InteractionDataset inter = tiny_interactions();
    CsrMatrix<float> mix = history_mix_matrix(inter);
    REQUIRE(mix.rows == 3);
    REQUIRE(mix.cols == 3);
    CHECK(mix.indptr == std::vector<std::uint32_t>{0, 2, 3, 3});
    CHECK(mix.indices == std::vector<std::uint32_t>{0, 1, 2});
    CHECK(mix.weights[0] == doctest::Approx(0.5));
    CHECK(mix.weights[1] == doctest::Approx(0.5));
    CHECK(mix.weights[2] == doctest::Approx(1.0));
}

TEST_CASE("batch sampling drops history-less users and avoids train items as negatives") {
    Dataset ds;
    ds.interactions = tiny_interactions();
    ds.attributes.attrs = {{"grp", 2}};
    ds.attributes.labels = {{1}, {0}, {1}};

    Rng rng(11);
    Phase2Batch batch = make_phase2_batch(ds, {0, 1, 2}, rng);
    REQUIRE(batch.users == std::vector<std::uint32_t>{0, 1});
    CHECK(batch.labels[0] == std::vector<std::uint32_t>{1, 0});
    // user 0 trains on {0,1}, so its only legal negative is item 2
    CHECK(batch.pos_items[0] <= 1);
    CHECK(batch.neg_items[0] == 2);
    CHECK(batch.pos_items[1] == 2);
    CHECK(batch.neg_items[1] <= 1);

    Rng r1(7), r2(7);
    Phase2Batch a = make_phase2_batch(ds, {0, 1}, r1);
    Phase2Batch b = make_phase2_batch(ds, {0, 1}, r2);
    CHECK(a.pos_items == b.pos_items);
    CHECK(a.neg_items == b.neg_items);
}

TEST_CASE("implicit representation equals the mean of filtered item rows over history") {
    SynthConfig scfg;
    scfg.n_users = 12;
    scfg.n_items = 10;
    scfg.interactions_per_user = 4;
    scfg.modalities = {{"v", 6, 0.5}};
    scfg.attrs = {{"grp", 2}};
    scfg.coupling = 0.4;
    scfg.seed = 31;
    SynthResult synth = generate(scfg);
    Dataset& ds = synth.dataset;

    FairLearnConfig cfg;
    cfg.base = BaseKind::VbprLite;
    cfg.d = 6;
    cfg.d_r = 3;
    Rng rng(8);
    Phase2Nets<float> nets =
        make_phase2_nets(12, 10, {6}, ds.attributes, cfg, rng);

    std::vector<Mat<float>> feats = {ds.modalities[0].features};
    Mat<float> aggregates = history_mean(ds.modalities[0].features, ds.interactions,
                                         ds.interactions.users_with_history());
    SimilarityGraph fair = build_similarity(aggregates, 3);
    SimilarityGraph biased = fair;

    // Graph rows cover only users with history here, so skip enhancement.
    cfg.lambda_h = 0.0;
    FilteredReps reps = compute_filtered_reps(nets, ds, feats, fair, biased, cfg);

    for (std::uint32_t u = 0; u < ds.interactions.n_users; ++u) {
        const auto& items = ds.interactions.train_items[u];
        for (std::size_t c = 0; c < reps.item.cols; ++c) {
            double want = 0.0;
            for (std::uint32_t v : items) want += reps.item(v, c);
            if (!items.empty()) want /= double(items.size());
            CHECK(reps.implicit_user(u, c) == doctest::Approx(want).epsilon(1e-5));
        }
    }
}

TEST_CASE("main and discriminator steps update disjoint parameter sets") {
    SynthConfig scfg;
    scfg.n_users = 10;
    scfg.n_items = 8;
    scfg.interactions_per_user = 3;
    scfg.modalities = {{"v", 5, 0.5}};
    scfg.attrs = {{"grp", 2}};
    scfg.coupling = 0.4;
    scfg.seed = 13;
    SynthResult synth = generate(scfg);
    Dataset& ds = synth.dataset;

    FairLearnConfig cfg;
    cfg.base = BaseKind::VbprLite;
    cfg.d = 4;
    cfg.d_r = 4;
    Rng rng(6);
    Phase2Nets<float> nets = make_phase2_nets(10, 8, {5}, ds.attributes, cfg, rng);
    std::vector<Mat<float>> feats = {ds.modalities[0].features};

    Mat<float> aggregates(10, 5, 0.1f);
    for (std::size_t i = 0; i < aggregates.size(); ++i) aggregates.data[i] += 0.01f * float(i % 7);
    SimilarityGraph fair = build_similarity(aggregates, 2);
    SimilarityGraph biased = fair;
    CsrMatrix<float> mix = history_mix_matrix(ds.interactions);

    std::vector<std::uint32_t> attr_classes = {2};
    Rng srng(21);
    Phase2Batch batch =
        make_phase2_batch(ds, ds.interactions.users_with_history(), srng);

    auto values_of = [](const std::vector<Param<float>*>& ps) {
        std::vector<Mat<float>> out;
        for (auto* p : ps) out.push_back(p->value);
        return out;
    };

    std::vector<Mat<float>> disc_before = values_of(nets.disc_params());
    {
        Tape<float> tape;
        ParamBinder<float> bind(tape);
        Phase2Losses<float> l =
            build_phase2_losses(tape, bind, nets, feats, &fair.adj, &biased.adj, mix, batch,
                                attr_classes, cfg, true, false, nullptr);
        tape.backward(l.main_objective);
        bind.harvest();
        bind.step_all();
    }
    std::vector<Mat<float>> disc_after = values_of(nets.disc_params());
    std::vector<Mat<float>> main_after_step = values_of(nets.main_params());
    for (std::size_t i = 0; i < disc_before.size(); ++i)
        CHECK(same_values(disc_before[i], disc_after[i]));

    {
        Mat<float> xe(batch.users.size(), nets.rep_dim(), 0.3f);
        Mat<float> xi(batch.users.size(), nets.rep_dim(), -0.2f);
        Tape<float> tape;
        ParamBinder<float> bind(tape);
        Phase2HeadLosses<float> l = build_phase2_head_losses(tape, bind, nets, xe, xi, batch,
                                                             attr_classes, false, nullptr);
        tape.backward(l.disc_objective);
        bind.harvest();
        bind.step_all();
    }
    std::vector<Mat<float>> main_after_disc = values_of(nets.main_params());
    std::vector<Mat<float>> disc_final = values_of(nets.disc_params());
    for (std::size_t i = 0; i < main_after_step.size(); ++i)
        CHECK(same_values(main_after_step[i], main_after_disc[i]));

    bool some_disc_moved = false;
    for (std::size_t i = 0; i < disc_final.size(); ++i)
        if (!same_values(disc_after[i], disc_final[i])) some_disc_moved = true;
    CHECK(some_disc_moved);
}

TEST_CASE("composite objectives pass the finite-difference check on both sides") {
    SynthConfig scfg;
    scfg.n_users = 8;
    scfg.n_items = 8;
    scfg.interactions_per_user = 3;
    scfg.modalities = {{"v", 5, 0.6}};
    scfg.attrs = {{"grp", 2}, {"occ", 3}};
    scfg.coupling = 0.4;
    scfg.seed = 77;
    SynthResult synth = generate(scfg);
    Dataset& ds = synth.dataset;

    FairLearnConfig cfg;
    cfg.base = BaseKind::VbprLite;
    cfg.d = 4;
    cfg.d_r = 4;

    // The init seed keeps every LeakyReLU preactivation away from the kink,
    // where a finite-difference step would straddle two slopes.
    Rng rng(38);
    Phase2Nets<float> nets_f = make_phase2_nets(8, 8, {5}, ds.attributes, cfg, rng);
    Phase2Nets<double> nets = phase2_nets_cast<double>(nets_f);

    Rng arng(14);
    Mat<float> agg_a(8, 3), agg_b(8, 3);
    for (std::size_t i = 0; i < agg_a.size(); ++i) {
        agg_a.data[i] = float(bounded_rand(arng, 1000)) / 1000.0f;
        agg_b.data[i] = float(bounded_rand(arng, 1000)) / 1000.0f;
    }
    CsrMatrix<double> fair = csr_cast<double>(build_similarity(agg_a, 2).adj);
    CsrMatrix<double> biased = csr_cast<double>(build_similarity(agg_b, 2).adj);
    CsrMatrix<double> mix = csr_cast<double>(history_mix_matrix(ds.interactions));
    std::vector<Mat<double>> feats = {mat_cast<double>(ds.modalities[0].features)};

    Rng srng(33);
    Phase2Batch batch =
        make_phase2_batch(ds, ds.interactions.users_with_history(), srng);
    std::vector<std::uint32_t> classes = {2, 3};

    for (bool main_side : {true, false}) {
        auto build = [&](Tape<double>& tape, ParamBinder<double>& bind) {
            return build_phase2_losses(tape, bind, nets, feats, &fair, &biased, mix, batch,
                                       classes, cfg, main_side, false, nullptr);
        };
        auto eval = [&]() {
            Tape<double> tape;
            ParamBinder<double> bind(tape);
            Phase2Losses<double> l = build(tape, bind);
            return tape.scalar(main_side ? l.main_objective : l.disc_objective);
        };
        auto grads = [&]() {
            Tape<double> tape;
            ParamBinder<double> bind(tape);
            Phase2Losses<double> l = build(tape, bind);
            tape.backward(main_side ? l.main_objective : l.disc_objective);
            bind.harvest();
        };
        std::vector<Param<double>*> params =
            main_side ? nets.main_params() : nets.disc_params();
        gradcheck::Report rep = gradcheck::check_params(params, eval, grads);
        CAPTURE(main_side);
        CHECK(rep.max_rel_err < 1e-4);
        CHECK(rep.entries_checked > 200);
    }
}

TEST_CASE("zero fairness weights make the main gradient the pure ranking gradient") {
    SynthConfig scfg;
    scfg.n_users = 8;
    scfg.n_items = 8;
    scfg.interactions_per_user = 3;
    scfg.modalities = {{"v", 5, 0.6}};
    scfg.attrs = {{"grp", 2}};
    scfg.coupling = 0.4;
    scfg.seed = 78;
    SynthResult synth = generate(scfg);
    Dataset& ds = synth.dataset;

    FairLearnConfig cfg;
    cfg.base = BaseKind::MfBpr;
    cfg.d = 4;
    cfg.d_r = 4;
    cfg.lambda_du = 0.0;
    cfg.lambda_dv = 0.0;

    Rng rng(38);
    Phase2Nets<float> nets_f = make_phase2_nets(8, 8, {}, ds.attributes, cfg, rng);
    Phase2Nets<double> nets = phase2_nets_cast<double>(nets_f);

    Rng arng(15);
    Mat<float> agg(8, 3);
    for (std::size_t i = 0; i < agg.size(); ++i)
        agg.data[i] = float(bounded_rand(arng, 1000)) / 1000.0f;
    CsrMatrix<double> fair = csr_cast<double>(build_similarity(agg, 2).adj);
    CsrMatrix<double> mix = csr_cast<double>(history_mix_matrix(ds.interactions));
    std::vector<Mat<double>> feats;

    Rng srng(35);
    Phase2Batch batch =
        make_phase2_batch(ds, ds.interactions.users_with_history(), srng);
    std::vector<std::uint32_t> classes = {2};
    const CsrMatrix<double>* no_graph = nullptr;

    // Numeric differences of the ranking loss alone against analytic
    // gradients of the full main objective: equal only if the weighted
    // discriminator terms contribute nothing.
    auto eval_rec = [&]() {
        Tape<double> tape;
        ParamBinder<double> bind(tape);
        Phase2Losses<double> l = build_phase2_losses(tape, bind, nets, feats, &fair, no_graph,
                                                     mix, batch, classes, cfg, true, false,
                                                     nullptr);
        return tape.scalar(l.rec);
    };
    auto grads_main = [&]() {
        Tape<double> tape;
        ParamBinder<double> bind(tape);
        Phase2Losses<double> l = build_phase2_losses(tape, bind, nets, feats, &fair, no_graph,
                                                     mix, batch, classes, cfg, true, false,
                                                     nullptr);
        tape.backward(l.main_objective);
        bind.harvest();
    };
    gradcheck::Report rep = gradcheck::check_params(nets.main_params(), eval_rec, grads_main);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("training with zero fairness weights keeps base-level ranking quality") {
    SynthConfig scfg;
    scfg.n_users = 120;
    scfg.n_items = 60;
    scfg.interactions_per_user = 10;
    scfg.modalities = {{"v", 8, 0.4}};
    scfg.attrs = {{"grp", 2}};
    scfg.coupling = 0.3;
    scfg.seed = 91;
    SynthResult synth = generate(scfg);
    Dataset& ds = synth.dataset;

    BaseTrainConfig bcfg;
    bcfg.d = 16;
    bcfg.batch_size = 128;
    bcfg.max_epochs = 150;
    bcfg.patience = 25;
    bcfg.eval_k = 10;
    bcfg.seed = 5;
    BaseTrainResult base = train_base(ds.interactions, {}, BaseKind::MfBpr, bcfg);
    double base_recall = recall_of(base.user_rep, base.item_rep, ds.interactions, 10);

    // The adversarial trainer sees one pair per user per epoch, far fewer
    // than the base sampler, so it gets a larger epoch budget.
    FairLearnConfig cfg;
    cfg.base = BaseKind::MfBpr;
    cfg.d = 16;
    cfg.d_r = 8;
    cfg.lambda_h = 0.0;
    cfg.lambda_du = 0.0;
    cfg.lambda_dv = 0.0;
    cfg.max_epochs = 400;
    cfg.patience = 50;
    cfg.eval_k = 10;
    cfg.seed = 5;
    SimilarityGraph unused;
    Phase2Result res = train_phase2(ds, {}, unused, unused, cfg);
    double fair_recall = recall_of(res.reps.user, res.reps.item, ds.interactions, 10);

    // The filtered model has extra capacity (role indicators plus a filter
    // bank), so it may beat the base model; the contract is no collapse.
    CAPTURE(base_recall);
    CAPTURE(fair_recall);
    REQUIRE(base_recall > 0.05);
    CHECK(fair_recall >= 0.7 * base_recall);
}

TEST_CASE("fairness training is deterministic and checkpoints round-trip") {
    SynthConfig scfg;
    scfg.n_users = 60;
    scfg.n_items = 40;
    scfg.interactions_per_user = 6;
    scfg.modalities = {{"v", 8, 0.6}};
    scfg.attrs = {{"grp", 2}};
    scfg.coupling = 0.5;
    scfg.seed = 44;
    SynthResult synth = generate(scfg);
    Dataset& ds = synth.dataset;

    Mat<float> agg_f = history_mean(ds.modalities[0].features, ds.interactions, [&] {
        std::vector<std::uint32_t> all(ds.interactions.n_users);
        std::iota(all.begin(), all.end(), 0u);
        return all;
    }());
    SimilarityGraph fair = build_similarity(agg_f, 5);
    Mat<float> agg_b = agg_f;
    for (std::size_t i = 0; i < agg_b.size(); ++i) agg_b.data[i] = -agg_b.data[i];
    SimilarityGraph biased = build_similarity(agg_b, 5);

    FairLearnConfig cfg;
    cfg.base = BaseKind::VbprLite;
    cfg.d = 8;
    cfg.d_r = 8;
    cfg.max_epochs = 12;
    cfg.patience = 6;
    cfg.eval_k = 10;
    cfg.seed = 3;
    std::vector<Mat<float>> feats = {ds.modalities[0].features};

    Phase2Result a = train_phase2(ds, feats, fair, biased, cfg);
    Phase2Result b = train_phase2(ds, feats, fair, biased, cfg);
    CHECK(same_values(a.reps.user, b.reps.user));
    CHECK(same_values(a.reps.item, b.reps.item));
    CHECK(same_values(a.nets.emb.users.value, b.nets.emb.users.value));
    CHECK(a.log == b.log);

    double role_gap = 0.0;
    for (std::size_t c = 0; c < a.nets.role_user.value.cols; ++c) {
        double diff = double(a.nets.role_user.value(0, c)) - double(a.nets.role_item.value(0, c));
        role_gap += diff * diff;
    }
    CHECK(std::sqrt(role_gap) > 0.0);

    testutil::TempDir dir;
    std::string p1 = dir.file("model_a.fmm2");
    std::string p2 = dir.file("model_b.fmm2");
    save_fmm2(p1, a.nets, a.log);
    save_fmm2(p2, b.nets, b.log);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1 + ".json") == slurp(p2 + ".json"));

    Phase2Nets<float> loaded = load_fmm2(p1);
    CHECK(same_values(loaded.emb.users.value, a.nets.emb.users.value));
    CHECK(same_values(loaded.emb.items.value, a.nets.emb.items.value));
    CHECK(same_values(loaded.role_item.value, a.nets.role_item.value));
    REQUIRE(loaded.filters.size() == a.nets.filters.size());
    CHECK(same_values(loaded.filters[0].w1.value, a.nets.filters[0].w1.value));
    REQUIRE(loaded.projector.maps.size() == 1);
    CHECK(same_values(loaded.projector.maps[0].value, a.nets.projector.maps[0].value));

    FilteredReps again = compute_filtered_reps(loaded, ds, feats, fair, biased, cfg);
    CHECK(same_values(again.user, a.reps.user));
    CHECK(same_values(again.item, a.reps.item));
    CHECK(same_values(again.implicit_user, a.reps.implicit_user));

    nlohmann::json side = load_fmm2_sidecar(p1);
    CHECK(side["config"]["lambda_du"] == cfg.lambda_du);
    CHECK(side["epochs"].size() == a.epochs_ran);

    std::string bad = dir.file("bad.fmm2");
    {
        std::ofstream out(bad, std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_AS(load_fmm2(bad), DataError);
    std::vector<char> bytes = slurp(p1);
    bytes.resize(bytes.size() / 2);
    std::string cut = dir.file("cut.fmm2");
    {
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_fmm2(cut), DataError);
    CHECK_THROWS_AS(load_fmm2(dir.file("absent.fmm2")), MissingArtifactError);
    CHECK_THROWS_AS(load_fmm2_sidecar(dir.file("absent.fmm2")), MissingArtifactError);
}

TEST_CASE("graph coverage mismatches surface as missing artifacts") {
    SynthConfig scfg;
    scfg.n_users = 20;
    scfg.n_items = 12;
    scfg.interactions_per_user = 4;
    scfg.modalities = {{"v", 4, 0.5}};
    scfg.attrs = {{"grp", 2}};
    scfg.seed = 17;
    SynthResult synth = generate(scfg);

    Mat<float> agg(6, 4, 0.2f);  // wrong user count on purpose
    SimilarityGraph small = build_similarity(agg, 2);
    FairLearnConfig cfg;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(train_phase2(synth.dataset, {}, small, small, cfg),
                    MissingArtifactError);
}
