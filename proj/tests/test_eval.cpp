#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "fmmrec/eval.hpp"
#include "fmmrec/synthgen.hpp"
#include "testutil.hpp"

using namespace fmmrec;

namespace {

// Brute-force oracles kept deliberately independent of the implementation.
double oracle_recall(const std::vector<std::vector<std::uint32_t>>& ranked,
                     const std::vector<std::vector<std::uint32_t>>& relevant, std::size_t k) {
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t u = 0; u < ranked.size(); ++u) {
        if (relevant[u].empty()) continue;
        std::set<std::uint32_t> rel(relevant[u].begin(), relevant[u].end());
        std::size_t hits = 0;
        for (std::size_t p = 0; p < std::min(k, ranked[u].size()); ++p)
            hits += rel.count(ranked[u][p]);
        sum += double(hits) / double(rel.size());
        counted += 1;
    }
    return counted ? sum / double(counted) : 0.0;
}

double oracle_ndcg(const std::vector<std::vector<std::uint32_t>>& ranked,
                   const std::vector<std::vector<std::uint32_t>>& relevant, std::size_t k) {
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t u = 0; u < ranked.size(); ++u) {
        if (relevant[u].empty()) continue;
        std::set<std::uint32_t> rel(relevant[u].begin(), relevant[u].end());
        double dcg = 0;
        for (std::size_t p = 0; p < std::min(k, ranked[u].size()); ++p)
            if (rel.count(ranked[u][p])) dcg += 1.0 / std::log2(p + 2.0);
        double idcg = 0;
        for (std::size_t p = 0; p < std::min(k, rel.size()); ++p) idcg += 1.0 / std::log2(p + 2.0);
        sum += dcg / idcg;
        counted += 1;
    }
    return counted ? sum / double(counted) : 0.0;
}

double oracle_auc(const std::vector<double>& s, const std::vector<std::uint32_t>& y) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            pairs += 1;
            if (s[i] > s[j])
                wins += 1;
            else if (s[i] == s[j])
                wins += 0.5;
        }
    return wins / pairs;
}

}  // namespace

TEST_CASE("recall trivial cases") {
    std::vector<std::vector<std::uint32_t>> ranked = {{1, 2, 3}, {4, 5, 6}};
    std::vector<std::vector<std::uint32_t>> rel = {{1, 2}, {9}};
    CHECK(recall_at_k(ranked, {{1, 2, 3}, {4, 5}}, 3) == doctest::Approx(1.0));
    CHECK(recall_at_k(ranked, {{7}, {9}}, 3) == doctest::Approx(0.0));
    CHECK(recall_at_k(ranked, rel, 3) == doctest::Approx(0.5));
}

TEST_CASE("ndcg trivial cases") {
    CHECK(ndcg_at_k({{5, 1, 2}}, {{5}}, 3) == doctest::Approx(1.0));
    CHECK(ndcg_at_k({{1, 5, 2}}, {{5}}, 3) == doctest::Approx(1.0 / std::log2(3.0)));
    CHECK(ndcg_at_k({{1, 2, 3}}, {{9}}, 3) == doctest::Approx(0.0));
}

TEST_CASE("users without held-out items are skipped and counted") {
    auto rep = ranking_metrics({{1}, {2}}, {{}, {2}}, 1);
    CHECK(rep.skipped_users == 1);
    CHECK(rep.evaluated_users == std::vector<std::uint32_t>({1}));
    CHECK(rep.recall == doctest::Approx(1.0));
}

TEST_CASE("ranking metrics match brute-force oracles on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        std::size_t n_users = 1 + bounded_rand(rng, 20);
        std::size_t n_items = 5 + bounded_rand(rng, 46);
        std::size_t k = 1 + bounded_rand(rng, 20);
        std::vector<std::vector<std::uint32_t>> ranked(n_users), rel(n_users);
        for (std::size_t u = 0; u < n_users; ++u) {
            std::vector<std::uint32_t> perm(n_items);
            for (std::size_t i = 0; i < n_items; ++i) perm[i] = i;
            for (std::size_t i = n_items; i > 1; --i)
                std::swap(perm[i - 1], perm[bounded_rand(rng, i)]);
            ranked[u].assign(perm.begin(), perm.begin() + std::min(n_items, k + 3));
            std::size_t n_rel = bounded_rand(rng, 6);
            for (std::size_t i = 0; i < n_rel; ++i)
                rel[u].push_back(static_cast<std::uint32_t>(bounded_rand(rng, n_items)));
            std::sort(rel[u].begin(), rel[u].end());
            rel[u].erase(std::unique(rel[u].begin(), rel[u].end()), rel[u].end());
        }
        CHECK(recall_at_k(ranked, rel, k) == oracle_recall(ranked, rel, k));
        CHECK(ndcg_at_k(ranked, rel, k) == oracle_ndcg(ranked, rel, k));
    }
}

TEST_CASE("auc basics") {
    CHECK(auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
    CHECK(auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(auc({0.5, 0.4}, {1, 1}), DataError);
    CHECK(auc({0.3, 0.7, 0.3, 0.2, 0.9, 0.3}, {0, 1, 1, 0, 1, 0}) ==
          oracle_auc({0.3, 0.7, 0.3, 0.2, 0.9, 0.3}, {0, 1, 1, 0, 1, 0}));
}

TEST_CASE("auc equals pair counting on random instances, including ties") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 4 + bounded_rand(rng, 30);
        std::vector<double> s(n);
        std::vector<std::uint32_t> y(n);
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(bounded_rand(rng, 6)) / 5.0;  // frequent ties
            y[i] = static_cast<std::uint32_t>(bounded_rand(rng, 2));
            (y[i] ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        CHECK(auc(s, y) == oracle_auc(s, y));
    }
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
    std::vector<double> s = {0.1, 0.4, 0.4, 0.7, 0.9, 0.2};
    std::vector<std::uint32_t> y = {0, 1, 0, 1, 1, 0};
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) - 5.0;
    CHECK(auc(s, y) == doctest::Approx(auc(t, y)));
}

TEST_CASE("micro f1") {
    CHECK(micro_f1({1, 2, 0}, {1, 2, 0}) == doctest::Approx(1.0));
    CHECK(micro_f1({1, 2, 0}, {0, 1, 2}) == doctest::Approx(0.0));
    // 5 samples, 3 classes, 3 correct
    CHECK(micro_f1({0, 1, 2, 1, 0}, {0, 1, 1, 1, 2}) == doctest::Approx(0.6));

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 1 + bounded_rand(rng, 40);
        std::vector<std::uint32_t> p(n), y(n);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<std::uint32_t>(bounded_rand(rng, 4));
            y[i] = static_cast<std::uint32_t>(bounded_rand(rng, 4));
            correct += p[i] == y[i];
        }
        CHECK(micro_f1(p, y) == doctest::Approx(double(correct) / double(n)));
    }
}

TEST_CASE("ugf") {
    CHECK(ugf({0.5, 0.5, 0.5, 0.5}, {0, 0, 1, 1}) == doctest::Approx(0.0));
    CHECK(ugf({0.3, 0.3, 0.1, 0.1}, {0, 0, 1, 1}) == doctest::Approx(0.2));
    CHECK(ugf({0.8, 0.3}, {0, 1}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(ugf({0.5, 0.5}, {0, 0}), DataError);
}

TEST_CASE("attacker finds a planted coordinate and nothing in noise") {
    Rng rng(99);
    const std::size_t n = 400, dim = 12;
    std::vector<std::uint32_t> labels(n);
    Mat<float> noise(n, dim), planted(n, dim);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<std::uint32_t>(bounded_rand(rng, 2));
        for (std::size_t c = 0; c < dim; ++c) {
            noise(i, c) = static_cast<float>(unit(rng));
            planted(i, c) = static_cast<float>(unit(rng));
        }
        planted(i, 3) += labels[i] ? 2.0f : -2.0f;
    }
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto [tr, te] = attacker_split(idx, labels, 0.8, 5);

    AttackerConfig cfg;

    auto signal = run_attacker(planted, labels, 2, tr, te, 31, cfg);
    CHECK(signal.metric == "auc");
    CHECK(signal.value > 0.95);

    double null_mean = 0;
    for (std::uint64_t s : {33, 34, 35, 36, 37, 38})
        null_mean += run_attacker(noise, labels, 2, tr, te, s, cfg).value / 6.0;
    CHECK(null_mean > 0.42);
    CHECK(null_mean < 0.58);

    SUBCASE("deterministic per seed") {
        auto again = run_attacker(planted, labels, 2, tr, te, 31, cfg);
        CHECK(again.value == signal.value);
    }
}

TEST_CASE("audit_leakage reports one entry per attribute with the right metric") {
    Rng rng(5);
    const std::size_t n = 200, dim = 8;
    SensitiveAttributeTable attrs;
    attrs.attrs = {{"gender", 2}, {"age", 4}};
    attrs.labels.assign(n, {});
    Mat<float> reps(n, dim);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<std::uint32_t> users(n);
    for (std::size_t i = 0; i < n; ++i) {
        users[i] = i;
        std::uint32_t g = static_cast<std::uint32_t>(bounded_rand(rng, 2));
        std::uint32_t a = static_cast<std::uint32_t>(bounded_rand(rng, 4));
        attrs.labels[i] = {g, a};
        for (std::size_t c = 0; c < dim; ++c) reps(i, c) = static_cast<float>(unit(rng));
        reps(i, 0) += g ? 1.5f : -1.5f;
        reps(i, 1) += 0.9f * static_cast<float>(a);
    }
    AttackerConfig cfg;

    auto report = audit_leakage(reps, users, attrs, 77, "explicit", cfg);
    REQUIRE(report.entries.size() == 2);
    auto* g = report.find("gender", "explicit");
    auto* a = report.find("age", "explicit");
    REQUIRE(g != nullptr);
    REQUIRE(a != nullptr);
    CHECK(g->metric == "auc");
    CHECK(a->metric == "micro_f1");
    CHECK(g->value > 0.9);
    CHECK(a->value > 0.5);

    auto report2 = audit_leakage(reps, users, attrs, 77, "explicit", cfg);
    CHECK(report2.entries[0].value == report.entries[0].value);
    CHECK(report2.entries[1].value == report.entries[1].value);
}

TEST_CASE("modality probe produces audited representations end to end") {
    SynthConfig scfg;
    scfg.n_users = 150;
    scfg.n_items = 60;
    scfg.modalities = {{"visual", 12, 0.8}, {"textual", 8, 0.8}};
    scfg.attrs = {{"gender", 2}};
    scfg.coupling = 0.8;
    scfg.interactions_per_user = 10;
    scfg.seed = 4;
    auto synth = generate(scfg);

    AttackerConfig cfg;
    cfg.max_epochs = 400;
    auto report = probe_modality_leakage(synth.dataset, {1, 0}, true, 9, cfg);
    CHECK(report.find("gender", "visual[n=1]") != nullptr);
    CHECK(report.find("gender", "visual[n=full]") != nullptr);
    CHECK(report.find("gender", "textual[n=full]") != nullptr);
    CHECK(report.find("gender", "vta") != nullptr);
    for (const auto& e : report.entries) {
        CHECK(e.value >= 0.0);
        CHECK(e.value <= 1.0);
    }
}

TEST_CASE("leakage report TSV writer emits one line per entry") {
    testutil::TempDir dir;
    LeakageReport r;
    r.entries = {{"gender", "explicit", "auc", 0.75}, {"age", "implicit", "micro_f1", 0.4}};
    auto p = dir.file("report.tsv");
    write_report_tsv(r, p);
    std::ifstream in(p);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    CHECK(l1 == "auc\tgender\texplicit\t0.75");
    CHECK(l2 == "micro_f1\tage\timplicit\t0.4");
}
