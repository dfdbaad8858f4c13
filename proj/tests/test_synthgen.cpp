#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fmmrec/synthgen.hpp"
#include "testutil.hpp"

using namespace fmmrec;
using testutil::TempDir;

namespace {

SynthConfig base_config(std::uint64_t seed, double s, double c) {
    SynthConfig cfg;
    cfg.n_users = 400;
    cfg.n_items = 150;
    cfg.modalities = {{"visual", 24, s}};
    cfg.attrs = {{"gender", 2}};
    cfg.coupling = c;
    cfg.interactions_per_user = 20;
    cfg.seed = seed;
    return cfg;
}

// Cheap leakage oracle: project each user's mean train-item feature row onto
// the planted centroid-difference direction and pair-count the AUC.
double linear_probe_auc(const SynthResult& r) {
    const auto& ds = r.dataset;
    const auto& tbl = ds.modalities[0];
    const auto& mj = r.manifest["modalities"][0];
    std::vector<std::uint32_t> sub = mj["subspace"].get<std::vector<std::uint32_t>>();
    auto c0 = mj["centroids"][0].get<std::vector<int>>();
    auto c1 = mj["centroids"][1].get<std::vector<int>>();

    std::vector<double> score;
    std::vector<int> label;
    for (std::uint32_t u = 0; u < ds.interactions.n_users; ++u) {
        const auto& items = ds.interactions.train_items[u];
        if (items.empty()) continue;
        std::vector<double> agg(tbl.dim, 0.0);
        for (auto v : items)
            for (std::uint32_t c = 0; c < tbl.dim; ++c) agg[c] += tbl.features(v, c);
        double sc = 0;
        for (std::size_t i = 0; i < sub.size(); ++i)
            sc += agg[sub[i]] / double(items.size()) * (c0[i] - c1[i]);
        score.push_back(sc);
        label.push_back(ds.attributes.labels[u][0] == 0 ? 1 : 0);
    }
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < score.size(); ++i)
        for (std::size_t j = 0; j < score.size(); ++j) {
            if (label[i] != 1 || label[j] != 0) continue;
            pairs += 1;
            if (score[i] > score[j])
                wins += 1;
            else if (score[i] == score[j])
                wins += 0.5;
        }
    return wins / pairs;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
    auto a = generate(base_config(5, 0.6, 0.4));
    auto b = generate(base_config(5, 0.6, 0.4));
    CHECK(a.dataset.modalities[0].features.data == b.dataset.modalities[0].features.data);
    CHECK(a.dataset.attributes.labels == b.dataset.attributes.labels);
    REQUIRE(a.dataset.interactions.interactions.size() ==
            b.dataset.interactions.interactions.size());
    for (std::size_t i = 0; i < a.dataset.interactions.interactions.size(); ++i) {
        CHECK(a.dataset.interactions.interactions[i].item ==
              b.dataset.interactions.interactions[i].item);
        CHECK(a.dataset.interactions.interactions[i].split ==
              b.dataset.interactions.interactions[i].split);
    }
    CHECK(a.manifest == b.manifest);

    auto c = generate(base_config(6, 0.6, 0.4));
    CHECK(a.dataset.modalities[0].features.data != c.dataset.modalities[0].features.data);
}

TEST_CASE("config validation") {
    auto cfg = base_config(1, 0.5, 0.5);
    SUBCASE("signal out of range") {
        cfg.modalities[0].signal = 1.5;
        CHECK_THROWS_AS(generate(cfg), ConfigError);
    }
    SUBCASE("coupling out of range") {
        cfg.coupling = -0.1;
        CHECK_THROWS_AS(generate(cfg), ConfigError);
    }
    SUBCASE("too small") {
        cfg.n_users = 2;
        CHECK_THROWS_AS(generate(cfg), ConfigError);
    }
    SUBCASE("interactions per user above item count") {
        cfg.interactions_per_user = 1000;
        CHECK_THROWS_AS(generate(cfg), ConfigError);
    }
    SUBCASE("no modalities") {
        cfg.modalities.clear();
        CHECK_THROWS_AS(generate(cfg), ConfigError);
    }
}

TEST_CASE("every user gets the requested number of unique interactions") {
    auto r = generate(base_config(9, 0.5, 0.8));
    const auto& ds = r.dataset.interactions;
    std::vector<std::size_t> per_user(ds.n_users, 0);
    for (const auto& it : ds.interactions) per_user[it.user] += 1;
    for (auto n : per_user) CHECK(n == 20);
}

TEST_CASE("no planted signal means no linear leakage") {
    auto r = generate(base_config(31, 0.0, 0.0));
    double auc = linear_probe_auc(r);
    CHECK(auc > 0.42);
    CHECK(auc < 0.58);
}

TEST_CASE("strong planted signal is linearly separable") {
    auto r = generate(base_config(32, 0.9, 0.9));
    CHECK(linear_probe_auc(r) > 0.9);
}

TEST_CASE("leakage is monotone in the signal strength") {
    for (std::uint64_t seed : {41, 42, 43}) {
        auto lo = generate(base_config(seed, 0.2, 0.5));
        auto hi = generate(base_config(seed, 0.8, 0.5));
        CHECK(linear_probe_auc(lo) <= linear_probe_auc(hi) + 0.02);
    }
}

TEST_CASE("multi-class attributes and multiple modalities generate cleanly") {
    SynthConfig cfg = base_config(77, 0.7, 0.5);
    cfg.attrs = {{"age", 5}, {"gender", 2}};
    cfg.modalities = {{"visual", 24, 0.7}, {"textual", 16, 0.5}, {"audio", 12, 0.3}};
    auto r = generate(cfg);
    CHECK(r.dataset.modalities.size() == 3);
    CHECK(r.dataset.attributes.n_attrs() == 2);
    for (std::uint32_t u = 0; u < cfg.n_users; ++u)
        CHECK(r.dataset.attributes.labels[u][0] < 5);
    CHECK(r.manifest["modalities"].size() == 3);
}

TEST_CASE("emitted files round-trip through the loaders") {
    TempDir dir;
    auto cfg = base_config(55, 0.6, 0.5);
    cfg.modalities.push_back({"textual", 10, 0.4});
    auto r = generate(cfg);
    write_synth_files(r, dir.path.string());

    auto loaded = load_dataset(dir.file("interactions.tsv"),
                               {{"visual", dir.file("modal_visual.txt")},
                                {"textual", dir.file("modal_textual.txt")}},
                               dir.file("attributes.txt"), derive_seed(cfg.seed, kSeedSplit));
    CHECK(loaded.interactions.n_users == cfg.n_users);
    CHECK(loaded.interactions.n_items == cfg.n_items);
    CHECK(loaded.attributes.labels == r.dataset.attributes.labels);
    CHECK(loaded.modalities[0].features.data == r.dataset.modalities[0].features.data);
    CHECK(loaded.modalities[1].features.data == r.dataset.modalities[1].features.data);

    // identical split assignment after reload
    REQUIRE(loaded.interactions.interactions.size() ==
            r.dataset.interactions.interactions.size());
    for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
        CHECK(loaded.interactions.train_items[u] == r.dataset.interactions.train_items[u]);
        CHECK(loaded.interactions.valid_items[u] == r.dataset.interactions.valid_items[u]);
        CHECK(loaded.interactions.test_items[u] == r.dataset.interactions.test_items[u]);
    }
}
