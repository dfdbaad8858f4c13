#include "fmmrec/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace fmmrec {

namespace {

double unit_open(Rng& rng) {
    // 53-bit mantissa draw mapped strictly inside (0, 1)
    return (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double normal(Rng& rng) {
    double u1 = unit_open(rng);
    double u2 = unit_open(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

void validate(const SynthConfig& cfg) {
    if (cfg.n_users < 4 || cfg.n_items < 4)
        throw ConfigError("synth requires at least 4 users and 4 items");
    if (cfg.modalities.empty()) throw ConfigError("synth requires at least one modality");
    if (cfg.attrs.empty()) throw ConfigError("synth requires at least one attribute");
    if (cfg.coupling < 0.0 || cfg.coupling > 1.0)
        throw ConfigError(cat("coupling must be in [0,1], got ", cfg.coupling));
    for (const auto& m : cfg.modalities) {
        if (m.signal < 0.0 || m.signal > 1.0)
            throw ConfigError(cat("signal for ", m.name, " must be in [0,1], got ", m.signal));
        if (m.dim == 0) throw ConfigError(cat("modality ", m.name, " has zero dimension"));
    }
    for (const auto& a : cfg.attrs)
        if (a.classes < 2) throw ConfigError(cat("attribute ", a.name, " needs >= 2 classes"));
    if (cfg.interactions_per_user == 0 || cfg.interactions_per_user > cfg.n_items)
        throw ConfigError("interactions_per_user must be in [1, M]");
}

}  // namespace

SynthResult generate(const SynthConfig& cfg) {
    validate(cfg);
    SynthResult out;
    Dataset& ds = out.dataset;

    // Sensitive attributes, uniform per user.
    Rng attr_rng(derive_seed(cfg.seed, 11));
    ds.attributes.attrs.reserve(cfg.attrs.size());
    for (const auto& a : cfg.attrs) ds.attributes.attrs.push_back({a.name, a.classes});
    ds.attributes.labels.assign(cfg.n_users, {});
    for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
        auto& row = ds.attributes.labels[u];
        row.reserve(cfg.attrs.size());
        for (const auto& a : cfg.attrs)
            row.push_back(static_cast<std::uint32_t>(bounded_rand(attr_rng, a.classes)));
    }

    // Items join an affinity group keyed to the first attribute's classes.
    std::uint32_t groups = cfg.attrs[0].classes;
    Rng group_rng(derive_seed(cfg.seed, 12));
    std::vector<std::uint32_t> item_group(cfg.n_items);
    std::vector<std::vector<std::uint32_t>> group_items(groups);
    for (std::uint32_t v = 0; v < cfg.n_items; ++v) {
        item_group[v] = static_cast<std::uint32_t>(bounded_rand(group_rng, groups));
        group_items[item_group[v]].push_back(v);
    }
    // A group without items would make the tilted sampler degenerate.
    for (std::uint32_t g = 0; g < groups; ++g)
        if (group_items[g].empty()) {
            std::uint32_t v = static_cast<std::uint32_t>(bounded_rand(group_rng, cfg.n_items));
            group_items[item_group[v]].erase(
                std::find(group_items[item_group[v]].begin(), group_items[item_group[v]].end(), v));
            item_group[v] = g;
            group_items[g].push_back(v);
        }

    out.manifest["item_groups"] = item_group;
    out.manifest["group_attribute"] = cfg.attrs[0].name;

    // Modal features: (1-s) * unit gaussian noise + s * class centroid, the
    // centroid being a +-1 pattern on a small random subspace.
    for (std::size_t mi = 0; mi < cfg.modalities.size(); ++mi) {
        const auto& spec = cfg.modalities[mi];
        Rng mrng(derive_seed(cfg.seed, 1000 + mi));
        std::uint32_t sub = std::min<std::uint32_t>(8, spec.dim);
        if (groups > (1u << sub))
            throw ConfigError(cat("modality ", spec.name, ": ", groups,
                                  " classes exceed distinct centroids on a ", sub,
                                  "-dim subspace"));
        std::vector<std::uint32_t> dims(spec.dim);
        for (std::uint32_t i = 0; i < spec.dim; ++i) dims[i] = i;
        for (std::size_t i = dims.size(); i > 1; --i)
            std::swap(dims[i - 1], dims[bounded_rand(mrng, i)]);
        dims.resize(sub);

        // Centroids share one base pattern and differ only on a short sign
        // code, so the group identity occupies a thin slice of the planted
        // signal while the bulk of it is common item content.
        std::uint32_t code_dims = 1;
        while ((1u << code_dims) < groups) ++code_dims;
        code_dims = std::min(code_dims, sub);
        std::vector<int> base(sub);
        for (std::uint32_t i = 0; i < sub; ++i) base[i] = bounded_rand(mrng, 2) ? 1 : -1;
        std::vector<std::vector<int>> centroids;
        for (std::uint32_t g = 0; g < groups; ++g) {
            std::vector<int> pattern = base;
            for (std::uint32_t b = 0; b < code_dims; ++b)
                pattern[b] = (g >> b) & 1u ? 1 : -1;
            centroids.push_back(std::move(pattern));
        }

        ModalFeatureTable tbl;
        tbl.name = spec.name;
        tbl.dim = spec.dim;
        tbl.features = Mat<float>(cfg.n_items, spec.dim);
        tbl.missing.assign(cfg.n_items, 0);
        double s = spec.signal;
        for (std::uint32_t v = 0; v < cfg.n_items; ++v) {
            for (std::uint32_t c = 0; c < spec.dim; ++c)
                tbl.features(v, c) = static_cast<float>((1.0 - s) * normal(mrng));
            const auto& pat = centroids[item_group[v]];
            for (std::uint32_t i = 0; i < sub; ++i)
                tbl.features(v, dims[i]) += static_cast<float>(s * pat[i]);
        }
        ds.modalities.push_back(std::move(tbl));

        nlohmann::json mj;
        mj["name"] = spec.name;
        mj["signal"] = spec.signal;
        mj["subspace"] = dims;
        mj["centroids"] = centroids;
        out.manifest["modalities"].push_back(mj);
    }

    // Interactions: per draw, pick an item group by a softmax tilted toward
    // the user's own class, then an item uniformly inside the group.
    const double tilt = 2.0 * cfg.coupling;
    Rng irng(derive_seed(cfg.seed, 13));
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (std::uint32_t u = 0; u < cfg.n_users; ++u) {
        std::uint32_t cls = ds.attributes.labels[u][0];
        std::vector<double> probs(groups);
        double z = 0;
        for (std::uint32_t g = 0; g < groups; ++g) {
            probs[g] = std::exp(g == cls ? tilt : 0.0);
            z += probs[g];
        }
        for (double& p : probs) p /= z;

        std::set<std::uint32_t> chosen;
        int attempts = 0;
        while (chosen.size() < cfg.interactions_per_user) {
            if (++attempts > 1000 * static_cast<int>(cfg.interactions_per_user)) {
                // The tilt starves the preferred group; fall back to uniform.
                std::uint32_t v = static_cast<std::uint32_t>(bounded_rand(irng, cfg.n_items));
                chosen.insert(v);
                continue;
            }
            double r = unit_open(irng);
            std::uint32_t g = 0;
            for (; g + 1 < groups; ++g) {
                if (r < probs[g]) break;
                r -= probs[g];
            }
            const auto& items = group_items[g];
            chosen.insert(items[bounded_rand(irng, items.size())]);
        }
        for (std::uint32_t v : chosen) pairs.emplace_back(u, v);
    }

    ds.interactions =
        assign_splits(pairs, cfg.n_users, cfg.n_items, derive_seed(cfg.seed, kSeedSplit));

    nlohmann::json cj;
    cj["n_users"] = cfg.n_users;
    cj["n_items"] = cfg.n_items;
    cj["coupling"] = cfg.coupling;
    cj["interactions_per_user"] = cfg.interactions_per_user;
    cj["seed"] = cfg.seed;
    for (const auto& a : cfg.attrs) cj["attributes"].push_back({{"name", a.name}, {"classes", a.classes}});
    out.manifest["config"] = cj;
    return out;
}

void write_synth_files(const SynthResult& result, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const Dataset& ds = result.dataset;

    {
        std::ofstream out(fs::path(dir) / "interactions.tsv");
        for (const auto& it : ds.interactions.interactions)
            out << it.user << '\t' << it.item << '\n';
        if (!out) throw DataError(cat("cannot write interactions under ", dir));
    }
    for (const auto& m : ds.modalities) {
        std::ofstream out(fs::path(dir) / ("modal_" + m.name + ".txt"));
        out << m.features.rows << ' ' << m.dim << '\n';
        char buf[32];
        for (std::size_t v = 0; v < m.features.rows; ++v) {
            for (std::uint32_t c = 0; c < m.dim; ++c) {
                std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(m.features(v, c)));
                out << (c ? " " : "") << buf;
            }
            out << '\n';
        }
        if (!out) throw DataError(cat("cannot write modality ", m.name, " under ", dir));
    }
    {
        std::ofstream out(fs::path(dir) / "attributes.txt");
        out << ds.attributes.n_attrs() << '\n';
        for (const auto& a : ds.attributes.attrs) out << a.name << ' ' << a.classes << '\n';
        for (const auto& row : ds.attributes.labels) {
            for (std::size_t k = 0; k < row.size(); ++k) out << (k ? " " : "") << row[k];
            out << '\n';
        }
        if (!out) throw DataError(cat("cannot write attributes under ", dir));
    }
    write_splits_tsv(ds.interactions, (fs::path(dir) / "splits.tsv").string());
    {
        std::ofstream out(fs::path(dir) / "manifest.json");
        out << result.manifest.dump(2) << '\n';
        if (!out) throw DataError(cat("cannot write manifest under ", dir));
    }
}

}  // namespace fmmrec
