#include "fmmrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fmmrec {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

bool InteractionDataset::has_train(std::uint32_t user, std::uint32_t item) const {
    const auto& v = train_items[user];
    return std::binary_search(v.begin(), v.end(), item);
}

std::size_t InteractionDataset::split_count(Split s) const {
    std::size_t n = 0;
    for (const auto& it : interactions)
        if (it.split == s) ++n;
    return n;
}

std::vector<std::uint32_t> InteractionDataset::users_with_history() const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t u = 0; u < n_users; ++u)
        if (!train_items[u].empty()) out.push_back(u);
    return out;
}

void InteractionDataset::rebuild_index() {
    train_items.assign(n_users, {});
    valid_items.assign(n_users, {});
    test_items.assign(n_users, {});
    for (const auto& it : interactions) {
        switch (it.split) {
            case Split::train: train_items[it.user].push_back(it.item); break;
            case Split::valid: valid_items[it.user].push_back(it.item); break;
            case Split::test: test_items[it.user].push_back(it.item); break;
        }
    }
    for (auto& v : train_items) std::sort(v.begin(), v.end());
    for (auto& v : valid_items) std::sort(v.begin(), v.end());
    for (auto& v : test_items) std::sort(v.begin(), v.end());
}

std::vector<std::uint32_t> SensitiveAttributeTable::column(std::size_t k) const {
    std::vector<std::uint32_t> out(labels.size());
    for (std::size_t u = 0; u < labels.size(); ++u) out[u] = labels[u][k];
    return out;
}

std::uint64_t bounded_rand(Rng& rng, std::uint64_t n) {
    if (n == 0) throw ConfigError("bounded_rand with n == 0");
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        std::uint64_t r = rng();
        if (r >= threshold) return r % n;
    }
}

namespace {

// Fisher-Yates with our own bounded draw so shuffles are reproducible
// independent of the standard library build.
template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[bounded_rand(rng, i)]);
}

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(cat("cannot open ", path));
    return in;
}

bool blank_or_comment(const std::string& line) {
    for (char c : line) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

}  // namespace

std::vector<std::pair<std::uint32_t, std::uint32_t>> load_interactions(const std::string& path) {
    std::ifstream in = open_or_throw(path);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank_or_comment(line)) continue;
        std::istringstream ls(line);
        long long u = -1, v = -1;
        if (!(ls >> u >> v) || u < 0 || v < 0)
            throw DataError(cat(path, ":", lineno, ": malformed interaction record '", line, "'"));
        std::string extra;
        if (ls >> extra)
            throw DataError(cat(path, ":", lineno, ": trailing content '", extra, "'"));
        auto p = std::make_pair(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
        if (!seen.insert(p).second)
            throw DataError(cat(path, ":", lineno, ": duplicate interaction (", u, ", ", v, ")"));
        pairs.push_back(p);
    }
    if (pairs.empty()) throw DataError(cat(path, ": no interactions"));
    return pairs;
}

ModalFeatureTable load_modal_table(const std::string& path, const std::string& name) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() {
        while (std::getline(in, line)) {
            ++lineno;
            if (!blank_or_comment(line)) return true;
        }
        return false;
    };
    if (!next_line()) throw DataError(cat(path, ": missing header line"));
    std::istringstream hs(line);
    long long m = -1, d = -1;
    if (!(hs >> m >> d) || m <= 0 || d <= 0)
        throw DataError(cat(path, ":", lineno, ": header must be 'M d_m', got '", line, "'"));

    ModalFeatureTable tbl;
    tbl.name = name;
    tbl.dim = static_cast<std::uint32_t>(d);
    tbl.features = Mat<float>(static_cast<std::size_t>(m), tbl.dim);
    tbl.missing.assign(static_cast<std::size_t>(m), 0);
    for (long long row = 0; row < m; ++row) {
        if (!next_line())
            throw DataError(cat(path, ": expected ", m, " feature rows, found ", row));
        std::istringstream ls(line);
        bool all_zero = true;
        for (long long c = 0; c < d; ++c) {
            double x;
            if (!(ls >> x))
                throw DataError(cat(path, ":", lineno, ": expected ", d, " values in row ", row));
            if (!std::isfinite(x))
                throw DataError(cat(path, ":", lineno, ": non-finite feature value in row ", row));
            tbl.features(row, c) = static_cast<float>(x);
            if (x != 0.0) all_zero = false;
        }
        double extra;
        if (ls >> extra)
            throw DataError(cat(path, ":", lineno, ": row ", row, " has more than ", d, " values"));
        tbl.missing[row] = all_zero ? 1 : 0;
    }
    return tbl;
}

SensitiveAttributeTable load_attributes(const std::string& path) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() {
        while (std::getline(in, line)) {
            ++lineno;
            if (!blank_or_comment(line)) return true;
        }
        return false;
    };
    if (!next_line()) throw DataError(cat(path, ": missing attribute count line"));
    long long k = -1;
    {
        std::istringstream hs(line);
        if (!(hs >> k) || k <= 0)
            throw DataError(cat(path, ":", lineno, ": attribute count must be positive"));
    }
    SensitiveAttributeTable tbl;
    for (long long i = 0; i < k; ++i) {
        if (!next_line()) throw DataError(cat(path, ": expected ", k, " attribute headers"));
        std::istringstream hs(line);
        AttributeSpec spec;
        long long classes = -1;
        if (!(hs >> spec.name >> classes) || classes < 2)
            throw DataError(cat(path, ":", lineno,
                                ": attribute header must be 'name C_k' with C_k >= 2"));
        spec.classes = static_cast<std::uint32_t>(classes);
        tbl.attrs.push_back(spec);
    }
    while (next_line()) {
        std::istringstream ls(line);
        std::vector<std::uint32_t> row;
        for (long long i = 0; i < k; ++i) {
            long long lab = -1;
            if (!(ls >> lab))
                throw DataError(cat(path, ":", lineno, ": expected ", k, " labels per user"));
            if (lab < 0 || lab >= static_cast<long long>(tbl.attrs[i].classes))
                throw DataError(cat(path, ":", lineno, ": label ", lab, " out of range for ",
                                    tbl.attrs[i].name));
            row.push_back(static_cast<std::uint32_t>(lab));
        }
        long long extra;
        if (ls >> extra) throw DataError(cat(path, ":", lineno, ": too many labels"));
        tbl.labels.push_back(std::move(row));
    }
    if (tbl.labels.empty()) throw DataError(cat(path, ": no user label rows"));
    return tbl;
}

InteractionDataset assign_splits(
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs, std::uint32_t n_users,
    std::uint32_t n_items, std::uint64_t split_seed) {
    InteractionDataset ds;
    ds.n_users = n_users;
    ds.n_items = n_items;
    std::vector<std::vector<std::uint32_t>> by_user(n_users);
    for (const auto& [u, v] : pairs) {
        if (u >= n_users) throw DataError(cat("user id ", u, " out of range [0, ", n_users, ")"));
        if (v >= n_items) throw DataError(cat("item id ", v, " out of range [0, ", n_items, ")"));
        by_user[u].push_back(v);
    }
    for (std::uint32_t u = 0; u < n_users; ++u) {
        auto& items = by_user[u];
        if (items.empty()) continue;
        std::sort(items.begin(), items.end());
        Rng rng(derive_seed(split_seed, static_cast<std::uint64_t>(kSeedSplit) << 32 | u));
        shuffle_vec(items, rng);
        std::size_t n = items.size();
        std::size_t n_test = 0, n_valid = 0;
        if (n >= 3) {
            n_test = static_cast<std::size_t>(std::floor(0.1 * double(n) + 0.5));
            n_valid = n_test;
            if (n_test + n_valid >= n) {
                n_test = n_valid = (n - 1) / 2;
            }
        }
        std::size_t n_train = n - n_valid - n_test;
        for (std::size_t i = 0; i < n; ++i) {
            Split s = i < n_train            ? Split::train
                      : i < n_train + n_valid ? Split::valid
                                              : Split::test;
            ds.interactions.push_back({u, items[i], s});
        }
    }
    ds.rebuild_index();
    return ds;
}

Dataset load_dataset(const std::string& interactions_path, const std::vector<ModalInput>& modals,
                     const std::string& attributes_path, std::uint64_t split_seed) {
    Dataset out;
    auto pairs = load_interactions(interactions_path);
    out.attributes = load_attributes(attributes_path);
    std::uint32_t n_users = static_cast<std::uint32_t>(out.attributes.n_users());

    std::uint32_t n_items = 0;
    for (const auto& mi : modals) {
        ModalFeatureTable tbl = load_modal_table(mi.path, mi.name);
        if (n_items == 0)
            n_items = static_cast<std::uint32_t>(tbl.features.rows);
        else if (tbl.features.rows != n_items)
            throw DataError(cat(mi.path, ": item count ", tbl.features.rows,
                                " disagrees with earlier modality (", n_items, ")"));
        out.modalities.push_back(std::move(tbl));
    }
    if (n_items == 0) {
        for (const auto& [u, v] : pairs) {
            (void)u;
            n_items = std::max(n_items, v + 1);
        }
    }
    out.interactions = assign_splits(pairs, n_users, n_items, split_seed);
    log_info("loaded dataset: ", n_users, " users, ", n_items, " items, ", pairs.size(),
             " interactions, ", out.modalities.size(), " modalities, ",
             out.attributes.n_attrs(), " attributes");
    return out;
}

TrainBatch sample_batch(const InteractionDataset& ds, std::size_t batch_size, Rng& rng) {
    std::vector<const Interaction*> train;
    train.reserve(ds.interactions.size());
    for (const auto& it : ds.interactions)
        if (it.split == Split::train) train.push_back(&it);
    if (train.empty()) throw DataError("sample_batch: train split is empty");

    TrainBatch batch;
    batch.users.reserve(batch_size);
    batch.pos_items.reserve(batch_size);
    batch.neg_items.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const Interaction* it = train[bounded_rand(rng, train.size())];
        std::uint32_t neg = 0;
        bool found = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
            neg = static_cast<std::uint32_t>(bounded_rand(rng, ds.n_items));
            if (!ds.has_train(it->user, neg)) {
                found = true;
                break;
            }
        }
        if (!found)
            throw DataError(cat("negative sampling exhausted for user ", it->user,
                                " after 100 attempts"));
        batch.users.push_back(it->user);
        batch.pos_items.push_back(it->item);
        batch.neg_items.push_back(neg);
    }
    return batch;
}

std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> attacker_split(
    const std::vector<std::uint32_t>& users, const std::vector<std::uint32_t>& labels,
    double ratio, std::uint64_t seed) {
    if (users.size() < 2) throw DataError("attacker_split needs at least 2 users");
    if (users.size() != labels.size())
        throw ShapeError("attacker_split users/labels length mismatch");
    if (ratio <= 0.0 || ratio >= 1.0)
        throw ConfigError(cat("attacker_split ratio must be in (0,1), got ", ratio));

    std::uint32_t max_label = 0;
    for (std::uint32_t l : labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::uint32_t>> by_class(max_label + 1);
    for (std::size_t i = 0; i < users.size(); ++i) by_class[labels[i]].push_back(users[i]);

    std::vector<std::uint32_t> train, test;
    Rng rng(derive_seed(seed, kSeedAttacker));
    for (auto& group : by_class) {
        shuffle_vec(group, rng);
        std::size_t n_train =
            static_cast<std::size_t>(std::floor(ratio * double(group.size()) + 0.5));
        n_train = std::min(n_train, group.size());
        for (std::size_t i = 0; i < group.size(); ++i)
            (i < n_train ? train : test).push_back(group[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

void write_splits_tsv(const InteractionDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError(cat("cannot write ", path));
    for (const auto& it : ds.interactions)
        out << it.user << '\t' << it.item << '\t' << split_name(it.split) << '\n';
    if (!out) throw DataError(cat("short write to ", path));
}

InteractionDataset load_splits_tsv(const std::string& path, std::uint32_t n_users,
                                   std::uint32_t n_items) {
    std::ifstream in = open_or_throw(path);
    InteractionDataset ds;
    ds.n_users = n_users;
    ds.n_items = n_items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank_or_comment(line)) continue;
        std::istringstream ls(line);
        long long u = -1, v = -1;
        std::string sname;
        if (!(ls >> u >> v >> sname) || u < 0 || v < 0)
            throw DataError(cat(path, ":", lineno, ": malformed split record"));
        if (u >= n_users || v >= n_items)
            throw DataError(cat(path, ":", lineno, ": id out of range"));
        Split s;
        if (sname == "train")
            s = Split::train;
        else if (sname == "valid")
            s = Split::valid;
        else if (sname == "test")
            s = Split::test;
        else
            throw DataError(cat(path, ":", lineno, ": unknown split '", sname, "'"));
        ds.interactions.push_back(
            {static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v), s});
    }
    if (ds.interactions.empty()) throw DataError(cat(path, ": empty split manifest"));
    ds.rebuild_index();
    return ds;
}

}  // namespace fmmrec
