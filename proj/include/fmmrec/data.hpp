#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmmrec/common.hpp"
#include "fmmrec/mat.hpp"

namespace fmmrec {

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };

const char* split_name(Split s);

struct Interaction {
    std::uint32_t user;
    std::uint32_t item;
    Split split;
};

struct InteractionDataset {
    std::uint32_t n_users = 0;
    std::uint32_t n_items = 0;
    std::vector<Interaction> interactions;
    // Per-user item lists by split; train lists are the V_u sets and are kept
    // sorted so negative sampling can binary-search them.
    std::vector<std::vector<std::uint32_t>> train_items;
    std::vector<std::vector<std::uint32_t>> valid_items;
    std::vector<std::vector<std::uint32_t>> test_items;

    bool has_train(std::uint32_t user, std::uint32_t item) const;
    std::size_t split_count(Split s) const;
    // Users with at least one train interaction; only these can appear in
    // training batches or user aggregates.
    std::vector<std::uint32_t> users_with_history() const;
    void rebuild_index();
};

struct ModalFeatureTable {
    std::string name;
    std::uint32_t dim = 0;
    Mat<float> features;               // M x dim
    std::vector<std::uint8_t> missing; // 1 where the row is all zeros
};

struct AttributeSpec {
    std::string name;
    std::uint32_t classes = 0;
};

struct SensitiveAttributeTable {
    std::vector<AttributeSpec> attrs;
    // labels[u][k] in [0, attrs[k].classes)
    std::vector<std::vector<std::uint32_t>> labels;

    std::size_t n_attrs() const { return attrs.size(); }
    std::size_t n_users() const { return labels.size(); }
    std::vector<std::uint32_t> column(std::size_t k) const;
};

struct TrainBatch {
    std::vector<std::uint32_t> users;
    std::vector<std::uint32_t> pos_items;
    std::vector<std::uint32_t> neg_items;

    std::size_t size() const { return users.size(); }
};

struct Dataset {
    InteractionDataset interactions;
    std::vector<ModalFeatureTable> modalities;
    SensitiveAttributeTable attributes;
};

// Unbiased uniform integer in [0, n); deterministic across standard library
// implementations, unlike std::uniform_int_distribution.
std::uint64_t bounded_rand(Rng& rng, std::uint64_t n);

std::vector<std::pair<std::uint32_t, std::uint32_t>> load_interactions(const std::string& path);
ModalFeatureTable load_modal_table(const std::string& path, const std::string& name);
SensitiveAttributeTable load_attributes(const std::string& path);

// Per-user 8:1:1 split (rounded, minimum one train interaction; users with
// fewer than 3 interactions keep everything in train). Deterministic in
// split_seed.
InteractionDataset assign_splits(
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs, std::uint32_t n_users,
    std::uint32_t n_items, std::uint64_t split_seed);

struct ModalInput {
    std::string name;
    std::string path;
};

Dataset load_dataset(const std::string& interactions_path, const std::vector<ModalInput>& modals,
                     const std::string& attributes_path, std::uint64_t split_seed);

TrainBatch sample_batch(const InteractionDataset& ds, std::size_t batch_size, Rng& rng);

// Stratified user partition for the leakage attacker. `labels` holds the
// first sensitive attribute per user in `users`; class balance in the train
// side is kept within one user of ratio * class size.
std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> attacker_split(
    const std::vector<std::uint32_t>& users, const std::vector<std::uint32_t>& labels,
    double ratio, std::uint64_t seed);

void write_splits_tsv(const InteractionDataset& ds, const std::string& path);
// Re-applies split assignments from a splits.tsv onto freshly loaded pairs.
InteractionDataset load_splits_tsv(const std::string& path, std::uint32_t n_users,
                                   std::uint32_t n_items);

}  // namespace fmmrec
