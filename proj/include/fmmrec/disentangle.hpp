#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmmrec/data.hpp"
#include "fmmrec/nn.hpp"

namespace fmmrec {

struct DisentangleConfig {
    double lambda_adv = 0.1;   // weight on the discriminator gap in the filter objective
    double lambda_orth = 0.1;  // weight on the filtered/biased separation term
    double lr = 1e-3;
    std::size_t batch = 2048;  // capped at the number of users with history
    std::size_t max_epochs = 400;
    std::size_t patience = 60;
    std::size_t disc_steps = 10;  // classifier updates per filter/learner update
    double dropout = 0.2;         // classifier-only dropout
    std::uint64_t seed = 42;
};

void validate(const DisentangleConfig& cfg);

// Filter and learner nets plus one classifier head per sensitive attribute
// on each side. Templated so the gradient checker can instantiate the same
// graphs at double precision.
template <typename S>
struct Phase1Nets {
    Mlp<S> filter;
    Mlp<S> learner;
    std::vector<Mlp<S>> heads_filtered;
    std::vector<Mlp<S>> heads_biased;
};

Phase1Nets<float> make_phase1_nets(std::uint32_t d_m, const SensitiveAttributeTable& attrs,
                                   double lr, double dropout, Rng& rng);

template <typename SDst, typename SSrc>
Phase1Nets<SDst> phase1_nets_cast(const Phase1Nets<SSrc>& n) {
    Phase1Nets<SDst> out;
    out.filter = mlp_cast<SDst>(n.filter);
    out.learner = mlp_cast<SDst>(n.learner);
    for (const auto& h : n.heads_filtered) out.heads_filtered.push_back(mlp_cast<SDst>(h));
    for (const auto& h : n.heads_biased) out.heads_biased.push_back(mlp_cast<SDst>(h));
    return out;
}

// One user mini-batch in gather form: item_ids holds the concatenated train
// histories, offsets delimits each user's slice, labels come per attribute.
struct Phase1Batch {
    std::vector<std::uint32_t> users;
    std::vector<std::uint32_t> item_ids;
    std::vector<std::uint32_t> offsets;
    std::vector<std::vector<std::uint32_t>> labels;  // [attribute][user in batch]
};

Phase1Batch make_phase1_batch(const Dataset& ds, const std::vector<std::uint32_t>& users);

template <typename S>
struct Phase1Losses {
    NodeId recon = -1;
    NodeId orth = -1;
    NodeId disc_filtered = -1;
    NodeId disc_biased = -1;
    NodeId filter_objective = -1;  // recon + lambda_adv*(biased - filtered) + lambda_orth*orth
    NodeId disc_objective = -1;    // filtered + biased
};

// Records the full Phase-1 graph for one batch on the given tape. When
// train_filters is true the filter/learner are trainable and the heads
// frozen; otherwise the roles flip. Dropout (classifiers only) is applied
// when train_mode is set.
template <typename S>
Phase1Losses<S> build_phase1_losses(Tape<S>& tape, ParamBinder<S>& bind, Phase1Nets<S>& nets,
                                    const Mat<S>& features, const Phase1Batch& batch,
                                    const std::vector<std::uint32_t>& attr_classes,
                                    double lambda_adv, double lambda_orth, bool train_filters,
                                    bool train_mode, Rng* rng) {
    if (batch.users.empty()) throw DataError("batch holds no users with history");
    if (attr_classes.size() != batch.labels.size() ||
        attr_classes.size() != nets.heads_filtered.size() ||
        attr_classes.size() != nets.heads_biased.size())
        throw ShapeError("attribute count mismatch between nets, labels, and class table");

    NodeId rows = tape.gather_rows(tape.constant(features), batch.item_ids);
    NodeId filtered = nets.filter.apply(tape, bind, rows, train_filters, train_mode, rng);
    NodeId biased = nets.learner.apply(tape, bind, rows, train_filters, train_mode, rng);

    std::vector<std::uint32_t> ident(batch.item_ids.size());
    for (std::uint32_t i = 0; i < ident.size(); ++i) ident[i] = i;

    Phase1Losses<S> res;
    Mat<S> item_ones(batch.item_ids.size(), 1, S(1));
    NodeId one_minus_cos =
        tape.add_scaled(tape.constant(item_ones), tape.cosine_rows(filtered, rows), -1.0);
    res.recon = tape.mean_all(tape.segment_mean(one_minus_cos, ident, batch.offsets));
    NodeId clipped = tape.clip_min(tape.cosine_rows(filtered, biased), 0.0);
    res.orth = tape.mean_all(tape.segment_mean(clipped, ident, batch.offsets));

    NodeId agg_f = tape.segment_mean(filtered, ident, batch.offsets);
    NodeId agg_b = tape.segment_mean(biased, ident, batch.offsets);
    for (std::size_t k = 0; k < attr_classes.size(); ++k) {
        bool heads_on = !train_filters;
        NodeId out_f = nets.heads_filtered[k].apply(tape, bind, agg_f, heads_on, train_mode, rng);
        NodeId out_b = nets.heads_biased[k].apply(tape, bind, agg_b, heads_on, train_mode, rng);
        NodeId lf, lb;
        if (attr_classes[k] == 2) {
            Mat<S> y(batch.users.size(), 1);
            for (std::size_t i = 0; i < batch.users.size(); ++i)
                y(i, 0) = static_cast<S>(batch.labels[k][i]);
            NodeId yn = tape.constant(y);
            lf = tape.bce(tape.sigmoid(out_f), yn);
            lb = tape.bce(tape.sigmoid(out_b), yn);
        } else {
            lf = tape.nll(tape.log_softmax(out_f), batch.labels[k]);
            lb = tape.nll(tape.log_softmax(out_b), batch.labels[k]);
        }
        res.disc_filtered = res.disc_filtered < 0 ? lf : tape.add(res.disc_filtered, lf);
        res.disc_biased = res.disc_biased < 0 ? lb : tape.add(res.disc_biased, lb);
    }

    NodeId gap = tape.sub(res.disc_biased, res.disc_filtered);
    NodeId obj = tape.add_scaled(res.recon, gap, lambda_adv);
    res.filter_objective = tape.add_scaled(obj, res.orth, lambda_orth);
    res.disc_objective = tape.add(res.disc_filtered, res.disc_biased);
    return res;
}

template <typename S>
struct HeadLosses {
    NodeId disc_filtered = -1;
    NodeId disc_biased = -1;
    NodeId disc_objective = -1;
};

// Classifier-only step over precomputed per-user aggregates; the
// filter/learner forward pass is fixed while the heads train, so callers
// compute the aggregates once and reuse them for every head update.
template <typename S>
HeadLosses<S> build_head_losses(Tape<S>& tape, ParamBinder<S>& bind, Phase1Nets<S>& nets,
                                const Mat<S>& agg_filtered, const Mat<S>& agg_biased,
                                const Phase1Batch& batch,
                                const std::vector<std::uint32_t>& attr_classes, bool train_mode,
                                Rng* rng) {
    if (agg_filtered.rows != batch.users.size() || agg_biased.rows != batch.users.size())
        throw ShapeError("aggregate row count does not match the batch");
    NodeId af = tape.constant(agg_filtered);
    NodeId ab = tape.constant(agg_biased);
    HeadLosses<S> res;
    for (std::size_t k = 0; k < attr_classes.size(); ++k) {
        NodeId out_f = nets.heads_filtered[k].apply(tape, bind, af, true, train_mode, rng);
        NodeId out_b = nets.heads_biased[k].apply(tape, bind, ab, true, train_mode, rng);
        NodeId lf, lb;
        if (attr_classes[k] == 2) {
            Mat<S> y(batch.users.size(), 1);
            for (std::size_t i = 0; i < batch.users.size(); ++i)
                y(i, 0) = static_cast<S>(batch.labels[k][i]);
            NodeId yn = tape.constant(y);
            lf = tape.bce(tape.sigmoid(out_f), yn);
            lb = tape.bce(tape.sigmoid(out_b), yn);
        } else {
            lf = tape.nll(tape.log_softmax(out_f), batch.labels[k]);
            lb = tape.nll(tape.log_softmax(out_b), batch.labels[k]);
        }
        res.disc_filtered = res.disc_filtered < 0 ? lf : tape.add(res.disc_filtered, lf);
        res.disc_biased = res.disc_biased < 0 ? lb : tape.add(res.disc_biased, lb);
    }
    res.disc_objective = tape.add(res.disc_filtered, res.disc_biased);
    return res;
}

// Per-modality output of the first training phase.
struct DisentangledModalStore {
    std::string name;
    std::uint8_t modality_id = 0;
    Mat<float> filtered;  // M x d_m
    Mat<float> biased;    // M x d_m
};

struct Phase1Result {
    DisentangledModalStore store;
    nlohmann::json log;
    std::size_t best_epoch = 0;
    std::size_t epochs_ran = 0;
    std::size_t skipped_users = 0;
};

// Adversarial alternating optimization for one modality: each batch takes
// one filter/learner step followed by cfg.disc_steps classifier steps,
// early-stopped on the reconstruction and orthogonality terms over a
// held-out user slice.
Phase1Result train_phase1(const Dataset& ds, std::size_t modality_index,
                          const DisentangleConfig& cfg);

// Mean of the given item rows over each listed user's train history; users
// without history get a zero row.
Mat<float> history_mean(const Mat<float>& item_rows, const InteractionDataset& inter,
                        const std::vector<std::uint32_t>& users);

// Single-user aggregate pair (filtered, biased); empty history is an error.
std::pair<std::vector<float>, std::vector<float>> aggregate_user_modal(
    const DisentangledModalStore& store, const InteractionDataset& inter, std::uint32_t user);

// Binary store file: magic, modality id, M, d_m, filtered then biased rows.
void save_store(const DisentangledModalStore& store, const std::string& path);
DisentangledModalStore load_store(const std::string& path);

}  // namespace fmmrec
