#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmmrec/data.hpp"
#include "fmmrec/nn.hpp"
#include "fmmrec/recommender.hpp"
#include "fmmrec/relations.hpp"

namespace fmmrec {

// Weights and switches for the relation-aware adversarial phase. The
// ablation flags keep the architecture identical and zero out only the
// matching term, so variants stay comparable parameter for parameter.
struct FairLearnConfig {
    BaseKind base = BaseKind::MfBpr;
    std::size_t d = 64;    // embedding width
    std::size_t d_r = 64;  // role indicator width
    double lambda_h = 0.1;   // neighbor enhancement strength
    double lambda_du = 0.1;  // weight of the explicit-rep discriminator
    double lambda_dv = 0.05; // weight of the implicit-rep discriminator
    double lr = 1e-3;
    std::size_t batch = 2048;  // capped at the number of users with history
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    std::size_t disc_steps = 10;  // discriminator updates per main update
    double dropout = 0.2;         // discriminator-only dropout
    std::size_t eval_k = 20;      // validation recall cutoff
    std::uint64_t seed = 42;
    bool use_fair_neighbors = true;    // h term from the filtered-aggregate graph
    bool use_biased_neighbors = true;  // h term from the biased-aggregate graph
    bool use_role_indicators = true;   // off: zero vectors replace both indicators
};

void validate(const FairLearnConfig& cfg);

// Every trainable piece of the fairness phase: base embeddings (plus modal
// projectors for vbpr-lite), the two shared role indicators, K sub-filters
// applied to [role ; rep] for users and items alike, and one discriminator
// head per sensitive attribute on each of the explicit and implicit user
// representations. Templated so the gradient checker can instantiate the
// same graphs at double precision.
template <typename S>
struct Phase2Nets {
    EmbeddingStore<S> emb;
    MultimodalProjector<S> projector;  // empty for mf-bpr
    Param<S> role_user;                // 1 x d_r
    Param<S> role_item;                // 1 x d_r
    std::vector<Mlp<S>> filters;
    std::vector<Mlp<S>> heads_explicit;
    std::vector<Mlp<S>> heads_implicit;

    std::size_t rep_dim() const { return role_user.value.cols + emb.dim; }

    // Everything the main step owns; the discriminator step owns the rest.
    std::vector<Param<S>*> main_params() {
        std::vector<Param<S>*> out{&emb.users, &emb.items, &role_user, &role_item};
        for (auto& p : projector.maps) out.push_back(&p);
        for (auto& f : filters)
            for (Param<S>* p : f.params()) out.push_back(p);
        return out;
    }
    std::vector<Param<S>*> disc_params() {
        std::vector<Param<S>*> out;
        for (auto& h : heads_explicit)
            for (Param<S>* p : h.params()) out.push_back(p);
        for (auto& h : heads_implicit)
            for (Param<S>* p : h.params()) out.push_back(p);
        return out;
    }
};

// One sub-filter and one head pair per sensitive attribute; filters map
// (d_r + d) -> (d_r + d) and are shared between the user and item paths.
Phase2Nets<float> make_phase2_nets(std::uint32_t n_users, std::uint32_t n_items,
                                   const std::vector<std::size_t>& modal_dims,
                                   const SensitiveAttributeTable& attrs,
                                   const FairLearnConfig& cfg, Rng& rng);

template <typename SDst, typename SSrc>
Phase2Nets<SDst> phase2_nets_cast(const Phase2Nets<SSrc>& n) {
    Phase2Nets<SDst> out;
    out.emb.users = param_cast<SDst>(n.emb.users);
    out.emb.items = param_cast<SDst>(n.emb.items);
    out.emb.dim = n.emb.dim;
    for (const auto& p : n.projector.maps) out.projector.maps.push_back(param_cast<SDst>(p));
    out.role_user = param_cast<SDst>(n.role_user);
    out.role_item = param_cast<SDst>(n.role_item);
    for (const auto& f : n.filters) out.filters.push_back(mlp_cast<SDst>(f));
    for (const auto& h : n.heads_explicit) out.heads_explicit.push_back(mlp_cast<SDst>(h));
    for (const auto& h : n.heads_implicit) out.heads_implicit.push_back(mlp_cast<SDst>(h));
    return out;
}

// One user mini-batch: a sampled positive and negative item per user plus
// per-attribute labels. Train histories enter through the history mix
// matrix, not the batch.
struct Phase2Batch {
    std::vector<std::uint32_t> users;
    std::vector<std::uint32_t> pos_items;
    std::vector<std::uint32_t> neg_items;
    std::vector<std::vector<std::uint32_t>> labels;  // [attribute][user in batch]
};

// Users without train history are dropped; negatives are rejection-sampled
// outside the user's train set.
Phase2Batch make_phase2_batch(const Dataset& ds, const std::vector<std::uint32_t>& users,
                              Rng& rng);

// N x M row-stochastic matrix averaging over each user's train items, so
// mixing it with filtered item rows yields the implicit user representation.
CsrMatrix<float> history_mix_matrix(const InteractionDataset& inter);

template <typename S>
struct Phase2Losses {
    NodeId rec = -1;            // pairwise ranking loss on filtered reps
    NodeId disc_explicit = -1;  // attribute loss of the heads on user reps
    NodeId disc_implicit = -1;  // attribute loss on history-mean item reps
    NodeId main_objective = -1; // rec - lambda_du*explicit - lambda_dv*implicit
    NodeId disc_objective = -1; // explicit + implicit
    NodeId user_rep = -1;       // batch rows, d_r + d wide
    NodeId implicit_rep = -1;   // batch rows, d_r + d wide
};

// Records the full Phase-2 graph for one batch: live-embedding neighbor
// enhancement over the frozen graphs, the [role ; rep] filter bank over the
// batch users and the whole item table, the ranking loss on gathered
// positive/negative rows, and the two discriminator losses. When train_main
// is true the embeddings/projectors/roles/filters are trainable and the
// heads frozen; otherwise the roles flip. Null graph pointers drop the
// matching enhancement term. The CSR arguments must outlive the tape.
template <typename S>
Phase2Losses<S> build_phase2_losses(Tape<S>& tape, ParamBinder<S>& bind, Phase2Nets<S>& nets,
                                    const std::vector<Mat<S>>& modal_feats,
                                    const CsrMatrix<S>* fair_adj, const CsrMatrix<S>* biased_adj,
                                    const CsrMatrix<S>& history_mix, const Phase2Batch& batch,
                                    const std::vector<std::uint32_t>& attr_classes,
                                    const FairLearnConfig& cfg, bool train_main, bool train_mode,
                                    Rng* rng) {
    if (batch.users.empty()) throw DataError("batch holds no users with history");
    if (nets.filters.empty()) throw ConfigError("filter bank is empty");
    if (attr_classes.size() != batch.labels.size() ||
        attr_classes.size() != nets.heads_explicit.size() ||
        attr_classes.size() != nets.heads_implicit.size() ||
        attr_classes.size() != nets.filters.size())
        throw ShapeError("attribute count mismatch between nets, labels, and class table");
    if (modal_feats.size() != nets.projector.maps.size())
        throw ShapeError("modal feature count does not match the projector");

    auto main_bind = [&](Param<S>& p) { return train_main ? bind.trainable(p) : bind.frozen(p); };
    std::size_t d_r = nets.role_user.value.cols;

    NodeId user_table = main_bind(nets.emb.users);
    NodeId eu = tape.gather_rows(user_table, batch.users);
    if (cfg.lambda_h != 0.0) {
        if (fair_adj)
            eu = tape.add_scaled(eu, tape.sparse_mix(*fair_adj, batch.users, user_table),
                                 cfg.lambda_h);
        if (biased_adj)
            eu = tape.add_scaled(eu, tape.sparse_mix(*biased_adj, batch.users, user_table),
                                 -cfg.lambda_h);
    }

    // The whole item table goes through the filter bank so the implicit mix
    // and the positive/negative gathers share one pass.
    NodeId items = main_bind(nets.emb.items);
    for (std::size_t m = 0; m < modal_feats.size(); ++m)
        items = tape.add(items,
                         tape.matmul(tape.constant(modal_feats[m]),
                                     main_bind(nets.projector.maps[m])));

    auto role_block = [&](Param<S>& role, std::size_t n_rows) {
        NodeId zeros = tape.constant(Mat<S>(n_rows, d_r, S(0)));
        if (!cfg.use_role_indicators) return zeros;
        return tape.add_rowvec(zeros, main_bind(role));
    };
    auto bank = [&](NodeId x) {
        NodeId acc = -1;
        for (const Mlp<S>& f : nets.filters) {
            NodeId y = f.apply(tape, bind, x, train_main, train_mode, rng);
            acc = acc < 0 ? y : tape.add(acc, y);
        }
        return tape.scale(acc, 1.0 / static_cast<double>(nets.filters.size()));
    };

    NodeId bu = bank(tape.concat_cols(role_block(nets.role_user, batch.users.size()), eu));
    NodeId bv = bank(tape.concat_cols(role_block(nets.role_item, nets.emb.items.value.rows),
                                      items));

    Phase2Losses<S> res;
    res.user_rep = bu;
    res.implicit_rep = tape.sparse_mix(history_mix, batch.users, bv);

    NodeId pos = tape.gather_rows(bv, batch.pos_items);
    NodeId neg = tape.gather_rows(bv, batch.neg_items);
    res.rec = bpr_loss(tape, tape.rowwise_dot(bu, pos), tape.rowwise_dot(bu, neg));

    for (std::size_t k = 0; k < attr_classes.size(); ++k) {
        bool heads_on = !train_main;
        NodeId out_e = nets.heads_explicit[k].apply(tape, bind, bu, heads_on, train_mode, rng);
        NodeId out_i = nets.heads_implicit[k].apply(tape, bind, res.implicit_rep, heads_on,
                                                    train_mode, rng);
        NodeId le, li;
        if (attr_classes[k] == 2) {
            Mat<S> y(batch.users.size(), 1);
            for (std::size_t i = 0; i < batch.users.size(); ++i)
                y(i, 0) = static_cast<S>(batch.labels[k][i]);
            NodeId yn = tape.constant(y);
            le = tape.bce(tape.sigmoid(out_e), yn);
            li = tape.bce(tape.sigmoid(out_i), yn);
        } else {
            le = tape.nll(tape.log_softmax(out_e), batch.labels[k]);
            li = tape.nll(tape.log_softmax(out_i), batch.labels[k]);
        }
        res.disc_explicit = res.disc_explicit < 0 ? le : tape.add(res.disc_explicit, le);
        res.disc_implicit = res.disc_implicit < 0 ? li : tape.add(res.disc_implicit, li);
    }

    NodeId obj = tape.add_scaled(res.rec, res.disc_explicit, -cfg.lambda_du);
    res.main_objective = tape.add_scaled(obj, res.disc_implicit, -cfg.lambda_dv);
    res.disc_objective = tape.add(res.disc_explicit, res.disc_implicit);
    return res;
}

template <typename S>
struct Phase2HeadLosses {
    NodeId disc_explicit = -1;
    NodeId disc_implicit = -1;
    NodeId disc_objective = -1;
};

// Discriminator-only step over precomputed batch representations; the
// filter-side forward pass is fixed while the heads train, so callers
// compute the representations once and reuse them for every head update.
template <typename S>
Phase2HeadLosses<S> build_phase2_head_losses(Tape<S>& tape, ParamBinder<S>& bind,
                                             Phase2Nets<S>& nets, const Mat<S>& explicit_rows,
                                             const Mat<S>& implicit_rows, const Phase2Batch& batch,
                                             const std::vector<std::uint32_t>& attr_classes,
                                             bool train_mode, Rng* rng) {
    if (explicit_rows.rows != batch.users.size() || implicit_rows.rows != batch.users.size())
        throw ShapeError("representation row count does not match the batch");
    NodeId xe = tape.constant(explicit_rows);
    NodeId xi = tape.constant(implicit_rows);
    Phase2HeadLosses<S> res;
    for (std::size_t k = 0; k < attr_classes.size(); ++k) {
        NodeId out_e = nets.heads_explicit[k].apply(tape, bind, xe, true, train_mode, rng);
        NodeId out_i = nets.heads_implicit[k].apply(tape, bind, xi, true, train_mode, rng);
        NodeId le, li;
        if (attr_classes[k] == 2) {
            Mat<S> y(batch.users.size(), 1);
            for (std::size_t i = 0; i < batch.users.size(); ++i)
                y(i, 0) = static_cast<S>(batch.labels[k][i]);
            NodeId yn = tape.constant(y);
            le = tape.bce(tape.sigmoid(out_e), yn);
            li = tape.bce(tape.sigmoid(out_i), yn);
        } else {
            le = tape.nll(tape.log_softmax(out_e), batch.labels[k]);
            li = tape.nll(tape.log_softmax(out_i), batch.labels[k]);
        }
        res.disc_explicit = res.disc_explicit < 0 ? le : tape.add(res.disc_explicit, le);
        res.disc_implicit = res.disc_implicit < 0 ? li : tape.add(res.disc_implicit, li);
    }
    res.disc_objective = tape.add(res.disc_explicit, res.disc_implicit);
    return res;
}

// Mean over the filter bank of f_k([role ; x]) per row, on the inference
// path. The role is a single row prepended to every input row.
Mat<float> filter_reps(const std::vector<Mlp<float>>& filters, const Mat<float>& role,
                       const Mat<float>& x);

// Representation snapshot for scoring and audits: filtered enhanced user
// rows, filtered item rows, and the per-user train-history mean of the
// latter (zero rows for users without history).
struct FilteredReps {
    Mat<float> user;           // N x (d_r + d)
    Mat<float> item;           // M x (d_r + d)
    Mat<float> implicit_user;  // N x (d_r + d)
};

FilteredReps compute_filtered_reps(const Phase2Nets<float>& nets, const Dataset& ds,
                                   const std::vector<Mat<float>>& item_modal_feats,
                                   const SimilarityGraph& fair_graph,
                                   const SimilarityGraph& biased_graph,
                                   const FairLearnConfig& cfg);

// Ranking view over the filtered matrices; scores are plain dot products
// over the full d_r + d width.
Scorer scorer_from_filtered(const FilteredReps& reps);

// Inference-time discriminator losses over the given users: explicit heads
// on reps.user rows, implicit heads restricted to users with train history
// (none at all is an error). Per-head batch means summed over heads.
std::pair<double, double> disc_losses_phase2(const Phase2Nets<float>& nets,
                                             const FilteredReps& reps,
                                             const InteractionDataset& inter,
                                             const SensitiveAttributeTable& attrs,
                                             const std::vector<std::uint32_t>& users);

struct Phase2Result {
    Phase2Nets<float> nets;  // best-validation snapshot
    FilteredReps reps;       // recomputed from the restored snapshot
    nlohmann::json log;      // config echo plus per-epoch metrics
    std::size_t best_epoch = 0;
    std::size_t epochs_ran = 0;
};

// Alternating min-max training: each main step updates embeddings,
// projectors, role indicators, and filters on rec - lambda_du*L_e -
// lambda_dv*L_i, then cfg.disc_steps head-only steps minimize L_e + L_i on
// refreshed batch representations. Early-stopped on validation recall at
// cfg.eval_k; graphs are taken as fixed inputs built beforehand.
Phase2Result train_phase2(const Dataset& ds, const std::vector<Mat<float>>& item_modal_feats,
                          const SimilarityGraph& fair_graph, const SimilarityGraph& biased_graph,
                          const FairLearnConfig& cfg);

nlohmann::json config_json(const FairLearnConfig& cfg);

// Binary model file: magic, version, dims, embeddings, role indicators,
// filter bank, discriminator heads, modal projectors; a JSON sidecar at
// path + ".json" carries the config echo and the per-epoch metric log.
void save_fmm2(const std::string& path, const Phase2Nets<float>& nets,
               const nlohmann::json& sidecar);
Phase2Nets<float> load_fmm2(const std::string& path);
nlohmann::json load_fmm2_sidecar(const std::string& path);

}  // namespace fmmrec
