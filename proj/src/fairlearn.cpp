#include "fmmrec/fairlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "fmmrec/binio.hpp"
#include "fmmrec/disentangle.hpp"
#include "fmmrec/eval.hpp"

namespace fmmrec {

namespace {

std::vector<Mat<float>> snapshot_values(const std::vector<Param<float>*>& params) {
    std::vector<Mat<float>> out;
    out.reserve(params.size());
    for (const Param<float>* p : params) out.push_back(p->value);
    return out;
}

void restore_values(const std::vector<Param<float>*>& params,
                    const std::vector<Mat<float>>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

double bce_mean(const Mat<float>& logits, const std::vector<std::uint32_t>& labels) {
    double acc = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        double p = 1.0 / (1.0 + std::exp(-double(logits(r, 0))));
        p = std::min(1.0 - 1e-7, std::max(1e-7, p));
        double y = static_cast<double>(labels[r]);
        acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return acc / static_cast<double>(logits.rows);
}

double nll_mean(const Mat<float>& logits, const std::vector<std::uint32_t>& labels) {
    double acc = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < logits.cols; ++c) mx = std::max(mx, double(logits(r, c)));
        double lse = 0;
        for (std::size_t c = 0; c < logits.cols; ++c) lse += std::exp(double(logits(r, c)) - mx);
        acc -= double(logits(r, labels[r])) - (mx + std::log(lse));
    }
    return acc / static_cast<double>(logits.rows);
}

Mat<float> gather_rows_plain(const Mat<float>& src, const std::vector<std::uint32_t>& ids) {
    Mat<float> out(ids.size(), src.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= src.rows) throw DataError(cat("row ", ids[i], " out of range"));
        std::copy(src.row_ptr(ids[i]), src.row_ptr(ids[i]) + src.cols, out.row_ptr(i));
    }
    return out;
}

void write_mlp(std::ostream& out, const Mlp<float>& m) {
    binio::write_u32(out, static_cast<std::uint32_t>(m.w1.value.rows));
    binio::write_u32(out, static_cast<std::uint32_t>(m.w1.value.cols));
    binio::write_u32(out, static_cast<std::uint32_t>(m.w2.value.cols));
    binio::write_f32_data(out, m.w1.value);
    binio::write_f32_data(out, m.b1.value);
    binio::write_f32_data(out, m.w2.value);
    binio::write_f32_data(out, m.b2.value);
}

Mlp<float> read_mlp(std::istream& in, const std::string& name) {
    std::uint32_t dim_in = binio::read_u32(in, name + " input width");
    std::uint32_t hidden = binio::read_u32(in, name + " hidden width");
    std::uint32_t dim_out = binio::read_u32(in, name + " output width");
    Mlp<float> m;
    m.w1 = Param<float>(name + ".w1", dim_in, hidden);
    m.b1 = Param<float>(name + ".b1", 1, hidden);
    m.w2 = Param<float>(name + ".w2", hidden, dim_out);
    m.b2 = Param<float>(name + ".b2", 1, dim_out);
    binio::read_f32_data(in, m.w1.value, name + ".w1");
    binio::read_f32_data(in, m.b1.value, name + ".b1");
    binio::read_f32_data(in, m.w2.value, name + ".w2");
    binio::read_f32_data(in, m.b2.value, name + ".b2");
    return m;
}

}  // namespace

void validate(const FairLearnConfig& cfg) {
    if (cfg.lambda_h < 0.0 || cfg.lambda_du < 0.0 || cfg.lambda_dv < 0.0)
        throw ConfigError("fairness loss weights must be nonnegative");
    if (cfg.d < 1 || cfg.d_r < 1)
        throw ConfigError("embedding and role indicator widths must be positive");
    if (cfg.lr <= 0.0) throw ConfigError(cat("learning rate must be positive, got ", cfg.lr));
    if (cfg.batch < 1) throw ConfigError("batch size must be at least 1");
    if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (cfg.patience < 1) throw ConfigError("patience must be at least 1");
    if (cfg.eval_k < 1) throw ConfigError("eval_k must be at least 1");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
        throw ConfigError(cat("dropout must lie in [0, 1), got ", cfg.dropout));
}

Phase2Nets<float> make_phase2_nets(std::uint32_t n_users, std::uint32_t n_items,
                                   const std::vector<std::size_t>& modal_dims,
                                   const SensitiveAttributeTable& attrs,
                                   const FairLearnConfig& cfg, Rng& rng) {
    if (attrs.attrs.empty())
        throw ConfigError("adversarial training needs at least one sensitive attribute");
    Phase2Nets<float> nets;
    nets.emb = EmbeddingStore<float>(n_users, n_items, cfg.d, rng, cfg.lr);
    nets.projector = MultimodalProjector<float>(modal_dims, cfg.d, rng, cfg.lr);
    nets.role_user = Param<float>("role.user", 1, cfg.d_r, cfg.lr);
    nets.role_item = Param<float>("role.item", 1, cfg.d_r, cfg.lr);
    xavier_fill(nets.role_user.value, rng);
    xavier_fill(nets.role_item.value, rng);
    std::size_t width = cfg.d_r + cfg.d;
    // Narrow discriminator heads for the same reason as in the modal phase:
    // wide ones memorize the fixed per-user rows and stop exerting pressure.
    std::size_t hidden = std::min<std::size_t>(width, 32);
    for (std::size_t k = 0; k < attrs.attrs.size(); ++k)
        nets.filters.emplace_back(cat("filter.", k), width, width, width, rng, cfg.lr);
    for (const AttributeSpec& spec : attrs.attrs) {
        std::size_t out = spec.classes == 2 ? 1 : spec.classes;
        nets.heads_explicit.emplace_back("head_e." + spec.name, width, hidden, out, rng, cfg.lr,
                                         cfg.dropout);
        nets.heads_implicit.emplace_back("head_i." + spec.name, width, hidden, out, rng, cfg.lr,
                                         cfg.dropout);
    }
    return nets;
}

Phase2Batch make_phase2_batch(const Dataset& ds, const std::vector<std::uint32_t>& users,
                              Rng& rng) {
    const InteractionDataset& inter = ds.interactions;
    Phase2Batch batch;
    batch.labels.resize(ds.attributes.attrs.size());
    for (std::uint32_t u : users) {
        const auto& items = inter.train_items[u];
        if (items.empty()) continue;
        std::uint32_t pos = items[bounded_rand(rng, items.size())];
        std::uint32_t neg = 0;
        bool found = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
            neg = static_cast<std::uint32_t>(bounded_rand(rng, inter.n_items));
            if (!inter.has_train(u, neg)) {
                found = true;
                break;
            }
        }
        if (!found)
            throw DataError(cat("negative sampling exhausted for user ", u,
                                " after 100 attempts"));
        batch.users.push_back(u);
        batch.pos_items.push_back(pos);
        batch.neg_items.push_back(neg);
        for (std::size_t k = 0; k < batch.labels.size(); ++k)
            batch.labels[k].push_back(ds.attributes.labels[u][k]);
    }
    return batch;
}

CsrMatrix<float> history_mix_matrix(const InteractionDataset& inter) {
    CsrMatrix<float> mix(inter.n_users, inter.n_items);
    for (std::uint32_t u = 0; u < inter.n_users; ++u) {
        const auto& items = inter.train_items[u];
        float w = items.empty() ? 0.0f : 1.0f / static_cast<float>(items.size());
        for (std::uint32_t v : items) {
            mix.indices.push_back(v);
            mix.weights.push_back(w);
        }
        mix.indptr[u + 1] = static_cast<std::uint32_t>(mix.indices.size());
    }
    return mix;
}

Mat<float> filter_reps(const std::vector<Mlp<float>>& filters, const Mat<float>& role,
                       const Mat<float>& x) {
    if (filters.empty()) throw ConfigError("filter bank is empty");
    if (role.rows != 1) throw ShapeError("role indicator must be a single row");
    std::size_t width = role.cols + x.cols;
    if (filters[0].in_dim() != width)
        throw ShapeError(cat("filter bank expects ", filters[0].in_dim(), " inputs, got ",
                             width));
    Mat<float> in(x.rows, width);
    for (std::size_t r = 0; r < x.rows; ++r) {
        std::copy(role.row_ptr(0), role.row_ptr(0) + role.cols, in.row_ptr(r));
        std::copy(x.row_ptr(r), x.row_ptr(r) + x.cols, in.row_ptr(r) + role.cols);
    }
    Mat<float> acc(x.rows, filters[0].out_dim(), 0.0f);
    for (const Mlp<float>& f : filters) {
        Mat<float> y = f.infer(in);
        for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += y.data[i];
    }
    float inv = 1.0f / static_cast<float>(filters.size());
    for (float& v : acc.data) v *= inv;
    return acc;
}

FilteredReps compute_filtered_reps(const Phase2Nets<float>& nets, const Dataset& ds,
                                   const std::vector<Mat<float>>& item_modal_feats,
                                   const SimilarityGraph& fair_graph,
                                   const SimilarityGraph& biased_graph,
                                   const FairLearnConfig& cfg) {
    const InteractionDataset& inter = ds.interactions;
    std::size_t d_r = nets.role_user.value.cols;

    Mat<float> enhanced = nets.emb.users.value;
    if (cfg.lambda_h != 0.0 && (cfg.use_fair_neighbors || cfg.use_biased_neighbors)) {
        Mat<float> zero(inter.n_users, nets.emb.dim, 0.0f);
        Mat<float> hf = cfg.use_fair_neighbors
                            ? neighbor_aggregate(fair_graph, nets.emb.users.value)
                            : zero;
        Mat<float> hb = cfg.use_biased_neighbors
                            ? neighbor_aggregate(biased_graph, nets.emb.users.value)
                            : zero;
        enhanced = enhance_users(nets.emb.users.value, hf, hb, cfg.lambda_h);
    }
    Mat<float> base_items =
        compose_item_rep(nets.emb.items.value, item_modal_feats, nets.projector.maps);

    Mat<float> zero_role(1, d_r, 0.0f);
    const Mat<float>& role_u = cfg.use_role_indicators ? nets.role_user.value : zero_role;
    const Mat<float>& role_v = cfg.use_role_indicators ? nets.role_item.value : zero_role;

    FilteredReps reps;
    reps.user = filter_reps(nets.filters, role_u, enhanced);
    reps.item = filter_reps(nets.filters, role_v, base_items);
    std::vector<std::uint32_t> all_users(inter.n_users);
    std::iota(all_users.begin(), all_users.end(), 0u);
    reps.implicit_user = history_mean(reps.item, inter, all_users);
    return reps;
}

Scorer scorer_from_filtered(const FilteredReps& reps) {
    if (reps.user.cols != reps.item.cols)
        throw ShapeError("filtered user and item widths differ");
    return Scorer{&reps.user, &reps.item};
}

std::pair<double, double> disc_losses_phase2(const Phase2Nets<float>& nets,
                                             const FilteredReps& reps,
                                             const InteractionDataset& inter,
                                             const SensitiveAttributeTable& attrs,
                                             const std::vector<std::uint32_t>& users) {
    if (users.empty()) throw DataError("discriminator losses need at least one user");
    if (attrs.n_attrs() != nets.heads_explicit.size() ||
        attrs.n_attrs() != nets.heads_implicit.size())
        throw ShapeError("attribute count mismatch between nets and table");
    std::vector<std::uint32_t> with_history;
    for (std::uint32_t u : users)
        if (!inter.train_items[u].empty()) with_history.push_back(u);
    if (with_history.empty())
        throw DataError("no listed user has train history for the implicit loss");

    Mat<float> xe = gather_rows_plain(reps.user, users);
    Mat<float> xi = gather_rows_plain(reps.implicit_user, with_history);
    double loss_e = 0, loss_i = 0;
    for (std::size_t k = 0; k < attrs.n_attrs(); ++k) {
        std::vector<std::uint32_t> ye, yi;
        for (std::uint32_t u : users) ye.push_back(attrs.labels[u][k]);
        for (std::uint32_t u : with_history) yi.push_back(attrs.labels[u][k]);
        Mat<float> oe = nets.heads_explicit[k].infer(xe);
        Mat<float> oi = nets.heads_implicit[k].infer(xi);
        if (attrs.attrs[k].classes == 2) {
            loss_e += bce_mean(oe, ye);
            loss_i += bce_mean(oi, yi);
        } else {
            loss_e += nll_mean(oe, ye);
            loss_i += nll_mean(oi, yi);
        }
    }
    return {loss_e, loss_i};
}

nlohmann::json config_json(const FairLearnConfig& cfg) {
    return {{"base", to_string(cfg.base)},
            {"d", cfg.d},
            {"d_r", cfg.d_r},
            {"lambda_h", cfg.lambda_h},
            {"lambda_du", cfg.lambda_du},
            {"lambda_dv", cfg.lambda_dv},
            {"lr", cfg.lr},
            {"batch", cfg.batch},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"disc_steps", cfg.disc_steps},
            {"dropout", cfg.dropout},
            {"eval_k", cfg.eval_k},
            {"seed", cfg.seed},
            {"use_fair_neighbors", cfg.use_fair_neighbors},
            {"use_biased_neighbors", cfg.use_biased_neighbors},
            {"use_role_indicators", cfg.use_role_indicators}};
}

Phase2Result train_phase2(const Dataset& ds, const std::vector<Mat<float>>& item_modal_feats,
                          const SimilarityGraph& fair_graph, const SimilarityGraph& biased_graph,
                          const FairLearnConfig& cfg) {
    validate(cfg);
    const InteractionDataset& inter = ds.interactions;
    bool multimodal = cfg.base == BaseKind::VbprLite;
    if (multimodal && item_modal_feats.empty())
        throw ConfigError("vbpr-lite needs at least one modal feature table");
    const std::vector<Mat<float>> no_feats;
    const std::vector<Mat<float>>& feats = multimodal ? item_modal_feats : no_feats;

    bool mix_fair = cfg.lambda_h != 0.0 && cfg.use_fair_neighbors;
    bool mix_biased = cfg.lambda_h != 0.0 && cfg.use_biased_neighbors;
    if (mix_fair && fair_graph.n_users() != inter.n_users)
        throw MissingArtifactError(cat("fair graph covers ", fair_graph.n_users(),
                                       " users, dataset has ", inter.n_users));
    if (mix_biased && biased_graph.n_users() != inter.n_users)
        throw MissingArtifactError(cat("biased graph covers ", biased_graph.n_users(),
                                       " users, dataset has ", inter.n_users));

    std::vector<std::uint32_t> attr_classes;
    for (const AttributeSpec& s : ds.attributes.attrs) attr_classes.push_back(s.classes);
    std::vector<std::uint32_t> history = inter.users_with_history();
    if (history.empty()) throw DataError("no user has train interactions");
    if (history.size() < inter.n_users)
        log_warn(cat(inter.n_users - history.size(),
                     " users without train history are excluded from fairness training"));

    Rng init_rng(derive_seed(cfg.seed, kSeedInit));
    std::vector<std::size_t> mdims;
    for (const auto& f : feats) mdims.push_back(f.cols);
    Phase2Nets<float> nets =
        make_phase2_nets(inter.n_users, inter.n_items, mdims, ds.attributes, cfg, init_rng);

    CsrMatrix<float> history_mix = history_mix_matrix(inter);
    const CsrMatrix<float>* fair_adj = mix_fair ? &fair_graph.adj : nullptr;
    const CsrMatrix<float>* biased_adj = mix_biased ? &biased_graph.adj : nullptr;

    Rng samp_rng(derive_seed(cfg.seed, kSeedSampling));
    Rng drop_rng(derive_seed(cfg.seed, kSeedDropout));
    std::size_t batch_size = std::min(cfg.batch, history.size());

    auto validate_recall = [&]() {
        FilteredReps reps =
            compute_filtered_reps(nets, ds, feats, fair_graph, biased_graph, cfg);
        auto ranked = rank_all(reps.user, reps.item, inter, cfg.eval_k, true);
        return ranking_metrics(ranked, inter.valid_items, cfg.eval_k).recall;
    };

    Phase2Result result;
    result.log["config"] = config_json(cfg);
    result.log["epochs"] = nlohmann::json::array();

    std::vector<Param<float>*> main_side = nets.main_params();
    std::vector<Param<float>*> disc_side = nets.disc_params();
    double best_val = -1.0;
    std::vector<Mat<float>> best_main = snapshot_values(main_side);
    std::vector<Mat<float>> best_disc = snapshot_values(disc_side);
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        for (std::size_t i = history.size(); i > 1; --i)
            std::swap(history[i - 1], history[bounded_rand(samp_rng, i)]);

        double ep_rec = 0, ep_de = 0, ep_di = 0, ep_obj = 0;
        std::size_t ep_users = 0;
        for (std::size_t start = 0; start < history.size(); start += batch_size) {
            std::size_t stop = std::min(start + batch_size, history.size());
            std::vector<std::uint32_t> chunk(history.begin() + start, history.begin() + stop);
            Phase2Batch batch = make_phase2_batch(ds, chunk, samp_rng);

            {
                Tape<float> tape;
                ParamBinder<float> bind(tape);
                Phase2Losses<float> l = build_phase2_losses(
                    tape, bind, nets, feats, fair_adj, biased_adj, history_mix, batch,
                    attr_classes, cfg, true, true, &drop_rng);
                float obj = tape.scalar(l.main_objective);
                if (!std::isfinite(obj))
                    throw DivergenceError(cat("main objective became ", obj, " at epoch ",
                                              epoch));
                tape.backward(l.main_objective);
                bind.harvest();
                bind.step_all();
                double nb = static_cast<double>(batch.users.size());
                ep_rec += tape.scalar(l.rec) * nb;
                ep_de += tape.scalar(l.disc_explicit) * nb;
                ep_di += tape.scalar(l.disc_implicit) * nb;
                ep_obj += obj * nb;
                ep_users += batch.users.size();
            }

            if (cfg.disc_steps > 0) {
                FilteredReps reps =
                    compute_filtered_reps(nets, ds, feats, fair_graph, biased_graph, cfg);
                Mat<float> xe = gather_rows_plain(reps.user, batch.users);
                Mat<float> xi = gather_rows_plain(reps.implicit_user, batch.users);
                for (std::size_t s = 0; s < cfg.disc_steps; ++s) {
                    Tape<float> tape;
                    ParamBinder<float> bind(tape);
                    Phase2HeadLosses<float> l = build_phase2_head_losses(
                        tape, bind, nets, xe, xi, batch, attr_classes, true, &drop_rng);
                    float obj = tape.scalar(l.disc_objective);
                    if (!std::isfinite(obj))
                        throw DivergenceError(cat("discriminator objective became ", obj,
                                                  " at epoch ", epoch));
                    tape.backward(l.disc_objective);
                    bind.harvest();
                    bind.step_all();
                }
            }
        }

        double val = validate_recall();
        result.log["epochs"].push_back({{"epoch", epoch},
                                        {"rec", ep_rec / double(ep_users)},
                                        {"disc_explicit", ep_de / double(ep_users)},
                                        {"disc_implicit", ep_di / double(ep_users)},
                                        {"objective", ep_obj / double(ep_users)},
                                        {"val_recall", val}});
        result.epochs_ran = epoch + 1;
        log_debug("fairness epoch ", epoch, " rec=", ep_rec / double(ep_users),
                  " val_recall=", val);
        if (val > best_val + 1e-9) {
            best_val = val;
            result.best_epoch = epoch;
            best_main = snapshot_values(main_side);
            best_disc = snapshot_values(disc_side);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            log_info(cat("fairness phase: stopping after ", epoch + 1, " epochs (best ",
                         result.best_epoch, ")"));
            break;
        }
    }

    restore_values(main_side, best_main);
    restore_values(disc_side, best_disc);
    result.log["best_epoch"] = result.best_epoch;
    result.log["epochs_ran"] = result.epochs_ran;
    result.reps = compute_filtered_reps(nets, ds, feats, fair_graph, biased_graph, cfg);
    result.nets = std::move(nets);
    return result;
}

void save_fmm2(const std::string& path, const Phase2Nets<float>& nets,
               const nlohmann::json& sidecar) {
    if (nets.filters.empty()) throw ConfigError("refusing to save an empty filter bank");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(cat("cannot open ", path, " for writing"));
    binio::write_magic(out, "FMM2");
    binio::write_u32(out, 1);
    binio::write_u32(out, static_cast<std::uint32_t>(nets.emb.users.value.rows));
    binio::write_u32(out, static_cast<std::uint32_t>(nets.emb.items.value.rows));
    binio::write_u32(out, static_cast<std::uint32_t>(nets.emb.dim));
    binio::write_u32(out, static_cast<std::uint32_t>(nets.role_user.value.cols));
    binio::write_u32(out, static_cast<std::uint32_t>(nets.filters.size()));
    binio::write_f32_data(out, nets.emb.users.value);
    binio::write_f32_data(out, nets.emb.items.value);
    binio::write_f32_data(out, nets.role_user.value);
    binio::write_f32_data(out, nets.role_item.value);
    for (const auto& f : nets.filters) write_mlp(out, f);
    for (const auto& h : nets.heads_explicit) write_mlp(out, h);
    for (const auto& h : nets.heads_implicit) write_mlp(out, h);
    binio::write_u32(out, static_cast<std::uint32_t>(nets.projector.maps.size()));
    for (const auto& p : nets.projector.maps) {
        binio::write_u32(out, static_cast<std::uint32_t>(p.value.rows));
        binio::write_u32(out, static_cast<std::uint32_t>(p.value.cols));
        binio::write_f32_data(out, p.value);
    }
    if (!out) throw DataError(cat("short write to ", path));

    std::ofstream side(path + ".json");
    if (!side) throw DataError(cat("cannot open ", path, ".json for writing"));
    side << sidecar.dump(2) << "\n";
    if (!side) throw DataError(cat("short write to ", path, ".json"));
}

Phase2Nets<float> load_fmm2(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError(cat("cannot open checkpoint ", path));
    binio::expect_magic(in, "FMM2", path);
    std::uint32_t version = binio::read_u32(in, "version");
    if (version != 1)
        throw DataError(cat(path, ": unsupported checkpoint version ", version));
    std::uint32_t n = binio::read_u32(in, "N");
    std::uint32_t m = binio::read_u32(in, "M");
    std::uint32_t d = binio::read_u32(in, "d");
    std::uint32_t d_r = binio::read_u32(in, "d_r");
    std::uint32_t k = binio::read_u32(in, "K");
    if (k == 0) throw DataError(cat(path, ": checkpoint declares an empty filter bank"));

    Phase2Nets<float> nets;
    nets.emb.users = Param<float>("emb.users", n, d);
    nets.emb.items = Param<float>("emb.items", m, d);
    nets.emb.dim = d;
    nets.role_user = Param<float>("role.user", 1, d_r);
    nets.role_item = Param<float>("role.item", 1, d_r);
    binio::read_f32_data(in, nets.emb.users.value, "user embeddings");
    binio::read_f32_data(in, nets.emb.items.value, "item embeddings");
    binio::read_f32_data(in, nets.role_user.value, "user role indicator");
    binio::read_f32_data(in, nets.role_item.value, "item role indicator");
    for (std::uint32_t i = 0; i < k; ++i) nets.filters.push_back(read_mlp(in, cat("filter.", i)));
    for (std::uint32_t i = 0; i < k; ++i)
        nets.heads_explicit.push_back(read_mlp(in, cat("head_e.", i)));
    for (std::uint32_t i = 0; i < k; ++i)
        nets.heads_implicit.push_back(read_mlp(in, cat("head_i.", i)));
    std::uint32_t blocks = binio::read_u32(in, "projector count");
    for (std::uint32_t b = 0; b < blocks; ++b) {
        std::uint32_t rows = binio::read_u32(in, "projector rows");
        std::uint32_t cols = binio::read_u32(in, "projector cols");
        Param<float> p(cat("proj.", b), rows, cols);
        binio::read_f32_data(in, p.value, "projector block");
        nets.projector.maps.push_back(std::move(p));
    }
    return nets;
}

nlohmann::json load_fmm2_sidecar(const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) throw MissingArtifactError(cat("cannot open sidecar ", path, ".json"));
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(cat(path, ".json: ", e.what()));
    }
    return j;
}

}  // namespace fmmrec
