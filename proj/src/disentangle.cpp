#include "fmmrec/disentangle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "fmmrec/binio.hpp"

namespace fmmrec {

namespace {

Mat<float> gather_rows_plain(const Mat<float>& src, const std::vector<std::uint32_t>& ids) {
    Mat<float> out(ids.size(), src.cols);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(src.row_ptr(ids[i]), src.row_ptr(ids[i]) + src.cols, out.row_ptr(i));
    return out;
}

// Mirrors the tape's segment mean: per-slice sum scaled by 1/count.
Mat<float> slice_mean(const Mat<float>& rows, const std::vector<std::uint32_t>& offsets) {
    Mat<float> out(offsets.size() - 1, rows.cols, 0.0f);
    for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
        std::uint32_t lo = offsets[g], hi = offsets[g + 1];
        if (hi == lo) continue;
        float* dst = out.row_ptr(g);
        for (std::uint32_t e = lo; e < hi; ++e) {
            const float* src = rows.row_ptr(e);
            for (std::size_t c = 0; c < rows.cols; ++c) dst[c] += src[c];
        }
        float inv = 1.0f / static_cast<float>(hi - lo);
        for (std::size_t c = 0; c < rows.cols; ++c) dst[c] *= inv;
    }
    return out;
}

struct MlpSnapshot {
    Mat<float> w1, b1, w2, b2;
};

MlpSnapshot snapshot(const Mlp<float>& m) {
    return {m.w1.value, m.b1.value, m.w2.value, m.b2.value};
}

void restore(Mlp<float>& m, const MlpSnapshot& s) {
    m.w1.value = s.w1;
    m.b1.value = s.b1;
    m.w2.value = s.w2;
    m.b2.value = s.b2;
}

}  // namespace

void validate(const DisentangleConfig& cfg) {
    if (cfg.lambda_adv < 0.0 || cfg.lambda_orth < 0.0)
        throw ConfigError("disentanglement loss weights must be nonnegative");
    if (cfg.lr <= 0.0) throw ConfigError(cat("learning rate must be positive, got ", cfg.lr));
    if (cfg.batch < 1) throw ConfigError("batch size must be at least 1");
    if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (cfg.patience < 1) throw ConfigError("patience must be at least 1");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
        throw ConfigError(cat("dropout must lie in [0, 1), got ", cfg.dropout));
}

Phase1Nets<float> make_phase1_nets(std::uint32_t d_m, const SensitiveAttributeTable& attrs,
                                   double lr, double dropout, Rng& rng) {
    if (attrs.attrs.empty())
        throw ConfigError("adversarial training needs at least one sensitive attribute");
    Phase1Nets<float> nets;
    nets.filter = Mlp<float>("filter", d_m, d_m, d_m, rng, lr);
    nets.learner = Mlp<float>("learner", d_m, d_m, d_m, rng, lr);
    // Narrow classifier heads: wide ones memorize the few hundred fixed user
    // aggregates within a few thousand steps, after which their loss
    // saturates and the filter stops receiving pressure.
    std::uint32_t hidden = std::min<std::uint32_t>(d_m, 32);
    for (const AttributeSpec& spec : attrs.attrs) {
        std::size_t out = spec.classes == 2 ? 1 : spec.classes;
        nets.heads_filtered.emplace_back("head_f." + spec.name, d_m, hidden, out, rng, lr,
                                         dropout);
        nets.heads_biased.emplace_back("head_b." + spec.name, d_m, hidden, out, rng, lr, dropout);
    }
    return nets;
}

Phase1Batch make_phase1_batch(const Dataset& ds, const std::vector<std::uint32_t>& users) {
    Phase1Batch batch;
    batch.offsets.push_back(0);
    batch.labels.resize(ds.attributes.attrs.size());
    for (std::uint32_t u : users) {
        const auto& items = ds.interactions.train_items[u];
        if (items.empty()) continue;
        batch.users.push_back(u);
        batch.item_ids.insert(batch.item_ids.end(), items.begin(), items.end());
        batch.offsets.push_back(static_cast<std::uint32_t>(batch.item_ids.size()));
        for (std::size_t k = 0; k < batch.labels.size(); ++k)
            batch.labels[k].push_back(ds.attributes.labels[u][k]);
    }
    return batch;
}

Phase1Result train_phase1(const Dataset& ds, std::size_t modality_index,
                          const DisentangleConfig& cfg) {
    validate(cfg);
    if (modality_index >= ds.modalities.size())
        throw ConfigError(cat("modality index ", modality_index, " out of range, have ",
                              ds.modalities.size()));
    const ModalFeatureTable& tbl = ds.modalities[modality_index];
    std::vector<std::uint32_t> attr_classes;
    for (const AttributeSpec& s : ds.attributes.attrs) attr_classes.push_back(s.classes);

    std::vector<std::uint32_t> history = ds.interactions.users_with_history();
    std::size_t skipped = ds.interactions.n_users - history.size();
    if (history.empty()) throw DataError("no user has train interactions");
    if (skipped > 0)
        log_warn(cat(skipped, " users without train history are excluded from modality ",
                     tbl.name, " training"));

    Rng init_rng(derive_seed(cfg.seed, kSeedInit));
    Phase1Nets<float> nets = make_phase1_nets(tbl.dim, ds.attributes, cfg.lr, cfg.dropout,
                                              init_rng);

    Rng hold_rng(derive_seed(cfg.seed, kSeedHoldout));
    std::vector<std::uint32_t> shuffled = history;
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[bounded_rand(hold_rng, i)]);
    std::size_t n_hold = shuffled.size() >= 10 ? shuffled.size() / 10
                                               : (shuffled.size() >= 2 ? 1 : 0);
    std::vector<std::uint32_t> holdout(shuffled.begin(), shuffled.begin() + n_hold);
    std::vector<std::uint32_t> pool(shuffled.begin() + n_hold, shuffled.end());
    std::sort(holdout.begin(), holdout.end());
    std::sort(pool.begin(), pool.end());

    Rng samp_rng(derive_seed(cfg.seed, kSeedSampling));
    Rng drop_rng(derive_seed(cfg.seed, kSeedDropout));
    std::size_t batch_size = std::min(cfg.batch, pool.size());
    Phase1Batch monitor_batch = make_phase1_batch(ds, holdout.empty() ? pool : holdout);

    struct MonitorEval {
        double objective, recon, orth, disc_filtered, disc_biased;
    };
    auto monitor_value = [&]() {
        Tape<float> tape;
        ParamBinder<float> bind(tape);
        Phase1Losses<float> l = build_phase1_losses(tape, bind, nets, tbl.features, monitor_batch,
                                                    attr_classes, cfg.lambda_adv, cfg.lambda_orth,
                                                    true, false, nullptr);
        return MonitorEval{static_cast<double>(tape.scalar(l.filter_objective)),
                           static_cast<double>(tape.scalar(l.recon)),
                           static_cast<double>(tape.scalar(l.orth)),
                           static_cast<double>(tape.scalar(l.disc_filtered)),
                           static_cast<double>(tape.scalar(l.disc_biased))};
    };

    Phase1Result result;
    result.store.name = tbl.name;
    result.store.modality_id = static_cast<std::uint8_t>(modality_index);
    result.log["modality"] = tbl.name;
    result.log["skipped_users"] = skipped;
    result.log["epochs"] = nlohmann::json::array();

    double best = std::numeric_limits<double>::infinity();
    MlpSnapshot best_filter = snapshot(nets.filter);
    MlpSnapshot best_learner = snapshot(nets.learner);
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        for (std::size_t i = pool.size(); i > 1; --i)
            std::swap(pool[i - 1], pool[bounded_rand(samp_rng, i)]);

        double ep_recon = 0, ep_orth = 0, ep_df = 0, ep_db = 0, ep_obj = 0;
        std::size_t ep_users = 0;
        for (std::size_t start = 0; start < pool.size(); start += batch_size) {
            std::size_t stop = std::min(start + batch_size, pool.size());
            std::vector<std::uint32_t> chunk(pool.begin() + start, pool.begin() + stop);
            Phase1Batch batch = make_phase1_batch(ds, chunk);

            {
                Tape<float> tape;
                ParamBinder<float> bind(tape);
                Phase1Losses<float> l = build_phase1_losses(
                    tape, bind, nets, tbl.features, batch, attr_classes, cfg.lambda_adv,
                    cfg.lambda_orth, true, true, &drop_rng);
                float obj = tape.scalar(l.filter_objective);
                if (!std::isfinite(obj))
                    throw DivergenceError(cat("filter objective became ", obj, " at epoch ",
                                              epoch, " on modality ", tbl.name));
                tape.backward(l.filter_objective);
                bind.harvest();
                bind.step_all();
                double nb = static_cast<double>(batch.users.size());
                ep_recon += tape.scalar(l.recon) * nb;
                ep_orth += tape.scalar(l.orth) * nb;
                ep_df += tape.scalar(l.disc_filtered) * nb;
                ep_db += tape.scalar(l.disc_biased) * nb;
                ep_obj += obj * nb;
                ep_users += batch.users.size();
            }

            if (cfg.disc_steps > 0) {
                Mat<float> gathered = gather_rows_plain(tbl.features, batch.item_ids);
                Mat<float> agg_f = slice_mean(nets.filter.infer(gathered), batch.offsets);
                Mat<float> agg_b = slice_mean(nets.learner.infer(gathered), batch.offsets);
                for (std::size_t s = 0; s < cfg.disc_steps; ++s) {
                    Tape<float> tape;
                    ParamBinder<float> bind(tape);
                    HeadLosses<float> l = build_head_losses(tape, bind, nets, agg_f, agg_b,
                                                            batch, attr_classes, true, &drop_rng);
                    float obj = tape.scalar(l.disc_objective);
                    if (!std::isfinite(obj))
                        throw DivergenceError(cat("classifier objective became ", obj,
                                                  " at epoch ", epoch, " on modality ",
                                                  tbl.name));
                    tape.backward(l.disc_objective);
                    bind.harvest();
                    bind.step_all();
                }
            }
        }

        MonitorEval held = monitor_value();
        result.log["epochs"].push_back({{"epoch", epoch},
                                        {"recon", ep_recon / double(ep_users)},
                                        {"orth", ep_orth / double(ep_users)},
                                        {"disc_filtered", ep_df / double(ep_users)},
                                        {"disc_biased", ep_db / double(ep_users)},
                                        {"objective", ep_obj / double(ep_users)},
                                        {"holdout_objective", held.objective},
                                        {"holdout_recon", held.recon},
                                        {"holdout_orth", held.orth},
                                        {"holdout_disc_filtered", held.disc_filtered},
                                        {"holdout_disc_biased", held.disc_biased}});
        result.epochs_ran = epoch + 1;
        // The adversarial terms on held-out users are dominated by classifier
        // overfit noise, so model selection tracks only the representation
        // fidelity terms.
        double monitor = held.recon + cfg.lambda_orth * held.orth;
        if (monitor < best) {
            best = monitor;
            best_filter = snapshot(nets.filter);
            best_learner = snapshot(nets.learner);
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            log_info(cat("modality ", tbl.name, ": stopping after ", epoch + 1, " epochs (best ",
                         result.best_epoch, ")"));
            break;
        }
    }

    restore(nets.filter, best_filter);
    restore(nets.learner, best_learner);
    result.store.filtered = nets.filter.infer(tbl.features);
    result.store.biased = nets.learner.infer(tbl.features);
    result.skipped_users = skipped;
    result.log["best_epoch"] = result.best_epoch;
    result.log["epochs_ran"] = result.epochs_ran;
    return result;
}

Mat<float> history_mean(const Mat<float>& item_rows, const InteractionDataset& inter,
                        const std::vector<std::uint32_t>& users) {
    Mat<float> out(users.size(), item_rows.cols, 0.0f);
    for (std::size_t i = 0; i < users.size(); ++i) {
        if (users[i] >= inter.n_users)
            throw DataError(cat("user ", users[i], " out of range in history aggregation"));
        const auto& items = inter.train_items[users[i]];
        if (items.empty()) continue;
        float* dst = out.row_ptr(i);
        for (std::uint32_t v : items) {
            const float* src = item_rows.row_ptr(v);
            for (std::size_t c = 0; c < item_rows.cols; ++c) dst[c] += src[c];
        }
        for (std::size_t c = 0; c < item_rows.cols; ++c)
            dst[c] /= static_cast<float>(items.size());
    }
    return out;
}

std::pair<std::vector<float>, std::vector<float>> aggregate_user_modal(
    const DisentangledModalStore& store, const InteractionDataset& inter, std::uint32_t user) {
    if (user >= inter.n_users) throw DataError(cat("user ", user, " out of range"));
    if (inter.train_items[user].empty())
        throw DataError(cat("user ", user, " has no train history to aggregate"));
    Mat<float> f = history_mean(store.filtered, inter, {user});
    Mat<float> b = history_mean(store.biased, inter, {user});
    return {std::vector<float>(f.data.begin(), f.data.end()),
            std::vector<float>(b.data.begin(), b.data.end())};
}

void save_store(const DisentangledModalStore& store, const std::string& path) {
    if (!store.filtered.same_shape(store.biased))
        throw ShapeError("filtered and biased matrices must share a shape");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(cat("cannot open ", path, " for writing"));
    binio::write_magic(out, "FMD1");
    binio::write_u8(out, store.modality_id);
    binio::write_u32(out, static_cast<std::uint32_t>(store.filtered.rows));
    binio::write_u32(out, static_cast<std::uint32_t>(store.filtered.cols));
    binio::write_f32_data(out, store.filtered);
    binio::write_f32_data(out, store.biased);
    if (!out) throw DataError(cat("failed writing store ", path));
}

DisentangledModalStore load_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError(cat("modal store ", path, " not found"));
    binio::expect_magic(in, "FMD1", path);
    DisentangledModalStore store;
    store.modality_id = binio::read_u8(in, "modality id");
    std::uint32_t m = binio::read_u32(in, "item count");
    std::uint32_t d = binio::read_u32(in, "feature dim");
    store.filtered = Mat<float>(m, d);
    store.biased = Mat<float>(m, d);
    binio::read_f32_data(in, store.filtered, "filtered rows");
    binio::read_f32_data(in, store.biased, "biased rows");
    return store;
}

}  // namespace fmmrec
