#include "fmmrec/recommender.hpp"

#include <algorithm>
#include <numeric>

#include "fmmrec/binio.hpp"
#include "fmmrec/eval.hpp"

namespace fmmrec {

BaseKind base_kind_from_string(const std::string& s) {
    if (s == "mf-bpr") return BaseKind::MfBpr;
    if (s == "vbpr-lite") return BaseKind::VbprLite;
    throw ConfigError(cat("unknown base recommender '", s, "' (want mf-bpr or vbpr-lite)"));
}

const char* to_string(BaseKind k) {
    return k == BaseKind::MfBpr ? "mf-bpr" : "vbpr-lite";
}

float Scorer::score(std::uint32_t u, std::uint32_t v) const {
    if (u >= user_rep->rows || v >= item_rep->rows)
        throw DataError(cat("score: id out of range (u=", u, ", v=", v, ")"));
    double acc = 0;
    for (std::size_t c = 0; c < user_rep->cols; ++c)
        acc += double((*user_rep)(u, c)) * double((*item_rep)(v, c));
    return static_cast<float>(acc);
}

std::vector<std::uint32_t> Scorer::recommend_topk(
    std::uint32_t u, std::size_t k, const std::vector<std::uint32_t>* exclude) const {
    if (k == 0) throw ConfigError("recommend_topk requires k >= 1");
    if (u >= user_rep->rows) throw DataError(cat("recommend_topk: user ", u, " out of range"));
    std::size_t m = item_rep->rows;
    std::vector<float> scores(m);
    const float* urow = user_rep->row_ptr(u);
    for (std::size_t v = 0; v < m; ++v) {
        const float* irow = item_rep->row_ptr(v);
        double acc = 0;
        for (std::size_t c = 0; c < item_rep->cols; ++c) acc += double(urow[c]) * double(irow[c]);
        scores[v] = static_cast<float>(acc);
    }
    std::vector<std::uint32_t> cand;
    cand.reserve(m);
    for (std::uint32_t v = 0; v < m; ++v) {
        if (exclude && std::binary_search(exclude->begin(), exclude->end(), v)) continue;
        cand.push_back(v);
    }
    std::size_t kk = std::min(k, cand.size());
    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(cand.begin(), cand.begin() + kk, cand.end(), better);
    cand.resize(kk);
    return cand;
}

std::vector<std::vector<std::uint32_t>> rank_all(const Mat<float>& user_rep,
                                                 const Mat<float>& item_rep,
                                                 const InteractionDataset& ds, std::size_t k,
                                                 bool exclude_train) {
    Scorer sc{&user_rep, &item_rep};
    std::vector<std::vector<std::uint32_t>> out(ds.n_users);
    for (std::uint32_t u = 0; u < ds.n_users; ++u) {
        if (ds.train_items[u].empty()) continue;
        out[u] = sc.recommend_topk(u, k, exclude_train ? &ds.train_items[u] : nullptr);
    }
    return out;
}

Mat<float> compose_item_rep(const Mat<float>& item_emb, const std::vector<Mat<float>>& modal_feats,
                            const std::vector<Param<float>>& proj) {
    Mat<float> rep = item_emb;
    if (modal_feats.size() != proj.size())
        throw ShapeError("compose_item_rep: modality/projector count mismatch");
    for (std::size_t m = 0; m < proj.size(); ++m) matmul_acc(modal_feats[m], proj[m].value, rep);
    return rep;
}

BaseTrainResult train_base(const InteractionDataset& ds, const std::vector<Mat<float>>& modal_feats,
                           BaseKind kind, const BaseTrainConfig& cfg) {
    if (cfg.d == 0 || cfg.batch_size == 0 || cfg.max_epochs == 0)
        throw ConfigError("train_base: d, batch_size and max_epochs must be positive");
    bool multimodal = kind == BaseKind::VbprLite;
    if (multimodal && modal_feats.empty())
        throw ConfigError("vbpr-lite needs at least one modal feature table");

    Rng init_rng(derive_seed(cfg.seed, kSeedInit));
    EmbeddingStore<float> store(ds.n_users, ds.n_items, cfg.d, init_rng, cfg.lr);
    std::vector<std::size_t> mdims;
    for (const auto& f : modal_feats) mdims.push_back(f.cols);
    MultimodalProjector<float> projector(multimodal ? mdims : std::vector<std::size_t>{}, cfg.d,
                                         init_rng, cfg.lr);

    std::size_t n_train = ds.split_count(Split::train);
    std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    Rng sample_rng(derive_seed(cfg.seed, kSeedSampling));

    auto item_rep_now = [&]() {
        return multimodal ? compose_item_rep(store.items.value, modal_feats, projector.maps)
                          : store.items.value;
    };
    auto validate = [&]() {
        Mat<float> irep = item_rep_now();
        auto ranked = rank_all(store.users.value, irep, ds, cfg.eval_k, true);
        return ranking_metrics(ranked, ds.valid_items, cfg.eval_k).recall;
    };

    BaseTrainResult res;
    double best_val = -1.0;
    std::size_t best_epoch = 0;
    Mat<float> best_users, best_items;
    std::vector<Mat<float>> best_proj;
    auto snapshot = [&]() {
        best_users = store.users.value;
        best_items = store.items.value;
        best_proj.clear();
        for (const auto& p : projector.maps) best_proj.push_back(p.value);
    };
    snapshot();

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        double epoch_loss = 0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            TrainBatch batch = sample_batch(ds, std::min(cfg.batch_size, n_train), sample_rng);
            Tape<float> tape;
            ParamBinder<float> bind(tape);
            NodeId u = tape.gather_rows(bind.trainable(store.users), batch.users);
            NodeId ipos = tape.gather_rows(bind.trainable(store.items), batch.pos_items);
            NodeId ineg = tape.gather_rows(bind.trainable(store.items), batch.neg_items);
            if (multimodal) {
                for (std::size_t m = 0; m < modal_feats.size(); ++m) {
                    Mat<float> fpos(batch.size(), modal_feats[m].cols);
                    Mat<float> fneg(batch.size(), modal_feats[m].cols);
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        std::copy(modal_feats[m].row_ptr(batch.pos_items[i]),
                                  modal_feats[m].row_ptr(batch.pos_items[i]) + modal_feats[m].cols,
                                  fpos.row_ptr(i));
                        std::copy(modal_feats[m].row_ptr(batch.neg_items[i]),
                                  modal_feats[m].row_ptr(batch.neg_items[i]) + modal_feats[m].cols,
                                  fneg.row_ptr(i));
                    }
                    NodeId w = bind.trainable(projector.maps[m]);
                    ipos = tape.add(ipos, tape.matmul(tape.constant(std::move(fpos)), w));
                    ineg = tape.add(ineg, tape.matmul(tape.constant(std::move(fneg)), w));
                }
            }
            NodeId loss = bpr_loss(tape, tape.rowwise_dot(u, ipos), tape.rowwise_dot(u, ineg));
            double lv = tape.scalar(loss);
            if (!std::isfinite(lv)) throw DivergenceError("base recommender loss became non-finite");
            epoch_loss += lv;
            tape.backward(loss);
            bind.harvest();
            bind.step_all();
        }
        epoch_loss /= static_cast<double>(steps_per_epoch);

        double val = validate();
        res.log.push_back({epoch, epoch_loss, val});
        log_debug("base epoch ", epoch, " loss=", epoch_loss, " val_recall=", val);
        if (val > best_val + 1e-9) {
            best_val = val;
            best_epoch = epoch;
            snapshot();
        } else if (epoch - best_epoch >= cfg.patience) {
            break;
        }
    }

    store.users.value = best_users;
    store.items.value = best_items;
    for (std::size_t m = 0; m < projector.maps.size(); ++m)
        projector.maps[m].value = best_proj[m];
    res.best_epoch = best_epoch;
    res.user_rep = store.users.value;
    res.item_rep = item_rep_now();
    for (const auto& p : projector.maps) res.proj.push_back(p.value);
    return res;
}

void save_fmmr(const std::string& path, const FmmrCheckpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(cat("cannot write ", path));
    binio::write_magic(out, "FMMR");
    binio::write_u32(out, 1);
    binio::write_u32(out, static_cast<std::uint32_t>(ckpt.user_emb.rows));
    binio::write_u32(out, static_cast<std::uint32_t>(ckpt.item_emb.rows));
    binio::write_u32(out, static_cast<std::uint32_t>(ckpt.user_emb.cols));
    binio::write_f32_data(out, ckpt.user_emb);
    binio::write_f32_data(out, ckpt.item_emb);
    binio::write_u32(out, static_cast<std::uint32_t>(ckpt.proj.size()));
    for (const auto& p : ckpt.proj) {
        binio::write_u32(out, static_cast<std::uint32_t>(8 + p.size() * sizeof(float)));
        binio::write_u32(out, static_cast<std::uint32_t>(p.rows));
        binio::write_u32(out, static_cast<std::uint32_t>(p.cols));
        binio::write_f32_data(out, p);
    }
    if (!out) throw DataError(cat("short write to ", path));
}

FmmrCheckpoint load_fmmr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError(cat("cannot open checkpoint ", path));
    binio::expect_magic(in, "FMMR", path);
    std::uint32_t version = binio::read_u32(in, "version");
    if (version != 1)
        throw DataError(cat(path, ": unsupported checkpoint version ", version));
    std::uint32_t n = binio::read_u32(in, "N");
    std::uint32_t m = binio::read_u32(in, "M");
    std::uint32_t d = binio::read_u32(in, "d");
    FmmrCheckpoint ckpt;
    ckpt.user_emb = Mat<float>(n, d);
    ckpt.item_emb = Mat<float>(m, d);
    binio::read_f32_data(in, ckpt.user_emb, "user matrix");
    binio::read_f32_data(in, ckpt.item_emb, "item matrix");
    std::uint32_t blocks = binio::read_u32(in, "projector count");
    for (std::uint32_t b = 0; b < blocks; ++b) {
        std::uint32_t len = binio::read_u32(in, "block length");
        std::uint32_t rows = binio::read_u32(in, "block rows");
        std::uint32_t cols = binio::read_u32(in, "block cols");
        if (len != 8 + rows * cols * sizeof(float))
            throw DataError(cat(path, ": projector block length mismatch"));
        Mat<float> p(rows, cols);
        binio::read_f32_data(in, p, "projector block");
        ckpt.proj.push_back(std::move(p));
    }
    return ckpt;
}

}  // namespace fmmrec
