#pragma once

#include <string>
#include <vector>

#include "fmmrec/data.hpp"
#include "fmmrec/nn.hpp"

namespace fmmrec {

enum class BaseKind { MfBpr, VbprLite };

BaseKind base_kind_from_string(const std::string& s);
const char* to_string(BaseKind k);

// ID embedding tables for users and items, Xavier-initialized.
template <typename S>
struct EmbeddingStore {
    Param<S> users;
    Param<S> items;
    std::size_t dim = 0;

    EmbeddingStore() = default;
    EmbeddingStore(std::size_t n_users, std::size_t n_items, std::size_t d, Rng& rng, double lr)
        : users("emb.users", n_users, d, lr), items("emb.items", n_items, d, lr), dim(d) {
        xavier_fill(users.value, rng);
        xavier_fill(items.value, rng);
    }
};

// Per-modality linear maps d_m -> d whose projected features are summed onto
// the item ID embedding (the multimodal base).
template <typename S>
struct MultimodalProjector {
    std::vector<Param<S>> maps;

    MultimodalProjector() = default;
    MultimodalProjector(const std::vector<std::size_t>& modal_dims, std::size_t d, Rng& rng,
                        double lr) {
        for (std::size_t i = 0; i < modal_dims.size(); ++i) {
            maps.emplace_back(cat("proj.", i), modal_dims[i], d, lr);
            xavier_fill(maps.back().value, rng);
        }
    }
};

// mean over the batch of -log sigmoid(pos - neg)
template <typename S>
NodeId bpr_loss(Tape<S>& tape, NodeId pos_scores, NodeId neg_scores) {
    return tape.scale(tape.mean_all(tape.log_sigmoid(tape.sub(pos_scores, neg_scores))), -1.0);
}

// Inference-time view over final representation matrices.
struct Scorer {
    const Mat<float>* user_rep = nullptr;  // N x d
    const Mat<float>* item_rep = nullptr;  // M x d

    float score(std::uint32_t u, std::uint32_t v) const;
    // Items by descending score, ties broken by ascending id; items in
    // exclude (sorted) are skipped.
    std::vector<std::uint32_t> recommend_topk(std::uint32_t u, std::size_t k,
                                              const std::vector<std::uint32_t>* exclude) const;
};

// Per-user top-k lists for the whole population; row u is empty when the
// user has no train history (nothing to personalize on).
std::vector<std::vector<std::uint32_t>> rank_all(const Mat<float>& user_rep,
                                                 const Mat<float>& item_rep,
                                                 const InteractionDataset& ds, std::size_t k,
                                                 bool exclude_train);

// item ID embeddings plus the summed projected modal views
Mat<float> compose_item_rep(const Mat<float>& item_emb, const std::vector<Mat<float>>& modal_feats,
                            const std::vector<Param<float>>& proj);

struct BaseTrainConfig {
    std::size_t d = 64;
    double lr = 1e-3;
    std::size_t batch_size = 2048;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    std::size_t eval_k = 20;
    std::uint64_t seed = 0;
};

struct EpochLogEntry {
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_metric = 0.0;
};

struct BaseTrainResult {
    Mat<float> user_rep;  // final N x d
    Mat<float> item_rep;  // final M x d (modal views folded in)
    std::vector<Mat<float>> proj;
    std::vector<EpochLogEntry> log;
    std::size_t best_epoch = 0;
};

// BPR training of a base recommender; `modal_feats` feeds vbpr-lite and is
// ignored by mf-bpr. Early-stops on validation Recall@k.
BaseTrainResult train_base(const InteractionDataset& ds, const std::vector<Mat<float>>& modal_feats,
                           BaseKind kind, const BaseTrainConfig& cfg);

struct FmmrCheckpoint {
    Mat<float> user_emb;
    Mat<float> item_emb;
    std::vector<Mat<float>> proj;
};

void save_fmmr(const std::string& path, const FmmrCheckpoint& ckpt);
FmmrCheckpoint load_fmmr(const std::string& path);

}  // namespace fmmrec
