#pragma once

#include <string>
#include <vector>

#include "fmmrec/mat.hpp"

namespace fmmrec {

// Sparse user-user similarity graph: per row at most k weighted neighbors,
// symmetrically normalized. Rows without surviving neighbors stay empty.
struct SimilarityGraph {
    std::uint32_t k = 0;
    std::string mode = "sym";
    CsrMatrix<float> adj;

    std::size_t n_users() const { return adj.rows; }
};

// Per-modality fusion coefficients; must be nonnegative and sum to 1.
struct FusionWeights {
    std::vector<float> alpha;
};

void validate_fusion_weights(const FusionWeights& w, std::size_t n_graphs);

// Builds a kNN graph from one user-aggregate matrix (one row per user):
// pairwise cosine, negatives clipped to zero, top-k per row by weight
// (ties broken toward the smaller user id, self excluded), then symmetric
// degree normalization over the sparsified adjacency. Entries whose
// neighbor ends up with zero out-degree cannot be normalized and are
// dropped; zero-norm aggregate rows produce no edges.
SimilarityGraph build_similarity(const Mat<float>& user_aggregates, std::uint32_t k);

// Entrywise weighted sum over the union sparsity pattern.
SimilarityGraph fuse_graphs(const std::vector<SimilarityGraph>& graphs,
                            const FusionWeights& weights);

// h_u = sum over stored neighbors of weight * users[neighbor]. Matches the
// accumulation order of the training-time sparse mix so recomputed
// representations reproduce checkpointed ones exactly.
Mat<float> neighbor_aggregate(const SimilarityGraph& graph, const Mat<float>& users);

// e_hat = users + lambda_h * (h_fair - h_biased).
Mat<float> enhance_users(const Mat<float>& users, const Mat<float>& h_fair,
                         const Mat<float>& h_biased, double lambda_h);

// Text format: header "N k mode", then one row per user:
// "user_id count neighbor:weight ...", weights with 9 significant digits.
void save_graph(const SimilarityGraph& graph, const std::string& path);
SimilarityGraph load_graph(const std::string& path);

}  // namespace fmmrec
