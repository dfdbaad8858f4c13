#include "fmmrec/relations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fmmrec/common.hpp"

namespace fmmrec {

namespace {

struct Candidate {
    std::uint32_t id;
    double weight;
};

// Higher weight first; equal weights keep the smaller user id.
bool better(const Candidate& a, const Candidate& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.id < b.id;
}

}  // namespace

void validate_fusion_weights(const FusionWeights& w, std::size_t n_graphs) {
    if (w.alpha.size() != n_graphs)
        throw ConfigError(cat("fusion expects ", n_graphs, " weights, got ", w.alpha.size()));
    double sum = 0.0;
    for (float a : w.alpha) {
        if (!(a >= 0.0f)) throw ConfigError(cat("fusion weight ", a, " is negative"));
        sum += static_cast<double>(a);
    }
    if (std::fabs(sum - 1.0) > 1e-6)
        throw ConfigError(cat("fusion weights sum to ", sum, ", expected 1"));
}

SimilarityGraph build_similarity(const Mat<float>& user_aggregates, std::uint32_t k) {
    const std::size_t n = user_aggregates.rows;
    const std::size_t d = user_aggregates.cols;
    if (k < 1) throw ConfigError("neighbor count k must be at least 1");
    if (n == 0) throw ConfigError("similarity graph needs at least one user");
    if (k >= n) throw ConfigError(cat("neighbor count k=", k, " must be below the user count ", n));

    std::vector<double> norm(n, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        const float* row = user_aggregates.row_ptr(u);
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(row[c]) * row[c];
        norm[u] = std::sqrt(acc);
    }

    std::vector<std::vector<Candidate>> kept(n);
    for (std::size_t u = 0; u < n; ++u) {
        if (norm[u] == 0.0) continue;
        std::vector<Candidate> cands;
        const float* ru = user_aggregates.row_ptr(u);
        for (std::size_t v = 0; v < n; ++v) {
            if (v == u || norm[v] == 0.0) continue;
            const float* rv = user_aggregates.row_ptr(v);
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(ru[c]) * rv[c];
            double cosine = dot / (norm[u] * norm[v]);
            if (cosine > 0.0) cands.push_back({static_cast<std::uint32_t>(v), cosine});
        }
        if (cands.size() > k) {
            std::nth_element(cands.begin(), cands.begin() + k, cands.end(), better);
            cands.resize(k);
        }
        std::sort(cands.begin(), cands.end(),
                  [](const Candidate& a, const Candidate& b) { return a.id < b.id; });
        kept[u] = std::move(cands);
    }

    std::vector<double> degree(n, 0.0);
    for (std::size_t u = 0; u < n; ++u)
        for (const Candidate& c : kept[u]) degree[u] += c.weight;

    SimilarityGraph g;
    g.k = k;
    g.mode = "sym";
    g.adj = CsrMatrix<float>(n, n);
    for (std::size_t u = 0; u < n; ++u) {
        for (const Candidate& c : kept[u]) {
            if (degree[c.id] == 0.0) continue;
            double w = c.weight / std::sqrt(degree[u] * degree[c.id]);
            g.adj.indices.push_back(c.id);
            g.adj.weights.push_back(static_cast<float>(w));
        }
        g.adj.indptr[u + 1] = static_cast<std::uint32_t>(g.adj.indices.size());
    }
    return g;
}

SimilarityGraph fuse_graphs(const std::vector<SimilarityGraph>& graphs,
                            const FusionWeights& weights) {
    if (graphs.empty()) throw ConfigError("fusion needs at least one graph");
    validate_fusion_weights(weights, graphs.size());
    const std::size_t n = graphs[0].n_users();
    for (const SimilarityGraph& g : graphs)
        if (g.n_users() != n)
            throw ShapeError(cat("fusion over mismatched graphs: ", g.n_users(), " vs ", n));

    SimilarityGraph out;
    out.k = 0;
    for (const SimilarityGraph& g : graphs) out.k = std::max(out.k, g.k);
    out.mode = graphs[0].mode;
    out.adj = CsrMatrix<float>(n, n);

    std::vector<Candidate> row;
    for (std::size_t u = 0; u < n; ++u) {
        row.clear();
        for (std::size_t m = 0; m < graphs.size(); ++m) {
            const CsrMatrix<float>& a = graphs[m].adj;
            double alpha = weights.alpha[m];
            for (std::uint32_t e = a.indptr[u]; e < a.indptr[u + 1]; ++e)
                row.push_back({a.indices[e], alpha * a.weights[e]});
        }
        std::sort(row.begin(), row.end(),
                  [](const Candidate& a, const Candidate& b) { return a.id < b.id; });
        std::size_t i = 0;
        while (i < row.size()) {
            double w = row[i].weight;
            std::size_t j = i + 1;
            while (j < row.size() && row[j].id == row[i].id) w += row[j++].weight;
            if (w > 0.0) {
                out.adj.indices.push_back(row[i].id);
                out.adj.weights.push_back(static_cast<float>(w));
            }
            i = j;
        }
        out.adj.indptr[u + 1] = static_cast<std::uint32_t>(out.adj.indices.size());
    }
    return out;
}

Mat<float> neighbor_aggregate(const SimilarityGraph& graph, const Mat<float>& users) {
    const CsrMatrix<float>& a = graph.adj;
    if (a.cols != users.rows)
        throw ShapeError(cat("graph over ", a.cols, " users cannot aggregate a ", users.rows,
                             "-row matrix"));
    Mat<float> out(a.rows, users.cols, 0.0f);
    for (std::size_t u = 0; u < a.rows; ++u) {
        float* dst = out.row_ptr(u);
        for (std::uint32_t e = a.indptr[u]; e < a.indptr[u + 1]; ++e) {
            const float* src = users.row_ptr(a.indices[e]);
            float w = a.weights[e];
            for (std::size_t c = 0; c < users.cols; ++c) dst[c] += w * src[c];
        }
    }
    return out;
}

Mat<float> enhance_users(const Mat<float>& users, const Mat<float>& h_fair,
                         const Mat<float>& h_biased, double lambda_h) {
    if (!users.same_shape(h_fair) || !users.same_shape(h_biased))
        throw ShapeError("enhancement inputs must share the user matrix shape");
    Mat<float> out = users;
    float lam = static_cast<float>(lambda_h);
    for (std::size_t i = 0; i < out.size(); ++i) {
        float diff = h_fair.data[i] + -1.0f * h_biased.data[i];
        out.data[i] += lam * diff;
    }
    return out;
}

void save_graph(const SimilarityGraph& graph, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError(cat("cannot open ", path, " for writing"));
    out << graph.n_users() << ' ' << graph.k << ' ' << graph.mode << '\n';
    char buf[64];
    for (std::size_t u = 0; u < graph.n_users(); ++u) {
        std::uint32_t lo = graph.adj.indptr[u];
        std::uint32_t hi = graph.adj.indptr[u + 1];
        out << u << ' ' << (hi - lo);
        for (std::uint32_t e = lo; e < hi; ++e) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(graph.adj.weights[e]));
            out << ' ' << graph.adj.indices[e] << ':' << buf;
        }
        out << '\n';
    }
    if (!out) throw DataError(cat("failed writing graph file ", path));
}

SimilarityGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(cat("graph file ", path, " not found"));
    std::string header;
    if (!std::getline(in, header)) throw DataError(cat(path, ": missing graph header"));
    std::istringstream hs(header);
    std::size_t n = 0;
    SimilarityGraph g;
    if (!(hs >> n >> g.k >> g.mode))
        throw DataError(cat(path, ": malformed graph header \"", header, "\""));
    g.adj = CsrMatrix<float>(n, n);

    std::string line;
    for (std::size_t u = 0; u < n; ++u) {
        if (!std::getline(in, line))
            throw DataError(cat(path, ": expected ", n, " user rows, got ", u));
        std::istringstream ls(line);
        std::size_t id = 0, count = 0;
        if (!(ls >> id >> count) || id != u)
            throw DataError(cat(path, ":", u + 2, ": expected row for user ", u));
        std::uint32_t prev = 0;
        for (std::size_t e = 0; e < count; ++e) {
            std::string tok;
            if (!(ls >> tok)) throw DataError(cat(path, ":", u + 2, ": truncated neighbor list"));
            std::size_t colon = tok.find(':');
            if (colon == std::string::npos)
                throw DataError(cat(path, ":", u + 2, ": bad neighbor token \"", tok, "\""));
            std::uint32_t nb = 0;
            float w = 0.0f;
            try {
                nb = static_cast<std::uint32_t>(std::stoul(tok.substr(0, colon)));
                w = std::stof(tok.substr(colon + 1));
            } catch (const std::exception&) {
                throw DataError(cat(path, ":", u + 2, ": bad neighbor token \"", tok, "\""));
            }
            if (nb >= n) throw DataError(cat(path, ":", u + 2, ": neighbor ", nb, " out of range"));
            if (e > 0 && nb <= prev)
                throw DataError(cat(path, ":", u + 2, ": neighbor ids must increase"));
            if (!(w >= 0.0f) || !std::isfinite(w))
                throw DataError(cat(path, ":", u + 2, ": weight ", w, " must be finite and >= 0"));
            g.adj.indices.push_back(nb);
            g.adj.weights.push_back(w);
            prev = nb;
        }
        std::string extra;
        if (ls >> extra) throw DataError(cat(path, ":", u + 2, ": trailing content \"", extra, "\""));
        g.adj.indptr[u + 1] = static_cast<std::uint32_t>(g.adj.indices.size());
    }
    return g;
}

}  // namespace fmmrec
