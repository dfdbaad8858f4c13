#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fmmrec/common.hpp"
#include "fmmrec/mat.hpp"

namespace fmmrec {

using NodeId = int;

enum class Op {
    Constant,
    Leaf,
    MatMul,
    AddScaled,
    AddRowVec,
    Scale,
    LeakyRelu,
    ClipMin,
    Sigmoid,
    LogSigmoid,
    Dropout,
    ConcatCols,
    GatherRows,
    SegmentMean,
    RowwiseDot,
    CosineRows,
    MeanAll,
    Bce,
    LogSoftmax,
    Nll,
    SparseMix,
};

// Reverse-mode autodiff tape. Forward values are computed eagerly as nodes
// are recorded; backward() walks the record once in reverse. A fresh tape is
// built for every optimization step.
template <typename S>
class Tape {
   public:
    struct Node {
        Op op;
        NodeId a = -1;
        NodeId b = -1;
        Mat<S> val;
        Mat<S> grad;
        bool needs_grad = false;
        double alpha = 0.0;                // slope / scale factor / keep probability
        std::vector<std::uint32_t> idx;    // gather indices, labels, segment members
        std::vector<std::uint32_t> off;    // segment offsets
        std::vector<S> mask;               // dropout mask
        const CsrMatrix<S>* csr = nullptr;
    };

    NodeId constant(Mat<S> v) { return push(Op::Constant, std::move(v), -1, -1, false); }

    // Differentiable input; the caller reads grad(id) back after backward().
    NodeId leaf(Mat<S> v) { return push(Op::Leaf, std::move(v), -1, -1, true); }

    NodeId matmul(NodeId a, NodeId b) {
        Mat<S> out(val(a).rows, val(b).cols, S(0));
        matmul_acc(val(a), val(b), out);
        return push(Op::MatMul, std::move(out), a, b);
    }

    NodeId add(NodeId a, NodeId b) { return add_scaled(a, b, 1.0); }
    NodeId sub(NodeId a, NodeId b) { return add_scaled(a, b, -1.0); }

    // a + beta * b, elementwise on same-shape matrices.
    NodeId add_scaled(NodeId a, NodeId b, double beta) {
        check_same_shape(a, b, "add_scaled");
        Mat<S> out = val(a);
        const Mat<S>& vb = val(b);
        S sbeta = static_cast<S>(beta);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += sbeta * vb.data[i];
        NodeId id = push(Op::AddScaled, std::move(out), a, b);
        nodes_[id].alpha = beta;
        return id;
    }

    // Broadcast-add a 1 x C row vector to every row of a.
    NodeId add_rowvec(NodeId a, NodeId v) {
        const Mat<S>& va = val(a);
        const Mat<S>& vv = val(v);
        if (vv.rows != 1 || vv.cols != va.cols)
            throw ShapeError(cat("add_rowvec expects 1x", va.cols, " bias, got ", vv.rows, "x",
                                 vv.cols));
        Mat<S> out = va;
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += vv(0, c);
        return push(Op::AddRowVec, std::move(out), a, v);
    }

    NodeId scale(NodeId a, double alpha) {
        Mat<S> out = val(a);
        for (S& x : out.data) x = static_cast<S>(alpha) * x;
        NodeId id = push(Op::Scale, std::move(out), a, -1);
        nodes_[id].alpha = alpha;
        return id;
    }

    NodeId leaky_relu(NodeId a, double slope) {
        Mat<S> out = val(a);
        S sl = static_cast<S>(slope);
        for (S& x : out.data)
            if (x < S(0)) x *= sl;
        NodeId id = push(Op::LeakyRelu, std::move(out), a, -1);
        nodes_[id].alpha = slope;
        return id;
    }

    // max(x, floor) elementwise; gradient passes only where x > floor.
    NodeId clip_min(NodeId a, double floor) {
        Mat<S> out = val(a);
        S f = static_cast<S>(floor);
        for (S& x : out.data) x = std::max(x, f);
        NodeId id = push(Op::ClipMin, std::move(out), a, -1);
        nodes_[id].alpha = floor;
        return id;
    }

    NodeId sigmoid(NodeId a) {
        Mat<S> out = val(a);
        for (S& x : out.data) x = S(1) / (S(1) + std::exp(-x));
        return push(Op::Sigmoid, std::move(out), a, -1);
    }

    NodeId log_sigmoid(NodeId a) {
        Mat<S> out = val(a);
        for (S& x : out.data) {
            double xv = static_cast<double>(x);
            x = static_cast<S>(xv < 0 ? xv - std::log1p(std::exp(xv)) : -std::log1p(std::exp(-xv)));
        }
        return push(Op::LogSigmoid, std::move(out), a, -1);
    }

    // Inverted dropout; surviving entries are scaled by 1/keep so inference
    // needs no rescaling. The mask is sampled here so each recorded step
    // draws fresh noise from the caller's stream.
    NodeId dropout(NodeId a, double drop_prob, Rng& rng) {
        if (drop_prob < 0.0 || drop_prob >= 1.0)
            throw ConfigError(cat("dropout probability out of range: ", drop_prob));
        Mat<S> out = val(a);
        std::vector<S> mask(out.size());
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        S keep_scale = static_cast<S>(1.0 / (1.0 - drop_prob));
        for (std::size_t i = 0; i < out.size(); ++i) {
            mask[i] = dist(rng) < drop_prob ? S(0) : keep_scale;
            out.data[i] *= mask[i];
        }
        NodeId id = push(Op::Dropout, std::move(out), a, -1);
        nodes_[id].mask = std::move(mask);
        return id;
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Mat<S>& va = val(a);
        const Mat<S>& vb = val(b);
        if (va.rows != vb.rows) throw ShapeError("concat_cols row mismatch");
        Mat<S> out(va.rows, va.cols + vb.cols);
        for (std::size_t r = 0; r < va.rows; ++r) {
            std::copy(va.row_ptr(r), va.row_ptr(r) + va.cols, out.row_ptr(r));
            std::copy(vb.row_ptr(r), vb.row_ptr(r) + vb.cols, out.row_ptr(r) + va.cols);
        }
        return push(Op::ConcatCols, std::move(out), a, b);
    }

    // out[i] = a[idx[i]]; duplicate indices accumulate gradient.
    NodeId gather_rows(NodeId a, std::vector<std::uint32_t> idx) {
        const Mat<S>& va = val(a);
        Mat<S> out(idx.size(), va.cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= va.rows) throw ShapeError(cat("gather_rows index ", idx[i], " out of range"));
            std::copy(va.row_ptr(idx[i]), va.row_ptr(idx[i]) + va.cols, out.row_ptr(i));
        }
        NodeId id = push(Op::GatherRows, std::move(out), a, -1);
        nodes_[id].idx = std::move(idx);
        return id;
    }

    // out[g] = mean over a[members[off[g]..off[g+1])]; empty groups give a
    // zero row and receive no gradient.
    NodeId segment_mean(NodeId a, std::vector<std::uint32_t> members,
                        std::vector<std::uint32_t> off) {
        const Mat<S>& va = val(a);
        if (off.empty() || off.back() != members.size())
            throw ShapeError("segment_mean offsets do not cover member list");
        std::size_t groups = off.size() - 1;
        Mat<S> out(groups, va.cols, S(0));
        for (std::size_t g = 0; g < groups; ++g) {
            std::uint32_t lo = off[g], hi = off[g + 1];
            if (hi == lo) continue;
            for (std::uint32_t e = lo; e < hi; ++e) {
                const S* src = va.row_ptr(members[e]);
                S* dst = out.row_ptr(g);
                for (std::size_t c = 0; c < va.cols; ++c) dst[c] += src[c];
            }
            S inv = S(1) / static_cast<S>(hi - lo);
            for (std::size_t c = 0; c < va.cols; ++c) out(g, c) *= inv;
        }
        NodeId id = push(Op::SegmentMean, std::move(out), a, -1);
        nodes_[id].idx = std::move(members);
        nodes_[id].off = std::move(off);
        return id;
    }

    // out[i,0] = <a_i, b_i>
    NodeId rowwise_dot(NodeId a, NodeId b) {
        check_same_shape(a, b, "rowwise_dot");
        const Mat<S>& va = val(a);
        const Mat<S>& vb = val(b);
        Mat<S> out(va.rows, 1, S(0));
        for (std::size_t r = 0; r < va.rows; ++r) {
            S acc = S(0);
            for (std::size_t c = 0; c < va.cols; ++c) acc += va(r, c) * vb(r, c);
            out(r, 0) = acc;
        }
        return push(Op::RowwiseDot, std::move(out), a, b);
    }

    // out[i,0] = cos(a_i, b_i); rows where either norm is zero produce 0 and
    // propagate no gradient.
    NodeId cosine_rows(NodeId a, NodeId b) {
        check_same_shape(a, b, "cosine_rows");
        const Mat<S>& va = val(a);
        const Mat<S>& vb = val(b);
        Mat<S> out(va.rows, 1, S(0));
        for (std::size_t r = 0; r < va.rows; ++r) {
            double na = 0, nb = 0, dot = 0;
            for (std::size_t c = 0; c < va.cols; ++c) {
                na += double(va(r, c)) * va(r, c);
                nb += double(vb(r, c)) * vb(r, c);
                dot += double(va(r, c)) * vb(r, c);
            }
            if (na > 0 && nb > 0) out(r, 0) = static_cast<S>(dot / (std::sqrt(na) * std::sqrt(nb)));
        }
        return push(Op::CosineRows, std::move(out), a, b);
    }

    NodeId mean_all(NodeId a) {
        const Mat<S>& va = val(a);
        if (va.size() == 0) throw ShapeError("mean_all of empty matrix");
        double acc = 0;
        for (S x : va.data) acc += static_cast<double>(x);
        Mat<S> out(1, 1);
        out(0, 0) = static_cast<S>(acc / static_cast<double>(va.size()));
        return push(Op::MeanAll, std::move(out), a, -1);
    }

    // Binary cross entropy, mean over all entries. p holds probabilities and
    // is clamped to [1e-7, 1 - 1e-7]; clamped entries get zero gradient.
    NodeId bce(NodeId p, NodeId y) {
        check_same_shape(p, y, "bce");
        const Mat<S>& vp = val(p);
        const Mat<S>& vy = val(y);
        double acc = 0;
        for (std::size_t i = 0; i < vp.size(); ++i) {
            double pi = clamp_prob(static_cast<double>(vp.data[i]));
            double yi = static_cast<double>(vy.data[i]);
            acc -= yi * std::log(pi) + (1.0 - yi) * std::log(1.0 - pi);
        }
        Mat<S> out(1, 1);
        out(0, 0) = static_cast<S>(acc / static_cast<double>(vp.size()));
        return push(Op::Bce, std::move(out), p, y);
    }

    NodeId log_softmax(NodeId a) {
        const Mat<S>& va = val(a);
        Mat<S> out(va.rows, va.cols);
        for (std::size_t r = 0; r < va.rows; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < va.cols; ++c) mx = std::max(mx, double(va(r, c)));
            double lse = 0;
            for (std::size_t c = 0; c < va.cols; ++c) lse += std::exp(double(va(r, c)) - mx);
            lse = mx + std::log(lse);
            for (std::size_t c = 0; c < va.cols; ++c) out(r, c) = static_cast<S>(double(va(r, c)) - lse);
        }
        return push(Op::LogSoftmax, std::move(out), a, -1);
    }

    // Mean negative log likelihood of per-row target classes over log
    // probabilities (pair with log_softmax).
    NodeId nll(NodeId logp, std::vector<std::uint32_t> labels) {
        const Mat<S>& vl = val(logp);
        if (labels.size() != vl.rows) throw ShapeError("nll label count mismatch");
        double acc = 0;
        for (std::size_t r = 0; r < vl.rows; ++r) {
            if (labels[r] >= vl.cols) throw ShapeError(cat("nll label ", labels[r], " out of range"));
            acc -= static_cast<double>(vl(r, labels[r]));
        }
        Mat<S> out(1, 1);
        out(0, 0) = static_cast<S>(acc / static_cast<double>(vl.rows));
        NodeId id = push(Op::Nll, std::move(out), logp, -1);
        nodes_[id].idx = std::move(labels);
        return id;
    }

    // out[i] = sum_e w_e * emb[col_e] over the CSR row row_ids[i]. The graph
    // itself is a fixed input; gradient flows only into emb.
    NodeId sparse_mix(const CsrMatrix<S>& graph, std::vector<std::uint32_t> row_ids, NodeId emb) {
        const Mat<S>& ve = val(emb);
        if (graph.cols != ve.rows) throw ShapeError("sparse_mix graph/embedding mismatch");
        Mat<S> out(row_ids.size(), ve.cols, S(0));
        for (std::size_t i = 0; i < row_ids.size(); ++i) {
            std::uint32_t r = row_ids[i];
            if (r >= graph.rows) throw ShapeError(cat("sparse_mix row ", r, " out of range"));
            for (std::uint32_t e = graph.indptr[r]; e < graph.indptr[r + 1]; ++e) {
                const S* src = ve.row_ptr(graph.indices[e]);
                S w = graph.weights[e];
                S* dst = out.row_ptr(i);
                for (std::size_t c = 0; c < ve.cols; ++c) dst[c] += w * src[c];
            }
        }
        NodeId id = push(Op::SparseMix, std::move(out), emb, -1);
        nodes_[id].idx = std::move(row_ids);
        nodes_[id].csr = &graph;
        return id;
    }

    const Mat<S>& val(NodeId id) const { return nodes_[id].val; }
    const Mat<S>& grad(NodeId id) const { return nodes_[id].grad; }
    S scalar(NodeId id) const {
        if (val(id).size() != 1) throw ShapeError("scalar() on non 1x1 node");
        return val(id)(0, 0);
    }
    std::size_t size() const { return nodes_.size(); }

    void backward(NodeId root) {
        if (val(root).size() != 1) throw ShapeError("backward root must be a 1x1 scalar");
        for (Node& n : nodes_)
            if (n.needs_grad) {
                n.grad = Mat<S>(n.val.rows, n.val.cols, S(0));
            }
        if (!nodes_[root].needs_grad) return;
        nodes_[root].grad(0, 0) = S(1);
        for (NodeId id = root; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            propagate(n);
        }
    }

   private:
    std::vector<Node> nodes_;

    static double clamp_prob(double p) { return std::min(1.0 - 1e-7, std::max(1e-7, p)); }

    NodeId push(Op op, Mat<S> v, NodeId a, NodeId b) {
        bool ng = (a >= 0 && nodes_[a].needs_grad) || (b >= 0 && nodes_[b].needs_grad);
        return push(op, std::move(v), a, b, ng);
    }

    NodeId push(Op op, Mat<S> v, NodeId a, NodeId b, bool needs_grad) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.val = std::move(v);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void check_same_shape(NodeId a, NodeId b, const char* what) const {
        if (!val(a).same_shape(val(b)))
            throw ShapeError(cat(what, " shape mismatch: ", val(a).rows, "x", val(a).cols, " vs ",
                                 val(b).rows, "x", val(b).cols));
    }

    Mat<S>* grad_of(NodeId id) {
        if (id < 0 || !nodes_[id].needs_grad) return nullptr;
        return &nodes_[id].grad;
    }

    void propagate(Node& n) {
        Mat<S>& g = n.grad;
        Mat<S>* ga = grad_of(n.a);
        Mat<S>* gb = grad_of(n.b);
        const Mat<S>* va = n.a >= 0 ? &nodes_[n.a].val : nullptr;
        const Mat<S>* vb = n.b >= 0 ? &nodes_[n.b].val : nullptr;
        switch (n.op) {
            case Op::Constant:
            case Op::Leaf:
                break;
            case Op::MatMul:
                if (ga) matmul_a_bt_acc(g, *vb, *ga);
                if (gb) matmul_at_b_acc(*va, g, *gb);
                break;
            case Op::AddScaled: {
                if (ga)
                    for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
                if (gb) {
                    S beta = static_cast<S>(n.alpha);
                    for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] += beta * g.data[i];
                }
                break;
            }
            case Op::AddRowVec:
                if (ga)
                    for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
                if (gb)
                    for (std::size_t r = 0; r < g.rows; ++r)
                        for (std::size_t c = 0; c < g.cols; ++c) (*gb)(0, c) += g(r, c);
                break;
            case Op::Scale:
                if (ga) {
                    S al = static_cast<S>(n.alpha);
                    for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += al * g.data[i];
                }
                break;
            case Op::LeakyRelu:
                if (ga) {
                    S sl = static_cast<S>(n.alpha);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga->data[i] += (va->data[i] >= S(0) ? g.data[i] : sl * g.data[i]);
                }
                break;
            case Op::ClipMin:
                if (ga) {
                    S f = static_cast<S>(n.alpha);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (va->data[i] > f) ga->data[i] += g.data[i];
                }
                break;
            case Op::Sigmoid:
                if (ga)
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        S s = n.val.data[i];
                        ga->data[i] += g.data[i] * s * (S(1) - s);
                    }
                break;
            case Op::LogSigmoid:
                if (ga)
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        double x = static_cast<double>(va->data[i]);
                        ga->data[i] += g.data[i] * static_cast<S>(1.0 / (1.0 + std::exp(x)));
                    }
                break;
            case Op::Dropout:
                if (ga)
                    for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * n.mask[i];
                break;
            case Op::ConcatCols:
                if (ga || gb) {
                    std::size_t ca = va->cols;
                    for (std::size_t r = 0; r < g.rows; ++r) {
                        if (ga)
                            for (std::size_t c = 0; c < ca; ++c) (*ga)(r, c) += g(r, c);
                        if (gb)
                            for (std::size_t c = 0; c < vb->cols; ++c)
                                (*gb)(r, c) += g(r, ca + c);
                    }
                }
                break;
            case Op::GatherRows:
                if (ga)
                    for (std::size_t i = 0; i < n.idx.size(); ++i)
                        for (std::size_t c = 0; c < g.cols; ++c)
                            (*ga)(n.idx[i], c) += g(i, c);
                break;
            case Op::SegmentMean:
                if (ga)
                    for (std::size_t grp = 0; grp + 1 < n.off.size(); ++grp) {
                        std::uint32_t lo = n.off[grp], hi = n.off[grp + 1];
                        if (hi == lo) continue;
                        S inv = S(1) / static_cast<S>(hi - lo);
                        for (std::uint32_t e = lo; e < hi; ++e)
                            for (std::size_t c = 0; c < g.cols; ++c)
                                (*ga)(n.idx[e], c) += g(grp, c) * inv;
                    }
                break;
            case Op::RowwiseDot:
                for (std::size_t r = 0; r < va->rows; ++r) {
                    S gr = g(r, 0);
                    for (std::size_t c = 0; c < va->cols; ++c) {
                        if (ga) (*ga)(r, c) += gr * (*vb)(r, c);
                        if (gb) (*gb)(r, c) += gr * (*va)(r, c);
                    }
                }
                break;
            case Op::CosineRows:
                for (std::size_t r = 0; r < va->rows; ++r) {
                    double na = 0, nb2 = 0, dot = 0;
                    for (std::size_t c = 0; c < va->cols; ++c) {
                        na += double((*va)(r, c)) * (*va)(r, c);
                        nb2 += double((*vb)(r, c)) * (*vb)(r, c);
                        dot += double((*va)(r, c)) * (*vb)(r, c);
                    }
                    if (na <= 0 || nb2 <= 0) continue;
                    double inv_na = 1.0 / std::sqrt(na), inv_nb = 1.0 / std::sqrt(nb2);
                    double y = dot * inv_na * inv_nb;
                    double gr = static_cast<double>(g(r, 0));
                    for (std::size_t c = 0; c < va->cols; ++c) {
                        double av = (*va)(r, c), bv = (*vb)(r, c);
                        if (ga)
                            (*ga)(r, c) += static_cast<S>(gr * (bv * inv_na * inv_nb - y * av / na));
                        if (gb)
                            (*gb)(r, c) += static_cast<S>(gr * (av * inv_na * inv_nb - y * bv / nb2));
                    }
                }
                break;
            case Op::MeanAll:
                if (ga) {
                    S gv = g(0, 0) / static_cast<S>(va->size());
                    for (std::size_t i = 0; i < ga->size(); ++i) ga->data[i] += gv;
                }
                break;
            case Op::Bce:
                if (ga) {
                    S gv = g(0, 0) / static_cast<S>(va->size());
                    for (std::size_t i = 0; i < va->size(); ++i) {
                        double p = static_cast<double>(va->data[i]);
                        if (p < 1e-7 || p > 1.0 - 1e-7) continue;
                        double y = static_cast<double>(vb->data[i]);
                        ga->data[i] += gv * static_cast<S>((p - y) / (p * (1.0 - p)));
                    }
                }
                break;
            case Op::LogSoftmax:
                if (ga)
                    for (std::size_t r = 0; r < g.rows; ++r) {
                        double rowsum = 0;
                        for (std::size_t c = 0; c < g.cols; ++c) rowsum += double(g(r, c));
                        for (std::size_t c = 0; c < g.cols; ++c)
                            (*ga)(r, c) += g(r, c) -
                                           static_cast<S>(std::exp(double(n.val(r, c))) * rowsum);
                    }
                break;
            case Op::Nll:
                if (ga) {
                    S gv = g(0, 0) / static_cast<S>(va->rows);
                    for (std::size_t r = 0; r < va->rows; ++r) (*ga)(r, n.idx[r]) -= gv;
                }
                break;
            case Op::SparseMix:
                if (ga)
                    for (std::size_t i = 0; i < n.idx.size(); ++i) {
                        std::uint32_t r = n.idx[i];
                        for (std::uint32_t e = n.csr->indptr[r]; e < n.csr->indptr[r + 1]; ++e) {
                            S w = n.csr->weights[e];
                            S* dst = ga->row_ptr(n.csr->indices[e]);
                            for (std::size_t c = 0; c < g.cols; ++c) dst[c] += w * g(i, c);
                        }
                    }
                break;
        }
    }
};

}  // namespace fmmrec
