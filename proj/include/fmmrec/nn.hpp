#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fmmrec/mat.hpp"
#include "fmmrec/tape.hpp"

namespace fmmrec {

template <typename S>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;
    Mat<S> m;
    Mat<S> v;
};

// A trainable parameter: current value, last harvested gradient, and its own
// optimizer slots.
template <typename S>
struct Param {
    std::string name;
    Mat<S> value;
    Mat<S> grad;
    AdamState<S> opt;

    Param() = default;
    Param(std::string n, std::size_t r, std::size_t c, double lr = 1e-3)
        : name(std::move(n)), value(r, c) {
        opt.lr = lr;
    }
};

// Standard bias-corrected Adam update in place. Moments are lazily allocated
// on the first step.
template <typename S>
void adam_step(Param<S>& p) {
    if (!p.grad.same_shape(p.value))
        throw ShapeError(cat("adam_step gradient shape mismatch for ", p.name));
    AdamState<S>& st = p.opt;
    if (st.m.size() == 0) {
        st.m = Mat<S>(p.value.rows, p.value.cols, S(0));
        st.v = Mat<S>(p.value.rows, p.value.cols, S(0));
    }
    st.step_count += 1;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        double g = static_cast<double>(p.grad.data[i]);
        double m = st.beta1 * double(st.m.data[i]) + (1.0 - st.beta1) * g;
        double v = st.beta2 * double(st.v.data[i]) + (1.0 - st.beta2) * g * g;
        st.m.data[i] = static_cast<S>(m);
        st.v.data[i] = static_cast<S>(v);
        p.value.data[i] -=
            static_cast<S>(st.lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps));
    }
}

// Binds parameters into a tape. Trainable bindings get their gradients copied
// back on harvest(); frozen bindings enter as constants so the optimizer
// partition of a min-max step is enforced by construction (gradient still
// flows through a frozen parameter to its inputs).
template <typename S>
class ParamBinder {
   public:
    explicit ParamBinder(Tape<S>& tape) : tape_(&tape) {}

    NodeId trainable(Param<S>& p) {
        for (auto& [pp, id] : bound_)
            if (pp == &p) return id;
        NodeId id = tape_->leaf(p.value);
        bound_.emplace_back(&p, id);
        return id;
    }

    NodeId frozen(const Param<S>& p) { return tape_->constant(p.value); }

    void harvest() {
        for (auto& [pp, id] : bound_) pp->grad = tape_->grad(id);
    }

    void step_all() {
        for (auto& [pp, id] : bound_) adam_step(*pp);
    }

   private:
    Tape<S>* tape_;
    std::vector<std::pair<Param<S>*, NodeId>> bound_;
};

// Two-layer perceptron: x -> LeakyReLU(x W1 + b1) [dropout] -> W2 + b2.
// Dropout sits after the hidden activation and only when train_mode is on.
template <typename S>
struct Mlp {
    Param<S> w1, b1, w2, b2;
    double slope = 0.01;
    double dropout_rate = 0.0;

    Mlp() = default;
    Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
        double lr = 1e-3, double drop = 0.0, double leaky_slope = 0.01)
        : w1(name + ".w1", in, hidden, lr),
          b1(name + ".b1", 1, hidden, lr),
          w2(name + ".w2", hidden, out, lr),
          b2(name + ".b2", 1, out, lr),
          slope(leaky_slope),
          dropout_rate(drop) {
        xavier_fill(w1.value, rng);
        xavier_fill(w2.value, rng);
    }

    std::size_t in_dim() const { return w1.value.rows; }
    std::size_t out_dim() const { return w2.value.cols; }

    std::vector<Param<S>*> params() {
        return {&w1, &b1, &w2, &b2};
    }
    std::vector<const Param<S>*> params() const {
        return {&w1, &b1, &w2, &b2};
    }

    NodeId apply(Tape<S>& tape, ParamBinder<S>& bind, NodeId x, bool trainable, bool train_mode,
                 Rng* rng) const {
        Mlp<S>& self = const_cast<Mlp<S>&>(*this);
        auto b = [&](Param<S>& p) { return trainable ? bind.trainable(p) : bind.frozen(p); };
        NodeId h = tape.add_rowvec(tape.matmul(x, b(self.w1)), b(self.b1));
        h = tape.leaky_relu(h, slope);
        if (train_mode && dropout_rate > 0.0) {
            if (!rng) throw ConfigError("dropout requires an RNG in train mode");
            h = tape.dropout(h, dropout_rate, *rng);
        }
        return tape.add_rowvec(tape.matmul(h, b(self.w2)), b(self.b2));
    }

    // Plain inference without a tape; used by evaluation paths.
    Mat<S> infer(const Mat<S>& x) const {
        Mat<S> h(x.rows, w1.value.cols, S(0));
        matmul_acc(x, w1.value, h);
        for (std::size_t r = 0; r < h.rows; ++r)
            for (std::size_t c = 0; c < h.cols; ++c) {
                S v = h(r, c) + b1.value(0, c);
                h(r, c) = v >= S(0) ? v : static_cast<S>(slope) * v;
            }
        Mat<S> out(x.rows, w2.value.cols, S(0));
        matmul_acc(h, w2.value, out);
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += b2.value(0, c);
        return out;
    }
};

template <typename SDst, typename SSrc>
Param<SDst> param_cast(const Param<SSrc>& p) {
    Param<SDst> out;
    out.name = p.name;
    out.value = mat_cast<SDst>(p.value);
    out.opt.lr = p.opt.lr;
    return out;
}

template <typename SDst, typename SSrc>
Mlp<SDst> mlp_cast(const Mlp<SSrc>& m) {
    Mlp<SDst> out;
    out.w1 = param_cast<SDst>(m.w1);
    out.b1 = param_cast<SDst>(m.b1);
    out.w2 = param_cast<SDst>(m.w2);
    out.b2 = param_cast<SDst>(m.b2);
    out.slope = m.slope;
    out.dropout_rate = m.dropout_rate;
    return out;
}

}  // namespace fmmrec
