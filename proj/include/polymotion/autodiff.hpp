#pragma once

// Reverse-mode automatic differentiation over row-major Eigen matrices.
//
// A Tape records every operation of one forward pass. Values live in the
// tape; parameters are referenced (not copied) and their gradients are
// accumulated into caller-owned sinks during backward(). Sequences are
// stacked along rows; `Segments` tells the sequence-aware ops (attention,
// modulation, pooling, positional tables) where each sequence begins.

#include "polymotion/common.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace polymotion::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

struct Segments {
    std::vector<int> start;
    std::vector<int> length;

    int count() const { return static_cast<int>(start.size()); }
    int total_rows() const {
        int n = 0;
        for (int l : length) n += l;
        return n;
    }
    void push(int len) {
        start.push_back(total_rows());
        length.push_back(len);
    }
    static Segments uniform(int count, int len) {
        Segments s;
        for (int i = 0; i < count; ++i) s.push(len);
        return s;
    }
};

/// (source index, row) pair for gather_rows.
struct RowRef {
    int source;
    int row;
};

template <typename T>
class Tape {
public:
    using M = MatT<T>;

    Var constant(M value) { return push(std::move(value), false); }

    /// Refers to `value` (must outlive the tape). Gradients accumulate into
    /// `*grad_sink` when it is non-null; a null sink marks the value frozen.
    Var parameter(const M& value, M* grad_sink) {
        Node n;
        n.ext = &value;
        n.sink = grad_sink;
        n.needs_grad = grad_sink != nullptr;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    /// Differentiable input without a sink; read its gradient with grad().
    Var input(M value) { return push(std::move(value), true); }

    const M& value(Var v) const {
        const Node& n = nodes_[v.id];
        return n.ext ? *n.ext : n.own;
    }

    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    /// Gradient after backward(); zero matrix when nothing reached the node.
    M grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.has_grad) return n.grad;
        const M& val = value(v);
        return M::Zero(val.rows(), val.cols());
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(Var out, const M& seed) {
        Node& root = nodes_[out.id];
        const M& val = value(out);
        if (seed.rows() != val.rows() || seed.cols() != val.cols())
            throw InvalidArgument("backward: seed shape mismatch");
        if (!root.needs_grad) return;
        root.grad = seed;
        root.has_grad = true;
        for (int id = out.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.has_grad) continue;
            if (n.sink) {
                if (n.sink->size() == 0) *n.sink = M::Zero(n.grad.rows(), n.grad.cols());
                *n.sink += n.grad;
            }
            if (n.back) n.back(n.grad);
        }
    }

    void backward(Var scalar_out) { backward(scalar_out, M::Constant(1, 1, T(1))); }

    // ---------------------------------------------------------------- ops

    Var matmul(Var a, Var b) {
        M out = value(a) * value(b);
        return record(std::move(out), {a, b}, [this, a, b](const M& g) {
            if (needs_grad(a)) acc(a, g * value(b).transpose());
            if (needs_grad(b)) acc(b, value(a).transpose() * g);
        });
    }

    /// x * W + b, with b a 1 x out row (optional).
    Var linear(Var x, Var w, Var b = {}) {
        M out = value(x) * value(w);
        if (b.valid()) out.rowwise() += value(b).row(0);
        std::vector<Var> ins{x, w};
        if (b.valid()) ins.push_back(b);
        return record(std::move(out), ins, [this, x, w, b](const M& g) {
            if (needs_grad(x)) acc(x, g * value(w).transpose());
            if (needs_grad(w)) acc(w, value(x).transpose() * g);
            if (b.valid() && needs_grad(b)) acc(b, g.colwise().sum());
        });
    }

    /// a * b^T
    Var matmul_nt(Var a, Var b) {
        M out = value(a) * value(b).transpose();
        return record(std::move(out), {a, b}, [this, a, b](const M& g) {
            if (needs_grad(a)) acc(a, g * value(b));
            if (needs_grad(b)) acc(b, g.transpose() * value(a));
        });
    }

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        M out = value(a) + value(b);
        return record(std::move(out), {a, b}, [this, a, b](const M& g) {
            if (needs_grad(a)) acc(a, g);
            if (needs_grad(b)) acc(b, g);
        });
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        M out = value(a) - value(b);
        return record(std::move(out), {a, b}, [this, a, b](const M& g) {
            if (needs_grad(a)) acc(a, g);
            if (needs_grad(b)) acc(b, -g);
        });
    }

    Var scale(Var a, T s) {
        M out = value(a) * s;
        return record(std::move(out), {a}, [this, a, s](const M& g) { acc(a, g * s); });
    }

    /// Adds the 1 x C row `v` to every row of `a`.
    Var add_row(Var a, Var v) {
        M out = value(a);
        out.rowwise() += value(v).row(0);
        return record(std::move(out), {a, v}, [this, a, v](const M& g) {
            if (needs_grad(a)) acc(a, g);
            if (needs_grad(v)) acc(v, g.colwise().sum());
        });
    }

    /// Row r of segment s gets per_segment.row(s) added.
    Var add_segment_rows(Var a, Var per_segment, const Segments& segs) {
        M out = value(a);
        const M& s = value(per_segment);
        for (int i = 0; i < segs.count(); ++i)
            out.middleRows(segs.start[i], segs.length[i]).rowwise() += s.row(i);
        return record(std::move(out), {a, per_segment}, [this, a, per_segment, segs](const M& g) {
            if (needs_grad(a)) acc(a, g);
            if (needs_grad(per_segment)) {
                M gs(segs.count(), g.cols());
                for (int i = 0; i < segs.count(); ++i)
                    gs.row(i) = g.middleRows(segs.start[i], segs.length[i]).colwise().sum();
                acc(per_segment, gs);
            }
        });
    }

    /// Row at offset i within its segment gets table.row(i) added.
    Var add_positions(Var a, Var table, const Segments& segs) {
        M out = value(a);
        const M& p = value(table);
        for (int i = 0; i < segs.count(); ++i) {
            if (segs.length[i] > p.rows()) throw InvalidArgument("add_positions: sequence longer than table");
            out.middleRows(segs.start[i], segs.length[i]) += p.topRows(segs.length[i]);
        }
        return record(std::move(out), {a, table}, [this, a, table, segs](const M& g) {
            if (needs_grad(a)) acc(a, g);
            if (needs_grad(table)) {
                M gp = M::Zero(value(table).rows(), value(table).cols());
                for (int i = 0; i < segs.count(); ++i)
                    gp.topRows(segs.length[i]) += g.middleRows(segs.start[i], segs.length[i]);
                acc(table, gp);
            }
        });
    }

    /// h * (1 + scale_s) + shift_s, with scale/shift holding one row per segment.
    Var modulate(Var h, Var scale, Var shift, const Segments& segs) {
        const M& hv = value(h);
        const M& sc = value(scale);
        const M& sh = value(shift);
        M out(hv.rows(), hv.cols());
        for (int i = 0; i < segs.count(); ++i) {
            auto rows = out.middleRows(segs.start[i], segs.length[i]);
            const auto one_plus = (sc.row(i).array() + T(1)).matrix();
            rows = hv.middleRows(segs.start[i], segs.length[i]) * one_plus.asDiagonal();
            rows.rowwise() += sh.row(i);
        }
        return record(std::move(out), {h, scale, shift}, [this, h, scale, shift, segs](const M& g) {
            const M& hv = value(h);
            const M& sc = value(scale);
            M gh, gsc, gsh;
            if (needs_grad(h)) gh.resize(hv.rows(), hv.cols());
            if (needs_grad(scale)) gsc.resize(sc.rows(), sc.cols());
            if (needs_grad(shift)) gsh.resize(sc.rows(), sc.cols());
            for (int i = 0; i < segs.count(); ++i) {
                const auto gseg = g.middleRows(segs.start[i], segs.length[i]);
                if (gh.size()) {
                    const auto one_plus = (sc.row(i).array() + T(1)).matrix();
                    gh.middleRows(segs.start[i], segs.length[i]) = gseg * one_plus.asDiagonal();
                }
                if (gsc.size())
                    gsc.row(i) =
                        gseg.cwiseProduct(hv.middleRows(segs.start[i], segs.length[i])).colwise().sum();
                if (gsh.size()) gsh.row(i) = gseg.colwise().sum();
            }
            if (gh.size()) acc(h, gh);
            if (gsc.size()) acc(scale, gsc);
            if (gsh.size()) acc(shift, gsh);
        });
    }

    /// Per-row normalisation without affine parameters.
    Var layer_norm(Var x, T eps = T(1e-5)) {
        const M& xv = value(x);
        const auto cols = xv.cols();
        M out(xv.rows(), cols);
        M inv_std(xv.rows(), 1);
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            const T mean = xv.row(r).mean();
            const auto centered = (xv.row(r).array() - mean);
            const T var = centered.square().sum() / static_cast<T>(cols);
            const T is = T(1) / std::sqrt(var + eps);
            inv_std(r, 0) = is;
            out.row(r) = (centered * is).matrix();
        }
        return record(out, {x}, [this, x, out, inv_std](const M& g) {
            const auto cols = static_cast<T>(out.cols());
            M gx(out.rows(), out.cols());
            for (Eigen::Index r = 0; r < out.rows(); ++r) {
                const auto y = out.row(r).array();
                const auto gr = g.row(r).array();
                const T mg = gr.sum() / cols;
                const T mgy = (gr * y).sum() / cols;
                gx.row(r) = ((gr - mg - y * mgy) * inv_std(r, 0)).matrix();
            }
            acc(x, gx);
        });
    }

    Var silu(Var x) {
        const M& xv = value(x);
        M sig = (T(1) / (T(1) + (-xv.array()).exp())).matrix();
        M out = xv.cwiseProduct(sig);
        return record(std::move(out), {x}, [this, x, sig](const M& g) {
            const auto s = sig.array();
            const auto xv = value(x).array();
            acc(x, (g.array() * (s * (T(1) + xv * (T(1) - s)))).matrix());
        });
    }

    /// tanh approximation.
    Var gelu(Var x) {
        const M& xv = value(x);
        const T c = static_cast<T>(std::sqrt(2.0 / M_PI));
        const T k = T(0.044715);
        M th = (c * (xv.array() + k * xv.array().cube())).tanh().matrix();
        M out = (T(0.5) * xv.array() * (T(1) + th.array())).matrix();
        return record(std::move(out), {x}, [this, x, th, c, k](const M& g) {
            const auto xa = value(x).array();
            const auto t = th.array();
            const auto d = T(0.5) * (T(1) + t) + T(0.5) * xa * (T(1) - t * t) * c * (T(1) + T(3) * k * xa * xa);
            acc(x, (g.array() * d).matrix());
        });
    }

    /// Multi-head scaled dot-product attention within each segment (no mask).
    Var attention(Var q, Var k, Var v, const Segments& segs, int heads) {
        const M& qv = value(q);
        const M& kv = value(k);
        const M& vv = value(v);
        const int width = static_cast<int>(qv.cols());
        if (heads < 1 || width % heads != 0) throw InvalidArgument("attention: width must divide into heads");
        if (segs.total_rows() != qv.rows()) throw InvalidArgument("attention: segments do not cover rows");
        const int dh = width / heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        M out(qv.rows(), width);
        auto probs = std::make_shared<std::vector<M>>();
        probs->reserve(static_cast<std::size_t>(segs.count() * heads));
        for (int s = 0; s < segs.count(); ++s) {
            const int st = segs.start[s], len = segs.length[s];
            for (int h = 0; h < heads; ++h) {
                M scores = qv.block(st, h * dh, len, dh) * kv.block(st, h * dh, len, dh).transpose() * scale;
                for (int r = 0; r < len; ++r) {
                    const T mx = scores.row(r).maxCoeff();
                    scores.row(r) = (scores.row(r).array() - mx).exp().matrix();
                    scores.row(r) /= scores.row(r).sum();
                }
                out.block(st, h * dh, len, dh) = scores * vv.block(st, h * dh, len, dh);
                probs->push_back(std::move(scores));
            }
        }
        return record(std::move(out), {q, k, v}, [this, q, k, v, segs, heads, dh, scale, probs](const M& g) {
            const M& qv = value(q);
            const M& kv = value(k);
            const M& vv = value(v);
            M gq = M::Zero(qv.rows(), qv.cols());
            M gk = M::Zero(kv.rows(), kv.cols());
            M gv = M::Zero(vv.rows(), vv.cols());
            std::size_t idx = 0;
            for (int s = 0; s < segs.count(); ++s) {
                const int st = segs.start[s], len = segs.length[s];
                for (int h = 0; h < heads; ++h, ++idx) {
                    const M& P = (*probs)[idx];
                    const auto go = g.block(st, h * dh, len, dh);
                    gv.block(st, h * dh, len, dh) = P.transpose() * go;
                    M dp = go * vv.block(st, h * dh, len, dh).transpose();
                    const auto rowdot = (dp.cwiseProduct(P)).rowwise().sum();
                    M ds = P.cwiseProduct(dp - rowdot.replicate(1, len));
                    gq.block(st, h * dh, len, dh) = ds * kv.block(st, h * dh, len, dh) * scale;
                    gk.block(st, h * dh, len, dh) = ds.transpose() * qv.block(st, h * dh, len, dh) * scale;
                }
            }
            if (needs_grad(q)) acc(q, gq);
            if (needs_grad(k)) acc(k, gk);
            if (needs_grad(v)) acc(v, gv);
        });
    }

    /// Builds a matrix whose i-th row is sources[index[i].source].row(index[i].row).
    Var gather_rows(const std::vector<Var>& sources, const std::vector<RowRef>& index) {
        if (sources.empty()) throw InvalidArgument("gather_rows: no sources");
        const auto cols = value(sources[0]).cols();
        for (Var s : sources) {
            if (value(s).cols() != cols) throw InvalidArgument("gather_rows: column mismatch");
        }
        M out(static_cast<Eigen::Index>(index.size()), cols);
        for (std::size_t i = 0; i < index.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = value(sources[index[i].source]).row(index[i].row);
        return record(std::move(out), sources, [this, sources, index](const M& g) {
            std::vector<M> gs(sources.size());
            for (std::size_t s = 0; s < sources.size(); ++s) {
                if (needs_grad(sources[s])) gs[s] = M::Zero(value(sources[s]).rows(), value(sources[s]).cols());
            }
            for (std::size_t i = 0; i < index.size(); ++i) {
                M& target = gs[index[i].source];
                if (target.size()) target.row(index[i].row) += g.row(static_cast<Eigen::Index>(i));
            }
            for (std::size_t s = 0; s < sources.size(); ++s) {
                if (gs[s].size()) acc(sources[s], gs[s]);
            }
        });
    }

    Var slice_cols(Var x, int start, int count) {
        M out = value(x).middleCols(start, count);
        return record(std::move(out), {x}, [this, x, start, count](const M& g) {
            M gx = M::Zero(value(x).rows(), value(x).cols());
            gx.middleCols(start, count) = g;
            acc(x, gx);
        });
    }

    /// One row per segment: the mean of that segment's rows.
    Var segment_mean(Var x, const Segments& segs) {
        const M& xv = value(x);
        M out(segs.count(), xv.cols());
        for (int i = 0; i < segs.count(); ++i)
            out.row(i) = xv.middleRows(segs.start[i], segs.length[i]).colwise().mean();
        return record(std::move(out), {x}, [this, x, segs](const M& g) {
            M gx(value(x).rows(), value(x).cols());
            for (int i = 0; i < segs.count(); ++i)
                gx.middleRows(segs.start[i], segs.length[i]).rowwise() =
                    g.row(i) / static_cast<T>(segs.length[i]);
            acc(x, gx);
        });
    }

    Var l2_normalize_rows(Var x, T eps = T(1e-8)) {
        const M& xv = value(x);
        M norms = xv.rowwise().norm();
        M out(xv.rows(), xv.cols());
        for (Eigen::Index r = 0; r < xv.rows(); ++r) out.row(r) = xv.row(r) / std::max(norms(r, 0), eps);
        return record(out, {x}, [this, x, out, norms, eps](const M& g) {
            M gx(out.rows(), out.cols());
            for (Eigen::Index r = 0; r < out.rows(); ++r) {
                const T n = std::max(norms(r, 0), eps);
                const T d = g.row(r).dot(out.row(r));
                gx.row(r) = (g.row(r) - d * out.row(r)) / n;
            }
            acc(x, gx);
        });
    }

    /// Mean over rows of -sum_j target(r,j) * log softmax(logits)(r,j). Returns 1 x 1.
    Var soft_cross_entropy(Var logits, const M& target) {
        const M& lv = value(logits);
        if (target.rows() != lv.rows() || target.cols() != lv.cols())
            throw InvalidArgument("soft_cross_entropy: target shape mismatch");
        M probs(lv.rows(), lv.cols());
        T total = 0;
        for (Eigen::Index r = 0; r < lv.rows(); ++r) {
            const T mx = lv.row(r).maxCoeff();
            const auto shifted = (lv.row(r).array() - mx);
            const T lse = std::log(shifted.exp().sum());
            probs.row(r) = (shifted - lse).exp().matrix();
            total -= (target.row(r).array() * (shifted - lse)).sum();
        }
        const T rows = static_cast<T>(lv.rows());
        M out = M::Constant(1, 1, total / rows);
        return record(std::move(out), {logits}, [this, logits, probs, target, rows](const M& g) {
            M gl(probs.rows(), probs.cols());
            for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                const T tsum = target.row(r).sum();
                gl.row(r) = (probs.row(r) * tsum - target.row(r)) * (g(0, 0) / rows);
            }
            acc(logits, gl);
        });
    }

    Var sum(Var x) {
        M out = M::Constant(1, 1, value(x).sum());
        return record(std::move(out), {x}, [this, x](const M& g) {
            acc(x, M::Constant(value(x).rows(), value(x).cols(), g(0, 0)));
        });
    }

    Var mean_square(Var x) {
        const T n = static_cast<T>(value(x).size());
        M out = M::Constant(1, 1, value(x).squaredNorm() / n);
        return record(std::move(out), {x}, [this, x, n](const M& g) { acc(x, value(x) * (T(2) * g(0, 0) / n)); });
    }

private:
    struct Node {
        M own;
        const M* ext = nullptr;
        M grad;
        bool needs_grad = false;
        bool has_grad = false;
        M* sink = nullptr;
        std::function<void(const M&)> back;
    };

    Var push(M value, bool needs) {
        Node n;
        n.own = std::move(value);
        n.needs_grad = needs;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    template <typename Back>
    Var record(M value, const std::vector<Var>& inputs, Back&& back) {
        bool needs = false;
        for (Var v : inputs) needs = needs || nodes_[v.id].needs_grad;
        Var out = push(std::move(value), needs);
        if (needs) nodes_[out.id].back = std::forward<Back>(back);
        return out;
    }

    template <typename E>
    void acc(Var v, const E& g) {
        Node& n = nodes_[v.id];
        if (!n.needs_grad) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    void check_same(Var a, Var b, const char* op) const {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
            throw InvalidArgument(std::string(op) + ": shape mismatch");
    }

    std::vector<Node> nodes_;
};

}  // namespace polymotion::ad
