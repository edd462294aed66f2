#include "polymotion/networks.hpp"

#include <cmath>

namespace polymotion {

using ad::RowRef;
using ad::Segments;
using ad::Var;

void NetDims::validate() const {
    if (pose_dim < 1) throw InvalidArgument("pose_dim: must be >= 1");
    if (joints < 0) throw InvalidArgument("joints: must be >= 0");
    if (hidden < 1 || heads < 1 || hidden % heads != 0)
        throw InvalidArgument("hidden: must be a positive multiple of heads");
    if (hidden % 2 != 0) throw InvalidArgument("hidden: must be even");
    if (blocks < 1) throw InvalidArgument("blocks: must be >= 1");
    if (max_frames < 1) throw InvalidArgument("max_frames: must be >= 1");
    if (text_dim < 1) throw InvalidArgument("text_dim: must be >= 1");
}

bool operator==(const NetDims& a, const NetDims& b) {
    return a.pose_dim == b.pose_dim && a.joints == b.joints && a.hidden == b.hidden && a.heads == b.heads &&
           a.blocks == b.blocks && a.max_frames == b.max_frames && a.text_dim == b.text_dim;
}

std::size_t generation_param_count(const NetDims& d) {
    const std::size_t D = d.pose_dim, H = d.hidden, E = d.text_dim, F = d.max_frames, K = d.blocks;
    const std::size_t linear_hh = H * H + H;
    const std::size_t ada = H * 2 * H + 2 * H;
    const std::size_t block = 2 * ada + 4 * linear_hh + (H * 4 * H + 4 * H) + (4 * H * H + H);
    return (D * H + H) + F * H + 2 * linear_hh + (E * H + H) + K * block + (H * D + D);
}

namespace {

template <typename T>
MatT<T> uniform_init(Rng& rng, int rows, int cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    MatT<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
    return m;
}

template <typename T>
MatT<T> normal_init(Rng& rng, int rows, int cols, double sigma) {
    std::normal_distribution<double> n(0.0, sigma);
    MatT<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
    return m;
}

template <typename T>
void add_linear(ParamSet<T>& p, Rng& rng, const std::string& name, int in, int out) {
    p.add(name + ".w", uniform_init<T>(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    p.add(name + ".b", MatT<T>::Zero(1, out));
}

template <typename T>
void add_attention(ParamSet<T>& p, Rng& rng, const std::string& name, int h) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    for (const char* part : {"q", "k", "v", "o"}) {
        p.add(name + ".w" + part, uniform_init<T>(rng, h, h, bound));
        p.add(name + ".b" + part, MatT<T>::Zero(1, h));
    }
}

template <typename T>
MatT<T> sinusoid_table(int rows, int width) {
    MatT<T> m(rows, width);
    const int half = width / 2;
    for (int r = 0; r < rows; ++r) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            m(r, i) = static_cast<T>(std::sin(r * freq));
            m(r, half + i) = static_cast<T>(std::cos(r * freq));
        }
    }
    return m;
}

std::string block_name(int k, const char* part) { return "block" + std::to_string(k) + "." + part; }

template <typename T>
Var linear(Binder<T>& p, const std::string& name, Var x) {
    return p.tape().linear(x, p(name + ".w"), p(name + ".b"));
}

template <typename T>
Var self_attention(Binder<T>& p, const std::string& name, Var x, const Segments& segs, int heads) {
    auto& tape = p.tape();
    const Var q = tape.linear(x, p(name + ".wq"), p(name + ".bq"));
    const Var k = tape.linear(x, p(name + ".wk"), p(name + ".bk"));
    const Var v = tape.linear(x, p(name + ".wv"), p(name + ".bv"));
    return tape.linear(tape.attention(q, k, v, segs, heads), p(name + ".wo"), p(name + ".bo"));
}

/// LayerNorm followed by per-sample (1 + scale) * h + shift read from `act_cond`.
template <typename T>
Var modulated_norm(Binder<T>& p, const std::string& name, Var h, Var act_cond, const Segments& segs, int width) {
    auto& tape = p.tape();
    const Var ss = linear(p, name, act_cond);
    return tape.modulate(tape.layer_norm(h), tape.slice_cols(ss, 0, width), tape.slice_cols(ss, width, width), segs);
}

void check_segments(const Segments& segs, int max_frames) {
    for (int len : segs.length) {
        if (len < 1 || len > max_frames) throw InvalidArgument("sequence length must lie in [1, max_frames]");
    }
}

}  // namespace

template <typename T>
ParamSet<T> init_generation(const NetDims& d, std::uint64_t seed) {
    d.validate();
    Rng rng(seed);
    ParamSet<T> p;
    const int H = d.hidden;
    add_linear(p, rng, "in", d.pose_dim, H);
    p.add("pos", sinusoid_table<T>(d.max_frames, H));
    add_linear(p, rng, "time1", H, H);
    add_linear(p, rng, "time2", H, H);
    add_linear(p, rng, "text", d.text_dim, H);
    for (int k = 0; k < d.blocks; ++k) {
        p.add(block_name(k, "ada_attn.w"), normal_init<T>(rng, H, 2 * H, 0.02));
        p.add(block_name(k, "ada_attn.b"), MatT<T>::Zero(1, 2 * H));
        add_attention(p, rng, block_name(k, "attn"), H);
        p.add(block_name(k, "ada_ffn.w"), normal_init<T>(rng, H, 2 * H, 0.02));
        p.add(block_name(k, "ada_ffn.b"), MatT<T>::Zero(1, 2 * H));
        add_linear(p, rng, block_name(k, "ffn1"), H, 4 * H);
        add_linear(p, rng, block_name(k, "ffn2"), 4 * H, H);
    }
    add_linear(p, rng, "out", H, d.pose_dim);
    return p;
}

template <typename T>
ParamSet<T> init_interaction(const ParamSet<T>& gen, const NetDims& d, std::uint64_t seed) {
    d.validate();
    const int H = d.hidden;
    auto copy = [&](const std::string& name, int rows, int cols) {
        const MatT<T>& m = gen.at(name);
        if (m.rows() != rows || m.cols() != cols)
            throw InvalidArgument("init_interaction: generation array '" + name + "' has an incompatible shape");
        return m;
    };
    Rng rng(seed);
    ParamSet<T> p;
    p.add("in.w", copy("in.w", d.pose_dim, H));
    p.add("in.b", copy("in.b", 1, H));
    p.add("pos", copy("pos", d.max_frames, H));
    if (d.joints > 0) p.add("spatial.w", MatT<T>::Zero(d.spatial_dim(), H));
    for (int k = 0; k < d.blocks; ++k) {
        for (const char* ada : {"ada1", "ada2"}) {
            p.add(block_name(k, ada) + ".w", copy(block_name(k, "ada_attn.w"), H, 2 * H));
            p.add(block_name(k, ada) + ".b", copy(block_name(k, "ada_attn.b"), 1, 2 * H));
        }
        for (const char* sa : {"sa1", "sa2"}) {
            for (const char* part : {"wq", "wk", "wv", "wo"})
                p.add(block_name(k, sa) + "." + part, copy(block_name(k, "attn.") + part, H, H));
            for (const char* part : {"bq", "bk", "bv", "bo"})
                p.add(block_name(k, sa) + "." + part, copy(block_name(k, "attn.") + part, 1, H));
        }
        p.add(block_name(k, "role_target"), normal_init<T>(rng, 1, H, 0.02));
        p.add(block_name(k, "role_cond"), normal_init<T>(rng, 1, H, 0.02));
        p.add(block_name(k, "out.w"), MatT<T>::Zero(H, H));
        p.add(block_name(k, "out.b"), MatT<T>::Zero(1, H));
    }
    return p;
}

template <typename T>
MatT<T> timestep_features(const std::vector<int>& t, int width) {
    MatT<T> m(static_cast<Eigen::Index>(t.size()), width);
    const int half = width / 2;
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            m(static_cast<Eigen::Index>(r), i) = static_cast<T>(std::sin(t[r] * freq));
            m(static_cast<Eigen::Index>(r), half + i) = static_cast<T>(std::cos(t[r] * freq));
        }
    }
    return m;
}

template <typename T>
Var gm_condition(Binder<T>& gm, const NetDims& d, const std::vector<int>& t, const MatT<T>& text) {
    if (text.rows() != static_cast<Eigen::Index>(t.size()) || text.cols() != d.text_dim)
        throw InvalidArgument("gm_condition: text must be B x text_dim");
    auto& tape = gm.tape();
    const Var tf = tape.constant(timestep_features<T>(t, d.hidden));
    const Var temb = linear(gm, "time2", tape.silu(linear(gm, "time1", tf)));
    const Var txt = linear(gm, "text", tape.constant(text));
    return tape.add(temb, txt);
}

template <typename T>
GenOutput gm_forward(Binder<T>& gm, const NetDims& d, Var x_t, Var cond, const Segments& segs,
                     const std::vector<Var>& residuals) {
    auto& tape = gm.tape();
    const auto& xv = tape.value(x_t);
    if (xv.cols() != d.pose_dim) throw InvalidArgument("gm_forward: input width != pose_dim");
    if (segs.total_rows() != xv.rows()) throw InvalidArgument("gm_forward: segments do not cover input rows");
    if (tape.value(cond).rows() != segs.count()) throw InvalidArgument("gm_forward: one condition row per sample");
    check_segments(segs, d.max_frames);
    if (!residuals.empty() && static_cast<int>(residuals.size()) != d.blocks)
        throw InvalidArgument("gm_forward: need one residual per block");
    for (Var r : residuals) {
        if (tape.value(r).rows() != xv.rows() || tape.value(r).cols() != d.hidden)
            throw InvalidArgument("gm_forward: residual shape mismatch");
    }
    const int H = d.hidden;
    const Var act = tape.silu(cond);
    Var h = tape.add_positions(linear(gm, "in", x_t), gm("pos"), segs);
    GenOutput out;
    for (int k = 0; k < d.blocks; ++k) {
        const Var a = modulated_norm(gm, block_name(k, "ada_attn"), h, act, segs, H);
        h = tape.add(h, self_attention(gm, block_name(k, "attn"), a, segs, d.heads));
        const Var f = modulated_norm(gm, block_name(k, "ada_ffn"), h, act, segs, H);
        h = tape.add(h, linear(gm, block_name(k, "ffn2"), tape.gelu(linear(gm, block_name(k, "ffn1"), f))));
        if (!residuals.empty()) h = tape.add(h, residuals[static_cast<std::size_t>(k)]);
        out.hidden.push_back(h);
    }
    out.x0_hat = linear(gm, "out", h);
    return out;
}

template <typename T>
InterOutput im_forward(Binder<T>& im, const NetDims& d, const InterBatch& b, Var cond) {
    auto& tape = im.tape();
    const int H = d.hidden;
    const Segments& segs = b.segs;
    const int n_samples = segs.count();
    if (tape.value(b.target).cols() != d.pose_dim) throw InvalidArgument("im_forward: target width != pose_dim");
    if (segs.total_rows() != tape.value(b.target).rows())
        throw InvalidArgument("im_forward: segments do not cover target rows");
    check_segments(segs, d.max_frames);

    // Condition layout: condition c occupies rows [cstart[c], cstart[c] + len(owner)).
    const int n_cond = static_cast<int>(b.owner.size());
    Segments cond_segs;
    for (int c = 0; c < n_cond; ++c) {
        if (b.owner[c] < 0 || b.owner[c] >= n_samples) throw InvalidArgument("im_forward: bad condition owner");
        cond_segs.push(segs.length[b.owner[c]]);
    }
    if (n_cond > 0) {
        if (!b.conditions.valid() || tape.value(b.conditions).rows() != cond_segs.total_rows() ||
            tape.value(b.conditions).cols() != d.pose_dim)
            throw InvalidArgument("im_forward: condition frames must match their target");
    }

    Var ht = tape.add_positions(linear(im, "in", b.target), im("pos"), segs);
    if (b.spatial.valid()) {
        if (d.joints == 0) throw InvalidArgument("im_forward: network has no spatial input");
        const auto& sv = tape.value(b.spatial);
        if (sv.rows() != segs.total_rows() || sv.cols() != d.spatial_dim())
            throw InvalidArgument("im_forward: spatial features must be rows x 4J");
        ht = tape.add(ht, tape.matmul(b.spatial, im("spatial.w")));
    }
    Var hc;
    if (n_cond > 0) hc = tape.add_positions(linear(im, "in", b.conditions), im("pos"), cond_segs);

    // Joint token order per sample: its target rows, then each of its conditions in list order.
    std::vector<RowRef> joint_index;
    Segments joint_segs;
    std::vector<RowRef> target_back, cond_back;
    std::vector<int> cond_start(static_cast<std::size_t>(n_cond));
    for (int c = 0; c < n_cond; ++c) cond_start[c] = cond_segs.start[c];
    std::vector<int> joint_pos_of_cond(static_cast<std::size_t>(n_cond));
    for (int s = 0; s < n_samples; ++s) {
        const int base = static_cast<int>(joint_index.size());
        for (int r = 0; r < segs.length[s]; ++r) {
            joint_index.push_back({0, segs.start[s] + r});
            target_back.push_back({0, base + r});
        }
        for (int c = 0; c < n_cond; ++c) {
            if (b.owner[c] != s) continue;
            joint_pos_of_cond[c] = static_cast<int>(joint_index.size());
            for (int r = 0; r < segs.length[s]; ++r) joint_index.push_back({1, cond_start[c] + r});
        }
        joint_segs.push(static_cast<int>(joint_index.size()) - base);
    }
    for (int c = 0; c < n_cond; ++c)
        for (int r = 0; r < cond_segs.length[c]; ++r) cond_back.push_back({0, joint_pos_of_cond[c] + r});

    const Var act = tape.silu(cond);
    InterOutput out;
    for (int k = 0; k < d.blocks; ++k) {
        const Var a = modulated_norm(im, block_name(k, "ada1"), ht, act, segs, H);
        const Var u = tape.add_row(tape.add(ht, self_attention(im, block_name(k, "sa1"), a, segs, d.heads)),
                                   im(block_name(k, "role_target")));
        std::vector<Var> sources{u};
        if (n_cond > 0) sources.push_back(tape.add_row(hc, im(block_name(k, "role_cond"))));
        const Var tokens = tape.gather_rows(sources, joint_index);
        const Var a2 = modulated_norm(im, block_name(k, "ada2"), tokens, act, joint_segs, H);
        const Var mixed = tape.add(tokens, self_attention(im, block_name(k, "sa2"), a2, joint_segs, d.heads));
        ht = tape.gather_rows({mixed}, target_back);
        if (n_cond > 0) hc = tape.gather_rows({mixed}, cond_back);
        out.residuals.push_back(linear(im, block_name(k, "out"), ht));
    }
    out.target_state = ht;
    out.condition_state = hc;
    return out;
}

Mat spatial_features(const SpatialSignal& s) {
    const int F = s.frames(), J = s.joints();
    Mat m(F, 4 * J);
    for (int f = 0; f < F; ++f) {
        for (int j = 0; j < J; ++j) {
            const double o = s.observed(f, j) > 0.5 ? 1.0 : 0.0;
            for (int a = 0; a < 3; ++a) m(f, 3 * j + a) = o > 0 ? s.targets(f, 3 * j + a) : 0.0;
            m(f, 3 * J + j) = o;
        }
    }
    return m;
}

template <typename T>
std::vector<MatT<T>> im_residuals(const ParamSet<T>& gen, const ParamSet<T>& inter, const NetDims& d,
                                  const MatT<T>& x_t, const std::vector<MatT<T>>& conditions,
                                  const SpatialSignal* spatial, int t, const MatT<T>& text,
                                  const std::vector<bool>& keep) {
    if (!keep.empty() && keep.size() != conditions.size())
        throw InvalidArgument("im_residuals: keep mask must match the condition count");
    ad::Tape<T> tape;
    Binder<T> gb(tape, gen), ib(tape, inter);
    const Var cond = gm_condition(gb, d, {t}, text);
    InterBatch b;
    b.target = tape.constant(x_t);
    b.segs = Segments::uniform(1, static_cast<int>(x_t.rows()));
    std::vector<const MatT<T>*> kept;
    for (std::size_t c = 0; c < conditions.size(); ++c) {
        if (!keep.empty() && !keep[c]) continue;
        if (conditions[c].rows() != x_t.rows() || conditions[c].cols() != x_t.cols())
            throw InvalidArgument("im_residuals: condition shape must match the target");
        kept.push_back(&conditions[c]);
    }
    if (!kept.empty()) {
        MatT<T> stacked(static_cast<Eigen::Index>(kept.size()) * x_t.rows(), x_t.cols());
        for (std::size_t c = 0; c < kept.size(); ++c)
            stacked.middleRows(static_cast<Eigen::Index>(c) * x_t.rows(), x_t.rows()) = *kept[c];
        b.conditions = tape.constant(std::move(stacked));
        b.owner.assign(kept.size(), 0);
    }
    if (spatial) {
        spatial->validate(static_cast<int>(x_t.rows()), d.joints);
        b.spatial = tape.constant(spatial_features(*spatial).cast<T>());
    }
    const InterOutput o = im_forward(ib, d, b, cond);
    std::vector<MatT<T>> res;
    for (Var r : o.residuals) res.push_back(tape.value(r));
    return res;
}

template <typename T>
MatT<T> gm_predict(const ParamSet<T>& gen, const NetDims& d, const MatT<T>& x_t, int t, const MatT<T>& text,
                   const std::vector<MatT<T>>& residuals) {
    ad::Tape<T> tape;
    Binder<T> gb(tape, gen);
    const Var cond = gm_condition(gb, d, {t}, text);
    std::vector<Var> rv;
    for (const auto& r : residuals) rv.push_back(tape.constant(r));
    const GenOutput o = gm_forward(gb, d, tape.constant(x_t), cond, Segments::uniform(1, static_cast<int>(x_t.rows())), rv);
    return tape.value(o.x0_hat);
}

#define POLYMOTION_INSTANTIATE(T)                                                                                    \
    template ParamSet<T> init_generation<T>(const NetDims&, std::uint64_t);                                          \
    template ParamSet<T> init_interaction<T>(const ParamSet<T>&, const NetDims&, std::uint64_t);                     \
    template MatT<T> timestep_features<T>(const std::vector<int>&, int);                                             \
    template Var gm_condition<T>(Binder<T>&, const NetDims&, const std::vector<int>&, const MatT<T>&);               \
    template GenOutput gm_forward<T>(Binder<T>&, const NetDims&, Var, Var, const Segments&, const std::vector<Var>&); \
    template InterOutput im_forward<T>(Binder<T>&, const NetDims&, const InterBatch&, Var);                          \
    template std::vector<MatT<T>> im_residuals<T>(const ParamSet<T>&, const ParamSet<T>&, const NetDims&,            \
                                                  const MatT<T>&, const std::vector<MatT<T>>&, const SpatialSignal*, \
                                                  int, const MatT<T>&, const std::vector<bool>&);                    \
    template MatT<T> gm_predict<T>(const ParamSet<T>&, const NetDims&, const MatT<T>&, int, const MatT<T>&,          \
                                   const std::vector<MatT<T>>&);

POLYMOTION_INSTANTIATE(float)
POLYMOTION_INSTANTIATE(double)

#undef POLYMOTION_INSTANTIATE

}  // namespace polymotion
