#include "doctest.h"
#include "polymotion/networks.hpp"
#include "test_util.hpp"

#include <cstring>

using namespace polymotion;
using testutil::randn;

namespace {

NetDims tiny_dims() {
    NetDims d;
    d.pose_dim = pose_dim(2);
    d.joints = 2;
    d.hidden = 8;
    d.heads = 2;
    d.blocks = 1;
    d.max_frames = 8;
    d.text_dim = 8;
    return d;
}

// Scalar count by walking the documented architecture, independent of the
// initialiser: linear maps carry weight + bias, attention four H x H maps.
std::size_t shape_walk(const NetDims& d) {
    const std::size_t D = d.pose_dim, H = d.hidden, E = d.text_dim, F = d.max_frames;
    auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
    std::size_t n = linear(D, H) + F * H + linear(H, H) + linear(H, H) + linear(E, H) + linear(H, D);
    const std::size_t block = linear(H, 2 * H) + 4 * linear(H, H) + linear(H, 2 * H) + linear(H, 4 * H) + linear(4 * H, H);
    return n + d.blocks * block;
}

MatT<double> gm_out(const ParamSet<double>& gen, const NetDims& d, const Mat& x, int t, const Mat& text,
                    const std::vector<Mat>& residuals, std::vector<Mat>* hidden = nullptr) {
    ad::Tape<double> tape;
    Binder<double> b(tape, gen);
    const ad::Var cond = gm_condition(b, d, {t}, text);
    std::vector<ad::Var> rv;
    for (const auto& r : residuals) rv.push_back(tape.constant(r));
    const GenOutput o = gm_forward(b, d, tape.constant(x), cond, ad::Segments::uniform(1, static_cast<int>(x.rows())), rv);
    if (hidden)
        for (auto h : o.hidden) hidden->push_back(tape.value(h));
    return tape.value(o.x0_hat);
}

bool bit_equal(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("generation parameter count") {
    const NetDims d;
    const auto p = init_generation<float>(d, 1);
    CHECK(p.scalar_count() == shape_walk(d));
    CHECK(generation_param_count(d) == shape_walk(d));
    CHECK(generation_param_count(d) == 293464);
    CHECK(generation_param_count(tiny_dims()) == shape_walk(tiny_dims()));
}

TEST_CASE("init_generation") {
    const NetDims d;
    const auto a = init_generation<float>(d, 5), b = init_generation<float>(d, 5), c = init_generation<float>(d, 6);
    CHECK(a.all_finite());
    bool same = true, differs = false;
    for (const auto& [name, m] : a.arrays()) {
        same = same && std::memcmp(m.data(), b.at(name).data(), sizeof(float) * m.size()) == 0;
        differs = differs || !(m == c.at(name));
    }
    CHECK(same);
    CHECK(differs);
    NetDims bad = d;
    bad.heads = 3;  // 64 not divisible by 3
    CHECK_THROWS_AS(init_generation<float>(bad, 1), InvalidArgument);
}

TEST_CASE("gm_forward shapes and residual injection") {
    const NetDims d = tiny_dims();
    const auto gen = init_generation<double>(d, 3);
    const Mat text = randn(1, d.text_dim, 4);
    for (int F : {4, 8}) {
        const Mat x = randn(F, d.pose_dim, 5);
        const Mat plain = gm_out(gen, d, x, 10, text, {});
        CHECK(plain.rows() == F);
        CHECK(plain.cols() == d.pose_dim);
        CHECK(bit_equal(plain, gm_out(gen, d, x, 10, text, {Mat::Zero(F, d.hidden)})));
        CHECK(bit_equal(plain, gm_predict<double>(gen, d, x, 10, text)));
    }
    const Mat x = randn(4, d.pose_dim, 6);
    CHECK_THROWS_AS(gm_out(gen, d, randn(9, d.pose_dim, 1), 1, text, {}), InvalidArgument);
    CHECK_THROWS_AS(gm_out(gen, d, x, 1, text, {Mat::Zero(4, d.hidden), Mat::Zero(4, d.hidden)}), InvalidArgument);

    SUBCASE("additive at the injection point") {
        NetDims d2 = d;
        d2.blocks = 2;
        const auto g2 = init_generation<double>(d2, 8);
        const Mat r = randn(4, d.hidden, 9);
        std::vector<Mat> h0, h1;
        const Mat base = gm_out(g2, d2, x, 10, text, {}, &h0);
        const Mat moved = gm_out(g2, d2, x, 10, text, {r, Mat::Zero(4, d.hidden)}, &h1);
        CHECK_FALSE(bit_equal(base, moved));
        CHECK((h1[0] - r - h0[0]).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("gm_forward gradients match finite differences") {
    const NetDims d = tiny_dims();
    auto gen = init_generation<double>(d, 11);
    const Mat x = randn(4, d.pose_dim, 12), text = randn(1, d.text_dim, 13);
    auto loss = [&] {
        ad::Tape<double> tape;
        Binder<double> b(tape, gen);
        const GenOutput o = gm_forward(b, d, tape.constant(x), gm_condition(b, d, {37}, text), ad::Segments::uniform(1, 4));
        return tape.value(tape.mean_square(o.x0_hat))(0, 0);
    };
    auto analytic = [&] {
        ParamSet<double> g = gen.zeros_like();
        ad::Tape<double> tape;
        Binder<double> b(tape, gen, &g);
        const GenOutput o = gm_forward(b, d, tape.constant(x), gm_condition(b, d, {37}, text), ad::Segments::uniform(1, 4));
        tape.backward(tape.mean_square(o.x0_hat));
        return g;
    };
    const auto r = testutil::grad_check(gen, loss, analytic, 100000, 14);
    INFO(r.worst);
    CHECK(r.checked == static_cast<int>(gen.scalar_count()));
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("interaction network at initialisation") {
    const NetDims d = tiny_dims();
    const auto gen = init_generation<double>(d, 21);
    const auto inter = init_interaction<double>(gen, d, 22);
    CHECK(inter.at("block0.sa1.wq") == gen.at("block0.attn.wq"));
    CHECK(inter.at("block0.sa2.wo") == gen.at("block0.attn.wo"));
    CHECK(inter.at("block0.ada1.w") == gen.at("block0.ada_attn.w"));
    CHECK(inter.at("in.w") == gen.at("in.w"));
    CHECK(inter.at("block0.out.w").cwiseAbs().maxCoeff() == 0.0);
    CHECK(inter.at("spatial.w").cwiseAbs().maxCoeff() == 0.0);

    const Mat x = randn(4, d.pose_dim, 23), text = randn(1, d.text_dim, 24);
    const std::vector<Mat> conds{randn(4, d.pose_dim, 25), randn(4, d.pose_dim, 26)};
    const auto res = im_residuals<double>(gen, inter, d, x, conds, nullptr, 100, text);
    REQUIRE(res.size() == static_cast<std::size_t>(d.blocks));
    CHECK(res[0].rows() == 4);
    CHECK(res[0].cols() == d.hidden);
    CHECK(res[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(bit_equal(gm_out(gen, d, x, 100, text, res), gm_out(gen, d, x, 100, text, {})));

    NetDims wrong = d;
    wrong.hidden = 16;
    CHECK_THROWS_AS(init_interaction<double>(gen, wrong, 1), InvalidArgument);
}

TEST_CASE("interaction network symmetry and generality") {
    const NetDims d = tiny_dims();
    const auto gen = init_generation<double>(d, 31);
    auto inter = init_interaction<double>(gen, d, 32);
    testutil::perturb(inter, 0.2, 33);
    const Mat x = randn(4, d.pose_dim, 34), text = randn(1, d.text_dim, 35);
    const std::vector<Mat> c{randn(4, d.pose_dim, 36), randn(4, d.pose_dim, 37), randn(4, d.pose_dim, 38)};

    auto residuals = [&](const std::vector<Mat>& conds, const std::vector<bool>& keep = {}) {
        return im_residuals<double>(gen, inter, d, x, conds, nullptr, 250, text, keep);
    };
    auto max_diff = [](const std::vector<Mat>& a, const std::vector<Mat>& b) {
        double m = 0;
        for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, (a[k] - b[k]).cwiseAbs().maxCoeff());
        return m;
    };

    for (std::size_t n = 0; n <= 3; ++n) {
        const auto r = residuals(std::vector<Mat>(c.begin(), c.begin() + static_cast<long>(n)));
        REQUIRE(r.size() == 1);
        CHECK(r[0].allFinite());
        CHECK(r[0].cwiseAbs().maxCoeff() > 0.0);
    }
    const auto ref = residuals(c);
    CHECK(max_diff(ref, residuals({c[2], c[0], c[1]})) < 1e-6);
    CHECK(max_diff(ref, residuals({c[1], c[2], c[0]})) < 1e-6);
    CHECK(max_diff(residuals({c[0], c[2]}), residuals(c, {true, false, true})) < 1e-6);
    CHECK(max_diff(residuals({}), residuals(c, {false, false, false})) < 1e-6);
    CHECK_THROWS_AS(residuals({randn(3, d.pose_dim, 1)}), InvalidArgument);
    CHECK_THROWS_AS(residuals(c, {true}), InvalidArgument);

    SUBCASE("identical conditions give identical condition states") {
        ad::Tape<double> tape;
        Binder<double> gb(tape, gen), ib(tape, inter);
        InterBatch b;
        b.target = tape.constant(x);
        b.segs = ad::Segments::uniform(1, 4);
        Mat stacked(8, d.pose_dim);
        stacked << c[0], c[0];
        b.conditions = tape.constant(stacked);
        b.owner = {0, 0};
        const InterOutput o = im_forward(ib, d, b, gm_condition(gb, d, {250}, text));
        const Mat& s = tape.value(o.condition_state);
        CHECK((s.topRows(4) - s.bottomRows(4)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("spatial pathway") {
    const NetDims d = tiny_dims();
    const auto gen = init_generation<double>(d, 41);
    auto inter = init_interaction<double>(gen, d, 42);
    testutil::perturb(inter, 0.2, 43);
    inter.at("spatial.w").setZero();
    const Mat x = randn(4, d.pose_dim, 44), text = randn(1, d.text_dim, 45);
    SpatialSignal s;
    s.targets = randn(4, 3 * d.joints, 46);
    s.observed = Mat::Zero(4, d.joints);
    s.observed(1, 0) = 1.0;
    const auto with = im_residuals<double>(gen, inter, d, x, {}, &s, 60, text);
    const auto without = im_residuals<double>(gen, inter, d, x, {}, nullptr, 60, text);
    CHECK(bit_equal(with[0], without[0]));
    inter.at("spatial.w") = randn(d.spatial_dim(), d.hidden, 47, 0.1);
    CHECK_FALSE(bit_equal(im_residuals<double>(gen, inter, d, x, {}, &s, 60, text)[0], without[0]));

    const Mat f = spatial_features(s);
    CHECK(f.cols() == 4 * d.joints);
    CHECK(f(1, 0) == s.targets(1, 0));
    CHECK(f(0, 0) == 0.0);
    CHECK(f(1, 3 * d.joints) == 1.0);
}

TEST_CASE("interaction gradients match finite differences") {
    const NetDims d = tiny_dims();
    const auto gen = init_generation<double>(d, 51);
    auto inter = init_interaction<double>(gen, d, 52);
    testutil::perturb(inter, 0.2, 53);
    const Mat x = randn(4, d.pose_dim, 54), text = randn(1, d.text_dim, 55);
    Mat conds(8, d.pose_dim);
    conds << randn(4, d.pose_dim, 56), randn(4, d.pose_dim, 57);
    SpatialSignal s;
    s.targets = randn(4, 3 * d.joints, 58);
    s.observed = Mat::Ones(4, d.joints);
    const Mat sf = spatial_features(s);
    auto run = [&](ParamSet<double>* g) {
        ad::Tape<double> tape;
        Binder<double> gb(tape, gen), ib(tape, inter, g);
        InterBatch b;
        b.target = tape.constant(x);
        b.segs = ad::Segments::uniform(1, 4);
        b.conditions = tape.constant(conds);
        b.owner = {0, 0};
        b.spatial = tape.constant(sf);
        const InterOutput o = im_forward(ib, d, b, gm_condition(gb, d, {300}, text));
        const ad::Var l = tape.mean_square(o.residuals[0]);
        if (g) tape.backward(l);
        return tape.value(l)(0, 0);
    };
    const auto r = testutil::grad_check(
        inter, [&] { return run(nullptr); },
        [&] {
            ParamSet<double> g = inter.zeros_like();
            run(&g);
            return g;
        },
        100000, 59);
    INFO(r.worst);
    CHECK(r.max_rel_err < 1e-4);
}
