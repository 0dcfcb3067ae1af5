#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gearlab/nn/adam.hpp"
#include "gearlab/nn/grad_check.hpp"
#include "gearlab/nn/kernels.hpp"
#include "gearlab/nn/network.hpp"

using namespace gearlab;
using namespace gearlab::nn;

namespace {

template <class T>
std::vector<T> randv(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

template <class T>
void require_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max(1.0, std::abs(static_cast<double>(b[i])));
        INFO("index " << i << " got " << a[i] << " want " << b[i]);
        REQUIRE(std::abs(static_cast<double>(a[i]) - b[i]) <= tol * scale);
    }
}

const ConvGeom kGeoms[] = {
    {3, 64, 64, 8, 5, 2},  {8, 30, 30, 16, 3, 2}, {16, 14, 14, 32, 3, 2}, {2, 9, 11, 4, 3, 2},
    {3, 10, 7, 5, 3, 1},   {1, 8, 8, 3, 2, 3},    {4, 13, 13, 12, 5, 2},  {2, 70, 70, 4, 3, 2},
    {5, 6, 6, 8, 1, 1},    {3, 12, 12, 8, 4, 2},
};

template <class T>
void check_conv_equivalence(double tol) {
    Rng rng(17);
    for (const ConvGeom& g : kGeoms) {
        for (int batch : {1, 3}) {
            CAPTURE(g.in_c);
            CAPTURE(g.in_h);
            CAPTURE(g.out_c);
            CAPTURE(g.kernel);
            CAPTURE(g.stride);
            CAPTURE(batch);
            auto in = randv<T>(static_cast<std::size_t>(batch) * g.in_size(), rng);
            auto w = randv<T>(g.weight_size(), rng);
            auto b = randv<T>(g.out_c, rng);
            auto dout = randv<T>(static_cast<std::size_t>(batch) * g.out_size(), rng);

            std::vector<T> o1(static_cast<std::size_t>(batch) * g.out_size()), o2(o1.size());
            reference::conv2d_forward(g, batch, in.data(), w.data(), b.data(), o1.data());
            parallel::conv2d_forward(g, batch, in.data(), w.data(), b.data(), o2.data());
            require_close(o2, o1, tol);

            std::vector<T> di1(in.size(), T(7)), di2(in.size(), T(-3));
            reference::conv2d_backward_input(g, batch, dout.data(), w.data(), di1.data());
            parallel::conv2d_backward_input(g, batch, dout.data(), w.data(), di2.data());
            require_close(di2, di1, tol);

            auto dw1 = randv<T>(w.size(), rng);
            auto db1 = randv<T>(b.size(), rng);
            auto dw2 = dw1;
            auto db2 = db1;
            reference::conv2d_backward_weight(g, batch, in.data(), dout.data(), dw1.data(), db1.data());
            parallel::conv2d_backward_weight(g, batch, in.data(), dout.data(), dw2.data(), db2.data());
            require_close(dw2, dw1, tol);
            require_close(db2, db1, tol);
        }
    }
}

template <class T>
void check_dense_equivalence(double tol) {
    Rng rng(23);
    const std::pair<int, int> shapes[] = {{1152, 128}, {128, 8}, {7, 5}, {33, 17}, {1, 1}};
    for (auto [n_in, n_out] : shapes)
        for (int batch : {1, 4, 64}) {
            auto x = randv<T>(static_cast<std::size_t>(batch) * n_in, rng);
            auto w = randv<T>(static_cast<std::size_t>(n_in) * n_out, rng);
            auto b = randv<T>(n_out, rng);
            auto dy = randv<T>(static_cast<std::size_t>(batch) * n_out, rng);
            std::vector<T> y1(dy.size()), y2(dy.size());
            reference::dense_forward(batch, n_in, n_out, x.data(), w.data(), b.data(), y1.data());
            parallel::dense_forward(batch, n_in, n_out, x.data(), w.data(), b.data(), y2.data());
            require_close(y2, y1, tol);
            std::vector<T> dx1(x.size(), T(1)), dx2(x.size(), T(2));
            reference::dense_backward_input(batch, n_in, n_out, dy.data(), w.data(), dx1.data());
            parallel::dense_backward_input(batch, n_in, n_out, dy.data(), w.data(), dx2.data());
            require_close(dx2, dx1, tol);
            auto dw1 = randv<T>(w.size(), rng);
            auto db1 = randv<T>(b.size(), rng);
            auto dw2 = dw1;
            auto db2 = db1;
            reference::dense_backward_weight(batch, n_in, n_out, x.data(), dy.data(), dw1.data(), db1.data());
            parallel::dense_backward_weight(batch, n_in, n_out, x.data(), dy.data(), dw2.data(), db2.data());
            require_close(dw2, dw1, tol);
            require_close(db2, db1, tol);
        }
}

// L = sum c_i y_i + 0.5 sum y_i^2
OutputLoss quadratic_loss(std::vector<double> c) {
    return [c = std::move(c)](const double* y, std::size_t n, double* g) {
        double l = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ci = c[i % c.size()];
            l += ci * y[i] + 0.5 * y[i] * y[i];
            g[i] = ci + y[i];
        }
        return l;
    };
}

}  // namespace

TEST_CASE("parallel conv kernels match the reference in double") { check_conv_equivalence<double>(1e-12); }
TEST_CASE("parallel conv kernels match the reference in float") { check_conv_equivalence<float>(2e-4); }
TEST_CASE("parallel dense kernels match the reference in double") { check_dense_equivalence<double>(1e-12); }
TEST_CASE("parallel dense kernels match the reference in float") { check_dense_equivalence<float>(2e-4); }

TEST_CASE("im2col and col2im are adjoint") {
    Rng rng(3);
    for (const ConvGeom& g : kGeoms) {
        auto x = randv<double>(g.in_size(), rng);
        auto c = randv<double>(static_cast<std::size_t>(g.col_rows()) * g.col_cols(), rng);
        std::vector<double> cx(c.size()), xc(x.size(), 0.0);
        parallel::im2col(g, x.data(), cx.data());
        parallel::col2im_add(g, c.data(), xc.data());
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < c.size(); ++i) lhs += cx[i] * c[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * xc[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("parallel kernels give the same bits for any batch split") {
    Rng rng(8);
    const ConvGeom g{3, 64, 64, 8, 5, 2};
    auto in = randv<float>(4 * static_cast<std::size_t>(g.in_size()), rng);
    auto w = randv<float>(g.weight_size(), rng);
    auto b = randv<float>(g.out_c, rng);
    std::vector<float> all(4 * static_cast<std::size_t>(g.out_size())), one(g.out_size());
    parallel::conv2d_forward(g, 4, in.data(), w.data(), b.data(), all.data());
    parallel::conv2d_forward(g, 1, in.data() + 2 * g.in_size(), w.data(), b.data(), one.data());
    CHECK(std::memcmp(one.data(), all.data() + 2 * g.out_size(), one.size() * sizeof(float)) == 0);
}

TEST_CASE("net spec text round trip and shapes") {
    const NetSpec s = NetSpec::policy_cnn(8);
    CHECK(s.describe() == "in=3x64x64;conv8k5s2r;conv16k3s2r;conv32k3s2r;dense128r;dense8");
    CHECK(NetSpec::parse(s.describe()) == s);
    CHECK_THROWS_AS(NetSpec::parse("in=3x64;dense4"), std::invalid_argument);
    CHECK_THROWS_AS(NetSpec::parse("in=1x1x4;pool2"), std::invalid_argument);

    Network<float> net(s);
    CHECK(net.num_params() == 8 * 75 + 8 + 16 * 72 + 16 + 32 * 144 + 32 + 1152 * 128 + 128 + 128 * 8 + 8);
}

TEST_CASE("zero weights give zero output") {
    Network<float> net(NetSpec::policy_cnn(5));
    Rng rng(1);
    auto x = randv<float>(net.spec().input_size(), rng, 0.0, 1.0);
    const float* y = net.forward(x.data(), 1);
    for (int i = 0; i < 5; ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("identity dense layer passes its input through") {
    NetSpec s;
    s.in_c = 1;
    s.in_h = 1;
    s.in_w = 6;
    s.layers = {{LayerKind::dense, 6, 1, 1, false}};
    Network<double> net(s);
    for (int i = 0; i < 6; ++i) net.params()[net.weight_offset(0) + i * 6 + i] = 1.0;
    Tensor<double> x({1, 1, 6}, {0.5, -2, 3, 0, 1e-3, 7});
    const Tensor<double> y = net.forward(x);
    CHECK(y.shape == std::vector<int>{6});
    CHECK(y.data == x.data);
}

TEST_CASE("shape mismatch names the offending layer") {
    Network<float> net(NetSpec::policy_cnn(8));
    Tensor<float> bad({3, 32, 32});
    try {
        net.forward(bad);
        FAIL("expected a shape error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("layer 0 (conv 8@5x5/2)") != std::string::npos);
        CHECK(msg.find("3x32x32") != std::string::npos);
    }
    NetSpec tiny;
    tiny.in_c = 1;
    tiny.in_h = tiny.in_w = 4;
    tiny.layers = {{LayerKind::conv, 2, 3, 1, true}, {LayerKind::conv, 2, 3, 1, false}};
    CHECK_THROWS_WITH_AS(Network<float>{tiny}, doctest::Contains("layer 1"), std::invalid_argument);
}

TEST_CASE("backward without a cached forward is an error") {
    Network<float> net(NetSpec::policy_cnn(8));
    std::vector<float> g(8, 1.0f);
    CHECK_THROWS_AS(net.backward(g.data()), std::logic_error);
}

TEST_CASE("non-finite input is rejected") {
    Network<float> net(NetSpec::policy_cnn(8));
    std::vector<float> x(net.spec().input_size(), 0.5f);
    x[100] = std::nanf("");
    CHECK_THROWS_AS(net.forward(x.data(), 1), NonFiniteError);
}

TEST_CASE("linear net squared loss gradient has the closed form") {
    NetSpec s;
    s.in_c = 1;
    s.in_h = 1;
    s.in_w = 4;
    s.layers = {{LayerKind::dense, 3, 1, 1, false}};
    Network<double> net(s);
    Rng rng(4);
    net.init(rng);
    const std::vector<double> x{0.3, -1.2, 2.0, 0.7}, target{1.0, 0.0, -0.5};
    const double* y = net.forward(x.data(), 1);
    std::vector<double> r(3), g(3);
    for (int o = 0; o < 3; ++o) {
        r[o] = y[o] - target[o];
        g[o] = 2.0 * r[o];
    }
    net.zero_grad();
    net.backward(g.data());
    for (int o = 0; o < 3; ++o) {
        for (int i = 0; i < 4; ++i)
            CHECK(net.grads()[net.weight_offset(0) + o * 4 + i] == doctest::Approx(2.0 * r[o] * x[i]).epsilon(1e-14));
        CHECK(net.grads()[net.bias_offset(0) + o] == doctest::Approx(2.0 * r[o]).epsilon(1e-14));
    }
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
    Network<float> net(NetSpec::policy_cnn(5));
    Rng rng(2);
    net.init(rng);
    auto x = randv<float>(2 * static_cast<std::size_t>(net.spec().input_size()), rng, 0.0, 1.0);
    net.forward(x.data(), 2);
    net.zero_grad();
    std::vector<float> g(10, 0.0f);
    net.backward(g.data());
    for (float v : net.grads()) REQUIRE(v == 0.0f);
}

TEST_CASE("reference and parallel networks agree") {
    Network<double> a(NetSpec::policy_cnn(5)), b(NetSpec::policy_cnn(5));
    Rng rng(6);
    a.init(rng);
    b.params() = a.params();
    b.use_reference_kernels(true);
    auto x = randv<double>(3 * static_cast<std::size_t>(a.spec().input_size()), rng, 0.0, 1.0);
    std::vector<double> ya(a.forward(x.data(), 3), a.forward(x.data(), 3) + 15);
    std::vector<double> yb(b.forward(x.data(), 3), b.forward(x.data(), 3) + 15);
    require_close(ya, yb, 1e-12);
    auto g = randv<double>(15, rng);
    a.zero_grad();
    b.zero_grad();
    a.backward(g.data());
    b.backward(g.data());
    require_close(a.grads(), b.grads(), 1e-10);
}

TEST_CASE("forward output of a seeded net is pinned") {
    Network<float> net(NetSpec::policy_cnn(5));
    Rng rng(2024);
    net.init(rng);
    std::vector<float> x(net.spec().input_size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>((i * 37 % 101) / 100.0);
    const float* y = net.forward(x.data(), 1);
    // Frozen from the double-precision reference kernels.
    const double pinned[5] = {-0.698592993, -0.299858989, -0.820806787, 0.503698452, 1.97312444};
    for (int i = 0; i < 5; ++i) CHECK(y[i] == doctest::Approx(pinned[i]).epsilon(1e-5));
}

TEST_CASE("gradient check passes for every layer type over random nets") {
    const NetSpec specs[] = {
        NetSpec::parse("in=2x9x9;conv4k3s2r;conv4k3s1r;dense5r;dense3"),
        NetSpec::parse("in=3x11x10;conv5k3s1r;conv6k2s3;dense2"),
        NetSpec::parse("in=1x13x13;conv8k5s2r;conv8k3s2r;dense4"),
        NetSpec::parse("in=1x1x12;dense10r;dense10r;dense4"),
        NetSpec::parse("in=3x16x16;conv8k5s2r;conv16k3s2r;dense6r;dense5"),
    };
    int nets = 0;
    for (int seed = 0; seed < 2; ++seed)
        for (const NetSpec& s : specs) {
            Network<double> net(s);
            Rng rng(100 + seed * 7 + nets);
            net.init(rng);
            for (std::size_t i = 0; i < net.num_params(); ++i) net.params()[i] += 0.05 * rng.normal();
            const int batch = 2;
            auto x = randv<double>(batch * static_cast<std::size_t>(s.input_size()), rng);
            auto c = randv<double>(s.output_size(), rng);
            GradCheckOptions opt;
            opt.coords = 240;
            opt.seed = 50 + nets;
            const auto rep = grad_check(net, x, batch, quadratic_loss(c), opt);
            INFO(s.describe() << " max rel err " << rep.max_rel_error << " at " << rep.worst_index);
            CHECK(rep.checked >= 200);
            CHECK(rep.passed);
            ++nets;
        }
    CHECK(nets >= 10);
}

TEST_CASE("gradient check catches a corrupted conv gradient") {
    Network<double> net(NetSpec::parse("in=2x9x9;conv4k3s2r;dense3"));
    Rng rng(12);
    net.init(rng);
    auto x = randv<double>(2 * static_cast<std::size_t>(net.spec().input_size()), rng);
    auto c = randv<double>(3, rng);
    auto loss = quadratic_loss(c);
    // Kernel applied unflipped in the weight gradient: swap taps (ky,kx) <-> (kx,ky).
    auto corrupted = [&](Network<double>& n, const std::vector<double>& in, int batch) {
        n.zero_grad();
        const double* y = n.forward(in.data(), batch);
        std::vector<double> g(static_cast<std::size_t>(batch) * 3);
        loss(y, g.size(), g.data());
        n.backward(g.data());
        double* dw = n.grads().data() + n.weight_offset(0);
        for (int oc = 0; oc < 4; ++oc)
            for (int ic = 0; ic < 2; ++ic)
                for (int a = 0; a < 3; ++a)
                    for (int b = a + 1; b < 3; ++b)
                        std::swap(dw[((oc * 2 + ic) * 3 + a) * 3 + b], dw[((oc * 2 + ic) * 3 + b) * 3 + a]);
    };
    const auto rep = grad_check(net, x, 2, loss, {}, corrupted);
    CHECK_FALSE(rep.passed);
    CHECK(rep.worst_index < net.bias_offset(0));
}

TEST_CASE("gradient check is vacuous for a parameterless net") {
    NetSpec s;
    s.in_c = 1;
    s.in_h = 1;
    s.in_w = 3;
    Network<double> net(s);
    const auto rep = grad_check(net, {1, 2, 3}, 1, quadratic_loss({1.0}));
    CHECK(rep.passed);
    CHECK(rep.checked == 0);
}

TEST_CASE("adam first step moves each coordinate by lr") {
    Adam<double> opt(4, {0.01, 0.9, 0.999, 1e-8});
    std::vector<double> p{1, 2, 3, 4};
    const std::vector<double> g{0.5, -3, 1e-2, 7};
    opt.step(p, g);
    CHECK(p[0] == doctest::Approx(1 - 0.01).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(2 + 0.01).epsilon(1e-6));
    CHECK(p[2] == doctest::Approx(3 - 0.01).epsilon(1e-5));
    CHECK(p[3] == doctest::Approx(4 - 0.01).epsilon(1e-6));
    CHECK(opt.steps() == 1);
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
    Adam<float> opt(3, {});
    std::vector<float> p{1, -2, 3}, g(3, 0.0f);
    for (int i = 0; i < 5; ++i) opt.step(p, g);
    CHECK(p == std::vector<float>{1, -2, 3});
}

TEST_CASE("adam is deterministic and checks sizes") {
    auto run = [] {
        Adam<float> opt(5, {1e-3});
        Rng rng(4);
        std::vector<float> p = randv<float>(5, rng);
        for (int i = 0; i < 50; ++i) {
            auto g = randv<float>(5, rng);
            opt.step(p, g);
        }
        return p;
    };
    CHECK(run() == run());
    Adam<float> opt(5, {});
    std::vector<float> p(4), g(5);
    CHECK_THROWS_AS(opt.step(p, g), std::invalid_argument);
}

TEST_CASE("clip_grad_norm scales to the bound") {
    std::vector<double> g{3, 4};
    CHECK(clip_grad_norm<double>(g, 1.0) == doctest::Approx(5.0));
    CHECK(g[0] == doctest::Approx(0.6));
    CHECK(g[1] == doctest::Approx(0.8));
    std::vector<double> h{0.3, 0.4};
    clip_grad_norm<double>(h, 1.0);
    CHECK(h[0] == 0.3);
}
