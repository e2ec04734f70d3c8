#include "doctest.h"

#include <cmath>

#include "dsct/tensor.hpp"

using dsct::TensorT;
using DT = dsct::TensorT<double>;

namespace {

// independent triple-loop product, no shared code with matmul()
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 size_t m, size_t k, size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            for (size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

} // namespace

TEST_CASE("matmul identity and zero") {
    auto eye = DT::from({2, 2}, {1, 0, 0, 1});
    auto a = DT::from({2, 2}, {1, 2, 3, 4});
    auto r = dsct::matmul(eye, a);
    CHECK(r.values() == std::vector<double>{1, 2, 3, 4});

    auto z = DT::zeros({2, 2});
    auto rz = dsct::matmul(z, a);
    for (double v : rz.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul matches naive oracle") {
    auto a = DT::from({2, 2}, {1, 2, 3, 4});
    auto b = DT::from({2, 2}, {5, 6, 7, 8});
    auto r = dsct::matmul(a, b);
    CHECK(r.values() == std::vector<double>{19, 22, 43, 50});

    dsct::Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        size_t m = 1 + rng.next_u64() % 5, k = 1 + rng.next_u64() % 5, n = 1 + rng.next_u64() % 5;
        auto x = DT::randn({m, k}, rng);
        auto y = DT::randn({k, n}, rng);
        auto got = dsct::matmul(x, y);
        auto want = naive_matmul(x.values(), y.values(), m, k, n);
        for (size_t i = 0; i < want.size(); ++i) CHECK(got.value(i) == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul shape error names both shapes") {
    auto a = DT::zeros({2, 3});
    auto b = DT::zeros({4, 5});
    CHECK_THROWS_WITH_AS(dsct::matmul(a, b), doctest::Contains("[2,3]"), dsct::ShapeError);
    try {
        dsct::matmul(a, b);
    } catch (const dsct::ShapeError& e) {
        CHECK(std::string(e.what()).find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("elementwise identities") {
    dsct::Rng rng(1);
    auto x = DT::randn({3, 4}, rng);
    auto zero = DT::zeros({3, 4});
    auto one = DT::full({3, 4}, 1.0);
    CHECK(dsct::add(x, zero).values() == x.values());
    CHECK(dsct::mul(x, one).values() == x.values());
}

TEST_CASE("elementwise product rule gradient") {
    auto a = DT::from({1}, {2.0});
    auto b = DT::from({1}, {3.0});
    a.set_requires_grad();
    b.set_requires_grad();
    auto y = dsct::sum(dsct::mul(a, b));
    y.backward();
    CHECK(a.grad()[0] == 3.0);
    CHECK(b.grad()[0] == 2.0);
}

TEST_CASE("trailing broadcast add and its reduction in backward") {
    auto a = DT::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto bias = DT::from({3}, {10, 20, 30});
    a.set_requires_grad();
    bias.set_requires_grad();
    auto y = dsct::add(a, bias);
    CHECK(y.values() == std::vector<double>{11, 22, 33, 14, 25, 36});
    dsct::sum(y).backward();
    CHECK(bias.grad() == std::vector<double>{2, 2, 2}); // summed over the broadcast rows
    CHECK(a.grad() == std::vector<double>(6, 1.0));

    auto bad = DT::zeros({2});
    CHECK_THROWS_AS(dsct::add(a, bad), dsct::ShapeError);
}

TEST_CASE("softmax basics") {
    auto r = dsct::softmax(DT::from({2}, {0, 0}), 0);
    CHECK(r.value(0) == doctest::Approx(0.5));
    CHECK(r.value(1) == doctest::Approx(0.5));

    auto r2 = dsct::softmax(DT::from({2}, {0.0, std::log(3.0)}), 0);
    CHECK(r2.value(0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(r2.value(1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and stability at large magnitude") {
    dsct::Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = DT::randn({4, 6}, rng, trial < 5 ? 1.0 : 1e4);
        auto shifted = dsct::add(x, DT::full({6}, 123.456));
        auto s0 = dsct::softmax(x, 1);
        auto s1 = dsct::softmax(shifted, 1);
        for (size_t i = 0; i < s0.numel(); ++i) CHECK(s0.value(i) == doctest::Approx(s1.value(i)).epsilon(1e-9));
        for (size_t row = 0; row < 4; ++row) {
            double acc = 0;
            for (size_t j = 0; j < 6; ++j) acc += s0.value(row * 6 + j);
            CHECK(std::abs(acc - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("reduce_moments oracle values") {
    auto [m1, v1] = dsct::reduce_moments(DT::full({4}, 7.5), 0);
    CHECK(m1.value(0) == doctest::Approx(7.5));
    CHECK(v1.value(0) == doctest::Approx(0.0));

    auto [m2, v2] = dsct::reduce_moments(DT::from({2}, {-1, 1}), 0);
    CHECK(m2.value(0) == doctest::Approx(0.0));
    CHECK(v2.value(0) == doctest::Approx(1.0));

    // hand formula: mean 2, population variance ((1)^2+(0)^2+(1)^2)/3 = 2/3
    auto [m3, v3] = dsct::reduce_moments(DT::from({3}, {1, 2, 3}), 0);
    CHECK(m3.value(0) == doctest::Approx(2.0));
    CHECK(v3.value(0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("backward basics") {
    auto x = DT::from({3}, {1, 2, 3});
    x.set_requires_grad();
    dsct::sum(x).backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    auto x2 = DT::from({1}, {2.0});
    x2.set_requires_grad();
    dsct::sum(dsct::mul(x2, x2)).backward();
    CHECK(x2.grad()[0] == doctest::Approx(4.0)); // d(x^2)/dx at 2
}

TEST_CASE("backward rejects non-scalar seed and double invocation") {
    auto x = DT::from({2}, {1, 2});
    x.set_requires_grad();
    auto y = dsct::mul(x, x);
    CHECK_THROWS_AS(y.backward(), dsct::ContractError);

    auto loss = dsct::sum(y);
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), dsct::StateError);
}

TEST_CASE("diamond graph accumulates both paths") {
    // y = sum(x*x + x*x) ; each path contributes 2x
    auto x = DT::from({2}, {3.0, -1.5});
    x.set_requires_grad();
    auto a = dsct::mul(x, x);
    auto y = dsct::sum(dsct::add(a, a));
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(4 * 3.0));
    CHECK(x.grad()[1] == doctest::Approx(4 * -1.5));

    // separately computed single paths sum to the same thing
    auto x2 = DT::from({2}, {3.0, -1.5});
    x2.set_requires_grad();
    dsct::sum(dsct::mul(x2, x2)).backward();
    CHECK(2 * x2.grad()[0] == doctest::Approx(x.grad()[0]));
}

TEST_CASE("grad_check on closed forms") {
    // f = sum of squares: analytic gradient 2x
    auto f = [](const DT& t) { return dsct::sum(dsct::mul(t, t)); };
    dsct::Rng rng(11);
    auto x = DT::randn({5}, rng);
    CHECK(dsct::grad_check(f, x, 1e-5) <= 1e-6);

    // linear f: central differences are exact up to rounding
    auto lin = [](const DT& t) { return dsct::sum(dsct::scale(t, 3.25)); };
    CHECK(dsct::grad_check(lin, x, 1e-5) <= 1e-9);

    CHECK_THROWS_AS(dsct::grad_check(f, x, 0.0), dsct::ContractError);
    CHECK_THROWS_AS(dsct::grad_check(f, x, -1.0), dsct::ContractError);
}

TEST_CASE("grad_check across op library") {
    dsct::Rng rng(23);
    auto w = DT::randn({4, 3}, rng);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = DT::randn({2, 4}, rng);
        auto f = [&](const DT& t) {
            auto h = dsct::matmul(t, w);
            h = dsct::relu(h);
            h = dsct::softmax(h, 1);
            auto ls = dsct::log_softmax(dsct::matmul(t, w), 1);
            auto m = dsct::reduce_mean(t, 1);
            auto v = dsct::reduce_var(t, 1);
            auto tr = dsct::transpose(t);
            auto parts = dsct::concat_cols<double>({dsct::slice_cols(t, 0, 2), dsct::slice_cols(t, 2, 2)});
            auto scaled = dsct::scale_rows(parts, dsct::reduce_mean(parts, 1));
            return dsct::sum(dsct::add(
                dsct::add(dsct::sum(h), dsct::sum(ls)),
                dsct::add(dsct::add(dsct::sum(m), dsct::sum(v)),
                          dsct::add(dsct::sum(tr), dsct::sum(scaled)))));
        };
        CHECK(dsct::grad_check(f, x, 1e-5) <= 1e-4);
    }
}

TEST_CASE("gather and pick gradients") {
    auto table = DT::from({3, 2}, {1, 2, 3, 4, 5, 6});
    table.set_requires_grad();
    auto g = dsct::gather_rows(table, {2, 0, 2});
    CHECK(g.values() == std::vector<double>{5, 6, 1, 2, 5, 6});
    dsct::sum(g).backward();
    CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
    CHECK_THROWS_AS(dsct::gather_rows(table, {3}), dsct::ContractError);

    auto x = DT::from({2, 3}, {1, 2, 3, 4, 5, 6});
    x.set_requires_grad();
    auto p = dsct::pick_per_row(x, {2, 0});
    CHECK(p.values() == std::vector<double>{3, 4});
    dsct::sum(p).backward();
    CHECK(x.grad() == std::vector<double>{0, 0, 1, 1, 0, 0});
}

TEST_CASE("straight_through passes values forward and grads back") {
    auto x = DT::from({2}, {0.3, 0.7});
    x.set_requires_grad();
    auto st = dsct::straight_through(x, {0.0, 1.0});
    CHECK(st.values() == std::vector<double>{0.0, 1.0});
    dsct::sum(dsct::mul(st, DT::from({2}, {2.0, 5.0}))).backward();
    CHECK(x.grad() == std::vector<double>{2.0, 5.0});
}

TEST_CASE("dropout") {
    dsct::Rng rng(5);
    auto x = DT::full({100}, 1.0);
    CHECK(dsct::dropout(x, 1.0, rng, true).values() == x.values());
    CHECK(dsct::dropout(x, 0.5, rng, false).values() == x.values()); // inference identity
    CHECK_THROWS_AS(dsct::dropout(x, 0.0, rng, true), dsct::ContractError);
    CHECK_THROWS_AS(dsct::dropout(x, 1.5, rng, true), dsct::ContractError);

    // empirical keep fraction over 1e5 draws at keep 0.9
    size_t kept = 0;
    const size_t n = 100000;
    auto big = DT::full({n}, 1.0);
    auto dropped = dsct::dropout(big, 0.9, rng, true);
    for (size_t i = 0; i < n; ++i)
        if (dropped.value(i) != 0.0) ++kept;
    CHECK(double(kept) / double(n) == doctest::Approx(0.9).epsilon(0.012));
}

TEST_CASE("rng determinism and forking") {
    dsct::Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
    auto child = a.fork("data");
    auto child2 = dsct::Rng(42).fork("data");
    CHECK(child.next_u64() == child2.next_u64());
    CHECK(dsct::Rng(42).fork("data").next_u64() != dsct::Rng(42).fork("init").next_u64());

    dsct::Rng c(42);
    c.next_u64();
    c.next_u64();
    dsct::Rng resumed(c.seed(), c.counter());
    CHECK(resumed.next_u64() == c.next_u64());
}
