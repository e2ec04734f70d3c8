#include "doctest.h"

#include <cmath>
#include <vector>

#include "dsct/nn.hpp"
#include "fixture_params.hpp"

using DT = dsct::TensorT<double>;

namespace {
#include "fixtures/block_golden.inc"

void check_close(const DT& got, const std::vector<double>& want, double tol = 1e-9) {
    REQUIRE(got.numel() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(got.value(i) == doctest::Approx(want[i]).epsilon(tol).scale(1.0));
}
} // namespace

TEST_CASE("layer_norm basic identities") {
    auto p = dsct::LayerNormParamsT<double>::make(4);
    auto constant_row = DT::full({1, 4}, 3.7);
    auto out = dsct::layer_norm(constant_row, p);
    for (size_t i = 0; i < 4; ++i) CHECK(out.value(i) == doctest::Approx(0.0).scale(1.0));

    auto pm = dsct::LayerNormParamsT<double>::make(2);
    auto row = DT::from({1, 2}, {-1.0, 1.0});
    auto norm = dsct::layer_norm(row, pm);
    CHECK(norm.value(0) == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(norm.value(1) == doctest::Approx(1.0).epsilon(1e-7));

    // alpha = 0 annihilates the normalized value, leaving beta
    auto pz = dsct::LayerNormParamsT<double>::make(4);
    std::fill(pz.alpha.values_mut().begin(), pz.alpha.values_mut().end(), 0.0);
    pz.beta.values_mut() = {1, 2, 3, 4};
    dsct::Rng rng(2);
    auto any = DT::randn({3, 4}, rng);
    auto o = dsct::layer_norm(any, pz);
    for (size_t r = 0; r < 3; ++r)
        for (size_t j = 0; j < 4; ++j) CHECK(o.value(r * 4 + j) == doctest::Approx(double(j + 1)));

    CHECK_THROWS_AS(dsct::layer_norm(DT::zeros({2, 3}), p), dsct::ShapeError);
}

TEST_CASE("layer_norm pre-affine output is normalized") {
    dsct::Rng rng(9);
    auto p = dsct::LayerNormParamsT<double>::make(8); // alpha=1 beta=0: output == xhat
    for (int trial = 0; trial < 20; ++trial) {
        auto x = DT::randn({4, 8}, rng);
        auto y = dsct::layer_norm(x, p);
        for (size_t r = 0; r < 4; ++r) {
            double m = 0, v = 0;
            for (size_t j = 0; j < 8; ++j) m += y.value(r * 8 + j);
            m /= 8;
            for (size_t j = 0; j < 8; ++j) {
                double d = y.value(r * 8 + j) - m;
                v += d * d;
            }
            v /= 8;
            CHECK(std::abs(m) <= 1e-9);
            CHECK(std::abs(v - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("layer_norm golden fixture") {
    auto p = fixture::ln_params<double>(4, 800);
    auto x = fixture::filled<double>({2, 4}, 801);
    check_close(dsct::layer_norm(x, p), layer_norm_out);
}

TEST_CASE("attention with a single key puts full weight on it") {
    dsct::Rng rng(4);
    auto p = dsct::AttentionParamsT<double>::make(4, 2, rng);
    auto q = DT::randn({3, 4}, rng);
    auto kv = DT::randn({1, 4}, rng);
    auto out = dsct::multi_head_attention(q, kv, kv, p);
    // softmax over one key is 1, so output = (W_v kv row) W_o for every query
    auto expect = dsct::matmul(dsct::matmul(kv, p.wv), p.wo);
    for (size_t r = 0; r < 3; ++r)
        for (size_t j = 0; j < 4; ++j)
            CHECK(out.value(r * 4 + j) == doctest::Approx(expect.value(j)).epsilon(1e-12));
}

TEST_CASE("identical keys give the uniform average of values") {
    dsct::Rng rng(5);
    auto p = dsct::AttentionParamsT<double>::make(4, 2, rng);
    auto q = DT::randn({2, 4}, rng);
    auto one_key = DT::randn({1, 4}, rng);
    std::vector<double> rep;
    for (int i = 0; i < 5; ++i)
        rep.insert(rep.end(), one_key.values().begin(), one_key.values().end());
    auto keys = DT::from({5, 4}, rep);
    dsct::Rng rng2(6);
    auto values = DT::randn({5, 4}, rng2);
    auto out = dsct::multi_head_attention(q, keys, values, p);

    // uniform average over value rows, then the same projections
    std::vector<double> avg(4, 0.0);
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = 0; j < 4; ++j) avg[j] += values.value(i * 4 + j) / 5.0;
    auto expect = dsct::matmul(dsct::matmul(DT::from({1, 4}, avg), p.wv), p.wo);
    for (size_t r = 0; r < 2; ++r)
        for (size_t j = 0; j < 4; ++j)
            CHECK(out.value(r * 4 + j) == doctest::Approx(expect.value(j)).epsilon(1e-9));
}

TEST_CASE("single-head golden fixture") {
    auto p = fixture::attn_params<double>(2, 1, 500);
    auto q = fixture::filled<double>({3, 2}, 501);
    auto k = fixture::filled<double>({4, 2}, 502);
    auto v = fixture::filled<double>({4, 2}, 503);
    check_close(dsct::multi_head_attention(q, k, v, p), attn_single_head);
}

TEST_CASE("masked self-attention causality") {
    auto p = fixture::attn_params<double>(4, 2, 600);
    auto x = fixture::filled<double>({3, 4}, 601);
    auto out = dsct::masked_self_attention(x, p);
    check_close(out, attn_masked_self);

    // perturbing the last token leaves earlier outputs bit-identical
    auto x2 = fixture::filled<double>({3, 4}, 601);
    for (size_t j = 0; j < 4; ++j) x2.values_mut()[2 * 4 + j] += 10.0;
    auto out2 = dsct::masked_self_attention(x2, p);
    for (size_t i = 0; i < 2 * 4; ++i) CHECK(out.value(i) == out2.value(i));

    // position 0 depends only on token 0
    auto x3 = fixture::filled<double>({3, 4}, 601);
    for (size_t j = 0; j < 4; ++j) x3.values_mut()[1 * 4 + j] -= 5.0;
    auto out3 = dsct::masked_self_attention(x3, p);
    for (size_t j = 0; j < 4; ++j) CHECK(out.value(j) == out3.value(j));
}

TEST_CASE("causality for all lengths up to 8") {
    dsct::Rng rng(77);
    for (size_t len = 1; len <= 8; ++len) {
        auto p = dsct::AttentionParamsT<double>::make(8, 4, rng);
        auto x = DT::randn({len, 8}, rng);
        auto base = dsct::masked_self_attention(x, p);
        for (size_t t = 0; t < len; ++t) {
            auto xp = DT::from(x.shape(), x.values());
            xp.values_mut()[t * 8 + 3] += 1.25;
            auto out = dsct::masked_self_attention(xp, p);
            for (size_t i = 0; i < t; ++i)
                for (size_t j = 0; j < 8; ++j) CHECK(base.at(i, j) == out.at(i, j));
            bool changed = false;
            for (size_t j = 0; j < 8; ++j)
                if (base.at(t, j) != out.at(t, j)) changed = true;
            CHECK(changed);
        }
    }
}

TEST_CASE("attention rows are distributions, exactly zero where forbidden") {
    dsct::Rng rng(13);
    auto p = dsct::AttentionParamsT<double>::make(4, 2, rng);
    auto x = DT::randn({5, 4}, rng);
    auto mask = dsct::causal_mask<double>(5);
    std::vector<DT> probs;
    dsct::multi_head_attention(x, x, x, p, &mask, &probs);
    REQUIRE(probs.size() == 2);
    for (const auto& pr : probs)
        for (size_t i = 0; i < 5; ++i) {
            double rowsum = 0;
            for (size_t j = 0; j < 5; ++j) {
                const double w = pr.at(i, j);
                CHECK(w >= 0.0);
                if (j > i) CHECK(w == 0.0);
                rowsum += w;
            }
            CHECK(std::abs(rowsum - 1.0) <= 1e-10);
        }
}

TEST_CASE("mask with an all-forbidden row is rejected") {
    dsct::Rng rng(14);
    auto p = dsct::AttentionParamsT<double>::make(4, 2, rng);
    auto x = DT::randn({2, 4}, rng);
    auto mask = DT::zeros({2, 2});
    mask.values_mut() = {0.0, dsct::kMaskForbid, dsct::kMaskForbid, dsct::kMaskForbid};
    CHECK_THROWS_AS(dsct::multi_head_attention(x, x, x, p, &mask), dsct::ContractError);
}

TEST_CASE("pwff") {
    // zero weights and biases give zero output
    auto p = dsct::PwffParamsT<double>{DT::zeros({4, 8}), DT::zeros({8}), DT::zeros({8, 4}),
                                       DT::zeros({4}), dsct::Activation::Relu};
    dsct::Rng rng(15);
    auto x = DT::randn({2, 4}, rng);
    auto zero_out = dsct::pwff(x, p);
    for (double v : zero_out.values()) CHECK(v == 0.0);

    // identity weights with positive input pass through unchanged
    auto eye = DT::zeros({4, 4});
    for (size_t i = 0; i < 4; ++i) eye.values_mut()[i * 4 + i] = 1.0;
    auto pid = dsct::PwffParamsT<double>{eye, DT::zeros({4}), eye, DT::zeros({4}),
                                         dsct::Activation::Relu};
    auto pos = DT::from({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(dsct::pwff(pos, pid).values() == pos.values());

    check_close(dsct::pwff(fixture::filled<double>({2, 4}, 701),
                           fixture::pwff_params<double>(4, 8, 700)),
                pwff_out);
}

TEST_CASE("sinusoidal positional encoding") {
    auto pe = dsct::sinusoidal_pe<double>(4, 6);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(pe.value(2 * i) == doctest::Approx(0.0));     // sin 0
        CHECK(pe.value(2 * i + 1) == doctest::Approx(1.0)); // cos 0
    }
    CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)));
    for (double v : pe.values()) {
        CHECK(v <= 1.0);
        CHECK(v >= -1.0);
    }
    CHECK_THROWS_AS(dsct::sinusoidal_pe<double>(4, 5), dsct::ContractError);
}

TEST_CASE("every block passes grad_check") {
    dsct::Rng rng(21);
    auto attn = fixture::attn_params<double>(8, 2, 2500);
    auto ln = fixture::ln_params<double>(8, 2600);
    auto ff = fixture::pwff_params<double>(8, 12, 2700);

    for (int trial = 0; trial < 20; ++trial) {
        auto x = DT::randn({4, 8}, rng);
        auto f_ln = [&](const DT& t) { return dsct::sum(dsct::layer_norm(t, ln)); };
        CHECK(dsct::grad_check(f_ln, x) <= 1e-4);

        auto f_attn = [&](const DT& t) { return dsct::sum(dsct::masked_self_attention(t, attn)); };
        CHECK(dsct::grad_check(f_attn, x) <= 1e-4);

        auto f_ff = [&](const DT& t) { return dsct::sum(dsct::pwff(t, ff)); };
        CHECK(dsct::grad_check(f_ff, x) <= 1e-4);
    }

    // parameter gradients too (scale of a weight matrix)
    auto x = DT::randn({4, 8}, rng);
    auto f_wq = [&](const DT& w) {
        auto p = attn;
        p.wq = w;
        return dsct::sum(dsct::multi_head_attention(x, x, x, p));
    };
    CHECK(dsct::grad_check(f_wq, DT::from({8, 8}, attn.wq.values())) <= 1e-4);
}
