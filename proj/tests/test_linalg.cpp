#include <doctest.h>

#include <cmath>

#include "fedmmkt/linalg.hpp"
#include "test_support.hpp"

using namespace fedmmkt;

TEST_CASE("softmax matches direct evaluation") {
    const ProbVec p = softmax({1.0, 2.0, 3.0});
    // Frozen from an arbitrary-precision evaluation of e^x / sum e^x.
    CHECK(p[0] == doctest::Approx(0.09003057).epsilon(1e-5));
    CHECK(p[1] == doctest::Approx(0.24472847).epsilon(1e-5));
    CHECK(p[2] == doctest::Approx(0.66524096).epsilon(1e-5));
}

TEST_CASE("softmax symmetry and temperature") {
    const ProbVec p = softmax({0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    const ProbVec hot = softmax({1.0, 5.0}, 0.1);
    const ProbVec scaled = softmax({10.0, 50.0}, 1.0);
    CHECK(hot[0] == doctest::Approx(scaled[0]).epsilon(1e-12));
}

TEST_CASE("softmax rejects bad input") {
    CHECK_THROWS_AS(softmax({1.0, std::nan("")}), InvalidInputError);
    CHECK_THROWS_AS(softmax({1.0, 2.0}, 0.0), InvalidInputError);
    CHECK_THROWS_AS(softmax({}), InvalidInputError);
}

TEST_CASE("softmax properties over random inputs") {
    RngStream rng(42);
    for (int iter = 0; iter < 1000; ++iter) {
        const std::size_t n = 2 + rng.uniform_index(8);
        const Vec v = test::random_vec(n, rng, 3.0);
        const ProbVec p = softmax(v);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += p[i];
        CHECK(std::abs(sum - 1.0) <= 1e-9);

        // Shift invariance.
        Vec shifted = v;
        const double c = rng.normal() * 5.0;
        for (auto& x : shifted) x += c;
        const ProbVec q = softmax(shifted);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-9);

        // argmax preservation (unique max almost surely under the generator).
        std::size_t argmax_v = 0, argmax_p = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (v[i] > v[argmax_v]) argmax_v = i;
            if (p[i] > p[argmax_p]) argmax_p = i;
        }
        CHECK(argmax_v == argmax_p);
    }
}

TEST_CASE("entropy weight analytic values") {
    CHECK(entropy_weight(ProbVec({1.0, 0.0, 0.0})) == 1.0);
    for (std::size_t c : {2, 5, 10, 102}) {
        const ProbVec uniform(Vec(c, 1.0 / static_cast<double>(c)));
        CHECK(entropy_weight(uniform) ==
              doctest::Approx(1.0 / (1.0 + std::log(static_cast<double>(c)))).epsilon(1e-12));
    }
    CHECK(entropy_weight(ProbVec({0.5, 0.5})) == doctest::Approx(0.59061609).epsilon(1e-5));
}

TEST_CASE("entropy weight bounds over random distributions") {
    RngStream rng(7);
    for (int iter = 0; iter < 1000; ++iter) {
        const std::size_t n = 2 + rng.uniform_index(10);
        const ProbVec p(test::random_prob_vec(n, rng));
        const double e = entropy_weight(p);
        CHECK(e > 0.0);
        CHECK(e <= 1.0);
        // Uniform is the minimizer for this dimension.
        CHECK(e >= 1.0 / (1.0 + std::log(static_cast<double>(n))) - 1e-12);
    }
}

TEST_CASE("cosine basics") {
    CHECK(cosine({1.0, 2.0, -1.0}, {1.0, 2.0, -1.0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine({1.0, 2.0}, {2.0, 1.0}) == doctest::Approx(0.8).epsilon(1e-12));

    bool degenerate = false;
    CHECK(cosine({0.0, 0.0}, {1.0, 2.0}, &degenerate) == 0.0);
    CHECK(degenerate);
    CHECK_THROWS_AS(cosine({1.0}, {1.0, 2.0}), InvalidInputError);
}

TEST_CASE("cosine symmetry and scale invariance") {
    RngStream rng(11);
    for (int iter = 0; iter < 1000; ++iter) {
        const std::size_t n = 2 + rng.uniform_index(6);
        const Vec u = test::random_vec(n, rng);
        const Vec v = test::random_vec(n, rng);
        const double a = rng.uniform(0.1, 10.0);
        const double b = rng.uniform(0.1, 10.0);
        Vec ua = u, vb = v;
        for (auto& x : ua) x *= a;
        for (auto& x : vb) x *= b;
        CHECK(std::abs(cosine(u, v) - cosine(v, u)) <= 1e-12);
        CHECK(std::abs(cosine(ua, vb) - cosine(u, v)) <= 1e-9);
    }
}

TEST_CASE("kl divergence values") {
    const ProbVec p({0.3, 0.7});
    CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(kl_divergence(ProbVec({1.0, 0.0}), ProbVec({0.5, 0.5})) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // Frozen from direct evaluation: 0.7 ln(0.7/0.4) + 0.3 ln(0.3/0.6).
    CHECK(kl_divergence(ProbVec({0.7, 0.3}), ProbVec({0.4, 0.6})) ==
          doctest::Approx(0.1837869).epsilon(1e-4));
    CHECK_THROWS_AS(kl_divergence(ProbVec({1.0}), ProbVec({0.5, 0.5})), InvalidInputError);
}

TEST_CASE("kl divergence nonnegative over random pairs") {
    RngStream rng(13);
    for (int iter = 0; iter < 1000; ++iter) {
        const std::size_t n = 2 + rng.uniform_index(12);
        const ProbVec p(test::random_prob_vec(n, rng));
        const ProbVec q(test::random_prob_vec(n, rng));
        CHECK(kl_divergence(p, q) >= 0.0);
    }
}

TEST_CASE("cross entropy") {
    CHECK(cross_entropy(ProbVec({0.0, 1.0}), 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cross_entropy(ProbVec(Vec(10, 0.1)), 3) == doctest::Approx(std::log(10.0)).epsilon(1e-9));
    CHECK(cross_entropy(ProbVec({0.1, 0.9}), 0) == doctest::Approx(2.30259).epsilon(1e-5));
    CHECK_THROWS_AS(cross_entropy(ProbVec({0.5, 0.5}), 2), InvalidInputError);
}

TEST_CASE("cross attention zero-value and residual identities") {
    RngStream rng(17);
    const CAParams params = make_ca_params(8, 4, std::uint64_t{99});
    for (int iter = 0; iter < 1000; ++iter) {
        const Vec q = test::random_vec(8, rng);
        const Vec zero(8, 0.0);
        CHECK(cross_attention(q, zero, params) == q);
    }
    CHECK(cross_attention(Vec(8, 0.0), Vec(8, 0.0), params) == Vec(8, 0.0));
    CHECK_THROWS_AS(cross_attention(Vec(6, 0.0), Vec(8, 0.0), params), InvalidInputError);
}

TEST_CASE("cross attention matches independent reference evaluation") {
    RngStream rng(19);
    const CAParams p4 = make_ca_params(4, 2, std::uint64_t{123});
    const Vec e1{1.0, 0.0, 0.0, 0.0};
    const Vec e2{0.0, 1.0, 0.0, 0.0};
    const Vec got = cross_attention(e1, e2, p4);
    const Vec want = test::reference_cross_attention(e1, e2, p4);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

    const CAParams p12 = make_ca_params(12, 4, std::uint64_t{321});
    for (int iter = 0; iter < 50; ++iter) {
        const Vec q = test::random_vec(12, rng);
        const Vec kv = test::random_vec(12, rng);
        const Vec a = cross_attention(q, kv, p12);
        const Vec b = test::reference_cross_attention(q, kv, p12);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-10));
    }
}

TEST_CASE("cross attention params are deterministic in the seed") {
    const CAParams a = make_ca_params(16, 4, std::uint64_t{5});
    const CAParams b = make_ca_params(16, 4, std::uint64_t{5});
    CHECK(a.w_key.data == b.w_key.data);
    CHECK(a.w_value.data == b.w_value.data);
    CHECK_THROWS_AS(make_ca_params(10, 4, std::uint64_t{5}), InvalidInputError);
}

TEST_CASE("orthonormal rows and linear solve") {
    RngStream rng(23);
    const Mat m = orthonormal_rows(4, 9, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < 9; ++k) d += m(i, k) * m(j, k);
            CHECK(d == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
        }
    }
    CHECK_THROWS_AS(orthonormal_rows(5, 3, rng), InvalidInputError);

    Mat a(3, 3);
    a.data = {4, 1, 0, 1, 3, 1, 0, 1, 2};
    Mat x_true(3, 1);
    x_true.data = {1.0, -2.0, 0.5};
    Mat b(3, 1);
    for (std::size_t r = 0; r < 3; ++r) {
        b(r, 0) = 0.0;
        for (std::size_t c = 0; c < 3; ++c) b(r, 0) += a(r, c) * x_true(c, 0);
    }
    solve_linear(a, b);
    for (std::size_t r = 0; r < 3; ++r)
        CHECK(b(r, 0) == doctest::Approx(x_true(r, 0)).epsilon(1e-10));
}

TEST_CASE("prob vec validates invariants") {
    CHECK_THROWS_AS(ProbVec({0.5, 0.6}), InvalidInputError);
    CHECK_THROWS_AS(ProbVec({-0.1, 1.1}), InvalidInputError);
    CHECK_THROWS_AS(ProbVec({}), InvalidInputError);
}
