#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <doctest.h>

#include "gfl/common.hpp"
#include "gfl/gradcheck.hpp"
#include "gfl/losses.hpp"

using namespace gfl;

namespace {

// log of a probability computed directly, as an independent oracle for the stable forms.
double plain_focal(double p, int y, double gamma)
{
    const double pt = y == 1 ? p : 1.0 - p;
    return -std::pow(1.0 - pt, gamma) * std::log(pt);
}

double plain_qfl(double s, double y, double beta)
{
    return -std::pow(std::abs(y - s), beta) * ((1.0 - y) * std::log(1.0 - s) + y * std::log(s));
}

}   // namespace

TEST_CASE("focal loss values")
{
    const double expected = -0.25 * std::log(0.5);
    CHECK(focal_loss(0.0, 1, 2.0).value == doctest::Approx(expected).epsilon(1e-14));
    CHECK(focal_loss(0.0, 1, 2.0).value == doctest::Approx(0.1732868).epsilon(1e-7));
    CHECK(focal_loss(30.0, 1, 2.0).value < 1e-12);
    CHECK(focal_loss(0.0, 1, 0.0).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Rng rng(3);
    std::uniform_real_distribution<double> x(-6.0, 6.0);
    for (int k = 0; k < 200; ++k) {
        const double logit = x(rng);
        const int y = k % 2;
        CHECK(focal_loss(logit, y, 1.5).value == doctest::Approx(plain_focal(sigmoid(logit), y, 1.5)).epsilon(1e-10));
    }
}

TEST_CASE("focal loss stays finite at saturation")
{
    const LossEval e = focal_loss(-800.0, 1, 2.0);
    CHECK(std::isfinite(e.value));
    CHECK(e.value == doctest::Approx(800.0));
    CHECK(std::isfinite(focal_loss(800.0, 0, 2.0).grad));
}

TEST_CASE("focal loss rejects bad input")
{
    CHECK_THROWS_AS(focal_loss(std::numeric_limits<double>::quiet_NaN(), 1, 2.0), DomainError);
    CHECK_THROWS_AS(focal_loss(std::numeric_limits<double>::infinity(), 0, 2.0), DomainError);
    CHECK_THROWS_AS(focal_loss(0.0, 2, 2.0), DomainError);
    CHECK_THROWS_AS(focal_loss(0.0, 1, -1.0), DomainError);
}

TEST_CASE("qfl values")
{
    CHECK(qfl(0.0, 0.5, 2.0).value == 0.0);
    const double logit01 = logit(0.1);
    CHECK(qfl(logit01, 0.0, 2.0).value == doctest::Approx(-0.01 * std::log(0.9)).epsilon(1e-12));
    CHECK(qfl(logit01, 0.0, 2.0).value == doctest::Approx(0.0010536).epsilon(1e-4));

    Rng rng(5);
    std::uniform_real_distribution<double> x(-6.0, 6.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
        const double logit_k = x(rng);
        const double y = unit(rng);
        CHECK(qfl(logit_k, y, 2.0).value == doctest::Approx(plain_qfl(sigmoid(logit_k), y, 2.0)).epsilon(1e-9));
        const double gamma = 3.0 * unit(rng);
        CHECK(qfl(logit_k, 1.0, gamma).value == doctest::Approx(focal_loss(logit_k, 1, gamma).value).epsilon(1e-13));
    }
}

TEST_CASE("qfl is zero exactly at sigma == y and positive elsewhere")
{
    for (double y : {0.1, 0.3, 0.5, 0.8}) {
        const double at = logit(y);
        CHECK(std::abs(qfl(at, y, 2.0).value) < 1e-15);
        CHECK(qfl(at + 0.1, y, 2.0).value > 0.0);
        CHECK(qfl(at - 0.1, y, 2.0).value > 0.0);
    }
}

TEST_CASE("qfl rejects labels outside [0, 1]")
{
    CHECK_THROWS_AS(qfl(0.0, -0.01, 2.0), DomainError);
    CHECK_THROWS_AS(qfl(0.0, 1.01, 2.0), DomainError);
    CHECK_THROWS_AS(qfl(0.0, 0.5, -1.0), DomainError);
}

TEST_CASE("dfl values")
{
    const Support s{0.0, 16, 1.0};
    std::vector<double> onehot(17, -1e3);
    onehot[2] = 0.0;
    CHECK(dfl(onehot, 2.0, s).value == doctest::Approx(0.0).scale(1.0));

    std::vector<double> z(17, -1e3);
    z[2] = std::log(0.7);
    z[3] = std::log(0.3);
    const double entropy = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));
    const VectorLossEval e = dfl(z, 2.3, s);
    CHECK(e.value == doctest::Approx(entropy).epsilon(1e-12));
    CHECK(e.value == doctest::Approx(0.6108643).epsilon(1e-7));
    for (double g : e.grad) {
        CHECK(std::abs(g) < 1e-10);
    }
}

TEST_CASE("dfl gradient sums to zero")
{
    Rng rng(9);
    std::normal_distribution<double> n01(0.0, 2.0);
    std::uniform_real_distribution<double> target(0.0, 12.0);
    const Support s{0.0, 12, 1.0};
    for (int k = 0; k < 100; ++k) {
        std::vector<double> z(13);
        for (double& v : z) {
            v = n01(rng);
        }
        double sum = 0.0;
        for (double g : dfl(z, target(rng), s).grad) {
            sum += g;
        }
        CHECK(std::abs(sum) < 1e-12);
    }
}

TEST_CASE("dfl knot weights are normalised by the interval")
{
    // With delta = 2 the target 5 sits halfway between knots 4 and 6.
    const Support s{0.0, 8, 2.0};
    std::vector<double> z(9, 0.0);
    const double lp = -std::log(9.0);
    CHECK(dfl(z, 5.0, s).value == doctest::Approx(-lp).epsilon(1e-14));
}

TEST_CASE("dfl errors")
{
    const Support s{0.0, 4, 1.0};
    CHECK_THROWS_AS(dfl(std::vector<double>(3, 0.0), 1.0, s), ConfigError);
    CHECK_THROWS_AS(dfl(std::vector<double>(5, 0.0), 1.0, Support{0.0, 0, 1.0}), ConfigError);
    std::vector<double> bad(5, 0.0);
    bad[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(dfl(bad, 1.0, s), DomainError);
}

TEST_CASE("gfl values and specialisations")
{
    CHECK(gfl::gfl({0.0, 1.0, 0.7, 0.3, 0.3}, 2.0).value == doctest::Approx(0.0).scale(1.0));

    // y in {0, 1}, beta = gamma: focal loss on p = p_yr.
    for (double p : {0.1, 0.4, 0.9}) {
        for (int y : {0, 1}) {
            const double v = gfl::gfl({0.0, 1.0, 1.0 - p, p, static_cast<double>(y)}, 2.0).value;
            CHECK(v == doctest::Approx(plain_focal(p, y, 2.0)).epsilon(1e-12));
        }
    }

    // beta = 0 restricted to two unit-spaced knots: DFL.
    const Support s{0.0, 6, 1.0};
    std::vector<double> z(7, -1e3);
    z[3] = std::log(0.25);
    z[4] = std::log(0.75);
    CHECK(gfl::gfl({3.0, 4.0, 0.25, 0.75, 3.6}, 0.0).value == doctest::Approx(dfl(z, 3.6, s).value).epsilon(1e-12));
}

TEST_CASE("gfl saturates instead of throwing")
{
    const LossEval e = gfl::gfl({0.0, 1.0, 0.0, 1.0, 0.5}, 2.0);
    CHECK(e.saturated);
    CHECK(std::isinf(e.value));
    // A zero probability with a zero coefficient is fine.
    const LossEval ok = gfl::gfl({0.0, 1.0, 0.0, 1.0, 1.0}, 2.0);
    CHECK_FALSE(ok.saturated);
    CHECK(ok.value == 0.0);
}

TEST_CASE("gfl is positive away from its minimiser")
{
    Rng rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
        const double y_l = 5.0 * unit(rng);
        const double y_r = y_l + 0.5 + unit(rng);
        const double y = y_l + (y_r - y_l) * (0.05 + 0.9 * unit(rng));
        const GflMinimizer m = gfl_minimizer(y_l, y_r, y);
        CHECK(gfl::gfl({y_l, y_r, m.p_yl, m.p_yr, y}, 2.0).value == doctest::Approx(0.0).scale(1.0));
        for (double eps : {-1e-3, 1e-3}) {
            CHECK(gfl::gfl({y_l, y_r, m.p_yl + eps, m.p_yr - eps, y}, 2.0).value > 0.0);
        }
    }
}

TEST_CASE("gfl rejects invalid nodes")
{
    CHECK_THROWS_AS(gfl::gfl({1.0, 1.0, 0.5, 0.5, 1.0}, 2.0), DomainError);
    CHECK_THROWS_AS(gfl::gfl({0.0, 1.0, 0.6, 0.5, 0.5}, 2.0), DomainError);
    CHECK_THROWS_AS(gfl::gfl({0.0, 1.0, 0.5, 0.5, 1.5}, 2.0), DomainError);
}

TEST_CASE("gfl minimiser")
{
    GflMinimizer m = gfl_minimizer(0.0, 1.0, 0.3);
    CHECK(m.p_yl == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(m.p_yr == doctest::Approx(0.3).epsilon(1e-15));
    m = gfl_minimizer(2.0, 3.0, 2.0);
    CHECK(m.p_yl == 1.0);
    CHECK(m.p_yr == 0.0);
    m = gfl_minimizer(0.0, 4.0, 2.0);
    CHECK(m.p_yl == 0.5);
    CHECK(m.p_yr == 0.5);
    CHECK_THROWS_AS(gfl_minimizer(3.0, 3.0, 3.0), DomainError);

    Rng rng(21);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
        const double y_l = 20.0 * unit(rng) - 10.0;
        const double y_r = y_l + 0.1 + 5.0 * unit(rng);
        const double y = y_l + (y_r - y_l) * unit(rng);
        m = gfl_minimizer(y_l, y_r, y);
        CHECK(std::abs(y_l * m.p_yl + y_r * m.p_yr - y) < 1e-12 * std::max(1.0, std::abs(y)) * 10);
    }
}

TEST_CASE("gaussian nll")
{
    CHECK(gaussian_nll(1.5, 0.0, 1.5).value == 0.0);
    CHECK(gaussian_nll(2.5, 0.0, 1.5).value == doctest::Approx(0.5));
    const GaussianNllEval e = gaussian_nll(3.0, std::log(4.0), 1.0);
    CHECK(e.value == doctest::Approx(4.0 / 8.0 + 0.5 * std::log(4.0)));
    CHECK(e.grad_mu == doctest::Approx(2.0 / 4.0));
    CHECK(e.grad_log_var == doctest::Approx(-4.0 / 8.0 + 0.5));
}

TEST_CASE("specialisation identities")
{
    CHECK(check_specialization(10000, 7) < 1e-12);
    CHECK(check_specialization(1, 3) < 1e-12);
    CHECK(check_specialization(500, 0xffffffffffffULL) < 1e-12);
    CHECK_THROWS_AS(check_specialization(0, 1), DomainError);
}

TEST_CASE("finite-difference suites for the scalar losses")
{
    GradcheckOptions o;
    o.samples = 300;
    for (const GradcheckSuite& s : {check_focal_loss(o), check_qfl(o), check_dfl(o), check_gfl(o),
                                    check_gaussian_nll(o)}) {
        INFO(s.name);
        CHECK(s.coordinates >= 300);
        CHECK(s.passed());
    }
}

TEST_CASE("an injected gradient fault is detected")
{
    GradcheckOptions o;
    o.samples = 100;
    o.inject_fault = true;
    CHECK_FALSE(check_focal_loss(o).passed());
}
