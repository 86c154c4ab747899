#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "gfl/common.hpp"
#include "gfl/geometry.hpp"
#include "gfl/gradcheck.hpp"

using namespace gfl;

TEST_CASE("iou")
{
    const Box a{0, 0, 2, 2};
    const Box b{1, 1, 3, 3};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, b) == doctest::Approx(1.0 / (4.0 + 4.0 - 1.0)).epsilon(1e-15));
    CHECK(iou(a, b) == doctest::Approx(0.1428571).epsilon(1e-6));
    CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
    CHECK(iou(a, Box{2, 0, 4, 2}) == 0.0);
}

TEST_CASE("iou and giou properties")
{
    Rng rng(8);
    std::uniform_real_distribution<double> coord(0.0, 10.0);
    std::uniform_real_distribution<double> size(0.1, 5.0);
    const auto random_box = [&] {
        const double x = coord(rng);
        const double y = coord(rng);
        return Box{x, y, x + size(rng), y + size(rng)};
    };
    for (int k = 0; k < 2000; ++k) {
        const Box a = random_box();
        const Box b = random_box();
        CHECK(iou(a, b) == iou(b, a));
        CHECK(iou(a, b) >= 0.0);
        CHECK(iou(a, b) <= 1.0);
        const double g = giou(a, b);
        CHECK(g > -1.0);
        CHECK(g <= 1.0);
        if (a.contains(b.x1, b.y1) && a.contains(b.x2, b.y2)) {
            CHECK(g == doctest::Approx(iou(a, b)).epsilon(1e-14));
        }
        CHECK(g <= iou(a, b) + 1e-15);
    }
}

TEST_CASE("giou loss values")
{
    const SideOffsets t{1.0, 2.0, 1.5, 0.5};
    CHECK(giou_loss(t, t).value == doctest::Approx(0.0).scale(1.0));

    // Unit-stride boxes (0,0,1,1) and (2,2,3,3): union 2, enclosing 9.
    const GridPoint origin{0.0, 0.0, 1.0, 0};
    const SideOffsets p = encode(GridPoint{0.5, 0.5, 1.0, 0}, Box{0, 0, 1, 1});
    const SideOffsets q = encode(GridPoint{2.5, 2.5, 1.0, 0}, Box{2, 2, 3, 3});
    const Box pb = decode(GridPoint{0.5, 0.5, 1.0, 0}, p);
    const Box qb = decode(GridPoint{2.5, 2.5, 1.0, 0}, q);
    const double expected_giou = 0.0 - (9.0 - 2.0) / 9.0;
    CHECK(giou(pb, qb) == doctest::Approx(expected_giou).epsilon(1e-15));
    CHECK(giou_box_loss(pb, qb).value == doctest::Approx(1.0 - expected_giou).epsilon(1e-15));
    CHECK(giou_box_loss(pb, qb).value == doctest::Approx(1.7778).epsilon(1e-4));
    (void)origin;
}

TEST_CASE("giou loss gradients match finite differences")
{
    GradcheckOptions o;
    o.samples = 1000;
    const GradcheckSuite s = check_giou_loss(o);
    CHECK(s.points >= 250);
    CHECK(s.coordinates >= 1000);
    CHECK(s.max_rel_error < kScalarTolerance);
}

TEST_CASE("giou loss on a degenerate prediction is finite")
{
    const OffsetLossEval e = giou_loss(SideOffsets{0, 0, 0, 0}, SideOffsets{1, 1, 1, 1});
    CHECK(std::isfinite(e.value));
    for (double g : e.grad) {
        CHECK(std::isfinite(g));
    }
}

TEST_CASE("centerness")
{
    CHECK(centerness({2, 2, 2, 2}) == 1.0);
    CHECK(centerness({1, 2, 3, 2}) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-15));
    CHECK(centerness({1, 2, 3, 2}) == doctest::Approx(0.5773503).epsilon(1e-7));
    const double near_edge = std::sqrt(0.01 / 7.99);
    CHECK(centerness({0.01, 4, 7.99, 4}) == doctest::Approx(near_edge).epsilon(1e-15));
    CHECK(centerness({0.01, 4, 7.99, 4}) == doctest::Approx(0.0354).epsilon(2e-3));
    CHECK(centerness({0, 1, 1, 1}) == 0.0);

    Rng rng(10);
    std::uniform_real_distribution<double> off(0.01, 10.0);
    for (int k = 0; k < 1000; ++k) {
        const SideOffsets o{off(rng), off(rng), off(rng), off(rng)};
        const double c = centerness(o);
        CHECK(c <= 1.0);
        CHECK(c <= std::sqrt(std::min(o.l, o.r) / std::max(o.l, o.r)) + 1e-15);
    }
}

TEST_CASE("encode and decode")
{
    const SideOffsets o = encode(GridPoint{16, 16, 8, 0}, Box{8, 8, 40, 24});
    CHECK(o.l == (16.0 - 8.0) / 8.0);
    CHECK(o.t == (16.0 - 8.0) / 8.0);
    CHECK(o.r == (40.0 - 16.0) / 8.0);
    CHECK(o.b == (24.0 - 16.0) / 8.0);
    CHECK(o.r == 3.0);

    const SideOffsets c = encode(GridPoint{5, 7, 2, 0}, Box{1, 3, 9, 11});
    CHECK(c.l == c.r);
    CHECK(c.t == c.b);

    CHECK_THROWS_AS(encode(GridPoint{0, 0, 8, 0}, Box{8, 8, 40, 24}), DomainError);

    Rng rng(12);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
        const Box b{100 * unit(rng), 100 * unit(rng), 0, 0};
        const Box box{b.x1, b.y1, b.x1 + 0.5 + 50 * unit(rng), b.y1 + 0.5 + 50 * unit(rng)};
        const GridPoint p{box.x1 + box.width() * unit(rng), box.y1 + box.height() * unit(rng), 8.0, 0};
        const Box back = decode(p, encode(p, box));
        worst = std::max({worst, std::abs(back.x1 - box.x1), std::abs(back.y1 - box.y1), std::abs(back.x2 - box.x2),
                          std::abs(back.y2 - box.y2)});
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("side offsets indexing")
{
    SideOffsets o{1, 2, 3, 4};
    CHECK(o[0] == 1);
    CHECK(o[3] == 4);
    o[2] = 7;
    CHECK(o.r == 7);
}

TEST_CASE("label histogram")
{
    const std::vector<double> same(50, 0.3);
    const Histogram h = label_histogram(same, 10);
    int occupied = 0;
    for (long long c : h.counts) {
        occupied += c > 0 ? 1 : 0;
    }
    CHECK(occupied == 1);
    CHECK(h.total() == 50);

    CHECK(label_histogram(std::vector<double>{}, 4).counts.empty());
    CHECK_THROWS_AS(label_histogram(same, 0), ConfigError);

    const Histogram edges = label_histogram(std::vector<double>{0.0, 1.0, -2.0, 3.0}, 4, std::pair{0.0, 1.0});
    CHECK(edges.counts.front() == 2);
    CHECK(edges.counts.back() == 2);
    CHECK(edges.bin_left(1) == 0.25);
    CHECK(edges.bin_right(3) == 1.0);
}

TEST_CASE("label histogram of uniform values")
{
    // Each bin count is Binomial(N, 1/B): mean N/B, std sqrt(N (1/B)(1 - 1/B)).
    // 4 sigma keeps the family-wise false alarm rate over 20 bins near 1e-3.
    constexpr int n = 100000;
    constexpr int bins = 20;
    Rng rng(14);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) {
        x = unit(rng);
    }
    const Histogram h = label_histogram(v, bins, std::pair{0.0, 1.0});
    const double p = 1.0 / bins;
    const double mean = n * p;
    const double sd = std::sqrt(n * p * (1.0 - p));
    CHECK(h.total() == n);
    for (long long c : h.counts) {
        CHECK(std::abs(static_cast<double>(c) - mean) < 4.0 * sd);
    }
}

TEST_CASE("histogram csv")
{
    const Histogram h = label_histogram(std::vector<double>{0.1, 0.6}, 2, std::pair{0.0, 1.0});
    CHECK(histogram_csv(h) == "bin_left,bin_right,count\n0,0.5,1\n0.5,1,1\n");
    CHECK(histogram_csv(h, "iou", false) == "iou,0,0.5,1\niou,0.5,1,1\n");
}
