#include "gfl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "gfl/common.hpp"
#include "gfl/detector.hpp"
#include "gfl/distrib.hpp"
#include "gfl/geometry.hpp"
#include "gfl/losses.hpp"
#include "gfl/synth.hpp"

namespace gfl {

double relative_error(double analytic, double numeric, double floor)
{
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

double central_difference(const std::function<double(double)>& f, double x, double h)
{
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

namespace {

struct Tracker {
    GradcheckSuite suite;

    Tracker(std::string name, double tolerance)
    {
        suite.name = std::move(name);
        suite.tolerance = tolerance;
    }

    // Rounding noise of the central difference grows with |f|, so the floor does too.
    void compare(double analytic, double numeric, double value)
    {
        const double e = relative_error(analytic, numeric, kRelativeErrorFloor * std::max(1.0, std::abs(value)));
        // NaN must fail the suite.
        suite.max_rel_error = std::isnan(e) ? INFINITY : std::max(suite.max_rel_error, e);
        ++suite.coordinates;
    }
};

double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi)
{
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Support random_support(Rng& rng)
{
    return Support{0.0, uniform_int(rng, 1, 20), uniform(rng, 0.25, 4.0)};
}

std::vector<double> random_logits(Rng& rng, int count)
{
    std::vector<double> v(static_cast<std::size_t>(count));
    for (double& x : v) {
        x = uniform(rng, -4.0, 4.0);
    }
    return v;
}

}   // namespace

GradcheckSuite check_focal_loss(const GradcheckOptions& o)
{
    Tracker t("focal_loss", kScalarTolerance);
    Rng rng(child_seed(o.seed, "gradcheck/focal_loss"));
    for (int i = 0; i < o.samples; ++i) {
        const double x = uniform(rng, -8.0, 8.0);
        const int y = uniform_int(rng, 0, 1);
        const double gamma = uniform(rng, 0.0, 4.0);
        double analytic = focal_loss(x, y, gamma).grad;
        if (o.inject_fault) {
            analytic *= 1.0 + 1e-3;
        }
        t.compare(analytic, central_difference([&](double v) { return focal_loss(v, y, gamma).value; }, x, o.step),
                  focal_loss(x, y, gamma).value);
        ++t.suite.points;
    }
    return t.suite;
}

GradcheckSuite check_qfl(const GradcheckOptions& o)
{
    Tracker t("qfl", kScalarTolerance);
    Rng rng(child_seed(o.seed, "gradcheck/qfl"));
    while (t.suite.points < o.samples) {
        const double x = uniform(rng, -8.0, 8.0);
        const double y = uniform(rng, 0.0, 1.0);
        const double beta = uniform(rng, 0.0, 4.0);
        // |y - sigma|^beta is not differentiable at sigma = y for beta < 1.
        if (std::abs(sigmoid(x) - y) < 1e-2) {
            continue;
        }
        const LossEval e = qfl(x, y, beta);
        t.compare(e.grad, central_difference([&](double v) { return qfl(v, y, beta).value; }, x, o.step), e.value);
        ++t.suite.points;
    }
    return t.suite;
}

GradcheckSuite check_dfl(const GradcheckOptions& o)
{
    Tracker t("dfl", kScalarTolerance);
    Rng rng(child_seed(o.seed, "gradcheck/dfl"));
    for (int i = 0; i < o.samples; ++i) {
        const Support s = random_support(rng);
        std::vector<double> z = random_logits(rng, s.size());
        const double y = uniform(rng, s.y0, s.max());
        const VectorLossEval e = dfl(z, y, s);
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double keep = z[j];
            const double numeric = central_difference(
                [&](double v) {
                    z[j] = v;
                    const double value = dfl(z, y, s).value;
                    z[j] = keep;
                    return value;
                },
                keep, o.step);
            t.compare(e.grad[j], numeric, e.value);
        }
        ++t.suite.points;
    }
    return t.suite;
}

GradcheckSuite check_gfl(const GradcheckOptions& o)
{
    Tracker t("gfl", kScalarTolerance);
    Rng rng(child_seed(o.seed, "gradcheck/gfl"));
    while (t.suite.points < o.samples) {
        GflNode node;
        node.y_l = uniform(rng, -5.0, 5.0);
        node.y_r = node.y_l + uniform(rng, 0.1, 4.0);
        node.y = uniform(rng, node.y_l, node.y_r);
        node.p_yl = uniform(rng, 0.01, 0.99);
        node.p_yr = 1.0 - node.p_yl;
        const double beta = uniform(rng, 0.0, 4.0);
        const double gap = node.y - (node.y_l * node.p_yl + node.y_r * node.p_yr);
        if (std::abs(gap) < 1e-2 * (node.y_r - node.y_l)) {
            continue;
        }
        const double numeric = central_difference(
            [&](double p) {
                GflNode n = node;
                n.p_yl = p;
                n.p_yr = 1.0 - p;
                return gfl(n, beta).value;
            },
            node.p_yl, o.step);
        const LossEval e = gfl(node, beta);
        t.compare(e.grad, numeric, e.value);
        ++t.suite.points;
    }
    return t.suite;
}

GradcheckSuite check_gaussian_nll(const GradcheckOptions& o)
{
    Tracker t("gaussian_nll", kScalarTolerance);
    Rng rng(child_seed(o.seed, "gradcheck/gaussian_nll"));
    for (int i = 0; i < o.samples; ++i) {
        const double mu = uniform(rng, -5.0, 5.0);
        const double lv = uniform(rng, -3.0, 3.0);
        const double y = uniform(rng, -5.0, 5.0);
        const GaussianNllEval e = gaussian_nll(mu, lv, y);
        t.compare(e.grad_mu, central_difference([&](double v) { return gaussian_nll(v, lv, y).value; }, mu, o.step),
                  e.value);
        t.compare(e.grad_log_var,
                  central_difference([&](double v) { return gaussian_nll(mu, v, y).value; }, lv, o.step), e.value);
        ++t.suite.points;
    }
    return t.suite;
}

GradcheckSuite check_giou_loss(const GradcheckOptions& o)
{
    Tracker t("giou_loss", kScalarTolerance);
    Rng rng(child_seed(o.seed, "gradcheck/giou_loss"));
    while (t.suite.points < o.samples) {
        SideOffsets pred;
        SideOffsets target;
        bool near_kink = false;
        for (int s = 0; s < 4; ++s) {
            pred[s] = uniform(rng, 0.1, 8.0);
            target[s] = uniform(rng, 0.1, 8.0);
            near_kink = near_kink || std::abs(pred[s] - target[s]) < 1e-3;
        }
        if (near_kink) {
            continue;
        }
        const OffsetLossEval e = giou_loss(pred, target);
        for (int s = 0; s < 4; ++s) {
            const double numeric = central_difference(
                [&](double v) {
                    SideOffsets p = pred;
                    p[s] = v;
                    return giou_loss(p, target).value;
                },
                pred[s], o.step);
            t.compare(e.grad[static_cast<std::size_t>(s)], numeric, e.value);
        }
        ++t.suite.points;
    }
    return t.suite;
}

GradcheckSuite check_expectation(const GradcheckOptions& o)
{
    Tracker t("expectation", kScalarTolerance);
    Rng rng(child_seed(o.seed, "gradcheck/expectation"));
    for (int i = 0; i < o.samples; ++i) {
        const Support s = random_support(rng);
        std::vector<double> z = random_logits(rng, s.size());
        const std::vector<double> jac = expectation_jacobian(z, s);
        const double mean = expectation(softmax(z), s);
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double keep = z[j];
            const double numeric = central_difference(
                [&](double v) {
                    z[j] = v;
                    const double value = expectation(softmax(z), s);
                    z[j] = keep;
                    return value;
                },
                keep, o.step);
            t.compare(jac[j], numeric, mean);
        }
        ++t.suite.points;
    }
    return t.suite;
}

namespace {

SceneSpec gradcheck_scene_spec(std::uint64_t seed)
{
    SceneSpec s;
    s.width = 32.0;
    s.height = 32.0;
    s.stride = 8.0;
    s.min_boxes = 1;
    s.max_boxes = 2;
    s.min_size = 10.0;
    s.max_size = 24.0;
    s.margin = 2.0;
    s.seed = seed;
    return s;
}

}   // namespace

std::vector<GradcheckSuite> check_total_loss(const GradcheckOptions& o)
{
    constexpr int kCoordinatesPerPoint = 4;
    const LossConfig loss{};
    const SceneSpec spec = gradcheck_scene_spec(child_seed(o.seed, "gradcheck/scenes"));
    std::vector<GradcheckSuite> out;
    for (HeadVariant variant :
         {HeadVariant::Joint, HeadVariant::SeparateIou, HeadVariant::SeparateCenterness, HeadVariant::NoQuality}) {
        for (RegressorKind regressor : {RegressorKind::Dirac, RegressorKind::Gaussian, RegressorKind::General}) {
            const std::string name = std::string("total_loss/") + to_string(variant) + "/" + to_string(regressor);
            Tracker t(name, kCompositeTolerance);
            Rng rng(child_seed(o.seed, name));
            std::normal_distribution<double> jitter(0.0, 0.3);
            int instance = 0;
            while (t.suite.points < o.samples) {
                const Scene scene = generate_scene(spec, instance);
                const Assignment a = assign(scene);
                HeadShape shape;
                shape.mode = instance % 2 == 0 ? HeadMode::Tabular : HeadMode::Mlp;
                shape.variant = variant;
                shape.regressor = regressor;
                shape.support = Support{0.0, 6, 1.0};
                shape.num_classes = spec.num_classes;
                shape.feature_dim = scene.feature_dim;
                shape.hidden = 8;
                shape.num_points = scene.num_points();
                HeadParams p = init_params(shape, child_seed(o.seed, static_cast<std::uint64_t>(instance)));
                for (double& v : p.values) {
                    v += jitter(rng);
                }
                ++instance;

                const DetachedTerms frozen = detached_terms(p, scene, a, loss);
                const LossResult r = total_loss(p, scene, a, loss, &frozen);
                std::uniform_int_distribution<std::size_t> pick(0, p.values.size() - 1);
                for (int c = 0; c < kCoordinatesPerPoint; ++c) {
                    const std::size_t k = pick(rng);
                    const double keep = p.values[k];
                    const double numeric = central_difference(
                        [&](double v) {
                            p.values[k] = v;
                            const double value = total_loss(p, scene, a, loss, &frozen).breakdown.total;
                            p.values[k] = keep;
                            return value;
                        },
                        keep, o.step);
                    t.compare(r.grad[k], numeric, r.breakdown.total);
                }
                ++t.suite.points;
            }
            out.push_back(t.suite);
        }
    }
    return out;
}

std::vector<GradcheckSuite> run_gradchecks(const GradcheckOptions& o)
{
    std::vector<GradcheckSuite> suites{check_focal_loss(o), check_qfl(o),          check_dfl(o),
                                       check_gfl(o),        check_gaussian_nll(o), check_giou_loss(o),
                                       check_expectation(o)};
    const std::vector<GradcheckSuite> composite = check_total_loss(o);
    suites.insert(suites.end(), composite.begin(), composite.end());
    return suites;
}

std::string gradcheck_csv(std::span<const GradcheckSuite> suites)
{
    std::ostringstream os;
    os << "suite,points,coordinates,max_rel_error,tolerance,status\n";
    char buf[64];
    for (const GradcheckSuite& s : suites) {
        os << s.name << ',' << s.points << ',' << s.coordinates << ',';
        std::snprintf(buf, sizeof buf, "%.6e", s.max_rel_error);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%g", s.tolerance);
        os << buf << ',' << (s.passed() ? "pass" : "fail") << '\n';
    }
    return os.str();
}

}   // namespace gfl
