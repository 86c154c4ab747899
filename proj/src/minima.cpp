#include "gfl/minima.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include "gfl/losses.hpp"

namespace gfl {

QflDescent qfl_descent(double y, double beta, int max_iterations)
{
    constexpr double kArmijo = 1e-4;
    double x = 0.0;
    double step = 1.0;
    QflDescent out;
    out.target = y;
    for (; out.iterations < max_iterations; ++out.iterations) {
        const LossEval e = qfl(x, y, beta);
        if (std::abs(e.grad) < 1e-15) {
            break;
        }
        double t = 2.0 * step;
        while (t > 1e-20) {
            const double candidate = x - t * e.grad;
            if (qfl(candidate, y, beta).value <= e.value - kArmijo * t * e.grad * e.grad) {
                x = candidate;
                break;
            }
            t *= 0.5;
        }
        if (t <= 1e-20) {
            break;
        }
        step = t;
    }
    out.sigma = sigmoid(x);
    return out;
}

DflDescent dfl_descent(double y, const Support& support, int max_iterations)
{
    constexpr double kArmijo = 1e-4;
    std::vector<double> z(static_cast<std::size_t>(support.size()), 0.0);
    std::vector<double> trial(z.size());
    std::vector<double> dir(z.size());
    DflDescent out;
    out.target = y;
    for (; out.iterations < max_iterations; ++out.iterations) {
        const VectorLossEval e = dfl(z, y, support);
        const double gmax = std::abs(*std::max_element(e.grad.begin(), e.grad.end(),
                                                       [](double a, double b) { return std::abs(a) < std::abs(b); }));
        if (gmax < 1e-13) {
            break;
        }
        const DiscreteDistribution s = softmax(z);
        double slope = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            dir[j] = e.grad[j] / std::max(s.probs[j], 1e-300);
            slope += e.grad[j] * dir[j];
        }
        double t = 1.0;
        while (t > 1e-20) {
            for (std::size_t j = 0; j < z.size(); ++j) {
                trial[j] = z[j] - t * dir[j];
            }
            if (dfl(trial, y, support).value <= e.value - kArmijo * t * slope) {
                z.swap(trial);
                break;
            }
            t *= 0.5;
        }
        if (t <= 1e-20) {
            break;
        }
    }
    const DiscreteDistribution s = softmax(z);
    out.estimate = expectation(s, support);
    const ProjectedTarget p = project_target(y, support);
    out.adjacent_mass = s.probs[static_cast<std::size_t>(p.left_index)] +
                        s.probs[static_cast<std::size_t>(p.left_index + 1)];
    return out;
}

GflSearch gfl_random_search(double y_l, double y_r, double y, double beta, int candidates, Rng& rng)
{
    GflSearch out{y_l, y_r, y, beta, 0.0, std::numeric_limits<double>::infinity()};
    const GflMinimizer m = gfl_minimizer(y_l, y_r, y);
    out.minimizer_value = gfl(GflNode{y_l, y_r, m.p_yl, m.p_yr, y}, beta).value;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < candidates; ++i) {
        const double p = unit(rng);
        out.best_candidate = std::min(out.best_candidate, gfl(GflNode{y_l, y_r, p, 1.0 - p, y}, beta).value);
    }
    return out;
}

double gfl_grid_argmin_distance(double y_l, double y_r, double y)
{
    double best = std::numeric_limits<double>::infinity();
    double arg = 0.0;
    for (int i = 1; i <= 9999; ++i) {
        const double p = i * 1e-4;
        const double v = gfl(GflNode{y_l, y_r, p, 1.0 - p, y}, 0.0).value;
        if (v < best) {
            best = v;
            arg = p;
        }
    }
    return std::abs(arg - gfl_minimizer(y_l, y_r, y).p_yl);
}

std::vector<MinimaCheck> run_minima(const MinimaOptions& o)
{
    std::vector<MinimaCheck> checks;

    {
        Rng rng(child_seed(o.seed, "minima/qfl"));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        MinimaCheck c{"qfl_descent_abs_error", o.qfl_targets, 0.0, 1e-4, false};
        for (int i = 0; i < o.qfl_targets; ++i) {
            double y = unit(rng);
            while (y == 0.0) {
                y = unit(rng);
            }
            const QflDescent d = qfl_descent(y, o.beta);
            c.worst = std::max(c.worst, std::abs(d.sigma - y));
        }
        c.passed = c.worst < c.threshold;
        checks.push_back(c);
    }

    {
        Rng rng(child_seed(o.seed, "minima/dfl"));
        std::uniform_real_distribution<double> target(o.support.y0, o.support.max() - kProjectionUpperMargin);
        MinimaCheck err{"dfl_descent_abs_error", o.dfl_targets, 0.0, 1e-4, false};
        MinimaCheck mass{"dfl_adjacent_mass_min", o.dfl_targets, 1.0, 1.0 - 1e-3, false};
        for (int i = 0; i < o.dfl_targets; ++i) {
            const DflDescent d = dfl_descent(target(rng), o.support);
            err.worst = std::max(err.worst, std::abs(d.estimate - d.target));
            mass.worst = std::min(mass.worst, d.adjacent_mass);
        }
        err.passed = err.worst < err.threshold;
        mass.passed = mass.worst >= mass.threshold;
        checks.push_back(err);
        checks.push_back(mass);
    }

    {
        Rng rng(child_seed(o.seed, "minima/gfl"));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        MinimaCheck closed{"gfl_minimizer_margin", 0, -std::numeric_limits<double>::infinity(), 0.0, false};
        MinimaCheck grid{"gfl_beta0_grid_argmin_distance", 0, 0.0, 1e-4, false};
        for (int i = 0; i < o.gfl_cases; ++i) {
            const double y_l = 10.0 * unit(rng);
            const double y_r = y_l + 0.5 + 3.5 * unit(rng);
            const double y = y_l + (y_r - y_l) * unit(rng);
            for (double beta : {0.0, o.beta}) {
                const GflSearch s = gfl_random_search(y_l, y_r, y, beta, o.gfl_candidates, rng);
                closed.worst = std::max(closed.worst, s.minimizer_value - s.best_candidate);
                ++closed.cases;
            }
            const double p = gfl_minimizer(y_l, y_r, y).p_yl;
            if (p >= 1e-4 && p <= 1.0 - 1e-4) {
                grid.worst = std::max(grid.worst, gfl_grid_argmin_distance(y_l, y_r, y));
                ++grid.cases;
            }
        }
        closed.passed = closed.cases > 0 && closed.worst <= closed.threshold;
        grid.passed = grid.worst <= grid.threshold;
        checks.push_back(closed);
        checks.push_back(grid);
    }

    {
        MinimaCheck c{"specialization_max_discrepancy", o.specialization_samples, 0.0, 1e-12, false};
        c.worst = check_specialization(o.specialization_samples, child_seed(o.seed, "minima/specialization"));
        c.passed = c.worst < c.threshold;
        checks.push_back(c);
    }
    return checks;
}

std::string minima_csv(std::span<const MinimaCheck> checks)
{
    std::ostringstream os;
    os << "check,cases,worst,threshold,status\n";
    char buf[64];
    for (const MinimaCheck& c : checks) {
        os << c.name << ',' << c.cases << ',';
        std::snprintf(buf, sizeof buf, "%.6e", c.worst);
        os << buf << ',';
        std::snprintf(buf, sizeof buf, "%.6e", c.threshold);
        os << buf << ',' << (c.passed ? "pass" : "fail") << '\n';
    }
    return os.str();
}

}   // namespace gfl
