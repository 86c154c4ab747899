#include "gfl/distrib.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gfl/common.hpp"
#include "gfl/losses.hpp"

namespace gfl {

void Support::validate() const
{
    if (n < 1) {
        throw ConfigError("support needs n >= 1");
    }
    if (!(delta > 0.0) || !std::isfinite(delta) || !std::isfinite(y0)) {
        throw ConfigError("support interval must be finite and > 0");
    }
}

int side_arity(RegressorKind kind, const Support& support)
{
    switch (kind) {
    case RegressorKind::Dirac: return 1;
    case RegressorKind::Gaussian: return 2;
    case RegressorKind::General: return support.size();
    }
    return 1;
}

const char* to_string(RegressorKind kind)
{
    switch (kind) {
    case RegressorKind::Dirac: return "dirac";
    case RegressorKind::Gaussian: return "gaussian";
    case RegressorKind::General: return "general";
    }
    return "?";
}

RegressorKind regressor_from_string(const std::string& s)
{
    if (s == "dirac") return RegressorKind::Dirac;
    if (s == "gaussian") return RegressorKind::Gaussian;
    if (s == "general") return RegressorKind::General;
    throw ConfigError("unknown regressor kind: " + s);
}

std::vector<double> log_softmax(std::span<const double> logits)
{
    if (logits.empty()) {
        throw DomainError("softmax of an empty vector");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) {
        sum += std::exp(z - m);
    }
    const double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] - lse;
    }
    return out;
}

DiscreteDistribution softmax(std::span<const double> logits)
{
    if (logits.empty()) {
        throw DomainError("softmax of an empty vector");
    }
    for (double z : logits) {
        require_finite(z, "softmax logit");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    DiscreteDistribution dist;
    dist.probs.resize(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        dist.probs[i] = std::exp(logits[i] - m);
        sum += dist.probs[i];
    }
    for (double& p : dist.probs) {
        p /= sum;
    }
    return dist;
}

double expectation(const DiscreteDistribution& dist, const Support& support)
{
    double y_hat = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        y_hat += dist.probs[i] * support.knot(static_cast<int>(i));
    }
    // Rounding can leave the sum a few ulps outside the hull.
    return std::clamp(y_hat, support.y0, support.max());
}

std::vector<double> expectation_jacobian(std::span<const double> logits, const Support& support)
{
    const DiscreteDistribution dist = softmax(logits);
    double y_hat = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        y_hat += dist.probs[i] * support.knot(static_cast<int>(i));
    }
    std::vector<double> jac(dist.probs.size());
    for (std::size_t i = 0; i < jac.size(); ++i) {
        jac[i] = dist.probs[i] * (support.knot(static_cast<int>(i)) - y_hat);
    }
    return jac;
}

ProjectedTarget project_target(double y, const Support& support)
{
    support.validate();
    require_finite(y, "project_target");
    const double clamped = std::clamp(y, support.y0, support.max() - kProjectionUpperMargin);

    double pos = (clamped - support.y0) / support.delta;
    const double nearest = std::round(pos);
    if (std::abs(pos - nearest) < 1e-12) {
        pos = nearest;
    }
    int i = static_cast<int>(std::floor(pos));
    i = std::clamp(i, 0, support.n - 1);

    ProjectedTarget out;
    out.left_index = i;
    out.w_right = std::clamp((clamped - support.knot(i)) / support.delta, 0.0, 1.0);
    out.w_left = 1.0 - out.w_right;
    return out;
}

// ---------------------------------------------------------------------------
// Disturbance simulation
// ---------------------------------------------------------------------------

namespace {

std::vector<double> random_direction(Rng& rng, int dim)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm2 = 0.0;
    for (double& e : v) {
        e = normal(rng);
        norm2 += e * e;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& e : v) {
        e *= inv;
    }
    return v;
}

double dot(std::span<const double> a, std::span<const double> b)
{
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Linear head f(x) = W x + b with `outputs` rows.
struct LinearHead {
    int outputs = 1;
    int inputs = 1;
    std::vector<double> weight;
    std::vector<double> bias;

    LinearHead(int out, int in, Rng& rng) : outputs(out), inputs(in)
    {
        std::normal_distribution<double> normal(0.0, 0.01);
        weight.resize(static_cast<std::size_t>(out * in));
        for (double& w : weight) {
            w = normal(rng);
        }
        bias.assign(static_cast<std::size_t>(out), 0.0);
    }

    std::vector<double> apply(std::span<const double> x) const
    {
        std::vector<double> z(bias);
        for (int o = 0; o < outputs; ++o) {
            z[o] += dot(std::span(weight).subspan(static_cast<std::size_t>(o * inputs), inputs), x);
        }
        return z;
    }

    void step(std::span<const double> grad_out, std::span<const double> x, double lr)
    {
        for (int o = 0; o < outputs; ++o) {
            const double g = lr * grad_out[o];
            for (int k = 0; k < inputs; ++k) {
                weight[static_cast<std::size_t>(o * inputs + k)] -= g * x[k];
            }
            bias[o] -= g;
        }
    }
};

struct TrainedRegressor {
    LinearHead head;
    bool converged = false;
    int iterations = 0;
};

double dirac_output(const LinearHead& head, std::span<const double> x)
{
    return head.apply(x)[0];
}

double general_output(const LinearHead& head, std::span<const double> x, const Support& support)
{
    return expectation(softmax(head.apply(x)), support);
}

TrainedRegressor train_dirac(std::span<const double> x, double target, const DisturbanceConfig& cfg, Rng& rng)
{
    TrainedRegressor out{LinearHead(1, cfg.feature_dim, rng)};
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const double r = dirac_output(out.head, x) - target;
        out.iterations = it;
        if (std::abs(r) < cfg.tolerance) {
            out.converged = true;
            break;
        }
        const double g[1] = {r};
        out.head.step(g, x, cfg.dirac_lr);
    }
    return out;
}

TrainedRegressor train_general(std::span<const double> x, double target, const DisturbanceConfig& cfg, Rng& rng)
{
    TrainedRegressor out{LinearHead(cfg.support.size(), cfg.feature_dim, rng)};
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const std::vector<double> z = out.head.apply(x);
        out.iterations = it;
        if (std::abs(expectation(softmax(z), cfg.support) - target) < cfg.tolerance) {
            out.converged = true;
            break;
        }
        const VectorLossEval loss = dfl(z, target, cfg.support);
        out.head.step(loss.grad, x, cfg.general_lr);
    }
    return out;
}

double median(std::vector<double> v)
{
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) {
        return hi;
    }
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

}   // namespace

std::vector<DisturbanceCell> disturbance_experiment(const DisturbanceConfig& cfg)
{
    if (!(cfg.perturb_norm >= 0.0)) {
        throw DomainError("perturbation norm must be >= 0");
    }
    if (cfg.trials < 1 || cfg.feature_dim < 1 || cfg.max_iterations < 1) {
        throw ConfigError("disturbance experiment needs trials, feature_dim and iterations >= 1");
    }
    cfg.support.validate();

    Rng feature_rng(child_seed(cfg.seed, "feature"));
    const std::vector<double> x = random_direction(feature_rng, cfg.feature_dim);

    Rng perturb_rng(child_seed(cfg.seed, "perturbation"));
    std::vector<std::vector<double>> perturbed;
    perturbed.reserve(static_cast<std::size_t>(cfg.trials));
    for (int k = 0; k < cfg.trials; ++k) {
        std::vector<double> d = random_direction(perturb_rng, cfg.feature_dim);
        for (std::size_t j = 0; j < d.size(); ++j) {
            d[j] = x[j] + cfg.perturb_norm * d[j];
        }
        perturbed.push_back(std::move(d));
    }

    const int cell_count = static_cast<int>(cfg.targets.size()) * 2;
    std::vector<DisturbanceCell> cells(static_cast<std::size_t>(cell_count));

#pragma omp parallel for schedule(dynamic)
    for (int c = 0; c < cell_count; ++c) {
        const bool general = c % 2 == 1;
        const double target = cfg.targets[static_cast<std::size_t>(c / 2)];
        Rng init_rng(child_seed(child_seed(cfg.seed, "init"), static_cast<std::uint64_t>(c)));

        DisturbanceCell& cell = cells[static_cast<std::size_t>(c)];
        cell.representation = general ? "general" : "dirac";
        cell.target = target;
        cell.trials = cfg.trials;
        cell.seed = cfg.seed;

        const TrainedRegressor trained = general ? train_general(x, target, cfg, init_rng)
                                                 : train_dirac(x, target, cfg, init_rng);
        cell.converged = trained.converged;
        cell.iterations = trained.iterations;
        if (!trained.converged) {
            cell.median_error = std::nan("");
            continue;
        }

        auto eval = [&](std::span<const double> input) {
            return general ? general_output(trained.head, input, cfg.support)
                           : dirac_output(trained.head, input);
        };
        const double base = eval(x);
        std::vector<double> errors;
        errors.reserve(perturbed.size());
        for (const auto& p : perturbed) {
            errors.push_back(std::abs(eval(p) - base));
        }
        cell.median_error = median(std::move(errors));
    }
    return cells;
}

std::string disturbance_csv(std::span<const DisturbanceCell> cells)
{
    std::ostringstream os;
    os.precision(17);
    os << "representation,target,median_error,trials,seed\n";
    for (const auto& c : cells) {
        os << c.representation << ',' << c.target << ',';
        if (c.converged) {
            os << c.median_error;
        } else {
            os << "failed";
        }
        os << ',' << c.trials << ',' << c.seed << '\n';
    }
    return os.str();
}

}   // namespace gfl
