#include "gfl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "gfl/common.hpp"

namespace gfl {

namespace {

void require_nonnegative(double v, const char* what)
{
    if (!(v >= 0.0) || !std::isfinite(v)) {
        throw DomainError(std::string(what) + " must be finite and >= 0");
    }
}

// y - sigmoid(x), evaluated on the side where the complement is exact.
double quality_gap(double x, double y)
{
    if (x > 0.0) {
        return (y - 1.0) + sigmoid(-x);
    }
    return y - sigmoid(x);
}

// d/dg |g|^beta with the zero subgradient at g == 0.
double abs_pow_derivative(double g, double beta)
{
    if (beta == 0.0 || g == 0.0) {
        return 0.0;
    }
    const double mag = beta * std::pow(std::abs(g), beta - 1.0);
    return g > 0.0 ? mag : -mag;
}

}   // namespace

LossEval focal_loss(double logit, int y, double gamma)
{
    require_finite(logit, "focal_loss logit");
    require_nonnegative(gamma, "focal_loss gamma");
    if (y != 0 && y != 1) {
        throw DomainError("focal_loss label must be 0 or 1");
    }

    // p_t = sigmoid(s); 1 - p_t = sigmoid(-s); -log(p_t) = softplus(-s)
    const double s = y == 1 ? logit : -logit;
    const double q = sigmoid(-s);
    const double ce = softplus(-s);
    const double mod = std::pow(q, gamma);

    LossEval out;
    out.value = mod * ce;
    const double d_ds = -mod * (gamma * sigmoid(s) * ce + q);
    out.grad = y == 1 ? d_ds : -d_ds;
    return out;
}

LossEval qfl(double logit, double y, double beta)
{
    require_finite(logit, "qfl logit");
    require_nonnegative(beta, "qfl beta");
    if (!(y >= 0.0 && y <= 1.0)) {
        throw DomainError("qfl label must lie in [0, 1]");
    }

    const double sig = sigmoid(logit);
    const double diff = -quality_gap(logit, y);   // sigma - y
    const double bce = (1.0 - y) * softplus(logit) + y * softplus(-logit);
    const double mod = std::pow(std::abs(diff), beta);

    LossEval out;
    out.value = mod * bce;
    out.grad = mod * diff + abs_pow_derivative(diff, beta) * sig * (1.0 - sig) * bce;
    return out;
}

VectorLossEval dfl(std::span<const double> dist_logits, double y, const Support& support)
{
    support.validate();
    if (static_cast<int>(dist_logits.size()) != support.size()) {
        throw ConfigError("dfl: logit count must equal n + 1");
    }
    for (double z : dist_logits) {
        require_finite(z, "dfl logit");
    }
    require_finite(y, "dfl target");

    const std::vector<double> lsm = log_softmax(dist_logits);
    const ProjectedTarget proj = project_target(y, support);
    const auto i = static_cast<std::size_t>(proj.left_index);

    VectorLossEval out;
    double value = 0.0;
    if (proj.w_left > 0.0) {
        value -= proj.w_left * lsm[i];
    }
    if (proj.w_right > 0.0) {
        value -= proj.w_right * lsm[i + 1];
    }
    out.value = value;

    out.grad.resize(lsm.size());
    for (std::size_t j = 0; j < lsm.size(); ++j) {
        out.grad[j] = std::exp(lsm[j]);
    }
    out.grad[i] -= proj.w_left;
    out.grad[i + 1] -= proj.w_right;
    return out;
}

LossEval gfl(const GflNode& node, double beta)
{
    require_nonnegative(beta, "gfl beta");
    if (!(node.y_l < node.y_r)) {
        throw DomainError("gfl requires y_l < y_r");
    }
    if (!(node.p_yl >= 0.0 && node.p_yr >= 0.0) || std::abs(node.p_yl + node.p_yr - 1.0) > 1e-12) {
        throw DomainError("gfl probabilities must be non-negative and sum to 1");
    }
    if (!(node.y >= node.y_l && node.y <= node.y_r)) {
        throw DomainError("gfl label must lie in [y_l, y_r]");
    }

    const double c_left = node.y_r - node.y;
    const double c_right = node.y - node.y_l;

    LossEval out;
    if ((c_left > 0.0 && node.p_yl <= 0.0) || (c_right > 0.0 && node.p_yr <= 0.0)) {
        out.value = std::numeric_limits<double>::infinity();
        out.saturated = true;
        return out;
    }

    const double gap = node.y - (node.y_l * node.p_yl + node.y_r * node.p_yr);
    const double mod = std::pow(std::abs(gap), beta);

    double ce = 0.0;
    double d_ce = 0.0;
    if (c_left > 0.0) {
        ce -= c_left * std::log(node.p_yl);
        d_ce -= c_left / node.p_yl;
    }
    if (c_right > 0.0) {
        ce -= c_right * std::log(node.p_yr);
        d_ce += c_right / node.p_yr;
    }

    // d gap / d p_yl = y_r - y_l once p_yr = 1 - p_yl is substituted.
    const double d_mod = abs_pow_derivative(gap, beta) * (node.y_r - node.y_l);
    out.value = mod * ce;
    out.grad = d_mod * ce + mod * d_ce;
    return out;
}

GflMinimizer gfl_minimizer(double y_l, double y_r, double y)
{
    if (!(y_l < y_r)) {
        throw DomainError("gfl_minimizer requires y_l < y_r");
    }
    if (!(y >= y_l && y <= y_r)) {
        throw DomainError("gfl_minimizer label must lie in [y_l, y_r]");
    }
    const double width = y_r - y_l;
    return {(y_r - y) / width, (y - y_l) / width};
}

GaussianNllEval gaussian_nll(double mu, double log_var, double y)
{
    require_finite(mu, "gaussian_nll mu");
    require_finite(log_var, "gaussian_nll log_var");
    require_finite(y, "gaussian_nll target");

    const double inv_var = std::exp(-log_var);
    const double r = mu - y;
    GaussianNllEval out;
    out.value = 0.5 * r * r * inv_var + 0.5 * log_var;
    out.grad_mu = r * inv_var;
    out.grad_log_var = 0.5 - 0.5 * r * r * inv_var;
    return out;
}

double check_specialization(std::int64_t sample_count, std::uint64_t seed)
{
    if (sample_count < 1) {
        throw DomainError("check_specialization needs at least one sample");
    }
    Rng rng(child_seed(seed, "specialization"));
    std::uniform_real_distribution<double> logit_dist(-8.0, 8.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> exponent(0.0, 4.0);
    std::uniform_int_distribution<int> knots(1, 20);
    std::uniform_real_distribution<double> spacing(0.25, 4.0);
    std::uniform_real_distribution<double> mass(0.01, 0.99);

    double worst = 0.0;
    for (std::int64_t k = 0; k < sample_count; ++k) {
        // FL: beta = gamma, y_l = 0, y_r = 1, p_yr = p, y in {0, 1}
        {
            const double x = logit_dist(rng);
            const int y = unit(rng) < 0.5 ? 0 : 1;
            const double gamma = exponent(rng);
            const GflNode node{0.0, 1.0, sigmoid(-x), sigmoid(x), static_cast<double>(y)};
            worst = std::max(worst, std::abs(focal_loss(x, y, gamma).value - gfl(node, gamma).value));
        }
        // QFL: y_l = 0, y_r = 1, p_yr = sigma
        {
            const double x = logit_dist(rng);
            const double y = unit(rng);
            const double beta = exponent(rng);
            const GflNode node{0.0, 1.0, sigmoid(-x), sigmoid(x), y};
            worst = std::max(worst, std::abs(qfl(x, y, beta).value - gfl(node, beta).value));
        }
        // DFL: beta = 0, y_l = y_i, y_r = y_{i+1}, mass only on the two knots.
        // GFL carries unnormalised knot weights, so it equals delta * DFL.
        {
            Support support{0.0, knots(rng), unit(rng) < 0.5 ? 1.0 : spacing(rng)};
            const double y = unit(rng) * (support.max() - kProjectionUpperMargin);
            const ProjectedTarget proj = project_target(y, support);
            const double p = mass(rng);
            std::vector<double> logits(static_cast<std::size_t>(support.size()), -1000.0);
            logits[static_cast<std::size_t>(proj.left_index)] = std::log(p);
            logits[static_cast<std::size_t>(proj.left_index) + 1] = std::log1p(-p);
            const GflNode node{support.knot(proj.left_index), support.knot(proj.left_index + 1),
                               p, 1.0 - p, y};
            const double lhs = support.delta * dfl(logits, y, support).value;
            worst = std::max(worst, std::abs(lhs - gfl(node, 0.0).value));
        }
    }
    return worst;
}

}   // namespace gfl
