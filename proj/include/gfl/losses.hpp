#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gfl/distrib.hpp"

namespace gfl {

/// Scalar loss value with its derivative with respect to the (single) input logit.
struct LossEval {
    double value = 0.0;
    double grad = 0.0;
    /// Set when a zero probability receives a nonzero coefficient; value is +inf.
    bool saturated = false;
};

/// Loss value with a gradient over a logit vector.
struct VectorLossEval {
    double value = 0.0;
    std::vector<double> grad;
};

struct FocusParams {
    double gamma = 2.0;
    double beta = 2.0;
};

/// Two-knot input of the generalized focal loss. p_yl + p_yr must be 1.
struct GflNode {
    double y_l = 0.0;
    double y_r = 1.0;
    double p_yl = 0.5;
    double p_yr = 0.5;
    double y = 0.5;
};

/// Focal loss -(1 - p_t)^gamma log(p_t), p = sigmoid(logit), y in {0, 1}.
LossEval focal_loss(double logit, int y, double gamma);

/// Quality focal loss -|y - s|^beta ((1 - y) log(1 - s) + y log(s)), s = sigmoid(logit).
/// At s == y with beta < 1 the modulating factor is not differentiable; the zero
/// subgradient is returned there.
LossEval qfl(double logit, double y, double beta);

/// Distribution focal loss over softmax(dist_logits). Target y is clamped and projected
/// onto its two neighbouring knots; knot weights are normalised by the interval so they
/// sum to one for any spacing.
VectorLossEval dfl(std::span<const double> dist_logits, double y, const Support& support);

/// Generalized focal loss on a two-knot node. `grad` is d/dp_yl along p_yl + p_yr = 1.
LossEval gfl(const GflNode& node, double beta);

struct GflMinimizer {
    double p_yl = 0.0;
    double p_yr = 0.0;
};

GflMinimizer gfl_minimizer(double y_l, double y_r, double y);

/// Gaussian negative log-likelihood (mu - y)^2 / (2 var) + log(var) / 2, var = exp(log_var).
struct GaussianNllEval {
    double value = 0.0;
    double grad_mu = 0.0;
    double grad_log_var = 0.0;
};

GaussianNllEval gaussian_nll(double mu, double log_var, double y);

/// Checks that FL, QFL and DFL coincide with GFL under their specialisations on random
/// inputs. Returns the largest absolute value discrepancy seen.
double check_specialization(std::int64_t sample_count, std::uint64_t seed);

}   // namespace gfl
