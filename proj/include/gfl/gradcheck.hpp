#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gfl {

/// Relative error |a - n| / max(|a|, |n|, floor). The suites use a floor of
/// kRelativeErrorFloor * max(1, |f|) so that near-zero gradients do not turn
/// finite-difference rounding noise into large relative errors.
inline constexpr double kRelativeErrorFloor = 1e-3;
double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor);

/// Central difference (f(x + h) - f(x - h)) / 2h.
double central_difference(const std::function<double(double)>& f, double x, double h);

struct GradcheckSuite {
    std::string name;
    long long points = 0;        // random inputs drawn
    long long coordinates = 0;   // partial derivatives compared
    double max_rel_error = 0.0;
    double tolerance = 0.0;

    bool passed() const { return coordinates > 0 && max_rel_error < tolerance; }
};

struct GradcheckOptions {
    int samples = 1000;
    double step = 1e-6;
    std::uint64_t seed = 0;
    bool inject_fault = false;
};

inline constexpr double kScalarTolerance = 1e-5;
inline constexpr double kCompositeTolerance = 1e-4;

GradcheckSuite check_focal_loss(const GradcheckOptions& o);
GradcheckSuite check_qfl(const GradcheckOptions& o);
GradcheckSuite check_dfl(const GradcheckOptions& o);
GradcheckSuite check_gfl(const GradcheckOptions& o);
GradcheckSuite check_gaussian_nll(const GradcheckOptions& o);
GradcheckSuite check_giou_loss(const GradcheckOptions& o);
GradcheckSuite check_expectation(const GradcheckOptions& o);

/// total_loss for every (variant, regressor) pair on `samples` random 4x4-grid scenes and
/// parameter vectors, tabular and mlp heads alternating; 4 random coordinates per point.
std::vector<GradcheckSuite> check_total_loss(const GradcheckOptions& o);

std::vector<GradcheckSuite> run_gradchecks(const GradcheckOptions& o);

/// CSV `suite,points,coordinates,max_rel_error,tolerance,status`.
std::string gradcheck_csv(std::span<const GradcheckSuite> suites);

}   // namespace gfl
