#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gfl {

/// Axis-aligned corner-form box in continuous scene units.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool contains(double x, double y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }

    friend bool operator==(const Box&, const Box&) = default;
};

/// Distances from a grid point to the four sides of a box, in stride units.
struct SideOffsets {
    double l = 0.0;
    double t = 0.0;
    double r = 0.0;
    double b = 0.0;

    double operator[](int side) const { return std::array{l, t, r, b}[static_cast<std::size_t>(side)]; }
    double& operator[](int side);
};

struct GridPoint {
    double x = 0.0;
    double y = 0.0;
    double stride = 1.0;
    int index = 0;
};

double iou(const Box& a, const Box& b);

/// Generalized IoU: IoU - (enclosing - union) / enclosing. Lies in (-1, 1].
double giou(const Box& a, const Box& b);

struct BoxLossEval {
    double value = 0.0;
    std::array<double, 4> grad{};   // d/d(x1, y1, x2, y2) of the prediction
};

/// 1 - GIoU(pred, target) with the gradient with respect to the predicted corners.
/// Ties inside min/max resolve to the prediction's coordinate.
BoxLossEval giou_box_loss(const Box& pred, const Box& target);

struct OffsetLossEval {
    double value = 0.0;
    std::array<double, 4> grad{};   // d/d(l, t, r, b) of the prediction
};

/// GIoU loss between two offset sets measured from the same point.
OffsetLossEval giou_loss(const SideOffsets& pred, const SideOffsets& target);

/// sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b)); 0 if any offset is not positive.
double centerness(const SideOffsets& o);

Box decode(const GridPoint& point, const SideOffsets& o);

/// Throws DomainError when the point lies outside the box.
SideOffsets encode(const GridPoint& point, const Box& gt);

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<long long> counts;

    double bin_left(std::size_t i) const;
    double bin_right(std::size_t i) const;
    long long total() const;
};

/// Equal-width histogram over [lo, hi] (the value range when not given). Values outside an
/// explicit range go to the end bins; the upper edge belongs to the last bin.
Histogram label_histogram(std::span<const double> values, int bins,
                          std::optional<std::pair<double, double>> range = std::nullopt);

/// CSV rows `bin_left,bin_right,count`, optionally prefixed by a name column.
std::string histogram_csv(const Histogram& h, const std::string& name = {}, bool header = true);

}   // namespace gfl
