#include "gfl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gfl/common.hpp"

namespace gfl {

double& SideOffsets::operator[](int side)
{
    switch (side) {
    case 0: return l;
    case 1: return t;
    case 2: return r;
    default: return b;
    }
}

namespace {

double intersection_area(const Box& a, const Box& b)
{
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    return iw * ih;
}

}   // namespace

double iou(const Box& a, const Box& b)
{
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

double giou(const Box& a, const Box& b)
{
    return 1.0 - giou_box_loss(a, b).value;
}

BoxLossEval giou_box_loss(const Box& p, const Box& g)
{
    const double pw = p.width();
    const double ph = p.height();

    // Intersection extents; d/d(pred coordinate) is 1 where the prediction wins the min/max.
    const double iw_raw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
    const double ih_raw = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
    const bool w_pos = iw_raw > 0.0;
    const bool h_pos = ih_raw > 0.0;
    const double iw = w_pos ? iw_raw : 0.0;
    const double ih = h_pos ? ih_raw : 0.0;
    const double d_iw_x1 = (w_pos && p.x1 >= g.x1) ? -1.0 : 0.0;
    const double d_iw_x2 = (w_pos && p.x2 <= g.x2) ? 1.0 : 0.0;
    const double d_ih_y1 = (h_pos && p.y1 >= g.y1) ? -1.0 : 0.0;
    const double d_ih_y2 = (h_pos && p.y2 <= g.y2) ? 1.0 : 0.0;

    const double ew = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
    const double eh = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
    const double d_ew_x1 = p.x1 <= g.x1 ? -1.0 : 0.0;
    const double d_ew_x2 = p.x2 >= g.x2 ? 1.0 : 0.0;
    const double d_eh_y1 = p.y1 <= g.y1 ? -1.0 : 0.0;
    const double d_eh_y2 = p.y2 >= g.y2 ? 1.0 : 0.0;

    const double inter = iw * ih;
    const double uni = pw * ph + g.area() - inter;
    const double encl = ew * eh;

    // Per coordinate (x1, y1, x2, y2).
    const std::array<double, 4> d_area{-ph, -pw, ph, pw};
    const std::array<double, 4> d_inter{d_iw_x1 * ih, d_ih_y1 * iw, d_iw_x2 * ih, d_ih_y2 * iw};
    const std::array<double, 4> d_encl{d_ew_x1 * eh, d_eh_y1 * ew, d_ew_x2 * eh, d_eh_y2 * ew};

    BoxLossEval out;
    // loss = 1 - (I/U - (E - U)/E) = 2 - I/U - U/E
    double value = 2.0;
    if (uni > 0.0) {
        value -= inter / uni;
    }
    if (encl > 0.0) {
        value -= uni / encl;
    }
    out.value = value;

    for (std::size_t k = 0; k < 4; ++k) {
        const double d_uni = d_area[k] - d_inter[k];
        double g_k = 0.0;
        if (uni > 0.0) {
            g_k -= (d_inter[k] * uni - inter * d_uni) / (uni * uni);
        }
        if (encl > 0.0) {
            g_k -= (d_uni * encl - uni * d_encl[k]) / (encl * encl);
        }
        out.grad[k] = g_k;
    }
    return out;
}

OffsetLossEval giou_loss(const SideOffsets& pred, const SideOffsets& target)
{
    const Box p{-pred.l, -pred.t, pred.r, pred.b};
    const Box g{-target.l, -target.t, target.r, target.b};
    const BoxLossEval box = giou_box_loss(p, g);
    OffsetLossEval out;
    out.value = box.value;
    out.grad = {-box.grad[0], -box.grad[1], box.grad[2], box.grad[3]};
    return out;
}

double centerness(const SideOffsets& o)
{
    if (!(o.l > 0.0 && o.t > 0.0 && o.r > 0.0 && o.b > 0.0)) {
        return 0.0;
    }
    const double lr = std::min(o.l, o.r) / std::max(o.l, o.r);
    const double tb = std::min(o.t, o.b) / std::max(o.t, o.b);
    return std::sqrt(lr * tb);
}

Box decode(const GridPoint& point, const SideOffsets& o)
{
    const double s = point.stride;
    return {point.x - o.l * s, point.y - o.t * s, point.x + o.r * s, point.y + o.b * s};
}

SideOffsets encode(const GridPoint& point, const Box& gt)
{
    if (!gt.contains(point.x, point.y)) {
        throw DomainError("encode: point lies outside the box");
    }
    const double inv = 1.0 / point.stride;
    return {(point.x - gt.x1) * inv, (point.y - gt.y1) * inv, (gt.x2 - point.x) * inv, (gt.y2 - point.y) * inv};
}

// ---------------------------------------------------------------------------

double Histogram::bin_left(std::size_t i) const
{
    return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size());
}

double Histogram::bin_right(std::size_t i) const
{
    return bin_left(i + 1);
}

long long Histogram::total() const
{
    return std::accumulate(counts.begin(), counts.end(), 0LL);
}

Histogram label_histogram(std::span<const double> values, int bins, std::optional<std::pair<double, double>> range)
{
    if (bins < 1) {
        throw ConfigError("histogram needs at least one bin");
    }
    Histogram h;
    if (values.empty()) {
        return h;
    }
    if (range) {
        h.lo = range->first;
        h.hi = range->second;
        if (!(h.hi > h.lo)) {
            throw ConfigError("histogram range must satisfy lo < hi");
        }
    } else {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        h.lo = *mn;
        h.hi = *mx > *mn ? *mx : *mn + 1.0;
    }
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double scale = bins / (h.hi - h.lo);
    for (double v : values) {
        auto idx = static_cast<long long>(std::floor((v - h.lo) * scale));
        idx = std::clamp(idx, 0LL, static_cast<long long>(bins) - 1);
        ++h.counts[static_cast<std::size_t>(idx)];
    }
    return h;
}

std::string histogram_csv(const Histogram& h, const std::string& name, bool header)
{
    std::ostringstream os;
    os.precision(17);
    if (header) {
        os << (name.empty() ? "" : "histogram,") << "bin_left,bin_right,count\n";
    }
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        if (!name.empty()) {
            os << name << ',';
        }
        os << h.bin_left(i) << ',' << h.bin_right(i) << ',' << h.counts[i] << '\n';
    }
    return os.str();
}

}   // namespace gfl
