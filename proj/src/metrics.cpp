#include "gage/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "gage/errors.hpp"

namespace gage {

double r2_score(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
    if (y_true.size() != y_pred.size())
        throw ShapeError("r2_score: vector lengths differ");
    const size_t n = y_true.size();
    if (n < 2) throw NumericError("r2_score: need at least 2 samples");
    double mean = 0.0;
    for (double v : y_true) mean += v;
    mean /= double(n);
    double ss_tot = 0.0, ss_res = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ss_tot += (y_true[i] - mean) * (y_true[i] - mean);
        ss_res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    }
    if (ss_tot == 0.0) throw NumericError("r2_score: y_true is constant");
    return 1.0 - ss_res / ss_tot;
}

double mae(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
    if (y_true.size() != y_pred.size()) throw ShapeError("mae: vector lengths differ");
    if (y_true.empty()) throw NumericError("mae: empty input");
    double s = 0.0;
    for (size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
    return s / double(y_true.size());
}

double iou(const Box& a, const Box& b) {
    if (a.space != b.space) throw ConfigError("iou: boxes are in different coordinate spaces");
    const int ih = std::min(a.r1, b.r1) - std::max(a.r0, b.r0) + 1;
    const int iw = std::min(a.c1, b.c1) - std::max(a.c0, b.c0) + 1;
    const int64_t inter = (ih > 0 && iw > 0) ? int64_t(ih) * iw : 0;
    const int64_t uni = a.area() + b.area() - inter;
    return double(inter) / double(uni);
}

}  // namespace gage
