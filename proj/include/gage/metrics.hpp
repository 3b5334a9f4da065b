#pragma once

#include <vector>

#include "gage/attention.hpp"

namespace gage {

// Coefficient of determination, 1 - SS_res/SS_tot. Requires n >= 2 and a
// non-constant truth vector; can go negative for bad predictors.
double r2_score(const std::vector<double>& y_true, const std::vector<double>& y_pred);

// Mean absolute error.
double mae(const std::vector<double>& y_true, const std::vector<double>& y_pred);

// Intersection over union with inclusive-pixel areas; boxes must share a
// coordinate space.
double iou(const Box& a, const Box& b);

}  // namespace gage
