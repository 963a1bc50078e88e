#pragma once

#include "mseg/flowio.hpp"
#include "mseg/tensor.hpp"

namespace mseg::flow {

// Color-wheel rendering of a flow field: hue encodes direction around the
// 55-bin wheel, distance from white encodes min(|flow|, cap)/cap. Returns
// (3,H,W) in [0,1]; zero flow is exactly white.
Tensor flow_to_colorwheel(const FlowField& f, double magnitude_cap = 16.0);

}  // namespace mseg::flow
