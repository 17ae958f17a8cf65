#pragma once

#include <Eigen/Dense>

namespace fedsched {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IMat = Eigen::MatrixXi;

} // namespace fedsched
