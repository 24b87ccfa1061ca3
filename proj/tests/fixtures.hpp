#pragma once

#include <Eigen/Dense>

namespace fixture {

// Online MTIL order-I accuracy matrix (%), rows = after training stage i,
// columns = evaluation task j, as published.
inline Eigen::MatrixXd mtil_order_one() {
  Eigen::MatrixXd m(11, 11);
  m << 44.85, 87.90, 68.22, 45.32, 54.61, 71.43, 88.86, 59.45, 89.07, 64.61, 64.05,
       50.50, 96.60, 68.22, 45.32, 54.61, 71.43, 88.86, 59.45, 89.07, 64.61, 64.05,
       52.45, 96.89, 82.23, 45.32, 54.61, 71.43, 88.86, 59.45, 89.07, 64.61, 64.05,
       52.42, 96.66, 83.03, 69.63, 54.61, 71.43, 88.86, 59.45, 89.07, 64.61, 64.05,
       52.78, 96.77, 83.57, 75.64, 94.46, 71.43, 88.86, 59.45, 89.07, 64.61, 64.05,
       53.59, 96.83, 83.52, 74.95, 95.59, 87.84, 88.86, 59.45, 89.07, 64.61, 64.05,
       54.04, 96.77, 83.60, 75.11, 96.63, 92.83, 91.36, 59.45, 89.07, 64.61, 64.05,
       54.40, 96.49, 83.77, 75.32, 96.19, 93.23, 91.60, 98.51, 89.07, 64.61, 64.05,
       55.12, 96.43, 83.54, 75.37, 96.83, 92.97, 92.22, 98.76, 91.63, 64.61, 64.05,
       53.44, 96.60, 83.68, 74.73, 96.63, 92.94, 92.10, 98.58, 92.75, 83.48, 64.05,
       53.11, 96.37, 83.27, 73.51, 95.93, 92.88, 92.04, 98.36, 93.16, 85.77, 79.67;
  return m;
}

inline constexpr double kMtilTransfer = 69.4;
inline constexpr double kMtilAvg = 77.0;
inline constexpr double kMtilLast = 85.8;

}  // namespace fixture
