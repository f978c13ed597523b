#pragma once

#include <Eigen/Dense>

#include <string>

namespace csmil {

/// Cross-scale attention of one instance, tagged with where it came from.
struct AttentionRecord {
  std::string patient_id;
  int location_id = 0;
  Eigen::Vector2d xy = Eigen::Vector2d::Zero();
  Eigen::VectorXd scores;  ///< a_s for s = 0..S-1
};

}  // namespace csmil
