#include <algorithm>
#include <vector>

#include <Eigen/Cholesky>

#include "vector/bundle_adjust.h"
#include "vector/errors.h"

namespace vec {
namespace {

using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Matrix63d = Eigen::Matrix<double, 6, 3>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

template <typename Derived>
void Damp(Eigen::MatrixBase<Derived>& block, double lambda) {
  for (int i = 0; i < block.rows(); ++i) {
    block(i, i) += lambda * std::clamp(block(i, i), 1e-6, 1e32);
  }
}

}  // namespace

Eigen::VectorXd SolveNormalEquations(const SparseJacobian& jacobian,
                                     const Eigen::VectorXd& residuals,
                                     double lambda) {
  if (!(lambda >= 0.0)) throw ValueError("lambda must be >= 0");
  const int num_cameras = jacobian.num_free_cameras;
  const int num_points = jacobian.num_points;
  const auto num_blocks = jacobian.blocks.size();

  std::vector<Matrix6d> camera_blocks(num_cameras, Matrix6d::Zero());
  std::vector<Eigen::Matrix3d> point_blocks(num_points, Eigen::Matrix3d::Zero());
  std::vector<Matrix63d> coupling(num_blocks, Matrix63d::Zero());
  Eigen::VectorXd camera_gradient = Eigen::VectorXd::Zero(6 * num_cameras);
  Eigen::VectorXd point_gradient = Eigen::VectorXd::Zero(3 * num_points);

  // Observations grouped by point, in observation order.
  std::vector<std::vector<size_t>> by_point(num_points);
  for (size_t i = 0; i < num_blocks; ++i) {
    const auto& block = jacobian.blocks[i];
    const Eigen::Vector2d r = residuals.segment<2>(2 * i);
    by_point[block.point].push_back(i);
    point_blocks[block.point] += block.d_point.transpose() * block.d_point;
    point_gradient.segment<3>(3 * block.point) += block.d_point.transpose() * r;
    if (block.camera >= 0) {
      camera_blocks[block.camera] += block.d_camera.transpose() * block.d_camera;
      camera_gradient.segment<6>(6 * block.camera) += block.d_camera.transpose() * r;
      coupling[i] = block.d_camera.transpose() * block.d_point;
    }
  }

  for (auto& block : camera_blocks) Damp(block, lambda);
  std::vector<Eigen::Matrix3d> point_inverse(num_points);
  for (int p = 0; p < num_points; ++p) {
    Damp(point_blocks[p], lambda);
    Eigen::LLT<Eigen::Matrix3d> llt(point_blocks[p]);
    if (llt.info() != Eigen::Success) {
      throw SingularSystem("point block " + std::to_string(p) +
                           " is not positive definite");
    }
    point_inverse[p] = llt.solve(Eigen::Matrix3d::Identity());
  }

  // Reduced camera system S * dc = b.
  Eigen::MatrixXd reduced = Eigen::MatrixXd::Zero(6 * num_cameras, 6 * num_cameras);
  Eigen::VectorXd rhs = -camera_gradient;
  for (int c = 0; c < num_cameras; ++c) {
    reduced.block<6, 6>(6 * c, 6 * c) = camera_blocks[c];
  }
  for (int p = 0; p < num_points; ++p) {
    const Eigen::Vector3d inv_gp = point_inverse[p] * point_gradient.segment<3>(3 * p);
    for (size_t a : by_point[p]) {
      const int ca = jacobian.blocks[a].camera;
      if (ca < 0) continue;
      const Matrix63d wa_inv = coupling[a] * point_inverse[p];
      rhs.segment<6>(6 * ca) += coupling[a] * inv_gp;
      for (size_t b : by_point[p]) {
        const int cb = jacobian.blocks[b].camera;
        if (cb < 0) continue;
        reduced.block<6, 6>(6 * ca, 6 * cb) -= wa_inv * coupling[b].transpose();
      }
    }
  }

  Eigen::VectorXd camera_step = Eigen::VectorXd::Zero(6 * num_cameras);
  if (num_cameras > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(reduced);
    if (llt.info() != Eigen::Success) {
      throw SingularSystem("reduced camera system is not positive definite");
    }
    camera_step = llt.solve(rhs);
    if (!camera_step.allFinite()) {
      throw SingularSystem("reduced camera system produced a non-finite step");
    }
  }

  Eigen::VectorXd step(6 * num_cameras + 3 * num_points);
  step.head(6 * num_cameras) = camera_step;
  for (int p = 0; p < num_points; ++p) {
    Eigen::Vector3d b = -point_gradient.segment<3>(3 * p);
    for (size_t i : by_point[p]) {
      const int c = jacobian.blocks[i].camera;
      if (c >= 0) b -= coupling[i].transpose() * camera_step.segment<6>(6 * c);
    }
    step.segment<3>(6 * num_cameras + 3 * p) = point_inverse[p] * b;
  }
  return step;
}

}  // namespace vec
