#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "vector/bundle_adjust.h"
#include "vector/errors.h"

namespace vec {

Pose Similarity::Apply(const Pose& pose) const {
  // x_cam = R_c (X - C) with X = s^-1 R^T (X' - t), so in the aligned frame
  // the rotation is R_c R^T and the center maps like any point.
  Pose aligned;
  aligned.rotation =
      Eigen::Quaterniond(pose.rotation.toRotationMatrix() * rotation.transpose())
          .normalized();
  aligned.center = Apply(pose.center);
  return aligned;
}

Similarity AlignSimilarity(std::span<const Eigen::Vector3d> estimated,
                           std::span<const Eigen::Vector3d> truth) {
  if (estimated.size() != truth.size()) {
    throw DegenerateConfiguration("point sets differ in size");
  }
  if (estimated.size() < 3) {
    throw DegenerateConfiguration("similarity alignment needs >= 3 points");
  }
  const auto n = static_cast<Eigen::Index>(estimated.size());
  Eigen::Matrix3Xd src(3, n);
  Eigen::Matrix3Xd dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimated[i];
    dst.col(i) = truth[i];
  }

  // Collinear or coincident sources leave a rotation about the line free.
  for (const Eigen::Matrix3Xd* set : {&src, &dst}) {
    const Eigen::Matrix3Xd centered = set->colwise() - set->rowwise().mean();
    const Eigen::Vector3d singular =
        Eigen::JacobiSVD<Eigen::Matrix3Xd>(centered).singularValues();
    if (singular(0) <= 1e-12 || singular(1) <= 1e-9 * singular(0)) {
      throw DegenerateConfiguration("points are collinear or coincident");
    }
  }

  const Eigen::Matrix4d transform = Eigen::umeyama(src, dst, true);
  Similarity similarity;
  const Eigen::Matrix3d scaled_rotation = transform.topLeftCorner<3, 3>();
  similarity.scale = std::cbrt(scaled_rotation.determinant());
  similarity.rotation = scaled_rotation / similarity.scale;
  similarity.translation = transform.topRightCorner<3, 1>();
  return similarity;
}

}  // namespace vec
