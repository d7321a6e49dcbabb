#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace lst {

// Row-major dense matrix: the carrier of images, activations and weights.
template <typename T>
using RealMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RealVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// A batch of B images of size r x c is stored as one (B*r) x c row-major
// matrix; image b occupies rows [b*r, (b+1)*r). For square images the same
// memory read as a B x r*c matrix is the row-major flattening of each image.
//
// Transposes every r x c block in place of the batch: (B*r) x c -> (B*c) x r.
template <typename T>
RealMatrix<T> block_transpose(const RealMatrix<T>& stacked, std::size_t block_rows) {
    const auto r = static_cast<Eigen::Index>(block_rows);
    const Eigen::Index c = stacked.cols();
    const Eigen::Index count = stacked.rows() / r;
    RealMatrix<T> out(count * c, r);
    for (Eigen::Index b = 0; b < count; ++b) {
        out.middleRows(b * c, c) = stacked.middleRows(b * r, r).transpose();
    }
    return out;
}

} // namespace lst
