#include "cssl/matrix.hpp"

#include <gtest/gtest.h>

namespace cssl {
namespace {

TEST(Matrix, MatmulSmall) {
  Matrix a(2, 3);
  a(0, 0) = 1; a(0, 1) = 2; a(0, 2) = 3;
  a(1, 0) = 4; a(1, 1) = 5; a(1, 2) = 6;
  Matrix b(3, 2);
  b(0, 0) = 7; b(0, 1) = 8;
  b(1, 0) = 9; b(1, 1) = 10;
  b(2, 0) = 11; b(2, 1) = 12;
  const Matrix c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c(0, 0), 58.0);
  EXPECT_DOUBLE_EQ(c(0, 1), 64.0);
  EXPECT_DOUBLE_EQ(c(1, 0), 139.0);
  EXPECT_DOUBLE_EQ(c(1, 1), 154.0);
}

TEST(Matrix, MatmulShapeError) {
  Matrix a(2, 3), b(2, 2);
  EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Matrix, TransposedProducts) {
  Matrix a(3, 2), b(3, 4);
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = static_cast<double>(i) - 2.5;
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = 0.5 * static_cast<double>(i);
  EXPECT_LE(max_abs_diff(matmul_at_b(a, b), matmul(transpose(a), b)), 1e-15);

  Matrix c(2, 3), d(5, 3);
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = static_cast<double>(i);
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = 1.0 - static_cast<double>(i);
  EXPECT_LE(max_abs_diff(matmul_a_bt(c, d), matmul(c, transpose(d))), 1e-15);
}

TEST(Matrix, IdentityAndRowOps) {
  const Matrix id = Matrix::identity(3);
  Matrix x(2, 3);
  x(0, 0) = 1; x(0, 1) = 2; x(0, 2) = 3;
  x(1, 0) = -1; x(1, 1) = 0; x(1, 2) = 4;
  EXPECT_EQ(max_abs_diff(matmul(x, id), x), 0.0);

  Matrix y = x;
  add_row_vector(y, {10, 20, 30});
  EXPECT_DOUBLE_EQ(y(1, 2), 34.0);

  const auto sums = column_sums(x);
  EXPECT_DOUBLE_EQ(sums[0], 0.0);
  EXPECT_DOUBLE_EQ(sums[2], 7.0);
}

TEST(Matrix, FiniteCheck) {
  Matrix m(1, 2);
  EXPECT_TRUE(all_finite(m));
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(all_finite(m));
}

}  // namespace
}  // namespace cssl
