#include <gtest/gtest.h>

#include <limits>

#include "test_util.hpp"

using namespace fgssl;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t[4], 5.0);
  EXPECT_EQ(t.row(1)[0], 4.0);
  EXPECT_EQ(t.shape_str(), "2x3");
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, MatmulAgainstNaiveTripleLoop) {
  const Tensor a = testutil::random_tensor(5, 7, 1);
  Tensor b = testutil::random_tensor(7, 3, 2);
  b(2, 1) = 0.0;
  Tensor a_sparse = a;
  a_sparse(0, 0) = 0.0;
  a_sparse(3, 4) = 0.0;
  for (const Tensor* lhs : {&a, static_cast<const Tensor*>(&a_sparse)}) {
    const Tensor c = matmul_values(*lhs, b);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 7; ++k) s += (*lhs)(i, k) * b(k, j);
        EXPECT_NEAR(c(i, j), s, 1e-14);
      }
  }
  EXPECT_THROW(matmul_values(a, a), ShapeError);
}

TEST(Tensor, TransposeAndFrobenius) {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const Tensor t = transpose_values(a);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(frobenius_sq(a), 91.0);
}

TEST(Tensor, FiniteCheck) {
  Tensor a(2, 2, 1.0);
  EXPECT_NO_THROW(require_finite(a, "a"));
  a(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(require_finite(a, "a"), NumericError);
  a(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(a.all_finite());
}
