#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sdkv/errors.hpp"

namespace sdkv {

// Dense row-major matrix of IEEE doubles. All kernels in this project use a
// fixed accumulation order (ascending inner index per output element), so any
// two code paths that perform the same mathematical reduction produce
// bit-identical results.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> vals);

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    // Copies rows [begin, end) into a new matrix.
    Matrix slice_rows(std::size_t begin, std::size_t end) const;

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool bit_equal(const Matrix& o) const;
};

// out = a * b, accumulating over k in ascending order for every element.
Matrix matmul(const Matrix& a, const Matrix& b);

// Same product, adds a.rows*a.cols*b.cols to the multiply-accumulate counter.
Matrix matmul_counted(const Matrix& a, const Matrix& b, std::uint64_t& macs);

// Row-stable softmax: max subtraction, each output row sums to 1.
Matrix softmax_rows(const Matrix& m);

// Per-row layer normalization with per-column scale/shift.
Matrix layer_norm_rows(const Matrix& m, const std::vector<double>& scale,
                       const std::vector<double>& shift, double eps = 1e-5);

// Normalization internals needed for manual backprop. xhat is the normalized
// row before scale/shift; variance is biased (divides by cols).
struct LayerNormDetail {
    Matrix xhat;
    std::vector<double> mean;
    std::vector<double> inv_std;
};
Matrix layer_norm_rows_detail(const Matrix& m, const std::vector<double>& scale,
                              const std::vector<double>& shift, double eps,
                              LayerNormDetail* detail);

double sigmoid(double x);
Matrix sigmoid(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Central-difference gradient check.
struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    double step_size = 0.0;
};

// Compares analytic_grad against (f(x+h e_i) - f(x-h e_i)) / (2h) for every
// coordinate. Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
// Throws NumericError naming the coordinate if f evaluates to a non-finite
// value. step must lie in [1e-7, 1e-3].
GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& x,
                           const std::vector<double>& analytic_grad, double step);

}  // namespace sdkv
