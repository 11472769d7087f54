#include "sdkv/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace sdkv {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> vals) {
    Matrix m(vals.size(), vals.size() ? vals.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : vals) {
        if (row.size() != m.cols) throw ShapeError("from_rows: ragged row lengths");
        std::size_t c = 0;
        for (double v : row) m.at(r, c++) = v;
        ++r;
    }
    return m;
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows) throw ShapeError("slice_rows: bad range");
    Matrix out(end - begin, cols);
    std::copy(row_ptr(begin), row_ptr(begin) + (end - begin) * cols, out.data.begin());
    return out;
}

bool Matrix::bit_equal(const Matrix& o) const {
    if (!same_shape(o)) return false;
    return std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    std::uint64_t ignored = 0;
    return matmul_counted(a, b, ignored);
}

Matrix matmul_counted(const Matrix& a, const Matrix& b, std::uint64_t& macs) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: inner dimensions differ, lhs " + shape_str(a) +
                         " vs rhs " + shape_str(b));
    }
    Matrix out(a.rows, b.cols);
    // i-k-j order: cache-friendly on b, and every out(i,j) still accumulates
    // over k in ascending order, so results match the naive i-j-k loop bit
    // for bit.
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* out_row = out.row_ptr(i);
        const double* a_row = a.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a_row[k];
            const double* b_row = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += aik * b_row[j];
        }
    }
    macs += static_cast<std::uint64_t>(a.rows) * a.cols * b.cols;
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* in = m.row_ptr(i);
        double* o = out.row_ptr(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cols; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) o[j] /= sum;
    }
    return out;
}

Matrix layer_norm_rows(const Matrix& m, const std::vector<double>& scale,
                       const std::vector<double>& shift, double eps) {
    return layer_norm_rows_detail(m, scale, shift, eps, nullptr);
}

Matrix layer_norm_rows_detail(const Matrix& m, const std::vector<double>& scale,
                              const std::vector<double>& shift, double eps,
                              LayerNormDetail* detail) {
    if (scale.size() != m.cols || shift.size() != m.cols) {
        throw ShapeError("layer_norm_rows: scale/shift length " +
                         std::to_string(scale.size()) + " does not match cols " +
                         std::to_string(m.cols));
    }
    Matrix out(m.rows, m.cols);
    if (detail) {
        detail->xhat = Matrix(m.rows, m.cols);
        detail->mean.assign(m.rows, 0.0);
        detail->inv_std.assign(m.rows, 0.0);
    }
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* in = m.row_ptr(i);
        double* o = out.row_ptr(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) mean += in[j];
        mean /= static_cast<double>(m.cols);
        double var = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            const double d = in[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m.cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < m.cols; ++j) {
            const double xhat = (in[j] - mean) * inv;
            o[j] = xhat * scale[j] + shift[j];
            if (detail) detail->xhat.at(i, j) = xhat;
        }
        if (detail) {
            detail->mean[i] = mean;
            detail->inv_std[i] = inv;
        }
    }
    return out;
}

double sigmoid(double x) {
    // Split on sign to avoid overflow in exp for large |x|.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = sigmoid(m.data[i]);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
    }
    Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff: shapes differ, " + shape_str(a) + " vs " +
                         shape_str(b));
    }
    double mx = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        mx = std::max(mx, std::abs(a.data[i] - b.data[i]));
    return mx;
}

GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& x,
                           const std::vector<double>& analytic_grad, double step) {
    if (step < 1e-7 || step > 1e-3) {
        throw NumericError("grad_check: step " + std::to_string(step) +
                           " outside [1e-7, 1e-3]");
    }
    if (x.size() != analytic_grad.size()) {
        throw ShapeError("grad_check: x has " + std::to_string(x.size()) +
                         " entries, analytic gradient has " +
                         std::to_string(analytic_grad.size()));
    }
    GradCheckReport report;
    report.step_size = step;
    std::vector<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double fp = f(probe);
        probe[i] = x[i] - step;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("grad_check: non-finite f at coordinate " +
                               std::to_string(i));
        }
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom =
            std::max({std::abs(analytic_grad[i]), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic_grad[i] - numeric) / denom;
        if (rel > report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }
    return report;
}

}  // namespace sdkv
