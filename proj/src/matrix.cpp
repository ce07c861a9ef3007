#include "refattn/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace refattn {

namespace {

std::string shape_of(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

void require_positive(std::size_t rows, std::size_t cols, const char* what) {
    if (rows == 0 || cols == 0) {
        throw DimensionError(std::string(what) + ": dimensions must be positive, got " +
                             shape_of(rows, cols));
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    require_positive(rows, cols, "Matrix");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    require_positive(rows, cols, "Matrix");
    if (data_.size() != rows * cols) {
        throw DimensionError("Matrix: " + std::to_string(data_.size()) +
                             " values do not fill shape " + shape_of(rows, cols));
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
    : Matrix(rows, cols, std::vector<double>(values)) {}

Matrix Matrix::identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
}

std::string Matrix::shape_str() const { return shape_of(rows_, cols_); }

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// --- Rng: xoshiro256** seeded via splitmix64 -------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t rotl64(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl64(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl64(state_[3], 45);
    return result;
}

double Rng::next_unit() {
    // 53 high bits -> [0, 1) with full double resolution
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_symmetric(double scale) {
    return (2.0 * next_unit() - 1.0) * scale;
}

// --- kernels ----------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b, MacCounter* counter) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: lhs " + a.shape_str() + " incompatible with rhs " +
                             b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix out(m, n);

    // Blocked ikj. Per output element the k-loop still runs in ascending
    // order, so results are identical to the unblocked triple loop.
    constexpr std::size_t kColBlock = 512;
    constexpr std::size_t kDepthBlock = 64;
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
        const std::size_t j1 = std::min(j0 + kColBlock, n);
        for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
            const std::size_t p1 = std::min(p0 + kDepthBlock, k);
            for (std::size_t i = 0; i < m; ++i) {
                double* crow = out.row(i);
                const double* arow = a.row(i);
                for (std::size_t p = p0; p < p1; ++p) {
                    const double aip = arow[p];
                    const double* brow = b.row(p);
                    for (std::size_t j = j0; j < j1; ++j) crow[j] += aip * brow[j];
                }
            }
        }
    }
    if (counter) counter->add(static_cast<unsigned long long>(m) * k * n);
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b, MacCounter* counter) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_bt: lhs " + a.shape_str() + " incompatible with rhs^T " +
                             std::to_string(b.cols()) + "x" + std::to_string(b.rows()));
    }
    return matmul(a, transpose(b), counter);
}

Matrix row_softmax(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* in = x.row(i);
        double* o = out.row(i);
        double mx = in[0];
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < x.cols(); ++j) o[j] *= inv;
    }
    return out;
}

double sigmoid(double x) {
    double y;
    if (x >= 0.0) {
        y = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        y = e / (1.0 + e);
    }
    // keep the open-interval contract at saturation
    if (y >= 1.0) y = std::nextafter(1.0, 0.0);
    if (y <= 0.0) y = std::numeric_limits<double>::denorm_min();
    return y;
}

Matrix sigmoid(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = sigmoid(x(i, j));
    }
    return out;
}

Matrix rand_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
    require_positive(rows, cols, "rand_matrix");
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out(i, j) = rng.next_symmetric(scale);
    }
    return out;
}

Matrix transpose(const Matrix& x) {
    Matrix out(x.cols(), x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
    }
    return out;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": " + a.shape_str() + " vs " + b.shape_str());
    }
}

}  // namespace

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

Matrix scale(const Matrix& x, double s) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * s;
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

Matrix row_scale(const Matrix& x, const Matrix& gates) {
    if (gates.rows() != x.rows() || gates.cols() != 1) {
        throw DimensionError("row_scale: gates " + gates.shape_str() + " must be " +
                             std::to_string(x.rows()) + "x1 for input " + x.shape_str());
    }
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double g = gates(i, 0);
        const double* in = x.row(i);
        double* o = out.row(i);
        for (std::size_t j = 0; j < x.cols(); ++j) o[j] = g * in[j];
    }
    return out;
}

Matrix col_block(const Matrix& x, std::size_t c0, std::size_t width) {
    if (c0 + width > x.cols()) {
        throw DimensionError("col_block: [" + std::to_string(c0) + ", " +
                             std::to_string(c0 + width) + ") out of range for " + x.shape_str());
    }
    Matrix out(x.rows(), width);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* in = x.row(i) + c0;
        std::copy(in, in + width, out.row(i));
    }
    return out;
}

void set_col_block(Matrix& dst, std::size_t c0, const Matrix& block) {
    if (block.rows() != dst.rows() || c0 + block.cols() > dst.cols()) {
        throw DimensionError("set_col_block: block " + block.shape_str() + " at column " +
                             std::to_string(c0) + " does not fit " + dst.shape_str());
    }
    for (std::size_t i = 0; i < dst.rows(); ++i) {
        std::copy(block.row(i), block.row(i) + block.cols(), dst.row(i) + c0);
    }
}

double max_abs(const Matrix& x) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::fabs(x.data()[i]));
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

double fro_norm(const Matrix& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i] * x.data()[i];
    return std::sqrt(s);
}

}  // namespace refattn
