#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace refattn {

// Thrown whenever two operands (or requested dimensions) cannot be combined.
// The message always names both shapes.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Dense row-major 2-D matrix of doubles. All kernels in this library are
// pure functions over Matrix values; a constructed matrix is never mutated
// by them, so sharing across threads is safe.
class Matrix {
public:
    Matrix() = default;  // empty 0x0 placeholder, only valid as "absent"
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    std::string shape_str() const;
    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Accumulator for multiply-accumulate operations. One unit is one fused
// multiply-add; a matmul of shapes (m x k)·(k x n) adds exactly m*k*n.
// Counters are scoped per computation and never shared across threads.
struct MacCounter {
    unsigned long long macs = 0;
    void add(unsigned long long n) { macs += n; }
};

// Deterministic 64-bit generator (xoshiro256** seeded via splitmix64).
// Identical seeds give identical streams on every platform; the mapping to
// doubles uses the top 53 bits, so no library distribution is involved.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next_u64();
    double next_unit();                       // uniform in [0, 1)
    double next_symmetric(double scale);      // uniform in [-scale, scale]

private:
    std::uint64_t state_[4];
};

// c = a · b. Adds a.rows*a.cols*b.cols to the counter when one is given.
Matrix matmul(const Matrix& a, const Matrix& b, MacCounter* counter = nullptr);

// c = a · b^T without materializing the transpose at the call site.
Matrix matmul_bt(const Matrix& a, const Matrix& b, MacCounter* counter = nullptr);

// Row-wise softmax with per-row max subtraction. Each output row is
// non-negative and sums to 1.
Matrix row_softmax(const Matrix& x);

// Elementwise logistic function, outputs strictly in (0, 1).
Matrix sigmoid(const Matrix& x);
double sigmoid(double x);

// Uniform values in [-scale, scale], deterministic per Rng state.
Matrix rand_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale);

Matrix transpose(const Matrix& x);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& x, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);

// Scales row i of x by gates(i, 0); gates must be rows(x) x 1.
Matrix row_scale(const Matrix& x, const Matrix& gates);

// Copies columns [c0, c0+width) into a new rows x width matrix.
Matrix col_block(const Matrix& x, std::size_t c0, std::size_t width);
// Writes block into dst at column offset c0.
void set_col_block(Matrix& dst, std::size_t c0, const Matrix& block);

double max_abs(const Matrix& x);
double max_abs_diff(const Matrix& a, const Matrix& b);
double fro_norm(const Matrix& x);

}  // namespace refattn
