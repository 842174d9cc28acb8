#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedmmkt/errors.hpp"
#include "fedmmkt/rng.hpp"

namespace fedmmkt {

// Dense vector over doubles. Ops validate finiteness where the contract
// demands it; dims are implicit in the size.
using Vec = std::vector<double>;

// Dense row-major matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool same_shape(const Mat& other) const { return rows == other.rows && cols == other.cols; }
};

bool all_finite(const Vec& v);
bool all_finite(const Mat& m);

double dot(const Vec& a, const Vec& b);
double norm(const Vec& v);
double squared_distance(const Vec& a, const Vec& b);

// y = m * x
Vec matvec(const Mat& m, const Vec& x);
// y = m^T * x
Vec matvec_transposed(const Mat& m, const Vec& x);
// m += scale * a * b^T
void add_outer(Mat& m, double scale, const Vec& a, const Vec& b);
// m += scale * g
void add_scaled(Mat& m, double scale, const Mat& g);

// Probability vector: entries >= 0, summing to 1 within 1e-9.
class ProbVec {
public:
    explicit ProbVec(Vec entries);

    std::size_t dim() const { return entries_.size(); }
    double operator[](std::size_t i) const { return entries_[i]; }
    const Vec& entries() const { return entries_; }

private:
    Vec entries_;
};

// Temperature softmax with max-subtraction. Throws InvalidInputError on
// non-finite input or non-positive temperature.
ProbVec softmax(const Vec& v, double temperature = 1.0);

// Confidence weight 1 / (1 - sum p log p), natural log, 0*log 0 = 0.
// Lies in (0, 1]; equals 1 exactly on one-hot inputs.
double entropy_weight(const ProbVec& p);

// Cosine similarity clamped to [-1, 1]. A vector with norm below 1e-12
// yields 0 and sets *degenerate (if given) instead of producing NaN.
double cosine(const Vec& u, const Vec& v, bool* degenerate = nullptr);

// sum p log(p/q) with q floored at 1e-12. Nonnegative for valid inputs.
double kl_divergence(const ProbVec& p, const ProbVec& q);

// -log p[label], p[label] floored at 1e-12.
double cross_entropy(const ProbVec& p, std::size_t label);

// Fixed (non-trained) cross-attention operator. The input vectors of
// dimension d are reshaped into `tokens` tokens of dimension d/tokens;
// keys/values come from the kv tokens through seeded orthogonal
// projections, queries are the q tokens as-is, and the attended output is
// added residually to q. Deterministic given the params.
struct CAParams {
    std::size_t tokens = 4;
    Mat w_key;    // token_dim x token_dim, orthonormal columns
    Mat w_value;  // token_dim x token_dim, orthonormal columns
};

CAParams make_ca_params(std::size_t dim, std::size_t tokens, RngStream& rng);
CAParams make_ca_params(std::size_t dim, std::size_t tokens, std::uint64_t seed);

Vec cross_attention(const Vec& q, const Vec& kv, const CAParams& params);

// r x c matrix with orthonormal rows (requires r <= c), Gram-Schmidt over
// seeded Gaussian draws.
Mat orthonormal_rows(std::size_t r, std::size_t c, RngStream& rng);

// Square matrix with orthonormal columns (and rows).
Mat random_orthogonal(std::size_t n, RngStream& rng);

// Solves A * X = B in place (A square, partial-pivot Gaussian elimination);
// B holds X on return. Throws InvalidInputError on singular A.
void solve_linear(Mat a, Mat& b);

}  // namespace fedmmkt
