#include "fedmmkt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedmmkt {

namespace {
constexpr double kProbFloor = 1e-12;
constexpr double kNormFloor = 1e-12;
}  // namespace

bool all_finite(const Vec& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

bool all_finite(const Mat& m) {
    for (double x : m.data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw InvalidInputError("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

double squared_distance(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw InvalidInputError("squared_distance: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Vec matvec(const Mat& m, const Vec& x) {
    if (m.cols != x.size()) throw InvalidInputError("matvec: dimension mismatch");
    Vec y(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        double s = 0.0;
        const double* row = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
    return y;
}

Vec matvec_transposed(const Mat& m, const Vec& x) {
    if (m.rows != x.size()) throw InvalidInputError("matvec_transposed: dimension mismatch");
    Vec y(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        const double* row = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
    }
    return y;
}

void add_outer(Mat& m, double scale, const Vec& a, const Vec& b) {
    if (m.rows != a.size() || m.cols != b.size())
        throw InvalidInputError("add_outer: dimension mismatch");
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* row = m.data.data() + r * m.cols;
        const double ar = scale * a[r];
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += ar * b[c];
    }
}

void add_scaled(Mat& m, double scale, const Mat& g) {
    if (!m.same_shape(g)) throw InvalidInputError("add_scaled: shape mismatch");
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] += scale * g.data[i];
}

ProbVec::ProbVec(Vec entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw InvalidInputError("ProbVec: empty");
    double sum = 0.0;
    for (double p : entries_) {
        if (!std::isfinite(p) || p < 0.0) throw InvalidInputError("ProbVec: entries must be in [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInputError("ProbVec: entries must sum to 1");
}

ProbVec softmax(const Vec& v, double temperature) {
    if (v.empty()) throw InvalidInputError("softmax: empty input");
    if (!(temperature > 0.0)) throw InvalidInputError("softmax: temperature must be positive");
    if (!all_finite(v)) throw InvalidInputError("softmax: non-finite input");
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x / temperature);
    Vec e(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        e[i] = std::exp(v[i] / temperature - m);
        sum += e[i];
    }
    for (auto& x : e) x /= sum;
    return ProbVec(std::move(e));
}

double entropy_weight(const ProbVec& p) {
    double plogp = 0.0;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        if (p[i] > 0.0) plogp += p[i] * std::log(p[i]);
    }
    return 1.0 / (1.0 - plogp);
}

double cosine(const Vec& u, const Vec& v, bool* degenerate) {
    if (u.size() != v.size()) throw InvalidInputError("cosine: dimension mismatch");
    if (degenerate) *degenerate = false;
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu < kNormFloor || nv < kNormFloor) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

double kl_divergence(const ProbVec& p, const ProbVec& q) {
    if (p.dim() != q.dim()) throw InvalidInputError("kl_divergence: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / std::max(q[i], kProbFloor));
    }
    return s;
}

double cross_entropy(const ProbVec& p, std::size_t label) {
    if (label >= p.dim()) throw InvalidInputError("cross_entropy: label out of range");
    return -std::log(std::max(p[label], kProbFloor));
}

CAParams make_ca_params(std::size_t dim, std::size_t tokens, RngStream& rng) {
    if (tokens == 0 || dim == 0 || dim % tokens != 0)
        throw InvalidInputError("make_ca_params: dim must be divisible by token count");
    const std::size_t token_dim = dim / tokens;
    CAParams p;
    p.tokens = tokens;
    p.w_key = random_orthogonal(token_dim, rng);
    p.w_value = random_orthogonal(token_dim, rng);
    return p;
}

CAParams make_ca_params(std::size_t dim, std::size_t tokens, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, {kCrossAttention});
    return make_ca_params(dim, tokens, rng);
}

Vec cross_attention(const Vec& q, const Vec& kv, const CAParams& params) {
    if (q.size() != kv.size()) throw InvalidInputError("cross_attention: dimension mismatch");
    if (!all_finite(q) || !all_finite(kv)) throw InvalidInputError("cross_attention: non-finite input");
    const std::size_t dim = q.size();
    const std::size_t t = params.tokens;
    if (t == 0 || dim % t != 0)
        throw InvalidInputError("cross_attention: dim not divisible by token count");
    const std::size_t td = dim / t;
    if (params.w_key.rows != td || params.w_key.cols != td || params.w_value.rows != td ||
        params.w_value.cols != td)
        throw InvalidInputError("cross_attention: params sized for a different dim");

    // Project kv tokens to keys/values.
    std::vector<Vec> keys(t), values(t);
    for (std::size_t j = 0; j < t; ++j) {
        Vec tok(kv.begin() + j * td, kv.begin() + (j + 1) * td);
        keys[j] = matvec(params.w_key, tok);
        values[j] = matvec(params.w_value, tok);
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(td));
    Vec out = q;
    for (std::size_t a = 0; a < t; ++a) {
        Vec q_tok(q.begin() + a * td, q.begin() + (a + 1) * td);
        Vec scores(t);
        for (std::size_t b = 0; b < t; ++b) scores[b] = dot(q_tok, keys[b]) * scale;
        const ProbVec attn = softmax(scores);
        for (std::size_t b = 0; b < t; ++b) {
            const double w = attn[b];
            for (std::size_t i = 0; i < td; ++i) out[a * td + i] += w * values[b][i];
        }
    }
    return out;
}

Mat orthonormal_rows(std::size_t r, std::size_t c, RngStream& rng) {
    if (r == 0 || c == 0 || r > c)
        throw InvalidInputError("orthonormal_rows: need 1 <= rows <= cols");
    Mat m(r, c);
    for (auto& x : m.data) x = rng.normal();
    for (std::size_t i = 0; i < r; ++i) {
        for (int attempt = 0;; ++attempt) {
            // Two Gram-Schmidt passes keep orthogonality near machine precision.
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < i; ++j) {
                    double d = 0.0;
                    for (std::size_t k = 0; k < c; ++k) d += m(i, k) * m(j, k);
                    for (std::size_t k = 0; k < c; ++k) m(i, k) -= d * m(j, k);
                }
            }
            double n = 0.0;
            for (std::size_t k = 0; k < c; ++k) n += m(i, k) * m(i, k);
            n = std::sqrt(n);
            if (n > 1e-8) {
                for (std::size_t k = 0; k < c; ++k) m(i, k) /= n;
                break;
            }
            if (attempt > 100) throw InvalidInputError("orthonormal_rows: degenerate draw");
            for (std::size_t k = 0; k < c; ++k) m(i, k) = rng.normal();
        }
    }
    return m;
}

Mat random_orthogonal(std::size_t n, RngStream& rng) { return orthonormal_rows(n, n, rng); }

void solve_linear(Mat a, Mat& b) {
    if (a.rows != a.cols || a.rows != b.rows)
        throw InvalidInputError("solve_linear: shape mismatch");
    const std::size_t n = a.rows;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        }
        if (std::abs(a(pivot, col)) < 1e-12) throw InvalidInputError("solve_linear: singular matrix");
        if (pivot != col) {
            for (std::size_t k = 0; k < n; ++k) std::swap(a(col, k), a(pivot, k));
            for (std::size_t k = 0; k < b.cols; ++k) std::swap(b(col, k), b(pivot, k));
        }
        const double inv = 1.0 / a(col, col);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col) * inv;
            if (f == 0.0) continue;
            for (std::size_t k = col; k < n; ++k) a(r, k) -= f * a(col, k);
            for (std::size_t k = 0; k < b.cols; ++k) b(r, k) -= f * b(col, k);
        }
    }
    for (std::size_t r = 0; r < n; ++r) {
        const double inv = 1.0 / a(r, r);
        for (std::size_t k = 0; k < b.cols; ++k) b(r, k) *= inv;
    }
}

}  // namespace fedmmkt
