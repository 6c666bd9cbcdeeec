#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synlm/error.hpp"
#include "synlm/rng.hpp"

namespace synlm {

template <typename T>
using EMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMatrix<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMatrix<T>>;

/// Dense row-major matrix. Vectors are 1xN rows.
template <typename T>
class Tensor {
   public:
    using Scalar = T;

    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, T fill = T(0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        Tensor t(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != t.cols_) throw Error(Errc::ShapeMismatch, "ragged initializer");
            std::copy(row.begin(), row.end(), t.data_.begin() + static_cast<std::ptrdiff_t>(r * t.cols_));
            ++r;
        }
        return t;
    }

    static Tensor row(std::initializer_list<T> values) {
        Tensor t(1, values.size());
        std::copy(values.begin(), values.end(), t.data_.begin());
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_string() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::span<T> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    EMap<T> map() { return EMap<T>(data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)); }
    ECMap<T> map() const {
        return ECMap<T>(data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

   private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool decay = false;  // subject to decoupled weight decay

    void zero_grad() {
        if (!grad.same_shape(value)) grad = Tensor<T>(value.rows(), value.cols());
        grad.fill(T(0));
    }
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order, so backward() is a single reverse sweep.
template <typename T>
class Tape {
   public:
    struct Var {
        std::size_t id = static_cast<std::size_t>(-1);
    };
    using Backward = std::function<void(Tape&, std::size_t)>;

    Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    /// A free leaf that receives a gradient (used for gradient checks).
    Var input(Tensor<T> value) { return push(std::move(value), true, nullptr); }

    Var parameter(Parameter<T>& p) {
        Node n;
        n.external = &p.value;
        n.param = &p;
        n.requires_grad = true;
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    Var push(Tensor<T> value, bool requires_grad, Backward backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    const Tensor<T>& value(Var v) const { return value(v.id); }
    const Tensor<T>& value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.external ? *n.external : n.value;
    }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, allocated (zeroed) on first use.
    Tensor<T>& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty() && !value(id).empty()) {
            const Tensor<T>& v = value(id);
            n.grad = Tensor<T>(v.rows(), v.cols());
        }
        return n.grad;
    }
    Tensor<T>& grad(Var v) { return grad(v.id); }
    bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

    std::size_t size() const { return nodes_.size(); }

    /// Back-propagates from a 1x1 node. Parameter gradients are accumulated
    /// into Parameter::grad.
    void backward(Var out, T seed = T(1)) {
        if (value(out).size() != 1) throw Error(Errc::ShapeMismatch, "backward() needs a scalar output");
        grad(out)[0] += seed;
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param) {
                Parameter<T>& p = *n.param;
                if (!p.grad.same_shape(p.value)) p.zero_grad();
                p.grad.map() += n.grad.map();
            }
        }
    }

   private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Parameter<T>* param = nullptr;
        Tensor<T> grad;
        Backward backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

template <typename T>
using Var = typename Tape<T>::Var;

namespace detail {
template <typename T>
void require(bool cond, const std::string& what) {
    if (!cond) throw Error(Errc::ShapeMismatch, what);
}
}  // namespace detail

/// op(a) * op(b), where op transposes when the flag is set.
template <typename T>
Var<T> matmul(Tape<T>& tape, Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
    const Tensor<T>& A = tape.value(a);
    const Tensor<T>& B = tape.value(b);
    const std::size_t m = trans_a ? A.cols() : A.rows();
    const std::size_t k = trans_a ? A.rows() : A.cols();
    const std::size_t kb = trans_b ? B.cols() : B.rows();
    const std::size_t n = trans_b ? B.rows() : B.cols();
    detail::require<T>(k == kb, "matmul inner dimensions " + A.shape_string() + " x " + B.shape_string());
    Tensor<T> C(m, n);
    auto out = C.map();
    if (!trans_a && !trans_b) out.noalias() = A.map() * B.map();
    if (!trans_a && trans_b) out.noalias() = A.map() * B.map().transpose();
    if (trans_a && !trans_b) out.noalias() = A.map().transpose() * B.map();
    if (trans_a && trans_b) out.noalias() = A.map().transpose() * B.map().transpose();
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(C), rg, [a, b, trans_a, trans_b](Tape<T>& t, std::size_t self) {
        const auto dC = t.grad(self).map();
        const auto Av = t.value(a).map();
        const auto Bv = t.value(b).map();
        if (t.requires_grad(a)) {
            auto dA = t.grad(a).map();
            // dA = dC * op(B)^T (transposed when A was)
            if (!trans_a && !trans_b) dA.noalias() += dC * Bv.transpose();
            if (!trans_a && trans_b) dA.noalias() += dC * Bv;
            if (trans_a && !trans_b) dA.noalias() += Bv * dC.transpose();
            if (trans_a && trans_b) dA.noalias() += Bv.transpose() * dC.transpose();
        }
        if (t.requires_grad(b)) {
            auto dB = t.grad(b).map();
            if (!trans_a && !trans_b) dB.noalias() += Av.transpose() * dC;
            if (!trans_a && trans_b) dB.noalias() += dC.transpose() * Av;
            if (trans_a && !trans_b) dB.noalias() += Av * dC;
            if (trans_a && trans_b) dB.noalias() += dC.transpose() * Av.transpose();
        }
    });
}

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
    const Tensor<T>& A = tape.value(a);
    const Tensor<T>& B = tape.value(b);
    detail::require<T>(A.same_shape(B), "add " + A.shape_string() + " + " + B.shape_string());
    Tensor<T> C = A;
    C.map() += B.map();
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(C), rg, [a, b](Tape<T>& t, std::size_t self) {
        if (t.requires_grad(a)) t.grad(a).map() += t.grad(self).map();
        if (t.requires_grad(b)) t.grad(b).map() += t.grad(self).map();
    });
}

/// Adds a 1xN row to every row of an MxN matrix.
template <typename T>
Var<T> add_row(Tape<T>& tape, Var<T> a, Var<T> row) {
    const Tensor<T>& A = tape.value(a);
    const Tensor<T>& R = tape.value(row);
    detail::require<T>(R.rows() == 1 && R.cols() == A.cols(), "add_row " + A.shape_string() + " + " + R.shape_string());
    Tensor<T> C = A;
    C.map().rowwise() += R.map().row(0);
    const bool rg = tape.requires_grad(a) || tape.requires_grad(row);
    return tape.push(std::move(C), rg, [a, row](Tape<T>& t, std::size_t self) {
        if (t.requires_grad(a)) t.grad(a).map() += t.grad(self).map();
        if (t.requires_grad(row)) t.grad(row).map().row(0) += t.grad(self).map().colwise().sum();
    });
}

template <typename T>
Var<T> scale(Tape<T>& tape, Var<T> a, T s) {
    Tensor<T> C = tape.value(a);
    C.map() *= s;
    return tape.push(std::move(C), tape.requires_grad(a), [a, s](Tape<T>& t, std::size_t self) {
        t.grad(a).map() += s * t.grad(self).map();
    });
}

template <typename T>
Var<T> transpose(Tape<T>& tape, Var<T> a) {
    const Tensor<T>& A = tape.value(a);
    Tensor<T> C(A.cols(), A.rows());
    C.map() = A.map().transpose();
    return tape.push(std::move(C), tape.requires_grad(a), [a](Tape<T>& t, std::size_t self) {
        t.grad(a).map() += t.grad(self).map().transpose();
    });
}

template <typename T>
Var<T> slice_cols(Tape<T>& tape, Var<T> a, std::size_t start, std::size_t count) {
    const Tensor<T>& A = tape.value(a);
    detail::require<T>(start + count <= A.cols(), "slice_cols out of range");
    Tensor<T> C(A.rows(), count);
    C.map() = A.map().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
    return tape.push(std::move(C), tape.requires_grad(a), [a, start, count](Tape<T>& t, std::size_t self) {
        t.grad(a).map().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
            t.grad(self).map();
    });
}

template <typename T>
Var<T> concat_cols(Tape<T>& tape, const std::vector<Var<T>>& parts) {
    detail::require<T>(!parts.empty(), "concat_cols of nothing");
    const std::size_t rows = tape.value(parts[0]).rows();
    std::size_t cols = 0;
    bool rg = false;
    for (auto p : parts) {
        detail::require<T>(tape.value(p).rows() == rows, "concat_cols row mismatch");
        cols += tape.value(p).cols();
        rg = rg || tape.requires_grad(p);
    }
    Tensor<T> C(rows, cols);
    std::size_t off = 0;
    for (auto p : parts) {
        const auto& P = tape.value(p);
        C.map().middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(P.cols())) = P.map();
        off += P.cols();
    }
    return tape.push(std::move(C), rg, [parts](Tape<T>& t, std::size_t self) {
        std::size_t o = 0;
        for (auto p : parts) {
            const std::size_t c = t.value(p).cols();
            if (t.requires_grad(p)) {
                t.grad(p).map() += t.grad(self).map().middleCols(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c));
            }
            o += c;
        }
    });
}

template <typename T>
Var<T> concat_rows(Tape<T>& tape, const std::vector<Var<T>>& parts) {
    detail::require<T>(!parts.empty(), "concat_rows of nothing");
    const std::size_t cols = tape.value(parts[0]).cols();
    std::size_t rows = 0;
    bool rg = false;
    for (auto p : parts) {
        detail::require<T>(tape.value(p).cols() == cols, "concat_rows column mismatch");
        rows += tape.value(p).rows();
        rg = rg || tape.requires_grad(p);
    }
    Tensor<T> C(rows, cols);
    std::size_t off = 0;
    for (auto p : parts) {
        const auto& P = tape.value(p);
        std::copy(P.data(), P.data() + P.size(), C.data() + off * cols);
        off += P.rows();
    }
    return tape.push(std::move(C), rg, [parts](Tape<T>& t, std::size_t self) {
        std::size_t o = 0;
        for (auto p : parts) {
            const std::size_t r = t.value(p).rows();
            if (t.requires_grad(p)) {
                t.grad(p).map() += t.grad(self).map().middleRows(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(r));
            }
            o += r;
        }
    });
}

/// Gathers rows of `table` (VxH) for each id: result is len(ids) x H.
template <typename T>
Var<T> embedding_lookup(Tape<T>& tape, Var<T> table, std::vector<int> ids) {
    const Tensor<T>& E = tape.value(table);
    Tensor<T> C(ids.size(), E.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= E.rows()) {
            throw Error(Errc::BadTarget, "embedding id " + std::to_string(ids[i]) + " out of range");
        }
        C.map().row(static_cast<Eigen::Index>(i)) = E.map().row(ids[i]);
    }
    return tape.push(std::move(C), tape.requires_grad(table), [table, ids = std::move(ids)](Tape<T>& t, std::size_t self) {
        auto dE = t.grad(table).map();
        const auto dC = t.grad(self).map();
        for (std::size_t i = 0; i < ids.size(); ++i) dE.row(ids[i]) += dC.row(static_cast<Eigen::Index>(i));
    });
}

/// Row-wise layer normalization: (x - mean) / sqrt(var + eps) * gain + bias.
template <typename T>
Var<T> layernorm(Tape<T>& tape, Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
    const Tensor<T>& X = tape.value(x);
    const Tensor<T>& G = tape.value(gain);
    const Tensor<T>& B = tape.value(bias);
    const std::size_t n = X.cols();
    detail::require<T>(n >= 1 && G.rows() == 1 && G.cols() == n && B.same_shape(G), "layernorm shapes");
    Tensor<T> xhat(X.rows(), n);
    std::vector<T> rstd(X.rows());
    Tensor<T> Y(X.rows(), n);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        T mean = 0;
        for (std::size_t c = 0; c < n; ++c) mean += X(r, c);
        mean /= static_cast<T>(n);
        T var = 0;
        for (std::size_t c = 0; c < n; ++c) var += (X(r, c) - mean) * (X(r, c) - mean);
        var /= static_cast<T>(n);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            xhat(r, c) = (X(r, c) - mean) * rstd[r];
            Y(r, c) = xhat(r, c) * G[c] + B[c];
        }
    }
    const bool rg = tape.requires_grad(x) || tape.requires_grad(gain) || tape.requires_grad(bias);
    return tape.push(std::move(Y), rg,
                     [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
                         const Tensor<T>& dY = t.grad(self);
                         const Tensor<T>& G = t.value(gain);
                         const std::size_t n = dY.cols();
                         if (t.requires_grad(gain) || t.requires_grad(bias)) {
                             for (std::size_t r = 0; r < dY.rows(); ++r) {
                                 for (std::size_t c = 0; c < n; ++c) {
                                     if (t.requires_grad(gain)) t.grad(gain)[c] += dY(r, c) * xhat(r, c);
                                     if (t.requires_grad(bias)) t.grad(bias)[c] += dY(r, c);
                                 }
                             }
                         }
                         if (t.requires_grad(x)) {
                             Tensor<T>& dX = t.grad(x);
                             for (std::size_t r = 0; r < dY.rows(); ++r) {
                                 T mean_g = 0, mean_gx = 0;
                                 for (std::size_t c = 0; c < n; ++c) {
                                     const T g = dY(r, c) * G[c];
                                     mean_g += g;
                                     mean_gx += g * xhat(r, c);
                                 }
                                 mean_g /= static_cast<T>(n);
                                 mean_gx /= static_cast<T>(n);
                                 for (std::size_t c = 0; c < n; ++c) {
                                     const T g = dY(r, c) * G[c];
                                     dX(r, c) += rstd[r] * (g - mean_g - xhat(r, c) * mean_gx);
                                 }
                             }
                         }
                     });
}

namespace detail {
template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
}

/// GELU, tanh approximation.
template <typename T>
T gelu_value(T x) {
    const T u = detail::kGeluC<T> * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
Var<T> gelu(Tape<T>& tape, Var<T> x) {
    const Tensor<T>& X = tape.value(x);
    Tensor<T> Y(X.rows(), X.cols());
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = gelu_value(X[i]);
    return tape.push(std::move(Y), tape.requires_grad(x), [x](Tape<T>& t, std::size_t self) {
        const Tensor<T>& X = t.value(x);
        const Tensor<T>& dY = t.grad(self);
        Tensor<T>& dX = t.grad(x);
        for (std::size_t i = 0; i < X.size(); ++i) {
            const T v = X[i];
            const T u = detail::kGeluC<T> * (v + T(0.044715) * v * v * v);
            const T th = std::tanh(u);
            const T du = detail::kGeluC<T> * (T(1) + T(3) * T(0.044715) * v * v);
            dX[i] += dY[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
        }
    });
}

/// Inverted dropout with a counter-based mask: element i of call `stream`
/// is kept iff rng.uniform(stream * 2^32 + i) >= p.
template <typename T>
Var<T> dropout(Tape<T>& tape, Var<T> x, double p, const CounterRng& rng, std::uint64_t stream) {
    if (p <= 0.0) return x;
    const Tensor<T>& X = tape.value(x);
    std::vector<T> mask(X.size());
    const T keep_scale = T(1.0 / (1.0 - p));
    Tensor<T> Y(X.rows(), X.cols());
    for (std::size_t i = 0; i < X.size(); ++i) {
        mask[i] = rng.uniform((stream << 32) + i) >= p ? keep_scale : T(0);
        Y[i] = X[i] * mask[i];
    }
    return tape.push(std::move(Y), tape.requires_grad(x), [x, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
        Tensor<T>& dX = t.grad(x);
        const Tensor<T>& dY = t.grad(self);
        for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += dY[i] * mask[i];
    });
}

/// Softmax over each column of scores + mask, where mask entries are 0 or
/// -inf. Masked entries come out exactly 0.
template <typename T>
Tensor<T> masked_softmax_value(const Tensor<T>& S, const Tensor<T>* M) {
    Tensor<T> P(S.rows(), S.cols());
    const T ninf = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < S.cols(); ++c) {
        T mx = ninf;
        for (std::size_t r = 0; r < S.rows(); ++r) {
            if (M && (*M)(r, c) == ninf) continue;
            mx = std::max(mx, S(r, c));
        }
        if (mx == ninf) throw Error(Errc::AllMaskedColumn, "column " + std::to_string(c) + " has no unmasked entry");
        T sum = 0;
        for (std::size_t r = 0; r < S.rows(); ++r) {
            if (M && (*M)(r, c) == ninf) {
                P(r, c) = T(0);
                continue;
            }
            const T e = std::exp(S(r, c) - mx);
            P(r, c) = e;
            sum += e;
        }
        for (std::size_t r = 0; r < S.rows(); ++r) P(r, c) /= sum;
    }
    return P;
}

template <typename T>
Var<T> masked_softmax(Tape<T>& tape, Var<T> scores, const Tensor<T>* mask) {
    const Tensor<T>& S = tape.value(scores);
    if (mask) detail::require<T>(mask->same_shape(S), "mask shape " + mask->shape_string() + " vs " + S.shape_string());
    Tensor<T> P = masked_softmax_value(S, mask);
    return tape.push(std::move(P), tape.requires_grad(scores), [scores](Tape<T>& t, std::size_t self) {
        const Tensor<T>& P = t.value(self);
        const Tensor<T>& dP = t.grad(self);
        Tensor<T>& dS = t.grad(scores);
        for (std::size_t c = 0; c < P.cols(); ++c) {
            T dot = 0;
            for (std::size_t r = 0; r < P.rows(); ++r) dot += P(r, c) * dP(r, c);
            for (std::size_t r = 0; r < P.rows(); ++r) dS(r, c) += P(r, c) * (dP(r, c) - dot);
        }
    });
}

/// Row-wise log-softmax of a value tensor (no tape).
template <typename T>
void log_softmax_rows_inplace(Tensor<T>& logits) {
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row_span(r);
        const T mx = *std::max_element(row.begin(), row.end());
        T sum = 0;
        for (T v : row) sum += std::exp(v - mx);
        const T lse = mx + std::log(sum);
        for (T& v : row) v -= lse;
    }
}

/// Sum over rows of -log softmax(logits[r])[targets[r]]; rows whose target
/// is negative are skipped. Returns a 1x1 tensor.
template <typename T>
Var<T> cross_entropy(Tape<T>& tape, Var<T> logits, std::vector<int> targets) {
    const Tensor<T>& L = tape.value(logits);
    detail::require<T>(targets.size() == L.rows(), "cross_entropy: one target per row");
    Tensor<T> logp = L;
    log_softmax_rows_inplace(logp);
    Tensor<T> out(1, 1);
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] < 0) continue;
        if (static_cast<std::size_t>(targets[r]) >= L.cols()) {
            throw Error(Errc::BadTarget, "target " + std::to_string(targets[r]) + " >= " + std::to_string(L.cols()));
        }
        out[0] -= logp(r, static_cast<std::size_t>(targets[r]));
    }
    return tape.push(std::move(out), tape.requires_grad(logits),
                     [logits, targets = std::move(targets), logp = std::move(logp)](Tape<T>& t, std::size_t self) {
                         const T g = t.grad(self)[0];
                         Tensor<T>& dL = t.grad(logits);
                         for (std::size_t r = 0; r < targets.size(); ++r) {
                             if (targets[r] < 0) continue;
                             for (std::size_t c = 0; c < logp.cols(); ++c) dL(r, c) += g * std::exp(logp(r, c));
                             dL(r, static_cast<std::size_t>(targets[r])) -= g;
                         }
                     });
}

template <typename T>
Var<T> cross_entropy(Tape<T>& tape, Var<T> logits, int target) {
    return cross_entropy(tape, logits, std::vector<int>{target});
}

}  // namespace synlm
