#include "srgi/ndiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace srgi::nd {

namespace {

// C += op(A) * op(B)
void gemm_acc(Matrix& c, const Matrix& a, bool ta, const Matrix& b, bool tb) {
    const std::size_t m = ta ? a.cols : a.rows;
    const std::size_t k = ta ? a.rows : a.cols;
    const std::size_t n = tb ? b.rows : b.cols;
    if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* ai = a.data.data() + i * a.cols;
            double* ci = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = b.data.data() + j * b.cols;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
                ci[j] += acc;
            }
        }
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c.data.data() + i * c.cols;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ta ? a(p, i) : a(i, p);
            if (!tb) {
                const double* bp = b.data.data() + p * b.cols;
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * b(j, p);
            }
        }
    }
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

bool broadcastable(const Matrix& a, const Matrix& b) {
    return a.same_shape(b) || (b.rows == 1 && b.cols == a.cols);
}

template <class F>
Matrix map(const Matrix& a, F f) {
    Matrix out(a.rows, a.cols);
    std::transform(a.data.begin(), a.data.end(), out.data.begin(), f);
    return out;
}

// Elementwise unary op whose local derivative is a function of (input, output).
template <class Fwd, class Deriv>
Var unary(Var a, const char* name, Fwd fwd, Deriv deriv) {
    Tape& t = a.tape();
    Matrix out = map(a.value(), fwd);
    const std::size_t ia = a.id();
    return t.record(std::move(out), t.requires_grad(a), [ia, deriv](Tape& tp, std::size_t self) {
        const Matrix& x = tp.node_value(ia);
        const Matrix& y = tp.node_value(self);
        const Matrix& g = tp.grad_slot(self);
        Matrix& dx = tp.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] += g.data[i] * deriv(x.data[i], y.data[i]);
    }, name);
}

}  // namespace

// ---- Matrix ---------------------------------------------------------------

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("Matrix: value count does not match shape");
}

Matrix Matrix::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Matrix(1, n, std::move(values));
}

Matrix Matrix::column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Matrix(n, 1, std::move(values));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string Matrix::shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

// ---- Tape -----------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::record(Matrix value, bool requires_grad, Backward backward, const char* op) {
    if (check_finite_) {
        for (double v : value.data) {
            if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output " + value.shape_str());
        }
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return record(std::move(value), false, {}, "constant"); }

Var Tape::leaf(Matrix value) { return record(std::move(value), true, {}, "leaf"); }

Var Tape::param(Parameter& p) {
    for (const auto& [ptr, id] : bound_) {
        if (ptr == &p) return Var(this, id);
    }
    Var v = record(p.value, grad_enabled_, {}, "param");
    nodes_[v.id()].param = &p;
    bound_.emplace_back(&p, v.id());
    return v;
}

Matrix& Tape::grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Matrix(n.value.rows, n.value.cols);
        n.has_grad = true;
    }
    return n.grad;
}

const Matrix& Tape::grad(Var v) { return grad_slot(v.id()); }

void Tape::backward(Var loss) {
    const Matrix& l = value(loss);
    if (l.rows != 1 || l.cols != 1) throw ShapeError("backward: loss must be scalar, got " + l.shape_str());
    if (!nodes_[loss.id()].requires_grad) return;
    grad_slot(loss.id()).data[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backward) continue;
        n.backward(*this, i);
    }
    for (auto& [p, id] : bound_) {
        Node& n = nodes_[id];
        if (!n.has_grad || !n.requires_grad) continue;
        if (!p->grad.same_shape(p->value)) p->grad = Matrix(p->value.rows, p->value.cols);
        for (std::size_t k = 0; k < n.grad.size(); ++k) p->grad.data[k] += n.grad.data[k];
    }
}

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b, bool ta, bool tb) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    const std::size_t m = ta ? A.cols : A.rows;
    const std::size_t ka = ta ? A.rows : A.cols;
    const std::size_t kb = tb ? B.cols : B.rows;
    const std::size_t n = tb ? B.rows : B.cols;
    if (ka != kb) shape_fail("matmul", A, B);
    Matrix out(m, n);
    gemm_acc(out, A, ta, B, tb);
    const std::size_t ia = a.id(), ib = b.id();
    const bool ra = t.requires_grad(a), rb = t.requires_grad(b);
    return t.record(std::move(out), ra || rb, [=](Tape& tp, std::size_t self) {
        const Matrix& G = tp.grad_slot(self);
        const Matrix& Av = tp.node_value(ia);
        const Matrix& Bv = tp.node_value(ib);
        if (ra) {
            Matrix& dA = tp.grad_slot(ia);
            if (!ta) gemm_acc(dA, G, false, Bv, !tb);
            else gemm_acc(dA, Bv, tb, G, true);
        }
        if (rb) {
            Matrix& dB = tp.grad_slot(ib);
            if (!tb) gemm_acc(dB, Av, !ta, G, false);
            else gemm_acc(dB, G, true, Av, ta);
        }
    }, "matmul");
}

Var add(Var a, Var b) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    if (!broadcastable(A, B)) shape_fail("add", A, B);
    Matrix out = A;
    for (std::size_t r = 0; r < out.rows; ++r) {
        const double* br = B.data.data() + (B.rows == 1 ? 0 : r * B.cols);
        double* o = out.data.data() + r * out.cols;
        for (std::size_t c = 0; c < out.cols; ++c) o[c] += br[c];
    }
    const std::size_t ia = a.id(), ib = b.id();
    const bool ra = t.requires_grad(a), rb = t.requires_grad(b);
    return t.record(std::move(out), ra || rb, [=](Tape& tp, std::size_t self) {
        const Matrix& G = tp.grad_slot(self);
        if (ra) {
            Matrix& dA = tp.grad_slot(ia);
            for (std::size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
        }
        if (rb) {
            Matrix& dB = tp.grad_slot(ib);
            const bool bc = dB.rows == 1 && G.rows != 1;
            for (std::size_t r = 0; r < G.rows; ++r) {
                double* d = dB.data.data() + (bc ? 0 : r * G.cols);
                for (std::size_t c = 0; c < G.cols; ++c) d[c] += G(r, c);
            }
        }
    }, "add");
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    if (!broadcastable(A, B)) shape_fail("mul", A, B);
    Matrix out = A;
    for (std::size_t r = 0; r < out.rows; ++r) {
        const double* br = B.data.data() + (B.rows == 1 ? 0 : r * B.cols);
        double* o = out.data.data() + r * out.cols;
        for (std::size_t c = 0; c < out.cols; ++c) o[c] *= br[c];
    }
    const std::size_t ia = a.id(), ib = b.id();
    const bool ra = t.requires_grad(a), rb = t.requires_grad(b);
    return t.record(std::move(out), ra || rb, [=](Tape& tp, std::size_t self) {
        const Matrix& G = tp.grad_slot(self);
        const Matrix& Av = tp.node_value(ia);
        const Matrix& Bv = tp.node_value(ib);
        const bool bc = Bv.rows == 1 && G.rows != 1;
        if (ra) {
            Matrix& dA = tp.grad_slot(ia);
            for (std::size_t r = 0; r < G.rows; ++r) {
                const double* br = Bv.data.data() + (bc ? 0 : r * G.cols);
                for (std::size_t c = 0; c < G.cols; ++c) dA(r, c) += G(r, c) * br[c];
            }
        }
        if (rb) {
            Matrix& dB = tp.grad_slot(ib);
            for (std::size_t r = 0; r < G.rows; ++r) {
                double* d = dB.data.data() + (bc ? 0 : r * G.cols);
                for (std::size_t c = 0; c < G.cols; ++c) d[c] += G(r, c) * Av(r, c);
            }
        }
    }, "mul");
}

Var scale(Var a, double s) {
    return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape& t = parts[0].tape();
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    bool rg = false;
    for (const Var& p : parts) {
        if (p.rows() != rows) shape_fail("concat", parts[0].value(), p.value());
        cols += p.cols();
        rg = rg || t.requires_grad(p);
    }
    Matrix out(rows, cols);
    std::vector<std::size_t> ids, widths;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Matrix& v = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data.data() + r * v.cols, v.cols, out.data.data() + r * cols + off);
        off += v.cols;
        ids.push_back(p.id());
        widths.push_back(v.cols);
    }
    return t.record(std::move(out), rg, [ids, widths](Tape& tp, std::size_t self) {
        const Matrix& G = tp.grad_slot(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (tp.requires_grad_id(ids[k])) {
                Matrix& d = tp.grad_slot(ids[k]);
                for (std::size_t r = 0; r < G.rows; ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c) d(r, c) += G(r, off + c);
            }
            off += widths[k];
        }
    }, "concat");
}

Var concat_cols(Var a, Var b) {
    const Var parts[] = {a, b};
    return concat_cols(std::span<const Var>(parts));
}

// ---- nonlinearities -------------------------------------------------------

Var tanh(Var a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
    return unary(
        a, "sigmoid",
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
    return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                 [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
    return unary(a, "leaky_relu", [slope](double x) { return x > 0 ? x : slope * x; },
                 [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var log(Var a, double floor) {
    return unary(a, "log", [floor](double x) { return std::log(std::max(x, floor)); },
                 [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Var exp(Var a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// ---- reductions / normalisations -------------------------------------------

Var softmax_rows(Var a) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    Matrix out(A.rows, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        auto x = A.row_span(r);
        auto y = out.row_span(r);
        const double mx = *std::max_element(x.begin(), x.end());
        double z = 0.0;
        for (std::size_t c = 0; c < A.cols; ++c) z += (y[c] = std::exp(x[c] - mx));
        for (double& v : y) v /= z;
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
        const Matrix& Y = tp.node_value(self);
        const Matrix& G = tp.grad_slot(self);
        Matrix& dA = tp.grad_slot(ia);
        for (std::size_t r = 0; r < Y.rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < Y.cols; ++c) dot += G(r, c) * Y(r, c);
            for (std::size_t c = 0; c < Y.cols; ++c) dA(r, c) += Y(r, c) * (G(r, c) - dot);
        }
    }, "softmax");
}

Var log_softmax_rows(Var a) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    Matrix out(A.rows, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        auto x = A.row_span(r);
        const double mx = *std::max_element(x.begin(), x.end());
        double z = 0.0;
        for (double v : x) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < A.cols; ++c) out(r, c) = x[c] - lse;
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
        const Matrix& Y = tp.node_value(self);
        const Matrix& G = tp.grad_slot(self);
        Matrix& dA = tp.grad_slot(ia);
        for (std::size_t r = 0; r < Y.rows; ++r) {
            double gs = 0.0;
            for (std::size_t c = 0; c < Y.cols; ++c) gs += G(r, c);
            for (std::size_t c = 0; c < Y.cols; ++c) dA(r, c) += G(r, c) - std::exp(Y(r, c)) * gs;
        }
    }, "log_softmax");
}

Var sum_rows(Var a) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    Matrix out(1, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r)
        for (std::size_t c = 0; c < A.cols; ++c) out(0, c) += A(r, c);
    const std::size_t ia = a.id();
    return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
        const Matrix& G = tp.grad_slot(self);
        Matrix& dA = tp.grad_slot(ia);
        for (std::size_t r = 0; r < dA.rows; ++r)
            for (std::size_t c = 0; c < dA.cols; ++c) dA(r, c) += G(0, c);
    }, "sum_rows");
}

Var mean_rows(Var a) {
    if (a.rows() == 0) throw ShapeError("mean_rows: empty input");
    return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var sum_all(Var a) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    double s = 0.0;
    for (double v : A.data) s += v;
    const std::size_t ia = a.id();
    return t.record(Matrix(1, 1, s), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
        const double g = tp.grad_slot(self).data[0];
        for (double& d : tp.grad_slot(ia).data) d += g;
    }, "sum_all");
}

Var mean_all(Var a) {
    if (a.value().size() == 0) throw ShapeError("mean_all: empty input");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var l2_normalize_rows(Var a) {
    constexpr double kFloor = 1e-12;
    Tape& t = a.tape();
    const Matrix& A = a.value();
    Matrix out(A.rows, A.cols);
    std::vector<double> norms(A.rows);
    for (std::size_t r = 0; r < A.rows; ++r) {
        double s = 0.0;
        for (double v : A.row_span(r)) s += v * v;
        const double n = std::sqrt(s);
        norms[r] = n;
        if (n < kFloor) continue;
        for (std::size_t c = 0; c < A.cols; ++c) out(r, c) = A(r, c) / n;
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), t.requires_grad(a), [ia, norms = std::move(norms)](Tape& tp, std::size_t self) {
        const Matrix& Y = tp.node_value(self);
        const Matrix& G = tp.grad_slot(self);
        Matrix& dA = tp.grad_slot(ia);
        for (std::size_t r = 0; r < Y.rows; ++r) {
            if (norms[r] < kFloor) continue;
            double dot = 0.0;
            for (std::size_t c = 0; c < Y.cols; ++c) dot += Y(r, c) * G(r, c);
            for (std::size_t c = 0; c < Y.cols; ++c) dA(r, c) += (G(r, c) - Y(r, c) * dot) / norms[r];
        }
    }, "l2_normalize");
}

Var cosine_similarity(Var a, Var b) {
    if (a.cols() != b.cols()) shape_fail("cosine_similarity", a.value(), b.value());
    return matmul(l2_normalize_rows(a), l2_normalize_rows(b), false, true);
}

// ---- indexing ---------------------------------------------------------------

Var gather_rows(Var table, std::span<const std::size_t> index) {
    Tape& t = table.tape();
    const Matrix& T = table.value();
    Matrix out(index.size(), T.cols);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= T.rows)
            throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range for " + T.shape_str());
        std::copy_n(T.data.data() + index[r] * T.cols, T.cols, out.data.data() + r * T.cols);
    }
    const std::size_t it = table.id();
    return t.record(std::move(out), t.requires_grad(table),
                    [it, idx = std::vector<std::size_t>(index.begin(), index.end())](Tape& tp, std::size_t self) {
                        const Matrix& G = tp.grad_slot(self);
                        Matrix& dT = tp.grad_slot(it);
                        for (std::size_t r = 0; r < idx.size(); ++r) {
                            double* d = dT.data.data() + idx[r] * dT.cols;
                            const double* g = G.data.data() + r * G.cols;
                            for (std::size_t c = 0; c < G.cols; ++c) d[c] += g[c];
                        }
                    }, "gather_rows");
}

namespace {

void check_segments(const Segments& seg, const Matrix& x, const char* op) {
    if (seg.offsets.empty() || seg.offsets.back() != seg.source.size())
        throw ShapeError(std::string(op) + ": malformed segment offsets");
    for (std::size_t s : seg.source)
        if (s >= x.rows) throw ShapeError(std::string(op) + ": segment source row out of range for " + x.shape_str());
}

}  // namespace

Var segment_sum(Var x, const Segments& seg, Var weights) {
    Tape& t = x.tape();
    const Matrix& X = x.value();
    const Matrix& W = weights.value();
    check_segments(seg, X, "segment_sum");
    if (W.rows != seg.num_entries() || W.cols != 1) shape_fail("segment_sum", X, W);
    Matrix out(seg.num_rows(), X.cols);
    for (std::size_t r = 0; r < seg.num_rows(); ++r) {
        double* o = out.data.data() + r * X.cols;
        for (std::size_t k = seg.offsets[r]; k < seg.offsets[r + 1]; ++k) {
            const double w = W.data[k];
            const double* xs = X.data.data() + seg.source[k] * X.cols;
            for (std::size_t c = 0; c < X.cols; ++c) o[c] += w * xs[c];
        }
    }
    const std::size_t ix = x.id(), iw = weights.id();
    const bool rx = t.requires_grad(x), rw = t.requires_grad(weights);
    return t.record(std::move(out), rx || rw, [ix, iw, rx, rw, seg](Tape& tp, std::size_t self) {
        const Matrix& G = tp.grad_slot(self);
        const Matrix& Xv = tp.node_value(ix);
        const Matrix& Wv = tp.node_value(iw);
        Matrix* dX = rx ? &tp.grad_slot(ix) : nullptr;
        Matrix* dW = rw ? &tp.grad_slot(iw) : nullptr;
        for (std::size_t r = 0; r < seg.num_rows(); ++r) {
            const double* g = G.data.data() + r * G.cols;
            for (std::size_t k = seg.offsets[r]; k < seg.offsets[r + 1]; ++k) {
                const std::size_t s = seg.source[k];
                if (dX) {
                    double* d = dX->data.data() + s * G.cols;
                    for (std::size_t c = 0; c < G.cols; ++c) d[c] += Wv.data[k] * g[c];
                }
                if (dW) {
                    const double* xs = Xv.data.data() + s * G.cols;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < G.cols; ++c) acc += g[c] * xs[c];
                    dW->data[k] += acc;
                }
            }
        }
    }, "segment_sum");
}

Var segment_sum(Var x, const Segments& seg, std::span<const double> weights) {
    std::vector<double> w(weights.begin(), weights.end());
    if (w.empty()) w.assign(seg.num_entries(), 1.0);
    return segment_sum(x, seg, x.tape().constant(Matrix::column(std::move(w))));
}

Var segment_softmax(Var logits, const Segments& seg) {
    Tape& t = logits.tape();
    const Matrix& L = logits.value();
    if (L.cols != 1 || L.rows != seg.num_entries()) throw ShapeError("segment_softmax: logits must be (entries x 1), got " + L.shape_str());
    Matrix out(L.rows, 1);
    for (std::size_t r = 0; r < seg.num_rows(); ++r) {
        const std::size_t b = seg.offsets[r], e = seg.offsets[r + 1];
        if (b == e) continue;
        double mx = L.data[b];
        for (std::size_t k = b; k < e; ++k) mx = std::max(mx, L.data[k]);
        double z = 0.0;
        for (std::size_t k = b; k < e; ++k) z += (out.data[k] = std::exp(L.data[k] - mx));
        for (std::size_t k = b; k < e; ++k) out.data[k] /= z;
    }
    const std::size_t il = logits.id();
    return t.record(std::move(out), t.requires_grad(logits), [il, offsets = seg.offsets](Tape& tp, std::size_t self) {
        const Matrix& Y = tp.node_value(self);
        const Matrix& G = tp.grad_slot(self);
        Matrix& dL = tp.grad_slot(il);
        for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
            double dot = 0.0;
            for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) dot += G.data[k] * Y.data[k];
            for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) dL.data[k] += Y.data[k] * (G.data[k] - dot);
        }
    }, "segment_softmax");
}

Var pick(Var a, std::span<const std::size_t> index) {
    Tape& t = a.tape();
    const Matrix& A = a.value();
    if (index.size() != A.rows) throw ShapeError("pick: need one index per row of " + A.shape_str());
    Matrix out(A.rows, 1);
    for (std::size_t r = 0; r < A.rows; ++r) {
        if (index[r] >= A.cols) throw ShapeError("pick: column index out of range for " + A.shape_str());
        out.data[r] = A(r, index[r]);
    }
    const std::size_t ia = a.id();
    return t.record(std::move(out), t.requires_grad(a),
                    [ia, idx = std::vector<std::size_t>(index.begin(), index.end())](Tape& tp, std::size_t self) {
                        const Matrix& G = tp.grad_slot(self);
                        Matrix& dA = tp.grad_slot(ia);
                        for (std::size_t r = 0; r < idx.size(); ++r) dA(r, idx[r]) += G.data[r];
                    }, "pick");
}

Var dropout(Var a, double rate, bool training, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0,1)");
    if (!training || rate == 0.0) return a;
    Tape& t = a.tape();
    t.mark_nondeterministic();
    std::bernoulli_distribution keep(1.0 - rate);
    const double s = 1.0 / (1.0 - rate);
    const Matrix& A = a.value();
    std::vector<double> mask(A.size());
    for (double& m : mask) m = keep(rng) ? s : 0.0;
    Matrix out(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) out.data[i] = A.data[i] * mask[i];
    const std::size_t ia = a.id();
    return t.record(std::move(out), t.requires_grad(a), [ia, mask = std::move(mask)](Tape& tp, std::size_t self) {
        const Matrix& G = tp.grad_slot(self);
        Matrix& dA = tp.grad_slot(ia);
        for (std::size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i] * mask[i];
    }, "dropout");
}

// ---- gradient checking -------------------------------------------------------

namespace {

double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

double scalar_of(Var v) {
    const Matrix& m = v.value();
    if (m.rows != 1 || m.cols != 1) throw ShapeError("grad_check: program must return a scalar, got " + m.shape_str());
    return m.data[0];
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& point, double step, double tol) {
    if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");
    Matrix analytic;
    {
        Tape t;
        Var x = t.leaf(point);
        Var y = f(t, x);
        if (t.nondeterministic()) throw std::invalid_argument("nondeterministic program");
        scalar_of(y);
        t.backward(y);
        analytic = t.grad(x);
    }
    auto eval = [&](const Matrix& p) {
        Tape t;
        return scalar_of(f(t, t.leaf(p)));
    };
    GradCheckReport rep;
    Matrix p = point;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p.data[i];
        p.data[i] = orig + step;
        const double fp = eval(p);
        p.data[i] = orig - step;
        const double fm = eval(p);
        p.data[i] = orig;
        rep.max_rel_error = std::max(rep.max_rel_error, rel_error(analytic.data[i], (fp - fm) / (2 * step)));
    }
    rep.pass = rep.max_rel_error < tol;
    return rep;
}

GradCheckReport grad_check_params(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double step,
                                  double tol) {
    if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");
    for (Parameter* p : params) p->grad = Matrix(p->value.rows, p->value.cols);
    {
        Tape t;
        Var y = f(t);
        if (t.nondeterministic()) throw std::invalid_argument("nondeterministic program");
        scalar_of(y);
        t.backward(y);
    }
    auto eval = [&] {
        Tape t;
        return scalar_of(f(t));
    };
    GradCheckReport rep;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value.data[i];
            p->value.data[i] = orig + step;
            const double fp = eval();
            p->value.data[i] = orig - step;
            const double fm = eval();
            p->value.data[i] = orig;
            rep.max_rel_error = std::max(rep.max_rel_error, rel_error(p->grad.data[i], (fp - fm) / (2 * step)));
        }
    }
    rep.pass = rep.max_rel_error < tol;
    return rep;
}

}  // namespace srgi::nd
