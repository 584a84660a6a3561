#pragma once

// Dense reverse-mode differentiation over row-major matrices.
//
// A Tape records every operation in insertion order; backward() walks it in
// reverse exactly once. Vars are cheap handles into a Tape. Parameters live
// outside the tape and receive accumulated gradients when bound with
// Tape::param().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "srgi/error.hpp"

namespace srgi::nd {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    static Matrix row(std::vector<double> values);
    static Matrix column(std::vector<double> values);
    static Matrix identity(std::size_t n);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row_span(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row_span(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// CSR-style grouping: output row r gathers entries [offsets[r], offsets[r+1]),
// each entry referencing a source row through `source`.
struct Segments {
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> source;

    std::size_t num_rows() const { return offsets.size() - 1; }
    std::size_t num_entries() const { return source.size(); }
    void add(std::size_t src) { source.push_back(src); }
    void end_row() { offsets.push_back(source.size()); }
};

class Tape;

class Var {
public:
    Var() = default;

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Matrix& value() const;
    std::size_t rows() const { return value().rows; }
    std::size_t cols() const { return value().cols; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    // Differentiable input without a bound parameter (read its gradient with grad()).
    Var leaf(Matrix value);
    // Parameter binding; repeated calls for the same parameter return the same Var.
    Var param(Parameter& p);

    const Matrix& value(Var v) const { return nodes_[v.id()].value; }
    // Zero matrix when the node received no gradient.
    const Matrix& grad(Var v);

    // Reverse sweep from a 1x1 loss. Gradients of bound parameters are
    // accumulated into Parameter::grad.
    void backward(Var loss);

    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
    bool requires_grad_id(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // With gradients disabled, param() records plain constants.
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }
    // Set once a training-mode dropout is recorded.
    bool nondeterministic() const { return nondeterministic_; }
    void mark_nondeterministic() { nondeterministic_ = true; }

    // Used by op implementations.
    Var record(Matrix value, bool requires_grad, Backward backward, const char* op);
    Matrix& grad_slot(std::size_t id);
    Matrix& grad_of(Var v) { return grad_slot(v.id()); }
    const Matrix& node_value(std::size_t id) const { return nodes_[id].value; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, std::size_t>> bound_;
    bool check_finite_ =
#ifdef NDEBUG
        false;
#else
        true;
#endif
    bool nondeterministic_ = false;
    bool grad_enabled_ = true;
};

// ---- operations ---------------------------------------------------------

Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
// a + b; b may be 1xC and is then broadcast over rows of a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Elementwise product with the same row-broadcast rule as add().
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(Var a, Var b);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
inline constexpr double kLeakySlope = 0.2;
Var leaky_relu(Var a, double slope = kLeakySlope);
// Natural log of max(a, floor); entries below the floor receive zero gradient.
Var log(Var a, double floor = 0.0);
Var exp(Var a);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var sum_rows(Var a);   // RxC -> 1xC
Var mean_rows(Var a);  // RxC -> 1xC
Var sum_all(Var a);    // -> 1x1
Var mean_all(Var a);   // -> 1x1
// Row-wise unit normalisation; rows with norm below 1e-12 map to zero with zero gradient.
Var l2_normalize_rows(Var a);
// Pairwise cosine similarity between rows of a and rows of b (RaxRb).
Var cosine_similarity(Var a, Var b);

Var gather_rows(Var table, std::span<const std::size_t> index);
// out[r] = sum over entries k of row r: w[k] * x[source[k]]; w is an (entries x 1) Var.
Var segment_sum(Var x, const Segments& seg, Var weights);
// Same with constant weights (empty span = all ones).
Var segment_sum(Var x, const Segments& seg, std::span<const double> weights = {});
// Softmax of an (entries x 1) column within each segment.
Var segment_softmax(Var logits, const Segments& seg);
// out[r] = a(r, index[r]) as an Rx1 column.
Var pick(Var a, std::span<const std::size_t> index);

// Inverted dropout: scales kept entries by 1/(1-rate) when training, identity otherwise.
Var dropout(Var a, double rate, bool training, std::mt19937_64& rng);

// ---- gradient checking ---------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
};

// Central differences on every coordinate of `point`; relative error is
// |a-b| / max(1, |a|, |b|). Throws if the program records training-mode dropout.
GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& point, double step,
                           double tol);

// Same, perturbing parameter values in place (restored afterwards). `f` must
// bind the parameters through Tape::param().
GradCheckReport grad_check_params(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                                  double step, double tol);

}  // namespace srgi::nd
