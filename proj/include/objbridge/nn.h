#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "objbridge/rng.h"

namespace objbridge {

// Dense row-major tensor. Values are doubles throughout: the gradient
// checker compares analytic and central-difference derivatives at 1e-4
// relative error, which single precision cannot sustain.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    static Tensor zeros(std::vector<int> shape);

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double* row(int i) { return v.data() + static_cast<std::size_t>(i) * cols(); }
    const double* row(int i) const { return v.data() + static_cast<std::size_t>(i) * cols(); }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
    bool operator==(const Tensor&) const = default;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // same shape, accumulated between optimizer steps

    Parameter() = default;
    Parameter(std::string name, std::vector<int> shape);
    void zero_grad() { grad.fill(0.0); }
    void check_finite() const;
};

void init_uniform(Parameter& p, Rng& rng, double scale);
// Glorot-style tanh init: scale = sqrt(6 / (fan_in + fan_out)).
void init_glorot(Parameter& p, Rng& rng);

// ---- layers: forward + exact analytic backward -------------------------
// All backward routines accumulate (+=) into their gradient outputs so a
// batch can sum per-sample contributions in a fixed order.

// y[n,out] = x[n,in] W[in,out] + b[out]
void affine_forward(std::span<const double> x, int n, int in, int out,
                    const Tensor& w, const Tensor& b, std::span<double> y);
void affine_backward(std::span<const double> dy, std::span<const double> x, int n,
                     int in, int out, const Tensor& w, std::span<double> dx,
                     Tensor& dw, Tensor& db);

void tanh_forward(std::span<const double> x, std::span<double> y);
// dx += dy * (1 - y^2)
void tanh_backward(std::span<const double> dy, std::span<const double> y,
                   std::span<double> dx);

void sigmoid_forward(std::span<const double> x, std::span<double> y);
void sigmoid_backward(std::span<const double> dy, std::span<const double> y,
                      std::span<double> dx);

// softmax over the whole span (max-subtracted)
void softmax_forward(std::span<const double> x, std::span<double> y);
void softmax_backward(std::span<const double> dy, std::span<const double> y,
                      std::span<double> dx);

// weights = softmax(keys . query / sqrt(h)); context = sum_i weights_i values_i
void attention_pool_forward(std::span<const double> query, std::span<const double> keys,
                            std::span<const double> values, int n, int h,
                            std::span<double> weights, std::span<double> context);
void attention_pool_backward(std::span<const double> dcontext,
                             std::span<const double> dweights,  // may be empty
                             std::span<const double> query, std::span<const double> keys,
                             std::span<const double> values, std::span<const double> weights,
                             int n, int h, std::span<double> dquery,
                             std::span<double> dkeys, std::span<double> dvalues);

// loss = mean((pred - target)^2); dpred = 2 (pred - target) / count
double mse_loss(std::span<const double> pred, std::span<const double> target,
                std::span<double> dpred);

// ---- optimizer ----------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;  // aligned with the parameter list
    std::vector<double> lr_scale;  // per-parameter constant multiplier
    std::int64_t t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(std::span<Parameter* const> params, double lr);
};

// Standard bias-corrected Adam. Increments t once per call, then zeroes all
// parameter gradients.
void adam_step(std::span<Parameter* const> params, AdamState& state);

// ---- finite-difference gradient checker ---------------------------------

// `loss` must recompute the full forward pass from current parameter values;
// `params` carry analytic gradients (already populated by the caller).
// Returns max over scalars of |a - n| / max(1e-8, |a| + |n|).
double grad_check(const std::function<double()>& loss,
                  std::span<Parameter* const> params, double h = 1e-5);

}  // namespace objbridge
