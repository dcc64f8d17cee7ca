#include "objbridge/nn.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "objbridge/errors.h"

namespace objbridge {

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    std::int64_t n = 1;
    for (int s : shape) n *= s;
    t.shape = std::move(shape);
    t.v.assign(static_cast<std::size_t>(n), 0.0);
    return t;
}

Parameter::Parameter(std::string name_, std::vector<int> shape) : name(std::move(name_)) {
    value = Tensor::zeros(shape);
    grad = Tensor::zeros(shape);
}

void Parameter::check_finite() const {
    for (double x : value.v) {
        if (!std::isfinite(x)) throw std::runtime_error("non-finite value in " + name);
    }
}

void init_uniform(Parameter& p, Rng& rng, double scale) {
    for (double& x : p.value.v) x = rng.uniform(-scale, scale);
}

void init_glorot(Parameter& p, Rng& rng) {
    const int fan_in = p.value.rows();
    const int fan_out = p.value.cols();
    init_uniform(p, rng, std::sqrt(6.0 / (fan_in + fan_out)));
}

// ---- layers --------------------------------------------------------------

void affine_forward(std::span<const double> x, int n, int in, int out,
                    const Tensor& w, const Tensor& b, std::span<double> y) {
    assert(static_cast<int>(x.size()) == n * in);
    assert(w.rows() == in && w.cols() == out);
    assert(static_cast<int>(y.size()) == n * out);
    for (int i = 0; i < n; ++i) {
        const double* xi = x.data() + static_cast<std::size_t>(i) * in;
        double* yi = y.data() + static_cast<std::size_t>(i) * out;
        std::copy(b.v.begin(), b.v.end(), yi);
        for (int k = 0; k < in; ++k) {
            const double xv = xi[k];
            if (xv == 0.0) continue;
            const double* wk = w.row(k);
            for (int j = 0; j < out; ++j) yi[j] += xv * wk[j];
        }
    }
}

void affine_backward(std::span<const double> dy, std::span<const double> x, int n,
                     int in, int out, const Tensor& w, std::span<double> dx,
                     Tensor& dw, Tensor& db) {
    assert(dw.rows() == in && dw.cols() == out);
    for (int i = 0; i < n; ++i) {
        const double* dyi = dy.data() + static_cast<std::size_t>(i) * out;
        const double* xi = x.data() + static_cast<std::size_t>(i) * in;
        for (int j = 0; j < out; ++j) db.v[j] += dyi[j];
        for (int k = 0; k < in; ++k) {
            const double xv = xi[k];
            double* dwk = dw.row(k);
            const double* wk = w.row(k);
            double acc = 0.0;
            for (int j = 0; j < out; ++j) {
                dwk[j] += xv * dyi[j];
                acc += wk[j] * dyi[j];
            }
            if (!dx.empty()) dx[static_cast<std::size_t>(i) * in + k] += acc;
        }
    }
}

void tanh_forward(std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(std::span<const double> dy, std::span<const double> y,
                   std::span<double> dx) {
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
}

void sigmoid_forward(std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(std::span<const double> dy, std::span<const double> y,
                      std::span<double> dx) {
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
}

void softmax_forward(std::span<const double> x, std::span<double> y) {
    const double mx = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) y[i] /= sum;
}

void softmax_backward(std::span<const double> dy, std::span<const double> y,
                      std::span<double> dx) {
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += dy[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += y[i] * (dy[i] - dot);
}

void attention_pool_forward(std::span<const double> query, std::span<const double> keys,
                            std::span<const double> values, int n, int h,
                            std::span<double> weights, std::span<double> context) {
    if (n < 1) throw UsageError("attention_pool: empty key set");
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* ki = keys.data() + static_cast<std::size_t>(i) * h;
        double dot = 0.0;
        for (int j = 0; j < h; ++j) dot += ki[j] * query[j];
        logits[static_cast<std::size_t>(i)] = dot * inv_sqrt_h;
    }
    softmax_forward(logits, weights);
    std::fill(context.begin(), context.end(), 0.0);
    for (int i = 0; i < n; ++i) {
        const double wi = weights[static_cast<std::size_t>(i)];
        const double* vi = values.data() + static_cast<std::size_t>(i) * h;
        for (int j = 0; j < h; ++j) context[j] += wi * vi[j];
    }
}

void attention_pool_backward(std::span<const double> dcontext,
                             std::span<const double> dweights,
                             std::span<const double> query, std::span<const double> keys,
                             std::span<const double> values, std::span<const double> weights,
                             int n, int h, std::span<double> dquery,
                             std::span<double> dkeys, std::span<double> dvalues) {
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
    std::vector<double> dw(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* vi = values.data() + static_cast<std::size_t>(i) * h;
        double* dvi = dvalues.data() + static_cast<std::size_t>(i) * h;
        const double wi = weights[static_cast<std::size_t>(i)];
        double acc = 0.0;
        for (int j = 0; j < h; ++j) {
            dvi[j] += wi * dcontext[j];
            acc += vi[j] * dcontext[j];
        }
        dw[static_cast<std::size_t>(i)] = acc;
        if (!dweights.empty()) dw[static_cast<std::size_t>(i)] += dweights[static_cast<std::size_t>(i)];
    }
    std::vector<double> dlogits(static_cast<std::size_t>(n), 0.0);
    softmax_backward(dw, weights, dlogits);
    for (int i = 0; i < n; ++i) {
        const double dli = dlogits[static_cast<std::size_t>(i)] * inv_sqrt_h;
        const double* ki = keys.data() + static_cast<std::size_t>(i) * h;
        double* dki = dkeys.data() + static_cast<std::size_t>(i) * h;
        for (int j = 0; j < h; ++j) {
            dquery[j] += dli * ki[j];
            dki[j] += dli * query[j];
        }
    }
}

double mse_loss(std::span<const double> pred, std::span<const double> target,
                std::span<double> dpred) {
    if (pred.size() != target.size()) throw UsageError("mse_loss: shape mismatch");
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        loss += d * d;
        if (!dpred.empty()) dpred[i] = 2.0 * d * inv_n;
    }
    return loss * inv_n;
}

// ---- optimizer ------------------------------------------------------------

AdamState AdamState::init(std::span<Parameter* const> params, double lr_) {
    AdamState s;
    s.lr = lr_;
    for (const Parameter* p : params) {
        s.m.push_back(Tensor::zeros(p->value.shape));
        s.v.push_back(Tensor::zeros(p->value.shape));
        s.lr_scale.push_back(1.0);
    }
    return s;
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        Tensor& m = state.m[pi];
        Tensor& v = state.v[pi];
        const double lr = state.lr * (pi < state.lr_scale.size() ? state.lr_scale[pi] : 1.0);
        for (std::size_t i = 0; i < p.value.v.size(); ++i) {
            const double g = p.grad.v[i];
            m.v[i] = state.beta1 * m.v[i] + (1.0 - state.beta1) * g;
            v.v[i] = state.beta2 * v.v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            p.value.v[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        p.zero_grad();
    }
}

// ---- gradient checker ------------------------------------------------------

double grad_check(const std::function<double()>& loss,
                  std::span<Parameter* const> params, double h) {
    double worst = 0.0;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.v.size(); ++i) {
            const double saved = p->value.v[i];
            p->value.v[i] = saved + h;
            const double up = loss();
            p->value.v[i] = saved - h;
            const double down = loss();
            p->value.v[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw std::runtime_error("grad_check: non-finite loss at " + p->name);
            }
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p->grad.v[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace objbridge
